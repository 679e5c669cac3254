// rays.hpp — periodic interpolants of band data over the Brillouin zone and
// the two first-order ray-optics flows:
//   scalar:     (ṙ, k̇) = [[-λΞ, +1],[-1, 0]] (∇_r Ω, ∇_k Ω)
//   non-scalar: (ṙ, k̇) = [[ 0,  +1],[-1, 0]] (∇_r Ω, ∇_k Ω)
// with Ω = τ²ω - λ τ² P·∇_r ln(τ_ε/τ_μ). k is integrated unwrapped; wrapping
// happens only at interpolant lookup.

#pragma once

#include <vector>

#include "maxray/geometry.hpp"
#include "maxray/splines.hpp"

namespace maxray {

struct RayState {
    Vec3 r = Vec3::Zero();
    Vec3 k = Vec3::Zero();  // unwrapped crystal momentum
};

struct FlowOptions {
    bool berry_term = true;   // -λΞ block in the symplectic form (scalar flow)
    bool omega1_term = true;  // λΩ₁ Poynting correction in the dispersion

    static FlowOptions scalar_corrected() { return {true, true}; }
    static FlowOptions nonscalar() { return {false, true}; }
    static FlowOptions leading() { return {false, false}; }
};

// ∇_kΩ can come from the Hellmann-Feynman velocity splines (more accurate
// pointwise; the default) or from the ω-spline gradient (makes the discrete
// field exactly hamiltonian, so Ω is conserved to integrator tolerance).
enum class VelocitySource { hellmann_feynman, omega_spline };

class DispersionModel {
public:
    DispersionModel() = default;

    DispersionModel(const BandGeometry& geo, ModulationProfile mod, double lambda)
        : lattice_(geo.grid.lattice), mod_(std::move(mod)), lambda_(lambda) {
        const int n1 = geo.grid.n[0], n2 = geo.grid.n[1];
        auto make = [&](auto get, double origin) {
            std::vector<double> v(static_cast<std::size_t>(n1) * n2);
            for (int i = 0; i < n1; ++i)
                for (int j = 0; j < n2; ++j) v[i * n2 + j] = get(geo.grid.index(i, j, 0));
            return Spline2<double>(std::move(v), n1, n2, origin / n1, origin / n2, 1.0 / n1,
                                   1.0 / n2, true, true);
        };
        s_omega_ = make([&](int ik) { return geo.omega[ik]; }, 0.0);
        for (int c = 0; c < 3; ++c) {
            s_vel_[c] = make([&](int ik) { return geo.velocity[ik][c]; }, 0.0);
            s_poy_[c] = make([&](int ik) { return geo.poynting[ik][c]; }, 0.0);
        }
        // plaquette-centered curvature: nodes offset by half a pixel
        {
            std::vector<double> v(geo.xi12.begin(), geo.xi12.end());
            s_xi_ = Spline2<double>(std::move(v), n1, n2, 0.5 / n1, 0.5 / n2, 1.0 / n1,
                                    1.0 / n2, true, true);
        }
    }

    const LatticeSpec& lattice() const { return lattice_; }
    const ModulationProfile& modulation() const { return mod_; }
    double lambda() const { return lambda_; }
    VelocitySource velocity_source() const { return vel_source_; }
    void set_velocity_source(VelocitySource src) { vel_source_ = src; }

    // reduced BZ coordinates of a Cartesian k
    Vec3 reduced(const Vec3& k) const { return lattice_.reduced_k(k); }

    double omega(const Vec3& k) const {
        Vec3 u = reduced(k);
        return s_omega_.value(u.x(), u.y());
    }
    // Hellmann-Feynman velocity splines (not the ω-spline derivative)
    Vec3 grad_omega(const Vec3& k) const {
        if (vel_source_ == VelocitySource::omega_spline) return grad_omega_spline(k);
        Vec3 u = reduced(k);
        return Vec3(s_vel_[0].value(u.x(), u.y()), s_vel_[1].value(u.x(), u.y()),
                    s_vel_[2].value(u.x(), u.y()));
    }
    Vec3 grad_omega_spline(const Vec3& k) const {
        Vec3 u = reduced(k);
        double v, d1, d2;
        s_omega_.value_and_grad(u.x(), u.y(), v, d1, d2);
        return (d1 * lattice_.a_col(0) + d2 * lattice_.a_col(1)) / two_pi;
    }
    double xi12(const Vec3& k) const {
        Vec3 u = reduced(k);
        return s_xi_.value(u.x(), u.y());
    }
    Vec3 poynting(const Vec3& k) const {
        Vec3 u = reduced(k);
        return Vec3(s_poy_[0].value(u.x(), u.y()), s_poy_[1].value(u.x(), u.y()),
                    s_poy_[2].value(u.x(), u.y()));
    }
    // dP_j/dk_i as a matrix (row i = k-derivative direction)
    Eigen::Matrix3d poynting_jacobian(const Vec3& k) const {
        Vec3 u = reduced(k);
        Eigen::Matrix3d j = Eigen::Matrix3d::Zero();
        for (int c = 0; c < 3; ++c) {
            double v, d1, d2;
            s_poy_[c].value_and_grad(u.x(), u.y(), v, d1, d2);
            // du_i/dk = a_i / 2π
            Vec3 dk = (d1 * lattice_.a_col(0) + d2 * lattice_.a_col(1)) / two_pi;
            j.col(c) = dk;
        }
        return j;
    }

    // Ω and its phase-space gradient at (r, k); λ-corrections togglable
    struct Eval {
        double omega0 = 0.0;   // τ²ω
        double omega1 = 0.0;   // -τ² P·∇ln(τ_ε/τ_μ)
        double value = 0.0;    // Ω with enabled corrections
        Vec3 grad_r = Vec3::Zero();
        Vec3 grad_k = Vec3::Zero();
        double xi = 0.0;
    };

    Eval dispersion(const Vec3& r, const Vec3& k, const FlowOptions& opt) const {
        Eval e;
        double om = omega(k);
        Vec3 gk = grad_omega(k);
        double t2 = mod_.tau_sq(r);
        Vec3 dt2 = mod_.grad_tau_sq(r);
        e.omega0 = t2 * om;
        e.grad_r = dt2 * om;
        e.grad_k = t2 * gk;
        if (opt.omega1_term && mod_.is_split()) {
            Vec3 p = poynting(k);
            Vec3 q = mod_.tau_sq_grad_ln_ratio(r);     // τ²∇ln(τ_ε/τ_μ)
            e.omega1 = -p.dot(q);
            e.value = e.omega0 + lambda_ * e.omega1;
            e.grad_r -= lambda_ * (mod_.tau_sq_grad_ln_ratio_jacobian(r) * p);
            e.grad_k -= lambda_ * (poynting_jacobian(k) * q);
        } else {
            e.value = e.omega0;
        }
        e.xi = xi12(k);
        return e;
    }

    // (ṙ, k̇) of the selected flow flavor
    void vector_field(const RayState& s, const FlowOptions& opt, Vec3& rdot, Vec3& kdot) const {
        Eval e = dispersion(s.r, s.k, opt);
        kdot = -e.grad_r;
        rdot = e.grad_k;
        if (opt.berry_term) {
            // -λ Ξ ∇_r Ω with Ξ the antisymmetric matrix of the curvature
            // two-form: adds +λ F₁₂ (∂_{r2}Ω, -∂_{r1}Ω)
            rdot.x() += lambda_ * e.xi * e.grad_r.y();
            rdot.y() -= lambda_ * e.xi * e.grad_r.x();
        }
        rdot.z() = 0.0;
        kdot.z() = 0.0;
    }

    double omega_value(const RayState& s, const FlowOptions& opt) const {
        return dispersion(s.r, s.k, opt).value;
    }

    // max |∇(ω-spline) - velocity spline| over a sample grid, optionally
    // restricted to a reduced-coordinate box (the k-region a run visits); the
    // two discretizations cross-validate each other
    double velocity_consistency(int samples = 64, Vec3 lo = Vec3::Zero(),
                                Vec3 hi = Vec3(1, 1, 0)) const {
        double worst = 0.0;
        for (int i = 0; i < samples; ++i)
            for (int j = 0; j < samples; ++j) {
                double u1 = lo.x() + (hi.x() - lo.x()) * (i + 0.37) / samples;
                double u2 = lo.y() + (hi.y() - lo.y()) * (j + 0.61) / samples;
                double v, d1, d2;
                s_omega_.value_and_grad(u1, u2, v, d1, d2);
                Vec3 grad_spline = (d1 * lattice_.a_col(0) + d2 * lattice_.a_col(1)) / two_pi;
                Vec3 k = lattice_.cartesian_k(Vec3(u1, u2, 0));
                Vec3 hf(s_vel_[0].value(u1, u2), s_vel_[1].value(u1, u2),
                        s_vel_[2].value(u1, u2));
                worst = std::max(worst, (grad_spline - hf).norm());
            }
        return worst;
    }

private:
    LatticeSpec lattice_;
    ModulationProfile mod_;
    double lambda_ = 0.0;
    VelocitySource vel_source_ = VelocitySource::hellmann_feynman;
    Spline2<double> s_omega_, s_xi_;
    std::array<Spline2<double>, 3> s_vel_, s_poy_;
};

struct Trajectory {
    std::vector<double> t;
    std::vector<RayState> state;
    std::vector<double> omega_log;
    int n_steps = 0;
    int n_rejected = 0;
    double omega_drift = 0.0;  // max relative drift of Ω along the flow
};

namespace detail {

// Dormand–Prince 5(4) tableau
struct Dp45 {
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    // stage coefficients
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                            b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static constexpr double e1 = 35.0 / 384 - 5179.0 / 57600, e3 = 500.0 / 1113 - 7571.0 / 16695,
                            e4 = 125.0 / 192 - 393.0 / 640, e5 = -2187.0 / 6784 + 92097.0 / 339200,
                            e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;
};

}  // namespace detail

// Adaptive embedded Runge-Kutta 5(4), sampling the solution at n_samples
// equally spaced times (plus t = 0).
inline Trajectory integrate(const DispersionModel& model, const FlowOptions& opt,
                            const RayState& initial, double t_final, int n_samples = 32,
                            double rtol = 1e-10, double atol = 1e-12) {
    if (!std::isfinite(t_final)) throw MaxrayError("integrate: t_final must be finite");
    if (rtol <= 0 || atol <= 0) throw MaxrayError("integrate: tolerances must be positive");
    using V4 = Eigen::Vector4d;
    auto pack = [](const RayState& s) { return V4(s.r.x(), s.r.y(), s.k.x(), s.k.y()); };
    auto unpack = [&](const V4& y) {
        RayState s;
        s.r = Vec3(y[0], y[1], initial.r.z());
        s.k = Vec3(y[2], y[3], initial.k.z());
        return s;
    };
    auto f = [&](const V4& y) {
        Vec3 rdot, kdot;
        model.vector_field(unpack(y), opt, rdot, kdot);
        return V4(rdot.x(), rdot.y(), kdot.x(), kdot.y());
    };

    Trajectory traj;
    const double dir = t_final >= 0 ? 1.0 : -1.0;
    const double t_abs = std::abs(t_final);
    double t = 0.0;
    V4 y = pack(initial);
    double h = std::min(1e-2, t_abs > 0 ? t_abs / 10 : 1e-2);

    traj.t.push_back(0.0);
    traj.state.push_back(initial);
    traj.omega_log.push_back(model.omega_value(initial, opt));

    double next_sample = n_samples > 0 ? t_abs / n_samples : t_abs;
    int sample_idx = 1;
    const double hmin = 1e-14 * std::max(1.0, t_abs);

    using D = detail::Dp45;
    V4 k1 = f(y);
    while (t < t_abs - 1e-15 * t_abs) {
        double target = std::min(next_sample, t_abs);
        if (t + h > target) h = target - t;
        double hd = dir * h;

        V4 k2 = f(y + hd * D::a21 * k1);
        V4 k3 = f(y + hd * (D::a31 * k1 + D::a32 * k2));
        V4 k4 = f(y + hd * (D::a41 * k1 + D::a42 * k2 + D::a43 * k3));
        V4 k5 = f(y + hd * (D::a51 * k1 + D::a52 * k2 + D::a53 * k3 + D::a54 * k4));
        V4 k6 = f(y + hd * (D::a61 * k1 + D::a62 * k2 + D::a63 * k3 + D::a64 * k4 + D::a65 * k5));
        V4 y5 = y + hd * (D::b1 * k1 + D::b3 * k3 + D::b4 * k4 + D::b5 * k5 + D::b6 * k6);
        V4 k7 = f(y5);
        V4 errv = hd * (D::e1 * k1 + D::e3 * k3 + D::e4 * k4 + D::e5 * k5 + D::e6 * k6 +
                        D::e7 * k7);
        double err = 0.0;
        for (int i = 0; i < 4; ++i)
            err = std::max(err, std::abs(errv[i]) / (atol + rtol * std::max(std::abs(y[i]),
                                                                            std::abs(y5[i]))));
        if (err <= 1.0) {
            t += h;
            y = y5;
            k1 = k7;  // FSAL
            ++traj.n_steps;
            if (t >= next_sample - 1e-14 * t_abs && sample_idx <= n_samples) {
                RayState s = unpack(y);
                traj.t.push_back(dir * t);
                traj.state.push_back(s);
                traj.omega_log.push_back(model.omega_value(s, opt));
                ++sample_idx;
                next_sample = t_abs * sample_idx / std::max(n_samples, 1);
            }
        } else {
            ++traj.n_rejected;
        }
        double scale = 0.9 * std::pow(std::max(err, 1e-10), -0.2);
        h *= std::clamp(scale, 0.2, 5.0);
        if (h < hmin) throw MaxrayError("integrate: step-size collapse at t = " + std::to_string(t));
    }

    double om0 = traj.omega_log.front();
    for (double om : traj.omega_log)
        traj.omega_drift = std::max(traj.omega_drift,
                                    std::abs(om - om0) / std::max(std::abs(om0), 1e-300));
    return traj;
}

// Transport a set of phase-space points to time t. Returns final states;
// `volume_defect` reports max |det J - 1| estimated from finite-difference
// clouds around each point (J over the 4-dim (r,k) phase space).
struct EnsembleResult {
    std::vector<RayState> final_state;
    double volume_defect = 0.0;
};

inline EnsembleResult push_ensemble(const DispersionModel& model, const FlowOptions& opt,
                                    const std::vector<RayState>& points, double t,
                                    bool volume_diagnostic = false, double fd_step = 1e-5,
                                    double rtol = 1e-10, double atol = 1e-12) {
    EnsembleResult res;
    res.final_state.resize(points.size());
    std::vector<double> defects(points.size(), 0.0);
    parallel_for(points.size(), [&](std::size_t i) {
        auto transport = [&](const RayState& s0) {
            return integrate(model, opt, s0, t, 1, rtol, atol).state.back();
        };
        res.final_state[i] = transport(points[i]);
        if (volume_diagnostic) {
            Eigen::Matrix4d jac;
            for (int a = 0; a < 4; ++a) {
                RayState sp = points[i], sm = points[i];
                double* pp[4] = {&sp.r.x(), &sp.r.y(), &sp.k.x(), &sp.k.y()};
                double* pm[4] = {&sm.r.x(), &sm.r.y(), &sm.k.x(), &sm.k.y()};
                *pp[a] += fd_step;
                *pm[a] -= fd_step;
                RayState fp = transport(sp), fm = transport(sm);
                jac(0, a) = (fp.r.x() - fm.r.x()) / (2 * fd_step);
                jac(1, a) = (fp.r.y() - fm.r.y()) / (2 * fd_step);
                jac(2, a) = (fp.k.x() - fm.k.x()) / (2 * fd_step);
                jac(3, a) = (fp.k.y() - fm.k.y()) / (2 * fd_step);
            }
            defects[i] = std::abs(jac.determinant() - 1.0);
        }
    });
    for (double d : defects) res.volume_defect = std::max(res.volume_defect, d);
    return res;
}

}  // namespace maxray
