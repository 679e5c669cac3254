// propagator.hpp — direct solution of i∂_tΨ = M_λΨ on a periodized supercell:
// spectral curl, pointwise weights, Krylov (Lanczos in the weighted inner
// product) exponential stepping, and discrete quantization of the quadratic
// observables.
//
// The supercell operator is the collocation operator of the per-cell sample
// grid; its Bloch fibers are exactly the wrapped-window fibers of
// planewave_window, so band data and reference dynamics describe the same
// discrete crystal with no representation gap.

#pragma once

#include <functional>
#include <vector>

#include "maxray/fft.hpp"
#include "maxray/geometry.hpp"
#include "maxray/materials.hpp"

namespace maxray {

struct SupercellSpec {
    int cells = 32;    // L per axis (square, d=2)
    int samples = 6;   // per-cell sample/harmonic count per axis
    double lambda = 0.05;
};

using Field = std::vector<cplx>;  // layout [x1][x2][component], component fastest

class SupercellOperator {
public:
    SupercellOperator(const MaterialWeights& weights_cell, ModulationProfile mod,
                      SupercellSpec spec, double boundary_flatness_tol = 1e-8)
        : mod_(std::move(mod)), spec_(spec) {
        n_ = spec_.cells * spec_.samples;
        cell_weights_ = weights_cell.resampled({spec_.samples, spec_.samples, 1});
        const int ns = spec_.samples;
        w_cell_.resize(static_cast<std::size_t>(ns) * ns);
        winv_cell_.resize(w_cell_.size());
        for (int i = 0; i < ns; ++i)
            for (int j = 0; j < ns; ++j) {
                winv_cell_[i * ns + j] = cell_weights_.winv_sample(cell_weights_.sample_index(i, j, 0));
                w_cell_[i * ns + j] = cell_weights_.w_sample(cell_weights_.sample_index(i, j, 0));
            }
        // modulation factors on the full grid
        tau_eps_sq_.resize(static_cast<std::size_t>(n_) * n_);
        tau_mu_sq_.resize(tau_eps_sq_.size());
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j) {
                Vec3 r = spec_.lambda * grid_x(i, j);
                double te = mod_.tau_eps(r), tm = mod_.tau_mu(r);
                tau_eps_sq_[idx2(i, j)] = te * te;
                tau_mu_sq_[idx2(i, j)] = tm * tm;
            }
        double bv = boundary_modulation_variation();
        if (bv > boundary_flatness_tol)
            throw MaxrayError("build_supercell: modulation varies by " + std::to_string(bv) +
                              " at the supercell boundary; enlarge the cell or shrink the "
                              "profile");
        // spectral curl wavenumbers
        q_.resize(n_);
        for (int m = 0; m < n_; ++m)
            q_[m] = two_pi * signed_harmonic(m, n_) / static_cast<double>(spec_.cells);
    }

    const SupercellSpec& spec() const { return spec_; }
    const ModulationProfile& modulation() const { return mod_; }
    const MaterialWeights& cell_weights() const { return cell_weights_; }
    int grid_n() const { return n_; }
    std::size_t field_size() const { return static_cast<std::size_t>(n_) * n_ * 6; }
    double dv() const { return 1.0 / (spec_.samples * spec_.samples); }
    Vec3 grid_x(int i, int j) const {
        return Vec3(static_cast<double>(i) / spec_.samples,
                    static_cast<double>(j) / spec_.samples, 0.0);
    }
    // periodic W^{-1}(x) at a grid point (cell-periodic)
    const Mat6c& winv_at(int i, int j) const {
        return winv_cell_[(i % spec_.samples) * spec_.samples + (j % spec_.samples)];
    }
    double tau_eps_sq_at(int i, int j) const { return tau_eps_sq_[idx2(i, j)]; }
    double tau_mu_sq_at(int i, int j) const { return tau_mu_sq_[idx2(i, j)]; }

    double boundary_modulation_variation() const {
        double worst = 0.0;
        double l = spec_.cells;
        for (int s = 0; s < 4 * spec_.cells; ++s) {
            double a = static_cast<double>(s % spec_.cells);
            Vec3 x;
            switch (s / spec_.cells) {
                case 0: x = Vec3(a, 0, 0); break;
                case 1: x = Vec3(a, l - 1e-9, 0); break;
                case 2: x = Vec3(0, a, 0); break;
                default: x = Vec3(l - 1e-9, a, 0); break;
            }
            Vec3 r = spec_.lambda * x;
            worst = std::max(worst, std::abs(mod_.tau_eps(r) - 1.0));
            worst = std::max(worst, std::abs(mod_.tau_mu(r) - 1.0));
        }
        return worst;
    }

    // M_λ Ψ = S^{-2}(λx) W(x) Rot Ψ
    void apply(const Field& in, Field& out) const {
        if (in.size() != field_size()) throw MaxrayError("supercell apply: size mismatch");
        out = in;
        Fft::forward_batch(out, {n_, n_}, 6);
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j) {
                cplx* f = out.data() + idx2(i, j) * 6;
                const double qx = q_[i], qy = q_[j];
                cplx e0 = f[0], e1 = f[1], e2 = f[2], h0 = f[3], h1 = f[4], h2 = f[5];
                // blocks [[0, -q^x],[+q^x, 0]], in-plane q
                f[0] = -(qy * h2);
                f[1] = -(-qx * h2);
                f[2] = -(qx * h1 - qy * h0);
                f[3] = qy * e2;
                f[4] = -qx * e2;
                f[5] = qx * e1 - qy * e0;
            }
        Fft::inverse_batch(out, {n_, n_}, 6);
        parallel_for(static_cast<std::size_t>(n_), [&](std::size_t i) {
            for (int j = 0; j < n_; ++j) {
                cplx* f = out.data() + idx2(static_cast<int>(i), j) * 6;
                Eigen::Map<Vec6c> v(f);
                const Mat6c& w = w_cell_[(i % spec_.samples) * spec_.samples +
                                         (j % spec_.samples)];
                Vec6c wv = w * v;
                double te2 = tau_eps_sq_[idx2(static_cast<int>(i), j)];
                double tm2 = tau_mu_sq_[idx2(static_cast<int>(i), j)];
                v.head<3>() = te2 * wv.head<3>();
                v.tail<3>() = tm2 * wv.tail<3>();
            }
        });
    }

    // <a, W_λ^{-1} b> dV with W_λ^{-1} = S W^{-1} S
    cplx weighted_dot(const Field& a, const Field& b) const {
        std::vector<cplx> partial(n_, 0.0);
        parallel_for(static_cast<std::size_t>(n_), [&](std::size_t i) {
            cplx acc = 0.0;
            for (int j = 0; j < n_; ++j) {
                const cplx* pa = a.data() + idx2(static_cast<int>(i), j) * 6;
                const cplx* pb = b.data() + idx2(static_cast<int>(i), j) * 6;
                Eigen::Map<const Vec6c> va(pa), vb(pb);
                const Mat6c& winv = winv_at(static_cast<int>(i), j);
                double te = std::sqrt(1.0 / tau_eps_sq_[idx2(static_cast<int>(i), j)]);
                double tm = std::sqrt(1.0 / tau_mu_sq_[idx2(static_cast<int>(i), j)]);
                Vec6c sb;
                sb.head<3>() = te * vb.head<3>();
                sb.tail<3>() = tm * vb.tail<3>();
                Vec6c wsb = winv * sb;
                Vec6c swsb;
                swsb.head<3>() = te * wsb.head<3>();
                swsb.tail<3>() = tm * wsb.tail<3>();
                acc += va.dot(swsb);
            }
            partial[i] = acc;
        });
        cplx total = 0.0;
        for (cplx p : partial) total += p;
        return total * dv();
    }

    double weighted_norm(const Field& a) const { return std::sqrt(std::real(weighted_dot(a, a))); }

    int idx2(int i, int j) const { return i * n_ + j; }

private:
    ModulationProfile mod_;
    SupercellSpec spec_;
    MaterialWeights cell_weights_;
    int n_ = 0;
    std::vector<Mat6c> w_cell_, winv_cell_;
    std::vector<double> tau_eps_sq_, tau_mu_sq_;
    std::vector<double> q_;
};

struct PropagationStats {
    int n_applies = 0;
    int n_substeps = 0;
    double norm_drift = 0.0;
};

// Krylov exponential propagator: Ψ(t_macro) = exp(-i (t_macro/λ) M_λ) Ψ₀.
// Lanczos orthogonalizes in the weighted inner product (the discrete evolution
// is then unitary w.r.t. ‖·‖_w up to the subspace error). Two-pass scheme:
// memory stays at three fields regardless of the Krylov dimension.
inline PropagationStats propagate(const SupercellOperator& op, Field& psi, double t_macro,
                                  double tol = 1e-9, int m_max = 40) {
    PropagationStats stats;
    if (!std::isfinite(t_macro)) throw MaxrayError("propagate: non-finite time");
    double t_total = t_macro / op.spec().lambda;  // microscopic time
    if (t_total == 0.0) return stats;
    double dir = t_total > 0 ? 1.0 : -1.0;
    double remaining = std::abs(t_total);
    double norm0 = op.weighted_norm(psi);

    double dt = std::min(remaining, 2.0);
    const int max_substeps = 100000;
    while (remaining > 1e-14 * std::abs(t_total)) {
        if (stats.n_substeps > max_substeps) throw MaxrayError("propagate: step budget exhausted");
        dt = std::min(dt, remaining);

        // pass 1: Lanczos recurrence for the tridiagonal matrix
        std::vector<double> alpha, beta;  // beta[j] = ‖w_j‖ after orthogonalization
        double nrm = op.weighted_norm(psi);
        Field v_prev;
        Field v = psi;
        for (auto& z : v) z /= nrm;
        Field w;
        int m = 0;
        bool happy = false;
        Eigen::VectorXcd expcol;
        for (int j = 0; j < m_max; ++j) {
            op.apply(v, w);
            ++stats.n_applies;
            double a = std::real(op.weighted_dot(v, w));
            alpha.push_back(a);
            for (std::size_t i = 0; i < w.size(); ++i) {
                w[i] -= a * v[i];
                if (j > 0) w[i] -= beta[j - 1] * v_prev[i];
            }
            double b = op.weighted_norm(w);
            m = j + 1;
            // exponential of the current tridiagonal block
            Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
            for (int i = 0; i < m; ++i) {
                t(i, i) = alpha[i];
                if (i > 0) t(i, i - 1) = t(i - 1, i) = beta[i - 1];
            }
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
            Eigen::VectorXcd phase(m);
            for (int i = 0; i < m; ++i)
                phase[i] = std::exp(-iu * dir * dt * es.eigenvalues()[i]);
            expcol = es.eigenvectors() *
                     (phase.array() * es.eigenvectors().row(0).transpose().cast<cplx>().array())
                         .matrix();
            double err = (j + 1 < m_max) ? b * dt * std::abs(expcol[m - 1]) : 1e300;
            if (b < 1e-12 * nrm) {  // invariant subspace
                happy = true;
                break;
            }
            if (err < tol * dt / std::abs(t_total) || j + 1 == m_max) {
                if (err < tol * dt / std::abs(t_total)) happy = true;
                break;
            }
            beta.push_back(b);
            for (auto& z : w) z /= b;
            v_prev = std::move(v);
            v = std::move(w);
            w = Field();
        }
        if (!happy) {
            dt *= 0.5;
            if (dt < 1e-8) throw MaxrayError("propagate: Krylov breakdown");
            continue;
        }

        // pass 2: rebuild the basis and accumulate the result
        Field result(psi.size(), cplx(0.0));
        v_prev = Field();
        v = psi;
        for (auto& z : v) z /= nrm;
        for (int j = 0; j < m; ++j) {
            cplx c = nrm * expcol[j];
            for (std::size_t i = 0; i < v.size(); ++i) result[i] += c * v[i];
            if (j + 1 == m) break;
            op.apply(v, w);
            ++stats.n_applies;
            for (std::size_t i = 0; i < w.size(); ++i) {
                w[i] -= alpha[j] * v[i];
                if (j > 0) w[i] -= beta[j - 1] * v_prev[i];
            }
            for (auto& z : w) z /= beta[j];
            v_prev = std::move(v);
            v = std::move(w);
            w = Field();
        }
        psi = std::move(result);
        remaining -= dt;
        ++stats.n_substeps;
        if (m < m_max / 2 && dt < remaining) dt *= 1.5;
    }
    stats.norm_drift = std::abs(op.weighted_norm(psi) - norm0) / norm0;
    return stats;
}

// ---------------------------------------------------------------------------
// Quadratic observables. All §3.3 kinds reduce to pointwise 6x6 matrix fields
// (products of cell-periodic material blocks and modulation factors), so the
// symmetrized product with ρ(λx) collapses to plain multiplication. The
// expectation convention folds the paper's factor 2·Re into the normalization:
// the identity observable returns 1 on ‖Ψ‖_w = 1 states.

enum class RegionKind { all, disc, halfplane };

struct RegionProfile {
    RegionKind kind = RegionKind::all;
    Vec3 center = Vec3::Zero();   // disc center / halfplane offset (macro coords)
    Vec3 normal = Vec3(1, 0, 0);  // halfplane normal
    double radius = 1.0;
    double width = 0.1;           // transition layer thickness

    double value(const Vec3& r) const {
        switch (kind) {
            case RegionKind::all:
                return 1.0;
            case RegionKind::disc:
                return 0.5 * (1.0 - std::tanh(((r - center).norm() - radius) / width));
            case RegionKind::halfplane:
                return 0.5 * (1.0 - std::tanh((r - center).dot(normal.normalized()) / width));
        }
        return 1.0;
    }
    Vec3 grad(const Vec3& r) const {
        switch (kind) {
            case RegionKind::all:
                return Vec3::Zero();
            case RegionKind::disc: {
                double d = (r - center).norm();
                if (d < 1e-12) return Vec3::Zero();
                double t = std::tanh((d - radius) / width);
                return -0.5 * (1.0 - t * t) / width * (r - center) / d;
            }
            case RegionKind::halfplane: {
                Vec3 n = normal.normalized();
                double t = std::tanh((r - center).dot(n) / width);
                return -0.5 * (1.0 - t * t) / width * n;
            }
        }
        return Vec3::Zero();
    }
};

struct ObservableDescriptor {
    enum class Kind { energy, poynting, amplitude_e, stress, angular_momentum } kind =
        Kind::energy;
    RegionProfile rho;
    int axis = 0;       // component n
    int axis2 = 0;      // stress second index j
    char flavor = 'A';  // angular momentum flavor: 'A'braham or 'M'inkowski
};

class QuantizedObservable {
public:
    QuantizedObservable(const SupercellOperator& op, ObservableDescriptor desc)
        : op_(&op), desc_(std::move(desc)) {}

    const ObservableDescriptor& descriptor() const { return desc_; }

    // out = ρ(λx) G(x) in, with G the kind's pointwise hermitian factor
    void apply(const Field& in, Field& out) const {
        const int n = op_->grid_n();
        out.resize(in.size());
        parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
            for (int j = 0; j < n; ++j) {
                Eigen::Map<const Vec6c> v(in.data() + op_->idx2(static_cast<int>(i), j) * 6);
                Eigen::Map<Vec6c> o(out.data() + op_->idx2(static_cast<int>(i), j) * 6);
                Vec3 r = op_->spec().lambda * op_->grid_x(static_cast<int>(i), j);
                o = desc_.rho.value(r) * (g_matrix(static_cast<int>(i), j, r) * v);
            }
        });
    }

    // pointwise factor G(x) for this observable kind (hermitian w.r.t. the
    // weighted product; see the per-kind assembly)
    Mat6c g_matrix(int i, int j, const Vec3& r) const {
        const Mat6c& winv = op_->winv_at(i, j);
        double te2 = op_->tau_eps_sq_at(i, j);
        double tm2 = op_->tau_mu_sq_at(i, j);
        switch (desc_.kind) {
            case ObservableDescriptor::Kind::energy:
                return Mat6c::Identity();
            case ObservableDescriptor::Kind::poynting: {
                // current operator j_n = S^{-2} W [[0,-e^x],[e^x,0]] = Op(s_n)
                Mat6c cross = Mat6c::Zero();
                Eigen::Matrix3d ex = cross_matrix(Vec3::Unit(desc_.axis));
                cross.topRightCorner<3, 3>() = -ex.cast<cplx>();
                cross.bottomLeftCorner<3, 3>() = ex.cast<cplx>();
                return wlambda(winv, te2, tm2) * cross;
            }
            case ObservableDescriptor::Kind::amplitude_e: {
                // F = W_λ diag(e_n e_nᵀ, 0): quadratic form ∫ρ|E_n|²
                Mat6c mask = Mat6c::Zero();
                mask(desc_.axis, desc_.axis) = 1.0;
                return wlambda(winv, te2, tm2) * mask;
            }
            case ObservableDescriptor::Kind::stress: {
                // τ_ε^{-2} Ē_j (εE)_n + τ_μ^{-2} H̄_j (μH)_n - δ_{jn} e(x)
                Mat6c q = Mat6c::Zero();
                Mat3c eps = winv.topLeftCorner<3, 3>();
                Mat3c mu = winv.bottomRightCorner<3, 3>();
                Mat3c qe = Mat3c::Zero(), qm = Mat3c::Zero();
                qe.row(desc_.axis2) = eps.row(desc_.axis);
                qm.row(desc_.axis2) = mu.row(desc_.axis);
                q.topLeftCorner<3, 3>() = qe / te2;
                q.bottomRightCorner<3, 3>() = qm / tm2;
                q = 0.5 * (q + q.adjoint().eval());
                if (desc_.axis == desc_.axis2) {
                    // energy density is ½ Ψ†W_λ^{-1}Ψ
                    Mat6c wl_inv = Mat6c::Zero();
                    double se = std::sqrt(1.0 / te2), sm = std::sqrt(1.0 / tm2);
                    Mat6c sdiag = Mat6c::Identity();
                    sdiag.topLeftCorner<3, 3>() *= se;
                    sdiag.bottomRightCorner<3, 3>() *= sm;
                    wl_inv = sdiag * winv * sdiag;
                    q -= 0.5 * wl_inv;
                }
                return wlambda(winv, te2, tm2) * q;
            }
            case ObservableDescriptor::Kind::angular_momentum: {
                // (x × G)_axis with G the A- or M-momentum density form
                Mat6c k = Mat6c::Zero();
                int ax = desc_.axis;
                for (int b = 0; b < 3; ++b) {
                    // ε_{ax,a,b} r_a factors
                    int a1 = (ax + 1) % 3, a2 = (ax + 2) % 3;
                    double coef = (b == a2 ? r[a1] : (b == a1 ? -r[a2] : 0.0));
                    if (coef == 0.0) continue;
                    // momentum density component b as a quadratic form
                    Mat6c gb = Mat6c::Zero();
                    Eigen::Matrix3d eb = cross_matrix(Vec3::Unit(b));
                    if (desc_.flavor == 'A') {
                        // ½ conj(E)×H as a hermitized quadratic form
                        gb.topRightCorner<3, 3>() = -0.25 * eb.cast<cplx>();
                        gb.bottomLeftCorner<3, 3>() = -0.25 * eb.transpose().cast<cplx>();
                    } else {
                        // Minkowski: ½ τ^{-4} conj(εE)×(μH)
                        Mat3c eps = winv.topLeftCorner<3, 3>();
                        Mat3c mu = winv.bottomRightCorner<3, 3>();
                        double t4 = te2 * tm2;
                        Mat3c blk = -0.25 / t4 * eps.adjoint() * eb.cast<cplx>() * mu;
                        gb.topRightCorner<3, 3>() = blk;
                        gb.bottomLeftCorner<3, 3>() = blk.adjoint();
                    }
                    k += coef * gb;
                }
                return wlambda(winv, te2, tm2) * k;
            }
        }
        return Mat6c::Identity();
    }

    double expectation(const Field& psi) const {
        Field tmp;
        apply(psi, tmp);
        return std::real(op_->weighted_dot(psi, tmp));
    }

private:
    static Mat6c wlambda(const Mat6c& winv, double te2, double tm2) {
        // W_λ = S^{-2} W
        Mat6c w = winv.inverse();
        Mat6c s2 = Mat6c::Identity();
        s2.topLeftCorner<3, 3>() *= te2;
        s2.bottomRightCorner<3, 3>() *= tm2;
        return s2 * w;
    }

    const SupercellOperator* op_;
    ObservableDescriptor desc_;
};

inline QuantizedObservable quantize_observable(const SupercellOperator& op,
                                               const ObservableDescriptor& desc) {
    return QuantizedObservable(op, desc);
}

inline double expectation(const SupercellOperator& op, const Field& psi,
                          const QuantizedObservable& obs) {
    (void)op;
    return obs.expectation(psi);
}

// ---------------------------------------------------------------------------
// Scalar k-symbols as finite lattice-shift sums g(k) = Σ_γ c_γ e^{iγ·k}: the
// exact discrete Weyl quantization of ρ(r)g(k) acts as
//   Ψ(x) ↦ Σ_γ c_γ ρ(λ(x + γ/2)) Ψ(x + γ),
// while the symmetrized product replaces ρ(λ(x+γ/2)) by the endpoint average.
// Their difference is O(λ²), pinned by the acceptance suite.

struct ShiftSymbol {
    std::vector<std::pair<std::array<int, 2>, cplx>> terms;  // (γ in cells, coefficient)
};

namespace detail {
template <typename RhoFn>
void apply_shift_quantization(const SupercellOperator& op, const RegionProfile& rho,
                              const ShiftSymbol& g, const Field& in, Field& out, bool weyl) {
    const int n = op.grid_n();
    const int ns = op.spec().samples;
    out.assign(in.size(), cplx(0.0));
    for (const auto& [gam, c] : g.terms) {
        int s1 = gam[0] * ns, s2 = gam[1] * ns;
        parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
            for (int j = 0; j < n; ++j) {
                int ii = (static_cast<int>(i) + s1 % n + n) % n;
                int jj = (j + s2 % n + n) % n;
                Vec3 x = op.grid_x(static_cast<int>(i), j);
                double w;
                if (weyl) {
                    Vec3 xm = x + 0.5 * Vec3(gam[0], gam[1], 0);
                    w = rho.value(op.spec().lambda * xm);
                } else {
                    Vec3 xs = x + Vec3(gam[0], gam[1], 0);
                    w = 0.5 * (rho.value(op.spec().lambda * x) +
                               rho.value(op.spec().lambda * xs));
                }
                for (int cpt = 0; cpt < 6; ++cpt)
                    out[op.idx2(static_cast<int>(i), j) * 6 + cpt] +=
                        c * w * in[op.idx2(ii, jj) * 6 + cpt];
            }
        });
    }
    (void)rho;
}
}  // namespace detail

inline void apply_weyl_product(const SupercellOperator& op, const RegionProfile& rho,
                               const ShiftSymbol& g, const Field& in, Field& out) {
    detail::apply_shift_quantization<RegionProfile>(op, rho, g, in, out, true);
}

inline void apply_symmetrized_product(const SupercellOperator& op, const RegionProfile& rho,
                                      const ShiftSymbol& g, const Field& in, Field& out) {
    detail::apply_shift_quantization<RegionProfile>(op, rho, g, in, out, false);
}

}  // namespace maxray
