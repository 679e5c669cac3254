// materials.hpp — periodic material weights W^{-1}(y) = [[ε,χ],[χ*,μ]] on a
// unit-cell sample grid, their Fourier tables, and slow modulation profiles.

#pragma once

#include <array>
#include <functional>
#include <vector>

#include "maxray/core.hpp"
#include "maxray/lattice.hpp"

namespace maxray {

struct WeightsReport {
    double min_eigenvalue = 0.0;
    double hermiticity_defect = 0.0;
    bool is_real = false;
    bool positive = false;
    bool ok = false;
};

class MaterialWeights {
public:
    MaterialWeights() = default;

    MaterialWeights(LatticeSpec lat, std::array<int, 3> dims, std::vector<Mat6c> winv_samples)
        : lattice_(std::move(lat)), dims_(dims), winv_(std::move(winv_samples)) {
        if (static_cast<int>(winv_.size()) != dims_[0] * dims_[1] * dims_[2])
            throw MaxrayError("MaterialWeights: sample count mismatch");
        finalize();
    }

    const LatticeSpec& lattice() const { return lattice_; }
    const std::array<int, 3>& dims() const { return dims_; }
    int sample_count() const { return static_cast<int>(winv_.size()); }
    bool is_real() const { return is_real_; }

    const Mat6c& winv_sample(int idx) const { return winv_[idx]; }
    const Mat6c& w_sample(int idx) const { return w_[idx]; }
    int sample_index(int i, int j, int k) const { return (i * dims_[1] + j) * dims_[2] + k; }

    // Evaluate W^{-1} at reduced cell coordinates by Fourier series; exact for
    // band-limited weights.
    Mat6c winv_eval(const Vec3& y_reduced) const {
        Mat6c acc = Mat6c::Zero();
        for (const auto& [h, c] : sparse_winv_) {
            double phase = two_pi * (h[0] * y_reduced[0] + h[1] * y_reduced[1] +
                                     h[2] * y_reduced[2]);
            acc += c * std::exp(iu * phase);
        }
        return acc;
    }

    const std::vector<std::pair<std::array<int, 3>, Mat6c>>& sparse_winv() const {
        return sparse_winv_;
    }

    WeightsReport validate() const {
        WeightsReport rep;
        rep.min_eigenvalue = std::numeric_limits<double>::infinity();
        rep.hermiticity_defect = 0.0;
        double max_im = 0.0;
        for (const auto& m : winv_) {
            rep.hermiticity_defect =
                std::max(rep.hermiticity_defect, (m - m.adjoint().eval()).cwiseAbs().maxCoeff());
            max_im = std::max(max_im, m.imag().cwiseAbs().maxCoeff());
            Eigen::SelfAdjointEigenSolver<Mat6c> es(0.5 * (m + m.adjoint().eval()),
                                                    Eigen::EigenvaluesOnly);
            rep.min_eigenvalue = std::min(rep.min_eigenvalue, es.eigenvalues().minCoeff());
        }
        rep.is_real = max_im < 1e-12;
        rep.positive = rep.min_eigenvalue > 0.0;
        rep.ok = rep.positive && rep.hermiticity_defect < 1e-12;
        return rep;
    }

    // Zero all harmonics with |G| > gmax and resample, keeping the plane-wave
    // solver and the spectral supercell on the identical operator. A cos²
    // roll-off starting at `rolloff`·gmax suppresses truncation ringing; set
    // rolloff = 1 for a hard cut.
    MaterialWeights band_limited(double gmax, double rolloff = 0.8) const {
        std::vector<Mat6c> samples(winv_.size(), Mat6c::Zero());
        std::vector<cplx> buf(winv_.size());
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < 6; ++c) {
                for (std::size_t i = 0; i < winv_hat_.size(); ++i) buf[i] = winv_hat_[i](r, c);
                window_harmonics(buf, gmax, rolloff);
                cell_fft_inverse(buf, {dims_[0], dims_[1], dims_[2]});
                for (std::size_t i = 0; i < buf.size(); ++i) samples[i](r, c) = buf[i];
            }
        for (auto& m : samples) m = 0.5 * (m + m.adjoint().eval());
        MaterialWeights out(lattice_, dims_, std::move(samples));
        auto rep = out.validate();
        if (!rep.positive)
            throw MaxrayError("band_limited: truncation destroyed positive-definiteness");
        return out;
    }

private:
    Mat6c hat_at(const std::vector<Mat6c>& table, const std::array<int, 3>& h) const {
        std::array<int, 3> idx;
        for (int i = 0; i < 3; ++i) {
            int half = dims_[i] / 2;
            if (h[i] > half || h[i] < -((dims_[i] - 1) / 2)) return Mat6c::Zero();
            idx[i] = dft_index_of_harmonic(h[i], dims_[i]);
        }
        return table[(idx[0] * dims_[1] + idx[1]) * dims_[2] + idx[2]];
    }

    void window_harmonics(std::vector<cplx>& coeffs, double gmax, double rolloff) const {
        for (int i = 0; i < dims_[0]; ++i)
            for (int j = 0; j < dims_[1]; ++j)
                for (int k = 0; k < dims_[2]; ++k) {
                    Vec3 g = signed_harmonic(i, dims_[0]) * lattice_.b_col(0) +
                             signed_harmonic(j, dims_[1]) * lattice_.b_col(1) +
                             signed_harmonic(k, dims_[2]) * lattice_.b_col(2);
                    double gn = g.norm();
                    cplx& c = coeffs[(i * dims_[1] + j) * dims_[2] + k];
                    if (gn > gmax * (1.0 + 1e-12)) {
                        c = 0.0;
                    } else if (gn > rolloff * gmax) {
                        double t = (gn - rolloff * gmax) / ((1.0 - rolloff) * gmax);
                        double win = std::cos(0.5 * pi * t);
                        c *= win * win;
                    }
                }
    }

    void finalize() {
        // enforce exact hermiticity before anything else
        double defect = 0.0, max_im = 0.0;
        for (auto& m : winv_) {
            defect = std::max(defect, (m - m.adjoint().eval()).cwiseAbs().maxCoeff());
            m = 0.5 * (m + m.adjoint().eval());
            max_im = std::max(max_im, m.imag().cwiseAbs().maxCoeff());
        }
        if (defect > 1e-12) throw MaxrayError("MaterialWeights: samples not hermitian");
        is_real_ = max_im < 1e-12;

        w_.resize(winv_.size());
        double min_eig = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < winv_.size(); ++i) {
            Eigen::SelfAdjointEigenSolver<Mat6c> es(winv_[i], Eigen::EigenvaluesOnly);
            min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
            w_[i] = winv_[i].inverse();
        }
        if (!(min_eig > 0.0)) throw MaxrayError("MaterialWeights: W^{-1} not positive definite");

        winv_hat_ = field_fft(winv_);
        w_hat_ = field_fft(w_);

        double cmax = 0.0;
        for (const auto& c : winv_hat_) cmax = std::max(cmax, c.cwiseAbs().maxCoeff());
        for (int i = 0; i < dims_[0]; ++i)
            for (int j = 0; j < dims_[1]; ++j)
                for (int k = 0; k < dims_[2]; ++k) {
                    const Mat6c& c = winv_hat_[(i * dims_[1] + j) * dims_[2] + k];
                    if (c.cwiseAbs().maxCoeff() > 1e-15 * cmax)
                        sparse_winv_.push_back({{signed_harmonic(i, dims_[0]),
                                                 signed_harmonic(j, dims_[1]),
                                                 signed_harmonic(k, dims_[2])},
                                                c});
                }
    }

    std::vector<Mat6c> field_fft(const std::vector<Mat6c>& field) const {
        const int n = sample_count();
        std::vector<cplx> buf(static_cast<std::size_t>(n) * 36);
        for (int i = 0; i < n; ++i)
            for (int r = 0; r < 6; ++r)
                for (int c = 0; c < 6; ++c) buf[i * 36 + r * 6 + c] = field[i](r, c);
        Fft::forward_batch(buf, {dims_[0], dims_[1], dims_[2]}, 36);
        std::vector<Mat6c> out(n);
        for (int i = 0; i < n; ++i)
            for (int r = 0; r < 6; ++r)
                for (int c = 0; c < 6; ++c) out[i](r, c) = buf[i * 36 + r * 6 + c] / double(n);
        return out;
    }

    LatticeSpec lattice_;
    std::array<int, 3> dims_{1, 1, 1};
    std::vector<Mat6c> winv_, w_;
    std::vector<Mat6c> winv_hat_, w_hat_;
    std::vector<std::pair<std::array<int, 3>, Mat6c>> sparse_winv_;
    bool is_real_ = false;

public:
    // accessors that need dims_
    Mat6c winv_coeff(const std::array<int, 3>& h) const { return hat_at(winv_hat_, h); }
    Mat6c w_coeff(const std::array<int, 3>& h) const { return hat_at(w_hat_, h); }

    // DFT-table lookup with index wrap; the convolution of the collocation
    // operator on this sample grid
    Mat6c winv_coeff_wrapped(const std::array<int, 3>& h) const {
        std::array<int, 3> idx;
        for (int i = 0; i < 3; ++i) idx[i] = ((h[i] % dims_[i]) + dims_[i]) % dims_[i];
        return winv_hat_[(idx[0] * dims_[1] + idx[1]) * dims_[2] + idx[2]];
    }

    // Resample onto a new per-cell grid by Fourier series; exact when the
    // weights are band-limited below the new Nyquist.
    MaterialWeights resampled(std::array<int, 3> new_dims) const {
        std::vector<Mat6c> samples(static_cast<std::size_t>(new_dims[0]) * new_dims[1] *
                                   new_dims[2]);
        for (int i = 0; i < new_dims[0]; ++i)
            for (int j = 0; j < new_dims[1]; ++j)
                for (int k = 0; k < new_dims[2]; ++k) {
                    Vec3 y(static_cast<double>(i) / new_dims[0],
                           static_cast<double>(j) / new_dims[1],
                           static_cast<double>(k) / new_dims[2]);
                    samples[(i * new_dims[1] + j) * new_dims[2] + k] = winv_eval(y);
                }
        return MaterialWeights(lattice_, new_dims, std::move(samples));
    }
};

inline MaterialWeights make_homogeneous(const LatticeSpec& lat, const Mat3c& eps, const Mat3c& mu,
                                        const Mat3c& chi) {
    Mat6c winv;
    winv.topLeftCorner<3, 3>() = eps;
    winv.topRightCorner<3, 3>() = chi;
    winv.bottomLeftCorner<3, 3>() = chi.adjoint();
    winv.bottomRightCorner<3, 3>() = mu;
    if ((winv - winv.adjoint().eval()).cwiseAbs().maxCoeff() > 1e-12)
        throw MaxrayError("make_homogeneous: assembled weights not hermitian");
    return MaterialWeights(lat, {1, 1, 1}, {winv});
}

// Smoothed indicator of a disc of radius r: heat-kernel mollification, which
// vanishes identically as r -> 0.
inline double soft_disc(double dist, double radius, double width) {
    return 0.5 * (std::erf((radius - dist) / width) + std::erf((radius + dist) / width));
}

namespace detail {
inline double rod_distance(const LatticeSpec& lat, const Vec3& y_reduced,
                           const Vec3& center_reduced = Vec3(0.5, 0.5, 0)) {
    // distance from the rod axis, minimized over neighbor images
    double best = std::numeric_limits<double>::infinity();
    for (int s1 = -1; s1 <= 1; ++s1)
        for (int s2 = -1; s2 <= 1; ++s2) {
            Vec3 d = lat.a * (y_reduced - center_reduced - Vec3(s1, s2, 0));
            d.z() = 0.0;
            best = std::min(best, d.norm());
        }
    return best;
}
}  // namespace detail

inline MaterialWeights make_rod_lattice(const LatticeSpec& lat, double radius, double eps_rod,
                                        double eps_bg, double width,
                                        std::array<int, 3> dims = {64, 64, 1}) {
    double shortest = std::min(lat.a_col(0).norm(), lat.a_col(1).norm());
    if (!(radius > 0.0) || radius >= 0.5 * shortest)
        throw MaxrayError("make_rod_lattice: radius out of range");
    if (lat.dim == 2) dims[2] = 1;
    std::vector<Mat6c> samples(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]);
    for (int i = 0; i < dims[0]; ++i)
        for (int j = 0; j < dims[1]; ++j)
            for (int k = 0; k < dims[2]; ++k) {
                Vec3 y(static_cast<double>(i) / dims[0], static_cast<double>(j) / dims[1],
                       static_cast<double>(k) / dims[2]);
                double f = soft_disc(detail::rod_distance(lat, y), radius, width);
                double eps = eps_bg + (eps_rod - eps_bg) * f;
                Mat6c m = Mat6c::Identity();
                m.topLeftCorner<3, 3>() *= eps;
                samples[(i * dims[1] + j) * dims[2] + k] = m;
            }
    return MaterialWeights(lat, dims, std::move(samples));
}

// Gyroelectric rod crystal: in-plane ε block [[εp, iκ],[-iκ, εp]] interpolating
// between background and rod values; χ = 0. An optional μ_zz rod profile
// shapes the out-of-plane-H sector independently.
inline MaterialWeights make_gyro_rod_lattice(const LatticeSpec& lat, double radius, double width,
                                             double eps_perp_rod, double kappa_rod,
                                             double eps_z_rod, double eps_bg,
                                             std::array<int, 3> dims = {64, 64, 1},
                                             double mu_z_rod = 1.0, double eps_z_bg = -1.0,
                                             double eps_perp_rod_y = -1.0) {
    if (eps_z_bg < 0.0) eps_z_bg = eps_bg;
    if (eps_perp_rod_y < 0.0) eps_perp_rod_y = eps_perp_rod;
    double shortest = std::min(lat.a_col(0).norm(), lat.a_col(1).norm());
    if (!(radius > 0.0) || radius >= 0.5 * shortest)
        throw MaxrayError("make_gyro_rod_lattice: radius out of range");
    if (lat.dim == 2) dims[2] = 1;
    std::vector<Mat6c> samples(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]);
    for (int i = 0; i < dims[0]; ++i)
        for (int j = 0; j < dims[1]; ++j)
            for (int k = 0; k < dims[2]; ++k) {
                Vec3 y(static_cast<double>(i) / dims[0], static_cast<double>(j) / dims[1],
                       static_cast<double>(k) / dims[2]);
                double f = soft_disc(detail::rod_distance(lat, y), radius, width);
                double ez = eps_z_bg + (eps_z_rod - eps_z_bg) * f;
                double kap = kappa_rod * f;
                Mat6c m = Mat6c::Identity();
                m(0, 0) = eps_bg + (eps_perp_rod - eps_bg) * f;
                m(1, 1) = eps_bg + (eps_perp_rod_y - eps_bg) * f;
                m(2, 2) = ez;
                m(0, 1) = iu * kap;
                m(1, 0) = -iu * kap;
                m(5, 5) = 1.0 + (mu_z_rod - 1.0) * f;
                samples[(i * dims[1] + j) * dims[2] + k] = m;
            }
    return MaterialWeights(lat, dims, std::move(samples));
}

// Diatomic variant: two rods per cell at (1/4,1/4) and (3/4,3/4) with unequal
// radii. Breaking the sublattice swap opens the Dirac touchings without
// breaking time reversal, which gives a real-weight crystal with an isolated
// band (necessarily Chern 0).
inline MaterialWeights make_diatomic_rod_lattice(const LatticeSpec& lat, double radius_a,
                                                 double radius_b, double width,
                                                 double eps_perp_rod, double eps_z_rod,
                                                 double eps_bg, std::array<int, 3> dims,
                                                 double mu_z_rod = 1.0, double eps_z_bg = -1.0) {
    if (eps_z_bg < 0.0) eps_z_bg = eps_bg;
    double shortest = std::min(lat.a_col(0).norm(), lat.a_col(1).norm());
    if (!(radius_a > 0.0) || !(radius_b > 0.0) ||
        radius_a + radius_b >= 0.5 * std::sqrt(2.0) * shortest)
        throw MaxrayError("make_diatomic_rod_lattice: radii out of range");
    if (lat.dim == 2) dims[2] = 1;
    std::vector<Mat6c> samples(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]);
    const Vec3 ca(0.25, 0.25, 0), cb(0.75, 0.75, 0);
    for (int i = 0; i < dims[0]; ++i)
        for (int j = 0; j < dims[1]; ++j)
            for (int k = 0; k < dims[2]; ++k) {
                Vec3 y(static_cast<double>(i) / dims[0], static_cast<double>(j) / dims[1],
                       static_cast<double>(k) / dims[2]);
                double f = soft_disc(detail::rod_distance(lat, y, ca), radius_a, width) +
                           soft_disc(detail::rod_distance(lat, y, cb), radius_b, width);
                f = std::min(f, 1.0);
                Mat6c m = Mat6c::Identity();
                m(0, 0) = eps_bg + (eps_perp_rod - eps_bg) * f;
                m(1, 1) = m(0, 0);
                m(2, 2) = eps_z_bg + (eps_z_rod - eps_z_bg) * f;
                m(5, 5) = 1.0 + (mu_z_rod - 1.0) * f;
                samples[(i * dims[1] + j) * dims[2] + k] = m;
            }
    return MaterialWeights(lat, dims, std::move(samples));
}

// ---------------------------------------------------------------------------
// Slow modulation profiles τ_ε, τ_μ with analytic gradients, normalized so
// that τ(0) = 1 exactly.

enum class ModulationKind { constant, gaussian_bump, smooth_ramp };

struct ModulationParams {
    ModulationKind kind = ModulationKind::constant;
    double strength = 0.0;   // bump/ramp amplitude s
    double width = 1.0;      // length scale w
    Vec3 center = Vec3::Zero();   // bump center / ramp offset along direction
    Vec3 direction = Vec3(1, 0, 0);  // ramp direction (normalized on use)
};

namespace detail {

struct ScalarProfile {
    ModulationParams p;
    double norm = 1.0;  // raw value at r = 0, divided out

    double raw(const Vec3& r) const {
        switch (p.kind) {
            case ModulationKind::constant:
                return 1.0;
            case ModulationKind::gaussian_bump: {
                Vec3 d = r - p.center;
                return 1.0 + p.strength * std::exp(-d.squaredNorm() / (p.width * p.width));
            }
            case ModulationKind::smooth_ramp: {
                Vec3 n = p.direction.normalized();
                double x = (r - p.center).dot(n) / p.width;
                return 1.0 + p.strength * 0.5 * (1.0 + std::tanh(x));
            }
        }
        return 1.0;
    }

    Vec3 raw_grad(const Vec3& r) const {
        switch (p.kind) {
            case ModulationKind::constant:
                return Vec3::Zero();
            case ModulationKind::gaussian_bump: {
                Vec3 d = r - p.center;
                double g = std::exp(-d.squaredNorm() / (p.width * p.width));
                return p.strength * g * (-2.0 / (p.width * p.width)) * d;
            }
            case ModulationKind::smooth_ramp: {
                Vec3 n = p.direction.normalized();
                double x = (r - p.center).dot(n) / p.width;
                double sech = 1.0 / std::cosh(x);
                return p.strength * 0.5 * sech * sech / p.width * n;
            }
        }
        return Vec3::Zero();
    }

    Eigen::Matrix3d raw_hess(const Vec3& r) const {
        switch (p.kind) {
            case ModulationKind::constant:
                return Eigen::Matrix3d::Zero();
            case ModulationKind::gaussian_bump: {
                Vec3 d = r - p.center;
                double w2 = p.width * p.width;
                double g = std::exp(-d.squaredNorm() / w2);
                return p.strength * g *
                       (4.0 / (w2 * w2) * d * d.transpose() -
                        2.0 / w2 * Eigen::Matrix3d::Identity());
            }
            case ModulationKind::smooth_ramp: {
                Vec3 n = p.direction.normalized();
                double x = (r - p.center).dot(n) / p.width;
                double sech = 1.0 / std::cosh(x);
                double d2 = -2.0 * std::tanh(x) * sech * sech;
                return p.strength * 0.5 * d2 / (p.width * p.width) * n * n.transpose();
            }
        }
        return Eigen::Matrix3d::Zero();
    }

    double value(const Vec3& r) const { return raw(r) / norm; }
    Vec3 grad(const Vec3& r) const { return raw_grad(r) / norm; }
    Eigen::Matrix3d hess(const Vec3& r) const { return raw_hess(r) / norm; }
};

}  // namespace detail

class ModulationProfile {
public:
    // `split` mode modulates ε and μ independently (χ = 0 case); `scalar`
    // mode forces τ_ε = τ_μ (required when χ != 0).
    static ModulationProfile split(const ModulationParams& eps_params,
                                   const ModulationParams& mu_params) {
        ModulationProfile m;
        m.split_ = true;
        m.eps_.p = eps_params;
        m.mu_.p = mu_params;
        m.normalize();
        return m;
    }

    static ModulationProfile scalar(const ModulationParams& params) {
        ModulationProfile m;
        m.split_ = false;
        m.eps_.p = params;
        m.mu_.p = params;
        m.normalize();
        return m;
    }

    static ModulationProfile constant() { return scalar(ModulationParams{}); }

    bool is_split() const { return split_; }

    double tau_eps(const Vec3& r) const { return eps_.value(r); }
    double tau_mu(const Vec3& r) const { return mu_.value(r); }
    double tau(const Vec3& r) const { return std::sqrt(tau_eps(r) * tau_mu(r)); }
    double tau_sq(const Vec3& r) const { return tau_eps(r) * tau_mu(r); }

    Vec3 grad_tau_eps(const Vec3& r) const { return eps_.grad(r); }
    Vec3 grad_tau_mu(const Vec3& r) const { return mu_.grad(r); }
    Eigen::Matrix3d hess_tau_eps(const Vec3& r) const { return eps_.hess(r); }
    Eigen::Matrix3d hess_tau_mu(const Vec3& r) const { return mu_.hess(r); }

    // τ² ∇ln(τ_ε/τ_μ) = τ_μ ∇τ_ε - τ_ε ∇τ_μ, and its r-Jacobian
    Vec3 tau_sq_grad_ln_ratio(const Vec3& r) const {
        return mu_.value(r) * eps_.grad(r) - eps_.value(r) * mu_.grad(r);
    }
    Eigen::Matrix3d tau_sq_grad_ln_ratio_jacobian(const Vec3& r) const {
        // ∂_i (τ_μ ∂_j τ_ε - τ_ε ∂_j τ_μ)
        return mu_.grad(r) * eps_.grad(r).transpose() + mu_.value(r) * eps_.hess(r) -
               eps_.grad(r) * mu_.grad(r).transpose() - eps_.value(r) * mu_.hess(r);
    }

    // ∇ ln(τ_ε/τ_μ); identically zero in scalar mode.
    Vec3 grad_ln_ratio(const Vec3& r) const {
        if (!split_) return Vec3::Zero();
        return eps_.grad(r) / eps_.value(r) - mu_.grad(r) / mu_.value(r);
    }
    // ∇ ln τ = (∇ ln τ_ε + ∇ ln τ_μ)/2
    Vec3 grad_ln_tau(const Vec3& r) const {
        return 0.5 * (eps_.grad(r) / eps_.value(r) + mu_.grad(r) / mu_.value(r));
    }
    Vec3 grad_tau_sq(const Vec3& r) const {
        return eps_.grad(r) * mu_.value(r) + mu_.grad(r) * eps_.value(r);
    }
    bool is_constant() const {
        return eps_.p.kind == ModulationKind::constant && mu_.p.kind == ModulationKind::constant;
    }

private:
    void normalize() {
        for (auto* s : {&eps_, &mu_}) {
            if (s->p.kind != ModulationKind::constant && !(1.0 + s->p.strength > 1e-6))
                throw MaxrayError("modulation_profile: strength violates positivity");
            if (s->p.kind != ModulationKind::constant && !(s->p.width > 0.0))
                throw MaxrayError("modulation_profile: width must be positive");
            s->norm = s->raw(Vec3::Zero());
        }
    }

    detail::ScalarProfile eps_, mu_;
    bool split_ = false;
};

}  // namespace maxray
