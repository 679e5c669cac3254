// bloch.hpp — assembly and diagonalization of the periodic Maxwell fiber
// operators in a truncated plane-wave basis.
//
// Fiber vectors stack 6 components per reciprocal vector G, ordering
// (E_x,E_y,E_z,H_x,H_y,H_z). The generalized eigenproblem R(k) φ = ω B φ uses
//   R(k) : block-diagonal curl blocks [[0, -(k+G)^x],[+(k+G)^x, 0]],
//   B    : convolution by the Fourier coefficients of W^{-1},
// which keeps selfadjointness w.r.t. the weighted product <u, B v> exact at
// the discrete level. Eigenvectors returned B-orthonormal.

#pragma once

#include <mutex>
#include <optional>
#include <vector>

#include "maxray/core.hpp"
#include "maxray/lattice.hpp"
#include "maxray/materials.hpp"

namespace maxray {

class FiberAssembler {
public:
    FiberAssembler(const MaterialWeights& weights, const PlaneWaveBasis& basis)
        : weights_(&weights), basis_(&basis) {
        if ((weights.lattice().a - basis.lattice.a).cwiseAbs().maxCoeff() > 1e-12)
            throw MaxrayError("fiber assembly: basis/weights lattice mismatch");
        check_resolution();
        build_b();
    }
    // referenced objects must outlive the assembler
    FiberAssembler(MaterialWeights&&, const PlaneWaveBasis&) = delete;
    FiberAssembler(const MaterialWeights&, PlaneWaveBasis&&) = delete;
    FiberAssembler(MaterialWeights&&, PlaneWaveBasis&&) = delete;

    const PlaneWaveBasis& basis() const { return *basis_; }
    const MaterialWeights& weights() const { return *weights_; }
    const MatXc& b_matrix() const { return b_; }
    const Eigen::LLT<MatXc>& b_llt() const { return b_llt_; }

    MatXc curl_matrix(const Vec3& k) const {
        const int n = basis_->size();
        MatXc r = MatXc::Zero(6 * n, 6 * n);
        for (int g = 0; g < n; ++g) {
            Eigen::Matrix3d vx = cross_matrix(k + basis_->g[g]);
            r.block<3, 3>(6 * g, 6 * g + 3) = -vx.cast<cplx>();
            r.block<3, 3>(6 * g + 3, 6 * g) = vx.cast<cplx>();
        }
        return r;
    }

    // d/dk_j of the curl matrix: constant blocks [[0,-e_j^x],[+e_j^x,0]] per mode.
    MatXc curl_matrix_derivative(int axis) const {
        const int n = basis_->size();
        MatXc d = MatXc::Zero(6 * n, 6 * n);
        Eigen::Matrix3d ex = cross_matrix(Vec3::Unit(axis));
        for (int g = 0; g < n; ++g) {
            d.block<3, 3>(6 * g, 6 * g + 3) = -ex.cast<cplx>();
            d.block<3, 3>(6 * g + 3, 6 * g) = ex.cast<cplx>();
        }
        return d;
    }

    // Σ_j = W [[0, e_j^x],[e_j^x, 0]]; the W multiplication is realized as
    // B^{-1}, matching M = B^{-1} R. Cached (k-independent).
    const MatXc& sigma_matrix(int axis) const {
        std::lock_guard<std::mutex> lk(sigma_mtx_);
        if (sigma_[axis].size() == 0) {
            const int n = basis_->size();
            MatXc s = MatXc::Zero(6 * n, 6 * n);
            Eigen::Matrix3d ex = cross_matrix(Vec3::Unit(axis));
            for (int g = 0; g < n; ++g) {
                s.block<3, 3>(6 * g, 6 * g + 3) = ex.cast<cplx>();
                s.block<3, 3>(6 * g + 3, 6 * g) = ex.cast<cplx>();
            }
            sigma_[axis] = b_llt_.solve(s);
        }
        return sigma_[axis];
    }

    // weighted fiber inner product <u, v>_B
    cplx dot_b(const VecXc& u, const VecXc& v) const { return u.dot(b_ * v); }

private:
    void check_resolution() {
        const auto& dims = weights_->dims();
        if (basis_->wrapped) {
            // wrapped convolution is the collocation operator of the sample
            // grid itself, so the grids must coincide
            for (int i = 0; i < 3; ++i)
                if (dims[i] != basis_->window[i])
                    throw MaxrayError(
                        "fiber assembly: wrapped basis requires weights sampled on the window "
                        "grid");
            return;
        }
        // a sample grid with dims == 1 along an axis means "constant along it";
        // otherwise two basis exponentials must never alias on the grid
        std::array<int, 3> span{0, 0, 0};
        for (const auto& m : basis_->g_int)
            for (int i = 0; i < 3; ++i) span[i] = std::max(span[i], std::abs(m[i]));
        for (int i = 0; i < 3; ++i)
            if (dims[i] != 1 && dims[i] <= 2 * span[i])
                throw MaxrayError("fiber assembly: weights sample grid too coarse for basis");
    }

    void build_b() {
        const int n = basis_->size();
        b_.resize(6 * n, 6 * n);
        for (int g = 0; g < n; ++g)
            for (int h = 0; h < n; ++h) {
                std::array<int, 3> diff;
                for (int i = 0; i < 3; ++i) diff[i] = basis_->g_int[g][i] - basis_->g_int[h][i];
                b_.block<6, 6>(6 * g, 6 * h) = basis_->wrapped
                                                   ? weights_->winv_coeff_wrapped(diff)
                                                   : weights_->winv_coeff(diff);
            }
        b_ = 0.5 * (b_ + b_.adjoint().eval());
        b_llt_.compute(b_);
        if (b_llt_.info() != Eigen::Success)
            throw MaxrayError("fiber assembly: B not positive definite");
    }

    const MaterialWeights* weights_;
    const PlaneWaveBasis* basis_;
    MatXc b_;
    Eigen::LLT<MatXc> b_llt_;
    mutable std::array<MatXc, 3> sigma_;
    mutable std::mutex sigma_mtx_;
};

struct FiberEigens {
    Vec3 k;
    VecX omega;   // all eigenvalues, ascending
    MatXc phi;    // B-orthonormal eigenvectors (columns)
};

inline FiberEigens solve_fiber(const FiberAssembler& fa, const Vec3& k) {
    MatXc r = fa.curl_matrix(k);
    Eigen::GeneralizedSelfAdjointEigenSolver<MatXc> es(r, fa.b_matrix(),
                                                       Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
    if (es.info() != Eigen::Success) throw MaxrayError("solve_fiber: eigensolver failed");
    return {k, es.eigenvalues(), es.eigenvectors()};
}

inline VecX solve_fiber_values(const FiberAssembler& fa, const Vec3& k) {
    MatXc r = fa.curl_matrix(k);
    Eigen::GeneralizedSelfAdjointEigenSolver<MatXc> es(r, fa.b_matrix(),
                                                       Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
    if (es.info() != Eigen::Success) throw MaxrayError("solve_fiber: eigensolver failed");
    return es.eigenvalues();
}

// Positive-frequency band n maps to sorted eigenvalue index 4N + n; the index
// is stable across Γ because the ground-state bands merge into the zero block
// there while keeping their sorted position.
inline int positive_band_index(int basis_size, int n) { return 4 * basis_size + n; }

struct BlochSolution {
    KGrid grid;
    PlaneWaveBasis basis;
    int n_store = 0;                 // stored positive bands per k
    std::vector<VecX> omega_all;     // per k, all 6N eigenvalues ascending
    std::vector<MatXc> phi;          // per k, 6N x n_store (positive bands)

    int fiber_dim() const { return basis.fiber_dim(); }
    double omega_pos(int ik, int n) const {
        return omega_all[ik][positive_band_index(basis.size(), n)];
    }
    Eigen::Ref<const VecXc> phi_pos(int ik, int n) const { return phi[ik].col(n); }
};

inline BlochSolution band_structure(const MaterialWeights& weights, const PlaneWaveBasis& basis,
                                    const KGrid& grid, int n_bands) {
    if (6 * basis.size() < positive_band_index(basis.size(), n_bands))
        throw MaxrayError("band_structure: n_bands exceeds basis capacity");
    FiberAssembler fa(weights, basis);
    BlochSolution sol;
    sol.grid = grid;
    sol.basis = basis;
    sol.n_store = n_bands;
    sol.omega_all.resize(grid.size());
    sol.phi.resize(grid.size());
    parallel_for(grid.size(), [&](std::size_t ik) {
        FiberEigens eig = solve_fiber(fa, grid.k[ik]);
        sol.omega_all[ik] = eig.omega;
        int base = positive_band_index(basis.size(), 0);
        sol.phi[ik] = eig.phi.middleCols(base, n_bands);
    });
    return sol;
}

// Bands along an explicit k-path with overlap-based connectivity relabeling
// and phase smoothing (for plotting / CSV export).
struct BandPath {
    std::vector<Vec3> k;
    std::vector<VecX> omega;   // per k, n_bands positive frequencies (relabified)
};

inline BandPath band_path(const MaterialWeights& weights, const PlaneWaveBasis& basis,
                          const std::vector<Vec3>& ks, int n_bands) {
    FiberAssembler fa(weights, basis);
    BandPath path;
    path.k = ks;
    path.omega.resize(ks.size());
    MatXc prev;
    std::vector<int> perm(n_bands);
    for (std::size_t ik = 0; ik < ks.size(); ++ik) {
        FiberEigens eig = solve_fiber(fa, ks[ik]);
        int base = positive_band_index(basis.size(), 0);
        MatXc cur = eig.phi.middleCols(base, n_bands);
        VecX om(n_bands);
        for (int n = 0; n < n_bands; ++n) om[n] = eig.omega[base + n];
        if (ik > 0) {
            // greedy overlap matching against the previous point
            MatXc ov = prev.adjoint() * fa.b_matrix() * cur;
            std::vector<bool> used(n_bands, false);
            for (int n = 0; n < n_bands; ++n) {
                int best = -1;
                double best_val = -1.0;
                for (int m = 0; m < n_bands; ++m) {
                    if (used[m]) continue;
                    double v = std::abs(ov(n, m));
                    if (v > best_val) {
                        best_val = v;
                        best = m;
                    }
                }
                used[best] = true;
                perm[n] = best;
            }
            MatXc reordered(cur.rows(), n_bands);
            VecX om2(n_bands);
            for (int n = 0; n < n_bands; ++n) {
                cplx phase = ov(n, perm[n]);
                phase /= std::max(std::abs(phase), 1e-300);
                reordered.col(n) = cur.col(perm[n]) * std::conj(phase);
                om2[n] = om[perm[n]];
            }
            cur = reordered;
            om = om2;
        }
        path.omega[ik] = om;
        prev = cur;
    }
    return path;
}

struct GapReport {
    double gap_margin = 0.0;      // inf_k dist(ω_n(k), rest of spectrum)
    double omega_floor = 0.0;     // min_k |ω_n(k)| (ground-state exclusion)
    bool pass = false;
};

inline GapReport check_gap(const BlochSolution& sol, int band, double gap_floor = 1e-6,
                           double omega_min = 1e-3) {
    GapReport rep;
    rep.gap_margin = std::numeric_limits<double>::infinity();
    rep.omega_floor = std::numeric_limits<double>::infinity();
    const int idx = positive_band_index(sol.basis.size(), band);
    for (int ik = 0; ik < sol.grid.size(); ++ik) {
        const VecX& om = sol.omega_all[ik];
        if (idx >= om.size()) throw MaxrayError("check_gap: band not computed");
        double w = om[idx];
        double dist = std::numeric_limits<double>::infinity();
        if (idx > 0) dist = std::min(dist, std::abs(w - om[idx - 1]));
        if (idx + 1 < om.size()) dist = std::min(dist, std::abs(om[idx + 1] - w));
        rep.gap_margin = std::min(rep.gap_margin, dist);
        rep.omega_floor = std::min(rep.omega_floor, std::abs(w));
    }
    rep.pass = rep.gap_margin > gap_floor && rep.omega_floor > omega_min;
    return rep;
}

namespace detail {
// Hausdorff distance between two finite spectra (as sorted vectors).
inline double hausdorff(const VecX& a, const VecX& b) {
    auto one_sided = [](const VecX& x, const VecX& y) {
        double worst = 0.0;
        for (int i = 0; i < x.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < y.size(); ++j) best = std::min(best, std::abs(x[i] - y[j]));
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(one_sided(a, b), one_sided(b, a));
}
}  // namespace detail

// Particle-hole check: σ(k) vs -σ(-k), solving at the literal -k (the wrapped
// grid point differs by a reciprocal vector, where truncated equivariance is
// only approximate). Real weights compare against themselves; for gyrotropic
// weights pass the conjugate weight set.
inline double check_particle_hole(const MaterialWeights& weights, const PlaneWaveBasis& basis,
                                  const KGrid& grid,
                                  const MaterialWeights* conjugate = nullptr) {
    if (!conjugate && !weights.is_real())
        throw MaxrayError(
            "check_particle_hole: symmetry not applicable to gyrotropic weights; "
            "supply the conjugate weight set");
    FiberAssembler fa(weights, basis);
    std::optional<FiberAssembler> fc;
    if (conjugate) fc.emplace(*conjugate, basis);
    std::vector<double> per_k(grid.size(), 0.0);
    parallel_for(grid.size(), [&](std::size_t ik) {
        VecX a = solve_fiber_values(fa, grid.k[ik]);
        VecX b = solve_fiber_values(conjugate ? *fc : fa, -grid.k[ik]);
        VecX neg = (-b).reverse();
        per_k[ik] = detail::hausdorff(a, neg);
    });
    double worst = 0.0;
    for (double v : per_k) worst = std::max(worst, v);
    return worst;
}

// Density of states by Gaussian smearing over the supplied band values
// (one vector of ω_n(k) samples per band), normalized so ∫D dω = n_bands.
struct DosTable {
    std::vector<double> omega;
    std::vector<double> density;
};

inline DosTable dos_estimate(const std::vector<std::vector<double>>& bands, double omega_min,
                             double omega_max, int n_bins, double smearing) {
    if (n_bins < 2) throw MaxrayError("dos_estimate: need n_bins >= 2");
    DosTable t;
    t.omega.resize(n_bins);
    t.density.assign(n_bins, 0.0);
    double dw = (omega_max - omega_min) / (n_bins - 1);
    if (smearing < dw)
        smearing = dw;  // grid too coarse for requested smearing; widen and proceed
    for (int i = 0; i < n_bins; ++i) t.omega[i] = omega_min + i * dw;
    const double norm = 1.0 / (std::sqrt(two_pi) * smearing);
    for (const auto& band : bands) {
        double wk = 1.0 / static_cast<double>(band.size());
        for (double w : band)
            for (int i = 0; i < n_bins; ++i) {
                double z = (t.omega[i] - w) / smearing;
                t.density[i] += wk * norm * std::exp(-0.5 * z * z);
            }
    }
    return t;
}

// Self-convergence gate: relative band change when the cutoff grows by
// `factor` (default 1.5), maximized over the supplied k list and bands.
inline double band_self_convergence(const MaterialWeights& weights, const LatticeSpec& lat,
                                    double gmax, double factor, const std::vector<Vec3>& ks,
                                    const std::vector<int>& bands) {
    PlaneWaveBasis b1 = planewave_set(lat, gmax);
    PlaneWaveBasis b2 = planewave_set(lat, gmax * factor);
    FiberAssembler f1(weights, b1), f2(weights, b2);
    std::vector<double> worst_arr(ks.size(), 0.0);
    parallel_for(ks.size(), [&](std::size_t i) {
        VecX w1 = solve_fiber_values(f1, ks[i]);
        VecX w2 = solve_fiber_values(f2, ks[i]);
        double worst = 0.0;
        for (int n : bands) {
            double a = w1[positive_band_index(b1.size(), n)];
            double b = w2[positive_band_index(b2.size(), n)];
            worst = std::max(worst, std::abs(a - b) / std::max(std::abs(b), 1e-12));
        }
        worst_arr[i] = worst;
    });
    double worst = 0.0;
    for (double w : worst_arr) worst = std::max(worst, w);
    return worst;
}

}  // namespace maxray
