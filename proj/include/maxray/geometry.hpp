// geometry.hpp — geometric band data entering the first-order ray equations:
// gauge-invariant Berry curvature and Chern number (plaquette link fluxes),
// Hellmann-Feynman group velocity, complex Poynting vector, reduced resolvent,
// the superadiabatic correction π₁ and the corrected observable symbol f_ro.
//
// All fiber inner products are B-weighted, <u,v>_B = u† B v, except the
// Poynting integrand which is unweighted by definition. k-derivatives of
// eigenvectors enter only through the perpendicular part
//   π₀^⊥ ∂_k φ = -R⊥ (∂_k M) φ,
// so every output is gauge-invariant.

#pragma once

#include <vector>

#include "maxray/bloch.hpp"

namespace maxray {

// Per-k data for one isolated band, including the full eigendecomposition
// needed for spectral resolvent sums.
struct FiberBandData {
    Vec3 k;
    int band = 0;
    double omega = 0.0;
    VecXc phi;                       // B-normalized band eigenvector
    VecX omega_all;                  // all fiber eigenvalues
    MatXc phi_all;                   // all eigenvectors, B-orthonormal columns
    std::array<VecXc, 3> dphi_perp;  // π₀^⊥ ∂_{k_j} φ
    Vec3 velocity = Vec3::Zero();
    Vec3 poynting = Vec3::Zero();

    int eigen_index() const { return positive_band_index(static_cast<int>(phi.size()) / 6, band); }
};

inline Vec3 poynting_vector(const VecXc& phi) {
    const int n_modes = static_cast<int>(phi.size()) / 6;
    Vec3 p = Vec3::Zero();
    for (int g = 0; g < n_modes; ++g) {
        Vec3c e = phi.segment<3>(6 * g).conjugate();
        Vec3c h = phi.segment<3>(6 * g + 3);
        // explicit components: Eigen's complex cross() conjugates its operands
        Vec3c cr(e.y() * h.z() - e.z() * h.y(), e.z() * h.x() - e.x() * h.z(),
                 e.x() * h.y() - e.y() * h.x());
        p += cr.imag();
    }
    return p;
}

inline FiberBandData fiber_band_data(const FiberAssembler& fa, const Vec3& k, int band,
                                     double degeneracy_tol = 1e-9) {
    FiberEigens eig = solve_fiber(fa, k);
    FiberBandData d;
    d.k = k;
    d.band = band;
    const int idx = positive_band_index(fa.basis().size(), band);
    d.omega = eig.omega[idx];
    if ((idx > 0 && std::abs(eig.omega[idx] - eig.omega[idx - 1]) < degeneracy_tol) ||
        (idx + 1 < eig.omega.size() &&
         std::abs(eig.omega[idx + 1] - eig.omega[idx]) < degeneracy_tol))
        throw MaxrayError("fiber_band_data: band degenerate at requested k");
    d.phi = eig.phi.col(idx);
    d.omega_all = std::move(eig.omega);
    d.phi_all = std::move(eig.phi);

    for (int j = 0; j < 3; ++j) {
        MatXc dr = fa.curl_matrix_derivative(j);
        VecXc drphi = dr * d.phi;
        d.velocity[j] = std::real(d.phi.dot(drphi));  // <φ, ∂_j R φ>, B-normalized
        // π₀^⊥ ∂φ = -Σ_{m≠n} φ_m <φ_m, ∂M φ>_B / (ω_m - ω); <φ_m, B^{-1}∂R φ>_B = φ_m† ∂R φ
        VecXc coef = d.phi_all.adjoint() * drphi;
        coef[idx] = 0.0;
        for (int m = 0; m < coef.size(); ++m)
            if (m != idx) coef[m] /= -(d.omega_all[m] - d.omega);
        d.dphi_perp[j] = d.phi_all * coef;
    }
    d.poynting = poynting_vector(d.phi);
    return d;
}

namespace detail {
inline MatXc dyad_b(const VecXc& u, const VecXc& v, const MatXc& b) {
    // |u><v|_B : x ↦ u <v,x>_B = u v†B x
    return u * (v.adjoint() * b);
}
}  // namespace detail

// rank-1 band projection π₀ = |φ><φ|_B as a fiber matrix
inline MatXc band_projection(const FiberAssembler& fa, const VecXc& phi) {
    return detail::dyad_b(phi, phi, fa.b_matrix());
}

// Reduced resolvent applied spectrally: R⊥_ω v = Σ_{m≠n} φ_m <φ_m,v>_B/(ω_m-ω).
inline VecXc reduced_resolvent_apply(const FiberAssembler& fa, const FiberBandData& d,
                                     const VecXc& v, double degeneracy_tol = 1e-9) {
    const int idx = d.eigen_index();
    VecXc coef = d.phi_all.adjoint() * (fa.b_matrix() * v);
    for (int m = 0; m < coef.size(); ++m) {
        if (m == idx) {
            coef[m] = 0.0;
            continue;
        }
        double gap = d.omega_all[m] - d.omega;
        if (std::abs(gap) < degeneracy_tol)
            throw MaxrayError("reduced_resolvent_apply: near-degeneracy at requested k");
        coef[m] /= gap;
    }
    return d.phi_all * coef;
}

// π₁(r,k) = (-(i/2) ∇_r ln(τ_ε/τ_μ)·|φ><Σφ| + i ∇_r ln τ·|φ><∂_kφ|(M+ω)) R⊥ + adjoint
inline MatXc pi1_matrix(const FiberAssembler& fa, const FiberBandData& d,
                        const ModulationProfile& mod, const Vec3& r) {
    const int idx = d.eigen_index();
    const int dim = static_cast<int>(d.phi.size());
    Vec3 g = mod.grad_ln_ratio(r);
    Vec3 h = mod.grad_ln_tau(r);

    // coefficients β_m of the bra side in the eigenbasis
    VecXc beta = VecXc::Zero(d.omega_all.size());
    const MatXc& b = fa.b_matrix();
    for (int j = 0; j < 3; ++j) {
        if (g[j] != 0.0) {
            VecXc sphi = fa.sigma_matrix(j) * d.phi;
            VecXc ov = d.phi_all.adjoint() * (b * sphi);  // <φ_m, Σφ>_B
            for (int m = 0; m < beta.size(); ++m)
                if (m != idx)
                    beta[m] += (-0.5 * iu) * g[j] * std::conj(ov[m]) /
                               (d.omega_all[m] - d.omega);
        }
        if (h[j] != 0.0) {
            VecXc ov = d.phi_all.adjoint() * (b * d.dphi_perp[j]);  // <φ_m, ∂φ_⊥>_B
            for (int m = 0; m < beta.size(); ++m)
                if (m != idx)
                    beta[m] += iu * h[j] * std::conj(ov[m]) * (d.omega_all[m] + d.omega) /
                               (d.omega_all[m] - d.omega);
        }
    }
    beta[idx] = 0.0;
    VecXc w = d.phi_all * beta.conjugate();
    MatXc half = detail::dyad_b(d.phi, w, b);
    MatXc p1 = half + detail::dyad_b(w, d.phi, b);
    (void)dim;
    return p1;
}

// Fiber observable evaluator output: value and slow-variable gradient at (r,k).
struct FiberObservable {
    MatXc value;
    std::array<MatXc, 3> grad_r;
    bool has_grad = false;
};

// f_ro(r,k) truncated at first order (general, not necessarily selfadjoint f):
//   <φ,fφ> π₀
//   + λ ( <φ,[f,π₁]_+ φ> - (i/2) <φ,[∇_kπ₀, ∇_rf] φ> ) π₀
//   + λ ( <φ,fφ> π₁ - (i/2) <φ,∇_rf φ>·[∇_kπ₀, π₀] )
inline MatXc fro_matrix(const FiberAssembler& fa, const FiberBandData& d,
                        const ModulationProfile& mod, const Vec3& r, const FiberObservable& f,
                        double lambda) {
    const MatXc& b = fa.b_matrix();
    MatXc pi0 = detail::dyad_b(d.phi, d.phi, b);
    auto expval = [&](const MatXc& op) -> cplx { return d.phi.dot(b * (op * d.phi)); };

    cplx f_exp = expval(f.value);
    MatXc out = f_exp * pi0;
    if (lambda == 0.0) return out;

    MatXc pi1 = pi1_matrix(fa, d, mod, r);
    cplx s1 = expval(f.value * pi1 + pi1 * f.value);

    cplx s2 = 0.0;
    MatXc boundary = MatXc::Zero(pi0.rows(), pi0.cols());
    if (f.has_grad) {
        for (int j = 0; j < 3; ++j) {
            if (f.grad_r[j].size() == 0) continue;
            MatXc dpi0 = detail::dyad_b(d.dphi_perp[j], d.phi, b) +
                         detail::dyad_b(d.phi, d.dphi_perp[j], b);
            s2 += expval(dpi0 * f.grad_r[j] - f.grad_r[j] * dpi0);
            MatXc comm = detail::dyad_b(d.dphi_perp[j], d.phi, b) -
                         detail::dyad_b(d.phi, d.dphi_perp[j], b);  // [∂_jπ₀, π₀]
            boundary += expval(f.grad_r[j]) * comm;
        }
    }
    out += lambda * ((s1 - 0.5 * iu * s2) * pi0 + f_exp * pi1 - 0.5 * iu * boundary);
    return out;
}

// Dispersion Ω = Ω₀ + λΩ₁ = τ²ω - λ τ² P·∇_r ln(τ_ε/τ_μ), evaluated from
// per-k band data (the splined version lives in the ray-dynamics model).
inline double dispersion_value(const FiberBandData& d, const ModulationProfile& mod, const Vec3& r,
                               double lambda) {
    double t2 = mod.tau_sq(r);
    return t2 * d.omega - lambda * t2 * d.poynting.dot(mod.grad_ln_ratio(r));
}

inline double dispersion_omega1(const FiberBandData& d, const ModulationProfile& mod,
                                const Vec3& r) {
    return -mod.tau_sq(r) * d.poynting.dot(mod.grad_ln_ratio(r));
}

// B-weighted hermiticity defect ‖BA - (BA)†‖_max (A selfadjoint in <·,·>_B
// iff BA is hermitian).
inline double hermiticity_defect_b(const MatXc& a, const MatXc& b) {
    MatXc ba = b * a;
    return (ba - ba.adjoint().eval()).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Grid-level geometry: FHS plaquette curvature and Chern number.

struct BandGeometry {
    KGrid grid;
    int band = 0;
    std::vector<double> omega;
    std::vector<Vec3> velocity;
    std::vector<Vec3> poynting;
    MatXc phi;                        // fiber_dim x n_k, arbitrary gauge per k
    std::vector<double> xi12;         // plaquette-centered curvature (d=2)
    double chern = 0.0;               // exact integer after rounding
    double chern_raw = 0.0;           // FHS sum before rounding
    double min_link_modulus = 1.0;
};

struct FhsResult {
    std::vector<double> xi12;   // plaquette-centered, row-major (n1 x n2)
    double chern = 0.0;
    double chern_raw = 0.0;
    double min_link_modulus = 1.0;
};

// Plaquette link fluxes from per-k eigenvectors (columns of `phi` in grid
// order). Gauge phases cancel around each loop; the total flux is 2π times an
// exact integer by construction.
inline FhsResult fhs_curvature(const MatXc& phi, const MatXc& b, const KGrid& grid) {
    const int n1 = grid.n[0], n2 = grid.n[1];
    FhsResult res;
    res.xi12.assign(static_cast<std::size_t>(n1) * n2, 0.0);
    auto link = [&](int ika, int ikb) { return phi.col(ika).dot(b * phi.col(ikb)); };
    Vec3 d1 = grid.lattice.b_col(0) / n1;
    Vec3 d2 = grid.lattice.b_col(1) / n2;
    double area = std::abs(d1.x() * d2.y() - d1.y() * d2.x());
    double total_flux = 0.0;
    for (int i = 0; i < n1; ++i)
        for (int j = 0; j < n2; ++j) {
            int k00 = grid.index(i, j, 0);
            int k10 = grid.index((i + 1) % n1, j, 0);
            int k11 = grid.index((i + 1) % n1, (j + 1) % n2, 0);
            int k01 = grid.index(i, (j + 1) % n2, 0);
            cplx loop = link(k00, k10) * link(k10, k11) * link(k11, k01) * link(k01, k00);
            double mod = std::abs(loop);
            res.min_link_modulus = std::min(res.min_link_modulus, mod);
            if (mod < 1e-12)
                throw MaxrayError("fhs_curvature: vanishing link at plaquette (" +
                                  std::to_string(i) + "," + std::to_string(j) +
                                  "), gap failure symptom");
            double flux = -std::arg(loop);
            res.xi12[static_cast<std::size_t>(i) * n2 + j] = flux / area;
            total_flux += flux;
        }
    res.chern_raw = total_flux / two_pi;
    res.chern = std::round(res.chern_raw);
    if (std::abs(res.chern - res.chern_raw) > 1e-6)
        throw MaxrayError("fhs_curvature: flux sum not integral");
    return res;
}

// Fukui–Hatsugai–Suzuki link-variable curvature on the BZ grid. Links use the
// B-weighted overlaps; each plaquette flux is the principal argument of the
// loop product, so the total flux is 2π times an exact integer.
inline BandGeometry compute_band_geometry(const MaterialWeights& weights,
                                          const PlaneWaveBasis& basis, const KGrid& grid,
                                          int band) {
    if (grid.lattice.dim != 2)
        throw MaxrayError("compute_band_geometry: FHS curvature implemented for d=2");
    FiberAssembler fa(weights, basis);
    const int nk = grid.size();
    BandGeometry geo;
    geo.grid = grid;
    geo.band = band;
    geo.omega.resize(nk);
    geo.velocity.resize(nk);
    geo.poynting.resize(nk);
    geo.phi.resize(basis.fiber_dim(), nk);

    parallel_for(nk, [&](std::size_t ik) {
        FiberBandData d = fiber_band_data(fa, grid.k[ik], band);
        geo.omega[ik] = d.omega;
        geo.velocity[ik] = d.velocity;
        geo.poynting[ik] = d.poynting;
        geo.phi.col(ik) = d.phi;
    });

    FhsResult fhs = fhs_curvature(geo.phi, fa.b_matrix(), grid);
    geo.xi12 = std::move(fhs.xi12);
    geo.chern = fhs.chern;
    geo.chern_raw = fhs.chern_raw;
    geo.min_link_modulus = fhs.min_link_modulus;
    return geo;
}

}  // namespace maxray
