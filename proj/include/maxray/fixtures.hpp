// fixtures.hpp — the named desk-scale crystals used by tests and the CLI.
//
// Both crystals share the same two-sector design on the square lattice: μ_zz
// rods flatten and gap the in-plane-E bands, while the ε_zz profile (a scaled
// classic rod crystal) opens a gap in the out-of-plane-E sector over the same
// frequency window, so the selected band is isolated in the full 6-component
// spectrum.
//
//  * gyro:  gyroelectric ε⊥ (κ = 9) breaks time reversal; positive band 2 is
//           isolated (pointwise gap ≈ 4.3e-2 rad, min at Γ) with Chern +1.
//  * real:  κ = 0 with anisotropic real ε⊥ = diag(14, 8); band 2 is isolated
//           (gap ≈ 6e-3 rad) and carries Chern 0.
//
// Weights are band-limited to |G| ≤ 2·2π so a spectral supercell at ≥ 6
// samples per cell represents the identical operator.

#pragma once

#include "maxray/materials.hpp"

namespace maxray {

inline constexpr double fixture_material_gmax = 2.0 * two_pi;

inline LatticeSpec fixture_lattice() { return build_lattice(2, {Vec3(1, 0, 0), Vec3(0, 1, 0)}); }

inline MaterialWeights fixture_gyro_weights(std::array<int, 3> dims = {48, 48, 1}) {
    LatticeSpec lat = fixture_lattice();
    return make_gyro_rod_lattice(lat, 0.25, 0.15, 14.0, 9.0, 29.0, 1.0, dims, 15.0, 3.3)
        .band_limited(fixture_material_gmax);
}

inline MaterialWeights fixture_real_weights(std::array<int, 3> dims = {48, 48, 1}) {
    LatticeSpec lat = fixture_lattice();
    return make_gyro_rod_lattice(lat, 0.25, 0.15, 14.0, 0.0, 29.0, 1.0, dims, 12.0, 3.3, 8.0)
        .band_limited(fixture_material_gmax);
}

// conjugate weight set of the gyro fixture (κ -> -κ), for pairing checks
inline MaterialWeights fixture_gyro_conjugate_weights(std::array<int, 3> dims = {48, 48, 1}) {
    LatticeSpec lat = fixture_lattice();
    return make_gyro_rod_lattice(lat, 0.25, 0.15, 14.0, -9.0, 29.0, 1.0, dims, 15.0, 3.3)
        .band_limited(fixture_material_gmax);
}

inline constexpr int fixture_band = 2;
inline constexpr double fixture_basis_gmax = 2.5 * two_pi;
inline constexpr int fixture_gyro_chern = 1;  // pinned by the 96²-grid FHS oracle run

// classic real rod crystal for solver-level tests
inline MaterialWeights fixture_alumina_rods(std::array<int, 3> dims = {32, 32, 1}) {
    return make_rod_lattice(fixture_lattice(), 0.2, 8.9, 1.0, 0.05, dims);
}

}  // namespace maxray
