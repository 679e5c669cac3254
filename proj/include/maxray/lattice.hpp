// lattice.hpp — Bravais/reciprocal lattice bookkeeping, plane-wave index sets,
// Brillouin-zone grids and unit-cell FFTs.

#pragma once

#include <array>
#include <map>
#include <vector>

#include "maxray/core.hpp"
#include "maxray/fft.hpp"

namespace maxray {

struct LatticeSpec {
    int dim = 3;                 // 2 or 3; d=2 keeps a_3 = e_3 with k_3 = 0
    Eigen::Matrix3d a;           // primitive vectors as columns
    Eigen::Matrix3d b;           // reciprocal vectors as columns, b^T a = 2π id
    double cell_volume = 0.0;

    Vec3 a_col(int i) const { return a.col(i); }
    Vec3 b_col(int i) const { return b.col(i); }

    // max_ij |b_i . a_j - 2π δ_ij|
    double duality_defect() const {
        Eigen::Matrix3d d = b.transpose() * a - two_pi * Eigen::Matrix3d::Identity();
        return d.cwiseAbs().maxCoeff();
    }

    // Cartesian -> reduced coordinates (units of b_i).
    Vec3 reduced_k(const Vec3& k) const { return a.transpose() * k / two_pi; }
    Vec3 cartesian_k(const Vec3& reduced) const { return b * reduced; }

    // Wraps k into the fundamental cell [0,1)^d in reduced coordinates.
    Vec3 wrap_to_bz(const Vec3& k) const {
        Vec3 red = reduced_k(k);
        for (int i = 0; i < dim; ++i) red[i] = wrap_periodic(red[i], 1.0);
        return cartesian_k(red);
    }
};

inline LatticeSpec build_lattice(int dim, const std::vector<Vec3>& primitive) {
    if (dim != 2 && dim != 3) throw MaxrayError("build_lattice: dim must be 2 or 3");
    if (static_cast<int>(primitive.size()) != dim)
        throw MaxrayError("build_lattice: need dim primitive vectors");
    LatticeSpec lat;
    lat.dim = dim;
    lat.a.setIdentity();
    for (int i = 0; i < dim; ++i) lat.a.col(i) = primitive[i];
    if (dim == 2) {
        for (int i = 0; i < 2; ++i)
            if (std::abs(primitive[i].z()) > 0.0)
                throw MaxrayError("build_lattice: d=2 primitive vectors must be in-plane");
        lat.a.col(2) = Vec3(0, 0, 1);
    }
    double det = lat.a.determinant();
    if (std::abs(det) < 1e-12) throw MaxrayError("degenerate lattice");
    lat.b = two_pi * lat.a.inverse().transpose();
    lat.cell_volume = std::abs(det);
    if (lat.duality_defect() > 1e-12) throw MaxrayError("build_lattice: duality violated");
    return lat;
}

inline int signed_harmonic(int m, int size) { return m > size / 2 ? m - size : m; }
inline int dft_index_of_harmonic(int h, int size) { return h >= 0 ? h : h + size; }

struct PlaneWaveBasis {
    LatticeSpec lattice;
    double gmax = 0.0;
    std::vector<Vec3> g;                        // Cartesian reciprocal vectors
    std::vector<std::array<int, 3>> g_int;      // integer coordinates w.r.t. b_i
    // wrapped mode: the basis is the full DFT window of a per-cell sample
    // grid and convolution indices wrap, making the fiber the exact Bloch
    // block of the collocation (supercell) operator
    bool wrapped = false;
    std::array<int, 3> window{0, 0, 0};

    int size() const { return static_cast<int>(g.size()); }
    // 6 field components per plane-wave mode
    int fiber_dim() const { return 6 * size(); }

    int find(const std::array<int, 3>& m) const {
        auto it = lookup_.find(m);
        return it == lookup_.end() ? -1 : it->second;
    }

    std::map<std::array<int, 3>, int> lookup_;
};

inline PlaneWaveBasis planewave_set(const LatticeSpec& lat, double gmax) {
    if (gmax < 0.0) throw MaxrayError("planewave_set: gmax must be >= 0");
    PlaneWaveBasis basis;
    basis.lattice = lat;
    basis.gmax = gmax;

    std::array<int, 3> mmax{0, 0, 0};
    for (int i = 0; i < lat.dim; ++i)
        mmax[i] = static_cast<int>(std::floor(gmax * lat.a_col(i).norm() / two_pi + 1e-9));

    std::vector<std::pair<Vec3, std::array<int, 3>>> entries;
    for (int m1 = -mmax[0]; m1 <= mmax[0]; ++m1)
        for (int m2 = -mmax[1]; m2 <= mmax[1]; ++m2)
            for (int m3 = -mmax[2]; m3 <= mmax[2]; ++m3) {
                Vec3 gv = m1 * lat.b_col(0) + m2 * lat.b_col(1) + m3 * lat.b_col(2);
                if (gv.norm() <= gmax * (1.0 + 1e-12))
                    entries.push_back({gv, {m1, m2, m3}});
            }
    std::sort(entries.begin(), entries.end(), [](const auto& x, const auto& y) {
        double nx = x.first.norm(), ny = y.first.norm();
        if (std::abs(nx - ny) > 1e-10 * (1.0 + nx + ny)) return nx < ny;
        return x.second < y.second;
    });
    for (int i = 0; i < static_cast<int>(entries.size()); ++i) {
        basis.g.push_back(entries[i].first);
        basis.g_int.push_back(entries[i].second);
        basis.lookup_[entries[i].second] = i;
    }
    return basis;
}

// Full DFT window of an n-per-cell sample grid, in DFT index order (harmonic
// h = signed_harmonic(idx)). Pairs with wrapped-convolution fiber assembly.
inline PlaneWaveBasis planewave_window(const LatticeSpec& lat, std::array<int, 3> n) {
    if (lat.dim == 2) n[2] = 1;
    PlaneWaveBasis basis;
    basis.lattice = lat;
    basis.wrapped = true;
    basis.window = n;
    for (int i1 = 0; i1 < n[0]; ++i1)
        for (int i2 = 0; i2 < n[1]; ++i2)
            for (int i3 = 0; i3 < n[2]; ++i3) {
                std::array<int, 3> m{signed_harmonic(i1, n[0]), signed_harmonic(i2, n[1]),
                                     signed_harmonic(i3, n[2])};
                Vec3 gv = m[0] * lat.b_col(0) + m[1] * lat.b_col(1) + m[2] * lat.b_col(2);
                basis.lookup_[m] = static_cast<int>(basis.g.size());
                basis.g.push_back(gv);
                basis.g_int.push_back(m);
                basis.gmax = std::max(basis.gmax, gv.norm());
            }
    return basis;
}

struct KGrid {
    LatticeSpec lattice;
    std::array<int, 3> n{1, 1, 1};
    std::vector<Vec3> k;  // Cartesian, row-major over (n1, n2, n3)

    int size() const { return static_cast<int>(k.size()); }
    int index(int i1, int i2, int i3) const { return (i1 * n[1] + i2) * n[2] + i3; }
    std::array<int, 3> coords(int idx) const {
        int i3 = idx % n[2];
        int i2 = (idx / n[2]) % n[1];
        int i1 = idx / (n[1] * n[2]);
        return {i1, i2, i3};
    }
    // periodic wrap: neighbor along axis, step +-1
    int neighbor(int idx, int axis, int step) const {
        auto c = coords(idx);
        c[axis] = (c[axis] + step % n[axis] + n[axis]) % n[axis];
        return index(c[0], c[1], c[2]);
    }
    Vec3 spacing() const {
        Vec3 h;
        for (int i = 0; i < 3; ++i) h[i] = 1.0 / n[i];
        return h;
    }
};

inline KGrid monkhorst_grid(const LatticeSpec& lat, std::array<int, 3> n) {
    for (int i = 0; i < lat.dim; ++i)
        if (n[i] < 1) throw MaxrayError("monkhorst_grid: subdivisions must be >= 1");
    if (lat.dim == 2) n[2] = 1;
    KGrid grid;
    grid.lattice = lat;
    grid.n = n;
    grid.k.reserve(static_cast<std::size_t>(n[0]) * n[1] * n[2]);
    for (int i1 = 0; i1 < n[0]; ++i1)
        for (int i2 = 0; i2 < n[1]; ++i2)
            for (int i3 = 0; i3 < n[2]; ++i3) {
                Vec3 red(static_cast<double>(i1) / n[0], static_cast<double>(i2) / n[1],
                         static_cast<double>(i3) / n[2]);
                grid.k.push_back(lat.cartesian_k(red));
            }
    return grid;
}

// Unit-cell DFTs. Forward includes 1/N so the coefficient at G = 0 is the mean;
// index m on each axis maps to the signed harmonic m > S/2 ? m - S : m.
inline void cell_fft_forward(std::vector<cplx>& samples, const std::vector<int>& dims) {
    for (const auto& z : samples)
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
            throw MaxrayError("cell_fft: non-finite samples");
    Fft::forward(samples, dims);
    double n = 1.0;
    for (int d : dims) n *= d;
    for (auto& z : samples) z /= n;
}

inline void cell_fft_inverse(std::vector<cplx>& coeffs, const std::vector<int>& dims) {
    for (const auto& z : coeffs)
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
            throw MaxrayError("cell_fft: non-finite coefficients");
    Fft::inverse(coeffs, dims);
    double n = 1.0;
    for (int d : dims) n *= d;
    for (auto& z : coeffs) z *= n;
}


}  // namespace maxray
