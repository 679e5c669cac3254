// splines.hpp — uniform-grid cubic splines, 1D and tensor-product 2D, with
// periodic or natural ends. Node-exact; C2 inside, C1 across the periodic wrap.

#pragma once

#include <vector>

#include "maxray/core.hpp"

namespace maxray {

namespace detail {

// Second derivatives of the interpolating cubic spline on a uniform grid.
// Periodic: cyclic tridiagonal (Sherman-Morrison on the Thomas solve).
// Natural: m_0 = m_{n-1} = 0.
template <typename T>
std::vector<T> spline_moments(const std::vector<T>& y, double h, bool periodic) {
    const int n = static_cast<int>(y.size());
    std::vector<T> m(n, T(0));
    if (n < 3) return m;
    const double inv_h2 = 1.0 / (h * h);

    auto rhs_at = [&](int i) {
        int im = (i - 1 + n) % n, ip = (i + 1) % n;
        return T(6.0 * inv_h2) * (y[im] - 2.0 * y[i] + y[ip]);
    };

    auto thomas = [](std::vector<double>& diag, std::vector<T>& rhs) {
        const int k = static_cast<int>(rhs.size());
        std::vector<double> c(k, 0.0);
        c[0] = 1.0 / diag[0];
        rhs[0] = rhs[0] * c[0];
        for (int i = 1; i < k; ++i) {
            double denom = diag[i] - c[i - 1];
            c[i] = 1.0 / denom;
            rhs[i] = (rhs[i] - rhs[i - 1]) * (1.0 / denom);
        }
        for (int i = k - 2; i >= 0; --i) rhs[i] = rhs[i] - rhs[i + 1] * (c[i] * 1.0);
        // note: off-diagonals are exactly 1, absorbed above
    };

    if (!periodic) {
        // interior unknowns m_1..m_{n-2}
        int k = n - 2;
        if (k <= 0) return m;
        std::vector<double> diag(k, 4.0);
        std::vector<T> rhs(k);
        for (int i = 0; i < k; ++i) rhs[i] = rhs_at(i + 1);
        thomas(diag, rhs);
        for (int i = 0; i < k; ++i) m[i + 1] = rhs[i];
        return m;
    }

    // Cyclic system: (4 on diagonal, 1 on both off-diagonals, corners 1).
    // Sherman-Morrison with u = (gamma,0,...,0,1), v = (1,0,...,0,gamma... )
    // use the standard gamma = -4 variant.
    const double gamma = -4.0;
    std::vector<double> diag(n, 4.0);
    diag[0] -= gamma;
    diag[n - 1] -= 1.0 / gamma;
    std::vector<T> rhs(n), u(n, T(0));
    for (int i = 0; i < n; ++i) rhs[i] = rhs_at(i);
    u[0] = T(gamma);
    u[n - 1] = T(1.0);

    auto solve_mod = [&](std::vector<T> b) {
        // tridiagonal with modified diagonal, off-diagonals 1
        std::vector<double> c(n);
        std::vector<T> x = std::move(b);
        c[0] = 1.0 / diag[0];
        x[0] = x[0] * c[0];
        for (int i = 1; i < n; ++i) {
            double denom = diag[i] - c[i - 1];
            c[i] = 1.0 / denom;
            x[i] = (x[i] - x[i - 1]) * (1.0 / denom);
        }
        for (int i = n - 2; i >= 0; --i) x[i] = x[i] - x[i + 1] * c[i];
        return x;
    };

    std::vector<T> z = solve_mod(rhs);
    std::vector<T> q = solve_mod(u);
    // v.x = x_0 + x_{n-1}/gamma
    T vz = z[0] + z[n - 1] * (1.0 / gamma);
    T vq = q[0] + q[n - 1] * (1.0 / gamma);
    T factor = vz / (T(1.0) + vq);
    for (int i = 0; i < n; ++i) m[i] = z[i] - factor * q[i];
    return m;
}

template <typename T>
struct Piece {
    T value;
    T deriv;
};

// Evaluate the cubic piece with node values (ya,yb) and moments (ma,mb),
// t in [0,1], spacing h.
template <typename T>
Piece<T> eval_piece(T ya, T yb, T ma, T mb, double t, double h) {
    double s = 1.0 - t;
    double h2_6 = h * h / 6.0;
    Piece<T> p;
    p.value = ya * s + yb * t + T(h2_6) * (ma * (s * s * s - s) + mb * (t * t * t - t));
    p.deriv = (yb - ya) * (1.0 / h) +
              T(h / 6.0) * (ma * (-3.0 * s * s + 1.0) + mb * (3.0 * t * t - 1.0));
    return p;
}

}  // namespace detail

// 1D cubic spline on a uniform grid x_i = x0 + i*h, i = 0..n-1.
// Periodic splines treat y_n = y_0 (the value at x0 + n*h).
template <typename T>
class Spline1 {
public:
    Spline1() = default;
    Spline1(std::vector<T> values, double x0, double h, bool periodic)
        : y_(std::move(values)), x0_(x0), h_(h), periodic_(periodic) {
        if (y_.size() < 2) throw MaxrayError("Spline1: need >= 2 nodes");
        m_ = detail::spline_moments(y_, h_, periodic_);
    }

    T value(double x) const { return locate(x).value; }
    T deriv(double x) const { return locate(x).deriv; }
    detail::Piece<T> value_and_deriv(double x) const { return locate(x); }

    int size() const { return static_cast<int>(y_.size()); }
    double x0() const { return x0_; }
    double h() const { return h_; }
    bool periodic() const { return periodic_; }

private:
    detail::Piece<T> locate(double x) const {
        const int n = static_cast<int>(y_.size());
        double u = (x - x0_) / h_;
        int i;
        double t;
        if (periodic_) {
            u = wrap_periodic(u, static_cast<double>(n));
            i = static_cast<int>(std::floor(u));
            if (i >= n) i = n - 1;
            t = u - i;
            int ip = (i + 1) % n;
            return detail::eval_piece(y_[i], y_[ip], m_[i], m_[ip], t, h_);
        }
        i = static_cast<int>(std::floor(u));
        i = std::clamp(i, 0, n - 2);
        t = u - i;
        return detail::eval_piece(y_[i], y_[i + 1], m_[i], m_[i + 1], t, h_);
    }

    std::vector<T> y_;
    std::vector<T> m_;
    double x0_ = 0.0, h_ = 1.0;
    bool periodic_ = true;
};

// Tensor-product cubic spline on a uniform n1 x n2 grid (row-major, axis 1
// slowest). Stores the four moment tables (f, f_11, f_22, f_1122) so a point
// evaluation touches only the surrounding cell.
template <typename T>
class Spline2 {
public:
    Spline2() = default;
    Spline2(std::vector<T> values, int n1, int n2, Vec3 /*unused*/) = delete;

    Spline2(std::vector<T> values, int n1, int n2, double x0_1, double x0_2, double h1, double h2,
            bool periodic1, bool periodic2)
        : f_(std::move(values)), n1_(n1), n2_(n2), x01_(x0_1), x02_(x0_2), h1_(h1), h2_(h2),
          per1_(periodic1), per2_(periodic2) {
        if (static_cast<int>(f_.size()) != n1_ * n2_) throw MaxrayError("Spline2: size mismatch");
        build();
    }

    T value(double x1, double x2) const {
        T v, d1, d2;
        eval(x1, x2, v, &d1, &d2, false);
        return v;
    }

    void value_and_grad(double x1, double x2, T& v, T& d1, T& d2) const {
        eval(x1, x2, v, &d1, &d2, true);
    }

private:
    void build() {
        f11_.assign(f_.size(), T(0));
        f22_.assign(f_.size(), T(0));
        f1122_.assign(f_.size(), T(0));
        std::vector<T> col(n1_), row(n2_);
        // second derivatives along axis 2 (contiguous rows)
        for (int i = 0; i < n1_; ++i) {
            for (int j = 0; j < n2_; ++j) row[j] = f_[idx(i, j)];
            auto m = detail::spline_moments(row, h2_, per2_);
            for (int j = 0; j < n2_; ++j) f22_[idx(i, j)] = m[j];
        }
        // along axis 1
        for (int j = 0; j < n2_; ++j) {
            for (int i = 0; i < n1_; ++i) col[i] = f_[idx(i, j)];
            auto m = detail::spline_moments(col, h1_, per1_);
            for (int i = 0; i < n1_; ++i) f11_[idx(i, j)] = m[i];
        }
        // cross moments: axis-2 spline of the f11 table
        for (int i = 0; i < n1_; ++i) {
            for (int j = 0; j < n2_; ++j) row[j] = f11_[idx(i, j)];
            auto m = detail::spline_moments(row, h2_, per2_);
            for (int j = 0; j < n2_; ++j) f1122_[idx(i, j)] = m[j];
        }
    }

    int idx(int i, int j) const { return i * n2_ + j; }

    void bracket(double x, double x0, double h, int n, bool per, int& i, int& ip,
                 double& t) const {
        double u = (x - x0) / h;
        if (per) {
            u = wrap_periodic(u, static_cast<double>(n));
            i = static_cast<int>(std::floor(u));
            if (i >= n) i = n - 1;
            t = u - i;
            ip = (i + 1) % n;
        } else {
            i = std::clamp(static_cast<int>(std::floor(u)), 0, n - 2);
            t = u - i;
            ip = i + 1;
        }
    }

    void eval(double x1, double x2, T& v, T* d1, T* d2, bool want_grad) const {
        int i, ip, j, jp;
        double t1, t2;
        bracket(x1, x01_, h1_, n1_, per1_, i, ip, t1);
        bracket(x2, x02_, h2_, n2_, per2_, j, jp, t2);

        // collapse axis 2 first: y-interps of f and f11 at the two x1-nodes
        auto fa = detail::eval_piece(f_[idx(i, j)], f_[idx(i, jp)], f22_[idx(i, j)],
                                     f22_[idx(i, jp)], t2, h2_);
        auto fb = detail::eval_piece(f_[idx(ip, j)], f_[idx(ip, jp)], f22_[idx(ip, j)],
                                     f22_[idx(ip, jp)], t2, h2_);
        auto ma = detail::eval_piece(f11_[idx(i, j)], f11_[idx(i, jp)], f1122_[idx(i, j)],
                                     f1122_[idx(i, jp)], t2, h2_);
        auto mb = detail::eval_piece(f11_[idx(ip, j)], f11_[idx(ip, jp)], f1122_[idx(ip, j)],
                                     f1122_[idx(ip, jp)], t2, h2_);

        auto final_v = detail::eval_piece(fa.value, fb.value, ma.value, mb.value, t1, h1_);
        v = final_v.value;
        if (!want_grad) return;
        *d1 = final_v.deriv;
        auto final_d2 = detail::eval_piece(fa.deriv, fb.deriv, ma.deriv, mb.deriv, t1, h1_);
        *d2 = final_d2.value;
    }

    std::vector<T> f_, f11_, f22_, f1122_;
    int n1_ = 0, n2_ = 0;
    double x01_ = 0, x02_ = 0, h1_ = 1, h2_ = 1;
    bool per1_ = true, per2_ = true;
};

}  // namespace maxray
