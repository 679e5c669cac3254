// core.hpp — shared aliases, small numeric helpers, deterministic parallel map.
//
// Unit conventions used throughout the library: the lattice constant is 1,
// the speed of light is 1, frequencies carry units of 2π·c/a.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace maxray {

using cplx = std::complex<double>;
using Vec3 = Eigen::Vector3d;
using Vec3c = Eigen::Vector3cd;
using Mat3c = Eigen::Matrix3cd;
using Mat6c = Eigen::Matrix<cplx, 6, 6>;
using Vec6c = Eigen::Matrix<cplx, 6, 1>;
using VecXc = Eigen::VectorXcd;
using MatXc = Eigen::MatrixXcd;
using VecX = Eigen::VectorXd;

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double two_pi = 2.0 * pi;
inline constexpr cplx iu{0.0, 1.0};

// 3x3 cross-product matrix, v^x w = v x w.
inline Eigen::Matrix3d cross_matrix(const Vec3& v) {
    Eigen::Matrix3d m;
    m << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
        -v.y(), v.x(), 0.0;
    return m;
}

inline double wrap_periodic(double x, double period) {
    double y = std::fmod(x, period);
    if (y < 0.0) y += period;
    return y;
}

// Wraps x into [-period/2, period/2).
inline double wrap_centered(double x, double period) {
    double y = wrap_periodic(x + 0.5 * period, period);
    return y - 0.5 * period;
}

inline bool nearly_equal(double a, double b, double tol) {
    return std::abs(a - b) <= tol;
}

class MaxrayError : public std::runtime_error {
public:
    explicit MaxrayError(const std::string& what) : std::runtime_error(what) {}
};

// Global worker cap, set once by the CLI --threads flag (0 = hardware).
inline std::atomic<int>& thread_cap() {
    static std::atomic<int> cap{0};
    return cap;
}

inline int effective_threads(std::size_t n_items) {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    int cap = thread_cap().load();
    if (cap > 0) hw = std::min(hw, cap);
    return static_cast<int>(std::min<std::size_t>(hw, std::max<std::size_t>(n_items, 1)));
}

// Deterministic parallel map: fn(i) for i in [0,n). Output ordering is the
// caller's responsibility (workers write to disjoint slots).
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    int nt = effective_threads(n);
    if (nt <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::mutex err_mtx;
    pool.reserve(static_cast<std::size_t>(nt));
    for (int t = 0; t < nt; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mtx);
                    if (!err) err = std::current_exception();
                    next.store(n);
                    break;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

// Least-squares slope of log(e) vs log(x); pairs with nonpositive entries are
// rejected by callers beforehand.
struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double residual = 0.0;  // rms of log-residuals
    int n_used = 0;
};

inline SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw MaxrayError("fit_loglog: need at least two pairs");
    const int n = static_cast<int>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0))
            throw MaxrayError("fit_loglog: nonpositive data");
        double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly;
    }
    double det = n * sxx - sx * sx;
    if (std::abs(det) < 1e-300) throw MaxrayError("fit_loglog: degenerate abscissae");
    SlopeFit f;
    f.slope = (n * sxy - sx * sy) / det;
    f.intercept = (sy - f.slope * sx) / n;
    double ss = 0;
    for (int i = 0; i < n; ++i) {
        double r = std::log(y[i]) - (f.intercept + f.slope * std::log(x[i]));
        ss += r * r;
    }
    f.residual = std::sqrt(ss / n);
    f.n_used = n;
    return f;
}

using Rng = std::mt19937_64;

inline cplx random_unit_phase(Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, two_pi);
    return std::exp(iu * u(rng));
}

inline VecXc random_complex_vector(Rng& rng, Eigen::Index n) {
    std::normal_distribution<double> g(0.0, 1.0);
    VecXc v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = cplx(g(rng), g(rng));
    return v;
}

}  // namespace maxray
