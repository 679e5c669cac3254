// fft.hpp — thin FFTW3 wrapper: cached plans, thread-safe plan creation,
// unnormalized forward / 1/N-normalized inverse c2c transforms up to rank 3.

#pragma once

#include <fftw3.h>

#include <array>
#include <complex>
#include <map>
#include <mutex>
#include <vector>

#include "maxray/core.hpp"

namespace maxray {

class Fft {
public:
    // dims are row-major (slowest axis first); size 1..3.
    static void forward(std::vector<cplx>& data, const std::vector<int>& dims) {
        run(data, dims, FFTW_FORWARD);
    }
    static void inverse(std::vector<cplx>& data, const std::vector<int>& dims) {
        run(data, dims, FFTW_BACKWARD);
        double scale = 1.0 / total(dims);
        for (auto& z : data) z *= scale;
    }

    // Batched transform of `howmany` contiguous interleaved fields:
    // data layout [grid][component], stride = howmany.
    static void forward_batch(std::vector<cplx>& data, const std::vector<int>& dims, int howmany) {
        run_batch(data, dims, howmany, FFTW_FORWARD);
    }
    static void inverse_batch(std::vector<cplx>& data, const std::vector<int>& dims, int howmany) {
        run_batch(data, dims, howmany, FFTW_BACKWARD);
        double scale = 1.0 / total(dims);
        for (auto& z : data) z *= scale;
    }

private:
    static double total(const std::vector<int>& dims) {
        double t = 1;
        for (int d : dims) t *= d;
        return t;
    }

    struct Key {
        std::array<int, 3> n;
        int rank;
        int howmany;
        int sign;
        bool operator<(const Key& o) const {
            if (n != o.n) return n < o.n;
            if (rank != o.rank) return rank < o.rank;
            if (howmany != o.howmany) return howmany < o.howmany;
            return sign < o.sign;
        }
    };

    static fftw_plan get_plan(const Key& key, cplx* buf) {
        static std::map<Key, fftw_plan> cache;
        static std::mutex mtx;
        std::lock_guard<std::mutex> lk(mtx);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        fftw_complex* p = reinterpret_cast<fftw_complex*>(buf);
        fftw_plan plan;
        if (key.howmany == 1) {
            plan = fftw_plan_dft(key.rank, key.n.data(), p, p, key.sign,
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
        } else {
            int n_total = 1;
            for (int r = 0; r < key.rank; ++r) n_total *= key.n[r];
            (void)n_total;
            plan = fftw_plan_many_dft(key.rank, key.n.data(), key.howmany, p, nullptr,
                                      key.howmany, 1, p, nullptr, key.howmany, 1, key.sign,
                                      FFTW_ESTIMATE | FFTW_UNALIGNED);
        }
        if (!plan) throw MaxrayError("fftw plan creation failed");
        cache.emplace(key, plan);
        return plan;
    }

    static void run(std::vector<cplx>& data, const std::vector<int>& dims, int sign) {
        run_batch(data, dims, 1, sign);
    }

    static void run_batch(std::vector<cplx>& data, const std::vector<int>& dims, int howmany,
                          int sign) {
        if (dims.empty() || dims.size() > 3) throw MaxrayError("fft: rank must be 1..3");
        std::size_t expect = static_cast<std::size_t>(total(dims)) * howmany;
        if (data.size() != expect) throw MaxrayError("fft: buffer size mismatch");
        Key key{{1, 1, 1}, static_cast<int>(dims.size()), howmany, sign};
        for (std::size_t i = 0; i < dims.size(); ++i) key.n[i] = dims[i];
        fftw_plan plan = get_plan(key, data.data());
        fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(data.data()),
                         reinterpret_cast<fftw_complex*>(data.data()));
    }
};

}  // namespace maxray
