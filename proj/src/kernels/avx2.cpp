// AVX2 lane. Mirrors the scalar lane's operation order exactly: reductions
// keep four lane accumulators (vector lanes = the scalar lane's four strided
// slots) and combine them as (l0+l2)+(l1+l3); elementwise kernels use separate
// mul/add/sub/sqrt/div instructions, never FMA, so every intermediate rounds
// the same way as the scalar code. Tails run the scalar per-element bodies.
//
// This file is compiled with -mavx2 only on x86-64 (POSTRL_HAVE_AVX2); on
// other targets it still provides avx2_table(), returning null.

#include <cmath>
#include <cstddef>

#include "postrl/kernels.hpp"

#if defined(POSTRL_HAVE_AVX2)

#include <immintrin.h>

namespace postrl::kernels {
namespace {

double dot_impl(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    const std::size_t n4 = n / 4 * 4;
    for (std::size_t i = 0; i < n4; i += 4) {
        const __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_add_pd(acc, prod);
    }
    alignas(32) double lane[4];
    _mm256_store_pd(lane, acc);
    for (std::size_t i = n4; i < n; ++i) lane[i - n4] += a[i] * b[i];
    return (lane[0] + lane[2]) + (lane[1] + lane[3]);
}

double sum_impl(const double* a, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    const std::size_t n4 = n / 4 * 4;
    for (std::size_t i = 0; i < n4; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
    alignas(32) double lane[4];
    _mm256_store_pd(lane, acc);
    for (std::size_t i = n4; i < n; ++i) lane[i - n4] += a[i];
    return (lane[0] + lane[2]) + (lane[1] + lane[3]);
}

double max_impl(const double* a, std::size_t n) {
    __m256d acc = _mm256_set1_pd(a[0]);
    const std::size_t n4 = n / 4 * 4;
    for (std::size_t i = 0; i < n4; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(a + i));
    alignas(32) double lane[4];
    _mm256_store_pd(lane, acc);
    for (std::size_t i = n4; i < n; ++i) {
        const double x = a[i];
        lane[i - n4] = lane[i - n4] > x ? lane[i - n4] : x;
    }
    const double m02 = lane[0] > lane[2] ? lane[0] : lane[2];
    const double m13 = lane[1] > lane[3] ? lane[1] : lane[3];
    return m02 > m13 ? m02 : m13;
}

void axpy_impl(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    const std::size_t n4 = n / 4 * 4;
    for (std::size_t i = 0; i < n4; i += 4) {
        const __m256d t = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), t));
    }
    for (std::size_t i = n4; i < n; ++i) {
        const double t = alpha * x[i];
        y[i] = y[i] + t;
    }
}

void scale_impl(double alpha, double* a, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    const std::size_t n4 = n / 4 * 4;
    for (std::size_t i = 0; i < n4; i += 4)
        _mm256_storeu_pd(a + i, _mm256_mul_pd(va, _mm256_loadu_pd(a + i)));
    for (std::size_t i = n4; i < n; ++i) a[i] = alpha * a[i];
}

void matvec_acc_impl(const double* w, std::size_t rows, std::size_t cols, const double* x,
                     double* y) {
    for (std::size_t r = 0; r < rows; ++r) y[r] += dot_impl(w + r * cols, x, cols);
}

void matvec_t_acc_impl(const double* w, std::size_t rows, std::size_t cols, const double* u,
                       double* y) {
    for (std::size_t r = 0; r < rows; ++r) axpy_impl(u[r], w + r * cols, y, cols);
}

void outer_acc_impl(double alpha, const double* u, std::size_t rows, const double* v,
                    std::size_t cols, double* a) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double t = alpha * u[r];
        axpy_impl(t, v, a + r * cols, cols);
    }
}

void tanh_grad_impl(const double* h, const double* g, double* out, std::size_t n) {
    const __m256d ones = _mm256_set1_pd(1.0);
    const std::size_t n4 = n / 4 * 4;
    for (std::size_t i = 0; i < n4; i += 4) {
        const __m256d vh = _mm256_loadu_pd(h + i);
        const __m256d s = _mm256_mul_pd(vh, vh);
        const __m256d d = _mm256_sub_pd(ones, s);
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(g + i), d));
    }
    for (std::size_t i = n4; i < n; ++i) {
        const double s = h[i] * h[i];
        const double d = 1.0 - s;
        out[i] = g[i] * d;
    }
}

void adam_step_impl(double* p, double* m, double* v, const double* g, std::size_t n, double beta1,
                    double beta2, double eps, double step_scale, double inv_bias1,
                    double inv_bias2) {
    const double omb1 = 1.0 - beta1;
    const double omb2 = 1.0 - beta2;
    const __m256d vb1 = _mm256_set1_pd(beta1);
    const __m256d vomb1 = _mm256_set1_pd(omb1);
    const __m256d vb2 = _mm256_set1_pd(beta2);
    const __m256d vomb2 = _mm256_set1_pd(omb2);
    const __m256d veps = _mm256_set1_pd(eps);
    const __m256d vstep = _mm256_set1_pd(step_scale);
    const __m256d vinv1 = _mm256_set1_pd(inv_bias1);
    const __m256d vinv2 = _mm256_set1_pd(inv_bias2);
    const std::size_t n4 = n / 4 * 4;
    for (std::size_t i = 0; i < n4; i += 4) {
        const __m256d vg = _mm256_loadu_pd(g + i);
        const __m256d vm =
            _mm256_add_pd(_mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(vomb1, vg));
        _mm256_storeu_pd(m + i, vm);
        const __m256d gg = _mm256_mul_pd(vg, vg);
        const __m256d vv =
            _mm256_add_pd(_mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)), _mm256_mul_pd(vomb2, gg));
        _mm256_storeu_pd(v + i, vv);
        const __m256d mhat = _mm256_mul_pd(vm, vinv1);
        const __m256d vhat = _mm256_mul_pd(vv, vinv2);
        const __m256d den = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
        const __m256d upd = _mm256_div_pd(mhat, den);
        _mm256_storeu_pd(p + i, _mm256_add_pd(_mm256_loadu_pd(p + i), _mm256_mul_pd(vstep, upd)));
    }
    for (std::size_t i = n4; i < n; ++i) {
        const double gi = g[i];
        m[i] = beta1 * m[i] + omb1 * gi;
        v[i] = beta2 * v[i] + omb2 * (gi * gi);
        const double mhat = m[i] * inv_bias1;
        const double vhat = v[i] * inv_bias2;
        const double den = std::sqrt(vhat) + eps;
        p[i] = p[i] + step_scale * (mhat / den);
    }
}

}  // namespace

const KernelTable* avx2_table() {
    static const KernelTable table = {
        dot_impl,      sum_impl,          max_impl,       axpy_impl,      scale_impl,
        matvec_acc_impl, matvec_t_acc_impl, outer_acc_impl, tanh_grad_impl, adam_step_impl,
    };
    return &table;
}

}  // namespace postrl::kernels

#else  // !POSTRL_HAVE_AVX2

namespace postrl::kernels {

const KernelTable* avx2_table() { return nullptr; }

}  // namespace postrl::kernels

#endif
