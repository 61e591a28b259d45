// Scalar reference lane. The loop structure here is the contract: reductions
// fill four strided accumulators and combine them as (acc0+acc2)+(acc1+acc3),
// elementwise ops round every intermediate separately (this TU is built with
// -ffp-contract=off, so no FMA contraction). The AVX2 lane mirrors this order
// operation for operation, which is what makes the lanes bit-identical.

#include <cmath>
#include <cstddef>

#include "postrl/kernels.hpp"

namespace postrl::kernels {
namespace {

double dot_impl(const double* a, const double* b, std::size_t n) {
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    const std::size_t n4 = n / 4 * 4;
    for (std::size_t i = 0; i < n4; i += 4) {
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    for (std::size_t i = n4; i < n; ++i) acc[i - n4] += a[i] * b[i];
    return (acc[0] + acc[2]) + (acc[1] + acc[3]);
}

double sum_impl(const double* a, std::size_t n) {
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    const std::size_t n4 = n / 4 * 4;
    for (std::size_t i = 0; i < n4; i += 4) {
        acc[0] += a[i];
        acc[1] += a[i + 1];
        acc[2] += a[i + 2];
        acc[3] += a[i + 3];
    }
    for (std::size_t i = n4; i < n; ++i) acc[i - n4] += a[i];
    return (acc[0] + acc[2]) + (acc[1] + acc[3]);
}

double max_impl(const double* a, std::size_t n) {
    // Comparison orientation matches _mm256_max_pd(acc, x) = acc > x ? acc : x.
    double acc[4] = {a[0], a[0], a[0], a[0]};
    const std::size_t n4 = n / 4 * 4;
    for (std::size_t i = 0; i < n4; i += 4) {
        for (int j = 0; j < 4; ++j) {
            const double x = a[i + static_cast<std::size_t>(j)];
            acc[j] = acc[j] > x ? acc[j] : x;
        }
    }
    for (std::size_t i = n4; i < n; ++i) {
        const double x = a[i];
        acc[i - n4] = acc[i - n4] > x ? acc[i - n4] : x;
    }
    const double m02 = acc[0] > acc[2] ? acc[0] : acc[2];
    const double m13 = acc[1] > acc[3] ? acc[1] : acc[3];
    return m02 > m13 ? m02 : m13;
}

void axpy_impl(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double t = alpha * x[i];
        y[i] = y[i] + t;
    }
}

void scale_impl(double alpha, double* a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) a[i] = alpha * a[i];
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
    for (std::size_t i = 0; i < n; ++i) {
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
    for (std::size_t i = 0; i < n; ++i) {
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

const KernelTable& scalar_table() {
    static const KernelTable table = {
        dot_impl,      sum_impl,          max_impl,       axpy_impl,      scale_impl,
        matvec_acc_impl, matvec_t_acc_impl, outer_acc_impl, tanh_grad_impl, adam_step_impl,
    };
    return table;
}

}  // namespace postrl::kernels
