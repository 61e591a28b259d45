// Dispatched numeric kernels behind the policy math and the optimizer.
//
// Two lanes: a scalar reference lane and an AVX2 lane, selected once at
// startup (or forced through config). Every kernel is defined with a fixed
// evaluation order — reductions use four strided accumulators combined as
// (acc0+acc2)+(acc1+acc3), element-wise kernels round each intermediate
// separately (no FMA) — so the lanes produce bit-identical results and a run's
// outputs do not depend on which lane the host machine selects. The
// equivalence tests assert bitwise agreement on random inputs.

#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace postrl::kernels {

enum class Backend { scalar, avx2 };

// "auto" picks the widest lane the CPU supports; "scalar"/"avx2" force one.
// Requesting avx2 on a CPU without it is a ConfigError.
Backend resolve_backend(std::string_view name);
const char* backend_name(Backend b);
bool avx2_supported();

Backend active_backend();
void set_backend(Backend b);

double dot(const double* a, const double* b, std::size_t n);
double sum(const double* a, std::size_t n);
double max(const double* a, std::size_t n);  // n >= 1

// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);
// a *= alpha
void scale(double alpha, double* a, std::size_t n);
// y += W x           (W is rows x cols, row-major)
void matvec_acc(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y);
// y += W^T u         (accumulated row-by-row so both lanes agree bitwise)
void matvec_t_acc(const double* w, std::size_t rows, std::size_t cols, const double* u, double* y);
// A += alpha * u v^T
void outer_acc(double alpha, const double* u, std::size_t rows, const double* v, std::size_t cols,
               double* a);
// out[i] = g[i] * (1 - h[i]*h[i])
void tanh_grad(const double* h, const double* g, double* out, std::size_t n);

// One Adam coordinate update over n parameters. Bias corrections are passed as
// precomputed reciprocals (1/(1-beta^t)); step_scale carries lr and direction.
void adam_step(double* p, double* m, double* v, const double* g, std::size_t n, double beta1,
               double beta2, double eps, double step_scale, double inv_bias1, double inv_bias2);

// Per-lane entry points, used by the equivalence tests. The avx2 table is null
// when the build or the CPU lacks AVX2 support.
struct KernelTable {
    double (*dot)(const double*, const double*, std::size_t);
    double (*sum)(const double*, std::size_t);
    double (*max)(const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*scale)(double, double*, std::size_t);
    void (*matvec_acc)(const double*, std::size_t, std::size_t, const double*, double*);
    void (*matvec_t_acc)(const double*, std::size_t, std::size_t, const double*, double*);
    void (*outer_acc)(double, const double*, std::size_t, const double*, std::size_t, double*);
    void (*tanh_grad)(const double*, const double*, double*, std::size_t);
    void (*adam_step)(double*, double*, double*, const double*, std::size_t, double, double, double,
                      double, double, double);
};

const KernelTable& scalar_table();
const KernelTable* avx2_table();  // null when unavailable

}  // namespace postrl::kernels
