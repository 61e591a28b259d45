// Backend selection. The process holds one active lane; because the lanes are
// bit-identical the choice never changes results, only speed.

#include <string>
#include <string_view>

#include "postrl/errors.hpp"
#include "postrl/kernels.hpp"

namespace postrl::kernels {

namespace {

Backend g_backend = Backend::scalar;
bool g_init = false;

void ensure_init() {
    if (!g_init) {
        g_backend = avx2_supported() ? Backend::avx2 : Backend::scalar;
        g_init = true;
    }
}

const KernelTable& active() {
    ensure_init();
    if (g_backend == Backend::avx2) {
        const KernelTable* t = avx2_table();
        if (t != nullptr) return *t;
    }
    return scalar_table();
}

}  // namespace

bool avx2_supported() {
#if defined(POSTRL_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

Backend resolve_backend(std::string_view name) {
    if (name == "auto") return avx2_supported() ? Backend::avx2 : Backend::scalar;
    if (name == "scalar") return Backend::scalar;
    if (name == "avx2") {
        if (!avx2_supported())
            throw ConfigError("backend 'avx2' requested but this host does not support it");
        return Backend::avx2;
    }
    throw ConfigError("unknown backend '" + std::string(name) + "' (expected auto|scalar|avx2)");
}

const char* backend_name(Backend b) { return b == Backend::avx2 ? "avx2" : "scalar"; }

Backend active_backend() {
    ensure_init();
    return g_backend;
}

void set_backend(Backend b) {
    if (b == Backend::avx2 && !avx2_supported())
        throw ConfigError("backend 'avx2' requested but this host does not support it");
    g_backend = b;
    g_init = true;
}

double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
double sum(const double* a, std::size_t n) { return active().sum(a, n); }
double max(const double* a, std::size_t n) { return active().max(a, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) {
    active().axpy(alpha, x, y, n);
}
void scale(double alpha, double* a, std::size_t n) { active().scale(alpha, a, n); }
void matvec_acc(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y) {
    active().matvec_acc(w, rows, cols, x, y);
}
void matvec_t_acc(const double* w, std::size_t rows, std::size_t cols, const double* u, double* y) {
    active().matvec_t_acc(w, rows, cols, u, y);
}
void outer_acc(double alpha, const double* u, std::size_t rows, const double* v, std::size_t cols,
               double* a) {
    active().outer_acc(alpha, u, rows, v, cols, a);
}
void tanh_grad(const double* h, const double* g, double* out, std::size_t n) {
    active().tanh_grad(h, g, out, n);
}
void adam_step(double* p, double* m, double* v, const double* g, std::size_t n, double beta1,
               double beta2, double eps, double step_scale, double inv_bias1, double inv_bias2) {
    active().adam_step(p, m, v, g, n, beta1, beta2, eps, step_scale, inv_bias1, inv_bias2);
}

}  // namespace postrl::kernels
