#include "postrl/optimizer.hpp"

#include <cmath>
#include <string>

#include "postrl/errors.hpp"
#include "postrl/kernels.hpp"

namespace postrl {

const char* opt_kind_name(OptKind k) { return k == OptKind::adam ? "adam" : "sgd"; }

OptKind opt_kind_from_name(const std::string& name) {
    if (name == "adam") return OptKind::adam;
    if (name == "sgd") return OptKind::sgd;
    throw ConfigError("unknown optimizer kind: " + name);
}

void OptimizerConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("optimizer lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optimizer beta1 must lie in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer beta2 must lie in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("optimizer eps must be positive");
}

OptimizerState make_optimizer_state(const PolicyParams& p) {
    OptimizerState s;
    s.m.assign(param_count(p), 0.0);
    s.v.assign(param_count(p), 0.0);
    return s;
}

void update_step(PolicyParams& params, const PolicyParams& grad, OptimizerState& state,
                 const OptimizerConfig& cfg, double direction) {
    cfg.validate();
    const auto pblocks = param_blocks(params);
    const auto gblocks = param_blocks(grad);
    std::size_t total = 0;
    for (std::size_t i = 0; i < pblocks.size(); ++i) {
        if (pblocks[i].data->size() != gblocks[i].data->size())
            throw InvalidInputError("gradient shape does not match parameters");
        total += pblocks[i].data->size();
    }
    if (state.m.size() != total || state.v.size() != total)
        throw InvalidInputError("optimizer state size does not match parameters");
    check_finite(grad, "gradient");

    state.step += 1;

    // An all-zero gradient is a fixed point: moments decay, params stay put.
    // Without this, stale Adam momentum would keep drifting the params on
    // empty training steps.
    bool all_zero = true;
    for (std::size_t i = 0; all_zero && i < gblocks.size(); ++i)
        for (double g : *gblocks[i].data)
            if (g != 0.0) {
                all_zero = false;
                break;
            }
    if (all_zero) {
        kernels::scale(cfg.beta1, state.m.data(), state.m.size());
        kernels::scale(cfg.beta2, state.v.data(), state.v.size());
        return;
    }

    const double scale = direction * cfg.lr;
    if (cfg.kind == OptKind::sgd) {
        for (std::size_t i = 0; i < pblocks.size(); ++i)
            kernels::axpy(scale, gblocks[i].data->data(), pblocks[i].data->data(),
                          pblocks[i].data->size());
        return;
    }

    const double inv_bias1 = 1.0 / (1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
    const double inv_bias2 = 1.0 / (1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)));
    std::size_t offset = 0;
    for (std::size_t i = 0; i < pblocks.size(); ++i) {
        const std::size_t n = pblocks[i].data->size();
        kernels::adam_step(pblocks[i].data->data(), &state.m[offset], &state.v[offset],
                           gblocks[i].data->data(), n, cfg.beta1, cfg.beta2, cfg.eps, scale,
                           inv_bias1, inv_bias2);
        offset += n;
    }
}

double grad_norm(const PolicyParams& grad) {
    double total = 0.0;
    for (const auto& blk : param_blocks(grad))
        total += kernels::dot(blk.data->data(), blk.data->data(), blk.data->size());
    return std::sqrt(total);
}

}  // namespace postrl
