// Adam / plain SGD updates over policy parameter blocks. Updates ascend on the
// supplied gradient; callers optimizing a loss pass direction = -1.

#pragma once

#include <cstdint>
#include <vector>

#include "postrl/policy.hpp"

namespace postrl {

enum class OptKind { adam, sgd };

const char* opt_kind_name(OptKind k);
OptKind opt_kind_from_name(const std::string& name);  // ConfigError on unknown

struct OptimizerConfig {
    OptKind kind = OptKind::adam;
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;  // ConfigError on out-of-range values
};

// First/second moment buffers flattened across blocks in param_blocks() order.
struct OptimizerState {
    std::int64_t step = 0;
    std::vector<double> m, v;
};

OptimizerState make_optimizer_state(const PolicyParams& p);

// In-place update: params += direction * lr * step(grad). Throws NumericFault
// when the gradient holds non-finite values (params stay untouched) and
// InvalidInputError on shape mismatches.
void update_step(PolicyParams& params, const PolicyParams& grad, OptimizerState& state,
                 const OptimizerConfig& cfg, double direction = 1.0);

// Euclidean norm over every gradient block, for step logs.
double grad_norm(const PolicyParams& grad);

}  // namespace postrl
