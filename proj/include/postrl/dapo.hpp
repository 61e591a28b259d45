// Group-based clipped policy-gradient training step: rollout collection per
// prompt, reward attachment, the all-or-nothing correctness filter,
// group-normalized advantages, and the token-normalized clipped objective with
// its exact gradient.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "postrl/policy.hpp"
#include "postrl/rewards.hpp"
#include "postrl/scorer.hpp"

namespace postrl {

struct PromptInstance {
    std::string id;
    std::string query;
    std::vector<double> features;
    char gold = 'A';
    std::string modality = "image";  // reserved tag; one synthetic modality today
};

struct ClipConfig {
    double eps_low = 0.2;    // lower clip width: ratios floor at 1 - eps_low
    double eps_high = 0.28;  // decoupled upper width: ratios cap at 1 + eps_high
    double eps_std = 1e-8;   // degenerate-group guard on the reward spread

    void validate() const;  // ConfigError on out-of-range values
};

// One prompt's sampled group plus everything attached to it downstream.
struct RolloutGroup {
    PromptInstance prompt;
    ChatMode mode = ChatMode::thinking;
    std::vector<Trajectory> trajectories;
    std::vector<std::vector<double>> old_logprobs;  // snapshot at collection time
    std::vector<std::string> texts;                 // detokenized responses
    std::vector<ParsedResponse> parsed;
    std::vector<RewardBreakdown> rewards;           // filled by attach_rewards

    int size() const { return static_cast<int>(trajectories.size()); }
    int correct_count() const;  // rewards[i].acc > 0
};

// Samples G trajectories for one prompt; per-trajectory seeds derive from
// (seed, prompt id, index) so groups are reproducible and order-independent.
// G < 2 is InvalidInputError.
RolloutGroup collect_group(const PolicyParams& params, const Vocab& vocab,
                           const PromptInstance& prompt, ChatMode mode, int G, int max_len,
                           std::uint64_t seed, const TemplateConfig& tpl = {});

// Fills rewards from the parsed responses. `scores` carries precomputed
// thinking scores (empty means all-zero); its size must be 0 or G.
void attach_rewards(RolloutGroup& group, StageId stage, const std::vector<ThinkingScore>& scores,
                    const LengthPenaltyConfig& len_cfg);

// Accept only groups that are neither all-correct nor all-wrong; the rest
// carry no learning signal under group-normalized advantages.
bool dynamic_filter(const RolloutGroup& group);

struct AdvantageSet {
    std::vector<double> advantages;
    double mean = 0.0;
    double stddev = 0.0;        // population standard deviation
    bool degenerate = false;    // spread below eps_std -> all advantages zero
};

// Group-normalized advantages (reward minus group mean over population std),
// computed in an exactly shift-invariant form. Fewer than 2 rewards is
// InvalidInputError.
AdvantageSet compute_advantages(const std::vector<double>& rewards, double eps_std);

struct ObjectiveResult {
    double objective = 0.0;
    std::size_t token_count = 0;  // combined length of every trajectory used
};

// Token-normalized clipped surrogate over the accepted groups:
//   J = (1 / sum_i |o_i|) * sum_i sum_t min(rho A, clip(rho, 1-el, 1+eh) A)
// with rho the per-token probability ratio against the stored old logprobs.
// The clip is a stop-gradient: tokens whose clipped branch is strictly active
// and selected contribute zero gradient. Non-finite ratios raise NumericFault
// naming the trajectory. grad_out may be null to skip gradient work.
ObjectiveResult dapo_objective_and_grad(const std::vector<RolloutGroup>& groups,
                                        const std::vector<AdvantageSet>& advantages,
                                        const PolicyParams& params, const ClipConfig& clip,
                                        PolicyParams* grad_out);

}  // namespace postrl
