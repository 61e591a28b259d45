#include "postrl/dapo.hpp"

#include <cmath>
#include <cstddef>

#include "postrl/errors.hpp"
#include "postrl/kernels.hpp"
#include "postrl/rng.hpp"

namespace postrl {

void ClipConfig::validate() const {
    if (!(eps_low > 0.0 && eps_low < 1.0))
        throw ConfigError("clip eps_low must lie in (0, 1)");
    if (!(eps_high > 0.0) || !std::isfinite(eps_high))
        throw ConfigError("clip eps_high must be positive and finite");
    if (!(eps_std > 0.0)) throw ConfigError("clip eps_std must be positive");
}

int RolloutGroup::correct_count() const {
    int n = 0;
    for (const auto& r : rewards)
        if (r.acc > 0.0) ++n;
    return n;
}

RolloutGroup collect_group(const PolicyParams& params, const Vocab& vocab,
                           const PromptInstance& prompt, ChatMode mode, int G, int max_len,
                           std::uint64_t seed, const TemplateConfig& tpl) {
    if (G < 2) throw InvalidInputError("group size must be at least 2");

    RolloutGroup group;
    group.prompt = prompt;
    group.mode = mode;
    group.trajectories.reserve(static_cast<std::size_t>(G));
    group.old_logprobs.reserve(static_cast<std::size_t>(G));
    group.texts.reserve(static_cast<std::size_t>(G));
    group.parsed.reserve(static_cast<std::size_t>(G));

    const std::uint64_t base = mix64(seed, fnv1a64(prompt.id));
    for (int i = 0; i < G; ++i) {
        Trajectory traj = sample(params, vocab, prompt.features, mode,
                                 mix64(base, static_cast<std::uint64_t>(i)), max_len, prompt.id);
        group.old_logprobs.push_back(traj.logprobs);
        group.texts.push_back(detokenize(vocab, traj.tokens));
        group.parsed.push_back(parse_response(group.texts.back(), tpl, traj.length()));
        group.trajectories.push_back(std::move(traj));
    }
    return group;
}

void attach_rewards(RolloutGroup& group, StageId stage, const std::vector<ThinkingScore>& scores,
                    const LengthPenaltyConfig& len_cfg) {
    const std::size_t g = group.trajectories.size();
    if (group.parsed.size() != g || group.old_logprobs.size() != g || group.texts.size() != g)
        throw InvalidInputError("rollout group fields have inconsistent sizes");
    if (!scores.empty() && scores.size() != g)
        throw InvalidInputError("thinking score count does not match group size");

    group.rewards.clear();
    group.rewards.reserve(g);
    for (std::size_t i = 0; i < g; ++i) {
        const ThinkingScore score = scores.empty() ? ThinkingScore{} : scores[i];
        group.rewards.push_back(assess_response_scored(group.parsed[i], group.mode,
                                                       group.prompt.gold, stage, len_cfg, score));
    }
}

bool dynamic_filter(const RolloutGroup& group) {
    if (group.rewards.size() != group.trajectories.size())
        throw InvalidInputError("dynamic_filter needs attached rewards");
    const int correct = group.correct_count();
    return correct > 0 && correct < group.size();
}

AdvantageSet compute_advantages(const std::vector<double>& rewards, double eps_std) {
    const std::size_t g = rewards.size();
    if (g < 2) throw InvalidInputError("advantages need at least 2 rewards");
    if (!(eps_std > 0.0)) throw ConfigError("eps_std must be positive");

    const double gd = static_cast<double>(g);
    const double total = kernels::sum(rewards.data(), g);

    // Scaled residuals n_i = G*r_i - sum(r) = G*(r_i - mean). A constant shift
    // cancels exactly in n_i before any division, so advantages are bitwise
    // shift-invariant whenever the inputs make G*r and the sums exact.
    std::vector<double> n(g);
    for (std::size_t i = 0; i < g; ++i) n[i] = gd * rewards[i] - total;
    const double sq = kernels::dot(n.data(), n.data(), g);
    const double denom = std::sqrt(sq / gd);  // = G * population std

    AdvantageSet out;
    out.mean = total / gd;
    out.stddev = denom / gd;
    out.degenerate = !(out.stddev >= eps_std);
    out.advantages.assign(g, 0.0);
    if (!out.degenerate)
        for (std::size_t i = 0; i < g; ++i) out.advantages[i] = n[i] / denom;
    return out;
}

ObjectiveResult dapo_objective_and_grad(const std::vector<RolloutGroup>& groups,
                                        const std::vector<AdvantageSet>& advantages,
                                        const PolicyParams& params, const ClipConfig& clip,
                                        PolicyParams* grad_out) {
    clip.validate();
    if (advantages.size() != groups.size())
        throw InvalidInputError("advantage sets do not match group count");

    ObjectiveResult result;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const RolloutGroup& group = groups[gi];
        if (advantages[gi].advantages.size() != group.trajectories.size())
            throw InvalidInputError("advantage count does not match group size");
        for (const auto& traj : group.trajectories)
            result.token_count += traj.tokens.size();
    }
    if (result.token_count == 0) {
        if (grad_out != nullptr) *grad_out = zeros_like(params);
        return result;
    }
    const double inv_n = 1.0 / static_cast<double>(result.token_count);
    const double lo = 1.0 - clip.eps_low;
    const double hi = 1.0 + clip.eps_high;

    if (grad_out != nullptr) *grad_out = zeros_like(params);

    double objective = 0.0;
    std::vector<double> weights;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const RolloutGroup& group = groups[gi];
        for (std::size_t ti = 0; ti < group.trajectories.size(); ++ti) {
            const Trajectory& traj = group.trajectories[ti];
            const double adv = advantages[gi].advantages[ti];
            const std::vector<double>& old_lps = group.old_logprobs[ti];
            if (old_lps.size() != traj.tokens.size())
                throw InvalidInputError("stored old logprobs do not match trajectory length");

            const std::vector<double> new_lps =
                log_prob(params, group.prompt.features, group.mode, traj.tokens);

            weights.assign(traj.tokens.size(), 0.0);
            for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
                const double ratio = std::exp(new_lps[t] - old_lps[t]);
                if (!std::isfinite(ratio))
                    throw NumericFault("non-finite probability ratio for prompt " +
                                       group.prompt.id + " trajectory " + std::to_string(ti) +
                                       " token " + std::to_string(t));
                const double clipped = ratio < lo ? lo : (ratio > hi ? hi : ratio);
                const double raw_term = ratio * adv;
                const double clip_term = clipped * adv;
                // min() picks the branch; gradient flows only through an
                // unclipped selection (ties are unclipped by construction).
                if (raw_term <= clip_term) {
                    objective += raw_term;
                    weights[t] = adv * ratio * inv_n;
                } else {
                    objective += clip_term;
                }
            }
            if (grad_out != nullptr)
                accumulate_weighted_grad_log_prob(params, group.prompt.features, group.mode,
                                                  traj.tokens, weights, *grad_out);
        }
    }
    result.objective = objective * inv_n;
    return result;
}

}  // namespace postrl
