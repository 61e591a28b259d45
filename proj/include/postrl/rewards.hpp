// Reward components for sampled responses and their per-stage composition.
// Components are orthogonal: format penalises bad grammar, hybrid penalises
// mode violations on well-formed text only, the thinking score is gated by
// answer correctness.

#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "postrl/chat_template.hpp"
#include "postrl/scorer.hpp"

namespace postrl {

enum class StageId { stage1, stage2, stage3 };

const char* stage_name(StageId s);
StageId stage_from_number(int n);  // 1|2|3

struct LengthPenaltyConfig {
    int l_max = 64;
    int l_cache = 16;
};

// ConfigError unless 0 < l_cache < l_max.
void validate(const LengthPenaltyConfig& cfg);

struct RewardBreakdown {
    double fmt = 0.0;       // {0, -1}
    double overlong = 0.0;  // [-1, 0]
    double acc = 0.0;       // {0, 1}
    double hybrid = 0.0;    // {0, -1}
    double think = 0.0;     // [0, 1]
    double total = 0.0;
};

// 0 for well-formed text, -1 otherwise.
double format_reward(const ParsedResponse& resp);

// Piecewise length penalty: 0 up to l_max-l_cache, then a linear ramp hitting
// -1 at l_max, then flat -1. Continuous at both breakpoints.
double soft_overlong(double l_gen, const LengthPenaltyConfig& cfg);

// 1 iff a letter was extracted and matches gold (case-folded).
double accuracy_reward(std::optional<char> pred, char gold);

// -1 for a well-formed response that violates the requested mode (skipped or
// unexpected thinking); 0 otherwise. Malformed text is handled by
// format_reward alone, so it scores 0 here.
double hybrid_reward(const ParsedResponse& resp, ChatMode mode);

// 0 in non-thinking mode, else min(acc, score.value): the external quality
// judgment only pays off when the answer is also correct.
double thinking_reward(ChatMode mode, double acc, const ThinkingScore& score);

// Stage-1 total = fmt + overlong + acc; Stage-3 adds hybrid + think. Stage-2
// is SFT and has no reward -> ConfigError.
double compose_stage_reward(StageId stage, const RewardBreakdown& parts);

// Full per-trajectory assessment with an already-computed thinking score.
// The generated length is taken from resp.raw_length.
RewardBreakdown assess_response_scored(const ParsedResponse& resp, ChatMode mode, char gold,
                                       StageId stage, const LengthPenaltyConfig& len_cfg,
                                       const ThinkingScore& score);

// Full per-trajectory assessment. `raw_text` is the detokenized response the
// scorer judges (it sees the entire turn, not just the think block). The
// scorer is only consulted when its value can be nonzero — Stage-3, thinking
// mode, correct answer — so Stage-1 never calls it regardless of wiring.
RewardBreakdown assess_response(const ParsedResponse& resp, const std::string& raw_text,
                                ChatMode mode, char gold, StageId stage,
                                const LengthPenaltyConfig& len_cfg, ThinkingScorer* scorer);

}  // namespace postrl
