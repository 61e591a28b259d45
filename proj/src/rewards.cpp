#include "postrl/rewards.hpp"

#include <algorithm>
#include <cctype>

#include "postrl/errors.hpp"

namespace postrl {

const char* stage_name(StageId s) {
    switch (s) {
        case StageId::stage1: return "stage1";
        case StageId::stage2: return "stage2";
        case StageId::stage3: return "stage3";
    }
    return "stage1";
}

StageId stage_from_number(int n) {
    switch (n) {
        case 1: return StageId::stage1;
        case 2: return StageId::stage2;
        case 3: return StageId::stage3;
    }
    throw ConfigError("stage number must be 1, 2 or 3");
}

void validate(const LengthPenaltyConfig& cfg) {
    if (!(0 < cfg.l_cache && cfg.l_cache < cfg.l_max))
        throw ConfigError("length penalty requires 0 < l_cache < l_max");
}

double format_reward(const ParsedResponse& resp) { return resp.well_formed ? 0.0 : -1.0; }

double soft_overlong(double l_gen, const LengthPenaltyConfig& cfg) {
    validate(cfg);
    if (l_gen < 0.0) throw InvalidInputError("soft_overlong: negative generation length");
    const double threshold = static_cast<double>(cfg.l_max - cfg.l_cache);
    if (l_gen <= threshold) return 0.0;
    if (l_gen <= static_cast<double>(cfg.l_max))
        return (threshold - l_gen) / static_cast<double>(cfg.l_cache);
    return -1.0;
}

double accuracy_reward(std::optional<char> pred, char gold) {
    if (!pred.has_value()) return 0.0;
    const auto up = [](char c) {
        return static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    };
    return up(*pred) == up(gold) ? 1.0 : 0.0;
}

double hybrid_reward(const ParsedResponse& resp, ChatMode mode) {
    switch (mode_compliance(resp, mode)) {
        case ModeCompliance::skipped_thinking:
        case ModeCompliance::unexpected_thinking: return -1.0;
        case ModeCompliance::compliant:
        case ModeCompliance::malformed: return 0.0;
    }
    return 0.0;
}

double thinking_reward(ChatMode mode, double acc, const ThinkingScore& score) {
    if (mode == ChatMode::non_thinking) return 0.0;
    return std::min(acc, score.value);
}

double compose_stage_reward(StageId stage, const RewardBreakdown& parts) {
    const double stage1 = parts.fmt + parts.overlong + parts.acc;
    switch (stage) {
        case StageId::stage1: return stage1;
        case StageId::stage3: return stage1 + parts.hybrid + parts.think;
        case StageId::stage2: break;
    }
    throw ConfigError("compose_stage_reward: stage2 is SFT and has no reward");
}

RewardBreakdown assess_response_scored(const ParsedResponse& resp, ChatMode mode, char gold,
                                       StageId stage, const LengthPenaltyConfig& len_cfg,
                                       const ThinkingScore& score) {
    RewardBreakdown parts;
    parts.fmt = format_reward(resp);
    parts.overlong = soft_overlong(static_cast<double>(resp.raw_length), len_cfg);
    parts.acc = accuracy_reward(extract_answer_letter(resp), gold);
    if (stage == StageId::stage3) {
        parts.hybrid = hybrid_reward(resp, mode);
        parts.think = thinking_reward(mode, parts.acc, score);
    }
    parts.total = compose_stage_reward(stage, parts);
    return parts;
}

RewardBreakdown assess_response(const ParsedResponse& resp, const std::string& raw_text,
                                ChatMode mode, char gold, StageId stage,
                                const LengthPenaltyConfig& len_cfg, ThinkingScorer* scorer) {
    ThinkingScore score;
    if (stage == StageId::stage3 && mode == ChatMode::thinking && scorer != nullptr &&
        accuracy_reward(extract_answer_letter(resp), gold) > 0.0)
        score = scorer->score(raw_text);
    return assess_response_scored(resp, mode, gold, stage, len_cfg, score);
}

}  // namespace postrl
