#include "postrl/chat_template.hpp"

#include <array>
#include <cctype>

#include "postrl/errors.hpp"
#include "postrl/util.hpp"

namespace postrl {

namespace {

// All positions of needle in hay (non-overlapping scan is enough: markers
// that overlap themselves still report >1 occurrence and fail the grammar).
std::size_t count_occurrences(std::string_view hay, std::string_view needle,
                              std::size_t* first_pos) {
    std::size_t count = 0;
    std::size_t pos = hay.find(needle);
    if (first_pos) *first_pos = pos;
    while (pos != std::string_view::npos) {
        ++count;
        pos = hay.find(needle, pos + needle.size());
    }
    return count;
}

// The renderer frames block contents as "\n{content}\n"; strip exactly one
// newline from each end so round-trips recover the content verbatim.
std::string_view strip_frame(std::string_view s) {
    if (!s.empty() && s.front() == '\n') s.remove_prefix(1);
    if (!s.empty() && s.back() == '\n') s.remove_suffix(1);
    return s;
}

std::string_view rstrip(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace

void validate(const TemplateConfig& cfg) {
    const std::array<std::string_view, 8> markers = {
        cfg.think_open, cfg.think_close, cfg.answer_open,       cfg.answer_close,
        cfg.turn_open,  cfg.turn_close,  cfg.mode_suffix_think, cfg.mode_suffix_nothink,
    };
    for (std::string_view m : markers)
        if (m.empty()) throw ConfigError("template marker strings must be non-empty");
    for (std::size_t i = 0; i < markers.size(); ++i)
        for (std::size_t j = i + 1; j < markers.size(); ++j)
            if (markers[i] == markers[j])
                throw ConfigError("template marker strings must be pairwise distinct: '" +
                                  std::string(markers[i]) + "' repeats");
}

std::string render_prompt(std::string_view query, ChatMode mode, const TemplateConfig& cfg) {
    if (query.empty()) throw InvalidInputError("render_prompt: query must be non-empty");
    const std::string& suffix =
        mode == ChatMode::thinking ? cfg.mode_suffix_think : cfg.mode_suffix_nothink;
    std::string out;
    out += cfg.turn_open;
    out += "user\n";
    out += query;
    out += ' ';
    out += suffix;
    out += cfg.turn_close;
    out += '\n';
    out += cfg.turn_open;
    out += "assistant\n";
    return out;
}

std::string render_response(std::string_view thinking, std::string_view answer, ChatMode mode,
                            const TemplateConfig& cfg) {
    if (mode == ChatMode::non_thinking && !thinking.empty())
        throw InvalidInputError("render_response: non-thinking mode requires empty thinking");
    std::string out;
    out += cfg.think_open;
    out += '\n';
    out += thinking;
    out += '\n';
    out += cfg.think_close;
    out += "\n\n";
    out += cfg.answer_open;
    out += '\n';
    out += answer;
    out += '\n';
    out += cfg.answer_close;
    out += cfg.turn_close;
    return out;
}

ParsedResponse parse_response(std::string_view text, const TemplateConfig& cfg,
                              std::size_t raw_length) {
    ParsedResponse out;
    out.raw_length = raw_length;

    // Drop trailing whitespace and at most one turn-close marker; anything
    // else after the answer block fails the whitespace-only rule below.
    std::string_view body = rstrip(text);
    if (body.size() >= cfg.turn_close.size() && body.ends_with(cfg.turn_close))
        body = body.substr(0, body.size() - cfg.turn_close.size());

    std::size_t p_to = 0, p_tc = 0, p_ao = 0, p_ac = 0;
    const bool unique = count_occurrences(body, cfg.think_open, &p_to) == 1 &&
                        count_occurrences(body, cfg.think_close, &p_tc) == 1 &&
                        count_occurrences(body, cfg.answer_open, &p_ao) == 1 &&
                        count_occurrences(body, cfg.answer_close, &p_ac) == 1;
    if (!unique) return out;

    const std::size_t e_to = p_to + cfg.think_open.size();
    const std::size_t e_tc = p_tc + cfg.think_close.size();
    const std::size_t e_ao = p_ao + cfg.answer_open.size();
    const std::size_t e_ac = p_ac + cfg.answer_close.size();
    if (!(e_to <= p_tc && e_tc <= p_ao && e_ao <= p_ac)) return out;

    if (!util::is_whitespace_only(body.substr(0, p_to))) return out;
    if (!util::is_whitespace_only(body.substr(e_tc, p_ao - e_tc))) return out;
    if (!util::is_whitespace_only(body.substr(e_ac))) return out;

    out.thinking_content = std::string(strip_frame(body.substr(e_to, p_tc - e_to)));
    out.answer_content = std::string(strip_frame(body.substr(e_ao, p_ac - e_ao)));
    out.well_formed = true;
    return out;
}

std::optional<char> extract_answer_letter(const ParsedResponse& resp, std::string_view options) {
    const std::string t = util::trim(resp.answer_content);
    if (t.size() != 1) return std::nullopt;
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(t[0])));
    for (char o : options)
        if (static_cast<char>(std::toupper(static_cast<unsigned char>(o))) == c) return c;
    return std::nullopt;
}

ModeCompliance mode_compliance(const ParsedResponse& resp, ChatMode mode) {
    if (!resp.well_formed) return ModeCompliance::malformed;
    const bool has_thinking = !util::trim(resp.thinking_content).empty();
    if (mode == ChatMode::thinking && !has_thinking) return ModeCompliance::skipped_thinking;
    if (mode == ChatMode::non_thinking && has_thinking) return ModeCompliance::unexpected_thinking;
    return ModeCompliance::compliant;
}

const char* mode_name(ChatMode m) {
    return m == ChatMode::thinking ? "thinking" : "non_thinking";
}

const char* compliance_name(ModeCompliance c) {
    switch (c) {
        case ModeCompliance::compliant: return "compliant";
        case ModeCompliance::skipped_thinking: return "skipped_thinking";
        case ModeCompliance::unexpected_thinking: return "unexpected_thinking";
        case ModeCompliance::malformed: return "malformed";
    }
    return "malformed";
}

ChatMode mode_from_name(std::string_view name) {
    if (name == "thinking") return ChatMode::thinking;
    if (name == "non_thinking") return ChatMode::non_thinking;
    throw ConfigError("unknown chat mode '" + std::string(name) +
                      "' (expected thinking|non_thinking)");
}

}  // namespace postrl
