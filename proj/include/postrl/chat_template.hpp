// Hybrid thinking/non-thinking chat grammar: rendering of prompts and
// responses, strict parsing of sampled text, answer-letter extraction, and
// mode-compliance classification.

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace postrl {

enum class ChatMode { thinking, non_thinking };

enum class ModeCompliance { compliant, skipped_thinking, unexpected_thinking, malformed };

struct TemplateConfig {
    std::string think_open = "<think>";
    std::string think_close = "</think>";
    std::string answer_open = "<answer>";
    std::string answer_close = "</answer>";
    std::string turn_open = "<|im_start|>";
    std::string turn_close = "<|im_end|>";
    std::string mode_suffix_think = "/think";
    std::string mode_suffix_nothink = "/no_think";
};

// Throws ConfigError unless every marker is non-empty and all are pairwise
// distinct.
void validate(const TemplateConfig& cfg);

struct ParsedResponse {
    // Block contents with the renderer's single-newline framing stripped;
    // both empty when the text is not well formed.
    std::string thinking_content;
    std::string answer_content;
    bool well_formed = false;
    // Token count of the trajectory the text came from; the parser just
    // carries it through (callers that only have text leave it 0).
    std::size_t raw_length = 0;
};

// User turn followed by the opened assistant turn. The mode suffix is
// appended to the query with a single space. Empty query -> InvalidInputError.
std::string render_prompt(std::string_view query, ChatMode mode, const TemplateConfig& cfg = {});

// Assistant body: think block, blank line, answer block, turn close. In
// non-thinking mode the think block must be empty (InvalidInputError
// otherwise) and renders as a lone blank line.
std::string render_response(std::string_view thinking, std::string_view answer, ChatMode mode,
                            const TemplateConfig& cfg = {});

// Accepts arbitrary text and never throws: well_formed requires exactly one
// think block then one answer block, whitespace only elsewhere, with one
// optional trailing turn-close marker.
ParsedResponse parse_response(std::string_view text, const TemplateConfig& cfg = {},
                              std::size_t raw_length = 0);

// Uppercase option letter when answer_content trims to exactly one character
// of `options` (case-folded); absent otherwise.
std::optional<char> extract_answer_letter(const ParsedResponse& resp,
                                          std::string_view options = "AB");

ModeCompliance mode_compliance(const ParsedResponse& resp, ChatMode mode);

const char* mode_name(ChatMode m);
const char* compliance_name(ModeCompliance c);
ChatMode mode_from_name(std::string_view name);  // "thinking" | "non_thinking"

}  // namespace postrl
