// Canonical detection prompts for the two modalities, plus the fixed
// non-thinking assistant body. These strings are also shipped under
// assets/prompts/ and the tests assert the copies stay byte-identical.

#pragma once

#include <array>
#include <string_view>

namespace postrl {

struct AnswerOption {
    char letter;
    std::string_view label;
};

struct CanonicalPrompts {
    std::string_view system;
    std::string_view user_image;
    std::string_view user_video;
    // Ordered: A -> real, B -> fake.
    std::array<AnswerOption, 2> answer_options;
};

const CanonicalPrompts& canonical_prompts();

// Assistant body of a non-thinking turn with answer "A", before the
// turn-close marker.
std::string_view canonical_nothink_response_body();

}  // namespace postrl
