#include "postrl/canonical_prompts.hpp"

namespace postrl {

namespace {

constexpr std::string_view kSystem =
    R"PROMPT(A conversation between User and Assistant. The user asks a question, and the Assistant solves it. The assistant first thinks about the reasoning process in the mind and then provides the user with the answer. The reasoning process and answer are enclosed within <think> </think> and <answer> </answer> tags, respectively, i.e., <think> reasoning process here </think><answer> answer here </answer>)PROMPT";

constexpr std::string_view kUserImage =
    R"PROMPT(Please analyze whether there are any inconsistencies or obvious signs of forgery in the image, and finally come to a conclusion: Is this image real or fake?
Please think about this question as if you were a human pondering deeply. Engage in an internal dialogue using expressions such as 'let me think', 'wait', 'Hmm', 'oh, I see', 'let's break it down', etc, or other natural language thought expressions. It's encouraged to include self-reflection or verification in the reasoning process.
Then, just answer this MCQ with a single letter:
Q: Is this image real or fake?
Options:
A) real
B) fake)PROMPT";

constexpr std::string_view kUserVideo =
    R"PROMPT(Please analyze whether there are any inconsistencies or obvious signs of forgery in the video, and finally come to a conclusion: Is this video real or fake?
Please think about this question as if you were a human pondering deeply. Engage in an internal dialogue using expressions such as 'let me think', 'wait', 'Hmm', 'oh, I see', 'let's break it down', etc, or other natural language thought expressions. It's encouraged to include self-reflection or verification in the reasoning process.
Then, just answer this MCQ with a single letter:
Q: Is this video real or fake?
Options:
A) real
B) fake)PROMPT";

constexpr std::string_view kNothinkBody = R"PROMPT(<think>

</think>

<answer>
A
</answer>)PROMPT";

}  // namespace

const CanonicalPrompts& canonical_prompts() {
    static const CanonicalPrompts prompts = {
        kSystem,
        kUserImage,
        kUserVideo,
        {{{'A', "real"}, {'B', "fake"}}},
    };
    return prompts;
}

std::string_view canonical_nothink_response_body() { return kNothinkBody; }

}  // namespace postrl
