// Minimal differentiable token policy: a single-layer tanh RNN over a tiny
// vocabulary, with exact per-token log-probabilities, backprop-through-time
// gradients, an SFT loss, and JSON checkpoints. All numeric work runs through
// the dispatched kernels so results are lane-independent.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "postrl/chat_template.hpp"

namespace postrl {

// Token inventory. Surfaces include the template markers so a sampled token
// stream can render straight into a response; detokenize() joins surfaces with
// single spaces and drops the eos token.
struct Vocab {
    std::vector<std::string> tokens;
    int eos_id = 0;

    int size() const { return static_cast<int>(tokens.size()); }
    int find(const std::string& surface) const;  // -1 when absent
    void validate() const;                       // ConfigError on bad shape
};

// Markers, answer letters, a small filler set, and eos.
Vocab default_vocab();

std::string detokenize(const Vocab& vocab, const std::vector<int>& tokens);

struct PolicyDims {
    int input_dim = 9;  // task features plus the trailing mode flag
    int hidden_dim = 16;
    int embed_dim = 8;
    int vocab_size = 10;

    void validate() const;  // ConfigError on non-positive sizes
};

// Flat row-major parameter blocks:
//   h_t = tanh(w_x x + w_h h_{t-1} + w_e embed[o_{t-1}] + b),  logits = w_o h_t
struct PolicyParams {
    PolicyDims dims;
    int bos_id = 0;  // previous-token id fed at t=0; by convention the eos id

    std::vector<double> w_x;    // hidden x input
    std::vector<double> w_h;    // hidden x hidden
    std::vector<double> w_e;    // hidden x embed
    std::vector<double> embed;  // vocab x embed
    std::vector<double> b;      // hidden
    std::vector<double> w_o;    // vocab x hidden
};

struct ParamBlock {
    const char* name;
    std::vector<double>* data;
};
struct ConstParamBlock {
    const char* name;
    const std::vector<double>* data;
};

// Fixed block order shared by init, optimizer state, checkpoints, gradcheck.
std::vector<ParamBlock> param_blocks(PolicyParams& p);
std::vector<ConstParamBlock> param_blocks(const PolicyParams& p);
std::size_t param_count(const PolicyParams& p);

// All blocks drawn uniform(-scale, scale) from one seeded stream.
PolicyParams init_params(const PolicyDims& dims, int bos_id, std::uint64_t seed,
                         double scale = 0.1);
PolicyParams zeros_like(const PolicyParams& p);

// NumericFault naming `what` if any block holds a non-finite value.
void check_finite(const PolicyParams& p, const std::string& what);

// Task features plus a trailing mode indicator (thinking=1, non-thinking=0).
std::vector<double> encode_features(const std::vector<double>& task_features, ChatMode mode);

struct Trajectory {
    std::string prompt_id;
    ChatMode mode = ChatMode::thinking;
    std::vector<int> tokens;        // ends with eos unless cut at max_len
    std::vector<double> logprobs;   // per token, under the sampling params

    int length() const { return static_cast<int>(tokens.size()); }
};

// Ancestral sampling until eos or max_len tokens. Deterministic in seed.
Trajectory sample(const PolicyParams& p, const Vocab& vocab, const std::vector<double>& features,
                  ChatMode mode, std::uint64_t seed, int max_len,
                  const std::string& prompt_id = "");

// Per-token log-probabilities of a given token sequence. InvalidInputError on
// a feature-size mismatch or out-of-range token id.
std::vector<double> log_prob(const PolicyParams& p, const std::vector<double>& features,
                             ChatMode mode, const std::vector<int>& tokens);

// Full next-token log-distribution after consuming `prefix`.
std::vector<double> next_token_logprobs(const PolicyParams& p, const std::vector<double>& features,
                                        ChatMode mode, const std::vector<int>& prefix);

// grad_acc += sum_t weights[t] * d log pi(tokens[t]) / d params.
// weights.size() must match tokens.size().
void accumulate_weighted_grad_log_prob(const PolicyParams& p, const std::vector<double>& features,
                                       ChatMode mode, const std::vector<int>& tokens,
                                       const std::vector<double>& weights, PolicyParams& grad_acc);

// Gradient of sum_t log pi(tokens[t]) as a fresh parameter struct.
PolicyParams grad_log_prob(const PolicyParams& p, const std::vector<double>& features,
                           ChatMode mode, const std::vector<int>& tokens);

struct SftExample {
    std::vector<double> features;  // raw task features, mode flag appended internally
    ChatMode mode = ChatMode::thinking;
    std::vector<int> target;       // target token sequence including eos
};

// Mean negative log-likelihood over the batch; grad_out holds d loss / d params.
// Empty batch or empty targets are InvalidInputError.
double sft_loss_and_grad(const PolicyParams& p, const std::vector<SftExample>& batch,
                         PolicyParams& grad_out);

struct Checkpoint {
    PolicyParams params;
    Vocab vocab;
    nlohmann::json meta;  // run/stage lineage fields managed by the orchestrator
};

// JSON on disk; doubles survive bit-exactly. Load throws IoError on unreadable
// or unparseable files and ConfigError on shape mismatches.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace postrl
