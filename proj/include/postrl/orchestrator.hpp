// Three-stage training pipeline over a synthetic detection task: toy-task
// generation, the two RL stages with the SFT bridge between them, run
// configuration with dotted-key overrides, and manifest/checkpoint/log
// artifacts.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "postrl/dapo.hpp"
#include "postrl/evalkit.hpp"
#include "postrl/optimizer.hpp"

namespace postrl {

struct ScorerSettings {
    std::string kind = "stub";  // stub | remote | zero
    bool strict = false;        // remote only: fail hard instead of FallbackZero
    std::string url = "http://127.0.0.1:8787/score";
    int timeout_ms = 2000;

    void validate() const;  // ConfigError on unknown kind or bad limits
};

// Per-stage knobs in one bundle. Stage-1 pins mode_mix to 1 (every prompt in
// thinking mode); stage-2 reads only steps (epochs) and lr.
struct StageConfig {
    StageId stage = StageId::stage1;
    int steps = 0;
    int batch_prompts = 16;
    int G = 8;
    double lr = 0.02;
    ClipConfig clip;
    LengthPenaltyConfig len_cfg;
    double mode_mix = 1.0;  // probability of thinking mode per prompt
    ScorerSettings scorer;
    std::uint64_t seed = 0;
    int resample_retries = 3;  // fresh seeds per filtered prompt before skipping
    int max_len = 64;

    void validate() const;
};

// The full run configuration tree with every field defaulted. Loading merges
// user values over these defaults; unknown keys and type mismatches are
// ConfigErrors, as are unknown dotted paths in overrides.
nlohmann::json default_run_config();
void check_config_keys(const nlohmann::json& cfg);
nlohmann::json merge_run_config(const nlohmann::json& overrides);
nlohmann::json load_run_config_file(const std::string& path);
void apply_override(nlohmann::json& cfg, const std::string& assignment);  // "a.b.c=value"

struct RunConfig {
    std::uint64_t seed = 1;
    std::string backend = "auto";

    int feature_dim = 8;
    int train_prompts = 512;
    int heldout_prompts = 128;

    int hidden_dim = 16;
    int embed_dim = 8;
    double init_scale = 0.1;
    int max_len = 64;

    LengthPenaltyConfig len_cfg;
    ClipConfig clip;

    struct {
        int steps = 500;
        int batch_prompts = 16;
        int G = 8;
        double lr = 0.02;
        // Dense retries are what lets a from-scratch policy bootstrap: before
        // the response grammar is learned, almost every group is filtered, and
        // only raw draw volume surfaces the first well-formed correct samples.
        // Once groups start accepting, retries stop burning (first-try accepts).
        int resample_retries = 63;
    } stage1;

    struct {
        int epochs = 40;
        double lr = 0.02;
        int size = 256;           // emitted SFT examples (pairs of modes)
        int sample_budget = 8192;  // trajectory draws before giving up
    } stage2;

    struct {
        int steps = 300;
        int batch_prompts = 16;
        int G = 8;
        double lr = 0.01;
        int resample_retries = 3;
        double mode_mix = 0.5;
        ScorerSettings scorer;
    } stage3;

    nlohmann::json raw;  // merged tree as loaded; snapshotted into the manifest

    StageConfig stage_config(StageId stage) const;
    void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& cfg);
std::string run_id(const RunConfig& cfg);  // content hash of the config tree

// Synthetic detection task: a hidden weight vector labels feature vectors by
// the sign rule gold = 'B' ("fake") iff w*.x > 0. Prompts alternate the two
// modality tags and carry the canonical query text for their modality.
struct ToyTask {
    std::vector<double> hidden_weights;
    std::vector<PromptInstance> prompts;
};

// Classes are balanced by construction: each draw resamples features until a
// class with remaining quota comes up. n_prompts < 4 is InvalidInputError.
ToyTask make_toy_task(std::uint64_t seed, int feature_dim, int n_prompts);

// Extra pools (e.g. held-out) labelled by the same hidden weights.
std::vector<PromptInstance> draw_prompts(const std::vector<double>& hidden_weights,
                                         std::uint64_t seed, int n, const std::string& id_prefix);

struct StageOutput {
    Checkpoint ckpt;
    std::vector<nlohmann::json> step_log;  // one record per step (or epoch)
    std::size_t scorer_calls = 0;
    std::string fault;  // non-empty: NumericFault message; ckpt is the last good state
};

// Stage 1: fresh-initialization RL on format + length + accuracy rewards.
StageOutput run_stage1(const RunConfig& rc, const ToyTask& task);

// Samples the checkpoint policy in thinking mode and keeps responses passing
// `keep` (default: well-formed and correct); each kept sample also yields the
// non-thinking variant with the same answer, interleaved pairwise. Yields
// below n within the budget raise InsufficientDataError. n must be even.
using SftKeepRule = std::function<bool(const ParsedResponse&, char gold)>;
std::vector<SftExample> build_sft_set(const Checkpoint& ckpt, const ToyTask& task, int n,
                                      int sample_budget, std::uint64_t seed, int max_len,
                                      const SftKeepRule& keep = {});

// JSON-lines form of an example set ({features, mode, target} per line), as
// written to sft/examples.jsonl by the pipeline and the sft-build command.
std::string sft_examples_to_jsonl(const std::vector<SftExample>& sft);

// Stage 2: full-batch SFT descent on the example set; logs loss per epoch.
StageOutput run_stage2_sft(const Checkpoint& ckpt, const std::vector<SftExample>& sft,
                           const RunConfig& rc);

// Stage 3: RL resumes from a stage-1/2 checkpoint with hybrid + thinking
// rewards, drawing each prompt's mode Bernoulli(mode_mix). `scorer` overrides
// the configured one (tests); null builds from rc.stage3.scorer.
StageOutput run_stage3(const Checkpoint& ckpt, const RunConfig& rc, const ToyTask& task,
                       ThinkingScorer* scorer = nullptr);

// Sampled-response diagnostics shared by the pipeline, tests, and the CLI.
double mean_heldout_accuracy(const PolicyParams& params, const Vocab& vocab,
                             const std::vector<PromptInstance>& prompts, ChatMode mode,
                             std::uint64_t seed, int max_len);
double compliance_rate(const PolicyParams& params, const Vocab& vocab,
                       const std::vector<PromptInstance>& prompts, ChatMode mode,
                       std::uint64_t seed, int max_len);
std::vector<PredictionRecord> predict_prompts(const PolicyParams& params, const Vocab& vocab,
                                              const std::vector<PromptInstance>& prompts,
                                              ChatMode mode, std::uint64_t seed, int max_len);

// Think-block length per step from RL step logs (thinking-mode trajectories
// only) plus the medians of the four contiguous quarters of the series.
struct CotSummary {
    std::vector<double> series;
    std::vector<double> quartile_medians;  // empty when the series is empty
};
CotSummary track_cot_length(const std::vector<nlohmann::json>& step_log);

// Pipeline driver. Writes manifest.json, stageN/{checkpoint.json,steps.jsonl},
// sft/examples.jsonl, eval/{predictions.jsonl,report.json} under out_dir.
// `stages` must be a contiguous ascending subset of {1,2,3}; starting past 1
// resumes from the checkpoints already in out_dir. Stage 3 accepts a stage-1
// checkpoint directly when stage 2 was skipped.
struct PipelineOptions {
    std::string out_dir;
    std::vector<int> stages = {1, 2, 3};
    ThinkingScorer* scorer = nullptr;  // stage-3 override for tests
};
nlohmann::json run_pipeline(const RunConfig& rc, const PipelineOptions& opts);

}  // namespace postrl
