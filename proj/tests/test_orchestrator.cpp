#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "postrl/canonical_prompts.hpp"
#include "postrl/chat_template.hpp"
#include "postrl/errors.hpp"
#include "postrl/orchestrator.hpp"
#include "postrl/policy.hpp"
#include "postrl/rewards.hpp"
#include "postrl/rng.hpp"
#include "postrl/util.hpp"
#include "support.hpp"

using namespace postrl;
using namespace support;
using nlohmann::json;

namespace {

struct ZeroScorer final : ThinkingScorer {
    std::size_t calls = 0;
    ThinkingScore score(const std::string&) override {
        ++calls;
        return ThinkingScore{0.0, ScoreSource::stub};
    }
};


}  // namespace

TEST_SUITE("orchestrator") {

TEST_CASE("default config tree survives a merge with no overrides") {
    const json merged = merge_run_config(json::object());
    CHECK(merged == default_run_config());
    const RunConfig rc = run_config_from_json(merged);
    CHECK(rc.seed == 1);
    CHECK(rc.feature_dim == 8);
    CHECK(rc.train_prompts == 512);
    CHECK(rc.heldout_prompts == 128);
    CHECK(rc.stage1.steps == 500);
    CHECK(rc.stage1.G == 8);
    CHECK(rc.stage1.batch_prompts == 16);
    CHECK(rc.stage2.size == 256);
    CHECK(rc.stage3.steps == 300);
    CHECK(rc.stage3.mode_mix == 0.5);
    CHECK(rc.clip.eps_low == 0.2);
    CHECK(rc.clip.eps_high == 0.28);
    CHECK(rc.stage3.scorer.kind == "stub");
    CHECK(rc.raw == merged);
}

TEST_CASE("unknown keys and type mismatches are config errors") {
    CHECK_THROWS_AS(check_config_keys(json{{"sead", 1}}), ConfigError);
    CHECK_THROWS_AS(check_config_keys(json{{"stage1", {{"stepz", 3}}}}), ConfigError);
    CHECK_THROWS_AS(check_config_keys(json{{"seed", "zippy"}}), ConfigError);
    CHECK_THROWS_AS(check_config_keys(json{{"backend", 7}}), ConfigError);
    CHECK_THROWS_AS(check_config_keys(json{{"stage3", {{"scorer", {{"strict", "yes"}}}}}}),
                    ConfigError);
    CHECK_THROWS_AS(check_config_keys(json{{"task", 5}}), ConfigError);
    // Deep partial overrides merge without clobbering siblings.
    const json merged = merge_run_config(json{{"stage1", {{"steps", 9}}}});
    CHECK(merged["stage1"]["steps"] == 9);
    CHECK(merged["stage1"]["group_size"] == 8);
}

TEST_CASE("dotted overrides parse by target type and reject unknown paths") {
    json cfg = default_run_config();
    apply_override(cfg, "stage1.steps=42");
    apply_override(cfg, "stage1.lr=0.125");
    apply_override(cfg, "seed=987654321");
    apply_override(cfg, "backend=scalar");
    apply_override(cfg, "stage3.scorer.strict=true");
    CHECK(cfg["stage1"]["steps"] == 42);
    CHECK(cfg["stage1"]["lr"] == 0.125);
    CHECK(cfg["seed"] == 987654321);
    CHECK(cfg["backend"] == "scalar");
    CHECK(cfg["stage3"]["scorer"]["strict"] == true);

    const RunConfig rc = run_config_from_json(cfg);
    CHECK(rc.stage1.steps == 42);
    CHECK(rc.stage1.lr == 0.125);
    CHECK(rc.seed == 987654321);
    CHECK(rc.backend == "scalar");
    CHECK(rc.stage3.scorer.strict);

    CHECK_THROWS_AS(apply_override(cfg, "stage1.stepz=3"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "no_such=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "stage1=3"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "stage1.steps"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "stage1.steps=soon"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "stage3.scorer.strict=maybe"), ConfigError);
}

TEST_CASE("run config validation rejects bad values") {
    json cfg = default_run_config();
    cfg["stage2"]["size"] = 15;  // odd: cannot hold mode pairs
    CHECK_THROWS_AS(run_config_from_json(cfg), ConfigError);
    cfg = default_run_config();
    cfg["task"]["train_prompts"] = 3;
    CHECK_THROWS_AS(run_config_from_json(cfg), ConfigError);
    cfg = default_run_config();
    cfg["stage1"]["group_size"] = 1;
    CHECK_THROWS_AS(run_config_from_json(cfg), ConfigError);
    cfg = default_run_config();
    cfg["stage3"]["mode_mix"] = 1.5;
    CHECK_THROWS_AS(run_config_from_json(cfg), ConfigError);
    cfg = default_run_config();
    cfg["stage3"]["scorer"]["kind"] = "oracle";
    CHECK_THROWS_AS(run_config_from_json(cfg), ConfigError);
    cfg = default_run_config();
    cfg["backend"] = "sse9";
    CHECK_THROWS_AS(run_config_from_json(cfg), ConfigError);
}

TEST_CASE("config file loading merges over defaults") {
    const std::string dir = tmp_dir("orch_cfg");
    util::write_text_file_atomic(dir + "/run.json",
                                 "{\"seed\": 5, \"stage1\": {\"steps\": 3}}\n");
    const json cfg = load_run_config_file(dir + "/run.json");
    CHECK(cfg["seed"] == 5);
    CHECK(cfg["stage1"]["steps"] == 3);
    CHECK(cfg["stage1"]["batch_prompts"] == 16);
    CHECK_THROWS_AS(load_run_config_file(dir + "/absent.json"), IoError);
    util::write_text_file_atomic(dir + "/bad.json", "{\"seeed\": 5}\n");
    CHECK_THROWS_AS(load_run_config_file(dir + "/bad.json"), ConfigError);
}

TEST_CASE("toy task generation is deterministic and balanced") {
    const ToyTask t1 = make_toy_task(99, 8, 512);
    const ToyTask t2 = make_toy_task(99, 8, 512);
    CHECK(t1.hidden_weights == t2.hidden_weights);
    REQUIRE(t1.prompts.size() == 512);
    for (std::size_t i = 0; i < t1.prompts.size(); ++i) {
        CHECK(t1.prompts[i].id == t2.prompts[i].id);
        CHECK(t1.prompts[i].features == t2.prompts[i].features);
        CHECK(t1.prompts[i].gold == t2.prompts[i].gold);
    }
    const ToyTask t3 = make_toy_task(100, 8, 512);
    CHECK(t3.hidden_weights != t1.hidden_weights);

    int fake = 0;
    for (const auto& p : t1.prompts) fake += p.gold == 'B' ? 1 : 0;
    CHECK(fake == 256);  // exact quota balance

    CHECK(t1.prompts[0].id == "p0000");
    CHECK(t1.prompts[511].id == "p0511");
    CHECK(t1.prompts[0].modality == "image");
    CHECK(t1.prompts[1].modality == "video");
    const auto& cp = canonical_prompts();
    CHECK(t1.prompts[0].query == std::string(cp.user_image));
    CHECK(t1.prompts[1].query == std::string(cp.user_video));

    CHECK_THROWS_AS(make_toy_task(1, 8, 3), InvalidInputError);
    CHECK_THROWS_AS(make_toy_task(1, 0, 8), InvalidInputError);
}

TEST_CASE("gold labels match an independent sign-rule recomputation") {
    const ToyTask t = make_toy_task(1234, 6, 128);
    for (const auto& p : t.prompts) {
        double dot = 0.0;
        for (std::size_t d = 0; d < t.hidden_weights.size(); ++d)
            dot += t.hidden_weights[d] * p.features[d];
        CHECK(p.gold == (dot > 0.0 ? 'B' : 'A'));
        CHECK(std::fabs(dot) >= 1e-6);
    }
    // Held-out pools share the weights but not the draws, and are balanced.
    const auto heldout = draw_prompts(t.hidden_weights, 4321, 128, "h");
    REQUIRE(heldout.size() == 128);
    CHECK(heldout[0].id == "h0000");
    int fake = 0;
    for (const auto& p : heldout) fake += p.gold == 'B' ? 1 : 0;
    CHECK(fake == 64);
    bool any_diff = false;
    for (std::size_t i = 0; i < heldout.size(); ++i)
        if (heldout[i].features != t.prompts[i].features) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("zero-step stage 1 returns the untouched initialization") {
    json cfg = tiny_cfg_json();
    cfg["stage1"]["steps"] = 0;
    const RunConfig rc = run_config_from_json(cfg);
    const ToyTask task = make_toy_task(mix64(rc.seed, 1), rc.feature_dim, rc.train_prompts);

    const StageOutput so = run_stage1(rc, task);
    CHECK(so.step_log.empty());
    CHECK(so.fault.empty());
    CHECK(so.scorer_calls == 0);
    CHECK(so.ckpt.meta.at("stage") == "stage1");
    CHECK(so.ckpt.meta.at("lineage") == json::array({"stage1"}));
    CHECK(so.ckpt.meta.at("steps_completed") == 0);

    const Vocab vocab = default_vocab();
    const PolicyParams expect =
        init_params(PolicyDims{rc.feature_dim + 1, rc.hidden_dim, rc.embed_dim, vocab.size()},
                    vocab.eos_id, mix64(mix64(rc.seed, 10, 1), 5), rc.init_scale);
    CHECK(params_equal(so.ckpt.params, expect));
}

TEST_CASE("stage 1 logs one complete record per step") {
    const RunConfig rc = tiny_rc();
    const ToyTask task = make_toy_task(mix64(rc.seed, 1), rc.feature_dim, rc.train_prompts);
    const StageOutput so = run_stage1(rc, task);
    CHECK(so.fault.empty());
    REQUIRE(so.step_log.size() == 6);
    const std::vector<std::string> fields = {
        "step",           "stage",          "seed",          "objective",
        "token_count",    "accepted_groups", "filtered_groups", "skipped_prompts",
        "min_correct",    "max_correct",    "group_size",    "mean_reward",
        "mean_fmt",       "mean_overlong",  "mean_acc",      "mean_hybrid",
        "mean_think",     "mean_cot_length", "cot_trajectories", "hybrid_violation_rate",
        "grad_norm",      "scorer_calls"};
    for (std::size_t i = 0; i < so.step_log.size(); ++i) {
        const json& rec = so.step_log[i];
        for (const auto& f : fields) CHECK_MESSAGE(rec.contains(f), "missing field " << f);
        CHECK(rec.at("step") == i);
        CHECK(rec.at("stage") == "stage1");
        CHECK(rec.at("group_size") == 4);
        CHECK(rec.at("scorer_calls") == 0);
        // Accepted groups always carry a mixed-correctness signature.
        if (rec.at("accepted_groups").get<int>() > 0) {
            CHECK(rec.at("min_correct").get<int>() > 0);
            CHECK(rec.at("max_correct").get<int>() < 4);
        }
    }
    CHECK(so.scorer_calls == 0);

    // Determinism: the same config reproduces the log bit for bit.
    const StageOutput again = run_stage1(rc, task);
    REQUIRE(again.step_log.size() == so.step_log.size());
    for (std::size_t i = 0; i < so.step_log.size(); ++i)
        CHECK(again.step_log[i].dump() == so.step_log[i].dump());
    CHECK(params_equal(again.ckpt.params, so.ckpt.params));
}

TEST_CASE("crafted chain policy emits the expected response shape") {
    const Checkpoint c = crafted_ckpt();
    const ToyTask task = make_toy_task(5, 4, 8);
    const Trajectory t = sample(c.params, c.vocab, task.prompts[0].features, ChatMode::thinking,
                                123, 16, task.prompts[0].id);
    const std::string text = detokenize(c.vocab, t.tokens);
    const ParsedResponse parsed = parse_response(text, {}, static_cast<std::size_t>(t.length()));
    CHECK(parsed.well_formed);
    CHECK(util::trim(parsed.thinking_content) == "hmm.");
    const auto letter = extract_answer_letter(parsed);
    REQUIRE(letter.has_value());
    CHECK((*letter == 'A' || *letter == 'B'));
    CHECK(t.length() == 7);

    // The answer letter really is a coin: both sides show up over seeds.
    int a_count = 0;
    for (int s = 0; s < 40; ++s) {
        const Trajectory ts = sample(c.params, c.vocab, task.prompts[0].features,
                                     ChatMode::thinking, mix64(9, s), 16, task.prompts[0].id);
        const ParsedResponse ps =
            parse_response(detokenize(c.vocab, ts.tokens), {}, static_cast<std::size_t>(ts.length()));
        const auto l = extract_answer_letter(ps);
        REQUIRE(l.has_value());
        a_count += *l == 'A' ? 1 : 0;
    }
    CHECK(a_count > 5);
    CHECK(a_count < 35);
}

TEST_CASE("sft set pairs modes, parses well-formed, and re-scores correct") {
    const Checkpoint c = crafted_ckpt();
    const RunConfig rc = tiny_rc();
    const ToyTask task = make_toy_task(mix64(rc.seed, 1), rc.feature_dim, rc.train_prompts);

    const auto sft = build_sft_set(c, task, 16, 512, 42, rc.max_len);
    REQUIRE(sft.size() == 16);
    int thinking = 0, non_thinking = 0;
    for (std::size_t i = 0; i < sft.size(); ++i) {
        const SftExample& ex = sft[i];
        (ex.mode == ChatMode::thinking ? thinking : non_thinking) += 1;
        // Interleaved pairs: even index thinking, odd its non-thinking twin.
        CHECK(ex.mode == (i % 2 == 0 ? ChatMode::thinking : ChatMode::non_thinking));
        if (i % 2 == 1) CHECK(sft[i].features == sft[i - 1].features);

        REQUIRE(!ex.target.empty());
        CHECK(ex.target.back() == c.vocab.eos_id);
        const ParsedResponse parsed = parse_response(detokenize(c.vocab, ex.target));
        CHECK(parsed.well_formed);
        if (ex.mode == ChatMode::non_thinking) CHECK(util::trim(parsed.thinking_content).empty());

        // Thinking targets re-score accuracy 1 against their prompt's gold.
        if (ex.mode == ChatMode::thinking) {
            char gold = 0;
            for (const auto& p : task.prompts)
                if (p.features == ex.features) gold = p.gold;
            REQUIRE(gold != 0);
            CHECK(accuracy_reward(extract_answer_letter(parsed), gold) == 1.0);
        }
    }
    CHECK(thinking == 8);
    CHECK(non_thinking == 8);

    // Determinism and failure modes.
    const auto again = build_sft_set(c, task, 16, 512, 42, rc.max_len);
    REQUIRE(again.size() == sft.size());
    for (std::size_t i = 0; i < sft.size(); ++i) {
        CHECK(again[i].target == sft[i].target);
        CHECK(again[i].mode == sft[i].mode);
    }
    CHECK_THROWS_AS(build_sft_set(c, task, 15, 512, 42, rc.max_len), ConfigError);
    CHECK_THROWS_AS(build_sft_set(c, task, 16, 0, 42, rc.max_len), ConfigError);
    try {
        build_sft_set(c, task, 64, 5, 42, rc.max_len);
        FAIL("insufficient budget must throw");
    } catch (const InsufficientDataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("of 64") != std::string::npos);
        CHECK(msg.find("budget 5") != std::string::npos);
    }
}

TEST_CASE("stage 2 descends the sft loss and respects lineage") {
    const Checkpoint c = crafted_ckpt();
    const RunConfig rc = tiny_rc();
    const ToyTask task = make_toy_task(mix64(rc.seed, 1), rc.feature_dim, rc.train_prompts);
    const auto sft = build_sft_set(c, task, 16, 512, 42, rc.max_len);

    const StageOutput so = run_stage2_sft(c, sft, rc);
    CHECK(so.fault.empty());
    REQUIRE(so.step_log.size() == 300);
    for (std::size_t e = 0; e < so.step_log.size(); ++e) {
        CHECK(so.step_log[e].at("epoch") == e);
        CHECK(so.step_log[e].at("stage") == "stage2");
        if (e > 0) {
            const double prev = so.step_log[e - 1].at("loss").get<double>();
            const double cur = so.step_log[e].at("loss").get<double>();
            CHECK(cur <= prev * 1.05);  // non-increasing within 5% per epoch
        }
    }
    const double final_loss = so.ckpt.meta.at("final_loss").get<double>();
    CHECK(final_loss < so.step_log.front().at("loss").get<double>());
    CHECK(so.ckpt.meta.at("lineage") == json::array({"stage1", "stage2"}));

    // Non-thinking compliance does not regress after SFT (same eval seeds).
    const auto heldout = draw_prompts(task.hidden_weights, mix64(rc.seed, 2), 32, "h");
    const double pre = compliance_rate(c.params, c.vocab, heldout, ChatMode::non_thinking, 5, 16);
    const double post =
        compliance_rate(so.ckpt.params, so.ckpt.vocab, heldout, ChatMode::non_thinking, 5, 16);
    CHECK(post >= pre);
    CHECK(post >= 0.5);  // the crafted policy always thinks, so SFT must help

    // Zero epochs: parameters unchanged.
    json cfg0 = tiny_cfg_json();
    cfg0["stage2"]["epochs"] = 0;
    const StageOutput none = run_stage2_sft(c, sft, run_config_from_json(cfg0));
    CHECK(none.step_log.empty());
    CHECK(params_equal(none.ckpt.params, c.params));

    CHECK_THROWS_AS(run_stage2_sft(c, {}, rc), InvalidInputError);
    Checkpoint orphan = c;
    orphan.meta = json::object();
    CHECK_THROWS_AS(run_stage2_sft(orphan, sft, rc), LineageError);
}

TEST_CASE("stage 3 with an always-zero scorer reduces to stage-1 reward minus hybrid") {
    const Checkpoint c = crafted_ckpt();
    json cfg = tiny_cfg_json();
    cfg["stage3"]["mode_mix"] = 1.0;
    const RunConfig rc = run_config_from_json(cfg);
    const ToyTask task = make_toy_task(mix64(rc.seed, 1), rc.feature_dim, rc.train_prompts);

    ZeroScorer zero;
    const StageOutput so = run_stage3(c, rc, task, &zero);
    CHECK(so.fault.empty());
    REQUIRE(so.step_log.size() == 4);
    CHECK(so.scorer_calls == zero.calls);
    CHECK(zero.calls > 0);  // the crafted policy answers correctly half the time
    for (const json& rec : so.step_log) {
        CHECK(rec.at("stage") == "stage3");
        CHECK(rec.at("mean_think").get<double>() == 0.0);
        const double total = rec.at("mean_reward").get<double>();
        const double stage1_part = rec.at("mean_fmt").get<double>() +
                                   rec.at("mean_overlong").get<double>() +
                                   rec.at("mean_acc").get<double>();
        const double hybrid = rec.at("mean_hybrid").get<double>();
        CHECK(std::fabs(total - (stage1_part + hybrid)) <= 1e-12);
        CHECK(rec.contains("hybrid_violation_rate"));
    }
    CHECK(so.ckpt.meta.at("lineage") == json::array({"stage1", "stage3"}));

    Checkpoint orphan = c;
    orphan.meta = json{{"lineage", json::array({"stage2"})}};
    CHECK_THROWS_AS(run_stage3(orphan, rc, task, &zero), LineageError);
    orphan.meta = json::object();
    CHECK_THROWS_AS(run_stage3(orphan, rc, task, &zero), LineageError);
}

TEST_CASE("numeric faults retain the last good parameters") {
    const Checkpoint c = crafted_ckpt();
    const RunConfig rc = tiny_rc();
    const ToyTask task = make_toy_task(mix64(rc.seed, 1), rc.feature_dim, rc.train_prompts);

    // A poisoned feature turns the first sft gradient non-finite: the faulty
    // epoch is dropped and the incoming parameters survive bit for bit.
    auto sft = build_sft_set(c, task, 16, 512, 42, rc.max_len);
    sft[0].features[0] = std::numeric_limits<double>::quiet_NaN();
    const StageOutput so2 = run_stage2_sft(c, sft, rc);
    CHECK(!so2.fault.empty());
    CHECK(so2.fault.find("gradient") != std::string::npos);
    CHECK(so2.step_log.empty());
    CHECK(params_equal(so2.ckpt.params, c.params));
    check_finite(so2.ckpt.params, "retained params");

    // An infinite parameter survives the update arithmetic untouched (its
    // saturated unit has zero gradient), so the post-update finiteness check
    // faults the very first step and the input state comes back verbatim.
    Checkpoint bad = crafted_ckpt();
    bad.params.w_x[0] = std::numeric_limits<double>::infinity();
    ZeroScorer zero;
    const StageOutput so3 = run_stage3(bad, rc, task, &zero);
    CHECK(!so3.fault.empty());
    CHECK(so3.fault.find("parameters") != std::string::npos);
    CHECK(so3.step_log.empty());
    CHECK(params_equal(so3.ckpt.params, bad.params));
}

TEST_CASE("think-length tracking matches an independent recomputation") {
    std::vector<json> log;
    Rng rng(31);
    std::vector<double> expect_series;
    for (int i = 0; i < 37; ++i) {
        const bool has = i % 5 != 3;
        const double mean = rng.uniform(0.0, 9.0);
        log.push_back(json{{"step", i},
                           {"cot_trajectories", has ? 3 : 0},
                           {"mean_cot_length", has ? mean : 0.0}});
        if (has) expect_series.push_back(mean);
    }
    const CotSummary s = track_cot_length(log);
    CHECK(s.series == expect_series);
    REQUIRE(s.quartile_medians.size() == 4);
    const std::size_t n = expect_series.size();
    for (std::size_t q = 0; q < 4; ++q) {
        std::vector<double> quarter(expect_series.begin() + static_cast<std::ptrdiff_t>(q * n / 4),
                                    expect_series.begin() +
                                        static_cast<std::ptrdiff_t>((q + 1) * n / 4));
        std::sort(quarter.begin(), quarter.end());
        const std::size_t m = quarter.size();
        const double med = m % 2 == 1 ? quarter[m / 2]
                                      : 0.5 * (quarter[m / 2 - 1] + quarter[m / 2]);
        CHECK(s.quartile_medians[q] == med);
    }

    // Constant series: flat, equal quartiles.
    std::vector<json> flat;
    for (int i = 0; i < 8; ++i)
        flat.push_back(json{{"cot_trajectories", 2}, {"mean_cot_length", 4.5}});
    const CotSummary fs = track_cot_length(flat);
    CHECK(fs.series == std::vector<double>(8, 4.5));
    CHECK(fs.quartile_medians == std::vector<double>(4, 4.5));

    // All-non-thinking: empty series, no quartiles.
    std::vector<json> none;
    for (int i = 0; i < 6; ++i)
        none.push_back(json{{"cot_trajectories", 0}, {"mean_cot_length", 0.0}});
    const CotSummary ns = track_cot_length(none);
    CHECK(ns.series.empty());
    CHECK(ns.quartile_medians.empty());

    CHECK_THROWS_AS(track_cot_length({}), InvalidInputError);
}

TEST_CASE("pipeline reruns are byte-identical and resume across stages") {
    const RunConfig rc = tiny_rc();
    const std::string dir_a = tmp_dir("orch_pipe_a");
    const std::string dir_b = tmp_dir("orch_pipe_b");

    PipelineOptions oa;
    oa.out_dir = dir_a;
    oa.stages = {1};
    PipelineOptions ob = oa;
    ob.out_dir = dir_b;
    const json ma1 = run_pipeline(rc, oa);
    const json mb1 = run_pipeline(rc, ob);
    CHECK(ma1.at("run_id") == mb1.at("run_id"));
    CHECK(util::read_text_file(dir_a + "/stage1/steps.jsonl") ==
          util::read_text_file(dir_b + "/stage1/steps.jsonl"));
    CHECK(util::read_text_file(dir_a + "/stage1/checkpoint.json") ==
          util::read_text_file(dir_b + "/stage1/checkpoint.json"));

    // A short random stage 1 cannot seed the SFT set, so both runs continue
    // from the same crafted checkpoint; stages 2 and 3 must then agree too.
    const Checkpoint crafted = crafted_ckpt();
    save_checkpoint(dir_a + "/stage1/checkpoint.json", crafted);
    save_checkpoint(dir_b + "/stage1/checkpoint.json", crafted);
    oa.stages = {2, 3};
    ob.stages = {2, 3};
    const json ma2 = run_pipeline(rc, oa);
    const json mb2 = run_pipeline(rc, ob);
    for (const char* rel : {"sft/examples.jsonl", "stage2/steps.jsonl", "stage2/checkpoint.json",
                            "stage3/steps.jsonl", "stage3/checkpoint.json",
                            "eval/predictions.jsonl", "eval/report.json"})
        CHECK_MESSAGE(util::read_text_file(dir_a + "/" + rel) ==
                          util::read_text_file(dir_b + "/" + rel),
                      "differs: " << rel);

    // Manifest: stage entries survive the resume, checksums match the files,
    // and every referenced file exists.
    CHECK(ma2.at("stages").contains("stage1"));
    CHECK(ma2.at("stages").contains("stage2"));
    CHECK(ma2.at("stages").contains("stage3"));
    CHECK(ma2.contains("eval"));
    for (const auto& [name, entry] : ma2.at("stages").items()) {
        const std::string ckpt_rel = entry.at("checkpoint").get<std::string>();
        const std::string steps_rel = entry.at("steps_log").get<std::string>();
        CHECK(std::filesystem::exists(dir_a + "/" + ckpt_rel));
        CHECK(std::filesystem::exists(dir_a + "/" + steps_rel));
        CHECK(entry.at("steps_fnv1a64").get<std::string>() ==
              util::hex64(util::fnv1a64_file(dir_a + "/" + steps_rel)));
        CHECK(entry.at("wall_clock_seconds").get<double>() >= 0.0);
    }
    CHECK(std::filesystem::exists(dir_a + "/eval/report.json"));
    CHECK(std::filesystem::exists(dir_a + "/manifest.json"));

    // Stage-3 lineage spans the whole chain after the resume.
    const Checkpoint final_ckpt = load_checkpoint(dir_a + "/stage3/checkpoint.json");
    CHECK(final_ckpt.meta.at("lineage") == json::array({"stage1", "stage2", "stage3"}));

    // The eval report is a readable evalkit artifact.
    const json report = util::json_from_file(dir_a + "/eval/report.json");
    CHECK(report.at("kind") == "eval_report");
    CHECK(report.at("overall").at("count") == 8);

    // Skipping stage 2 is supported: stage 3 accepts stage 1 directly.
    const std::string dir_c = tmp_dir("orch_pipe_c");
    PipelineOptions oc;
    oc.out_dir = dir_c;
    oc.stages = {1};
    run_pipeline(rc, oc);
    save_checkpoint(dir_c + "/stage1/checkpoint.json", crafted);
    oc.stages = {3};
    const json mc = run_pipeline(rc, oc);
    CHECK(mc.at("stages").contains("stage3"));
    CHECK(!mc.at("stages").contains("stage2"));
    const Checkpoint direct = load_checkpoint(dir_c + "/stage3/checkpoint.json");
    CHECK(direct.meta.at("lineage") == json::array({"stage1", "stage3"}));

    // Resuming with nothing to resume from is a config error.
    const std::string dir_d = tmp_dir("orch_pipe_d");
    PipelineOptions od;
    od.out_dir = dir_d;
    od.stages = {3};
    CHECK_THROWS_AS(run_pipeline(rc, od), ConfigError);
    od.stages = {2, 1};
    CHECK_THROWS_AS(run_pipeline(rc, od), ConfigError);
}

TEST_CASE("pipeline propagates faults after persisting the retained checkpoint") {
    // A near-overflow learning rate keeps the first sft epoch finite (the
    // update step is lr-bounded) but blows the second epoch's forward pass
    // into NaN, so stage 2 faults after exactly one good epoch.
    json cfg = tiny_cfg_json();
    cfg["stage2"]["lr"] = 1.7e308;
    const RunConfig rc = run_config_from_json(cfg);
    const std::string dir = tmp_dir("orch_pipe_fault");

    PipelineOptions opts;
    opts.out_dir = dir;
    opts.stages = {1};
    run_pipeline(rc, opts);
    const Checkpoint crafted = crafted_ckpt();
    save_checkpoint(dir + "/stage1/checkpoint.json", crafted);

    opts.stages = {2, 3};
    CHECK_THROWS_AS(run_pipeline(rc, opts), NumericFault);
    const json manifest = util::json_from_file(dir + "/manifest.json");
    const json& entry = manifest.at("stages").at("stage2");
    CHECK(entry.contains("fault"));
    CHECK(!entry.contains("final_loss"));
    CHECK(!manifest.at("stages").contains("stage3"));  // short-circuited
    // The retained checkpoint is the last state that passed the finiteness
    // check, so it round-trips through the checkpoint reader.
    const Checkpoint retained = load_checkpoint(dir + "/stage2/checkpoint.json");
    CHECK(retained.meta.at("lineage") == json::array({"stage1", "stage2"}));
    const auto steps_text = util::read_text_file(dir + "/stage2/steps.jsonl");
    CHECK(util::split_lines(steps_text).size() == 1);  // exactly one good epoch
}

TEST_CASE("prediction records carry modality, gold, and parse status") {
    const Checkpoint c = crafted_ckpt();
    const ToyTask task = make_toy_task(5, 4, 8);
    const auto preds =
        predict_prompts(c.params, c.vocab, task.prompts, ChatMode::thinking, 77, 16);
    REQUIRE(preds.size() == 8);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        CHECK(preds[i].id == task.prompts[i].id);
        CHECK(preds[i].modality == (i % 2 == 0 ? Modality::image : Modality::video));
        CHECK(preds[i].gold == (task.prompts[i].gold == 'B' ? Label::fake : Label::real));
        CHECK(preds[i].mode == ChatMode::thinking);
        CHECK(preds[i].well_formed);
        CHECK(preds[i].predicted.has_value());
    }
    const double acc = mean_heldout_accuracy(c.params, c.vocab, task.prompts,
                                             ChatMode::thinking, 77, 16);
    int match = 0;
    for (const auto& p : preds) match += (p.predicted && *p.predicted == p.gold) ? 1 : 0;
    CHECK(acc == doctest::Approx(match / 8.0).epsilon(1e-12));
}

}  // TEST_SUITE
