#include "postrl/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <utility>

#include "postrl/canonical_prompts.hpp"
#include "postrl/errors.hpp"
#include "postrl/kernels.hpp"
#include "postrl/rng.hpp"
#include "postrl/util.hpp"

namespace postrl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

void ScorerSettings::validate() const {
    if (kind != "stub" && kind != "remote" && kind != "zero")
        throw ConfigError("scorer kind '" + kind + "' is not one of stub|remote|zero");
    if (kind == "remote" && url.empty()) throw ConfigError("remote scorer needs a url");
    if (timeout_ms < 1) throw ConfigError("scorer timeout_ms must be positive");
}

void StageConfig::validate() const {
    if (steps < 0) throw ConfigError("stage steps must be non-negative");
    if (batch_prompts < 1) throw ConfigError("batch_prompts must be positive");
    if (G < 2) throw ConfigError("group size must be at least 2");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("stage lr must be positive");
    if (!(mode_mix >= 0.0 && mode_mix <= 1.0)) throw ConfigError("mode_mix must lie in [0,1]");
    if (resample_retries < 0) throw ConfigError("resample_retries must be non-negative");
    if (max_len < 1) throw ConfigError("max_len must be positive");
    clip.validate();
    postrl::validate(len_cfg);
    scorer.validate();
}

json default_run_config() {
    return json{
        {"seed", 1},
        {"backend", "auto"},
        {"task", {{"feature_dim", 8}, {"train_prompts", 512}, {"heldout_prompts", 128}}},
        {"policy", {{"hidden_dim", 16}, {"embed_dim", 8}, {"init_scale", 0.1}, {"max_len", 64}}},
        {"length_penalty", {{"l_max", 32}, {"l_cache", 8}}},
        {"clip", {{"eps_low", 0.2}, {"eps_high", 0.28}, {"eps_std", 1e-8}}},
        {"stage1",
         {{"steps", 500},
          {"batch_prompts", 16},
          {"group_size", 8},
          {"lr", 0.02},
          {"resample_retries", 63}}},
        {"stage2", {{"epochs", 40}, {"lr", 0.02}, {"size", 256}, {"sample_budget", 8192}}},
        {"stage3",
         {{"steps", 300},
          {"batch_prompts", 16},
          {"group_size", 8},
          {"lr", 0.01},
          {"resample_retries", 3},
          {"mode_mix", 0.5},
          {"scorer",
           {{"kind", "stub"},
            {"strict", false},
            {"url", "http://127.0.0.1:8787/score"},
            {"timeout_ms", 2000}}}}},
    };
}

namespace {

void check_node(const json& node, const json& schema, const std::string& prefix) {
    if (!node.is_object())
        throw ConfigError("config node '" + (prefix.empty() ? std::string("<root>") : prefix) +
                          "' must be an object");
    for (const auto& [key, val] : node.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!schema.contains(key)) throw ConfigError("unknown config key '" + path + "'");
        const json& ref = schema.at(key);
        if (ref.is_object()) {
            check_node(val, ref, path);
        } else if (ref.is_number()) {
            if (!val.is_number()) throw ConfigError("config key '" + path + "' must be a number");
        } else if (ref.is_boolean()) {
            if (!val.is_boolean()) throw ConfigError("config key '" + path + "' must be a boolean");
        } else if (ref.is_string()) {
            if (!val.is_string()) throw ConfigError("config key '" + path + "' must be a string");
        }
    }
}

}  // namespace

void check_config_keys(const json& cfg) { check_node(cfg, default_run_config(), ""); }

json merge_run_config(const json& overrides) {
    check_config_keys(overrides);
    json merged = default_run_config();
    merged.merge_patch(overrides);
    return merged;
}

json load_run_config_file(const std::string& path) {
    const json user = util::json_from_file(path);
    return merge_run_config(user);
}

void apply_override(json& cfg, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "' must look like key=value");
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);

    std::vector<std::string> segs;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = path.find('.', start);
        segs.push_back(path.substr(start, dot == std::string::npos ? dot : dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }

    const json schema = default_run_config();
    const json* ref = &schema;
    for (const auto& s : segs) {
        if (!ref->is_object() || !ref->contains(s))
            throw ConfigError("unknown config key '" + path + "'");
        ref = &ref->at(s);
    }
    if (ref->is_object()) throw ConfigError("config key '" + path + "' is a section, not a value");

    json parsed;
    try {
        if (ref->is_number_float()) {
            parsed = std::stod(value);
        } else if (ref->is_number()) {
            if (!value.empty() && value[0] == '-')
                parsed = static_cast<std::int64_t>(std::stoll(value));
            else
                parsed = static_cast<std::uint64_t>(std::stoull(value));
        } else if (ref->is_boolean()) {
            if (value == "true")
                parsed = true;
            else if (value == "false")
                parsed = false;
            else
                throw ConfigError("override value '" + value + "' for '" + path +
                                  "' must be true or false");
        } else {
            parsed = value;
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("override value '" + value + "' for '" + path + "' is not a number");
    }

    json* node = &cfg;
    for (std::size_t i = 0; i + 1 < segs.size(); ++i) node = &(*node)[segs[i]];
    (*node)[segs.back()] = parsed;
}

RunConfig run_config_from_json(const json& cfg) {
    check_config_keys(cfg);
    RunConfig rc;
    try {
        rc.seed = cfg.at("seed").get<std::uint64_t>();
        rc.backend = cfg.at("backend").get<std::string>();
        const json& task = cfg.at("task");
        rc.feature_dim = task.at("feature_dim").get<int>();
        rc.train_prompts = task.at("train_prompts").get<int>();
        rc.heldout_prompts = task.at("heldout_prompts").get<int>();
        const json& pol = cfg.at("policy");
        rc.hidden_dim = pol.at("hidden_dim").get<int>();
        rc.embed_dim = pol.at("embed_dim").get<int>();
        rc.init_scale = pol.at("init_scale").get<double>();
        rc.max_len = pol.at("max_len").get<int>();
        const json& lp = cfg.at("length_penalty");
        rc.len_cfg.l_max = lp.at("l_max").get<int>();
        rc.len_cfg.l_cache = lp.at("l_cache").get<int>();
        const json& cl = cfg.at("clip");
        rc.clip.eps_low = cl.at("eps_low").get<double>();
        rc.clip.eps_high = cl.at("eps_high").get<double>();
        rc.clip.eps_std = cl.at("eps_std").get<double>();
        const json& s1 = cfg.at("stage1");
        rc.stage1.steps = s1.at("steps").get<int>();
        rc.stage1.batch_prompts = s1.at("batch_prompts").get<int>();
        rc.stage1.G = s1.at("group_size").get<int>();
        rc.stage1.lr = s1.at("lr").get<double>();
        rc.stage1.resample_retries = s1.at("resample_retries").get<int>();
        const json& s2 = cfg.at("stage2");
        rc.stage2.epochs = s2.at("epochs").get<int>();
        rc.stage2.lr = s2.at("lr").get<double>();
        rc.stage2.size = s2.at("size").get<int>();
        rc.stage2.sample_budget = s2.at("sample_budget").get<int>();
        const json& s3 = cfg.at("stage3");
        rc.stage3.steps = s3.at("steps").get<int>();
        rc.stage3.batch_prompts = s3.at("batch_prompts").get<int>();
        rc.stage3.G = s3.at("group_size").get<int>();
        rc.stage3.lr = s3.at("lr").get<double>();
        rc.stage3.resample_retries = s3.at("resample_retries").get<int>();
        rc.stage3.mode_mix = s3.at("mode_mix").get<double>();
        const json& sc = s3.at("scorer");
        rc.stage3.scorer.kind = sc.at("kind").get<std::string>();
        rc.stage3.scorer.strict = sc.at("strict").get<bool>();
        rc.stage3.scorer.url = sc.at("url").get<std::string>();
        rc.stage3.scorer.timeout_ms = sc.at("timeout_ms").get<int>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config is missing a field: ") + e.what());
    }
    rc.raw = cfg;
    rc.validate();
    return rc;
}

void RunConfig::validate() const {
    if (feature_dim < 1) throw ConfigError("task.feature_dim must be positive");
    if (train_prompts < 4) throw ConfigError("task.train_prompts must be at least 4");
    if (heldout_prompts < 1) throw ConfigError("task.heldout_prompts must be positive");
    if (hidden_dim < 1 || embed_dim < 1) throw ConfigError("policy dims must be positive");
    if (!(init_scale > 0.0) || !std::isfinite(init_scale))
        throw ConfigError("policy.init_scale must be positive");
    if (max_len < 1) throw ConfigError("policy.max_len must be positive");
    if (stage2.epochs < 0) throw ConfigError("stage2.epochs must be non-negative");
    if (!(stage2.lr > 0.0) || !std::isfinite(stage2.lr))
        throw ConfigError("stage2.lr must be positive");
    if (stage2.size < 2 || stage2.size % 2 != 0)
        throw ConfigError("stage2.size must be a positive even count (thinking/non-thinking pairs)");
    if (stage2.sample_budget < 1) throw ConfigError("stage2.sample_budget must be positive");
    stage_config(StageId::stage1).validate();
    stage_config(StageId::stage3).validate();
    if (backend != "auto" && backend != "scalar" && backend != "avx2")
        throw ConfigError("backend '" + backend + "' is not one of auto|scalar|avx2");
}

StageConfig RunConfig::stage_config(StageId stage) const {
    StageConfig c;
    c.stage = stage;
    c.clip = clip;
    c.len_cfg = len_cfg;
    c.max_len = max_len;
    switch (stage) {
        case StageId::stage1:
            c.steps = stage1.steps;
            c.batch_prompts = stage1.batch_prompts;
            c.G = stage1.G;
            c.lr = stage1.lr;
            c.resample_retries = stage1.resample_retries;
            c.mode_mix = 1.0;  // every stage-1 prompt runs in thinking mode
            c.seed = mix64(seed, 10, 1);
            break;
        case StageId::stage2:
            c.steps = stage2.epochs;
            c.lr = stage2.lr;
            c.seed = mix64(seed, 10, 2);
            break;
        case StageId::stage3:
            c.steps = stage3.steps;
            c.batch_prompts = stage3.batch_prompts;
            c.G = stage3.G;
            c.lr = stage3.lr;
            c.resample_retries = stage3.resample_retries;
            c.mode_mix = stage3.mode_mix;
            c.scorer = stage3.scorer;
            c.seed = mix64(seed, 10, 3);
            break;
    }
    return c;
}

std::string run_id(const RunConfig& cfg) { return util::hex64(fnv1a64(cfg.raw.dump())); }

// ---------------------------------------------------------------------------
// Toy task

namespace {

std::string padded_id(const std::string& prefix, int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", i);
    return prefix + buf;
}

}  // namespace

std::vector<PromptInstance> draw_prompts(const std::vector<double>& hidden_weights,
                                         std::uint64_t seed, int n, const std::string& id_prefix) {
    const int fd = static_cast<int>(hidden_weights.size());
    if (fd < 1) throw InvalidInputError("hidden weight vector must be non-empty");
    if (n < 1) throw InvalidInputError("prompt pool size must be positive");

    Rng rng(seed);
    int quota_fake = n / 2;            // gold 'B'
    int quota_real = n - quota_fake;   // gold 'A'
    const CanonicalPrompts& cp = canonical_prompts();

    std::vector<PromptInstance> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::vector<double> x(static_cast<std::size_t>(fd));
        char gold = 'A';
        for (;;) {
            double dot = 0.0;
            for (int d = 0; d < fd; ++d) {
                x[static_cast<std::size_t>(d)] = rng.normal();
                dot += hidden_weights[static_cast<std::size_t>(d)] * x[static_cast<std::size_t>(d)];
            }
            if (std::fabs(dot) < 1e-6) continue;  // degenerate margin: redraw
            gold = dot > 0.0 ? 'B' : 'A';
            // Quota per class keeps labels balanced by construction.
            if (gold == 'B' ? quota_fake > 0 : quota_real > 0) break;
        }
        (gold == 'B' ? quota_fake : quota_real) -= 1;

        PromptInstance p;
        p.id = padded_id(id_prefix, i);
        p.modality = (i % 2 == 0) ? "image" : "video";
        p.query = std::string(p.modality == "image" ? cp.user_image : cp.user_video);
        p.features = std::move(x);
        p.gold = gold;
        out.push_back(std::move(p));
    }
    return out;
}

ToyTask make_toy_task(std::uint64_t seed, int feature_dim, int n_prompts) {
    if (feature_dim < 1) throw InvalidInputError("feature_dim must be positive");
    if (n_prompts < 4) throw InvalidInputError("toy task needs at least 4 prompts");
    ToyTask task;
    task.hidden_weights.resize(static_cast<std::size_t>(feature_dim));
    Rng wr(mix64(seed, 11));
    for (double& w : task.hidden_weights) w = wr.normal();
    task.prompts = draw_prompts(task.hidden_weights, mix64(seed, 12), n_prompts, "p");
    return task;
}

// ---------------------------------------------------------------------------
// RL stage core

namespace {

std::size_t think_word_count(const ParsedResponse& parsed) {
    if (!parsed.well_formed) return 0;
    return util::split_ws(parsed.thinking_content).size();
}

// What hybrid_reward penalizes: a well-formed response in the wrong mode.
bool is_hybrid_violation(const ParsedResponse& parsed, ChatMode mode) {
    return parsed.well_formed && mode_compliance(parsed, mode) != ModeCompliance::compliant;
}

StageOutput run_rl_stage(Checkpoint start, const StageConfig& cfg, const ToyTask& task,
                         ThinkingScorer* scorer) {
    cfg.validate();
    if (task.prompts.empty()) throw InvalidInputError("task has no prompts");

    StageOutput out;
    out.ckpt = std::move(start);
    PolicyParams& params = out.ckpt.params;
    const Vocab& vocab = out.ckpt.vocab;

    CountingScorer counting(scorer);
    OptimizerConfig ocfg;
    ocfg.lr = cfg.lr;
    OptimizerState opt = make_optimizer_state(params);
    const int n_prompts = static_cast<int>(task.prompts.size());

    for (int step = 0; step < cfg.steps; ++step) {
        const std::uint64_t step_seed = mix64(cfg.seed, static_cast<std::uint64_t>(step));

        std::vector<RolloutGroup> groups;
        int filtered = 0, skipped = 0;
        double cot_sum = 0.0;
        std::size_t cot_n = 0, viol = 0, traj_n = 0;

        for (int j = 0; j < cfg.batch_prompts; ++j) {
            const PromptInstance& prompt =
                task.prompts[static_cast<std::size_t>((step * cfg.batch_prompts + j) % n_prompts)];
            ChatMode mode = ChatMode::thinking;
            if (cfg.stage == StageId::stage3) {
                Rng mode_rng(mix64(step_seed, fnv1a64(prompt.id), 40));
                mode = mode_rng.bernoulli(cfg.mode_mix) ? ChatMode::thinking
                                                        : ChatMode::non_thinking;
            }

            bool accepted = false;
            for (int attempt = 0; attempt <= cfg.resample_retries; ++attempt) {
                RolloutGroup g =
                    collect_group(params, vocab, prompt, mode, cfg.G, cfg.max_len,
                                  mix64(step_seed, static_cast<std::uint64_t>(attempt)));

                std::vector<ThinkingScore> scores;
                if (cfg.stage == StageId::stage3 && mode == ChatMode::thinking) {
                    scores.resize(static_cast<std::size_t>(cfg.G));
                    for (int ti = 0; ti < cfg.G; ++ti) {
                        const auto& parsed = g.parsed[static_cast<std::size_t>(ti)];
                        const double acc =
                            accuracy_reward(extract_answer_letter(parsed), prompt.gold);
                        // The thinking score only pays off on correct answers;
                        // skip the scorer entirely otherwise.
                        if (acc > 0.0 && scorer != nullptr)
                            scores[static_cast<std::size_t>(ti)] =
                                counting.score(g.texts[static_cast<std::size_t>(ti)]);
                    }
                }
                attach_rewards(g, cfg.stage, scores, cfg.len_cfg);

                for (int ti = 0; ti < g.size(); ++ti) {
                    const auto& parsed = g.parsed[static_cast<std::size_t>(ti)];
                    ++traj_n;
                    if (is_hybrid_violation(parsed, mode)) ++viol;
                    if (mode == ChatMode::thinking) {
                        cot_sum += static_cast<double>(think_word_count(parsed));
                        ++cot_n;
                    }
                }

                if (dynamic_filter(g)) {
                    groups.push_back(std::move(g));
                    accepted = true;
                    break;
                }
                ++filtered;
            }
            if (!accepted) ++skipped;
        }

        std::vector<AdvantageSet> advs;
        advs.reserve(groups.size());
        int min_correct = 0, max_correct = 0;
        double s_fmt = 0, s_ov = 0, s_acc = 0, s_hyb = 0, s_th = 0, s_tot = 0;
        std::size_t acc_traj = 0;
        for (const RolloutGroup& g : groups) {
            std::vector<double> totals;
            totals.reserve(static_cast<std::size_t>(g.size()));
            for (const RewardBreakdown& r : g.rewards) {
                totals.push_back(r.total);
                s_fmt += r.fmt;
                s_ov += r.overlong;
                s_acc += r.acc;
                s_hyb += r.hybrid;
                s_th += r.think;
                s_tot += r.total;
                ++acc_traj;
            }
            advs.push_back(compute_advantages(totals, cfg.clip.eps_std));
            const int c = g.correct_count();
            if (advs.size() == 1) {
                min_correct = max_correct = c;
            } else {
                min_correct = std::min(min_correct, c);
                max_correct = std::max(max_correct, c);
            }
        }

        const PolicyParams before = params;
        ObjectiveResult obj;
        PolicyParams grad = zeros_like(params);
        double gn = 0.0;
        try {
            if (!groups.empty()) obj = dapo_objective_and_grad(groups, advs, params, cfg.clip, &grad);
            gn = grad_norm(grad);
            update_step(params, grad, opt, ocfg, 1.0);
            check_finite(params, std::string(stage_name(cfg.stage)) + " parameters");
        } catch (const NumericFault& e) {
            params = before;  // retain the last good state
            out.fault = e.what();
            break;
        }

        const double inv_tr = acc_traj > 0 ? 1.0 / static_cast<double>(acc_traj) : 0.0;
        json rec{
            {"step", step},
            {"stage", stage_name(cfg.stage)},
            {"seed", step_seed},
            {"objective", obj.objective},
            {"token_count", obj.token_count},
            {"accepted_groups", static_cast<int>(groups.size())},
            {"filtered_groups", filtered},
            {"skipped_prompts", skipped},
            {"min_correct", min_correct},
            {"max_correct", max_correct},
            {"group_size", cfg.G},
            {"mean_reward", s_tot * inv_tr},
            {"mean_fmt", s_fmt * inv_tr},
            {"mean_overlong", s_ov * inv_tr},
            {"mean_acc", s_acc * inv_tr},
            {"mean_hybrid", s_hyb * inv_tr},
            {"mean_think", s_th * inv_tr},
            {"mean_cot_length", cot_n > 0 ? cot_sum / static_cast<double>(cot_n) : 0.0},
            {"cot_trajectories", cot_n},
            {"hybrid_violation_rate",
             traj_n > 0 ? static_cast<double>(viol) / static_cast<double>(traj_n) : 0.0},
            {"grad_norm", gn},
            {"scorer_calls", counting.calls()},
        };
        out.step_log.push_back(std::move(rec));
    }

    out.scorer_calls = counting.calls();
    return out;
}

json lineage_of(const Checkpoint& ckpt) {
    if (!ckpt.meta.is_object() || !ckpt.meta.contains("lineage") ||
        !ckpt.meta.at("lineage").is_array())
        throw LineageError("checkpoint carries no lineage metadata");
    return ckpt.meta.at("lineage");
}

bool lineage_contains(const json& lineage, const std::string& stage) {
    for (const auto& e : lineage)
        if (e.is_string() && e.get<std::string>() == stage) return true;
    return false;
}

json stage_meta(const RunConfig& rc, const char* stage, json lineage, std::uint64_t seed,
                std::size_t steps_done) {
    return json{{"run_id", run_id(rc)},
                {"stage", stage},
                {"lineage", std::move(lineage)},
                {"seed", seed},
                {"steps_completed", steps_done}};
}

// Inverse of detokenize for rendered targets: the trailing turn-close marker
// is dropped (the eos token plays its role in token space).
std::vector<int> tokenize_response(const Vocab& vocab, std::string text,
                                   const TemplateConfig& tpl = {}) {
    if (text.size() >= tpl.turn_close.size() && text.ends_with(tpl.turn_close))
        text.resize(text.size() - tpl.turn_close.size());
    std::vector<int> ids;
    for (const std::string& word : util::split_ws(text)) {
        const int id = vocab.find(word);
        if (id < 0)
            throw InvalidInputError("surface '" + word + "' is not in the vocabulary");
        ids.push_back(id);
    }
    ids.push_back(vocab.eos_id);
    return ids;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stages

StageOutput run_stage1(const RunConfig& rc, const ToyTask& task) {
    rc.validate();
    const StageConfig cfg = rc.stage_config(StageId::stage1);
    const Vocab vocab = default_vocab();
    PolicyDims dims{rc.feature_dim + 1, rc.hidden_dim, rc.embed_dim, vocab.size()};

    Checkpoint start;
    start.params = init_params(dims, vocab.eos_id, mix64(cfg.seed, 5), rc.init_scale);
    start.vocab = vocab;
    start.meta = json::object();

    StageOutput out = run_rl_stage(std::move(start), cfg, task, nullptr);
    out.ckpt.meta =
        stage_meta(rc, "stage1", json::array({"stage1"}), cfg.seed, out.step_log.size());
    return out;
}

std::vector<SftExample> build_sft_set(const Checkpoint& ckpt, const ToyTask& task, int n,
                                      int sample_budget, std::uint64_t seed, int max_len,
                                      const SftKeepRule& keep) {
    if (n < 2 || n % 2 != 0)
        throw ConfigError("sft set size must be a positive even count (thinking/non-thinking pairs)");
    if (sample_budget < 1) throw ConfigError("sft sample_budget must be positive");
    if (max_len < 1) throw ConfigError("max_len must be positive");
    if (task.prompts.empty()) throw InvalidInputError("task has no prompts");

    const SftKeepRule rule = keep ? keep : [](const ParsedResponse& parsed, char gold) {
        return parsed.well_formed && accuracy_reward(extract_answer_letter(parsed), gold) > 0.0;
    };

    const int n_prompts = static_cast<int>(task.prompts.size());
    std::vector<SftExample> out;
    out.reserve(static_cast<std::size_t>(n));
    int draws = 0, kept = 0;
    while (static_cast<int>(out.size()) < n && draws < sample_budget) {
        const PromptInstance& prompt = task.prompts[static_cast<std::size_t>(draws % n_prompts)];
        const Trajectory traj =
            sample(ckpt.params, ckpt.vocab, prompt.features, ChatMode::thinking,
                   mix64(seed, 17, static_cast<std::uint64_t>(draws)), max_len, prompt.id);
        ++draws;

        const std::string text = detokenize(ckpt.vocab, traj.tokens);
        const ParsedResponse parsed =
            parse_response(text, {}, static_cast<std::size_t>(traj.length()));
        if (!rule(parsed, prompt.gold)) continue;
        ++kept;

        const std::string think = util::trim(parsed.thinking_content);
        const std::string answer = util::trim(parsed.answer_content);
        out.push_back({prompt.features, ChatMode::thinking,
                       tokenize_response(ckpt.vocab,
                                         render_response(think, answer, ChatMode::thinking))});
        out.push_back({prompt.features, ChatMode::non_thinking,
                       tokenize_response(ckpt.vocab,
                                         render_response("", answer, ChatMode::non_thinking))});
    }

    if (static_cast<int>(out.size()) < n)
        throw InsufficientDataError("sft sampling yielded " + std::to_string(out.size()) + " of " +
                                    std::to_string(n) + " examples (" + std::to_string(kept) +
                                    " kept of " + std::to_string(draws) + " draws within budget " +
                                    std::to_string(sample_budget) + ")");
    return out;
}

std::string sft_examples_to_jsonl(const std::vector<SftExample>& sft) {
    std::string lines;
    for (const SftExample& ex : sft) {
        lines += json{{"features", ex.features}, {"mode", mode_name(ex.mode)}, {"target", ex.target}}
                     .dump();
        lines += '\n';
    }
    return lines;
}

StageOutput run_stage2_sft(const Checkpoint& ckpt, const std::vector<SftExample>& sft,
                           const RunConfig& rc) {
    rc.validate();
    if (sft.empty()) throw InvalidInputError("stage-2 requires a non-empty example set");
    const json lineage = lineage_of(ckpt);
    if (!lineage_contains(lineage, "stage1"))
        throw LineageError("stage-2 requires a checkpoint descended from stage 1; lineage is " +
                           lineage.dump());

    const StageConfig cfg = rc.stage_config(StageId::stage2);
    StageOutput out;
    out.ckpt = ckpt;
    PolicyParams& params = out.ckpt.params;

    OptimizerConfig ocfg;
    ocfg.lr = cfg.lr;
    OptimizerState opt = make_optimizer_state(params);
    PolicyParams grad = zeros_like(params);

    for (int epoch = 0; epoch < cfg.steps; ++epoch) {
        const PolicyParams before = params;
        try {
            const double loss = sft_loss_and_grad(params, sft, grad);
            const double gn = grad_norm(grad);
            update_step(params, grad, opt, ocfg, -1.0);
            check_finite(params, "stage2 parameters");
            out.step_log.push_back(json{{"epoch", epoch},
                                        {"stage", "stage2"},
                                        {"loss", loss},
                                        {"grad_norm", gn}});
        } catch (const NumericFault& e) {
            params = before;
            out.fault = e.what();
            break;
        }
    }

    double final_loss = 0.0;
    if (out.fault.empty()) {
        PolicyParams scratch = zeros_like(params);
        final_loss = sft_loss_and_grad(params, sft, scratch);
    }

    json new_lineage = lineage;
    new_lineage.push_back("stage2");
    out.ckpt.meta = stage_meta(rc, "stage2", std::move(new_lineage), cfg.seed,
                               out.step_log.size());
    out.ckpt.meta["final_loss"] = final_loss;
    return out;
}

StageOutput run_stage3(const Checkpoint& ckpt, const RunConfig& rc, const ToyTask& task,
                       ThinkingScorer* scorer) {
    rc.validate();
    const json lineage = lineage_of(ckpt);
    if (!lineage_contains(lineage, "stage1"))
        throw LineageError("stage-3 requires a checkpoint descended from stage 1; lineage is " +
                           lineage.dump());

    const StageConfig cfg = rc.stage_config(StageId::stage3);
    std::unique_ptr<ThinkingScorer> owned;
    ThinkingScorer* s = scorer;
    if (s == nullptr) {
        if (cfg.scorer.kind == "stub") {
            owned = std::make_unique<StubScorer>();
        } else if (cfg.scorer.kind == "remote") {
            RemoteScorerConfig rcfg;
            rcfg.url = cfg.scorer.url;
            rcfg.timeout_ms = cfg.scorer.timeout_ms;
            rcfg.strict = cfg.scorer.strict;
            owned = std::make_unique<RemoteScorer>(rcfg);
        }  // "zero": stays null; thinking scores are all zero
        s = owned.get();
    }

    Checkpoint start = ckpt;
    start.meta = json::object();
    StageOutput out = run_rl_stage(std::move(start), cfg, task, s);

    json new_lineage = lineage;
    new_lineage.push_back("stage3");
    out.ckpt.meta = stage_meta(rc, "stage3", std::move(new_lineage), cfg.seed,
                               out.step_log.size());
    return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

double mean_heldout_accuracy(const PolicyParams& params, const Vocab& vocab,
                             const std::vector<PromptInstance>& prompts, ChatMode mode,
                             std::uint64_t seed, int max_len) {
    if (prompts.empty()) throw InvalidInputError("no prompts to evaluate");
    double acc = 0.0;
    for (const PromptInstance& p : prompts) {
        const Trajectory traj =
            sample(params, vocab, p.features, mode, mix64(seed, fnv1a64(p.id)), max_len, p.id);
        const ParsedResponse parsed = parse_response(detokenize(vocab, traj.tokens), {},
                                                     static_cast<std::size_t>(traj.length()));
        acc += accuracy_reward(extract_answer_letter(parsed), p.gold);
    }
    return acc / static_cast<double>(prompts.size());
}

double compliance_rate(const PolicyParams& params, const Vocab& vocab,
                       const std::vector<PromptInstance>& prompts, ChatMode mode,
                       std::uint64_t seed, int max_len) {
    if (prompts.empty()) throw InvalidInputError("no prompts to evaluate");
    std::size_t ok = 0;
    for (const PromptInstance& p : prompts) {
        const Trajectory traj =
            sample(params, vocab, p.features, mode, mix64(seed, fnv1a64(p.id)), max_len, p.id);
        const ParsedResponse parsed = parse_response(detokenize(vocab, traj.tokens), {},
                                                     static_cast<std::size_t>(traj.length()));
        if (mode_compliance(parsed, mode) == ModeCompliance::compliant) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(prompts.size());
}

std::vector<PredictionRecord> predict_prompts(const PolicyParams& params, const Vocab& vocab,
                                              const std::vector<PromptInstance>& prompts,
                                              ChatMode mode, std::uint64_t seed, int max_len) {
    std::vector<PredictionRecord> out;
    out.reserve(prompts.size());
    for (const PromptInstance& p : prompts) {
        const Trajectory traj =
            sample(params, vocab, p.features, mode, mix64(seed, fnv1a64(p.id)), max_len, p.id);
        const ParsedResponse parsed = parse_response(detokenize(vocab, traj.tokens), {},
                                                     static_cast<std::size_t>(traj.length()));
        PredictionRecord rec;
        rec.id = p.id;
        rec.modality = modality_from_name(p.modality);
        const auto gold = label_from_letter(p.gold);
        if (!gold) throw InvalidInputError(std::string("prompt gold letter '") + p.gold +
                                           "' maps to no label");
        rec.gold = *gold;
        rec.predicted = label_from_letter(extract_answer_letter(parsed));
        rec.mode = mode;
        rec.well_formed = parsed.well_formed;
        out.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Think-length tracking

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

CotSummary track_cot_length(const std::vector<json>& step_log) {
    if (step_log.empty()) throw InvalidInputError("step log is empty");
    CotSummary out;
    for (const json& rec : step_log) {
        if (!rec.contains("cot_trajectories")) continue;
        if (rec.at("cot_trajectories").get<std::size_t>() == 0) continue;
        out.series.push_back(rec.at("mean_cot_length").get<double>());
    }
    const std::size_t n = out.series.size();
    if (n >= 4) {
        for (std::size_t q = 0; q < 4; ++q) {
            const std::size_t lo = q * n / 4;
            const std::size_t hi = (q + 1) * n / 4;
            out.quartile_medians.push_back(median_of(
                std::vector<double>(out.series.begin() + static_cast<std::ptrdiff_t>(lo),
                                    out.series.begin() + static_cast<std::ptrdiff_t>(hi))));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

std::string steps_to_jsonl(const std::vector<json>& log) {
    std::string out;
    for (const json& rec : log) {
        out += rec.dump();
        out += '\n';
    }
    return out;
}

json stage_entry(const std::string& out_dir, const std::string& name, const StageOutput& so,
                 double wall_seconds) {
    const std::string dir = out_dir + "/" + name;
    util::ensure_dir(dir);
    save_checkpoint(dir + "/checkpoint.json", so.ckpt);
    util::write_text_file_atomic(dir + "/steps.jsonl", steps_to_jsonl(so.step_log));
    json e{{"checkpoint", name + "/checkpoint.json"},
           {"steps_log", name + "/steps.jsonl"},
           {"checkpoint_fnv1a64", util::hex64(util::fnv1a64_file(dir + "/checkpoint.json"))},
           {"steps_fnv1a64", util::hex64(util::fnv1a64_file(dir + "/steps.jsonl"))},
           {"wall_clock_seconds", wall_seconds},
           {"steps_completed", so.step_log.size()},
           {"scorer_calls", so.scorer_calls}};
    if (!so.fault.empty()) e["fault"] = so.fault;
    return e;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Checkpoint load_predecessor(const std::string& out_dir, int stage) {
    std::vector<std::string> candidates;
    if (stage == 2) {
        candidates = {out_dir + "/stage1/checkpoint.json"};
    } else {
        candidates = {out_dir + "/stage2/checkpoint.json", out_dir + "/stage1/checkpoint.json"};
    }
    for (const std::string& path : candidates) {
        try {
            return load_checkpoint(path);
        } catch (const IoError&) {
            continue;
        }
    }
    throw ConfigError("resuming stage " + std::to_string(stage) + " needs a checkpoint under " +
                      out_dir + " from an earlier stage");
}

}  // namespace

json run_pipeline(const RunConfig& rc, const PipelineOptions& opts) {
    rc.validate();
    if (opts.out_dir.empty()) throw ConfigError("pipeline needs an output directory");
    if (opts.stages.empty()) throw ConfigError("pipeline needs at least one stage");
    for (std::size_t i = 0; i < opts.stages.size(); ++i) {
        if (opts.stages[i] < 1 || opts.stages[i] > 3)
            throw ConfigError("stages must come from {1,2,3}");
        if (i > 0 && opts.stages[i] <= opts.stages[i - 1])
            throw ConfigError("stages must be strictly ascending");
    }

    kernels::set_backend(kernels::resolve_backend(rc.backend));
    util::ensure_dir(opts.out_dir);

    const ToyTask task = make_toy_task(mix64(rc.seed, 1), rc.feature_dim, rc.train_prompts);
    const std::vector<PromptInstance> heldout =
        draw_prompts(task.hidden_weights, mix64(rc.seed, 2), rc.heldout_prompts, "h");

    json manifest{{"kind", "run_manifest"},
                  {"version", 1},
                  {"run_id", run_id(rc)},
                  {"backend", kernels::backend_name(kernels::active_backend())},
                  {"config", rc.raw},
                  {"stages", json::object()}};

    // Resuming keeps the manifest entries of stages that are not rerun.
    try {
        const json prev = util::json_from_file(opts.out_dir + "/manifest.json");
        if (prev.is_object() && prev.contains("stages") && prev.at("stages").is_object())
            for (const auto& [k, v] : prev.at("stages").items()) manifest["stages"][k] = v;
        if (prev.is_object() && prev.contains("eval")) manifest["eval"] = prev.at("eval");
    } catch (const Error&) {
        // no readable prior manifest: fresh run
    }

    auto contains = [&](int s) {
        for (int x : opts.stages)
            if (x == s) return true;
        return false;
    };

    Checkpoint current;
    bool have_current = false;
    std::string fault;

    if (contains(1) && fault.empty()) {
        const auto t0 = std::chrono::steady_clock::now();
        StageOutput so = run_stage1(rc, task);
        json entry = stage_entry(opts.out_dir, "stage1", so, seconds_since(t0));
        if (so.fault.empty())
            entry["final_heldout_accuracy"] =
                mean_heldout_accuracy(so.ckpt.params, so.ckpt.vocab, heldout, ChatMode::thinking,
                                      mix64(rc.seed, 30), rc.max_len);
        manifest["stages"]["stage1"] = std::move(entry);
        fault = so.fault;
        current = std::move(so.ckpt);
        have_current = true;
    }

    if (contains(2) && fault.empty()) {
        if (!have_current) {
            current = load_predecessor(opts.out_dir, 2);
            have_current = true;
        }
        const auto t0 = std::chrono::steady_clock::now();
        const std::vector<SftExample> sft =
            build_sft_set(current, task, rc.stage2.size, rc.stage2.sample_budget,
                          mix64(rc.seed, 20), rc.max_len);
        util::ensure_dir(opts.out_dir + "/sft");
        util::write_text_file_atomic(opts.out_dir + "/sft/examples.jsonl",
                                     sft_examples_to_jsonl(sft));

        StageOutput so = run_stage2_sft(current, sft, rc);
        json entry = stage_entry(opts.out_dir, "stage2", so, seconds_since(t0));
        entry["sft_examples"] = "sft/examples.jsonl";
        entry["sft_size"] = sft.size();
        if (so.fault.empty()) entry["final_loss"] = so.ckpt.meta.at("final_loss");
        manifest["stages"]["stage2"] = std::move(entry);
        fault = so.fault;
        current = std::move(so.ckpt);
    }

    if (contains(3) && fault.empty()) {
        if (!have_current) {
            current = load_predecessor(opts.out_dir, 3);
            have_current = true;
        }
        const auto t0 = std::chrono::steady_clock::now();
        StageOutput so = run_stage3(current, rc, task, opts.scorer);
        json entry = stage_entry(opts.out_dir, "stage3", so, seconds_since(t0));
        if (so.fault.empty()) {
            entry["final_heldout_accuracy"] =
                mean_heldout_accuracy(so.ckpt.params, so.ckpt.vocab, heldout, ChatMode::thinking,
                                      mix64(rc.seed, 30), rc.max_len);
            const CotSummary cot = track_cot_length(so.step_log);
            entry["cot_quartile_medians"] = cot.quartile_medians;
        }
        manifest["stages"]["stage3"] = std::move(entry);
        fault = so.fault;
        current = std::move(so.ckpt);
    }

    if (have_current && fault.empty()) {
        util::ensure_dir(opts.out_dir + "/eval");
        const std::vector<PredictionRecord> preds =
            predict_prompts(current.params, current.vocab, heldout, ChatMode::thinking,
                            mix64(rc.seed, 31), rc.max_len);
        emit_predictions(opts.out_dir + "/eval/predictions.jsonl", preds);
        const SubcategoryReport report = evaluate(preds);
        const std::string eval_stage = current.meta.is_object()
                                           ? current.meta.value("stage", std::string("unknown"))
                                           : std::string("unknown");
        emit_report(opts.out_dir + "/eval/report.json", report,
                    json{{"run_id", run_id(rc)}, {"stage", eval_stage}});
        manifest["eval"] = json{{"report", "eval/report.json"},
                                {"predictions", "eval/predictions.jsonl"},
                                {"overall_accuracy", report.overall_acc}};
    }

    util::json_to_file_atomic(opts.out_dir + "/manifest.json", manifest);
    if (!fault.empty()) throw NumericFault(fault);
    return manifest;
}

}  // namespace postrl
