// Subcommand front end over the training library: train, sft-build, eval,
// validate-response, gradcheck, and scorer-stub-serve share one config path
// with dotted-key overrides; every failure maps onto the exit-code contract.

#include "postrl/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "postrl/chat_template.hpp"
#include "postrl/dapo.hpp"
#include "postrl/errors.hpp"
#include "postrl/kernels.hpp"
#include "postrl/orchestrator.hpp"
#include "postrl/policy.hpp"
#include "postrl/rewards.hpp"
#include "postrl/rng.hpp"
#include "postrl/scorer.hpp"
#include "postrl/util.hpp"

namespace postrl {
namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Shared plumbing

RunConfig config_from_cli(const std::string& config_path, const std::vector<std::string>& sets) {
    json cfg = config_path.empty() ? default_run_config() : load_run_config_file(config_path);
    for (const std::string& s : sets) apply_override(cfg, s);
    return run_config_from_json(cfg);  // validates and snapshots the merged tree
}

template <typename... Args>
std::string fmt(const char* spec, Args... args) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), spec, args...);
    return buf;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string config;
    std::vector<std::string> sets;
    std::string stage = "all";
    std::string out;
    std::string resume;
};

int cmd_train(const TrainArgs& a) {
    const RunConfig rc = config_from_cli(a.config, a.sets);
    PipelineOptions opts;
    opts.out_dir = a.out;
    util::ensure_dir(a.out);

    if (!a.resume.empty()) {
        if (a.stage == "1")
            throw ConfigError("--resume does not apply to stage 1 (it trains from scratch)");
        const Checkpoint parent = load_checkpoint(a.resume);
        const std::string from =
            parent.meta.is_object() ? parent.meta.value("stage", std::string()) : std::string();
        if (from != "stage1" && from != "stage2")
            throw LineageError("--resume expects a stage-1 or stage-2 checkpoint, got stage '" +
                               from + "'");
        util::ensure_dir(a.out + "/" + from);
        save_checkpoint(a.out + "/" + from + "/checkpoint.json", parent);
        if (a.stage == "all")  // continue from wherever the parent left off
            opts.stages = from == "stage1" ? std::vector<int>{2, 3} : std::vector<int>{3};
    }
    if (a.stage != "all") opts.stages = {a.stage[0] - '0'};

    const json manifest = run_pipeline(rc, opts);
    std::cout << "run " << manifest.at("run_id").get<std::string>() << " (backend "
              << manifest.at("backend").get<std::string>() << ")\n";
    for (const char* name : {"stage1", "stage2", "stage3"}) {
        if (!manifest.at("stages").contains(name)) continue;
        const json& e = manifest.at("stages").at(name);
        std::cout << name << ": " << e.at("steps_completed").get<int>()
                  << (std::string(name) == "stage2" ? " epochs, " : " steps, ")
                  << fmt("%.2f", e.at("wall_clock_seconds").get<double>()) << "s";
        if (e.contains("final_heldout_accuracy"))
            std::cout << ", heldout acc "
                      << fmt("%.3f", e.at("final_heldout_accuracy").get<double>());
        if (e.contains("final_loss"))
            std::cout << ", final loss " << fmt("%.4f", e.at("final_loss").get<double>());
        std::cout << "\n";
    }
    if (manifest.contains("eval"))
        std::cout << "eval: overall accuracy "
                  << fmt("%.3f", manifest.at("eval").at("overall_accuracy").get<double>()) << "\n";
    std::cout << "manifest: " << a.out << "/manifest.json\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sft-build

struct SftBuildArgs {
    std::string config;
    std::vector<std::string> sets;
    std::string ckpt;
    std::string out;
    int size = -1;    // negative: stage2.size from the config
    int budget = -1;  // negative: stage2.sample_budget
};

int cmd_sft_build(const SftBuildArgs& a) {
    const RunConfig rc = config_from_cli(a.config, a.sets);
    kernels::set_backend(kernels::resolve_backend(rc.backend));
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const ToyTask task = make_toy_task(mix64(rc.seed, 1), rc.feature_dim, rc.train_prompts);
    const int n = a.size < 0 ? rc.stage2.size : a.size;
    const int budget = a.budget < 0 ? rc.stage2.sample_budget : a.budget;
    const std::vector<SftExample> sft =
        build_sft_set(ckpt, task, n, budget, mix64(rc.seed, 20), rc.max_len);
    const std::filesystem::path parent = std::filesystem::path(a.out).parent_path();
    if (!parent.empty()) util::ensure_dir(parent);
    util::write_text_file_atomic(a.out, sft_examples_to_jsonl(sft));
    std::cout << "wrote " << sft.size() << " examples to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string config;
    std::vector<std::string> sets;
    std::string ckpt;
    std::string predictions;
    std::string out;
    std::string mode = "thinking";
};

int cmd_eval(const EvalArgs& a) {
    if (a.ckpt.empty() == a.predictions.empty())
        throw ConfigError("eval needs exactly one of --ckpt or --predictions");
    const RunConfig rc = config_from_cli(a.config, a.sets);
    util::ensure_dir(a.out);

    std::vector<PredictionRecord> records;
    json meta{{"run_id", run_id(rc)}};
    if (!a.ckpt.empty()) {
        kernels::set_backend(kernels::resolve_backend(rc.backend));
        const Checkpoint ckpt = load_checkpoint(a.ckpt);
        const ToyTask task = make_toy_task(mix64(rc.seed, 1), rc.feature_dim, rc.train_prompts);
        const std::vector<PromptInstance> heldout =
            draw_prompts(task.hidden_weights, mix64(rc.seed, 2), rc.heldout_prompts, "h");
        records = predict_prompts(ckpt.params, ckpt.vocab, heldout, mode_from_name(a.mode),
                                  mix64(rc.seed, 31), rc.max_len);
        emit_predictions(a.out + "/predictions.jsonl", records);
        meta["stage"] = ckpt.meta.is_object() ? ckpt.meta.value("stage", std::string("unknown"))
                                              : std::string("unknown");
        meta["mode"] = a.mode;
        meta["source"] = a.ckpt;
    } else {
        records = ingest_predictions(a.predictions);
        meta["source"] = a.predictions;
    }

    const SubcategoryReport rep = evaluate(records);
    emit_report(a.out + "/report.json", rep, meta);
    const json rj = report_to_json(rep, meta);
    std::cout << "evaluated " << rep.total << " predictions: overall acc "
              << rj.at("overall").at("acc").get<double>() << "%, f1 "
              << rj.at("f1").at("f1").get<double>() << "%\n";
    std::cout << "report: " << a.out << "/report.json\n";
    return 0;
}

// ---------------------------------------------------------------------------
// validate-response

struct ValidateArgs {
    std::string config;
    std::vector<std::string> sets;
    std::string file;
    int stage = 3;
    std::string mode = "thinking";
    std::string gold;
};

int cmd_validate_response(const ValidateArgs& a) {
    if (a.stage != 1 && a.stage != 3)
        throw ConfigError("--stage must be 1 or 3 (stage 2 is sft and has no rewards)");
    const RunConfig rc = config_from_cli(a.config, a.sets);
    std::string text;
    if (!a.file.empty())
        text = util::read_text_file(a.file);
    else
        text.assign(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>());

    // Whitespace tokens stand in for the sampler's per-token raw length.
    const std::size_t raw_length = util::split_ws(text).size();
    const ParsedResponse resp = parse_response(text, {}, raw_length);
    const std::optional<char> letter = extract_answer_letter(resp);
    std::cout << "well_formed " << (resp.well_formed ? "true" : "false") << "\n";
    std::cout << "letter " << (letter ? std::string(1, *letter) : std::string("none")) << "\n";
    std::cout << "compliance[thinking] "
              << compliance_name(mode_compliance(resp, ChatMode::thinking)) << "\n";
    std::cout << "compliance[non_thinking] "
              << compliance_name(mode_compliance(resp, ChatMode::non_thinking)) << "\n";
    std::cout << "raw_length " << raw_length << "\n";

    if (!a.gold.empty()) {
        StubScorer stub;
        const RewardBreakdown rb = assess_response(resp, text, mode_from_name(a.mode), a.gold[0],
                                                   stage_from_number(a.stage), rc.len_cfg, &stub);
        std::cout << "fmt " << rb.fmt << "\noverlong " << rb.overlong << "\nacc " << rb.acc
                  << "\nhybrid " << rb.hybrid << "\nthink " << rb.think << "\ntotal " << rb.total
                  << "\n";
    } else {
        std::cout << "fmt " << format_reward(resp) << "\noverlong "
                  << soft_overlong(static_cast<double>(raw_length), rc.len_cfg) << "\n";
        std::cout << "note: pass --gold A|B for acc, hybrid, think, and the stage total\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
    std::string config;
    std::vector<std::string> sets;
    int trials = 5;
};

std::vector<double> random_features(int dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> f(static_cast<std::size_t>(dim));
    for (double& v : f) v = rng.uniform(-1.0, 1.0);
    return f;
}

// Central-difference sweep over every coordinate, reported per block; the
// denominator floor keeps ratios meaningful when both sides are near zero.
std::vector<double> block_max_rel_err(PolicyParams& params, const PolicyParams& analytic,
                                      const std::function<double(const PolicyParams&)>& f) {
    constexpr double h = 1e-5;
    const auto blocks = param_blocks(params);
    const auto grads = param_blocks(analytic);
    std::vector<double> errs(blocks.size(), 0.0);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        std::vector<double>& data = *blocks[b].data;
        const std::vector<double>& grad = *grads[b].data;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + h;
            const double fp = f(params);
            data[i] = orig - h;
            const double fm = f(params);
            data[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double denom = std::max({1e-3, std::abs(fd), std::abs(grad[i])});
            errs[b] = std::max(errs[b], std::abs(fd - grad[i]) / denom);
        }
    }
    return errs;
}

int cmd_gradcheck(const GradcheckArgs& a) {
    if (a.trials < 1) throw ConfigError("gradcheck needs --trials >= 1");
    const RunConfig rc = config_from_cli(a.config, a.sets);
    kernels::set_backend(kernels::resolve_backend(rc.backend));
    const Vocab vocab = default_vocab();
    const PolicyDims dims{rc.feature_dim + 1, rc.hidden_dim, rc.embed_dim, vocab.size()};

    PolicyParams probe = init_params(dims, vocab.eos_id, 0, rc.init_scale);
    const std::size_t n_blocks = param_blocks(probe).size();
    const char* checks[] = {"log_prob_grad", "sft_grad", "dapo_grad"};
    std::vector<std::vector<double>> worst(3, std::vector<double>(n_blocks, 0.0));
    auto fold = [](std::vector<double>& acc, const std::vector<double>& e) {
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = std::max(acc[i], e[i]);
    };

    for (int t = 0; t < a.trials; ++t) {
        const std::uint64_t st = mix64(rc.seed, 50, static_cast<std::uint64_t>(t));
        PolicyParams params = init_params(dims, vocab.eos_id, mix64(st, 1), rc.init_scale);
        const ChatMode mode = t % 2 ? ChatMode::non_thinking : ChatMode::thinking;
        const std::vector<double> feats = random_features(rc.feature_dim, mix64(st, 2));

        // sampled-sequence log-likelihood
        const Trajectory traj = sample(params, vocab, feats, mode, mix64(st, 3), rc.max_len);
        {
            const PolicyParams analytic = grad_log_prob(params, feats, mode, traj.tokens);
            fold(worst[0], block_max_rel_err(params, analytic, [&](const PolicyParams& p) {
                     double s = 0.0;
                     for (double lp : log_prob(p, feats, mode, traj.tokens)) s += lp;
                     return s;
                 }));
        }

        // mixed-mode sft batch loss
        {
            std::vector<SftExample> batch;
            for (int j = 0; j < 4; ++j) {
                const ChatMode m = j % 2 ? ChatMode::non_thinking : ChatMode::thinking;
                const std::vector<double> fe = random_features(rc.feature_dim, mix64(st, 4, j));
                batch.push_back(
                    {fe, m, sample(params, vocab, fe, m, mix64(st, 5, j), rc.max_len).tokens});
            }
            PolicyParams analytic = zeros_like(params);
            sft_loss_and_grad(params, batch, analytic);
            fold(worst[1], block_max_rel_err(params, analytic, [&](const PolicyParams& p) {
                     PolicyParams scratch = zeros_like(p);
                     return sft_loss_and_grad(p, batch, scratch);
                 }));
        }

        // clipped objective; synthetic non-degenerate advantages stand in for
        // reward normalization so the surrogate has signal on random rollouts
        {
            std::vector<RolloutGroup> groups;
            std::vector<AdvantageSet> advs;
            for (int g = 0; g < 2; ++g) {
                PromptInstance prompt;
                prompt.id = "gc" + std::to_string(t) + "_" + std::to_string(g);
                prompt.features = random_features(rc.feature_dim, mix64(st, 6, g));
                const ChatMode gm = g % 2 ? ChatMode::non_thinking : ChatMode::thinking;
                groups.push_back(
                    collect_group(params, vocab, prompt, gm, 4, rc.max_len, mix64(st, 7, g)));
                advs.push_back(compute_advantages({1.0, 0.0, 0.0, 1.0}, rc.clip.eps_std));
            }
            PolicyParams analytic = zeros_like(params);
            dapo_objective_and_grad(groups, advs, params, rc.clip, &analytic);
            fold(worst[2], block_max_rel_err(params, analytic, [&](const PolicyParams& p) {
                     return dapo_objective_and_grad(groups, advs, p, rc.clip, nullptr).objective;
                 }));
        }
    }

    std::cout << "gradcheck: " << a.trials << " trials, seed " << rc.seed << ", "
              << param_count(probe) << " params\n";
    std::cout << fmt("%-16s", "check");
    for (const auto& b : param_blocks(probe)) std::cout << fmt("  %8s", b.name);
    std::cout << "\n";
    double overall = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
        std::cout << fmt("%-16s", checks[c]);
        for (double v : worst[c]) {
            std::cout << fmt("  %8.1e", v);
            overall = std::max(overall, v);
        }
        std::cout << "\n";
    }
    const bool ok = overall < 1e-4;
    std::cout << fmt("max relative error %.2e (threshold 1e-04): ", overall)
              << (ok ? "PASS" : "FAIL") << "\n";
    return ok ? 0 : 4;
}

// ---------------------------------------------------------------------------
// scorer-stub-serve

struct ServeArgs {
    std::string host = "127.0.0.1";
    int port = 8787;
    std::string path = "/score";
};

int cmd_scorer_stub_serve(const ServeArgs& a) {
    StubScorerServer server;
    const int port = server.start(a.host, a.port, a.path);
    std::cout << "serving stub scorer at http://" << a.host << ":" << port << a.path << std::endl;
    for (;;) std::this_thread::sleep_for(std::chrono::seconds(60));
}

// ---------------------------------------------------------------------------
// wiring

void add_config_opts(CLI::App* sub, std::string* config, std::vector<std::string>* sets) {
    sub->add_option("--config", *config, "run config json, merged over built-in defaults")
        ->check(CLI::ExistingFile);
    sub->add_option("--set", *sets, "dotted-key override like stage1.lr=0.01 (repeatable)")
        ->type_size(1)
        ->allow_extra_args(false);
}

bool usage_error(const std::exception& e) {
    return dynamic_cast<const ConfigError*>(&e) != nullptr ||
           dynamic_cast<const InvalidInputError*>(&e) != nullptr ||
           dynamic_cast<const LineageError*>(&e) != nullptr ||
           dynamic_cast<const IngestError*>(&e) != nullptr ||
           dynamic_cast<const InsufficientDataError*>(&e) != nullptr;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"rl post-training pipeline on a synthetic real/fake detection task"};
    app.require_subcommand(1);

    TrainArgs targs;
    CLI::App* train =
        app.add_subcommand("train", "run training stages and write checkpoints, logs, a manifest");
    add_config_opts(train, &targs.config, &targs.sets);
    train->add_option("--stage", targs.stage, "stage to run: 1, 2, 3, or all")
        ->check(CLI::IsMember({"1", "2", "3", "all"}));
    train->add_option("--out", targs.out, "output directory")->required();
    train->add_option("--resume", targs.resume, "parent checkpoint to continue from")
        ->check(CLI::ExistingFile);

    SftBuildArgs sargs;
    CLI::App* sftb =
        app.add_subcommand("sft-build", "sample a checkpoint into a mode-paired example file");
    add_config_opts(sftb, &sargs.config, &sargs.sets);
    sftb->add_option("--ckpt", sargs.ckpt, "source checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    sftb->add_option("--out", sargs.out, "output jsonl path")->required();
    sftb->add_option("--size", sargs.size, "examples to emit (default: stage2.size)");
    sftb->add_option("--budget", sargs.budget, "sampling budget (default: stage2.sample_budget)");

    EvalArgs eargs;
    CLI::App* eval = app.add_subcommand(
        "eval", "evaluate a checkpoint on held-out prompts, or score a prediction file");
    add_config_opts(eval, &eargs.config, &eargs.sets);
    eval->add_option("--ckpt", eargs.ckpt, "checkpoint to sample predictions from")
        ->check(CLI::ExistingFile);
    eval->add_option("--predictions", eargs.predictions, "existing prediction jsonl to score")
        ->check(CLI::ExistingFile);
    eval->add_option("--out", eargs.out, "output directory for predictions and report")
        ->required();
    eval->add_option("--mode", eargs.mode, "sampling mode: thinking or non_thinking")
        ->check(CLI::IsMember({"thinking", "non_thinking"}));

    ValidateArgs vargs;
    CLI::App* val = app.add_subcommand(
        "validate-response", "parse one response and report grammar, compliance, and rewards");
    add_config_opts(val, &vargs.config, &vargs.sets);
    val->add_option("--file", vargs.file, "response text file (default: stdin)")
        ->check(CLI::ExistingFile);
    val->add_option("--stage", vargs.stage, "reward stage: 1 or 3");
    val->add_option("--mode", vargs.mode, "requested mode for hybrid/thinking rewards")
        ->check(CLI::IsMember({"thinking", "non_thinking"}));
    val->add_option("--gold", vargs.gold, "gold answer letter")->check(CLI::IsMember({"A", "B"}));

    GradcheckArgs gargs;
    CLI::App* gc =
        app.add_subcommand("gradcheck", "finite-difference audit of the analytic gradients");
    add_config_opts(gc, &gargs.config, &gargs.sets);
    gc->add_option("--trials", gargs.trials, "random trials per check (default 5)");

    ServeArgs srv;
    CLI::App* serve = app.add_subcommand("scorer-stub-serve", "serve the stub scorer over http");
    serve->add_option("--host", srv.host, "bind address (default 127.0.0.1)");
    serve->add_option("--port", srv.port, "port; 0 picks a free one (default 8787)");
    serve->add_option("--path", srv.path, "route (default /score)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) return cmd_train(targs);
        if (sftb->parsed()) return cmd_sft_build(sargs);
        if (eval->parsed()) return cmd_eval(eargs);
        if (val->parsed()) return cmd_validate_response(vargs);
        if (gc->parsed()) return cmd_gradcheck(gargs);
        if (serve->parsed()) return cmd_scorer_stub_serve(srv);
    } catch (const std::exception& e) {
        std::cerr << "postrl: " << e.what() << "\n";
        return usage_error(e) ? 2 : 3;
    }
    return 2;  // unreachable: require_subcommand(1)
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("postrl");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace postrl
