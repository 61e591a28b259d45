// Helpers shared by the orchestrator and cli suites: scratch directories, a
// tiny fast pipeline config, and a hand-built near-deterministic chain policy.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "postrl/orchestrator.hpp"
#include "postrl/policy.hpp"
#include "postrl/util.hpp"

namespace support {

inline std::string tmp_dir(const std::string& leaf) {
    const std::string dir = std::string(POSTRL_SOURCE_DIR) + "/build/test_tmp/" + leaf;
    std::filesystem::remove_all(dir);
    postrl::util::ensure_dir(dir);
    return dir;
}

inline nlohmann::json tiny_cfg_json() {
    nlohmann::json j = postrl::default_run_config();
    j["seed"] = 777;
    j["task"] = {{"feature_dim", 4}, {"train_prompts", 16}, {"heldout_prompts", 8}};
    j["policy"] = {{"hidden_dim", 10}, {"embed_dim", 10}, {"init_scale", 0.1}, {"max_len", 16}};
    j["stage1"] = {{"steps", 6},
                   {"batch_prompts", 4},
                   {"group_size", 4},
                   {"lr", 0.05},
                   {"resample_retries", 2}};
    j["stage2"] = {{"epochs", 300}, {"lr", 0.005}, {"size", 16}, {"sample_budget", 512}};
    j["stage3"]["steps"] = 4;
    j["stage3"]["batch_prompts"] = 4;
    j["stage3"]["group_size"] = 4;
    j["stage3"]["lr"] = 0.02;
    return j;
}

inline postrl::RunConfig tiny_rc() { return postrl::run_config_from_json(tiny_cfg_json()); }

inline bool params_equal(const postrl::PolicyParams& a, const postrl::PolicyParams& b) {
    const auto ab = postrl::param_blocks(a);
    const auto bb = postrl::param_blocks(b);
    for (std::size_t i = 0; i < ab.size(); ++i)
        if (*ab[i].data != *bb[i].data) return false;
    return true;
}

// A hand-built near-deterministic policy: hidden and embed widths equal the
// vocab size, the state depends only on the previous token, and the output
// weights walk the chain  eos -> <think> -> hmm. -> </think> -> <answer> ->
// {A,B} (50/50) -> </answer> -> eos.  Features are ignored entirely.
inline postrl::Checkpoint crafted_ckpt() {
    using namespace postrl;
    Checkpoint c;
    c.vocab = default_vocab();
    const int V = c.vocab.size();
    PolicyDims dims{5, V, V, V};  // matches feature_dim 4 tasks
    c.params.dims = dims;
    c.params.bos_id = c.vocab.eos_id;
    const auto sz = [](int r, int cdim) { return static_cast<std::size_t>(r * cdim); };
    c.params.w_x.assign(sz(V, 5), 0.0);
    c.params.w_h.assign(sz(V, V), 0.0);
    c.params.w_e.assign(sz(V, V), 0.0);
    c.params.embed.assign(sz(V, V), 0.0);
    c.params.b.assign(static_cast<std::size_t>(V), 0.0);
    c.params.w_o.assign(sz(V, V), 0.0);
    for (int i = 0; i < V; ++i) {
        c.params.w_e[static_cast<std::size_t>(i * V + i)] = 3.0;
        c.params.embed[static_cast<std::size_t>(i * V + i)] = 1.0;
    }
    const int to = c.vocab.find("<think>");
    const int tc = c.vocab.find("</think>");
    const int ao = c.vocab.find("<answer>");
    const int ac = c.vocab.find("</answer>");
    const int a = c.vocab.find("A");
    const int b = c.vocab.find("B");
    const int hmm = c.vocab.find("hmm.");
    const int eos = c.vocab.eos_id;
    const auto arc = [&](int prev, int next) {
        c.params.w_o[static_cast<std::size_t>(next * V + prev)] = 20.0;
    };
    arc(eos, to);
    arc(to, hmm);
    arc(hmm, tc);
    arc(tc, ao);
    arc(ao, a);
    arc(ao, b);  // equal weight: the answer letter is a fair coin
    arc(a, ac);
    arc(b, ac);
    arc(ac, eos);
    c.meta = nlohmann::json{{"run_id", "crafted"},
                            {"stage", "stage1"},
                            {"lineage", nlohmann::json::array({"stage1"})},
                            {"seed", 0},
                            {"steps_completed", 0}};
    return c;
}

}  // namespace support
