#include "postrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "postrl/errors.hpp"
#include "postrl/kernels.hpp"
#include "postrl/rng.hpp"
#include "postrl/util.hpp"

namespace postrl {

namespace {

namespace k = kernels;

// Shared forward step so sampling and scoring agree bitwise.
struct StepWork {
    std::vector<double> h_prev, h, pre, logits, exps;

    void resize(const PolicyDims& d) {
        h_prev.assign(static_cast<std::size_t>(d.hidden_dim), 0.0);
        h.assign(static_cast<std::size_t>(d.hidden_dim), 0.0);
        pre.assign(static_cast<std::size_t>(d.hidden_dim), 0.0);
        logits.assign(static_cast<std::size_t>(d.vocab_size), 0.0);
        exps.assign(static_cast<std::size_t>(d.vocab_size), 0.0);
    }
};

void check_token_id(const PolicyParams& p, int id) {
    if (id < 0 || id >= p.dims.vocab_size)
        throw InvalidInputError("token id " + std::to_string(id) + " outside vocab of size " +
                                std::to_string(p.dims.vocab_size));
}

std::vector<double> encoded_input(const PolicyParams& p, const std::vector<double>& features,
                                  ChatMode mode) {
    std::vector<double> x = encode_features(features, mode);
    if (static_cast<int>(x.size()) != p.dims.input_dim)
        throw InvalidInputError("feature vector of size " + std::to_string(features.size()) +
                                " does not match policy input_dim " +
                                std::to_string(p.dims.input_dim));
    return x;
}

// h = tanh(w_x x + w_h h_prev + w_e embed[prev] + b); logits = w_o h.
void step_forward(const PolicyParams& p, const std::vector<double>& x, int prev_id,
                  StepWork& w) {
    const auto H = static_cast<std::size_t>(p.dims.hidden_dim);
    const auto I = static_cast<std::size_t>(p.dims.input_dim);
    const auto E = static_cast<std::size_t>(p.dims.embed_dim);
    const auto V = static_cast<std::size_t>(p.dims.vocab_size);

    w.pre = p.b;
    k::matvec_acc(p.w_x.data(), H, I, x.data(), w.pre.data());
    k::matvec_acc(p.w_h.data(), H, H, w.h_prev.data(), w.pre.data());
    k::matvec_acc(p.w_e.data(), H, E, &p.embed[static_cast<std::size_t>(prev_id) * E],
                  w.pre.data());
    for (std::size_t i = 0; i < H; ++i) w.h[i] = std::tanh(w.pre[i]);

    std::fill(w.logits.begin(), w.logits.end(), 0.0);
    k::matvec_acc(p.w_o.data(), V, H, w.h.data(), w.logits.data());
}

// Fills exps with exp(logit - max) and returns max + log(sum exps).
double log_norm(StepWork& w) {
    const double shift = k::max(w.logits.data(), w.logits.size());
    for (std::size_t v = 0; v < w.logits.size(); ++v) w.exps[v] = std::exp(w.logits[v] - shift);
    return shift + std::log(k::sum(w.exps.data(), w.exps.size()));
}

void check_dims_match(const PolicyParams& a, const PolicyParams& b, const char* what) {
    if (a.dims.input_dim != b.dims.input_dim || a.dims.hidden_dim != b.dims.hidden_dim ||
        a.dims.embed_dim != b.dims.embed_dim || a.dims.vocab_size != b.dims.vocab_size)
        throw InvalidInputError(std::string(what) + ": parameter shapes do not match");
}

}  // namespace

int Vocab::find(const std::string& surface) const {
    for (int i = 0; i < size(); ++i)
        if (tokens[static_cast<std::size_t>(i)] == surface) return i;
    return -1;
}

void Vocab::validate() const {
    if (tokens.size() < 2) throw ConfigError("vocab needs at least two tokens");
    if (eos_id < 0 || eos_id >= size()) throw ConfigError("vocab eos_id out of range");
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].empty()) throw ConfigError("vocab token " + std::to_string(i) + " is empty");
        for (std::size_t j = i + 1; j < tokens.size(); ++j)
            if (tokens[i] == tokens[j]) throw ConfigError("duplicate vocab token: " + tokens[i]);
    }
}

Vocab default_vocab() {
    Vocab v;
    v.tokens = {"<think>", "</think>", "<answer>", "</answer>", "A",
                "B",       "real",     "fake",     "hmm.",      "<eos>"};
    v.eos_id = 9;
    return v;
}

std::string detokenize(const Vocab& vocab, const std::vector<int>& tokens) {
    std::string out;
    for (int id : tokens) {
        if (id < 0 || id >= vocab.size())
            throw InvalidInputError("token id " + std::to_string(id) + " outside vocab");
        if (id == vocab.eos_id) continue;
        if (!out.empty()) out += ' ';
        out += vocab.tokens[static_cast<std::size_t>(id)];
    }
    return out;
}

void PolicyDims::validate() const {
    if (input_dim < 1 || hidden_dim < 1 || embed_dim < 1 || vocab_size < 2)
        throw ConfigError("policy dims must be positive (vocab at least 2)");
}

std::vector<ParamBlock> param_blocks(PolicyParams& p) {
    return {{"w_x", &p.w_x},     {"w_h", &p.w_h}, {"w_e", &p.w_e},
            {"embed", &p.embed}, {"b", &p.b},     {"w_o", &p.w_o}};
}

std::vector<ConstParamBlock> param_blocks(const PolicyParams& p) {
    return {{"w_x", &p.w_x},     {"w_h", &p.w_h}, {"w_e", &p.w_e},
            {"embed", &p.embed}, {"b", &p.b},     {"w_o", &p.w_o}};
}

std::size_t param_count(const PolicyParams& p) {
    std::size_t n = 0;
    for (const auto& blk : param_blocks(p)) n += blk.data->size();
    return n;
}

PolicyParams init_params(const PolicyDims& dims, int bos_id, std::uint64_t seed, double scale) {
    dims.validate();
    if (bos_id < 0 || bos_id >= dims.vocab_size) throw ConfigError("bos_id outside vocab");
    PolicyParams p = zeros_like(PolicyParams{dims, bos_id, {}, {}, {}, {}, {}, {}});
    Rng rng(seed);
    for (auto& blk : param_blocks(p))
        for (double& w : *blk.data) w = rng.uniform(-scale, scale);
    return p;
}

PolicyParams zeros_like(const PolicyParams& src) {
    const auto& d = src.dims;
    const auto H = static_cast<std::size_t>(d.hidden_dim);
    const auto I = static_cast<std::size_t>(d.input_dim);
    const auto E = static_cast<std::size_t>(d.embed_dim);
    const auto V = static_cast<std::size_t>(d.vocab_size);
    PolicyParams p;
    p.dims = d;
    p.bos_id = src.bos_id;
    p.w_x.assign(H * I, 0.0);
    p.w_h.assign(H * H, 0.0);
    p.w_e.assign(H * E, 0.0);
    p.embed.assign(V * E, 0.0);
    p.b.assign(H, 0.0);
    p.w_o.assign(V * H, 0.0);
    return p;
}

void check_finite(const PolicyParams& p, const std::string& what) {
    for (const auto& blk : param_blocks(p))
        for (double w : *blk.data)
            if (!std::isfinite(w))
                throw NumericFault("non-finite value in " + std::string(blk.name) + " of " + what);
}

std::vector<double> encode_features(const std::vector<double>& task_features, ChatMode mode) {
    std::vector<double> x = task_features;
    x.push_back(mode == ChatMode::thinking ? 1.0 : 0.0);
    return x;
}

Trajectory sample(const PolicyParams& p, const Vocab& vocab, const std::vector<double>& features,
                  ChatMode mode, std::uint64_t seed, int max_len, const std::string& prompt_id) {
    p.dims.validate();
    if (vocab.size() != p.dims.vocab_size)
        throw InvalidInputError("vocab size does not match policy vocab_size");
    if (max_len < 1) throw InvalidInputError("max_len must be at least 1");
    check_token_id(p, p.bos_id);

    const std::vector<double> x = encoded_input(p, features, mode);
    StepWork w;
    w.resize(p.dims);

    Trajectory traj;
    traj.prompt_id = prompt_id;
    traj.mode = mode;
    traj.tokens.reserve(static_cast<std::size_t>(max_len));
    traj.logprobs.reserve(static_cast<std::size_t>(max_len));

    Rng rng(seed);
    int prev = p.bos_id;
    for (int t = 0; t < max_len; ++t) {
        step_forward(p, x, prev, w);
        const double lognorm = log_norm(w);
        const int tok = static_cast<int>(rng.categorical(w.exps));
        traj.tokens.push_back(tok);
        traj.logprobs.push_back(w.logits[static_cast<std::size_t>(tok)] - lognorm);
        if (tok == vocab.eos_id) break;
        prev = tok;
        std::swap(w.h_prev, w.h);
    }
    return traj;
}

std::vector<double> log_prob(const PolicyParams& p, const std::vector<double>& features,
                             ChatMode mode, const std::vector<int>& tokens) {
    p.dims.validate();
    check_token_id(p, p.bos_id);
    for (int id : tokens) check_token_id(p, id);

    const std::vector<double> x = encoded_input(p, features, mode);
    StepWork w;
    w.resize(p.dims);

    std::vector<double> out;
    out.reserve(tokens.size());
    int prev = p.bos_id;
    for (int tok : tokens) {
        step_forward(p, x, prev, w);
        const double lognorm = log_norm(w);
        out.push_back(w.logits[static_cast<std::size_t>(tok)] - lognorm);
        prev = tok;
        std::swap(w.h_prev, w.h);
    }
    return out;
}

std::vector<double> next_token_logprobs(const PolicyParams& p, const std::vector<double>& features,
                                        ChatMode mode, const std::vector<int>& prefix) {
    p.dims.validate();
    check_token_id(p, p.bos_id);
    for (int id : prefix) check_token_id(p, id);

    const std::vector<double> x = encoded_input(p, features, mode);
    StepWork w;
    w.resize(p.dims);

    int prev = p.bos_id;
    for (int tok : prefix) {
        step_forward(p, x, prev, w);
        prev = tok;
        std::swap(w.h_prev, w.h);
    }
    step_forward(p, x, prev, w);
    const double lognorm = log_norm(w);
    std::vector<double> out(w.logits.size());
    for (std::size_t v = 0; v < out.size(); ++v) out[v] = w.logits[v] - lognorm;
    return out;
}

void accumulate_weighted_grad_log_prob(const PolicyParams& p, const std::vector<double>& features,
                                       ChatMode mode, const std::vector<int>& tokens,
                                       const std::vector<double>& weights,
                                       PolicyParams& grad_acc) {
    p.dims.validate();
    check_dims_match(p, grad_acc, "grad accumulator");
    if (weights.size() != tokens.size())
        throw InvalidInputError("per-token weight count does not match token count");
    check_token_id(p, p.bos_id);
    for (int id : tokens) check_token_id(p, id);
    if (tokens.empty()) return;

    const auto H = static_cast<std::size_t>(p.dims.hidden_dim);
    const auto I = static_cast<std::size_t>(p.dims.input_dim);
    const auto E = static_cast<std::size_t>(p.dims.embed_dim);
    const auto V = static_cast<std::size_t>(p.dims.vocab_size);
    const std::size_t T = tokens.size();

    const std::vector<double> x = encoded_input(p, features, mode);

    // Forward pass, retaining h_{t-1} rows (hs[0] = zero state) and softmax
    // probabilities for the backward sweep.
    std::vector<double> hs((T + 1) * H, 0.0);
    std::vector<double> probs(T * V, 0.0);
    {
        StepWork w;
        w.resize(p.dims);
        int prev = p.bos_id;
        for (std::size_t t = 0; t < T; ++t) {
            std::copy(&hs[t * H], &hs[t * H] + H, w.h_prev.begin());
            step_forward(p, x, prev, w);
            log_norm(w);
            const double total = k::sum(w.exps.data(), V);
            for (std::size_t v = 0; v < V; ++v) probs[t * V + v] = w.exps[v] / total;
            std::copy(w.h.begin(), w.h.end(), &hs[(t + 1) * H]);
            prev = tokens[t];
        }
    }

    // Backward through time.
    std::vector<double> dlogits(V, 0.0), gh(H, 0.0), gpre(H, 0.0), carry(H, 0.0);
    for (std::size_t ti = T; ti-- > 0;) {
        const double wgt = weights[ti];
        const double* h_t = &hs[(ti + 1) * H];
        const double* h_prev = &hs[ti * H];
        const int prev_tok = ti == 0 ? p.bos_id : tokens[ti - 1];

        gh = carry;
        if (wgt != 0.0) {
            const double* p_t = &probs[ti * V];
            for (std::size_t v = 0; v < V; ++v) dlogits[v] = -wgt * p_t[v];
            dlogits[static_cast<std::size_t>(tokens[ti])] += wgt;
            k::outer_acc(1.0, dlogits.data(), V, h_t, H, grad_acc.w_o.data());
            k::matvec_t_acc(p.w_o.data(), V, H, dlogits.data(), gh.data());
        }
        k::tanh_grad(h_t, gh.data(), gpre.data(), H);

        k::axpy(1.0, gpre.data(), grad_acc.b.data(), H);
        k::outer_acc(1.0, gpre.data(), H, x.data(), I, grad_acc.w_x.data());
        k::outer_acc(1.0, gpre.data(), H, h_prev, H, grad_acc.w_h.data());
        k::outer_acc(1.0, gpre.data(), H, &p.embed[static_cast<std::size_t>(prev_tok) * E], E,
                     grad_acc.w_e.data());
        k::matvec_t_acc(p.w_e.data(), H, E, gpre.data(),
                        &grad_acc.embed[static_cast<std::size_t>(prev_tok) * E]);

        std::fill(carry.begin(), carry.end(), 0.0);
        k::matvec_t_acc(p.w_h.data(), H, H, gpre.data(), carry.data());
    }
}

PolicyParams grad_log_prob(const PolicyParams& p, const std::vector<double>& features,
                           ChatMode mode, const std::vector<int>& tokens) {
    PolicyParams grad = zeros_like(p);
    const std::vector<double> unit(tokens.size(), 1.0);
    accumulate_weighted_grad_log_prob(p, features, mode, tokens, unit, grad);
    return grad;
}

double sft_loss_and_grad(const PolicyParams& p, const std::vector<SftExample>& batch,
                         PolicyParams& grad_out) {
    if (batch.empty()) throw InvalidInputError("SFT batch is empty");
    grad_out = zeros_like(p);
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    double loss = 0.0;
    for (const auto& ex : batch) {
        if (ex.target.empty()) throw InvalidInputError("SFT example has an empty target");
        const std::vector<double> lps = log_prob(p, ex.features, ex.mode, ex.target);
        loss -= inv_b * k::sum(lps.data(), lps.size());
        const std::vector<double> w(ex.target.size(), -inv_b);
        accumulate_weighted_grad_log_prob(p, ex.features, ex.mode, ex.target, w, grad_out);
    }
    return loss;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    ckpt.params.dims.validate();
    ckpt.vocab.validate();
    check_finite(ckpt.params, "checkpoint " + path);
    if (ckpt.vocab.size() != ckpt.params.dims.vocab_size)
        throw InvalidInputError("checkpoint vocab does not match policy vocab_size");

    nlohmann::json j;
    j["kind"] = "policy_checkpoint";
    j["version"] = 1;
    j["meta"] = ckpt.meta.is_null() ? nlohmann::json::object() : ckpt.meta;
    j["bos_id"] = ckpt.params.bos_id;
    j["dims"] = {{"input_dim", ckpt.params.dims.input_dim},
                 {"hidden_dim", ckpt.params.dims.hidden_dim},
                 {"embed_dim", ckpt.params.dims.embed_dim},
                 {"vocab_size", ckpt.params.dims.vocab_size}};
    j["vocab"] = {{"tokens", ckpt.vocab.tokens}, {"eos_id", ckpt.vocab.eos_id}};
    nlohmann::json blocks = nlohmann::json::object();
    for (const auto& blk : param_blocks(ckpt.params)) blocks[blk.name] = *blk.data;
    j["params"] = std::move(blocks);
    util::json_to_file_atomic(path, j);
}

Checkpoint load_checkpoint(const std::string& path) {
    const nlohmann::json j = util::json_from_file(path);
    try {
        if (j.at("kind").get<std::string>() != "policy_checkpoint")
            throw ConfigError(path + ": not a policy checkpoint");
        if (j.at("version").get<int>() != 1)
            throw ConfigError(path + ": unsupported checkpoint version");

        Checkpoint ckpt;
        const auto& d = j.at("dims");
        ckpt.params.dims.input_dim = d.at("input_dim").get<int>();
        ckpt.params.dims.hidden_dim = d.at("hidden_dim").get<int>();
        ckpt.params.dims.embed_dim = d.at("embed_dim").get<int>();
        ckpt.params.dims.vocab_size = d.at("vocab_size").get<int>();
        ckpt.params.dims.validate();
        ckpt.params.bos_id = j.at("bos_id").get<int>();

        PolicyParams shaped = zeros_like(ckpt.params);
        for (auto& blk : param_blocks(shaped)) {
            const auto& arr = j.at("params").at(blk.name);
            if (!arr.is_array() || arr.size() != blk.data->size())
                throw ConfigError(path + ": parameter block " + blk.name + " has wrong size");
            for (std::size_t i = 0; i < blk.data->size(); ++i)
                (*blk.data)[i] = arr[i].get<double>();
        }
        ckpt.params = std::move(shaped);

        ckpt.vocab.tokens = j.at("vocab").at("tokens").get<std::vector<std::string>>();
        ckpt.vocab.eos_id = j.at("vocab").at("eos_id").get<int>();
        ckpt.vocab.validate();
        if (ckpt.vocab.size() != ckpt.params.dims.vocab_size)
            throw ConfigError(path + ": vocab does not match vocab_size");
        if (ckpt.params.bos_id < 0 || ckpt.params.bos_id >= ckpt.params.dims.vocab_size)
            throw ConfigError(path + ": bos_id out of range");

        ckpt.meta = j.value("meta", nlohmann::json::object());
        check_finite(ckpt.params, "checkpoint " + path);
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": malformed checkpoint (" + std::string(e.what()) + ")");
    }
}

}  // namespace postrl
