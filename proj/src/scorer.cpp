#include "postrl/scorer.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <set>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "postrl/canonical_prompts.hpp"
#include "postrl/errors.hpp"
#include "postrl/util.hpp"

namespace postrl {

const char* score_source_name(ScoreSource s) {
    switch (s) {
        case ScoreSource::stub: return "stub";
        case ScoreSource::remote: return "remote";
        case ScoreSource::fallback_zero: return "fallback_zero";
    }
    return "stub";
}

namespace {

std::string strip_punct(const std::string& word) {
    std::size_t b = 0;
    std::size_t e = word.size();
    const auto is_word_char = [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) != 0;
    };
    while (b < e && !is_word_char(word[b])) ++b;
    while (e > b && !is_word_char(word[e - 1])) --e;
    return word.substr(b, e - b);
}

std::size_t distinct_sentences(const std::string& thinking) {
    std::set<std::string> seen;
    std::string current;
    const auto flush = [&] {
        const std::string t = util::trim(current);
        if (!t.empty()) seen.insert(t);
        current.clear();
    };
    for (char c : thinking) {
        if (c == '.' || c == '!' || c == '?')
            flush();
        else
            current += c;
    }
    flush();
    return seen.size();
}

bool mentions_both_options(const std::vector<std::string>& words) {
    bool side_a = false;
    bool side_b = false;
    for (const AnswerOption& opt : canonical_prompts().answer_options) {
        const std::string letter = util::lower(std::string(1, opt.letter));
        const std::string label = util::lower(std::string(opt.label));
        bool found = false;
        for (const std::string& w : words) {
            const std::string clean = strip_punct(w);
            if (clean == letter || clean == label) {
                found = true;
                break;
            }
        }
        (opt.letter == 'A' ? side_a : side_b) = found;
    }
    return side_a && side_b;
}

}  // namespace

double stub_score_text(const std::string& response_text, const StubScorerConfig& cfg,
                       const TemplateConfig& tpl) {
    const ParsedResponse resp = parse_response(response_text, tpl);
    const std::string thinking = util::trim(resp.thinking_content);
    if (thinking.empty()) return 0.0;

    const std::vector<std::string> words = util::split_ws(util::lower(thinking));
    const double sent_term =
        std::min(1.0, static_cast<double>(distinct_sentences(thinking)) /
                          static_cast<double>(cfg.sentence_target));
    const double len_term = std::min(
        1.0, static_cast<double>(words.size()) / static_cast<double>(cfg.length_target));
    const double score = cfg.weight_think * 1.0 + cfg.weight_sentences * sent_term +
                         cfg.weight_length * len_term +
                         cfg.weight_mentions * (mentions_both_options(words) ? 1.0 : 0.0);
    return std::clamp(score, 0.0, 1.0);
}

ThinkingScore StubScorer::score(const std::string& response_text) {
    return {stub_score_text(response_text, cfg_, tpl_), ScoreSource::stub};
}

RemoteScorer::RemoteScorer(RemoteScorerConfig cfg) : cfg_(std::move(cfg)) {
    const std::string& url = cfg_.url;
    const std::string scheme = "http://";
    if (url.rfind(scheme, 0) != 0)
        throw ConfigError("scorer url must start with http:// : " + url);
    const std::string rest = url.substr(scheme.size());
    const std::size_t slash = rest.find('/');
    const std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
    path_ = slash == std::string::npos ? "/score" : rest.substr(slash);
    const std::size_t colon = hostport.find(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 >= hostport.size())
        throw ConfigError("scorer url must be http://host:port/path : " + url);
    host_ = hostport.substr(0, colon);
    try {
        port_ = std::stoi(hostport.substr(colon + 1));
    } catch (const std::exception&) {
        throw ConfigError("scorer url has a non-numeric port: " + url);
    }
    if (cfg_.timeout_ms <= 0) throw ConfigError("scorer timeout_ms must be positive");
}

ThinkingScore RemoteScorer::score(const std::string& response_text) {
    const auto fail = [&](const std::string& why) -> ThinkingScore {
        if (cfg_.strict) throw ScorerError("remote scorer failed (strict mode): " + why);
        std::fprintf(stderr, "warning: remote scorer unavailable (%s); scoring 0\n", why.c_str());
        return {0.0, ScoreSource::fallback_zero};
    };

    httplib::Client client(host_, port_);
    client.set_connection_timeout(0, cfg_.timeout_ms * 1000);
    client.set_read_timeout(0, cfg_.timeout_ms * 1000);
    client.set_write_timeout(0, cfg_.timeout_ms * 1000);

    nlohmann::json req;
    req["text"] = response_text;
    const httplib::Result res = client.Post(path_, req.dump(), "application/json");
    if (!res) return fail("transport: " + httplib::to_string(res.error()));
    if (res->status != 200) return fail("http status " + std::to_string(res->status));
    const nlohmann::json body = nlohmann::json::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.contains("score") || !body["score"].is_number())
        return fail("malformed response body");
    const double value = body["score"].get<double>();
    if (!(value >= 0.0 && value <= 1.0))
        return fail("score out of range: " + std::to_string(value));
    return {value, ScoreSource::remote};
}

struct StubScorerServer::Impl {
    StubScorerConfig cfg;
    httplib::Server server;
    std::thread thread;
    bool running = false;
};

StubScorerServer::StubScorerServer(StubScorerConfig cfg) : impl_(std::make_unique<Impl>()) {
    impl_->cfg = cfg;
}

StubScorerServer::~StubScorerServer() { stop(); }

int StubScorerServer::start(const std::string& host, int port, const std::string& path) {
    if (impl_->running) throw ScorerError("stub scorer server already running");
    // SO_REUSEADDR alone (httplib's default adds SO_REUSEPORT): quick restarts
    // still work, but a second live listener on the port fails instead of
    // silently sharing it.
    impl_->server.set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes),
                   sizeof(yes));
    });
    const StubScorerConfig cfg = impl_->cfg;
    impl_->server.Post(path, [cfg](const httplib::Request& req, httplib::Response& res) {
        const nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.contains("text") || !body["text"].is_string()) {
            res.status = 400;
            res.set_content(R"({"error":"expected JSON body {\"text\": string}"})",
                            "application/json");
            return;
        }
        nlohmann::json out;
        out["score"] = stub_score_text(body["text"].get<std::string>(), cfg);
        res.set_content(out.dump(), "application/json");
    });

    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
        if (bound <= 0) throw ScorerError("stub scorer server could not bind a port");
    } else {
        if (!impl_->server.bind_to_port(host, port))
            throw ScorerError("stub scorer server could not bind port " + std::to_string(port));
    }
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    impl_->running = true;
    return bound;
}

void StubScorerServer::stop() {
    if (!impl_ || !impl_->running) return;
    impl_->server.stop();
    impl_->thread.join();
    impl_->running = false;
}

}  // namespace postrl
