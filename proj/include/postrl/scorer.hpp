// Thinking-quality scorers: a deterministic local stub, an HTTP client for an
// external scorer service, and a loopback server exposing the stub over the
// same wire contract ({"text": ...} -> {"score": ...}).

#pragma once

#include <cstddef>
#include <memory>
#include <string>

#include "postrl/chat_template.hpp"

namespace postrl {

enum class ScoreSource { stub, remote, fallback_zero };

const char* score_source_name(ScoreSource s);

struct ThinkingScore {
    double value = 0.0;  // always in [0, 1]
    ScoreSource source = ScoreSource::stub;
};

class ThinkingScorer {
  public:
    virtual ~ThinkingScorer() = default;
    virtual ThinkingScore score(const std::string& response_text) = 0;
};

struct StubScorerConfig {
    double weight_think = 0.2;
    double weight_sentences = 0.2;
    double weight_length = 0.3;
    double weight_mentions = 0.3;
    int sentence_target = 5;   // distinct sentences for a full sentence term
    int length_target = 24;    // think words for a full length term
};

// Deterministic heuristic over the think block of `response_text`:
//   clamp(w_think*[has thinking] + w_sent*min(1, distinct_sentences/target)
//         + w_len*min(1, think_words/target) + w_mention*[mentions both
//         options], 0, 1)
// Malformed or empty-think text scores exactly 0.
double stub_score_text(const std::string& response_text, const StubScorerConfig& cfg = {},
                       const TemplateConfig& tpl = {});

class StubScorer : public ThinkingScorer {
  public:
    explicit StubScorer(StubScorerConfig cfg = {}, TemplateConfig tpl = {})
        : cfg_(cfg), tpl_(std::move(tpl)) {}
    ThinkingScore score(const std::string& response_text) override;

  private:
    StubScorerConfig cfg_;
    TemplateConfig tpl_;
};

struct RemoteScorerConfig {
    std::string url = "http://127.0.0.1:8787/score";
    int timeout_ms = 2000;
    // Lenient mode turns transport/contract failures into a fallback score of
    // 0 with a warning; strict mode throws ScorerError instead.
    bool strict = false;
};

class RemoteScorer : public ThinkingScorer {
  public:
    explicit RemoteScorer(RemoteScorerConfig cfg);
    ThinkingScore score(const std::string& response_text) override;

  private:
    RemoteScorerConfig cfg_;
    std::string host_;
    int port_ = 0;
    std::string path_;
};

// Wraps another scorer and counts calls; used to assert which stages consult
// the scorer at all.
class CountingScorer : public ThinkingScorer {
  public:
    explicit CountingScorer(ThinkingScorer* inner = nullptr) : inner_(inner) {}
    ThinkingScore score(const std::string& response_text) override {
        ++calls_;
        return inner_ ? inner_->score(response_text) : ThinkingScore{};
    }
    std::size_t calls() const { return calls_; }

  private:
    ThinkingScorer* inner_;
    std::size_t calls_ = 0;
};

// HTTP loopback server answering POST <path> with stub scores. start() binds
// (port 0 picks a free port) and serves on a background thread.
class StubScorerServer {
  public:
    explicit StubScorerServer(StubScorerConfig cfg = {});
    ~StubScorerServer();
    StubScorerServer(const StubScorerServer&) = delete;
    StubScorerServer& operator=(const StubScorerServer&) = delete;

    int start(const std::string& host = "127.0.0.1", int port = 0,
              const std::string& path = "/score");  // returns the bound port
    void stop();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace postrl
