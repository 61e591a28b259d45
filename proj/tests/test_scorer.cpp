#include <string>
#include <vector>

#include <doctest.h>
#include <httplib.h>

#include "postrl/chat_template.hpp"
#include "postrl/errors.hpp"
#include "postrl/scorer.hpp"

using namespace postrl;

namespace {

std::string think_response(const std::string& thinking, const std::string& answer = "B") {
    return render_response(thinking, answer, ChatMode::thinking);
}

}  // namespace

TEST_SUITE("scorer") {

TEST_CASE("stub scores empty thinking as exactly zero") {
    CHECK(stub_score_text(render_response("", "A", ChatMode::non_thinking)) == 0.0);
    CHECK(stub_score_text(think_response("")) == 0.0);
    CHECK(stub_score_text(think_response("   \n ")) == 0.0);
    CHECK(stub_score_text("complete garbage") == 0.0);
}

TEST_CASE("stub is deterministic") {
    const std::string text = think_response("let me think. looks odd. real or fake, hmm.");
    CHECK(stub_score_text(text) == stub_score_text(text));
    StubScorer scorer;
    const ThinkingScore s1 = scorer.score(text);
    const ThinkingScore s2 = scorer.score(text);
    CHECK(s1.value == s2.value);
    CHECK(s1.source == ScoreSource::stub);
}

TEST_CASE("stub term arithmetic on crafted texts") {
    // Two words, one sentence, mentions both sides:
    // 0.2 + 0.2*(1/5) + 0.3*(2/24) + 0.3 = 0.565
    CHECK(stub_score_text(think_response("real fake")) ==
          doctest::Approx(0.565).epsilon(1e-12));
    // One word, one sentence, mentions neither both:
    // 0.2 + 0.2*(1/5) + 0.3*(1/24) = 0.2525
    CHECK(stub_score_text(think_response("hmm")) == doctest::Approx(0.2525).epsilon(1e-12));
    // Repeated sentences deduplicate.
    CHECK(stub_score_text(think_response("hmm. hmm. hmm.")) ==
          doctest::Approx(0.2 + 0.2 * (1.0 / 5.0) + 0.3 * (3.0 / 24.0)).epsilon(1e-12));
    // Saturated: >=5 distinct sentences, >=24 words, both options.
    std::string longthink;
    for (int i = 0; i < 6; ++i)
        longthink += "sentence number " + std::to_string(i) + " looks quite odd to me. ";
    longthink += "so real or fake, i say fake.";
    CHECK(stub_score_text(think_response(longthink)) == 1.0);
}

TEST_CASE("stub respects configured targets") {
    StubScorerConfig cfg;
    cfg.length_target = 2;
    cfg.sentence_target = 1;
    // One sentence, two words -> both terms saturate: 0.2+0.2+0.3 = 0.7
    CHECK(stub_score_text(think_response("looks odd"), cfg) ==
          doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("remote client reproduces stub scores over loopback") {
    StubScorerServer server;
    const int port = server.start();
    REQUIRE(port > 0);
    RemoteScorerConfig cfg;
    cfg.url = "http://127.0.0.1:" + std::to_string(port) + "/score";
    cfg.timeout_ms = 2000;
    RemoteScorer remote(cfg);
    const std::vector<std::string> texts = {
        think_response("real fake"),
        think_response("let me think. the lighting looks flat. hmm, fake."),
        think_response(""),
        "garbage",
        render_response("", "A", ChatMode::non_thinking),
    };
    for (const std::string& t : texts) {
        CAPTURE(t);
        const ThinkingScore s = remote.score(t);
        CHECK(s.source == ScoreSource::remote);
        CHECK(s.value == stub_score_text(t));
    }
    server.stop();
}

TEST_CASE("stub server rejects malformed bodies with 400") {
    StubScorerServer server;
    const int port = server.start();
    httplib::Client client("127.0.0.1", port);
    const auto bad = client.Post("/score", "this is not json", "text/plain");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    const auto wrong_shape = client.Post("/score", R"({"nope": 1})", "application/json");
    REQUIRE(wrong_shape);
    CHECK(wrong_shape->status == 400);
    const auto good = client.Post("/score", R"({"text": "x"})", "application/json");
    REQUIRE(good);
    CHECK(good->status == 200);
    server.stop();
}

TEST_CASE("a live listener blocks a second bind on the same port") {
    StubScorerServer first;
    const int port = first.start();
    StubScorerServer second;
    CHECK_THROWS_AS(second.start("127.0.0.1", port), ScorerError);
    first.stop();
    // the port frees up once the listener is gone
    StubScorerServer third;
    CHECK(third.start("127.0.0.1", port) == port);
    third.stop();
}

TEST_CASE("lenient mode falls back to zero on a dead server") {
    // Grab a free port, then shut the server down so nothing listens there.
    int dead_port = 0;
    {
        StubScorerServer server;
        dead_port = server.start();
        server.stop();
    }
    RemoteScorerConfig cfg;
    cfg.url = "http://127.0.0.1:" + std::to_string(dead_port) + "/score";
    cfg.timeout_ms = 300;
    cfg.strict = false;
    RemoteScorer lenient(cfg);
    const ThinkingScore s = lenient.score(think_response("real fake"));
    CHECK(s.value == 0.0);
    CHECK(s.source == ScoreSource::fallback_zero);

    cfg.strict = true;
    RemoteScorer strict(cfg);
    CHECK_THROWS_AS(strict.score(think_response("real fake")), ScorerError);
}

TEST_CASE("remote config validation") {
    CHECK_THROWS_AS(RemoteScorer(RemoteScorerConfig{"ftp://h:1/s", 100, false}), ConfigError);
    CHECK_THROWS_AS(RemoteScorer(RemoteScorerConfig{"http://nohost/score", 100, false}),
                    ConfigError);
    CHECK_THROWS_AS(RemoteScorer(RemoteScorerConfig{"http://h:xx/score", 100, false}),
                    ConfigError);
    CHECK_THROWS_AS(RemoteScorer(RemoteScorerConfig{"http://h:1/s", 0, false}), ConfigError);
    CHECK_NOTHROW(RemoteScorer(RemoteScorerConfig{"http://127.0.0.1:9999/score", 100, false}));
}

}  // TEST_SUITE
