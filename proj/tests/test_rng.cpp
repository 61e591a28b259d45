#include <array>
#include <cmath>
#include <vector>

#include <doctest.h>

#include "postrl/rng.hpp"

using namespace postrl;

TEST_SUITE("rng") {

TEST_CASE("same seed gives the same stream, different seeds differ") {
    Rng a(42), b(42), c(43);
    bool all_equal = true;
    bool any_diff = false;
    for (int i = 0; i < 64; ++i) {
        const uint64_t x = a.next_u64();
        all_equal = all_equal && (x == b.next_u64());
        any_diff = any_diff || (x != c.next_u64());
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("uniform01 stays in [0,1) and fills the range") {
    Rng rng(7);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("bernoulli frequency tracks p") {
    Rng rng(11);
    int hits = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) hits += rng.bernoulli(0.3) ? 1 : 0;
    const double freq = static_cast<double>(hits) / n;
    // ~4.6 sigma band for p=0.3, n=20000
    CHECK(freq > 0.285);
    CHECK(freq < 0.315);
}

TEST_CASE("normal has roughly zero mean and unit variance") {
    Rng rng(13);
    double s = 0.0, s2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        s += z;
        s2 += z * z;
    }
    CHECK(std::abs(s / n) < 0.05);
    CHECK(std::abs(s2 / n - 1.0) < 0.08);
}

TEST_CASE("categorical follows unnormalized weights") {
    Rng rng(17);
    const std::array<double, 3> w = {1.0, 0.0, 3.0};
    std::array<int, 3> counts = {0, 0, 0};
    const int n = 40000;
    for (int i = 0; i < n; ++i) counts[rng.categorical(w)]++;
    CHECK(counts[1] == 0);
    CHECK(std::abs(counts[0] / static_cast<double>(n) - 0.25) < 0.02);
    CHECK(std::abs(counts[2] / static_cast<double>(n) - 0.75) < 0.02);
}

TEST_CASE("mix64 is order sensitive and stable") {
    const uint64_t a = mix64(1, 2, 3);
    const uint64_t b = mix64(1, 3, 2);
    CHECK(a != b);
    CHECK(a == mix64(1, 2, 3));
    CHECK(mix64(5) != mix64(6));
}

TEST_CASE("fnv1a64 matches reference vectors") {
    // Standard FNV-1a test values.
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

}  // TEST_SUITE
