#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "slateope/rng.hpp"

using namespace slateope;

TEST_CASE("same seed reproduces the same stream") {
    Rng a(12345);
    Rng b(12345);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
}

TEST_CASE("different seeds give different streams") {
    Rng a(1);
    Rng b(2);
    int same = 0;
    for (int i = 0; i < 64; ++i) {
        if (a.next_u64() == b.next_u64()) ++same;
    }
    CHECK(same == 0);
}

TEST_CASE("uniform lies in [0,1) and has mean 0.5") {
    Rng rng(7);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("uniform range respects bounds") {
    Rng rng(8);
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform(-2.0, 3.0);
        CHECK(u >= -2.0);
        CHECK(u < 3.0);
    }
}

TEST_CASE("normal has approximately unit moments") {
    Rng rng(9);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sq += z * z;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("gumbel mean approximates the Euler-Mascheroni constant") {
    Rng rng(10);
    const int n = 200000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += rng.gumbel();
    CHECK(std::abs(sum / n - 0.5772156649) < 0.02);
}

TEST_CASE("categorical matches weight frequencies") {
    Rng rng(11);
    const std::vector<double> w = {0.2, 0.5, 0.3};
    std::vector<int> counts(3, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[rng.categorical(w)];
    for (int k = 0; k < 3; ++k) {
        CHECK(std::abs(counts[k] / double(n) - w[k]) < 0.01);
    }
}

TEST_CASE("categorical accepts unnormalized weights and rejects zero mass") {
    Rng rng(12);
    const std::vector<double> w = {2.0, 6.0};  // same as {0.25, 0.75}
    int ones = 0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) ones += rng.categorical(w);
    CHECK(std::abs(ones / double(n) - 0.75) < 0.01);

    const std::vector<double> zero = {0.0, 0.0};
    CHECK_THROWS_AS((void)rng.categorical(zero), std::invalid_argument);
}

TEST_CASE("uniform_int covers the full range uniformly") {
    Rng rng(13);
    std::vector<int> counts(5, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const int k = rng.uniform_int(5);
        REQUIRE(k >= 0);
        REQUIRE(k < 5);
        ++counts[k];
    }
    for (int c : counts) CHECK(std::abs(c / double(n) - 0.2) < 0.01);
}

TEST_CASE("derive_seed is stable and sensitive to tag and indices") {
    const uint64_t s1 = derive_seed(42, "logs", {0});
    CHECK(s1 == derive_seed(42, "logs", {0}));
    CHECK(s1 != derive_seed(42, "logs", {1}));
    CHECK(s1 != derive_seed(42, "env", {0}));
    CHECK(s1 != derive_seed(43, "logs", {0}));
}

TEST_CASE("substreams with distinct tags are uncorrelated in sign") {
    Rng a = substream(99, "alpha");
    Rng b = substream(99, "beta");
    const int n = 10000;
    int agree = 0;
    for (int i = 0; i < n; ++i) {
        if ((a.uniform() < 0.5) == (b.uniform() < 0.5)) ++agree;
    }
    CHECK(std::abs(agree / double(n) - 0.5) < 0.02);
}
