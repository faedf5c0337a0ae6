#include <doctest.h>

#include <set>
#include <vector>

#include "dyace/rng.hpp"

using dyace::Rng;

TEST_CASE("same seed reproduces the same stream") {
    Rng a(1234);
    Rng b(1234);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
    Rng a(1);
    Rng b(2);
    int equal = 0;
    for (int i = 0; i < 100; ++i) equal += a.next_u64() == b.next_u64();
    CHECK(equal == 0);
}

TEST_CASE("children depend only on the key path, not on draw position") {
    Rng parent(42);
    Rng early = parent.child(3);
    for (int i = 0; i < 100; ++i) parent.next_u64();
    Rng late = parent.child(3);
    for (int i = 0; i < 100; ++i) CHECK(early.next_u64() == late.next_u64());
}

TEST_CASE("sibling children are distinct streams") {
    Rng parent(7);
    std::set<std::uint64_t> first_draws;
    for (std::uint64_t i = 0; i < 64; ++i) {
        Rng c = parent.child(i);
        first_draws.insert(c.next_u64());
    }
    CHECK(first_draws.size() == 64);
}

TEST_CASE("next_double lies in [0,1) and is roughly centred") {
    Rng rng(99);
    double sum = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.next_double();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(sum / 10000.0 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("next_below stays in range and covers it") {
    Rng rng(5);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 7000; ++i) {
        const auto v = rng.next_below(7);
        REQUIRE(v < 7);
        ++counts[static_cast<std::size_t>(v)];
    }
    for (int c : counts) CHECK(c > 700);
}

TEST_CASE("next_int covers its closed range") {
    Rng rng(6);
    std::set<int> seen;
    for (int i = 0; i < 200; ++i) {
        const int v = rng.next_int(2, 5);
        REQUIRE(v >= 2);
        REQUIRE(v <= 5);
        seen.insert(v);
    }
    CHECK(seen.size() == 4);
}
