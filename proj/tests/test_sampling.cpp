#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "coreplan/sampling.hpp"

using namespace coreplan;

namespace {

// Pearson statistic of observed counts against expected probabilities.
double chi_square(const std::vector<std::uint64_t>& counts, const std::vector<double>& p, std::uint64_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double e = p[i] * static_cast<double>(n);
        s += (static_cast<double>(counts[i]) - e) * (static_cast<double>(counts[i]) - e) / e;
    }
    return s;
}

// Upper 0.001 quantile of chi-square with 4 degrees of freedom.
constexpr double kChi2Df4 = 18.467;

}  // namespace

TEST_CASE("streams are reproducible and distinct") {
    RandomStream a(42, StreamId::lambda), b(42, StreamId::lambda), c(42, StreamId::policy), d(43, StreamId::lambda);
    bool differs_c = false, differs_d = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        differs_c |= x != c.next_u64();
        differs_d |= x != d.next_u64();
    }
    CHECK(differs_c);
    CHECK(differs_d);
}

TEST_CASE("uniform draws") {
    RandomStream rng(1, StreamId::estimator);
    double sum = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / 100000 - 0.5) < 0.005);

    std::vector<std::uint64_t> counts(5, 0);
    for (int i = 0; i < 100000; ++i) {
        const Index k = rng.uniform_index(5);
        REQUIRE(k < 5);
        ++counts[k];
    }
    CHECK(chi_square(counts, std::vector<double>(5, 0.2), 100000) < kChi2Df4);
    CHECK(rng.uniform_index(1) == 0);
    CHECK_THROWS_AS(rng.uniform_index(0), ContractError);
}

TEST_CASE("dirichlet_ones lies on the simplex") {
    RandomStream rng(2, StreamId::generator);
    for (int i = 0; i < 100; ++i) {
        const Vector v = dirichlet_ones(rng, 1 + i % 9);
        CHECK(v.minCoeff() >= 0.0);
        CHECK(std::abs(v.sum() - 1.0) <= 1e-12);
    }
}

TEST_CASE("sample_categorical") {
    const std::vector<double> p{0.1, 0.2, 0.3, 0.15, 0.25};
    SUBCASE("frequencies") {
        RandomStream rng(3, StreamId::estimator);
        std::vector<std::uint64_t> counts(5, 0);
        const std::uint64_t n = 200000;
        for (std::uint64_t i = 0; i < n; ++i)
            ++counts[sample_categorical(p, rng)];
        CHECK(chi_square(counts, p, n) < kChi2Df4);
    }
    SUBCASE("log-domain path, including large offsets") {
        for (double offset : {0.0, 800.0, -800.0}) {
            std::vector<double> lw;
            for (double x : p)
                lw.push_back(std::log(x) + offset);
            RandomStream rng(4, StreamId::estimator);
            std::vector<std::uint64_t> counts(5, 0);
            const std::uint64_t n = 200000;
            for (std::uint64_t i = 0; i < n; ++i)
                ++counts[sample_categorical_log(lw, rng)];
            CHECK(chi_square(counts, p, n) < kChi2Df4);
        }
    }
    SUBCASE("log and linear paths agree draw for draw on a shared stream") {
        std::vector<double> lw;
        for (double x : p)
            lw.push_back(std::log(x));
        RandomStream r1(5, StreamId::estimator), r2(5, StreamId::estimator);
        int mismatches = 0;
        for (int i = 0; i < 10000; ++i)
            mismatches += sample_categorical(p, r1) != sample_categorical_log(lw, r2);
        // Rounding in exp/log can move a draw across a boundary only when the
        // uniform lands within ~1e-16 of it.
        CHECK(mismatches == 0);
    }
    SUBCASE("zero-weight entries are never drawn") {
        const std::vector<double> q{0.0, 0.5, 0.0, 0.5, 0.0};
        const std::vector<double> lq{-INFINITY, 0.0, -INFINITY, 0.0, -INFINITY};
        RandomStream rng(6, StreamId::estimator);
        for (int i = 0; i < 10000; ++i) {
            const Index a = sample_categorical(q, rng), b = sample_categorical_log(lq, rng);
            CHECK((a == 1 || a == 3));
            CHECK((b == 1 || b == 3));
        }
    }
    SUBCASE("each draw consumes exactly one uniform") {
        RandomStream r1(7, StreamId::estimator), r2(7, StreamId::estimator);
        (void)sample_categorical(p, r1);
        (void)r2.uniform();
        CHECK(r1.next_u64() == r2.next_u64());
    }
    SUBCASE("contract errors") {
        RandomStream rng(8, StreamId::estimator);
        CHECK_THROWS_AS(sample_categorical(std::vector<double>{}, rng), ContractError);
        CHECK_THROWS_AS(sample_categorical(std::vector<double>{0.5, 0.6}, rng), ContractError);
        CHECK_THROWS_AS(sample_categorical(std::vector<double>{-0.1, 1.1}, rng), ContractError);
        CHECK_THROWS_AS(sample_categorical(std::vector<double>{NAN, 1.0}, rng), ContractError);
        CHECK_THROWS_AS(sample_categorical_log(std::vector<double>{-INFINITY, -INFINITY}, rng), ContractError);
    }
}

TEST_CASE("GenerativeModel") {
    SUBCASE("toggle: deterministic dynamics and a point-mass initial state") {
        const Mdp mdp = toggle_mdp(0.9);
        GenerativeModel g(mdp, 1);
        for (int i = 0; i < 100; ++i)
            CHECK(g.sample_init() == 0);
        for (Index x = 0; x < 2; ++x) {
            const auto stay = g.sample_next(x, 0);
            const auto go = g.sample_next(x, 1);
            CHECK(stay.next_state == x);
            CHECK(go.next_state == 1 - x);
            CHECK(stay.reward == (x == 1 ? 1.0 : 0.0));
            CHECK(go.reward == stay.reward);
        }
        CHECK(g.init_queries() == 100);
        CHECK(g.transition_queries() == 4);
    }
    SUBCASE("empirical transition and initial frequencies") {
        const Mdp mdp = random_mdp(9, 5, 2, 0.9);
        GenerativeModel g(mdp, 2);
        const std::uint64_t n = 100000;
        std::vector<double> p0(mdp.nu0.data(), mdp.nu0.data() + 5);
        std::vector<std::uint64_t> c0(5, 0);
        for (std::uint64_t i = 0; i < n; ++i)
            ++c0[g.sample_init()];
        CHECK(chi_square(c0, p0, n) < kChi2Df4);
        for (Index z : {0u, 3u, 9u}) {
            std::vector<double> p(mdp.transition.row(z).data(), mdp.transition.row(z).data() + 5);
            std::vector<std::uint64_t> c(5, 0);
            for (std::uint64_t i = 0; i < n; ++i)
                ++c[g.sample_next(z / 2, z % 2).next_state];
            CHECK(chi_square(c, p, n) < kChi2Df4);
        }
        CHECK(g.transition_queries() == 3 * n);
        CHECK(g.init_queries() == n);
    }
    SUBCASE("same seed, same sample path; init and transition streams are independent") {
        const Mdp mdp = random_mdp(10, 6, 3, 0.5);
        GenerativeModel a(mdp, 5), b(mdp, 5);
        for (int i = 0; i < 1000; ++i) {
            // Interleaving init draws on one model must not shift its transitions.
            if (i % 3 == 0)
                (void)a.sample_init();
            CHECK(a.sample_next(i % 6, i % 3).next_state == b.sample_next(i % 6, i % 3).next_state);
        }
    }
    SUBCASE("out-of-range pairs are rejected") {
        const Mdp mdp = toggle_mdp(0.5);
        GenerativeModel g(mdp, 0);
        CHECK_THROWS_AS(g.sample_next(2, 0), ContractError);
        CHECK_THROWS_AS(g.sample_next(0, 2), ContractError);
        CHECK(g.transition_queries() == 0);
    }
}
