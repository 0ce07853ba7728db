#include <cmath>
#include <map>

#include "doctest.h"
#include "marm/metrics.hpp"
#include "marm/random.hpp"

using namespace marm;

namespace {

// O(pos * neg) pairwise count.
std::optional<double> pairwise_auc(const std::vector<ScoredLabel>& v) {
    double wins = 0, pairs = 0;
    for (const auto& p : v) {
        if (p.label != 1) continue;
        for (const auto& q : v) {
            if (q.label != 0) continue;
            pairs += 1;
            if (p.score > q.score) wins += 1;
            else if (p.score == q.score) wins += 0.5;
        }
    }
    if (pairs == 0) return std::nullopt;
    return wins / pairs;
}

// Second GAUC implementation: weights from raw counts, then renormalised.
double weighted_average_gauc(const std::vector<EvalRecord>& recs) {
    std::map<std::uint64_t, std::vector<ScoredLabel>> by_user;
    for (const auto& r : recs) by_user[r.user_id].push_back({r.prediction, r.label});
    std::vector<std::pair<double, double>> wa;  // (weight, auc)
    const double total_logs = double(recs.size());
    for (const auto& [u, v] : by_user) {
        auto a = pairwise_auc(v);
        if (a) wa.push_back({double(v.size()) / total_logs, *a});
    }
    double wsum = 0;
    for (auto& [w, a] : wa) wsum += w;
    double g = 0;
    for (auto& [w, a] : wa) g += (w / wsum) * a;
    return g;
}

std::vector<ScoredLabel> random_pairs(Rng& rng, std::size_t n, std::size_t levels) {
    std::vector<ScoredLabel> v(n);
    for (auto& p : v) {
        // coarse scores force ties
        p.score = levels ? double(rng.below(levels)) / double(levels) : rng.uniform();
        p.label = rng.bernoulli(0.4) ? 1 : 0;
    }
    return v;
}

}  // namespace

TEST_CASE("auc: separated, tied, one-class") {
    std::vector<ScoredLabel> sep{{0.1, 0}, {0.2, 0}, {0.8, 1}, {0.9, 1}};
    CHECK(*auc(sep) == 1.0);
    std::vector<ScoredLabel> rev{{0.9, 0}, {0.2, 1}};
    CHECK(*auc(rev) == 0.0);
    std::vector<ScoredLabel> tied{{0.5, 0}, {0.5, 1}, {0.5, 1}, {0.5, 0}};
    CHECK(*auc(tied) == 0.5);
    std::vector<ScoredLabel> one{{0.5, 1}, {0.7, 1}};
    CHECK_FALSE(auc(one).has_value());
    CHECK_FALSE(auc(std::vector<ScoredLabel>{}).has_value());
}

TEST_CASE("auc matches the pairwise oracle on 1000 random instances") {
    Rng rng(1);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        auto v = random_pairs(rng, 2 + rng.below(80), trial % 3 == 0 ? 0 : 1 + rng.below(10));
        auto a = auc(v);
        auto b = pairwise_auc(v);
        REQUIRE(a.has_value() == b.has_value());
        if (a) worst = std::max(worst, std::abs(*a - *b));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("auc is invariant under strictly monotone transforms") {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        auto v = random_pairs(rng, 60, trial % 2 ? 0 : 7);
        auto w = v;
        for (auto& p : w) p.score = std::exp(3.0 * p.score) - 7.0;
        CHECK(auc(v) == auc(w));
    }
}

TEST_CASE("gauc: single user, equal-weight pair, undefined") {
    std::vector<EvalRecord> one{{1, 0.1, 0}, {1, 0.4, 1}, {1, 0.3, 0}, {1, 0.2, 1}};
    std::vector<ScoredLabel> pairs;
    for (auto& r : one) pairs.push_back({r.prediction, r.label});
    CHECK(gauc(one) == *auc(pairs));

    std::vector<EvalRecord> two{{1, 0.1, 0}, {1, 0.9, 1}, {2, 0.9, 0}, {2, 0.1, 1}};
    CHECK(gauc(two) == doctest::Approx(0.5));  // (1 + 0) / 2

    std::vector<EvalRecord> none{{1, 0.1, 0}, {2, 0.3, 1}};
    CHECK_THROWS_AS(gauc(none), GaucUndefinedError);
    CHECK(gauc_detail(two).users_used == 2);
}

TEST_CASE("gauc matches a weighted-average oracle with skewed log counts") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<EvalRecord> recs;
        for (std::uint64_t u = 0; u < 20; ++u) {
            const std::size_t logs = 1 + rng.below(u % 4 == 0 ? 200 : 15);
            for (std::size_t i = 0; i < logs; ++i)
                recs.push_back({u, double(rng.below(20)) / 20.0, rng.bernoulli(0.3) ? 1 : 0});
        }
        CHECK(gauc(recs) == doctest::Approx(weighted_average_gauc(recs)).epsilon(1e-12));
        const double g = gauc(recs);
        CHECK(g >= 0.0);
        CHECK(g <= 1.0);
    }
}

TEST_CASE("gauc of label-independent scores is near 0.5") {
    Rng rng(4);
    EvalBuffer buf;
    for (int i = 0; i < 20000; ++i) buf.add(rng.below(50), rng.uniform(), rng.bernoulli(0.3) ? 1 : 0);
    CHECK(std::abs(gauc(buf) - 0.5) <= 0.02);
}

TEST_CASE("eval buffer validation and windows") {
    EvalBuffer buf;
    CHECK_THROWS_AS(buf.add(1, 1.5, 0), std::invalid_argument);
    CHECK_THROWS_AS(buf.add(1, 0.5, 2), std::invalid_argument);
    // First half random, second half perfectly ranked.
    Rng rng(5);
    for (int i = 0; i < 400; ++i) buf.add(i % 3, rng.uniform(), i % 2);
    for (int i = 0; i < 400; ++i) buf.add(i % 3, i % 2 ? 0.9 : 0.1, i % 2);
    CHECK(windowed_gauc(buf, 400, 4) == 1.0);
    CHECK(windowed_gauc(buf, 0, 1) < 1.0);
    CHECK(windowed_loss(buf, 400) == doctest::Approx(-std::log(0.9)));
    auto curve = gauc_curve(buf, 200);
    REQUIRE(curve.size() == 4);
    CHECK(curve[3].gauc == 1.0);
    CHECK(curve[3].end_event == 800);
}
