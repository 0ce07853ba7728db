#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "marm/sequence.hpp"

using namespace marm;

TEST_CASE("exposure_seq: cold start and short histories") {
    HistoryStore h(200);
    CHECK(h.exposure_seq(5, 10, SequenceFilter::all).empty());
    h.append({1, 5, 100, 0});
    h.append({2, 6, 999, 1});
    h.append({3, 5, 101, 1});
    h.append({7, 5, 102, 0});
    CHECK(h.exposure_seq(5, 10, SequenceFilter::all) == std::vector<std::uint64_t>{100, 101, 102});
    CHECK(h.exposure_seq(5, 2, SequenceFilter::all) == std::vector<std::uint64_t>{101, 102});
    CHECK(h.exposure_seq(5, 10, SequenceFilter::long_view_only) == std::vector<std::uint64_t>{101});
    CHECK_THROWS_AS(h.exposure_seq(5, 0, SequenceFilter::all), std::invalid_argument);
}

TEST_CASE("per-user ordering is enforced") {
    HistoryStore h(10);
    h.append({5, 1, 1, 0});
    CHECK_THROWS_AS(h.append({5, 1, 2, 0}), OrderingError);
    CHECK_THROWS_AS(h.append({4, 1, 2, 0}), OrderingError);
    CHECK_NOTHROW(h.append({4, 2, 2, 0}));  // other users have their own clock
    CHECK(h.exposure_seq(1, 5, SequenceFilter::all).size() == 1);
}

TEST_CASE("ring capacity is never exceeded and stays chronological") {
    UserHistory r(4);
    for (std::uint64_t t = 1; t <= 11; ++t) {
        r.push({t * 10, 0, t});
        CHECK(r.size() == std::min<std::size_t>(t, 4));
        for (std::size_t i = 1; i < r.size(); ++i) CHECK(r[i - 1].timestamp < r[i].timestamp);
    }
    CHECK(r[0].item_id == 80);
    CHECK(r.tail(2).back().item_id == 110);
}

TEST_CASE("long_view_only: last 100 label-1 items match a replay scan") {
    Rng rng(3);
    HistoryStore h(200);
    std::vector<EventRecord> all;
    for (std::uint64_t t = 1; t <= 500; ++t) {
        EventRecord e{t, 1, rng.below(1000), rng.bernoulli(0.5) ? 1 : 0};
        all.push_back(e);
        h.append(e);
    }
    std::vector<std::uint64_t> expect;
    for (auto it = all.rbegin(); it != all.rend() && expect.size() < 100; ++it)
        if (it->label == 1) expect.insert(expect.begin(), it->item_id);
    REQUIRE(expect.size() == 100);
    CHECK(h.exposure_seq(1, 100, SequenceFilter::long_view_only) == expect);
}

TEST_CASE("suffix property and no target leakage over a synthetic replay") {
    SynthConfig cfg;
    cfg.num_users = 20;
    cfg.num_events = 3000;
    HistoryStore h(64);
    std::map<std::uint64_t, std::vector<EventRecord>> consumed;
    for (const auto& e : synth_stream(cfg, 9)) {
        for (auto filter : {SequenceFilter::all, SequenceFilter::long_view_only}) {
            auto longer = h.exposure_events(e.user_id, 50, filter);
            auto shorter = h.exposure_events(e.user_id, 17, filter);
            REQUIRE(shorter.size() <= longer.size());
            CHECK(std::equal(shorter.begin(), shorter.end(), longer.end() - shorter.size()));
            for (const auto& item : longer) REQUIRE(item.timestamp < e.timestamp);
            // Replay oracle for the unfiltered sequence.
            if (filter == SequenceFilter::all) {
                const auto& past = consumed[e.user_id];
                const std::size_t m = std::min<std::size_t>(50, past.size());
                REQUIRE(longer.size() == m);
                for (std::size_t i = 0; i < m; ++i)
                    REQUIRE(longer[i].item_id == past[past.size() - m + i].item_id);
            }
        }
        h.append(e);
        consumed[e.user_id].push_back(e);
    }
}

TEST_CASE("synth_stream is deterministic and well formed") {
    SynthConfig cfg;
    cfg.num_events = 5000;
    cfg.signature_weight = 0.5;
    auto a = synth_stream(cfg, 1);
    auto b = synth_stream(cfg, 1);
    auto c = synth_stream(cfg, 2);
    CHECK(a == b);
    CHECK(a != c);
    REQUIRE(a.size() == 5000);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].timestamp == i + 1);
        CHECK(a[i].user_id >= 1);
        CHECK(a[i].user_id <= cfg.num_users);
        CHECK(a[i].item_id >= 1);
        CHECK(a[i].item_id <= cfg.num_items());
        CHECK(a[i].item_cluster == int((a[i].item_id - 1) / cfg.items_per_cluster));
    }
}

TEST_CASE("synth config validation") {
    SynthConfig cfg;
    cfg.num_clusters = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SynthConfig{};
    cfg.num_clusters = 2;
    cfg.transition = {{0.5, 0.5}, {0.3, 0.6}};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.transition = {{0.5, 0.5}, {0.4, 0.6}};
    CHECK_NOTHROW(cfg.validate());
    cfg.transition = {{1.5, -0.5}, {0.4, 0.6}};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.transition = {{1.0, 0.0}};
    CHECK_THROWS_AS(SynthStream(cfg, 1), std::invalid_argument);
    cfg = SynthConfig{};
    cfg.base_rate = 0.7;
    cfg.gap = 0.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("identity transition: in-cluster minus out-of-cluster label rate reaches the gap") {
    SynthConfig cfg;
    cfg.num_clusters = 4;
    cfg.num_events = 100000;
    cfg.transition.assign(4, std::vector<double>(4, 0.0));
    for (std::size_t i = 0; i < 4; ++i) cfg.transition[i][i] = 1.0;
    cfg.base_rate = 0.1;
    cfg.gap = 0.3;
    cfg.signature_weight = 0.0;
    SynthStream stream(cfg, 5);
    double pos_in = 0, n_in = 0, pos_out = 0, n_out = 0;
    while (auto e = stream.next()) {
        const bool match = std::size_t(e->item_cluster) == stream.state_of(e->user_id);
        (match ? pos_in : pos_out) += e->label;
        (match ? n_in : n_out) += 1;
    }
    const double diff = pos_in / n_in - pos_out / n_out;
    // Binomial noise on ~1e5 draws is ~0.003; allow three sigma below the planted gap.
    CHECK(diff >= cfg.gap - 0.01);
    CHECK(diff <= cfg.gap + 0.01);

    // Stationary label rate: base + gap * P(match), P(match) = bias + (1 - bias) / C.
    const double p_match = cfg.exposure_bias + (1 - cfg.exposure_bias) / 4.0;
    const double rate = (pos_in + pos_out) / (n_in + n_out);
    CHECK(rate == doctest::Approx(cfg.base_rate + cfg.gap * p_match).epsilon(0.02));
}

TEST_CASE("event file roundtrip and rejection") {
    SynthConfig cfg;
    cfg.num_events = 300;
    auto events = synth_stream(cfg, 4);
    std::stringstream buf;
    write_events(buf, events);
    auto back = read_events(buf);
    REQUIRE(back.size() == events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
        auto e = events[i];
        e.item_cluster = -1;  // not part of the file
        CHECK(back[i] == e);
    }
    std::istringstream bad1("1,2,3,0\n2,2,3\n");
    CHECK_THROWS_AS(read_events(bad1), std::invalid_argument);
    std::istringstream bad2("1,2,3,0\n1,2,3,1\n");
    CHECK_THROWS_AS(read_events(bad2), std::invalid_argument);
    std::istringstream bad3("1,2,3,2\n");
    CHECK_THROWS_AS(read_events(bad3), std::invalid_argument);
    std::istringstream bad4("1,x,3,0\n");
    CHECK_THROWS_AS(read_events(bad4), std::invalid_argument);
    std::istringstream ok("\n5,1,1,1\r\n");
    CHECK(read_events(ok).size() == 1);
}

TEST_CASE("unique_items_per_user never repeats an item for a user") {
    SynthConfig cfg;
    cfg.num_users = 5;
    cfg.num_clusters = 2;
    cfg.items_per_cluster = 100;
    cfg.num_events = 900;  // ~180 of 200 items per user
    cfg.unique_items_per_user = true;
    std::map<std::uint64_t, std::set<std::uint64_t>> seen;
    for (const auto& e : synth_stream(cfg, 8)) CHECK(seen[e.user_id].insert(e.item_id).second);

    cfg.num_events = 1200;
    CHECK_THROWS_AS(synth_stream(cfg, 8), std::runtime_error);
}

TEST_CASE("signature: mood modulates matched clicks and in-state signature exposures") {
    SynthConfig cfg;
    cfg.num_events = 200000;
    cfg.signature_weight = 1.0;
    cfg.base_rate = 0.1;
    cfg.gap = 0.6;
    SynthStream stream(cfg, 9);
    double clicks[2] = {0, 0}, matches[2] = {0, 0};
    double core[2] = {0, 0}, in_state[2] = {0, 0};
    while (auto e = stream.next()) {
        const int mood = stream.engaged(e->user_id) ? 1 : 0;
        if (std::size_t(e->item_cluster) != stream.state_of(e->user_id)) continue;
        matches[mood] += 1;
        clicks[mood] += e->label;
        in_state[mood] += 1;
        core[mood] += stream.is_signature_item(e->item_id) ? 1 : 0;
    }
    CHECK(clicks[1] / matches[1] == doctest::Approx(cfg.base_rate + cfg.gap).epsilon(0.03));
    CHECK(clicks[0] / matches[0] == doctest::Approx(cfg.base_rate).epsilon(0.1));
    // Matched exposures mix in-state draws with uniform ones that land on the state.
    const double f = cfg.core_fraction;
    const double w_in = cfg.exposure_bias, w_rand = (1 - cfg.exposure_bias) / cfg.num_clusters;
    auto expected = [&](double p) { return (w_in * (p + (1 - p) * f) + w_rand * f) / (w_in + w_rand); };
    CHECK(core[1] / in_state[1] == doctest::Approx(expected(cfg.engaged_core_prob)).epsilon(0.03));
    CHECK(core[0] / in_state[0] == doctest::Approx(expected(cfg.idle_core_prob)).epsilon(0.05));
}
