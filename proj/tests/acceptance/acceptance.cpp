// Acceptance suite: one PASS/FAIL line per criterion.
//
//   marm_acceptance [--only 1,4] [--known-failures 3] [--threads N]
//
// Exit status is 0 when every failing criterion is listed in --known-failures.

#include <stdlib.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "marm/cache_store.hpp"
#include "marm/flops.hpp"
#include "marm/gsu.hpp"
#include "marm/harness.hpp"
#include "marm/metrics.hpp"
#include "marm/network.hpp"
#include "test_util.hpp"

using namespace marm;
using namespace marm::testing;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// ---- 1

Outcome oracle_equivalence() {
    const auto start = Clock::now();
    const auto configs = random_oracle_configs(120, 2024);
    double worst = 0.0, worst_vec = 0.0;
    std::size_t steps = 0;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const auto r = run_equivalence(configs[i], 200, 4, 100 + i);
        worst = std::max(worst, r.max_rel_error);
        worst_vec = std::max(worst_vec, r.max_rel_error_vector);
        steps += r.steps;
    }
    const double t = since(start);
    return {worst <= 1e-5 && t < 60.0,
            fmt("configs=%zu steps=%zu max_rel_error=%.3g (interest vectors %.3g) time=%.1fs", configs.size(), steps,
                worst, worst_vec, t)};
}

// ---- 2

Outcome flops_separation() {
    const auto start = Clock::now();
    ModelConfig c;
    c.n = 1000;
    c.d = 128;
    c.F = 128;
    c.L = 4;
    const double ratio = double(count_flops(c, FlopsMode::uncached_msa).total_flops) /
                         double(count_flops(c, FlopsMode::cached_ta).total_flops);
    const auto s = measure_predict_scaling(c, {100, 400, 1600});
    const double t = since(start);
    std::string times;
    for (std::size_t i = 0; i < s.n.size(); ++i) times += fmt(" n%zu=%.4fs", s.n[i], s.seconds[i]);
    return {ratio >= 100.0 && s.exponent < 1.3 && t < 300.0,
            fmt("flops_ratio=%.1f time_exponent=%.3f%s time=%.1fs", ratio, s.exponent, times.c_str(), t)};
}

// ---- 3

Outcome scaling_trend(std::size_t threads) {
    const auto start = Clock::now();
    SweepConfig s;  // L {0,1,2} x n {25,50,100}, d 16, seeds {1,2,3}, 500 users, 2e5 events
    s.threads = threads;
    const auto rows = run_sweep(s);
    const auto means = grid_means(rows);
    for (const auto& m : means)
        std::printf("  L=%zu n=%zu C=%llu mean_gauc=%.4f std=%.4f\n", m.L, m.n, static_cast<unsigned long long>(m.C),
                    m.mean_gauc, m.std_gauc);
    const auto t = check_scaling_trend(means);
    const double secs = since(start);
    return {t.passed && secs < 1800.0,
            fmt("inversions=%zu worst_drop=%.4f baseline=%.4f largest_C=%.4f gain=%.4f events=%zu time=%.0fs",
                t.inversions, t.worst_drop, t.baseline_gauc, t.largest_c_gauc, t.largest_c_gauc - t.baseline_gauc,
                s.stream.num_events, secs)};
}

// ---- 4

struct GradInstance {
    NetworkParams<double> params;
    std::vector<double> target;
    Matrix<double> history;
    std::vector<CachedRow<double>> cached;
    int label = 1;
};

GradInstance grad_instance(Rng& rng) {
    GradInstance in;
    ModelConfig cfg;
    cfg.L = rng.below(4);
    cfg.d = 1 + rng.below(8);
    cfg.F = 1 + rng.below(8);
    cfg.d_ff = 1 + rng.below(16);
    const std::size_t n = 1 + rng.below(10);
    in.params = NetworkParams<double>::zeros(cfg);
    for (std::size_t i = 0; i <= cfg.L; ++i)
        in.params.layers[i] = random_layer<double>(i == 0 ? cfg.F : cfg.d, cfg.d, cfg.d_ff, i == 0 ? cfg.F : cfg.d,
                                                   rng, 1.5);
    in.params.head_w = random_vec<double>(cfg.d, rng);
    in.params.head_b = rng.uniform(-0.5, 0.5);
    in.target = random_vec<double>(cfg.F, rng);
    in.history = random_matrix<double>(n, cfg.F, rng);
    in.cached.resize(cfg.L);
    for (auto& r : in.cached) {
        r.values = random_matrix<double>(n, cfg.d, rng);
        r.hit.assign(n, 1);
        for (auto& h : r.hit) h = rng.bernoulli(0.8) ? 1 : 0;
    }
    in.label = rng.bernoulli(0.5) ? 1 : 0;
    return in;
}

Outcome gradient_correctness() {
    const auto start = Clock::now();
    Rng rng(4242);
    double worst = 0.0;
    std::size_t partials = 0, nonzero_cached = 0, cached_slots = 0;
    for (int trial = 0; trial < 60; ++trial) {
        auto in = grad_instance(rng);
        auto loss = [&] {
            const auto out = network_forward<double>(in.params, in.target, in.history, in.cached);
            return bce_with_logit(out.logit, in.label);
        };
        const auto out = network_forward<double>(in.params, in.target, in.history, in.cached);
        const auto g = network_backward<double>(in.params, in.target, in.history, in.cached, out, in.label);
        auto check = [&](std::span<double> values, std::span<const double> grads) {
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double h = 1e-6, saved = values[i];
                values[i] = saved + h;
                const double up = loss();
                values[i] = saved - h;
                const double down = loss();
                values[i] = saved;
                const double num = (up - down) / (2 * h);
                const double scale = std::max({std::abs(num), std::abs(grads[i]), 1e-5});
                worst = std::max(worst, std::abs(num - grads[i]) / scale);
                ++partials;
            }
        };
        auto fields = in.params.fields();
        const auto gfields = g.params.fields();
        for (std::size_t f = 0; f < fields.size(); ++f) check(fields[f], gfields[f]);
        for (const auto& m : g.cached)
            for (double v : m.data) {
                ++cached_slots;
                if (v != 0.0) ++nonzero_cached;
            }
    }
    const double t = since(start);
    return {worst <= 1e-4 && nonzero_cached == 0 && t < 60.0,
            fmt("partials=%zu worst_rel=%.3g cached_grad_entries=%zu nonzero=%zu time=%.1fs", partials, worst,
                cached_slots, nonzero_cached, t)};
}

// ---- 5

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

double weighted_gauc(const std::vector<EvalRecord>& recs) {
    std::map<std::uint64_t, std::vector<ScoredLabel>> by_user;
    for (const auto& r : recs) by_user[r.user_id].push_back({r.prediction, r.label});
    double num = 0, den = 0;
    for (const auto& [u, v] : by_user)
        if (auto a = pairwise_auc(v)) {
            num += double(v.size()) * *a;
            den += double(v.size());
        }
    return num / den;
}

Outcome metric_oracles() {
    Rng rng(55);
    double auc_err = 0.0, gauc_err = 0.0, single_err = 0.0;
    std::size_t undefined_mismatch = 0;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t n = 1 + rng.below(120);
        const std::size_t levels = i % 3 == 0 ? 1 + rng.below(6) : 0;
        std::vector<ScoredLabel> v(n);
        for (auto& p : v) {
            p.score = levels ? double(rng.below(levels)) : rng.uniform();
            p.label = rng.bernoulli(0.35) ? 1 : 0;
        }
        const auto got = auc(v), want = pairwise_auc(v);
        if (got.has_value() != want.has_value()) {
            ++undefined_mismatch;
            continue;
        }
        if (got) auc_err = std::max(auc_err, std::abs(*got - *want));
        if (got) {
            std::vector<EvalRecord> one;
            for (const auto& p : v) one.push_back({7, p.score, p.label});
            single_err = std::max(single_err, std::abs(gauc(one) - *got));
        }
    }
    for (int i = 0; i < 200; ++i) {
        std::vector<EvalRecord> recs;
        for (std::uint64_t u = 0; u < 25; ++u) {
            const std::size_t logs = 1 + rng.below(u % 5 == 0 ? 150 : 12);
            for (std::size_t k = 0; k < logs; ++k)
                recs.push_back({u, double(rng.below(16)) / 16.0, rng.bernoulli(0.3) ? 1 : 0});
        }
        gauc_err = std::max(gauc_err, std::abs(gauc(recs) - weighted_gauc(recs)));
    }
    return {auc_err <= 1e-12 && gauc_err <= 1e-12 && single_err <= 1e-12 && undefined_mismatch == 0,
            fmt("auc_max_err=%.2g gauc_max_err=%.2g single_user_err=%.2g undefined_mismatch=%zu", auc_err, gauc_err,
                single_err, undefined_mismatch)};
}

// ---- 6

std::string serialize(const CacheStore& s) {
    std::ostringstream out(std::ios::binary);
    s.write(out);
    return out.str();
}

Outcome cache_semantics() {
    const std::size_t d = 3, L = 3, retain = 6;
    CacheStore s(d, retain, L);
    Rng rng(66);
    std::map<CacheKey, std::vector<float>> first_write;
    std::map<std::pair<std::uint64_t, std::uint16_t>, std::vector<CacheKey>> written;
    std::map<std::uint64_t, std::uint64_t> clock;
    std::size_t ops = 0, bad_reject = 0, bad_window = 0, bad_count = 0, rejections = 0;
    std::uint64_t accepted = 0, rejected = 0;
    std::set<std::uint64_t> users;
    for (int step = 0; step < 15000; ++step) {
        const std::uint64_t user = rng.below(8);
        users.insert(user);
        if (rng.bernoulli(0.65)) {
            const std::uint64_t t = ++clock[user];
            // Small item space: many rewrites of existing or evicted keys.
            const std::uint64_t item = rng.below(60);
            std::vector<CacheEntry> batch;
            for (std::uint16_t k = 1; k <= L; ++k)
                if (rng.bernoulli(0.8)) batch.push_back({{user, item, k}, random_vec<float>(d, rng), t});
            std::size_t expect = 0;
            for (const auto& e : batch) {
                if (first_write.contains(e.key)) {
                    ++rejected;
                    continue;
                }
                first_write[e.key] = e.value;
                written[{user, e.key.depth}].push_back(e.key);
                ++expect;
            }
            accepted += expect;
            rejections += batch.size() - expect;
            if (s.save_batch(batch) != expect) ++bad_reject;
            ops += batch.size();
        } else {
            const CacheKey key{user, rng.below(60), static_cast<std::uint16_t>(1 + rng.below(L))};
            const auto got = s.peek(key);
            const auto& hist = written[{user, key.depth}];
            const bool live = std::find(hist.end() - std::min(hist.size(), retain), hist.end(), key) != hist.end();
            if (got.has_value() != live || (got && *got != first_write.at(key))) ++bad_window;
            ++ops;
        }
        const auto st = s.stats();
        if (st.element_count != st.entries * d || st.entries + st.evictions != st.accepted ||
            st.element_count > users.size() * L * retain * d)
            ++bad_count;
    }
    std::uint64_t live = 0;
    for (const auto& [wk, hist] : written) {
        const auto win = s.window(wk.first, wk.second);
        const std::size_t keep = std::min(hist.size(), retain);
        if (win.size() != keep) ++bad_window;
        for (std::size_t i = 0; i < win.size() && i < keep; ++i)
            if (win[i].key != hist[hist.size() - keep + i]) ++bad_window;
        live += win.size();
    }
    const auto st = s.stats();
    if (st.entries != live || st.accepted != accepted || st.rejected != rejected) ++bad_count;

    const auto path = std::filesystem::temp_directory_path() / fmt("marm_acceptance_%d.cache", int(getpid()));
    s.persist(path);
    const auto back = CacheStore::load(path);
    std::filesystem::remove(path);
    const bool roundtrip = serialize(back) == serialize(s) && back.stats() == s.stats();
    return {ops >= 10000 && bad_reject == 0 && bad_window == 0 && bad_count == 0 && roundtrip && rejections > 0,
            fmt("ops=%zu rejected_writes=%zu write_once_violations=%zu window_violations=%zu "
                "accounting_violations=%zu roundtrip=%s",
                ops, rejections, bad_reject, bad_window, bad_count, roundtrip ? "exact" : "differs")};
}

// ---- 7

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream in(line);
    std::string f;
    while (std::getline(in, f, ',')) out.push_back(f);
    return out;
}

Outcome gsu_exactness() {
    Rng rng(77);
    std::size_t search_mismatch = 0, overlap_mismatch = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t d = 1 + rng.below(8), count = 1 + rng.below(150), K = 1 + rng.below(25);
        const auto layer = random_layer<float>(d, d, 2 * d, d, rng);
        auto vecs = random_matrix<float>(count, d, rng);
        if (trial % 4 == 0)
            for (auto& x : vecs.data) x = std::round(x);
        std::vector<GsuCandidate> cands;
        for (std::size_t j = 0; j < count; ++j) cands.push_back({500 + j, rng.below(trial % 4 == 0 ? 4 : 100000), vecs.row(j)});
        const auto q = random_vec<float>(d, rng);
        const auto scores = attention_logits<float>(q, ConstRowsView<float>(vecs), layer);
        std::vector<std::size_t> idx(count);
        for (std::size_t j = 0; j < count; ++j) idx[j] = j;
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            if (cands[a].recency != cands[b].recency) return cands[a].recency > cands[b].recency;
            return cands[a].item_id < cands[b].item_id;
        });
        const auto got = gsu_search(q, cands, K, layer);
        bool same = got.items.size() == std::min(K, count);
        for (std::size_t j = 0; same && j < got.items.size(); ++j) same = got.items[j].item_id == cands[idx[j]].item_id;
        if (!same) ++search_mismatch;

        std::vector<SearchResult> rs(1 + rng.below(5));
        std::vector<std::set<std::uint64_t>> sets;
        for (auto& r : rs) {
            std::set<std::uint64_t> s;
            const std::size_t size = 1 + rng.below(12);
            while (s.size() < size) s.insert(rng.below(30));
            for (auto id : s) r.items.push_back({id, 0.0f, 0});
            sets.push_back(s);
        }
        const auto m = overlap_matrix(rs);
        for (std::size_t i = 0; i < rs.size(); ++i)
            for (std::size_t j = 0; j < rs.size(); ++j) {
                std::vector<std::uint64_t> inter;
                std::set_intersection(sets[i].begin(), sets[i].end(), sets[j].begin(), sets[j].end(),
                                      std::back_inserter(inter));
                const double want =
                    i == j ? 1.0 : double(inter.size()) / double(std::min(sets[i].size(), sets[j].size()));
                if (m[i][j] != want) ++overlap_mismatch;
            }
    }

    // Trained L=4 toy run.
    ModelConfig c;
    c.L = 4;
    c.n = 16;
    c.d = 8;
    c.F = 8;
    c.K = 4;
    SynthConfig sc;
    sc.num_users = 30;
    sc.num_events = 6000;
    const auto events = synth_stream(sc, 7);
    const std::vector<EventRecord> head(events.begin(), events.end() - 300);
    const std::vector<EventRecord> tail(events.end() - 300, events.end());
    auto run = train_on_stream(c, head, EvalSpec{1000, 2});
    const auto a = analyze_overlap(run.engine, tail);
    std::stringstream csv;
    write_overlap_csv(csv, a);
    std::string line;
    std::getline(csv, line);
    bool well_formed = line == "target_id,layer_i,layer_j,overlap";
    std::size_t rows = 0, diag_bad = 0;
    std::map<std::tuple<std::string, std::size_t, std::size_t>, double> cells;
    while (std::getline(csv, line)) {
        const auto f = split(line);
        if (f.size() != 4) {
            well_formed = false;
            continue;
        }
        ++rows;
        try {
            std::size_t pos = 0;
            std::stoull(f[0], &pos);
            well_formed &= pos == f[0].size();
            const auto i = std::stoul(f[1]), j = std::stoul(f[2]);
            const double v = std::stod(f[3]);
            well_formed &= i >= 1 && i <= c.L && j >= 1 && j <= c.L && v >= 0.0 && v <= 1.0;
            if (i == j && v != 1.0) ++diag_bad;
            cells[{f[0], i, j}] = v;
        } catch (const std::exception&) {
            well_formed = false;
        }
    }
    for (const auto& [k, v] : cells) {
        const auto it = cells.find({std::get<0>(k), std::get<2>(k), std::get<1>(k)});
        if (it == cells.end() || it->second != v) well_formed = false;
    }
    well_formed &= rows == a.targets * c.L * c.L && a.targets > 0;
    double off = 0.0;
    for (std::size_t i = 0; i < c.L; ++i)
        for (std::size_t j = 0; j < c.L; ++j)
            if (i != j) off += a.mean[i][j] / double(c.L * (c.L - 1));
    return {search_mismatch == 0 && overlap_mismatch == 0 && well_formed && diag_bad == 0,
            fmt("search_mismatch=%zu overlap_mismatch=%zu toy_rows=%zu well_formed=%s diagonal_not_1=%zu "
                "mean_pairwise_overlap=%.3f (reported only)",
                search_mismatch, overlap_mismatch, rows, well_formed ? "yes" : "no", diag_bad, off)};
}

// ---- 8

Outcome downsampling_direction() {
    const auto start = Clock::now();
    std::string detail;
    bool ok = true;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        DownsampleConfig c;  // default stream, 2e5 events
        c.model.L = 0;
        c.model.n = 50;
        c.keep_fraction = 0.5;
        c.seed = seed;
        const auto r = run_downsample(c);
        ok &= r.final_gauc_thinned <= r.final_gauc_full;
        detail += fmt("seed%llu full=%.4f half=%.4f; ", static_cast<unsigned long long>(seed), r.final_gauc_full,
                      r.final_gauc_thinned);
    }
    return {ok, detail + fmt("time=%.0fs", since(start))};
}

// ---- 9

Outcome cli_determinism() {
#ifndef MARM_CLI_PATH
    return {false, "built without the CLI"};
#else
    const std::string cli = MARM_CLI_PATH;
    char tmpl[] = "/tmp/marm_acceptance_XXXXXX";
    if (!mkdtemp(tmpl)) return {false, "cannot create a scratch directory"};
    const std::filesystem::path dir = tmpl;
    {
        std::ofstream cfg(dir / "cfg.json");
        cfg << R"({"model": {"L": 2, "n": 12, "d": 8, "F": 8, "K": 4},
                   "stream": {"num_users": 40, "num_events": 8000},
                   "eval": {"window": 2000, "sub_windows": 2},
                   "grid": {"L": [0, 1, 2], "n": [6, 12], "d": [8], "seeds": [1, 2]},
                   "downsample": {"curve_window": 1000}})";
    }
    const std::vector<std::pair<std::string, std::vector<std::string>>> commands{
        {"gen-data -c cfg.json --seed 5 -o {}events.csv", {"events.csv"}},
        {"train -c cfg.json --seed 5 -o {}train.csv --curve {}curve.csv --checkpoint {}ckpt.bin --cache-out "
         "{}cache.bin",
         {"train.csv", "curve.csv", "ckpt.bin", "cache.bin"}},
        {"sweep -c cfg.json --threads 1 --fresh -o {}sweep.csv --svg {}sweep.svg", {"sweep.csv", "sweep.svg"}},
        {"verify-oracle --configs 10 --steps 60 --seed 9 -o {}oracle.csv", {"oracle.csv"}},
        {"bench-flops -n 1000 -d 128 -L 4 -o {}flops.csv", {"flops.csv"}},
        {"downsample -c cfg.json --seed 5 -o {}down.csv", {"down.csv"}},
        {"analyze-overlap -c cfg.json --seed 5 --targets 100 -o {}overlap.csv --mean-out {}mean.csv",
         {"overlap.csv", "mean.csv"}},
    };
    std::size_t files = 0, differing = 0, failed = 0;
    for (const auto& [args, outs] : commands) {
        for (const char* run : {"a_", "b_"}) {
            std::string a = args;
            for (auto p = a.find("{}"); p != std::string::npos; p = a.find("{}")) a.replace(p, 2, run);
            const std::string cmd = "cd '" + dir.string() + "' && '" + cli + "' " + a + " > /dev/null 2>&1";
            if (std::system(cmd.c_str()) != 0) ++failed;
        }
        for (const auto& f : outs) {
            auto slurp = [&](const std::string& name) {
                std::ifstream in(dir / name, std::ios::binary);
                std::stringstream s;
                s << in.rdbuf();
                return s.str();
            };
            const auto a = slurp("a_" + f), b = slurp("b_" + f);
            ++files;
            if (a.empty() || a != b) ++differing;
        }
    }
    std::filesystem::remove_all(dir);
    return {failed == 0 && differing == 0,
            fmt("commands=%zu files_compared=%zu differing=%zu failed_runs=%zu", commands.size(), files, differing,
                failed)};
#endif
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance suite"};
    std::vector<int> only, known;
    std::size_t threads = 1;
    app.add_option("--only", only, "criteria to run")->delimiter(',');
    app.add_option("--known-failures", known, "criteria allowed to fail")->delimiter(',');
    app.add_option("--threads", threads, "parallel grid points for the sweep")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"oracle equivalence", oracle_equivalence},
        {"flops separation", flops_separation},
        {"scaling trend", [threads] { return scaling_trend(threads); }},
        {"gradient correctness", gradient_correctness},
        {"metric oracles", metric_oracles},
        {"cache semantics", cache_semantics},
        {"gsu exactness", gsu_exactness},
        {"downsampling direction", downsampling_direction},
        {"cli determinism", cli_determinism},
    };
    int unexpected = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = int(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const bool expected = std::find(known.begin(), known.end(), id) != known.end();
        std::printf("%s criterion %d (%s): %s%s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(),
                    !o.pass && expected ? " [known failure]" : "");
        std::fflush(stdout);
        if (!o.pass && !expected) ++unexpected;
    }
    return unexpected == 0 ? 0 : 1;
}
