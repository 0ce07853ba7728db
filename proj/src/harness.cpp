#include "marm/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "marm/flops.hpp"
#include "marm/random.hpp"

namespace marm {

std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---- sweep

TrainingRun train_on_stream(const ModelConfig& config, const std::vector<EventRecord>& events, const EvalSpec& eval,
                            bool record_time) {
    const auto start = std::chrono::steady_clock::now();
    TrainingRun run{{}, {}, MarmEngine(config)};
    for (const auto& e : events) {
        const auto r = run.engine.train_step(e);
        run.buffer.add(e.user_id, r.prediction, e.label);
    }
    auto& out = run.result;
    out.L = config.L;
    out.n = config.n;
    out.d = config.d;
    out.C = config.cache_size();
    out.seed = config.seed;
    out.final_gauc = windowed_gauc(run.buffer, eval.window, eval.sub_windows);
    out.final_loss = windowed_loss(run.buffer, eval.window);
    out.total_flops = count_flops(config, FlopsMode::cached_ta).total_flops * events.size();
    out.cache_element_count = run.engine.cache().stats().element_count;
    if (record_time) {
        out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    return run;
}

SweepResult run_point(const ModelConfig& config, const std::vector<EventRecord>& events, const EvalSpec& eval,
                      bool record_time) {
    return train_on_stream(config, events, eval, record_time).result;
}

namespace {

using PointKey = std::tuple<std::size_t, std::size_t, std::size_t, std::uint64_t>;  // L, n, d, seed

PointKey key_of(const SweepResult& r) { return {r.L, r.n, r.d, r.seed}; }

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

std::string sweep_csv_header() {
    return "L,n,d,C,seed,final_gauc,final_loss,total_flops,cache_element_count,wall_time";
}

std::string to_csv_row(const SweepResult& r) {
    std::ostringstream out;
    out << r.L << ',' << r.n << ',' << r.d << ',' << r.C << ',' << r.seed << ',' << format_real(r.final_gauc)
        << ',' << format_real(r.final_loss) << ',' << r.total_flops << ',' << r.cache_element_count << ','
        << format_real(r.wall_time);
    return out.str();
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepResult>& rows) {
    out << sweep_csv_header() << '\n';
    for (const auto& r : rows) out << to_csv_row(r) << '\n';
}

std::vector<SweepResult> read_sweep_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != sweep_csv_header())
        throw std::invalid_argument("results file does not start with the sweep header");
    std::vector<SweepResult> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 10) throw std::invalid_argument("line " + std::to_string(line_no) + ": expected 10 fields");
        try {
            SweepResult r;
            r.L = std::stoull(f[0]);
            r.n = std::stoull(f[1]);
            r.d = std::stoull(f[2]);
            r.C = std::stoull(f[3]);
            r.seed = std::stoull(f[4]);
            r.final_gauc = std::stod(f[5]);
            r.final_loss = std::stod(f[6]);
            r.total_flops = std::stoull(f[7]);
            r.cache_element_count = std::stoull(f[8]);
            r.wall_time = std::stod(f[9]);
            if (r.C != std::uint64_t(r.L) * r.n * r.d) throw std::invalid_argument("C != L*n*d");
            rows.push_back(r);
        } catch (const std::exception& e) {
            throw std::invalid_argument("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

std::vector<SweepResult> run_sweep(const SweepConfig& config, const std::optional<std::filesystem::path>& csv_path,
                                   const std::function<void(const SweepResult&)>& on_row) {
    const auto& g = config.grid;
    if (g.L.empty() || g.n.empty() || g.d.empty() || g.seeds.empty())
        throw std::invalid_argument("sweep grid has an empty axis");

    // Grid order: seed, L, n, d.
    std::vector<ModelConfig> points;
    for (auto seed : g.seeds)
        for (auto L : g.L)
            for (auto n : g.n)
                for (auto d : g.d) {
                    ModelConfig c = config.base;
                    c.L = L;
                    c.n = n;
                    c.d = d;
                    c.seed = seed;
                    c.mode = EngineMode::ranking;
                    if (c.cache_size() > config.max_cache_size) {
                        throw GridTooLargeError("grid point L=" + std::to_string(L) + " n=" + std::to_string(n) +
                                                " d=" + std::to_string(d) + " has C=" +
                                                std::to_string(c.cache_size()) + " above the cap " +
                                                std::to_string(config.max_cache_size));
                    }
                    c.validate();
                    points.push_back(c);
                }
    auto point_key = [](const ModelConfig& c) { return PointKey{c.L, c.n, c.d, c.seed}; };

    std::map<PointKey, SweepResult> done;
    if (csv_path && std::filesystem::exists(*csv_path)) {
        std::ifstream in(*csv_path);
        for (const auto& r : read_sweep_csv(in)) done.emplace(key_of(r), r);
    }

    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < points.size(); ++i)
        if (!done.contains(point_key(points[i]))) todo.push_back(i);

    // Streams are shared by every point of a seed.
    std::map<std::uint64_t, std::vector<EventRecord>> streams;
    if (!todo.empty()) {
        std::optional<std::vector<EventRecord>> file_events;
        if (config.events_file) {
            std::ifstream in(*config.events_file);
            if (!in) throw std::runtime_error("cannot open " + config.events_file->string());
            file_events = read_events(in);
        }
        for (auto i : todo) {
            const auto seed = points[i].seed;
            if (streams.contains(seed)) continue;
            streams[seed] = file_events ? *file_events : synth_stream(config.stream, seed);
        }
    }

    std::ofstream csv;
    if (csv_path) {
        const bool fresh = done.empty();
        csv.open(*csv_path, fresh ? std::ios::trunc : std::ios::app);
        if (!csv) throw std::runtime_error("cannot open " + csv_path->string() + " for writing");
        if (fresh) csv << sweep_csv_header() << '\n' << std::flush;
    }

    std::mutex mu;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    auto worker = [&] {
        for (;;) {
            const std::size_t t = next.fetch_add(1);
            if (t >= todo.size()) return;
            {
                std::lock_guard lock(mu);
                if (failure) return;
            }
            try {
                const auto& c = points[todo[t]];
                auto row = run_point(c, streams.at(c.seed), config.eval, config.record_time);
                std::lock_guard lock(mu);
                done.emplace(key_of(row), row);
                if (csv.is_open()) csv << to_csv_row(row) << '\n' << std::flush;
                if (on_row) on_row(row);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::max<std::size_t>(1, std::min(config.threads, todo.size()));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<SweepResult> rows;
    for (const auto& c : points) rows.push_back(done.at(point_key(c)));
    if (csv.is_open()) {
        // Completion order depends on scheduling; leave the file in grid order.
        csv.close();
        const auto tmp = std::filesystem::path(csv_path->string() + ".tmp");
        {
            std::ofstream out(tmp, std::ios::trunc);
            write_sweep_csv(out, rows);
        }
        std::filesystem::rename(tmp, *csv_path);
    }
    return rows;
}

std::vector<GridMean> grid_means(const std::vector<SweepResult>& rows) {
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::vector<double>> groups;
    for (const auto& r : rows) groups[{r.L, r.n, r.d}].push_back(r.final_gauc);
    std::vector<GridMean> out;
    for (const auto& [k, v] : groups) {
        GridMean m;
        std::tie(m.L, m.n, m.d) = k;
        m.C = std::uint64_t(m.L) * m.n * m.d;
        m.seeds = v.size();
        double sum = 0;
        for (double x : v) sum += x;
        m.mean_gauc = sum / double(v.size());
        double ss = 0;
        for (double x : v) ss += (x - m.mean_gauc) * (x - m.mean_gauc);
        m.std_gauc = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0;
        out.push_back(m);
    }
    return out;
}

TrendCheck check_scaling_trend(const std::vector<GridMean>& means, std::size_t max_inversions, double max_drop,
                               double min_gain) {
    TrendCheck t;
    if (means.empty()) {
        t.notes.push_back("no grid points");
        return t;
    }
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, const GridMean*> at;
    std::set<std::size_t> Ls, ns, ds;
    for (const auto& m : means) {
        at[{m.L, m.n, m.d}] = &m;
        Ls.insert(m.L);
        ns.insert(m.n);
        ds.insert(m.d);
    }
    auto step = [&](const GridMean* a, const GridMean* b) {
        if (!a || !b) return;
        const double drop = a->mean_gauc - b->mean_gauc;
        if (drop > 0) {
            ++t.inversions;
            t.worst_drop = std::max(t.worst_drop, drop);
            t.notes.push_back("inversion " + format_real(drop) + " from (L=" + std::to_string(a->L) + ",n=" +
                              std::to_string(a->n) + ",d=" + std::to_string(a->d) + ") to (L=" +
                              std::to_string(b->L) + ",n=" + std::to_string(b->n) + ",d=" +
                              std::to_string(b->d) + ")");
        }
    };
    auto find = [&](std::size_t L, std::size_t n, std::size_t d) -> const GridMean* {
        auto it = at.find({L, n, d});
        return it == at.end() ? nullptr : it->second;
    };
    for (auto d : ds) {
        for (auto L : Ls)  // along n; C is constant (0) on the L = 0 line
            for (auto it = ns.begin(); std::next(it) != ns.end(); ++it) step(find(L, *it, d), find(L, *std::next(it), d));
        for (auto n : ns)  // along L
            for (auto it = Ls.begin(); std::next(it) != Ls.end(); ++it) step(find(*it, n, d), find(*std::next(it), n, d));
    }
    for (auto L : Ls)  // along d
        for (auto n : ns)
            for (auto it = ds.begin(); std::next(it) != ds.end(); ++it) step(find(L, n, *it), find(L, n, *std::next(it)));

    const GridMean* base = find(*Ls.begin(), *ns.begin(), *ds.begin());
    const GridMean* top = &means.front();
    for (const auto& m : means)
        if (m.C > top->C || (m.C == top->C && m.L > top->L)) top = &m;
    t.baseline_gauc = base ? base->mean_gauc : 0.0;
    t.largest_c_gauc = top->mean_gauc;
    const double gain = t.largest_c_gauc - t.baseline_gauc;
    t.passed = base && t.inversions <= max_inversions && t.worst_drop <= max_drop && gain >= min_gain;
    t.notes.push_back("gain at largest C over baseline: " + format_real(gain));
    return t;
}

// ---- equivalence

EquivalenceReport run_equivalence(const ModelConfig& config, std::size_t steps, std::size_t users,
                                  std::uint64_t stream_seed) {
    if (config.learning_rate != 0.0) throw std::invalid_argument("equivalence needs learning_rate = 0");
    if (config.K != 0) throw std::invalid_argument("equivalence is defined without GSU (K = 0)");
    if (config.filter != SequenceFilter::all) throw std::invalid_argument("equivalence needs filter = all");
    ModelConfig c = config;
    c.mode = EngineMode::ranking;
    c.validate();
    if (c.retain() < c.n) throw std::invalid_argument("equivalence needs n_retain >= n");

    MarmEngine engine(c);
    auto params = init_network(c, c.seed);
    Rng rng(mix_seed(c.seed, 0x6571756976));
    auto fill = [&](std::vector<float>& v, double bound) {
        for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
    };
    for (auto& layer : params.layers) {
        fill(layer.ffn_b1, 0.2);
        fill(layer.ffn_b2, 0.2);
    }
    fill(params.head_w, 1.0 / std::sqrt(double(c.d)));
    params.head_b = static_cast<float>(rng.uniform(-0.2, 0.2));
    engine.set_params(params);
    const auto dparams = params.cast<double>();

    SynthConfig s;
    s.num_users = std::max<std::size_t>(users, 1);
    s.num_events = steps;
    s.num_clusters = 2;
    s.items_per_cluster = std::max<std::size_t>(steps, 1);
    s.unique_items_per_user = true;
    const auto events = synth_stream(s, stream_seed);

    std::map<std::uint64_t, std::vector<std::uint64_t>> past;
    EquivalenceReport report;
    const std::size_t field = (c.L + 1) * c.n;  // receptive field of the target
    for (const auto& e : events) {
        auto& seq = past[e.user_id];
        const std::size_t start = seq.size() > field ? seq.size() - field : 0;
        Matrix<double> emb(seq.size() - start, c.F);
        for (std::size_t j = start; j < seq.size(); ++j) {
            const auto v = engine.item_embedding(seq[j]);
            std::copy(v.begin(), v.end(), emb.row(j - start).begin());
        }
        const auto tf = engine.item_embedding(e.item_id);
        const std::vector<double> target(tf.begin(), tf.end());
        const auto outs = oracle_masked_sa<double>(ConstRowsView<double>(emb), target, dparams.layers, c.n);
        const auto want = outs.back().row(emb.rows);
        double logit = dparams.head_b;
        for (std::size_t k = 0; k < c.d; ++k) logit += dparams.head_w[k] * want[k];
        const double expect = 1.0 / (1.0 + std::exp(-logit));

        // Engine side: the same forward the train step runs, then the step itself.
        const auto ids = engine.history().exposure_seq(e.user_id, c.n, c.filter);
        Matrix<float> hist(ids.size(), c.F);
        for (std::size_t j = 0; j < ids.size(); ++j) {
            const auto v = engine.item_embedding(ids[j]);
            std::copy(v.begin(), v.end(), hist.row(j).begin());
        }
        std::vector<CachedRow<float>> rows;
        for (std::size_t k = 1; k <= c.L; ++k)
            rows.push_back(engine.cache().peek_batch(make_keys(e.user_id, ids, static_cast<std::uint16_t>(k))));
        const auto fwd = marm_forward<float>(tf, ConstRowsView<float>(hist), rows, params.layers);
        double num = 0, den = 0;
        for (std::size_t k = 0; k < c.d; ++k) {
            num = std::max(num, std::abs(double(fwd.final[k]) - want[k]));
            den = std::max(den, std::abs(want[k]));
        }
        report.max_rel_error_vector = std::max(report.max_rel_error_vector, den > 0 ? num / den : num);

        const double got = engine.train_step(e).prediction;
        report.max_rel_error = std::max(report.max_rel_error, std::abs(got - expect) / std::abs(expect));
        seq.push_back(e.item_id);
        ++report.steps;
    }
    return report;
}

// ---- downsampling

std::vector<ModelConfig> random_oracle_configs(std::size_t count, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x6f7261636c65));
    auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); };
    std::vector<ModelConfig> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        ModelConfig c;
        c.L = pick(0, 4);
        c.n = pick(1, 64);
        c.d = pick(1, 16);
        c.F = rng.bernoulli(0.5) ? c.d : pick(1, 16);
        c.d_ff = rng.bernoulli(0.5) ? 0 : pick(1, 32);
        c.learning_rate = 0.0;
        c.seed = 1 + rng.below(1u << 30);
        out.push_back(c);
    }
    return out;
}

PredictScaling measure_predict_scaling(const ModelConfig& base, const std::vector<std::size_t>& ns,
                                       std::size_t candidates, std::size_t repeats) {
    PredictScaling out;
    std::vector<std::uint64_t> items(candidates);
    for (std::size_t i = 0; i < candidates; ++i) items[i] = (1ull << 40) + i;
    for (auto n : ns) {
        ModelConfig c = base;
        c.n = n;
        c.K = 0;
        c.learning_rate = 0.0;
        c.mode = EngineMode::ranking;
        MarmEngine engine(c);
        for (std::size_t t = 0; t < n; ++t) engine.train_step({t + 1, 1, t + 1, static_cast<int>(t % 2)});
        std::vector<double> times;
        volatile double sink = 0.0;
        for (std::size_t r = 0; r < repeats; ++r) {
            const auto start = std::chrono::steady_clock::now();
            sink = sink + engine.predict_batch(1, items)[0];
            times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
        }
        std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
        out.n.push_back(n);
        out.seconds.push_back(times[times.size() / 2]);
    }
    if (out.n.size() >= 2) {
        double mx = 0, my = 0;
        const double k = double(out.n.size());
        for (std::size_t i = 0; i < out.n.size(); ++i) {
            mx += std::log(double(out.n[i])) / k;
            my += std::log(out.seconds[i]) / k;
        }
        double sxy = 0, sxx = 0;
        for (std::size_t i = 0; i < out.n.size(); ++i) {
            const double dx = std::log(double(out.n[i])) - mx;
            sxy += dx * (std::log(out.seconds[i]) - my);
            sxx += dx * dx;
        }
        out.exponent = sxx > 0 ? sxy / sxx : 0.0;
    }
    return out;
}

DownsampleResult run_downsample(const DownsampleConfig& config) {
    if (!(config.keep_fraction > 0.0 && config.keep_fraction <= 1.0))
        throw std::invalid_argument("keep_fraction must be in (0, 1]");
    ModelConfig mc = config.model;
    mc.seed = config.seed;
    mc.mode = EngineMode::ranking;
    const auto events = synth_stream(config.stream, config.seed);
    const std::size_t warm = std::min(config.warmup_events, events.size());

    MarmEngine full(mc);
    for (std::size_t i = 0; i < warm; ++i) full.train_step(events[i]);

    std::stringstream ckpt(std::ios::in | std::ios::out | std::ios::binary);
    full.write_checkpoint(ckpt);
    ckpt.seekg(0);
    MarmEngine thinned = MarmEngine::read_checkpoint(ckpt);
    thinned.attach_cache(full.cache().clone());

    Rng rng(mix_seed(config.seed, 0x7468696e));
    EvalBuffer buf_full, buf_thin;
    DownsampleResult out;
    for (std::size_t i = warm; i < events.size(); ++i) {
        const auto& e = events[i];
        const auto rf = full.train_step(e);
        buf_full.add(e.user_id, rf.prediction, e.label);
        if (rng.bernoulli(config.keep_fraction)) {
            const auto rt = thinned.train_step(e);
            buf_thin.add(e.user_id, rt.prediction, e.label);
            ++out.kept_events;
        } else {
            const std::uint64_t item[1] = {e.item_id};
            buf_thin.add(e.user_id, thinned.predict_batch(e.user_id, item)[0], e.label);
        }
    }
    out.evaluated_events = events.size() - warm;
    out.full = gauc_curve(buf_full, config.curve_window);
    out.thinned = gauc_curve(buf_thin, config.curve_window);
    out.final_gauc_full = windowed_gauc(buf_full, config.eval.window, config.eval.sub_windows);
    out.final_gauc_thinned = windowed_gauc(buf_thin, config.eval.window, config.eval.sub_windows);
    return out;
}

void write_downsample_csv(std::ostream& out, const DownsampleResult& r) {
    out << "window_end,gauc_full,gauc_thinned,loss_full,loss_thinned\n";
    auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
    for (std::size_t i = 0; i < r.full.size() && i < r.thinned.size(); ++i) {
        out << r.full[i].end_event << ',' << opt(r.full[i].gauc) << ',' << opt(r.thinned[i].gauc) << ','
            << format_real(r.full[i].loss) << ',' << format_real(r.thinned[i].loss) << '\n';
    }
}

// ---- overlap

OverlapAnalysis analyze_overlap(const MarmEngine& engine, const std::vector<EventRecord>& targets) {
    const std::size_t L = engine.config().L;
    OverlapAnalysis a;
    std::vector<std::vector<std::vector<double>>> per_target;
    for (const auto& e : targets) {
        const auto all = engine.search_layers(e.user_id, e.item_id);
        std::vector<SearchResult> cached(all.begin() + 1, all.end());
        if (cached.empty() ||
            std::any_of(cached.begin(), cached.end(), [](const SearchResult& r) { return r.items.empty(); }))
            continue;
        const auto m = overlap_matrix(cached);
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < L; ++j) a.rows.push_back({e.timestamp, i + 1, j + 1, m[i][j]});
        per_target.push_back(m);
    }
    a.targets = per_target.size();
    a.mean = mean_matrix(per_target);
    return a;
}

void write_overlap_csv(std::ostream& out, const OverlapAnalysis& a) {
    out << "target_id,layer_i,layer_j,overlap\n";
    for (const auto& r : a.rows)
        out << r.target_id << ',' << r.layer_i << ',' << r.layer_j << ',' << format_real(r.overlap) << '\n';
}

void write_matrix_csv(std::ostream& out, const std::vector<std::vector<double>>& m) {
    out << "layer";
    for (std::size_t j = 0; j < m.size(); ++j) out << ",layer_" << j + 1;
    out << '\n';
    for (std::size_t i = 0; i < m.size(); ++i) {
        out << i + 1;
        for (double v : m[i]) out << ',' << format_real(v);
        out << '\n';
    }
}

// ---- plot

std::string sweep_svg(const std::vector<GridMean>& means) {
    constexpr double W = 640, H = 420, left = 70, right = 20, top = 30, bottom = 60;
    std::set<std::uint64_t> cs;
    double lo = 1.0, hi = 0.0;
    for (const auto& m : means) {
        cs.insert(m.C);
        lo = std::min(lo, m.mean_gauc);
        hi = std::max(hi, m.mean_gauc);
    }
    if (means.empty()) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-6) lo -= 0.005, hi += 0.005;
    const double pad = (hi - lo) * 0.1;
    lo -= pad;
    hi += pad;

    // log10 spacing for C > 0; C = 0 sits one decade left of the smallest C.
    double cmin = 0, cmax = 0;
    for (auto c : cs)
        if (c > 0) {
            if (cmin == 0) cmin = std::log10(double(c));
            cmax = std::log10(double(c));
        }
    const double x_lo = cmin - 1.0, x_hi = std::max(cmax, cmin) + 0.1;
    auto xpos = [&](std::uint64_t c) {
        const double v = c == 0 ? x_lo : std::log10(double(c));
        return left + (v - x_lo) / (x_hi - x_lo) * (W - left - right);
    };
    auto ypos = [&](double g) { return top + (hi - g) / (hi - lo) * (H - top - bottom); };

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
      << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
      << "\" stroke=\"black\"/>\n";
    for (auto c : cs) {
        s << "<text x=\"" << format_real(xpos(c)) << "\" y=\"" << H - bottom + 18
          << "\" font-size=\"10\" text-anchor=\"middle\">" << c << "</text>\n";
    }
    for (int i = 0; i <= 4; ++i) {
        const double g = lo + (hi - lo) * i / 4.0;
        s << "<text x=\"" << left - 6 << "\" y=\"" << format_real(ypos(g) + 3)
          << "\" font-size=\"10\" text-anchor=\"end\">" << format_real(std::round(g * 10000) / 10000) << "</text>\n";
    }
    s << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 15
      << "\" font-size=\"12\" text-anchor=\"middle\">cache size C = L*n*d</text>\n";
    s << "<text x=\"15\" y=\"" << (top + H - bottom) / 2 << "\" font-size=\"12\" text-anchor=\"middle\" "
      << "transform=\"rotate(-90 15 " << (top + H - bottom) / 2 << ")\">mean GAUC</text>\n";

    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
    std::map<std::pair<std::size_t, std::size_t>, std::vector<const GridMean*>> series;  // (L, d)
    for (const auto& m : means) series[{m.L, m.d}].push_back(&m);
    std::size_t idx = 0;
    for (auto& [key, pts] : series) {
        std::sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->n < b->n; });
        const char* color = colors[idx % 6];
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
        for (auto* p : pts) s << format_real(xpos(p->C)) << ',' << format_real(ypos(p->mean_gauc)) << ' ';
        s << "\"/>\n";
        for (auto* p : pts)
            s << "<circle cx=\"" << format_real(xpos(p->C)) << "\" cy=\"" << format_real(ypos(p->mean_gauc))
              << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        s << "<text x=\"" << W - right - 90 << "\" y=\"" << top + 14 * idx + 10 << "\" font-size=\"11\" fill=\""
          << color << "\">L=" << key.first << " d=" << key.second << "</text>\n";
        ++idx;
    }
    s << "</svg>\n";
    return s.str();
}

}  // namespace marm
