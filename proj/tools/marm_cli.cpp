#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "marm/cache_store.hpp"
#include "marm/engine.hpp"
#include "marm/experiment_config.hpp"
#include "marm/flops.hpp"
#include "marm/harness.hpp"
#include "marm/sequence.hpp"

using namespace marm;

namespace {

// Every failure leaves as one line: "error: <code>: <message>".
struct CliError : std::runtime_error {
    CliError(std::string code, const std::string& msg, int exit_code)
        : std::runtime_error(msg), code(std::move(code)), exit_code(exit_code) {}
    std::string code;
    int exit_code;
};

enum Exit { kInternal = 1, kUsage = 2, kConfig = 3, kIo = 4, kFormat = 5, kCheckFailed = 6 };

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CliError("io", "cannot open " + path, kIo);
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CliError("io", "cannot write " + path, kIo);
    return out;
}

void finish(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) throw CliError("io", "write failed on " + path, kIo);
}

ExperimentConfig load_config(const std::string& path) {
    if (path.empty()) return ExperimentConfig{};
    auto in = open_in(path);
    std::stringstream s;
    s << in.rdbuf();
    auto c = parse_experiment_config(s.str());
    return c;
}

std::vector<EventRecord> load_events(const std::string& path) {
    auto in = open_in(path);
    try {
        return read_events(in);
    } catch (const std::invalid_argument& e) {
        throw CliError("format", path + ": " + e.what(), kFormat);
    }
}

std::vector<SweepResult> load_results(const std::string& path) {
    auto in = open_in(path);
    try {
        return read_sweep_csv(in);
    } catch (const std::invalid_argument& e) {
        throw CliError("format", path + ": " + e.what(), kFormat);
    }
}

// Options shared by commands that read an experiment file.
struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "experiment JSON (defaults when omitted)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "model and stream seed (overrides model.seed)");
}

std::uint64_t seed_of(const Common& c, const ExperimentConfig& x) { return c.seed.value_or(x.model.seed); }

// ---- subcommands

struct GenData {
    Common common;
    std::string out;
    std::optional<std::size_t> events;
};

void gen_data(const GenData& o) {
    auto x = load_config(o.common.config);
    if (o.events) x.stream.num_events = *o.events;
    x.validate();
    const auto events = synth_stream(x.stream, seed_of(o.common, x));
    auto out = open_out(o.out);
    write_events(out, events);
    finish(out, o.out);
}

struct Train {
    Common common;
    std::string events_file, out, curve, checkpoint, cache_out;
    std::size_t curve_window = 0;  // 0 = downsample.curve_window
    bool record_time = false;
};

void train(const Train& o) {
    auto x = load_config(o.common.config);
    x.model.seed = seed_of(o.common, x);
    x.validate();
    const auto events = o.events_file.empty() ? synth_stream(x.stream, x.model.seed) : load_events(o.events_file);
    const std::size_t window = o.curve_window ? o.curve_window : x.downsample.curve_window;
    auto out = open_out(o.out);
    std::ofstream c;
    if (!o.curve.empty()) c = open_out(o.curve);
    auto run = train_on_stream(x.model, events, x.eval, o.record_time);

    write_sweep_csv(out, {run.result});
    finish(out, o.out);
    if (!o.curve.empty()) {
        c << "window_end,gauc,loss\n";
        for (const auto& p : gauc_curve(run.buffer, window))
            c << p.end_event << ',' << (p.gauc ? format_real(*p.gauc) : "") << ',' << format_real(p.loss) << '\n';
        finish(c, o.curve);
    }
    if (!o.checkpoint.empty()) run.engine.checkpoint(o.checkpoint);
    if (!o.cache_out.empty()) run.engine.cache().persist(o.cache_out);
}

struct Sweep {
    Common common;
    std::string events_file, out, svg;
    std::size_t threads = 1;
    bool record_time = false;
    bool fresh = false;
};

void print_trend(const std::vector<SweepResult>& rows) {
    const auto means = grid_means(rows);
    std::printf("L,n,d,C,mean_gauc,std_gauc,seeds\n");
    for (const auto& m : means)
        std::printf("%zu,%zu,%zu,%llu,%.6f,%.6f,%zu\n", m.L, m.n, m.d, static_cast<unsigned long long>(m.C),
                    m.mean_gauc, m.std_gauc, m.seeds);
    const auto t = check_scaling_trend(means);
    std::printf("trend: %s inversions=%zu worst_drop=%.6f baseline=%.6f largest_c=%.6f\n",
                t.passed ? "ok" : "not-met", t.inversions, t.worst_drop, t.baseline_gauc, t.largest_c_gauc);
    for (const auto& n : t.notes) std::printf("  %s\n", n.c_str());
}

void sweep(const Sweep& o) {
    auto x = load_config(o.common.config);
    x.validate();
    SweepConfig s;
    s.base = x.model;
    s.grid = x.grid;
    if (o.common.seed) s.grid.seeds = {*o.common.seed};
    s.stream = x.stream;
    if (!o.events_file.empty()) s.events_file = o.events_file;
    s.eval = x.eval;
    s.max_cache_size = x.max_cache_size;
    s.threads = o.threads;
    s.record_time = o.record_time;
    if (o.fresh) std::filesystem::remove(o.out);
    std::vector<SweepResult> rows;
    try {
        rows = run_sweep(s, std::filesystem::path(o.out));
    } catch (const GridTooLargeError& e) {
        throw CliError("grid_too_large", e.what(), kConfig);
    }
    if (!o.svg.empty()) {
        auto svg = open_out(o.svg);
        svg << sweep_svg(grid_means(rows));
        finish(svg, o.svg);
    }
    print_trend(rows);
}

struct VerifyOracle {
    std::size_t configs = 100, steps = 200, users = 4;
    std::uint64_t seed = 1;
    double tolerance = 1e-5;
    std::string out;
};

void verify_oracle(const VerifyOracle& o) {
    const auto cfgs = random_oracle_configs(o.configs, o.seed);
    std::ostringstream csv;
    csv << "index,L,n,d,F,d_ff,seed,steps,max_rel_error,max_rel_error_vector\n";
    double worst = 0.0;
    for (std::size_t i = 0; i < cfgs.size(); ++i) {
        const auto& c = cfgs[i];
        const auto r = run_equivalence(c, o.steps, o.users, o.seed + i);
        worst = std::max(worst, r.max_rel_error);
        csv << i << ',' << c.L << ',' << c.n << ',' << c.d << ',' << c.F << ',' << c.ffn_width() << ',' << c.seed
            << ',' << r.steps << ',' << format_real(r.max_rel_error) << ',' << format_real(r.max_rel_error_vector)
            << '\n';
    }
    if (o.out.empty()) {
        std::cout << csv.str();
    } else {
        auto out = open_out(o.out);
        out << csv.str();
        finish(out, o.out);
    }
    if (worst > o.tolerance) {
        char msg[128];
        std::snprintf(msg, sizeof msg, "max relative error %.3g exceeds %.3g", worst, o.tolerance);
        throw CliError("check_failed", msg, kCheckFailed);
    }
    std::fprintf(stderr, "configs=%zu max_rel_error=%.3g tolerance=%.3g\n", cfgs.size(), worst, o.tolerance);
}

struct BenchFlops {
    Common common;
    std::optional<std::size_t> n, d, L, F;
    bool measure = false;
    std::vector<std::size_t> ns{100, 400, 1600};
    std::string out;
};

void bench_flops(const BenchFlops& o) {
    auto x = load_config(o.common.config);
    auto& m = x.model;
    if (o.n) m.n = *o.n;
    if (o.d) m.d = *o.d;
    if (o.L) m.L = *o.L;
    m.F = o.F.value_or(o.d ? m.d : m.F);
    m.validate();
    const auto cached = count_flops(m, FlopsMode::cached_ta);
    const auto uncached = count_flops(m, FlopsMode::uncached_msa);
    std::ostringstream csv;
    csv << "metric,value\n";
    csv << "L," << m.L << "\nn," << m.n << "\nd," << m.d << "\nF," << m.F << '\n';
    for (std::size_t i = 0; i < cached.layer_flops.size(); ++i) {
        csv << "cached_layer_" << i << ',' << cached.layer_flops[i] << '\n';
        csv << "uncached_layer_" << i << ',' << uncached.layer_flops[i] << '\n';
    }
    csv << "cached_total," << cached.total_flops << '\n';
    csv << "uncached_total," << uncached.total_flops << '\n';
    csv << "ratio," << format_real(double(uncached.total_flops) / double(cached.total_flops)) << '\n';
    if (o.measure) {
        const auto s = measure_predict_scaling(m, o.ns);
        for (std::size_t i = 0; i < s.n.size(); ++i)
            csv << "predict_seconds_n" << s.n[i] << ',' << format_real(s.seconds[i]) << '\n';
        csv << "time_exponent," << format_real(s.exponent) << '\n';
    }
    if (o.out.empty()) {
        std::cout << csv.str();
    } else {
        auto out = open_out(o.out);
        out << csv.str();
        finish(out, o.out);
    }
}

struct Downsample {
    Common common;
    std::optional<double> keep;
    std::optional<std::size_t> warmup;
    std::string out;
};

void downsample(const Downsample& o) {
    auto x = load_config(o.common.config);
    if (o.keep) x.downsample.keep_fraction = *o.keep;
    if (o.warmup) x.downsample.warmup_events = *o.warmup;
    x.validate();
    DownsampleConfig d;
    d.model = x.model;
    d.stream = x.stream;
    d.warmup_events = x.downsample.warmup_events;
    d.keep_fraction = x.downsample.keep_fraction;
    d.curve_window = x.downsample.curve_window;
    d.eval = x.eval;
    d.seed = seed_of(o.common, x);
    auto out = open_out(o.out);
    const auto r = run_downsample(d);
    write_downsample_csv(out, r);
    finish(out, o.out);
    std::printf("final_gauc_full=%.6f final_gauc_thinned=%.6f kept=%zu evaluated=%zu\n", r.final_gauc_full,
                r.final_gauc_thinned, r.kept_events, r.evaluated_events);
}

struct Overlap {
    Common common;
    std::string events_file, out, mean_out;
    std::size_t targets = 200;
};

void analyze(const Overlap& o) {
    auto x = load_config(o.common.config);
    x.model.seed = seed_of(o.common, x);
    x.validate();
    if (x.model.L == 0 || x.model.K == 0) throw CliError("config", "overlap needs model.L >= 1 and model.K >= 1", kConfig);
    const auto events = o.events_file.empty() ? synth_stream(x.stream, x.model.seed) : load_events(o.events_file);
    const std::size_t split = events.size() > o.targets ? events.size() - o.targets : 0;
    const std::vector<EventRecord> train_part(events.begin(), events.begin() + split);
    const std::vector<EventRecord> targets(events.begin() + split, events.end());
    auto out = open_out(o.out);
    auto run = train_on_stream(x.model, train_part, x.eval);
    const auto a = analyze_overlap(run.engine, targets);
    write_overlap_csv(out, a);
    finish(out, o.out);
    if (!o.mean_out.empty()) {
        auto m = open_out(o.mean_out);
        write_matrix_csv(m, a.mean);
        finish(m, o.mean_out);
    }
    double off = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < a.mean.size(); ++i)
        for (std::size_t j = 0; j < a.mean.size(); ++j)
            if (i != j) off += a.mean[i][j], ++cnt;
    std::printf("targets=%zu mean_offdiagonal_overlap=%.6f\n", a.targets, cnt ? off / double(cnt) : 0.0);
}

void cache_inspect(const std::string& path) {
    const auto s = inspect_cache_file(path);
    std::printf("version: %u\nd: %u\nn_retain: %u\nL: %u\n", s.version, s.d, s.n_retain, s.L);
    std::printf("users: %llu\nentries: %llu\nelement_count: %llu\ntombstones: %llu\n",
                static_cast<unsigned long long>(s.users), static_cast<unsigned long long>(s.stats.entries),
                static_cast<unsigned long long>(s.stats.element_count),
                static_cast<unsigned long long>(s.tombstones));
    std::printf("accepted: %llu\nrejected: %llu\nevictions: %llu\nhits: %llu\nmisses: %llu\n",
                static_cast<unsigned long long>(s.stats.accepted), static_cast<unsigned long long>(s.stats.rejected),
                static_cast<unsigned long long>(s.stats.evictions), static_cast<unsigned long long>(s.stats.hits),
                static_cast<unsigned long long>(s.stats.misses));
}

void plot(const std::string& in, const std::string& out_path) {
    const auto rows = load_results(in);
    auto out = open_out(out_path);
    out << sweep_svg(grid_means(rows));
    finish(out, out_path);
}

void dump_config(const std::string& config, const std::string& out_path) {
    const auto text = dump_experiment_config(load_config(config));
    if (out_path.empty()) {
        std::cout << text;
        return;
    }
    auto out = open_out(out_path);
    out << text;
    finish(out, out_path);
}

int report(const std::string& code, const std::string& msg, int exit_code) {
    std::string line = msg;
    for (auto& ch : line)
        if (ch == '\n' || ch == '\r') ch = ' ';
    std::fprintf(stderr, "error: %s: %s\n", code.c_str(), line.c_str());
    return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Memory-augmented ranking model: training, sweeps and checks"};
    app.require_subcommand(1);

    GenData gd;
    auto* gen = app.add_subcommand("gen-data", "write a synthetic event log");
    add_common(gen, gd.common);
    gen->add_option("-o,--out", gd.out, "event log path")->required();
    gen->add_option("--events", gd.events, "override stream.num_events");

    Train tr;
    auto* trn = app.add_subcommand("train", "train one model and write its results row");
    add_common(trn, tr.common);
    trn->add_option("--events-file", tr.events_file, "event log instead of the synthetic stream")->check(CLI::ExistingFile);
    trn->add_option("-o,--out", tr.out, "results CSV")->required();
    trn->add_option("--curve", tr.curve, "windowed GAUC/loss CSV");
    trn->add_option("--curve-window", tr.curve_window, "events per curve window (default downsample.curve_window)");
    trn->add_option("--checkpoint", tr.checkpoint, "model checkpoint path");
    trn->add_option("--cache-out", tr.cache_out, "cache file path");
    trn->add_flag("--record-time", tr.record_time, "fill wall_time (makes output nondeterministic)");

    Sweep sw;
    auto* swp = app.add_subcommand("sweep", "run the L x n x d x seed grid (resumable)");
    add_common(swp, sw.common);
    swp->add_option("--events-file", sw.events_file, "event log instead of the synthetic stream")->check(CLI::ExistingFile);
    swp->add_option("-o,--out", sw.out, "results CSV; existing rows are kept")->required();
    swp->add_option("--svg", sw.svg, "also write the GAUC vs C chart");
    swp->add_option("-j,--threads", sw.threads, "grid points run in parallel")->check(CLI::PositiveNumber);
    swp->add_flag("--record-time", sw.record_time, "fill wall_time");
    swp->add_flag("--fresh", sw.fresh, "discard an existing results file");

    VerifyOracle vo;
    auto* ver = app.add_subcommand("verify-oracle", "compare cached predictions with the uncached oracle");
    ver->add_option("--configs", vo.configs, "random configurations");
    ver->add_option("--steps", vo.steps, "events per configuration");
    ver->add_option("--users", vo.users, "users per stream");
    ver->add_option("--seed", vo.seed, "seed for configs and streams");
    ver->add_option("--tolerance", vo.tolerance, "max relative prediction error");
    ver->add_option("-o,--out", vo.out, "per-config CSV (stdout if omitted)");

    BenchFlops bf;
    auto* bench = app.add_subcommand("bench-flops", "cached vs uncached FLOPs, optional timing");
    add_common(bench, bf.common);
    bench->add_option("-n", bf.n, "sequence length");
    bench->add_option("-d", bf.d, "width");
    bench->add_option("-L", bf.L, "cache depth");
    bench->add_option("-F", bf.F, "embedding width (default d when -d is given)");
    bench->add_flag("--measure", bf.measure, "time predict_batch over --ns and fit an exponent");
    bench->add_option("--ns", bf.ns, "sequence lengths for --measure")->delimiter(',');
    bench->add_option("-o,--out", bf.out, "CSV path (stdout if omitted)");

    Downsample ds;
    auto* down = app.add_subcommand("downsample", "full vs thinned twin engines");
    add_common(down, ds.common);
    down->add_option("--keep", ds.keep, "keep fraction in (0, 1]");
    down->add_option("--warmup", ds.warmup, "shared events before the split");
    down->add_option("-o,--out", ds.out, "curve CSV")->required();

    Overlap ov;
    auto* ovl = app.add_subcommand("analyze-overlap", "pairwise GSU overlap across cached layers");
    add_common(ovl, ov.common);
    ovl->add_option("--events-file", ov.events_file, "event log instead of the synthetic stream")->check(CLI::ExistingFile);
    ovl->add_option("--targets", ov.targets, "trailing events used as targets");
    ovl->add_option("-o,--out", ov.out, "per-target CSV")->required();
    ovl->add_option("--mean-out", ov.mean_out, "mean L x L matrix CSV");

    std::string cache_path;
    auto* cache = app.add_subcommand("cache", "cache file tools");
    cache->require_subcommand(1);
    auto* inspect = cache->add_subcommand("inspect", "print header and counters");
    inspect->add_option("path", cache_path, "cache file")->required();

    std::string plot_in, plot_out;
    auto* plt = app.add_subcommand("plot", "GAUC vs C chart from a results CSV");
    plt->add_option("-i,--in", plot_in, "results CSV")->required();
    plt->add_option("-o,--out", plot_out, "SVG path")->required();

    std::string dump_in, dump_out;
    auto* dump = app.add_subcommand("dump-config", "print the full experiment JSON with defaults filled in");
    dump->add_option("-c,--config", dump_in, "experiment JSON")->check(CLI::ExistingFile);
    dump->add_option("-o,--out", dump_out, "output path (stdout if omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report("usage", e.what(), kUsage);
    }

    try {
        if (*gen) gen_data(gd);
        else if (*trn) train(tr);
        else if (*swp) sweep(sw);
        else if (*ver) verify_oracle(vo);
        else if (*bench) bench_flops(bf);
        else if (*down) downsample(ds);
        else if (*ovl) analyze(ov);
        else if (*inspect) cache_inspect(cache_path);
        else if (*plt) plot(plot_in, plot_out);
        else if (*dump) dump_config(dump_in, dump_out);
    } catch (const CliError& e) {
        return report(e.code, e.what(), e.exit_code);
    } catch (const ConfigError& e) {
        return report("config", e.what(), kConfig);
    } catch (const CacheFormatError& e) {
        return report("format", e.what(), kFormat);
    } catch (const CheckpointError& e) {
        return report("format", e.what(), kFormat);
    } catch (const std::invalid_argument& e) {
        return report("config", e.what(), kConfig);
    } catch (const std::exception& e) {
        return report("internal", e.what(), kInternal);
    }
    return 0;
}
