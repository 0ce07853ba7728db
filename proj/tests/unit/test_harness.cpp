#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "marm/flops.hpp"
#include "marm/harness.hpp"

using namespace marm;

namespace {

SweepConfig tiny_sweep() {
    SweepConfig s;
    s.base.F = 4;
    s.grid.L = {0, 1};
    s.grid.n = {4, 8};
    s.grid.d = {4};
    s.grid.seeds = {1, 2};
    s.stream.num_users = 20;
    s.stream.num_events = 1500;
    s.stream.items_per_cluster = 400;
    s.stream.unique_items_per_user = true;
    s.eval = {600, 2};
    return s;
}

std::filesystem::path temp_path(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("marm_test_" + name);
    std::filesystem::remove(p);
    return p;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("sweep rows are deterministic and independent of the thread count") {
    auto cfg = tiny_sweep();
    const auto a = run_sweep(cfg);
    const auto b = run_sweep(cfg);
    cfg.threads = 3;
    const auto c = run_sweep(cfg);
    REQUIRE(a.size() == 8);
    CHECK(a == b);
    CHECK(a == c);
    // Grid order: seed, L, n, d.
    CHECK(a[0].seed == 1);
    CHECK(a[0].L == 0);
    CHECK(a[1].n == 8);
    CHECK(a[2].L == 1);
    CHECK(a[4].seed == 2);
}

TEST_CASE("sweep rows: C, cache accounting and total FLOPs") {
    const auto cfg = tiny_sweep();
    const auto rows = run_sweep(cfg);
    for (const auto& r : rows) {
        CHECK(r.C == r.L * r.n * r.d);
        CHECK(r.wall_time == 0.0);
        ModelConfig m = cfg.base;
        m.L = r.L;
        m.n = r.n;
        m.d = r.d;
        CHECK(r.total_flops == count_flops(m, FlopsMode::cached_ta).total_flops * cfg.stream.num_events);

        // Unique items: every step is accepted, the window keeps min(events, n) per user and depth.
        std::map<std::uint64_t, std::size_t> per_user;
        for (const auto& e : synth_stream(cfg.stream, r.seed)) ++per_user[e.user_id];
        std::uint64_t expect = 0;
        for (const auto& [u, count] : per_user) expect += r.L * std::min(count, r.n) * r.d;
        CHECK(r.cache_element_count == expect);
        CHECK(r.final_gauc >= 0.0);
        CHECK(r.final_gauc <= 1.0);
    }
}

TEST_CASE("sweep rejects a grid above the cache cap before running") {
    auto cfg = tiny_sweep();
    cfg.max_cache_size = 16;
    CHECK_THROWS_AS(run_sweep(cfg), GridTooLargeError);
    cfg.grid.L = {0};
    CHECK_NOTHROW(run_sweep(cfg));
}

TEST_CASE("sweep resumes from a partial results file") {
    const auto cfg = tiny_sweep();
    const auto full_path = temp_path("full.csv");
    const auto rows = run_sweep(cfg, full_path);
    const std::string full = slurp(full_path);

    const auto part_path = temp_path("part.csv");
    {
        std::ofstream out(part_path);
        write_sweep_csv(out, {rows[5], rows[0]});
    }
    std::size_t ran = 0;
    const auto resumed = run_sweep(cfg, part_path, [&](const SweepResult&) { ++ran; });
    CHECK(ran == rows.size() - 2);
    CHECK(resumed == rows);
    CHECK(slurp(part_path) == full);

    std::filesystem::remove(full_path);
    std::filesystem::remove(part_path);
}

TEST_CASE("sweep CSV roundtrip and rejection") {
    SweepResult r{2, 50, 16, 1600, 3, 0.5123456789, 0.61, 123456789012ULL, 25600, 1.5};
    std::stringstream buf;
    write_sweep_csv(buf, {r, r});
    const std::string text = buf.str();
    CHECK(text.rfind(sweep_csv_header() + "\n", 0) == 0);
    const auto back = read_sweep_csv(buf);
    REQUIRE(back.size() == 2);
    CHECK(to_csv_row(back[0]) == to_csv_row(r));

    auto rejects = [](const std::string& s) {
        std::stringstream in(s);
        CHECK_THROWS_AS(read_sweep_csv(in), std::invalid_argument);
    };
    rejects("L,n,d\n");
    rejects(sweep_csv_header() + "\n1,2,3\n");
    rejects(sweep_csv_header() + "\n1,50,16,999,1,0.5,0.6,1,1,0\n");
    rejects(sweep_csv_header() + "\n1,50,16,800,1,x,0.6,1,1,0\n");
}

TEST_CASE("equivalence run: frozen cached engine equals the uncached pipeline") {
    ModelConfig c;
    c.learning_rate = 0.0;
    c.F = 6;
    c.d = 4;
    for (std::size_t L : {0, 1, 3}) {
        c.L = L;
        c.n = 5;
        const auto rep = run_equivalence(c, 120, 3, L + 1);
        CHECK(rep.steps == 120);
        CHECK(rep.max_rel_error <= 1e-5);
        CHECK(rep.max_rel_error_vector <= 1e-5);
    }
    c.learning_rate = 0.01;
    CHECK_THROWS_AS(run_equivalence(c, 10), std::invalid_argument);
    c.learning_rate = 0.0;
    c.K = 2;
    CHECK_THROWS_AS(run_equivalence(c, 10), std::invalid_argument);
}

TEST_CASE("downsampling: keep_fraction 1 reproduces the full run, 0.5 keeps about half") {
    DownsampleConfig cfg;
    cfg.model.L = 1;
    cfg.model.n = 8;
    cfg.model.d = 4;
    cfg.model.F = 4;
    cfg.stream.num_users = 30;
    cfg.stream.num_events = 3000;
    cfg.warmup_events = 1000;
    cfg.curve_window = 500;
    cfg.eval = {1000, 2};
    cfg.keep_fraction = 1.0;
    const auto same = run_downsample(cfg);
    CHECK(same.kept_events == 2000);
    CHECK(same.evaluated_events == 2000);
    REQUIRE(same.full.size() == 4);
    for (std::size_t i = 0; i < same.full.size(); ++i) {
        CHECK(same.full[i].gauc == same.thinned[i].gauc);
        CHECK(same.full[i].loss == same.thinned[i].loss);
    }
    CHECK(same.final_gauc_full == same.final_gauc_thinned);

    cfg.keep_fraction = 0.5;
    const auto half = run_downsample(cfg);
    CHECK(half.kept_events > 850);
    CHECK(half.kept_events < 1150);
    CHECK(half.full.size() == half.thinned.size());
    // The full twin is the same run whatever the thinned one does.
    CHECK(half.final_gauc_full == same.final_gauc_full);

    std::stringstream csv;
    write_downsample_csv(csv, half);
    std::string line;
    std::getline(csv, line);
    CHECK(line == "window_end,gauc_full,gauc_thinned,loss_full,loss_thinned");
    std::size_t lines = 0;
    while (std::getline(csv, line)) ++lines;
    CHECK(lines == half.full.size());

    cfg.keep_fraction = 0.0;
    CHECK_THROWS_AS(run_downsample(cfg), std::invalid_argument);
}

TEST_CASE("overlap analysis on a trained L=4 toy run") {
    ModelConfig c;
    c.L = 4;
    c.n = 12;
    c.d = 4;
    c.F = 4;
    c.K = 3;
    SynthConfig s;
    s.num_users = 5;
    s.num_events = 400;
    s.items_per_cluster = 400;
    s.unique_items_per_user = true;
    const auto events = synth_stream(s, 3);
    MarmEngine engine(c);
    for (std::size_t i = 0; i < 350; ++i) engine.train_step(events[i]);
    const std::vector<EventRecord> targets(events.begin() + 350, events.end());

    const auto a = analyze_overlap(engine, targets);
    REQUIRE(a.targets > 0);
    CHECK(a.rows.size() == a.targets * 16);
    REQUIRE(a.mean.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(a.mean[i][i] == 1.0);
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(a.mean[i][j] == doctest::Approx(a.mean[j][i]));
            CHECK(a.mean[i][j] >= 0.0);
            CHECK(a.mean[i][j] <= 1.0);
        }
    }
    for (const auto& r : a.rows)
        if (r.layer_i == r.layer_j) CHECK(r.overlap == 1.0);

    std::stringstream csv;
    write_overlap_csv(csv, a);
    std::string line;
    std::getline(csv, line);
    CHECK(line == "target_id,layer_i,layer_j,overlap");
    std::size_t count = 0;
    while (std::getline(csv, line)) {
        ++count;
        CHECK(std::count(line.begin(), line.end(), ',') == 3);
    }
    CHECK(count == a.rows.size());

    std::stringstream m;
    write_matrix_csv(m, a.mean);
    std::getline(m, line);
    CHECK(line == "layer,layer_1,layer_2,layer_3,layer_4");
}

TEST_CASE("scaling trend checker") {
    auto grid = [](std::vector<double> g) {
        // L in {0,1,2} x n in {25,50,100}, d = 16, row-major in (L, n).
        std::vector<GridMean> out;
        std::size_t i = 0;
        for (std::size_t L : {0, 1, 2})
            for (std::size_t n : {25, 50, 100}) {
                GridMean m;
                m.L = L;
                m.n = n;
                m.d = 16;
                m.C = L * n * 16;
                m.mean_gauc = g[i++];
                m.seeds = 3;
                out.push_back(m);
            }
        return out;
    };
    const auto good = check_scaling_trend(grid({0.60, 0.61, 0.62, 0.61, 0.62, 0.63, 0.62, 0.63, 0.64}));
    CHECK(good.passed);
    CHECK(good.inversions == 0);
    CHECK(good.baseline_gauc == 0.60);
    CHECK(good.largest_c_gauc == 0.64);

    const auto one_small = check_scaling_trend(grid({0.60, 0.61, 0.6095, 0.61, 0.62, 0.63, 0.62, 0.63, 0.64}));
    CHECK(one_small.inversions == 1);
    CHECK(one_small.passed);

    const auto big = check_scaling_trend(grid({0.60, 0.61, 0.60, 0.61, 0.62, 0.63, 0.62, 0.63, 0.64}));
    CHECK_FALSE(big.passed);

    const auto two = check_scaling_trend(grid({0.60, 0.61, 0.6095, 0.61, 0.62, 0.63, 0.62, 0.63, 0.6295}));
    CHECK(two.inversions >= 2);
    CHECK_FALSE(two.passed);

    const auto flat = check_scaling_trend(grid({0.60, 0.60, 0.60, 0.60, 0.60, 0.60, 0.60, 0.60, 0.605}));
    CHECK_FALSE(flat.passed);

    std::vector<SweepResult> rows = {{1, 5, 2, 10, 1, 0.5}, {1, 5, 2, 10, 2, 0.7}, {0, 5, 2, 0, 1, 0.4}};
    const auto means = grid_means(rows);
    REQUIRE(means.size() == 2);
    CHECK(means[0].L == 0);
    CHECK(means[1].mean_gauc == doctest::Approx(0.6));
    CHECK(means[1].std_gauc == doctest::Approx(0.1414213562));
    CHECK(means[1].seeds == 2);
}

TEST_CASE("sweep SVG has one series per L") {
    std::vector<GridMean> means;
    for (std::size_t L : {0, 1, 2})
        for (std::size_t n : {25, 50}) means.push_back({L, n, 16, L * n * 16, 0.5 + 0.01 * double(L), 0.0, 3});
    const auto svg = sweep_svg(means);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    std::size_t lines = 0;
    for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++lines;
    CHECK(lines == 3);
}

TEST_CASE("a stream without planted signal gives GAUC near 0.5") {
    SynthConfig s;
    s.num_users = 100;
    s.num_events = 30000;
    s.gap = 0.0;
    s.base_rate = 0.3;
    ModelConfig c;
    c.L = 0;
    c.n = 20;
    c.d = 8;
    c.F = 8;
    const auto r = run_point(c, synth_stream(s, 21), {20000, 4});
    CHECK(r.final_gauc == doctest::Approx(0.5).epsilon(0.04));
}

TEST_CASE("downsampling: a 1% twin stays near chance on a short run") {
    DownsampleConfig cfg;
    cfg.model.L = 0;
    cfg.model.n = 20;
    cfg.model.d = 8;
    cfg.model.F = 8;
    cfg.stream.num_users = 100;
    cfg.stream.num_events = 30000;
    cfg.eval = {20000, 4};
    cfg.keep_fraction = 0.01;
    const auto r = run_downsample(cfg);
    MESSAGE("full " << r.final_gauc_full << " thinned " << r.final_gauc_thinned);
    CHECK(std::abs(r.final_gauc_thinned - 0.5) <= 0.05);
    CHECK(r.kept_events < 600);
}
