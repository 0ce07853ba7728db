#pragma once

// Experiment drivers: scaling sweeps, the frozen-parameter equivalence run,
// downsampling twins, GSU overlap analysis, and their CSV / SVG output.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "marm/config.hpp"
#include "marm/engine.hpp"
#include "marm/gsu.hpp"
#include "marm/metrics.hpp"
#include "marm/sequence.hpp"

namespace marm {

// "Final" metrics: the last `window` events split into `sub_windows` parts.
struct EvalSpec {
    std::size_t window = 40000;
    std::size_t sub_windows = 4;
};

struct SweepResult {
    std::size_t L = 0;
    std::size_t n = 0;
    std::size_t d = 0;
    std::uint64_t C = 0;
    std::uint64_t seed = 0;
    double final_gauc = 0.0;
    double final_loss = 0.0;
    std::uint64_t total_flops = 0;
    std::uint64_t cache_element_count = 0;
    double wall_time = 0.0;  // seconds; 0 unless timing was requested

    bool operator==(const SweepResult&) const = default;
};

struct SweepGrid {
    std::vector<std::size_t> L{0, 1, 2};
    std::vector<std::size_t> n{25, 50, 100};
    std::vector<std::size_t> d{16};
    std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct SweepConfig {
    ModelConfig base;  // L, n, d and seed are overwritten per grid point
    SweepGrid grid;
    SynthConfig stream;
    std::optional<std::filesystem::path> events_file;  // replaces the synthetic stream
    EvalSpec eval;
    std::uint64_t max_cache_size = 1u << 20;  // largest C accepted
    std::size_t threads = 1;
    bool record_time = false;
};

class GridTooLargeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// One training run over `events` with a fresh engine and cache. Predictions
// are recorded before each update (progressive validation).
SweepResult run_point(const ModelConfig& config, const std::vector<EventRecord>& events, const EvalSpec& eval,
                      bool record_time = false);

// Same run, keeping the trained engine and the recorded predictions.
struct TrainingRun {
    SweepResult result;
    EvalBuffer buffer;
    MarmEngine engine;
};
TrainingRun train_on_stream(const ModelConfig& config, const std::vector<EventRecord>& events, const EvalSpec& eval,
                            bool record_time = false);

// Grid points in (seed, L, n, d) order. When `csv_path` names an existing
// results file its rows are kept and those points skipped; new rows are
// appended as they finish. The returned rows are in grid order.
std::vector<SweepResult> run_sweep(const SweepConfig& config,
                                   const std::optional<std::filesystem::path>& csv_path = std::nullopt,
                                   const std::function<void(const SweepResult&)>& on_row = {});

std::string sweep_csv_header();
std::string to_csv_row(const SweepResult& r);
void write_sweep_csv(std::ostream& out, const std::vector<SweepResult>& rows);
// Throws std::invalid_argument on a malformed file.
std::vector<SweepResult> read_sweep_csv(std::istream& in);

// Mean of final_gauc over seeds per (L, n, d), ordered by (L, n, d).
struct GridMean {
    std::size_t L = 0, n = 0, d = 0;
    std::uint64_t C = 0;
    double mean_gauc = 0.0;
    double std_gauc = 0.0;
    std::size_t seeds = 0;
};
std::vector<GridMean> grid_means(const std::vector<SweepResult>& rows);

// Trend along each axis of the grid: at fixed (L, d) over increasing n and at
// fixed (n, d) over increasing L. A step that lowers mean GAUC is an inversion.
struct TrendCheck {
    std::size_t inversions = 0;
    double worst_drop = 0.0;
    double baseline_gauc = 0.0;  // smallest L, smallest n
    double largest_c_gauc = 0.0;
    bool passed = false;
    std::vector<std::string> notes;
};
TrendCheck check_scaling_trend(const std::vector<GridMean>& means, std::size_t max_inversions = 1,
                               double max_drop = 0.001, double min_gain = 0.01);

// Frozen-parameter comparison of the cached engine with the uncached
// masked-self-attention pipeline.
struct EquivalenceReport {
    std::size_t steps = 0;
    double max_rel_error = 0.0;         // predictions
    double max_rel_error_vector = 0.0;  // final interest vectors
};
// Throws std::invalid_argument when config.learning_rate != 0. Dense weights
// are drawn at random (including head and biases) so predictions are not
// trivially 1/2. The stream never repeats an item for a user.
EquivalenceReport run_equivalence(const ModelConfig& config, std::size_t steps, std::size_t users = 4,
                                  std::uint64_t stream_seed = 1);

// Random frozen configs with n <= 64, L <= 4, d <= 16, F <= 16.
std::vector<ModelConfig> random_oracle_configs(std::size_t count, std::uint64_t seed);

// Wall time of one predict_batch call at each sequence length, on an engine
// whose single user has a full history. `exponent` is the least-squares slope
// of log(seconds) against log(n).
struct PredictScaling {
    std::vector<std::size_t> n;
    std::vector<double> seconds;  // median over repeats
    double exponent = 0.0;
};
PredictScaling measure_predict_scaling(const ModelConfig& base, const std::vector<std::size_t>& ns,
                                       std::size_t candidates = 64, std::size_t repeats = 7);

struct DownsampleConfig {
    ModelConfig model;
    SynthConfig stream;
    std::size_t warmup_events = 0;  // shared training before the twins split
    double keep_fraction = 0.5;
    std::size_t curve_window = 10000;
    EvalSpec eval;
    std::uint64_t seed = 1;
};

struct DownsampleResult {
    std::vector<CurvePoint> full;
    std::vector<CurvePoint> thinned;
    double final_gauc_full = 0.0;
    double final_gauc_thinned = 0.0;
    std::size_t kept_events = 0;
    std::size_t evaluated_events = 0;
};

// After warmup the stream feeds two copies of the same engine. The full copy
// trains on every event; the thinned copy trains on an i.i.d. keep_fraction
// subset and never sees the rest. Both are scored on every post-warmup event
// before any update on it.
DownsampleResult run_downsample(const DownsampleConfig& config);
void write_downsample_csv(std::ostream& out, const DownsampleResult& r);

// Per-target overlap of GSU results across cached layers 1..L.
struct OverlapRow {
    std::uint64_t target_id = 0;  // event timestamp
    std::size_t layer_i = 0;
    std::size_t layer_j = 0;
    double overlap = 0.0;
};
struct OverlapAnalysis {
    std::vector<OverlapRow> rows;
    std::vector<std::vector<double>> mean;  // L x L
    std::size_t targets = 0;
};
// Runs engine.search_layers for each event (without training on it) and
// collects the pairwise overlaps.
OverlapAnalysis analyze_overlap(const MarmEngine& engine, const std::vector<EventRecord>& targets);
void write_overlap_csv(std::ostream& out, const OverlapAnalysis& a);
void write_matrix_csv(std::ostream& out, const std::vector<std::vector<double>>& m);

// Line chart of mean GAUC against C, one series per L.
std::string sweep_svg(const std::vector<GridMean>& means);

// Deterministic decimal formatting used by every CSV.
std::string format_real(double v);

}  // namespace marm
