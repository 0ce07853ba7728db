#pragma once

// JSON experiment files shared by every CLI subcommand:
//
// {
//   "model":      { "L": 1, "n": 50, "d": 16, "F": 16, "d_ff": 0, "K": 0,
//                   "learning_rate": 0.05, "embedding_learning_rate": 0,
//                   "grad_clip": 0, "optimizer": "adagrad",
//                   "embedding_table_capacity": 0, "n_retain": 0,
//                   "history_capacity": 0, "seed": 1,
//                   "mode": "ranking", "filter": "all" },
//   "stream":     { "num_users": 500, ..., "transition": [[...], ...] },
//   "eval":       { "window": 40000, "sub_windows": 4 },
//   "grid":       { "L": [0, 1, 2], "n": [25, 50, 100], "d": [16], "seeds": [1, 2, 3] },
//   "max_cache_size": 1048576,
//   "downsample": { "warmup_events": 0, "keep_fraction": 0.5, "curve_window": 10000 }
// }
//
// Every section and key is optional; unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "marm/config.hpp"
#include "marm/harness.hpp"
#include "marm/sequence.hpp"

namespace marm {

class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct DownsampleSettings {
    std::size_t warmup_events = 0;
    double keep_fraction = 0.5;
    std::size_t curve_window = 10000;
};

struct ExperimentConfig {
    ModelConfig model;
    SynthConfig stream;
    EvalSpec eval;
    SweepGrid grid;
    std::uint64_t max_cache_size = 1u << 20;
    DownsampleSettings downsample;

    // Throws ConfigError naming the offending key.
    void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
// Canonical JSON with every key present; parse(dump(c)) == c.
std::string dump_experiment_config(const ExperimentConfig& config);

}  // namespace marm
