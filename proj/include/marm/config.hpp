#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace marm {

enum class EngineMode { ranking, cascading };
enum class SequenceFilter { all, long_view_only };
enum class Optimizer { sgd, adagrad };

// Hyperparameters shared by the kernels, the engine and the harness.
struct ModelConfig {
    std::size_t L = 1;     // cache depth
    std::size_t n = 50;    // sequence length
    std::size_t d = 16;    // attention / cache width
    std::size_t F = 16;    // ID embedding width
    std::size_t d_ff = 0;  // FFN width, 0 = 2 * d
    std::size_t K = 0;     // GSU top-K per layer, 0 = off
    double learning_rate = 0.05;
    double embedding_learning_rate = 0.0;  // 0 = learning_rate
    double grad_clip = 0.0;                // max global gradient norm per step, 0 = off
    Optimizer optimizer = Optimizer::adagrad;
    std::size_t embedding_table_capacity = 0;  // 0 = unbounded
    std::size_t n_retain = 0;                  // cache window per (user, depth), 0 = n
    std::size_t history_capacity = 0;          // per-user history ring, 0 = max(n, 200)
    std::uint64_t seed = 1;
    EngineMode mode = EngineMode::ranking;
    SequenceFilter filter = SequenceFilter::all;

    double embedding_lr() const { return embedding_learning_rate > 0.0 ? embedding_learning_rate : learning_rate; }
    std::size_t ffn_width() const { return d_ff == 0 ? 2 * d : d_ff; }
    std::size_t retain() const { return n_retain == 0 ? n : n_retain; }
    std::size_t history_cap() const {
        if (history_capacity != 0) return history_capacity;
        return n > 200 ? n : 200;
    }
    // C = L * n * d
    std::uint64_t cache_size() const {
        return static_cast<std::uint64_t>(L) * static_cast<std::uint64_t>(n) *
               static_cast<std::uint64_t>(d);
    }

    // Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
};

std::string to_string(EngineMode mode);
EngineMode parse_engine_mode(const std::string& s);
std::string to_string(SequenceFilter filter);
SequenceFilter parse_sequence_filter(const std::string& s);
std::string to_string(Optimizer optimizer);
Optimizer parse_optimizer(const std::string& s);

}  // namespace marm
