#include "marm/config.hpp"

#include <stdexcept>

namespace marm {

void ModelConfig::validate() const {
    if (n < 1) throw std::invalid_argument("n must be >= 1");
    if (d < 1) throw std::invalid_argument("d must be >= 1");
    if (F < 1) throw std::invalid_argument("F must be >= 1");
    if (ffn_width() < 1) throw std::invalid_argument("d_ff must be >= 1");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
    if (!(embedding_learning_rate >= 0.0)) throw std::invalid_argument("embedding_learning_rate must be >= 0");
    if (!(grad_clip >= 0.0)) throw std::invalid_argument("grad_clip must be >= 0");
    if (K > n) throw std::invalid_argument("K must not exceed n");
    if (L > 65535) throw std::invalid_argument("L must fit in 16 bits");
    if (d > 65535) throw std::invalid_argument("d must fit in 16 bits");
    if (retain() < 1 || retain() > 0xffffffffULL) throw std::invalid_argument("n_retain must fit in 32 bits");
    if (history_cap() < n) throw std::invalid_argument("history_capacity must be >= n");
}

std::string to_string(EngineMode mode) { return mode == EngineMode::ranking ? "ranking" : "cascading"; }

EngineMode parse_engine_mode(const std::string& s) {
    if (s == "ranking") return EngineMode::ranking;
    if (s == "cascading") return EngineMode::cascading;
    throw std::invalid_argument("unknown mode '" + s + "'");
}

std::string to_string(SequenceFilter filter) {
    return filter == SequenceFilter::all ? "all" : "long_view_only";
}

SequenceFilter parse_sequence_filter(const std::string& s) {
    if (s == "all") return SequenceFilter::all;
    if (s == "long_view_only") return SequenceFilter::long_view_only;
    throw std::invalid_argument("unknown sequence filter '" + s + "'");
}

std::string to_string(Optimizer optimizer) { return optimizer == Optimizer::sgd ? "sgd" : "adagrad"; }

Optimizer parse_optimizer(const std::string& s) {
    if (s == "sgd") return Optimizer::sgd;
    if (s == "adagrad") return Optimizer::adagrad;
    throw std::invalid_argument("unknown optimizer '" + s + "'");
}

}  // namespace marm
