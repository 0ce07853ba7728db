#pragma once

// Analytic FLOP counts (multiply and add each count as one FLOP).
//
// Cached target attention, per layer with m attended keys:
//   scores            2 * m * d
//   weighted sum      2 * m * d
//   query projection  2 * d_in * d
//   FFN               2 * d * d_ff + 2 * d_ff * d
// plus 2 * m * F * d on layer 0 when F != d (ID-embedding input projection).
// With a GSU (K > 0) every one of the n keys is scored but only K are summed.
//
// Uncached masked self-attention evaluates that same per-position cost at every
// position t = 0..n of [history, target], position t attending its t
// predecessors, so each layer costs Theta(n^2 * d).
//
// Neither count includes softmax exponentials, the head, or backprop.

#include <cstdint>
#include <string>
#include <vector>

#include "marm/config.hpp"

namespace marm {

enum class FlopsMode { cached_ta, uncached_msa };

struct FlopsReport {
    std::vector<std::uint64_t> layer_flops;
    std::uint64_t total_flops = 0;
    FlopsMode mode = FlopsMode::cached_ta;
};

// One layer evaluation: `scored` keys get logits, `attended` keys enter the sum.
std::uint64_t layer_flops(std::uint64_t d_in, std::uint64_t d, std::uint64_t d_ff,
                          std::uint64_t scored, std::uint64_t attended, std::uint64_t key_input_dim);

FlopsReport count_flops(const ModelConfig& config, FlopsMode mode);

std::string to_string(FlopsMode mode);

}  // namespace marm
