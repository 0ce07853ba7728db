#pragma once

// Per-layer top-K search over a long history, scored with that layer's own
// attention logits, and the overlap of the retrieved sets across layers.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "marm/attention.hpp"

namespace marm {

struct GsuCandidate {
    std::uint64_t item_id = 0;
    std::uint64_t recency = 0;  // larger = newer, e.g. the write timestamp
    std::span<const float> vec;
};

struct ScoredItem {
    std::uint64_t item_id = 0;
    float score = 0.0f;
    std::uint64_t recency = 0;

    bool operator==(const ScoredItem&) const = default;
};

struct SearchResult {
    std::size_t layer = 0;
    std::vector<ScoredItem> items;  // best first
    std::size_t source_len = 0;
    bool short_list = false;  // fewer than K candidates were available
};

// Exact search: every candidate is scored, the K best kept. Ties on score go
// to the newer candidate, then the smaller item id. Throws std::invalid_argument
// for K = 0.
SearchResult gsu_search(std::span<const float> query_vec, std::span<const GsuCandidate> candidates,
                        std::size_t K, const AttentionLayerParams<float>& layer_params,
                        std::size_t layer = 0);

// (i, j) = |items_i & items_j| / min(|items_i|, |items_j|) by item id. An empty
// list overlaps nothing; the diagonal is 1 regardless.
std::vector<std::vector<double>> overlap_matrix(std::span<const SearchResult> results);

// Element-wise mean of equally shaped matrices.
std::vector<std::vector<double>> mean_matrix(std::span<const std::vector<std::vector<double>>> matrices);

}  // namespace marm
