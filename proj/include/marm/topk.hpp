#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace marm {

// Indices of the k largest scores, best first. Equal scores go to the larger
// recency stamp; equal stamps fall back to the lower index so the result is a
// total order.
template <typename T>
std::vector<std::size_t> top_k_indices(std::span<const T> scores, std::span<const std::uint64_t> recency,
                                       std::size_t k) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        if (recency[a] != recency[b]) return recency[a] > recency[b];
        return a < b;
    };
    k = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
    idx.resize(k);
    return idx;
}

}  // namespace marm
