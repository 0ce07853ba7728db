#include "marm/gsu.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace marm {

SearchResult gsu_search(std::span<const float> query_vec, std::span<const GsuCandidate> candidates,
                        std::size_t K, const AttentionLayerParams<float>& layer_params, std::size_t layer) {
    if (K == 0) throw std::invalid_argument("gsu_search needs K >= 1");
    const std::size_t width = layer_params.key_dim();
    Matrix<float> keys(candidates.size(), width);
    for (std::size_t j = 0; j < candidates.size(); ++j) {
        if (candidates[j].vec.size() != width) {
            throw DimensionError("candidate " + std::to_string(j) + " has width " +
                                 std::to_string(candidates[j].vec.size()) + ", expected " +
                                 std::to_string(width));
        }
        std::copy(candidates[j].vec.begin(), candidates[j].vec.end(), keys.row(j).begin());
    }

    SearchResult out;
    out.layer = layer;
    out.source_len = candidates.size();
    out.short_list = candidates.size() < K;
    if (candidates.empty()) return out;

    const auto scores = attention_logits<float>(query_vec, ConstRowsView<float>(keys), layer_params);
    std::vector<std::size_t> idx(candidates.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        if (candidates[a].recency != candidates[b].recency) return candidates[a].recency > candidates[b].recency;
        return candidates[a].item_id < candidates[b].item_id;
    };
    const std::size_t k = std::min(K, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = idx[i];
        out.items.push_back({candidates[j].item_id, scores[j], candidates[j].recency});
    }
    return out;
}

std::vector<std::vector<double>> overlap_matrix(std::span<const SearchResult> results) {
    const std::size_t L = results.size();
    std::vector<std::unordered_set<std::uint64_t>> sets(L);
    for (std::size_t i = 0; i < L; ++i)
        for (const auto& it : results[i].items) sets[i].insert(it.item_id);

    std::vector<std::vector<double>> m(L, std::vector<double>(L, 0.0));
    for (std::size_t i = 0; i < L; ++i) {
        m[i][i] = 1.0;
        for (std::size_t j = i + 1; j < L; ++j) {
            const std::size_t denom = std::min(sets[i].size(), sets[j].size());
            double v = 0.0;
            if (denom > 0) {
                std::size_t common = 0;
                for (auto id : sets[i]) common += sets[j].count(id);
                v = static_cast<double>(common) / static_cast<double>(denom);
            }
            m[i][j] = m[j][i] = v;
        }
    }
    return m;
}

std::vector<std::vector<double>> mean_matrix(std::span<const std::vector<std::vector<double>>> matrices) {
    if (matrices.empty()) return {};
    auto out = matrices.front();
    for (auto& row : out) std::fill(row.begin(), row.end(), 0.0);
    for (const auto& m : matrices) {
        if (m.size() != out.size()) throw std::invalid_argument("matrices differ in shape");
        for (std::size_t i = 0; i < m.size(); ++i) {
            if (m[i].size() != out[i].size()) throw std::invalid_argument("matrices differ in shape");
            for (std::size_t j = 0; j < m[i].size(); ++j) out[i][j] += m[i][j];
        }
    }
    for (auto& row : out)
        for (auto& v : row) v /= static_cast<double>(matrices.size());
    return out;
}

}  // namespace marm
