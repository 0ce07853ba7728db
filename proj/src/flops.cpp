#include "marm/flops.hpp"

#include <algorithm>
#include <numeric>

namespace marm {

std::uint64_t layer_flops(std::uint64_t d_in, std::uint64_t d, std::uint64_t d_ff,
                          std::uint64_t scored, std::uint64_t attended, std::uint64_t key_input_dim) {
    std::uint64_t f = 2 * scored * d + 2 * attended * d + 2 * d_in * d + 2 * d * d_ff + 2 * d_ff * d;
    if (key_input_dim != 0) f += 2 * scored * key_input_dim * d;
    return f;
}

FlopsReport count_flops(const ModelConfig& config, FlopsMode mode) {
    const std::uint64_t n = config.n;
    const std::uint64_t d = config.d;
    const std::uint64_t d_ff = config.ffn_width();
    const std::uint64_t k = config.K;

    FlopsReport report;
    report.mode = mode;
    for (std::size_t layer = 0; layer <= config.L; ++layer) {
        const std::uint64_t d_in = layer == 0 ? config.F : d;
        const std::uint64_t key_in = (layer == 0 && config.F != config.d) ? config.F : 0;
        std::uint64_t flops = 0;
        if (mode == FlopsMode::cached_ta) {
            const std::uint64_t attended = k > 0 ? std::min(k, n) : n;
            flops = layer_flops(d_in, d, d_ff, n, attended, key_in);
        } else {
            for (std::uint64_t t = 0; t <= n; ++t) {
                const std::uint64_t attended = k > 0 ? std::min(k, t) : t;
                flops += layer_flops(d_in, d, d_ff, t, attended, 0);
            }
            // The input projection of the embedding layer is shared by all positions.
            if (key_in != 0) flops += 2 * (n + 1) * key_in * d;
        }
        report.layer_flops.push_back(flops);
    }
    report.total_flops = std::accumulate(report.layer_flops.begin(), report.layer_flops.end(),
                                         std::uint64_t{0});
    return report;
}

std::string to_string(FlopsMode mode) {
    return mode == FlopsMode::cached_ta ? "cached_ta" : "uncached_msa";
}

}  // namespace marm
