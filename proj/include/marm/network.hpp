#pragma once

// The trainable model around the cached forward: L + 1 attention layers and a
// logistic head on the final interest vector. Templated so gradient checks can
// run the exact same code in double precision.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "marm/attention.hpp"
#include "marm/config.hpp"

namespace marm {

template <typename T>
struct NetworkParams {
    std::vector<AttentionLayerParams<T>> layers;  // L + 1
    std::vector<T> head_w;                        // d
    T head_b = T(0);

    static NetworkParams zeros(const ModelConfig& config);
    static NetworkParams zeros_like(const NetworkParams& shape);

    std::size_t depth() const { return layers.empty() ? 0 : layers.size() - 1; }
    std::size_t dense_parameter_count() const;
    void add_scaled(const NetworkParams& other, T scale);
    bool all_finite() const;

    std::vector<std::span<T>> fields();
    std::vector<std::span<const T>> fields() const;

    template <typename U>
    NetworkParams<U> cast() const;

    bool operator==(const NetworkParams&) const = default;
};

// Dense initialisation: every weight matrix ~ U(+-1/sqrt(fan_in)), zero biases,
// zero head weights and bias (so the first prediction is exactly 0.5).
NetworkParams<float> init_network(const ModelConfig& config, std::uint64_t seed);

template <typename T>
struct NetworkOutput {
    MarmForward<T> forward;
    T logit = T(0);
    T prediction = T(0);  // sigmoid(logit)
};

template <typename T>
struct NetworkGrads {
    NetworkParams<T> params;
    std::vector<T> target;       // F
    Matrix<T> history;           // n x F
    std::vector<Matrix<T>> cached;  // L x (n x d), always zero: cached values are constants
};

template <typename T>
NetworkOutput<T> network_forward(const NetworkParams<T>& params, std::span<const T> target,
                                 ConstRowsView<T> history, std::span<const CachedRow<T>> cached,
                                 const ForwardOptions& options = {});

// Numerically stable binary cross-entropy on a logit.
template <typename T>
T bce_with_logit(T logit, int label);

template <typename T>
T sigmoid(T x);

template <typename T>
NetworkGrads<T> network_backward(const NetworkParams<T>& params, std::span<const T> target,
                                 ConstRowsView<T> history, std::span<const CachedRow<T>> cached,
                                 const NetworkOutput<T>& output, int label);

}  // namespace marm
