#include "marm/network.hpp"

#include <cmath>

#include "marm/random.hpp"

namespace marm {

template <typename T>
NetworkParams<T> NetworkParams<T>::zeros(const ModelConfig& config) {
    NetworkParams p;
    for (std::size_t i = 0; i <= config.L; ++i) {
        const std::size_t d_in = i == 0 ? config.F : config.d;
        const std::size_t key_dim = i == 0 ? config.F : config.d;
        p.layers.push_back(AttentionLayerParams<T>::zeros(d_in, config.d, config.ffn_width(), key_dim));
    }
    p.head_w.assign(config.d, T(0));
    p.head_b = T(0);
    return p;
}

template <typename T>
NetworkParams<T> NetworkParams<T>::zeros_like(const NetworkParams& shape) {
    NetworkParams p = shape;
    for (auto& l : p.layers) l.set_zero();
    for (auto& w : p.head_w) w = T(0);
    p.head_b = T(0);
    return p;
}

template <typename T>
std::size_t NetworkParams<T>::dense_parameter_count() const {
    std::size_t total = head_w.size() + 1;
    for (const auto& l : layers) total += l.parameter_count();
    return total;
}

template <typename T>
void NetworkParams<T>::add_scaled(const NetworkParams& other, T scale) {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].add_scaled(other.layers[i], scale);
    for (std::size_t c = 0; c < head_w.size(); ++c) head_w[c] += scale * other.head_w[c];
    head_b += scale * other.head_b;
}

template <typename T>
std::vector<std::span<T>> NetworkParams<T>::fields() {
    std::vector<std::span<T>> out;
    for (auto& l : layers)
        for (auto f : l.fields()) out.push_back(f);
    out.push_back(head_w);
    out.push_back(std::span<T>(&head_b, 1));
    return out;
}

template <typename T>
std::vector<std::span<const T>> NetworkParams<T>::fields() const {
    std::vector<std::span<const T>> out;
    for (const auto& l : layers)
        for (auto f : l.fields()) out.push_back(f);
    out.push_back(head_w);
    out.push_back(std::span<const T>(&head_b, 1));
    return out;
}

template <typename T>
bool NetworkParams<T>::all_finite() const {
    for (const auto& l : layers)
        if (!l.all_finite()) return false;
    for (T w : head_w)
        if (!std::isfinite(w)) return false;
    return std::isfinite(head_b);
}

template <typename T>
template <typename U>
NetworkParams<U> NetworkParams<T>::cast() const {
    NetworkParams<U> out;
    for (const auto& l : layers) out.layers.push_back(l.template cast<U>());
    out.head_w.assign(head_w.begin(), head_w.end());
    out.head_b = static_cast<U>(head_b);
    return out;
}

NetworkParams<float> init_network(const ModelConfig& config, std::uint64_t seed) {
    auto p = NetworkParams<float>::zeros(config);
    Rng rng(mix_seed(seed, 0x6e6574ULL));
    auto fill = [&](Matrix<float>& m) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(m.rows));
        for (auto& v : m.data) v = static_cast<float>(rng.uniform(-bound, bound));
    };
    for (auto& layer : p.layers) {
        fill(layer.w_query);
        if (layer.has_key_input()) fill(layer.key_input);
        fill(layer.ffn_w1);
        fill(layer.ffn_w2);
    }
    return p;
}

template <typename T>
T sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
T bce_with_logit(T logit, int label) {
    // softplus(x) - y * x
    const T softplus = logit > T(0) ? logit + std::log1p(std::exp(-logit)) : std::log1p(std::exp(logit));
    return softplus - (label ? logit : T(0));
}

template <typename T>
NetworkOutput<T> network_forward(const NetworkParams<T>& params, std::span<const T> target,
                                 ConstRowsView<T> history, std::span<const CachedRow<T>> cached,
                                 const ForwardOptions& options) {
    NetworkOutput<T> out;
    out.forward = marm_forward<T>(target, history, cached, params.layers, options);
    out.logit = dot<T>(params.head_w, out.forward.final) + params.head_b;
    out.prediction = sigmoid(out.logit);
    return out;
}

template <typename T>
NetworkGrads<T> network_backward(const NetworkParams<T>& params, std::span<const T> target,
                                 ConstRowsView<T> history, std::span<const CachedRow<T>> cached,
                                 const NetworkOutput<T>& output, int label) {
    const std::size_t depth = params.depth();
    NetworkGrads<T> g;
    g.params = NetworkParams<T>::zeros_like(params);
    g.target.assign(target.size(), T(0));
    g.history = Matrix<T>(history.rows, history.cols);
    for (const auto& row : cached) g.cached.emplace_back(row.values.rows, row.values.cols);

    const T g_logit = output.prediction - static_cast<T>(label ? 1 : 0);
    const auto& fwd = output.forward;
    for (std::size_t c = 0; c < params.head_w.size(); ++c) g.params.head_w[c] = g_logit * fwd.final[c];
    g.params.head_b = g_logit;

    std::vector<T> g_out(params.head_w.size());
    for (std::size_t c = 0; c < g_out.size(); ++c) g_out[c] = g_logit * params.head_w[c];

    // Cached layers: gradient follows the query path only.
    for (std::size_t i = depth; i >= 1; --i) {
        const auto& record = fwd.layers[i];
        const auto& query = fwd.intermediates[i - 1];
        std::vector<T> g_query(query.size(), T(0));
        attention_backward<T>(query, ConstRowsView<T>(record.trace.keys), params.layers[i], record.trace,
                              g_out, g.params.layers[i], g_query, nullptr);
        g_out = std::move(g_query);
    }

    // Embedding layer: the history embeddings are learnable keys.
    const auto& record = fwd.layers[0];
    Matrix<T> raw(record.slots.size(), history.cols);
    for (std::size_t j = 0; j < record.slots.size(); ++j) {
        auto src = history.row(record.slots[j]);
        std::copy(src.begin(), src.end(), raw.row(j).begin());
    }
    Matrix<T> g_raw(raw.rows, raw.cols);
    RowsView<T> g_raw_view(g_raw);
    attention_backward<T>(target, ConstRowsView<T>(raw), params.layers[0], record.trace, g_out,
                          g.params.layers[0], g.target, record.slots.empty() ? nullptr : &g_raw_view);
    for (std::size_t j = 0; j < record.slots.size(); ++j) {
        auto dst = g.history.row(record.slots[j]);
        auto src = g_raw.row(j);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
    return g;
}

#define MARM_INSTANTIATE(T)                                                                        \
    template struct NetworkParams<T>;                                                              \
    template T sigmoid<T>(T);                                                                      \
    template T bce_with_logit<T>(T, int);                                                          \
    template NetworkOutput<T> network_forward<T>(const NetworkParams<T>&, std::span<const T>,      \
                                                 ConstRowsView<T>, std::span<const CachedRow<T>>,  \
                                                 const ForwardOptions&);                           \
    template NetworkGrads<T> network_backward<T>(const NetworkParams<T>&, std::span<const T>,      \
                                                 ConstRowsView<T>, std::span<const CachedRow<T>>,  \
                                                 const NetworkOutput<T>&, int);

MARM_INSTANTIATE(float)
MARM_INSTANTIATE(double)
#undef MARM_INSTANTIATE

template NetworkParams<double> NetworkParams<float>::cast<double>() const;
template NetworkParams<float> NetworkParams<double>::cast<float>() const;

}  // namespace marm
