#include "marm/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "marm/topk.hpp"

namespace marm {

namespace {

template <typename T>
bool finite_all(std::span<const T> v) {
    return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

template <typename T>
void check_query(std::span<const T> query, const AttentionLayerParams<T>& params) {
    if (query.size() != params.d_in()) {
        throw DimensionError("query width " + std::to_string(query.size()) +
                             " does not match layer input width " + std::to_string(params.d_in()));
    }
}

template <typename T>
void check_keys(ConstRowsView<T> keys, const AttentionLayerParams<T>& params) {
    if (keys.rows > 0 && keys.cols != params.key_dim()) {
        throw DimensionError("key width " + std::to_string(keys.cols) +
                             " does not match layer key width " + std::to_string(params.key_dim()));
    }
}

// Keys as attended: raw keys, or raw keys through the layer-0 input projection.
template <typename T>
Matrix<T> attended_keys(ConstRowsView<T> keys, const AttentionLayerParams<T>& params) {
    Matrix<T> out(keys.rows, params.dim());
    for (std::size_t j = 0; j < keys.rows; ++j) {
        if (params.has_key_input()) {
            vec_mat<T>(keys.row(j), params.key_input, out.row(j));
        } else {
            std::copy(keys.row(j).begin(), keys.row(j).end(), out.row(j).begin());
        }
    }
    return out;
}

// h -> h + FFN(h); fills the trace's ffn_pre and output.
template <typename T>
std::vector<T> finish_layer(const AttentionLayerParams<T>& params, AttentionTrace<T>& trace) {
    const std::size_t d = params.dim();
    const std::size_t d_ff = params.ffn_width();
    trace.ffn_pre.assign(d_ff, T(0));
    vec_mat<T>(trace.attended, params.ffn_w1, trace.ffn_pre);
    std::vector<T> act(d_ff);
    for (std::size_t k = 0; k < d_ff; ++k) {
        trace.ffn_pre[k] += params.ffn_b1[k];
        act[k] = trace.ffn_pre[k] > T(0) ? trace.ffn_pre[k] : T(0);
    }
    std::vector<T> out(d);
    vec_mat<T>(act, params.ffn_w2, out);
    for (std::size_t c = 0; c < d; ++c) out[c] += params.ffn_b2[c] + trace.attended[c];
    trace.output = out;
    return out;
}

}  // namespace

template <typename T>
AttentionLayerParams<T> AttentionLayerParams<T>::zeros(std::size_t d_in, std::size_t d,
                                                       std::size_t d_ff, std::size_t key_dim) {
    AttentionLayerParams p;
    p.w_query = Matrix<T>(d_in, d);
    if (key_dim != d) p.key_input = Matrix<T>(key_dim, d);
    p.ffn_w1 = Matrix<T>(d, d_ff);
    p.ffn_b1.assign(d_ff, T(0));
    p.ffn_w2 = Matrix<T>(d_ff, d);
    p.ffn_b2.assign(d, T(0));
    return p;
}

template <typename T>
bool AttentionLayerParams<T>::all_finite() const {
    return finite_all<T>(w_query.data) && finite_all<T>(key_input.data) &&
           finite_all<T>(ffn_w1.data) && finite_all<T>(ffn_b1) && finite_all<T>(ffn_w2.data) &&
           finite_all<T>(ffn_b2);
}

template <typename T>
void AttentionLayerParams<T>::set_zero() {
    for (auto* v : {&w_query.data, &key_input.data, &ffn_w1.data, &ffn_b1, &ffn_w2.data, &ffn_b2})
        std::fill(v->begin(), v->end(), T(0));
}

template <typename T>
void AttentionLayerParams<T>::add_scaled(const AttentionLayerParams& other, T scale) {
    auto axpy = [scale](std::vector<T>& dst, const std::vector<T>& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    };
    axpy(w_query.data, other.w_query.data);
    axpy(key_input.data, other.key_input.data);
    axpy(ffn_w1.data, other.ffn_w1.data);
    axpy(ffn_b1, other.ffn_b1);
    axpy(ffn_w2.data, other.ffn_w2.data);
    axpy(ffn_b2, other.ffn_b2);
}

template <typename T>
template <typename U>
AttentionLayerParams<U> AttentionLayerParams<T>::cast() const {
    auto conv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
    auto convm = [&](const Matrix<T>& m) {
        Matrix<U> out;
        out.rows = m.rows;
        out.cols = m.cols;
        out.data = conv(m.data);
        return out;
    };
    AttentionLayerParams<U> p;
    p.w_query = convm(w_query);
    p.key_input = convm(key_input);
    p.ffn_w1 = convm(ffn_w1);
    p.ffn_b1 = conv(ffn_b1);
    p.ffn_w2 = convm(ffn_w2);
    p.ffn_b2 = conv(ffn_b2);
    return p;
}

template <typename T>
std::size_t CachedRow<T>::hits() const {
    return static_cast<std::size_t>(std::count(hit.begin(), hit.end(), std::uint8_t{1}));
}

template <typename T>
std::vector<T> attention_logits(std::span<const T> query, ConstRowsView<T> keys,
                                const AttentionLayerParams<T>& params) {
    check_query(query, params);
    check_keys(keys, params);
    std::vector<T> p(params.dim());
    vec_mat<T>(query, params.w_query, p);
    const Matrix<T> k = attended_keys(keys, params);
    const T scale = T(1) / std::sqrt(static_cast<T>(params.dim()));
    std::vector<T> logits(keys.rows);
    for (std::size_t j = 0; j < keys.rows; ++j) logits[j] = dot<T>(p, k.row(j)) * scale;
    return logits;
}

template <typename T>
std::vector<T> target_attention(std::span<const T> query, ConstRowsView<T> keys,
                                const AttentionLayerParams<T>& params, AttentionTrace<T>* trace) {
    if (keys.rows == 0) throw EmptyKeysError("target_attention called with an empty key list");
    check_query(query, params);
    check_keys(keys, params);

    AttentionTrace<T> local;
    AttentionTrace<T>& tr = trace ? *trace : local;
    const std::size_t d = params.dim();

    tr.passthrough = false;
    tr.projected.assign(d, T(0));
    vec_mat<T>(query, params.w_query, tr.projected);
    tr.keys = attended_keys(keys, params);

    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    tr.weights.resize(keys.rows);
    T max_logit = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < keys.rows; ++j) {
        tr.weights[j] = dot<T>(tr.projected, tr.keys.row(j)) * scale;
        max_logit = std::max(max_logit, tr.weights[j]);
    }
    T total = T(0);
    for (auto& w : tr.weights) {
        w = std::exp(w - max_logit);
        total += w;
    }
    for (auto& w : tr.weights) w /= total;

    tr.attended.assign(d, T(0));
    for (std::size_t j = 0; j < keys.rows; ++j) {
        const T a = tr.weights[j];
        auto kj = tr.keys.row(j);
        for (std::size_t c = 0; c < d; ++c) tr.attended[c] += a * kj[c];
    }
    return finish_layer(params, tr);
}

template <typename T>
std::vector<T> passthrough(std::span<const T> query, const AttentionLayerParams<T>& params,
                           AttentionTrace<T>* trace) {
    check_query(query, params);
    AttentionTrace<T> local;
    AttentionTrace<T>& tr = trace ? *trace : local;
    tr.passthrough = true;
    tr.projected.assign(params.dim(), T(0));
    vec_mat<T>(query, params.w_query, tr.projected);
    tr.keys = Matrix<T>();
    tr.weights.clear();
    tr.attended = tr.projected;
    return finish_layer(params, tr);
}

template <typename T>
void attention_backward(std::span<const T> query, ConstRowsView<T> raw_keys,
                        const AttentionLayerParams<T>& params, const AttentionTrace<T>& trace,
                        std::span<const T> grad_output, AttentionLayerParams<T>& grads,
                        std::span<T> grad_query, RowsView<T>* grad_keys) {
    const std::size_t d = params.dim();
    const std::size_t d_ff = params.ffn_width();

    // FFN block and residual.
    std::vector<T> g_h(grad_output.begin(), grad_output.end());
    for (std::size_t c = 0; c < d; ++c) grads.ffn_b2[c] += grad_output[c];
    std::vector<T> act(d_ff);
    for (std::size_t k = 0; k < d_ff; ++k) act[k] = trace.ffn_pre[k] > T(0) ? trace.ffn_pre[k] : T(0);
    add_outer<T>(grads.ffn_w2, act, grad_output);
    std::vector<T> g_z(d_ff);
    mat_vec<T>(params.ffn_w2, grad_output, g_z);
    for (std::size_t k = 0; k < d_ff; ++k) {
        if (trace.ffn_pre[k] <= T(0)) g_z[k] = T(0);
        grads.ffn_b1[k] += g_z[k];
    }
    add_outer<T>(grads.ffn_w1, trace.attended, g_z);
    std::vector<T> g_h_ffn(d);
    mat_vec<T>(params.ffn_w1, g_z, g_h_ffn);
    for (std::size_t c = 0; c < d; ++c) g_h[c] += g_h_ffn[c];

    std::vector<T> g_p(d, T(0));
    if (trace.passthrough) {
        g_p = g_h;
    } else {
        const std::size_t m = trace.weights.size();
        const T scale = T(1) / std::sqrt(static_cast<T>(d));
        std::vector<T> g_a(m);
        T mean = T(0);
        for (std::size_t j = 0; j < m; ++j) {
            g_a[j] = dot<T>(g_h, trace.keys.row(j));
            mean += trace.weights[j] * g_a[j];
        }
        const bool need_keys = grad_keys != nullptr || params.has_key_input();
        Matrix<T> g_k(need_keys ? m : 0, d);
        for (std::size_t j = 0; j < m; ++j) {
            const T g_s = trace.weights[j] * (g_a[j] - mean) * scale;
            auto kj = trace.keys.row(j);
            for (std::size_t c = 0; c < d; ++c) g_p[c] += g_s * kj[c];
            if (need_keys) {
                auto gk = g_k.row(j);
                for (std::size_t c = 0; c < d; ++c)
                    gk[c] = trace.weights[j] * g_h[c] + g_s * trace.projected[c];
            }
        }
        if (need_keys) {
            for (std::size_t j = 0; j < m; ++j) {
                if (params.has_key_input()) {
                    add_outer<T>(grads.key_input, raw_keys.row(j), g_k.row(j));
                    if (grad_keys) {
                        std::vector<T> g_raw(params.key_dim());
                        mat_vec<T>(params.key_input, g_k.row(j), g_raw);
                        auto dst = grad_keys->row(j);
                        for (std::size_t c = 0; c < g_raw.size(); ++c) dst[c] += g_raw[c];
                    }
                } else if (grad_keys) {
                    auto dst = grad_keys->row(j);
                    auto src = g_k.row(j);
                    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                }
            }
        }
    }

    add_outer<T>(grads.w_query, query, g_p);
    std::vector<T> g_q(params.d_in());
    mat_vec<T>(params.w_query, g_p, g_q);
    for (std::size_t c = 0; c < g_q.size(); ++c) grad_query[c] += g_q[c];
}

namespace {

// Picks which of `candidates` (chronological history positions) a layer attends.
// Without top-k every candidate is used; with top-k the highest logits win,
// newer positions first on ties, and the survivors keep chronological order.
template <typename T>
std::vector<std::size_t> choose_slots(std::span<const T> query, const std::vector<std::size_t>& candidates,
                                      ConstRowsView<T> keys, const AttentionLayerParams<T>& params,
                                      std::size_t top_k) {
    if (top_k == 0 || candidates.size() <= top_k) return candidates;
    const auto logits = attention_logits<T>(query, keys, params);
    std::vector<std::uint64_t> recency(candidates.begin(), candidates.end());
    auto picked = top_k_indices<T>(logits, recency, top_k);
    std::sort(picked.begin(), picked.end());
    std::vector<std::size_t> out;
    out.reserve(picked.size());
    for (auto i : picked) out.push_back(candidates[i]);
    return out;
}

template <typename T>
Matrix<T> gather(ConstRowsView<T> src, const std::vector<std::size_t>& slots) {
    Matrix<T> out(slots.size(), src.cols);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        auto r = src.row(slots[i]);
        std::copy(r.begin(), r.end(), out.row(i).begin());
    }
    return out;
}

template <typename T>
std::vector<T> run_layer(std::span<const T> query, ConstRowsView<T> source,
                         const std::vector<std::size_t>& candidates,
                         const AttentionLayerParams<T>& params, std::size_t top_k,
                         LayerRecord<T>& record) {
    if (candidates.empty()) {
        record.slots.clear();
        return passthrough<T>(query, params, &record.trace);
    }
    // Score only the available candidates when selecting.
    Matrix<T> cand = gather(source, candidates);
    if (top_k > 0 && candidates.size() > top_k) {
        record.slots = choose_slots<T>(query, candidates, ConstRowsView<T>(cand), params, top_k);
        cand = gather(source, record.slots);
    } else {
        record.slots = candidates;
    }
    return target_attention<T>(query, ConstRowsView<T>(cand), params, &record.trace);
}

}  // namespace

template <typename T>
MarmForward<T> marm_forward(std::span<const T> target, ConstRowsView<T> id_embeddings,
                            std::span<const CachedRow<T>> cached,
                            std::span<const AttentionLayerParams<T>> params,
                            const ForwardOptions& options) {
    const std::size_t depth = cached.size();
    if (params.size() != depth + 1) {
        throw DimensionError("expected " + std::to_string(depth + 1) + " layer parameter sets, got " +
                             std::to_string(params.size()));
    }
    const std::size_t n = id_embeddings.rows;
    for (std::size_t i = 0; i < depth; ++i) {
        if (cached[i].hit.size() != n || cached[i].values.rows != n) {
            throw DimensionError("cached row " + std::to_string(i + 1) +
                                 " is not aligned with the history");
        }
        if (n > 0 && cached[i].values.cols != params[i + 1].dim()) {
            throw DimensionError("cached row " + std::to_string(i + 1) + " has wrong width");
        }
    }

    MarmForward<T> out;
    out.layers.resize(depth + 1);

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<T> x = run_layer<T>(target, id_embeddings, all, params[0], options.top_k, out.layers[0]);

    for (std::size_t i = 1; i <= depth; ++i) {
        out.intermediates.push_back(x);
        const CachedRow<T>& row = cached[i - 1];
        std::vector<std::size_t> hits;
        for (std::size_t j = 0; j < n; ++j)
            if (row.hit[j]) hits.push_back(j);
        if (hits.empty() && n > 0 && options.miss_policy == MissPolicy::error) {
            throw AllMissedError("every cache slot at depth " + std::to_string(i) + " missed");
        }
        x = run_layer<T>(x, ConstRowsView<T>(row.values), hits, params[i], options.top_k,
                         out.layers[i]);
    }
    out.final = std::move(x);
    return out;
}

template <typename T>
std::vector<Matrix<T>> oracle_masked_sa(ConstRowsView<T> id_embeddings, std::span<const T> target,
                                        std::span<const AttentionLayerParams<T>> params,
                                        std::size_t window) {
    if (params.empty()) throw DimensionError("oracle needs at least one layer");
    const std::size_t n = id_embeddings.rows;
    const std::size_t positions = n + 1;
    const std::size_t f = params[0].d_in();
    if (target.size() != f || (n > 0 && id_embeddings.cols != f)) {
        throw DimensionError("oracle input width does not match layer 0");
    }

    // Layer input X: history rows followed by the target.
    Matrix<T> x(positions, f);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t c = 0; c < f; ++c) x(t, c) = id_embeddings.row(t)[c];
    for (std::size_t c = 0; c < f; ++c) x(n, c) = target[c];

    std::vector<Matrix<T>> rows;
    for (const auto& layer : params) {
        const std::size_t d = layer.dim();
        const std::size_t d_in = layer.d_in();
        const std::size_t d_ff = layer.ffn_width();
        if (x.cols != d_in) throw DimensionError("oracle layer width mismatch");

        // Q = X Wq, K = X (or X Win on the embedding layer).
        Matrix<T> q(positions, d), k(positions, d);
        for (std::size_t t = 0; t < positions; ++t) {
            for (std::size_t c = 0; c < d; ++c) {
                T acc = 0;
                for (std::size_t r = 0; r < d_in; ++r) acc += x(t, r) * layer.w_query(r, c);
                q(t, c) = acc;
                if (layer.has_key_input()) {
                    T kacc = 0;
                    for (std::size_t r = 0; r < d_in; ++r) kacc += x(t, r) * layer.key_input(r, c);
                    k(t, c) = kacc;
                } else {
                    k(t, c) = x(t, c);
                }
            }
        }

        // Masked scores: position t sees j in [t - window, t).
        Matrix<T> h(positions, d);
        const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
        for (std::size_t t = 0; t < positions; ++t) {
            const std::size_t lo = (window > 0 && t > window) ? t - window : 0;
            if (lo >= t) {
                for (std::size_t c = 0; c < d; ++c) h(t, c) = q(t, c);
                continue;
            }
            std::vector<T> s(t - lo);
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = lo; j < t; ++j) {
                T acc = 0;
                for (std::size_t c = 0; c < d; ++c) acc += q(t, c) * k(j, c);
                s[j - lo] = acc * inv_sqrt_d;
                mx = std::max(mx, s[j - lo]);
            }
            T z = 0;
            for (auto& v : s) {
                v = std::exp(v - mx);
                z += v;
            }
            for (std::size_t c = 0; c < d; ++c) {
                T acc = 0;
                for (std::size_t j = lo; j < t; ++j) acc += (s[j - lo] / z) * k(j, c);
                h(t, c) = acc;
            }
        }

        // Position-wise FFN with residual.
        Matrix<T> y(positions, d);
        for (std::size_t t = 0; t < positions; ++t) {
            std::vector<T> hidden(d_ff);
            for (std::size_t u = 0; u < d_ff; ++u) {
                T acc = 0;
                for (std::size_t c = 0; c < d; ++c) acc += h(t, c) * layer.ffn_w1(c, u);
                acc += layer.ffn_b1[u];
                hidden[u] = acc > 0 ? acc : T(0);
            }
            for (std::size_t c = 0; c < d; ++c) {
                T acc = 0;
                for (std::size_t u = 0; u < d_ff; ++u) acc += hidden[u] * layer.ffn_w2(u, c);
                y(t, c) = acc + (layer.ffn_b2[c] + h(t, c));
            }
        }
        rows.push_back(y);
        x = std::move(y);
    }
    return rows;
}

#define MARM_INSTANTIATE(T)                                                                      \
    template struct AttentionLayerParams<T>;                                                     \
    template struct CachedRow<T>;                                                                \
    template std::vector<T> target_attention<T>(std::span<const T>, ConstRowsView<T>,            \
                                                const AttentionLayerParams<T>&, AttentionTrace<T>*); \
    template std::vector<T> passthrough<T>(std::span<const T>, const AttentionLayerParams<T>&,   \
                                           AttentionTrace<T>*);                                  \
    template std::vector<T> attention_logits<T>(std::span<const T>, ConstRowsView<T>,            \
                                                const AttentionLayerParams<T>&);                 \
    template void attention_backward<T>(std::span<const T>, ConstRowsView<T>,                    \
                                        const AttentionLayerParams<T>&, const AttentionTrace<T>&, \
                                        std::span<const T>, AttentionLayerParams<T>&,            \
                                        std::span<T>, RowsView<T>*);                             \
    template MarmForward<T> marm_forward<T>(std::span<const T>, ConstRowsView<T>,                \
                                            std::span<const CachedRow<T>>,                       \
                                            std::span<const AttentionLayerParams<T>>,            \
                                            const ForwardOptions&);                              \
    template std::vector<Matrix<T>> oracle_masked_sa<T>(ConstRowsView<T>, std::span<const T>,    \
                                                        std::span<const AttentionLayerParams<T>>, \
                                                        std::size_t);

MARM_INSTANTIATE(float)
MARM_INSTANTIATE(double)
#undef MARM_INSTANTIATE

template AttentionLayerParams<double> AttentionLayerParams<float>::cast<double>() const;
template AttentionLayerParams<float> AttentionLayerParams<double>::cast<float>() const;
template AttentionLayerParams<float> AttentionLayerParams<float>::cast<float>() const;

}  // namespace marm
