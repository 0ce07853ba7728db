#pragma once

// Target-attention kernels and the multi-layer cached forward pass.
//
// One layer maps a query q (d_in) and m keys k_j (d) to
//
//   p   = q * W_q                       projected query, d
//   s_j = <p, k_j> / sqrt(d)            logits
//   a   = softmax(s)
//   h   = sum_j a_j k_j                 keys double as values
//   out = h + W2^T relu(W1^T h + b1) + b2
//
// With no keys the attention is skipped and h = p (passthrough). Layer 0 reads
// learnable ID embeddings of width F; when F != d it carries an F x d input
// projection applied to those embeddings. Layers >= 1 read cached vectors as-is.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "marm/tensor.hpp"

namespace marm {

class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

class EmptyKeysError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

template <typename T>
struct AttentionLayerParams {
    Matrix<T> w_query;    // d_in x d
    Matrix<T> key_input;  // F x d on layer 0 when F != d, otherwise empty
    Matrix<T> ffn_w1;     // d x d_ff
    std::vector<T> ffn_b1;
    Matrix<T> ffn_w2;  // d_ff x d
    std::vector<T> ffn_b2;

    static AttentionLayerParams zeros(std::size_t d_in, std::size_t d, std::size_t d_ff,
                                      std::size_t key_dim);

    std::size_t d_in() const { return w_query.rows; }
    std::size_t dim() const { return w_query.cols; }
    std::size_t ffn_width() const { return ffn_w1.cols; }
    bool has_key_input() const { return !key_input.empty(); }
    // Width of the raw key vectors this layer consumes.
    std::size_t key_dim() const { return has_key_input() ? key_input.rows : dim(); }

    std::size_t parameter_count() const {
        return w_query.size() + key_input.size() + ffn_w1.size() + ffn_b1.size() +
               ffn_w2.size() + ffn_b2.size();
    }
    bool all_finite() const;

    // Every field flattened, in declaration order.
    std::vector<std::span<T>> fields() {
        return {w_query.data, key_input.data, ffn_w1.data, ffn_b1, ffn_w2.data, ffn_b2};
    }
    std::vector<std::span<const T>> fields() const {
        return {w_query.data, key_input.data, ffn_w1.data, ffn_b1, ffn_w2.data, ffn_b2};
    }

    void set_zero();

    // this += scale * other, field by field (SGD step and gradient accumulation).
    void add_scaled(const AttentionLayerParams& other, T scale);

    template <typename U>
    AttentionLayerParams<U> cast() const;

    bool operator==(const AttentionLayerParams&) const = default;
};

// Everything backprop needs from one layer evaluation.
template <typename T>
struct AttentionTrace {
    std::vector<T> projected;  // p
    Matrix<T> keys;            // keys as attended (after input projection if any)
    std::vector<T> weights;    // softmax weights, empty on passthrough
    std::vector<T> attended;   // h
    std::vector<T> ffn_pre;    // W1^T h + b1
    std::vector<T> output;
    bool passthrough = false;
};

// Single-layer target attention. Throws EmptyKeysError when `keys` is empty and
// DimensionError on any width mismatch.
template <typename T>
std::vector<T> target_attention(std::span<const T> query, ConstRowsView<T> keys,
                                const AttentionLayerParams<T>& params,
                                AttentionTrace<T>* trace = nullptr);

// Cold-start / all-missed path: attention skipped, FFN + residual on the projected query.
template <typename T>
std::vector<T> passthrough(std::span<const T> query, const AttentionLayerParams<T>& params,
                           AttentionTrace<T>* trace = nullptr);

// Pre-softmax logits <q W_q, k_j> / sqrt(d) for every key. Shared with the GSU.
template <typename T>
std::vector<T> attention_logits(std::span<const T> query, ConstRowsView<T> keys,
                                const AttentionLayerParams<T>& params);

// Backward through one layer given the forward trace. Accumulates into `grads`
// and `grad_query`; when `grad_keys` is non-null it receives the gradient with
// respect to the raw keys (key_dim wide). Pass null for cached keys.
template <typename T>
void attention_backward(std::span<const T> query, ConstRowsView<T> raw_keys,
                        const AttentionLayerParams<T>& params, const AttentionTrace<T>& trace,
                        std::span<const T> grad_output, AttentionLayerParams<T>& grads,
                        std::span<T> grad_query, RowsView<T>* grad_keys);

// One depth of looked-up cache values, aligned index-for-index with the history.
template <typename T>
struct CachedRow {
    Matrix<T> values;           // n x d; contents of missed slots are never read
    std::vector<std::uint8_t> hit;  // 1 = hit, 0 = miss

    std::size_t hits() const;
};

enum class MissPolicy { passthrough, error };

class AllMissedError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct ForwardOptions {
    MissPolicy miss_policy = MissPolicy::passthrough;
    std::size_t top_k = 0;  // 0 = attend every available key
};

template <typename T>
struct LayerRecord {
    std::vector<std::size_t> slots;  // history positions attended, chronological
    AttentionTrace<T> trace;
};

template <typename T>
struct MarmForward {
    std::vector<T> final;
    std::vector<std::vector<T>> intermediates;  // L vectors, depth 1..L cache values
    std::vector<LayerRecord<T>> layers;         // L + 1 records
};

// Multi-layer cached forward. params holds L + 1 layers; cached holds L rows.
// Layer 0 attends the ID embeddings, layer i attends the hit slots of cached row i.
template <typename T>
MarmForward<T> marm_forward(std::span<const T> target, ConstRowsView<T> id_embeddings,
                            std::span<const CachedRow<T>> cached,
                            std::span<const AttentionLayerParams<T>> params,
                            const ForwardOptions& options = {});

// Reference strictly-causal masked self-attention over the whole sequence
// [e_0 .. e_{n-1}, target] computed in matrix form without any cache. Returns
// L + 1 matrices of (n + 1) x d: row i, position t is the depth-(i+1) output.
// window > 0 limits every position to its `window` most recent predecessors,
// which is what a length-n exposure sequence sees.
template <typename T>
std::vector<Matrix<T>> oracle_masked_sa(ConstRowsView<T> id_embeddings, std::span<const T> target,
                                        std::span<const AttentionLayerParams<T>> params,
                                        std::size_t window = 0);

}  // namespace marm
