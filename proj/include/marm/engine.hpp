#pragma once

// Streaming trainer and server: sequence -> cache lookup -> cached forward ->
// loss and SGD update -> cache save, one event at a time.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "marm/cache_store.hpp"
#include "marm/config.hpp"
#include "marm/gsu.hpp"
#include "marm/network.hpp"
#include "marm/sequence.hpp"

namespace marm {

// Lazily initialised ID embeddings. An unseen id starts at U(+-1/sqrt(F))
// drawn from a generator keyed by (seed, tag, id), so the value does not
// depend on the order ids are first seen. Once the table holds `capacity`
// rows (0 = unbounded) further ids are served their initial value but never
// stored, hence never trained.
class EmbeddingTable {
  public:
    EmbeddingTable(std::size_t dim, std::size_t capacity, std::uint64_t seed, std::uint64_t tag);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return rows_.size(); }
    std::size_t capacity() const { return capacity_; }

    std::vector<float> initial(std::uint64_t id) const;
    // Current value, stored or initial. Never inserts.
    std::vector<float> value(std::uint64_t id) const;
    bool contains(std::uint64_t id) const { return rows_.contains(id); }
    // Stored row, inserted on first use; nullptr when the table is full.
    float* slot(std::uint64_t id);

    const std::map<std::uint64_t, std::vector<float>>& rows() const { return rows_; }
    void set_row(std::uint64_t id, std::vector<float> row);

    bool operator==(const EmbeddingTable&) const = default;

  private:
    std::size_t dim_;
    std::size_t capacity_;
    std::uint64_t seed_;
    std::uint64_t tag_;
    std::map<std::uint64_t, std::vector<float>> rows_;
};

struct TrainStepReport {
    double loss = 0.0;
    double prediction = 0.0;  // before the update
    std::size_t cache_hits = 0;
    std::size_t cache_misses = 0;
    std::size_t cache_writes = 0;  // accepted
    std::size_t sequence_length = 0;
    std::uint64_t flops = 0;  // forward, analytic
};

struct PredictCost {
    std::uint64_t flops = 0;          // sum of per-candidate forward FLOPs
    std::uint64_t cache_lookups = 0;  // keys fetched, once per call
};

struct ParameterReport {
    std::size_t item_rows = 0;
    std::size_t user_rows = 0;
    std::size_t sparse_parameters = 0;  // (item_rows + user_rows) * F
    std::size_t dense_parameters = 0;   // attention layers + head
};

class CheckpointError : public std::runtime_error {
  public:
    CheckpointError(const std::string& what, std::uint64_t offset);
    std::uint64_t offset() const { return offset_; }

  private:
    std::uint64_t offset_;
};

class MarmEngine {
  public:
    static constexpr std::uint32_t kCheckpointVersion = 1;

    // Ranking mode with its own cache. A cascading config gets an empty
    // read-only cache.
    explicit MarmEngine(const ModelConfig& config);
    // Cascading mode reading `shared` without ever writing to it. Requires
    // config.mode == cascading and matching cache geometry.
    MarmEngine(const ModelConfig& config, std::shared_ptr<const CacheStore> shared);

    const ModelConfig& config() const { return config_; }
    std::uint64_t step_count() const { return step_count_; }

    // Throws OrderingError if the event does not follow the user's previous one.
    TrainStepReport train_step(const EventRecord& event);

    // Read-only: nothing in the engine or the cache changes.
    std::vector<double> predict_batch(std::uint64_t user_id, std::span<const std::uint64_t> candidates,
                                      PredictCost* cost = nullptr) const;

    // User-embedding query over the latest m history items; returns the final
    // interest vector (width d). Read-only.
    std::vector<float> retrieval_user_query(std::uint64_t user_id, std::size_t m = 200) const;

    // GSU results of layers 0..L for one candidate, each layer queried with
    // the previous layer's output. Needs config.K > 0. Read-only.
    std::vector<SearchResult> search_layers(std::uint64_t user_id, std::uint64_t item_id) const;

    void checkpoint(const std::filesystem::path& path) const;
    void write_checkpoint(std::ostream& out) const;
    // Restores the model state. A ranking engine gets an empty cache unless one
    // is attached with attach_cache; a cascading engine needs `shared`.
    static MarmEngine restore(const std::filesystem::path& path,
                              std::shared_ptr<const CacheStore> shared = nullptr);
    static MarmEngine read_checkpoint(std::istream& in, std::shared_ptr<const CacheStore> shared = nullptr);

    // Replaces the owned cache (ranking mode), e.g. after CacheStore::load.
    void attach_cache(CacheStore cache);
    const CacheStore& cache() const { return *cache_; }
    // Shared read-only handle for cascading engines.
    std::shared_ptr<const CacheStore> share_cache() const { return cache_; }

    const NetworkParams<float>& params() const { return params_; }
    void set_params(NetworkParams<float> params);
    const HistoryStore& history() const { return history_; }
    const EmbeddingTable& item_embeddings() const { return items_; }
    const EmbeddingTable& user_embeddings() const { return users_; }
    std::vector<float> item_embedding(std::uint64_t item_id) const { return items_.value(item_id); }
    std::vector<float> user_embedding(std::uint64_t user_id) const { return users_.value(user_id); }

    ParameterReport parameter_report() const;

    // Model state (checkpoint bytes) followed by the cache bytes. Equal
    // strings mean equal observable state.
    std::string state_bytes() const;

  private:
    struct Context;  // one user's sequence, embeddings and cache rows
    template <typename Fetch>
    Context build_context(std::uint64_t user_id, std::size_t n, Fetch&& fetch) const;
    Context peek_context(std::uint64_t user_id, std::size_t n) const;
    std::uint64_t forward_flops(const Context& ctx) const;
    ForwardOptions forward_options() const;
    float* item_accumulator(std::uint64_t item_id);

    ModelConfig config_;
    NetworkParams<float> params_;
    EmbeddingTable items_;
    EmbeddingTable users_;
    HistoryStore history_;
    // Adagrad state: squared-gradient sums, same shapes as the parameters.
    NetworkParams<float> accum_;
    std::map<std::uint64_t, std::vector<float>> item_accum_;
    std::shared_ptr<CacheStore> own_cache_;  // ranking mode only
    std::shared_ptr<const CacheStore> cache_;  // what lookups read
    std::uint64_t step_count_ = 0;
};

}  // namespace marm
