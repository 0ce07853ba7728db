#include "marm/engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "marm/flops.hpp"
#include "marm/random.hpp"

namespace marm {

namespace {

constexpr std::uint64_t kItemTag = 0x6974656d;
constexpr float kAdagradInit = 0.1f;
constexpr std::uint64_t kUserTag = 0x75736572;
constexpr char kCheckpointMagic[8] = {'M', 'A', 'R', 'M', 'C', 'K', 'P', 'T'};

using Writer = detail::Writer;
using Reader = detail::Reader<CheckpointError>;

void check_shared_cache(const ModelConfig& c, const CacheStore& cache) {
    if (cache.dim() != c.d || cache.depth_count() != c.L) {
        throw std::invalid_argument("shared cache geometry (d=" + std::to_string(cache.dim()) +
                                    ", L=" + std::to_string(cache.depth_count()) +
                                    ") does not match the model config");
    }
}

}  // namespace

CheckpointError::CheckpointError(const std::string& what, std::uint64_t offset)
    : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}

// ---- embeddings

EmbeddingTable::EmbeddingTable(std::size_t dim, std::size_t capacity, std::uint64_t seed, std::uint64_t tag)
    : dim_(dim), capacity_(capacity), seed_(seed), tag_(tag) {}

std::vector<float> EmbeddingTable::initial(std::uint64_t id) const {
    Rng rng(mix_seed(mix_seed(seed_, tag_), id));
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim_));
    std::vector<float> v(dim_);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
    return v;
}

std::vector<float> EmbeddingTable::value(std::uint64_t id) const {
    auto it = rows_.find(id);
    return it != rows_.end() ? it->second : initial(id);
}

float* EmbeddingTable::slot(std::uint64_t id) {
    auto it = rows_.find(id);
    if (it != rows_.end()) return it->second.data();
    if (capacity_ != 0 && rows_.size() >= capacity_) return nullptr;
    return rows_.emplace(id, initial(id)).first->second.data();
}

void EmbeddingTable::set_row(std::uint64_t id, std::vector<float> row) {
    if (row.size() != dim_) throw DimensionError("embedding row width mismatch");
    rows_.insert_or_assign(id, std::move(row));
}

// ---- engine

struct MarmEngine::Context {
    std::vector<HistoryItem> sequence;
    Matrix<float> embeddings;          // len x F
    std::vector<CachedRow<float>> cached;  // L rows
    std::size_t hits = 0;
    std::size_t misses = 0;
};

MarmEngine::MarmEngine(const ModelConfig& config)
    : config_(config),
      params_(init_network(config, config.seed)),
      items_(config.F, config.embedding_table_capacity, config.seed, kItemTag),
      users_(config.F, config.embedding_table_capacity, config.seed, kUserTag),
      history_(config.history_cap()) {
    config_.validate();
    accum_ = NetworkParams<float>::zeros(config_);
    for (auto f : accum_.fields()) std::fill(f.begin(), f.end(), kAdagradInit);
    own_cache_ = std::make_shared<CacheStore>(config_.d, config_.retain(), config_.L);
    cache_ = own_cache_;
    if (config_.mode == EngineMode::cascading) own_cache_.reset();
}

MarmEngine::MarmEngine(const ModelConfig& config, std::shared_ptr<const CacheStore> shared)
    : MarmEngine(config) {
    if (config_.mode != EngineMode::cascading)
        throw std::invalid_argument("a shared cache is only accepted in cascading mode");
    if (!shared) throw std::invalid_argument("null shared cache");
    check_shared_cache(config_, *shared);
    cache_ = std::move(shared);
}

float* MarmEngine::item_accumulator(std::uint64_t item_id) {
    auto it = item_accum_.find(item_id);
    if (it == item_accum_.end()) it = item_accum_.emplace(item_id, std::vector<float>(config_.F, kAdagradInit)).first;
    return it->second.data();
}

ForwardOptions MarmEngine::forward_options() const {
    ForwardOptions opt;
    opt.top_k = config_.K;
    return opt;
}

template <typename Fetch>
MarmEngine::Context MarmEngine::build_context(std::uint64_t user_id, std::size_t n, Fetch&& fetch) const {
    Context ctx;
    ctx.sequence = history_.exposure_events(user_id, n, config_.filter);
    const std::size_t len = ctx.sequence.size();
    ctx.embeddings = Matrix<float>(len, config_.F);
    std::vector<std::uint64_t> ids(len);
    for (std::size_t j = 0; j < len; ++j) {
        ids[j] = ctx.sequence[j].item_id;
        const auto v = items_.value(ids[j]);
        std::copy(v.begin(), v.end(), ctx.embeddings.row(j).begin());
    }
    for (std::size_t depth = 1; depth <= config_.L; ++depth) {
        const auto keys = make_keys(user_id, ids, static_cast<std::uint16_t>(depth));
        ctx.cached.push_back(fetch(keys));
        const auto h = ctx.cached.back().hits();
        ctx.hits += h;
        ctx.misses += len - h;
    }
    return ctx;
}

MarmEngine::Context MarmEngine::peek_context(std::uint64_t user_id, std::size_t n) const {
    return build_context(user_id, n, [&](const std::vector<CacheKey>& keys) { return cache_->peek_batch(keys); });
}

std::uint64_t MarmEngine::forward_flops(const Context& ctx) const {
    const std::uint64_t d = config_.d, d_ff = config_.ffn_width();
    const std::uint64_t key_in = config_.F != config_.d ? config_.F : 0;
    auto attended = [&](std::uint64_t scored) {
        return config_.K > 0 ? std::min<std::uint64_t>(config_.K, scored) : scored;
    };
    std::uint64_t total = 0;
    const std::uint64_t len = ctx.sequence.size();
    total += layer_flops(config_.F, d, d_ff, len, attended(len), key_in);
    for (std::size_t i = 0; i < config_.L; ++i) {
        const std::uint64_t hits = ctx.cached[i].hits();
        total += layer_flops(d, d, d_ff, hits, attended(hits), 0);
    }
    return total;
}

TrainStepReport MarmEngine::train_step(const EventRecord& event) {
    if (event.label != 0 && event.label != 1) throw std::invalid_argument("label must be 0 or 1");
    history_.check_order(event);

    // Ranking lookups go through the counting path; a read-only cache is only peeked.
    Context ctx = own_cache_ ? build_context(event.user_id, config_.n,
                                             [&](const std::vector<CacheKey>& keys) {
                                                 return own_cache_->lookup_batch(keys);
                                             })
                             : peek_context(event.user_id, config_.n);
    const std::size_t len = ctx.sequence.size();

    // Stored rows for everything that will be updated.
    float* target_row = items_.slot(event.item_id);
    const std::vector<float> target = target_row ? std::vector<float>(target_row, target_row + config_.F)
                                                 : items_.initial(event.item_id);
    std::vector<float*> history_rows(len);
    for (std::size_t j = 0; j < len; ++j) history_rows[j] = items_.slot(ctx.sequence[j].item_id);

    const auto out = network_forward<float>(params_, target, ConstRowsView<float>(ctx.embeddings),
                                            ctx.cached, forward_options());
    TrainStepReport report;
    report.loss = bce_with_logit<float>(out.logit, event.label);
    report.prediction = out.prediction;
    report.cache_hits = ctx.hits;
    report.cache_misses = ctx.misses;
    report.sequence_length = len;
    report.flops = forward_flops(ctx);

    if (config_.learning_rate > 0.0) {
        const auto grads = network_backward<float>(params_, target, ConstRowsView<float>(ctx.embeddings),
                                                   ctx.cached, out, event.label);
        // Global-norm clipping scales the gradient itself, so Adagrad sums see the clipped value.
        float gscale = 1.0f;
        if (config_.grad_clip > 0.0) {
            double sq = 0.0;
            auto acc = [&](std::span<const float> v) {
                for (float x : v) sq += double(x) * double(x);
            };
            for (auto f : grads.params.fields()) acc(f);
            acc(grads.target);
            acc(grads.history.data);
            const double norm = std::sqrt(sq);
            if (norm > config_.grad_clip) gscale = static_cast<float>(config_.grad_clip / norm);
        }
        const float lr = static_cast<float>(config_.learning_rate);
        const float elr = static_cast<float>(config_.embedding_lr());
        const bool adagrad = config_.optimizer == Optimizer::adagrad;
        auto apply = [&](std::span<float> w, std::span<const float> g, float rate, float* acc) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                const float gi = gscale * g[i];
                if (adagrad) {
                    acc[i] += gi * gi;
                    w[i] -= rate * gi / std::sqrt(acc[i]);
                } else {
                    w[i] -= rate * gi;
                }
            }
        };
        auto weights = params_.fields();
        const auto gfields = grads.params.fields();
        auto afields = accum_.fields();
        for (std::size_t f = 0; f < weights.size(); ++f)
            apply(weights[f], gfields[f], lr, adagrad ? afields[f].data() : nullptr);
        if (target_row)
            apply({target_row, config_.F}, grads.target, elr, adagrad ? item_accumulator(event.item_id) : nullptr);
        for (std::size_t j = 0; j < len; ++j) {
            if (!history_rows[j]) continue;
            apply({history_rows[j], config_.F}, grads.history.row(j), elr,
                  adagrad ? item_accumulator(ctx.sequence[j].item_id) : nullptr);
        }
    }

    if (config_.mode == EngineMode::ranking && config_.L > 0) {
        std::vector<CacheEntry> entries;
        for (std::size_t depth = 1; depth <= config_.L; ++depth) {
            entries.push_back({{event.user_id, event.item_id, static_cast<std::uint16_t>(depth)},
                               out.forward.intermediates[depth - 1], event.timestamp});
        }
        report.cache_writes = own_cache_->save_batch(entries);
    }

    history_.append(event);
    ++step_count_;
    return report;
}

std::vector<double> MarmEngine::predict_batch(std::uint64_t user_id, std::span<const std::uint64_t> candidates,
                                              PredictCost* cost) const {
    const Context ctx = peek_context(user_id, config_.n);
    const auto options = forward_options();
    const std::uint64_t per_candidate = forward_flops(ctx);
    std::vector<double> out;
    out.reserve(candidates.size());
    for (auto item : candidates) {
        const auto target = items_.value(item);
        const auto res = network_forward<float>(params_, target, ConstRowsView<float>(ctx.embeddings),
                                                ctx.cached, options);
        out.push_back(res.prediction);
    }
    if (cost) {
        cost->flops = per_candidate * candidates.size();
        cost->cache_lookups = ctx.sequence.size() * config_.L;
    }
    return out;
}

std::vector<float> MarmEngine::retrieval_user_query(std::uint64_t user_id, std::size_t m) const {
    if (m == 0) throw std::invalid_argument("retrieval history size must be >= 1");
    const Context ctx = peek_context(user_id, m);
    const auto query = users_.value(user_id);
    const auto fwd = marm_forward<float>(query, ConstRowsView<float>(ctx.embeddings), ctx.cached,
                                         params_.layers, forward_options());
    return fwd.final;
}

std::vector<SearchResult> MarmEngine::search_layers(std::uint64_t user_id, std::uint64_t item_id) const {
    if (config_.K == 0) throw std::logic_error("search_layers needs a GSU config (K > 0)");
    const Context ctx = peek_context(user_id, config_.n);
    const auto target = items_.value(item_id);
    const auto fwd = marm_forward<float>(target, ConstRowsView<float>(ctx.embeddings), ctx.cached,
                                         params_.layers, forward_options());
    std::vector<SearchResult> out;
    std::vector<GsuCandidate> cands;
    for (std::size_t j = 0; j < ctx.sequence.size(); ++j)
        cands.push_back({ctx.sequence[j].item_id, ctx.sequence[j].timestamp, ctx.embeddings.row(j)});
    out.push_back(gsu_search(target, cands, config_.K, params_.layers[0], 0));
    for (std::size_t i = 1; i <= config_.L; ++i) {
        const auto& row = ctx.cached[i - 1];
        cands.clear();
        for (std::size_t j = 0; j < ctx.sequence.size(); ++j)
            if (row.hit[j]) cands.push_back({ctx.sequence[j].item_id, ctx.sequence[j].timestamp, row.values.row(j)});
        out.push_back(gsu_search(fwd.intermediates[i - 1], cands, config_.K, params_.layers[i], i));
    }
    return out;
}

void MarmEngine::set_params(NetworkParams<float> params) {
    const auto shape = NetworkParams<float>::zeros(config_);
    if (params.layers.size() != shape.layers.size() || params.head_w.size() != shape.head_w.size())
        throw DimensionError("network shape does not match the config");
    for (std::size_t i = 0; i < shape.layers.size(); ++i) {
        const auto& a = params.layers[i];
        const auto& b = shape.layers[i];
        if (a.w_query.rows != b.w_query.rows || a.w_query.cols != b.w_query.cols ||
            a.key_input.rows != b.key_input.rows || a.ffn_w1.cols != b.ffn_w1.cols)
            throw DimensionError("layer " + std::to_string(i) + " shape does not match the config");
    }
    params_ = std::move(params);
}

void MarmEngine::attach_cache(CacheStore cache) {
    if (config_.mode != EngineMode::ranking) throw std::logic_error("cascading engines do not own a cache");
    check_shared_cache(config_, cache);
    if (cache.n_retain() != config_.retain()) throw std::invalid_argument("cache retention does not match config");
    own_cache_ = std::make_shared<CacheStore>(std::move(cache));
    cache_ = own_cache_;
}

ParameterReport MarmEngine::parameter_report() const {
    ParameterReport r;
    r.item_rows = items_.size();
    r.user_rows = users_.size();
    r.sparse_parameters = (r.item_rows + r.user_rows) * config_.F;
    r.dense_parameters = params_.dense_parameter_count();
    return r;
}

// ---- checkpoint

namespace {

void put_matrix(Writer& w, const Matrix<float>& m) {
    w.put<std::uint64_t>(m.rows);
    w.put<std::uint64_t>(m.cols);
    for (float f : m.data) w.put_f32(f);
}

void put_vector(Writer& w, const std::vector<float>& v) {
    w.put<std::uint64_t>(v.size());
    for (float f : v) w.put_f32(f);
}

Matrix<float> get_matrix(Reader& r, std::size_t rows, std::size_t cols, const char* what) {
    const auto at = r.offset();
    const auto got_rows = r.get<std::uint64_t>(what);
    const auto got_cols = r.get<std::uint64_t>(what);
    if (got_rows != rows || got_cols != cols)
        throw CheckpointError(std::string(what) + " shape does not match the config", at);
    Matrix<float> m(rows, cols);
    for (auto& f : m.data) f = r.get_f32(what);
    return m;
}

std::vector<float> get_vector(Reader& r, std::size_t size, const char* what) {
    const auto at = r.offset();
    if (r.get<std::uint64_t>(what) != size) throw CheckpointError(std::string(what) + " length mismatch", at);
    std::vector<float> v(size);
    for (auto& f : v) f = r.get_f32(what);
    return v;
}

void put_table(Writer& w, const EmbeddingTable& t) {
    w.put<std::uint64_t>(t.size());
    for (const auto& [id, row] : t.rows()) {
        w.put<std::uint64_t>(id);
        for (float f : row) w.put_f32(f);
    }
}

void get_table(Reader& r, EmbeddingTable& t) {
    const auto at = r.offset();
    const auto count = r.get<std::uint64_t>("table size");
    if (t.capacity() != 0 && count > t.capacity()) throw CheckpointError("table exceeds its capacity", at);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto id = r.get<std::uint64_t>("embedding id");
        std::vector<float> row(t.dim());
        for (auto& f : row) f = r.get_f32("embedding value");
        t.set_row(id, std::move(row));
    }
}

void put_ring(Writer& w, const UserHistory& h) {
    w.put<std::uint64_t>(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
        w.put<std::uint64_t>(h[i].item_id);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(h[i].label));
        w.put<std::uint64_t>(h[i].timestamp);
    }
}

UserHistory get_ring(Reader& r, std::size_t capacity) {
    const auto at = r.offset();
    const auto count = r.get<std::uint64_t>("history size");
    if (count > capacity) throw CheckpointError("history exceeds its capacity", at);
    UserHistory h(capacity);
    for (std::uint64_t i = 0; i < count; ++i) {
        HistoryItem item;
        item.item_id = r.get<std::uint64_t>("history item");
        item.label = r.get<std::uint8_t>("history label");
        item.timestamp = r.get<std::uint64_t>("history timestamp");
        h.push(item);
    }
    return h;
}

}  // namespace

void MarmEngine::write_checkpoint(std::ostream& out) const {
    Writer w(out);
    w.put_bytes(kCheckpointMagic, 8);
    w.put<std::uint32_t>(kCheckpointVersion);
    const auto& c = config_;
    for (std::uint64_t v : {c.L, c.n, c.d, c.F, c.d_ff, c.K}) w.put<std::uint64_t>(v);
    w.put_f64(c.learning_rate);
    w.put_f64(c.embedding_learning_rate);
    w.put_f64(c.grad_clip);
    for (std::uint64_t v : {c.embedding_table_capacity, c.n_retain, c.history_capacity}) w.put<std::uint64_t>(v);
    w.put<std::uint64_t>(c.seed);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(c.mode));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(c.filter));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(c.optimizer));
    w.put<std::uint64_t>(step_count_);

    for (const auto& layer : params_.layers) {
        put_matrix(w, layer.w_query);
        put_matrix(w, layer.key_input);
        put_matrix(w, layer.ffn_w1);
        put_vector(w, layer.ffn_b1);
        put_matrix(w, layer.ffn_w2);
        put_vector(w, layer.ffn_b2);
    }
    put_vector(w, params_.head_w);
    w.put_f32(params_.head_b);

    put_table(w, items_);
    put_table(w, users_);

    if (c.optimizer == Optimizer::adagrad) {
        for (auto f : accum_.fields())
            for (float x : f) w.put_f32(x);
        w.put<std::uint64_t>(item_accum_.size());
        for (const auto& [id, row] : item_accum_) {
            w.put<std::uint64_t>(id);
            for (float x : row) w.put_f32(x);
        }
    }

    const auto users = history_.users();
    w.put<std::uint64_t>(users.size());
    for (auto u : users) {
        const auto& state = history_.raw().at(u);
        w.put<std::uint64_t>(u);
        w.put<std::uint64_t>(state.last_timestamp);
        put_ring(w, state.all);
        put_ring(w, state.long_view);
    }
    if (!out) throw std::runtime_error("failed writing checkpoint");
}

MarmEngine MarmEngine::read_checkpoint(std::istream& in, std::shared_ptr<const CacheStore> shared) {
    Reader r(in);
    for (std::size_t i = 0; i < 8; ++i) {
        const auto at = r.offset();
        if (static_cast<char>(r.get<std::uint8_t>("magic")) != kCheckpointMagic[i])
            throw CheckpointError("bad checkpoint magic", at);
    }
    const auto version_at = r.offset();
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version), version_at);

    const auto config_at = r.offset();
    ModelConfig c;
    c.L = r.get<std::uint64_t>("L");
    c.n = r.get<std::uint64_t>("n");
    c.d = r.get<std::uint64_t>("d");
    c.F = r.get<std::uint64_t>("F");
    c.d_ff = r.get<std::uint64_t>("d_ff");
    c.K = r.get<std::uint64_t>("K");
    c.learning_rate = r.get_f64("learning_rate");
    c.embedding_learning_rate = r.get_f64("embedding_learning_rate");
    c.grad_clip = r.get_f64("grad_clip");
    c.embedding_table_capacity = r.get<std::uint64_t>("embedding_table_capacity");
    c.n_retain = r.get<std::uint64_t>("n_retain");
    c.history_capacity = r.get<std::uint64_t>("history_capacity");
    c.seed = r.get<std::uint64_t>("seed");
    const auto mode = r.get<std::uint8_t>("mode");
    const auto filter = r.get<std::uint8_t>("filter");
    const auto optimizer = r.get<std::uint8_t>("optimizer");
    if (mode > 1 || filter > 1 || optimizer > 1)
        throw CheckpointError("bad mode, filter or optimizer", r.offset() - 3);
    c.optimizer = static_cast<Optimizer>(optimizer);
    c.mode = static_cast<EngineMode>(mode);
    c.filter = static_cast<SequenceFilter>(filter);
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("invalid config: ") + e.what(), config_at);
    }

    MarmEngine engine = shared ? MarmEngine(c, std::move(shared)) : MarmEngine(c);
    engine.step_count_ = r.get<std::uint64_t>("step_count");

    auto shape = NetworkParams<float>::zeros(c);
    for (auto& layer : shape.layers) {
        layer.w_query = get_matrix(r, layer.w_query.rows, layer.w_query.cols, "w_query");
        layer.key_input = get_matrix(r, layer.key_input.rows, layer.key_input.cols, "key_input");
        layer.ffn_w1 = get_matrix(r, layer.ffn_w1.rows, layer.ffn_w1.cols, "ffn_w1");
        layer.ffn_b1 = get_vector(r, layer.ffn_b1.size(), "ffn_b1");
        layer.ffn_w2 = get_matrix(r, layer.ffn_w2.rows, layer.ffn_w2.cols, "ffn_w2");
        layer.ffn_b2 = get_vector(r, layer.ffn_b2.size(), "ffn_b2");
    }
    shape.head_w = get_vector(r, c.d, "head_w");
    shape.head_b = r.get_f32("head_b");
    engine.params_ = std::move(shape);

    get_table(r, engine.items_);
    get_table(r, engine.users_);

    if (c.optimizer == Optimizer::adagrad) {
        for (auto f : engine.accum_.fields())
            for (auto& x : f) x = r.get_f32("adagrad state");
        const auto count = r.get<std::uint64_t>("adagrad rows");
        for (std::uint64_t i = 0; i < count; ++i) {
            const auto id = r.get<std::uint64_t>("adagrad row id");
            std::vector<float> row(c.F);
            for (auto& x : row) x = r.get_f32("adagrad row");
            engine.item_accum_.insert_or_assign(id, std::move(row));
        }
    }

    const auto user_count = r.get<std::uint64_t>("user count");
    for (std::uint64_t i = 0; i < user_count; ++i) {
        const auto user = r.get<std::uint64_t>("user id");
        HistoryStore::PerUser state{UserHistory(c.history_cap()), UserHistory(c.history_cap()), 0};
        state.last_timestamp = r.get<std::uint64_t>("last timestamp");
        state.all = get_ring(r, c.history_cap());
        state.long_view = get_ring(r, c.history_cap());
        engine.history_.restore_user(user, std::move(state));
    }
    if (!r.at_end()) throw CheckpointError("trailing bytes", r.offset());
    return engine;
}

void MarmEngine::checkpoint(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_checkpoint(out);
}

MarmEngine MarmEngine::restore(const std::filesystem::path& path, std::shared_ptr<const CacheStore> shared) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return read_checkpoint(in, std::move(shared));
}

std::string MarmEngine::state_bytes() const {
    std::ostringstream out(std::ios::binary);
    write_checkpoint(out);
    cache_->write(out);
    return out.str();
}

}  // namespace marm
