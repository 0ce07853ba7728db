#include "marm/cache_store.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <deque>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "binary_io.hpp"
#include "marm/random.hpp"

namespace marm {

std::size_t CacheKeyHash::operator()(const CacheKey& k) const noexcept {
    return static_cast<std::size_t>(
        splitmix64(k.user_id ^ splitmix64(k.item_id ^ (std::uint64_t{k.depth} << 48))));
}

CacheFormatError::CacheFormatError(const std::string& what, std::uint64_t offset)
    : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}

std::vector<CacheKey> make_keys(std::uint64_t user_id, std::span<const std::uint64_t> item_ids,
                                std::uint16_t depth) {
    if (depth == 0) throw std::invalid_argument("cache depth must be >= 1");
    std::vector<CacheKey> keys;
    keys.reserve(item_ids.size());
    for (auto item : item_ids) keys.push_back({user_id, item, depth});
    return keys;
}

namespace {

constexpr std::size_t kShards = 16;
constexpr char kMagic[4] = {'M', 'A', 'R', 'M'};

struct WindowKey {
    std::uint64_t user_id;
    std::uint16_t depth;
    bool operator==(const WindowKey&) const = default;
};

struct WindowKeyHash {
    std::size_t operator()(const WindowKey& k) const noexcept {
        return static_cast<std::size_t>(splitmix64(k.user_id ^ (std::uint64_t{k.depth} << 56)));
    }
};

struct Slot {
    std::uint64_t written_at;
    std::vector<float> value;
};

struct Shard {
    mutable std::shared_mutex mutex;
    std::unordered_map<CacheKey, Slot, CacheKeyHash> slots;
    // Item ids of each window, oldest first; written_at is increasing along it.
    std::unordered_map<WindowKey, std::deque<std::uint64_t>, WindowKeyHash> windows;
    std::unordered_set<CacheKey, CacheKeyHash> tombstones;
};

std::size_t shard_of(std::uint64_t user_id) { return splitmix64(user_id) % kShards; }

using Writer = detail::Writer;
using Reader = detail::Reader<CacheFormatError>;

struct Header {
    std::uint16_t version = 0;
    std::uint16_t d = 0;
    std::uint32_t n_retain = 0;
    std::uint16_t L = 0;
    CacheStats counters;
};

Header read_header(Reader& r) {
    for (std::size_t i = 0; i < 4; ++i) {
        const auto offset = r.offset();
        if (static_cast<char>(r.get<std::uint8_t>("magic")) != kMagic[i])
            throw CacheFormatError("bad magic", offset);
    }
    Header h;
    const auto version_offset = r.offset();
    h.version = r.get<std::uint16_t>("version");
    if (h.version != CacheStore::kFormatVersion)
        throw CacheFormatError("unsupported format version " + std::to_string(h.version), version_offset);
    const auto d_offset = r.offset();
    h.d = r.get<std::uint16_t>("d");
    if (h.d == 0) throw CacheFormatError("zero vector width", d_offset);
    h.n_retain = r.get<std::uint32_t>("n_retain");
    if (h.n_retain == 0) throw CacheFormatError("zero retention window", d_offset + 2);
    h.L = r.get<std::uint16_t>("L");
    h.counters.hits = r.get<std::uint64_t>("hits");
    h.counters.misses = r.get<std::uint64_t>("misses");
    h.counters.evictions = r.get<std::uint64_t>("evictions");
    h.counters.rejected = r.get<std::uint64_t>("rejected");
    h.counters.accepted = r.get<std::uint64_t>("accepted");
    return h;
}

}  // namespace

struct CacheStore::Impl {
    std::size_t d;
    std::size_t n_retain;
    std::size_t depth_count;
    std::array<Shard, kShards> shards;
    std::atomic<std::uint64_t> entries{0};
    std::atomic<std::uint64_t> hits{0};
    std::atomic<std::uint64_t> misses{0};
    std::atomic<std::uint64_t> evictions{0};
    std::atomic<std::uint64_t> rejected{0};
    std::atomic<std::uint64_t> accepted{0};

    Impl(std::size_t d_, std::size_t retain, std::size_t L) : d(d_), n_retain(retain), depth_count(L) {}

    CachedRow<float> fetch(std::span<const CacheKey> keys, std::size_t* hit_count) const {
        CachedRow<float> row;
        row.values = Matrix<float>(keys.size(), d);
        row.hit.assign(keys.size(), 0);
        std::size_t hits_seen = 0;
        for (std::size_t i = 0; i < keys.size(); ++i) {
            const Shard& shard = shards[shard_of(keys[i].user_id)];
            std::shared_lock lock(shard.mutex);
            auto it = shard.slots.find(keys[i]);
            if (it == shard.slots.end()) continue;
            std::copy(it->second.value.begin(), it->second.value.end(), row.values.row(i).begin());
            row.hit[i] = 1;
            ++hits_seen;
        }
        if (hit_count) *hit_count = hits_seen;
        return row;
    }

    // Caller holds the shard's exclusive lock. Returns true when accepted.
    bool insert(Shard& shard, const CacheEntry& e) {
        if (shard.slots.contains(e.key) || shard.tombstones.contains(e.key)) return false;
        shard.slots.emplace(e.key, Slot{e.written_at, e.value});
        auto& window = shard.windows[WindowKey{e.key.user_id, e.key.depth}];
        window.push_back(e.key.item_id);
        entries.fetch_add(1, std::memory_order_relaxed);
        while (window.size() > n_retain) {
            const CacheKey old{e.key.user_id, window.front(), e.key.depth};
            window.pop_front();
            shard.slots.erase(old);
            shard.tombstones.insert(old);
            entries.fetch_sub(1, std::memory_order_relaxed);
            evictions.fetch_add(1, std::memory_order_relaxed);
        }
        return true;
    }

    std::uint64_t newest(const Shard& shard, const CacheKey& key) const {
        auto it = shard.windows.find(WindowKey{key.user_id, key.depth});
        if (it == shard.windows.end() || it->second.empty()) return 0;
        return shard.slots.at(CacheKey{key.user_id, it->second.back(), key.depth}).written_at;
    }
};

CacheStore::CacheStore(std::size_t d, std::size_t n_retain, std::size_t depth_count)
    : impl_(std::make_unique<Impl>(d, n_retain, depth_count)) {
    if (d == 0 || d > 0xffff) throw std::invalid_argument("cache width must be in [1, 65535]");
    if (n_retain == 0 || n_retain > 0xffffffffULL)
        throw std::invalid_argument("cache retention must be in [1, 2^32)");
    if (depth_count > 0xffff) throw std::invalid_argument("cache depth must fit in 16 bits");
}

CacheStore::~CacheStore() = default;
CacheStore::CacheStore(CacheStore&&) noexcept = default;
CacheStore& CacheStore::operator=(CacheStore&&) noexcept = default;

std::size_t CacheStore::dim() const { return impl_->d; }
std::size_t CacheStore::n_retain() const { return impl_->n_retain; }
std::size_t CacheStore::depth_count() const { return impl_->depth_count; }

CachedRow<float> CacheStore::lookup_batch(std::span<const CacheKey> keys) {
    std::size_t hit_count = 0;
    auto row = impl_->fetch(keys, &hit_count);
    impl_->hits.fetch_add(hit_count, std::memory_order_relaxed);
    impl_->misses.fetch_add(keys.size() - hit_count, std::memory_order_relaxed);
    return row;
}

CachedRow<float> CacheStore::peek_batch(std::span<const CacheKey> keys) const {
    return impl_->fetch(keys, nullptr);
}

std::optional<std::vector<float>> CacheStore::peek(const CacheKey& key) const {
    const Shard& shard = impl_->shards[shard_of(key.user_id)];
    std::shared_lock lock(shard.mutex);
    auto it = shard.slots.find(key);
    if (it == shard.slots.end()) return std::nullopt;
    return it->second.value;
}

std::size_t CacheStore::save_batch(std::span<const CacheEntry> entries) {
    // Validate everything first so a bad batch leaves the store untouched.
    std::map<std::pair<std::uint64_t, std::uint16_t>, std::uint64_t> last_seen;
    for (const auto& e : entries) {
        if (e.value.size() != impl_->d) {
            throw DimensionError("cache value width " + std::to_string(e.value.size()) +
                                 " does not match store width " + std::to_string(impl_->d));
        }
        if (e.key.depth == 0 || e.key.depth > impl_->depth_count) {
            throw std::invalid_argument("cache depth " + std::to_string(e.key.depth) +
                                        " outside [1, " + std::to_string(impl_->depth_count) + "]");
        }
        const auto wk = std::make_pair(e.key.user_id, e.key.depth);
        auto it = last_seen.find(wk);
        std::uint64_t floor = 0;
        bool have_floor = false;
        if (it != last_seen.end()) {
            floor = it->second;
            have_floor = true;
        } else {
            const Shard& shard = impl_->shards[shard_of(e.key.user_id)];
            std::shared_lock lock(shard.mutex);
            auto w = shard.windows.find(WindowKey{e.key.user_id, e.key.depth});
            if (w != shard.windows.end() && !w->second.empty()) {
                floor = impl_->newest(shard, e.key);
                have_floor = true;
            }
        }
        if (have_floor && e.written_at <= floor) {
            throw std::invalid_argument("written_at " + std::to_string(e.written_at) +
                                        " does not advance the window of user " +
                                        std::to_string(e.key.user_id) + " depth " +
                                        std::to_string(e.key.depth));
        }
        last_seen[wk] = e.written_at;
    }

    std::size_t accepted = 0;
    for (const auto& e : entries) {
        Shard& shard = impl_->shards[shard_of(e.key.user_id)];
        std::unique_lock lock(shard.mutex);
        if (impl_->insert(shard, e)) {
            ++accepted;
        } else {
            impl_->rejected.fetch_add(1, std::memory_order_relaxed);
        }
    }
    impl_->accepted.fetch_add(accepted, std::memory_order_relaxed);
    return accepted;
}

CacheStats CacheStore::stats() const {
    CacheStats s;
    s.entries = impl_->entries.load();
    s.element_count = s.entries * impl_->d;
    s.hits = impl_->hits.load();
    s.misses = impl_->misses.load();
    s.evictions = impl_->evictions.load();
    s.rejected = impl_->rejected.load();
    s.accepted = impl_->accepted.load();
    return s;
}

std::vector<CacheEntry> CacheStore::entries() const {
    std::vector<CacheEntry> out;
    for (const auto& shard : impl_->shards) {
        std::shared_lock lock(shard.mutex);
        for (const auto& [key, slot] : shard.slots) out.push_back({key, slot.value, slot.written_at});
    }
    std::sort(out.begin(), out.end(), [](const CacheEntry& a, const CacheEntry& b) {
        if (a.written_at != b.written_at) return a.written_at < b.written_at;
        return a.key < b.key;
    });
    return out;
}

std::vector<CacheEntry> CacheStore::window(std::uint64_t user_id, std::uint16_t depth) const {
    const Shard& shard = impl_->shards[shard_of(user_id)];
    std::shared_lock lock(shard.mutex);
    std::vector<CacheEntry> out;
    auto it = shard.windows.find(WindowKey{user_id, depth});
    if (it == shard.windows.end()) return out;
    for (auto item : it->second) {
        const CacheKey key{user_id, item, depth};
        const Slot& slot = shard.slots.at(key);
        out.push_back({key, slot.value, slot.written_at});
    }
    return out;
}

std::vector<CacheKey> CacheStore::tombstones() const {
    std::vector<CacheKey> out;
    for (const auto& shard : impl_->shards) {
        std::shared_lock lock(shard.mutex);
        out.insert(out.end(), shard.tombstones.begin(), shard.tombstones.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

void CacheStore::write(std::ostream& out) const {
    Writer w(out);
    w.put_bytes(kMagic, 4);
    w.put<std::uint16_t>(kFormatVersion);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(impl_->d));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(impl_->n_retain));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(impl_->depth_count));
    const CacheStats s = stats();
    w.put<std::uint64_t>(s.hits);
    w.put<std::uint64_t>(s.misses);
    w.put<std::uint64_t>(s.evictions);
    w.put<std::uint64_t>(s.rejected);
    w.put<std::uint64_t>(s.accepted);
    const auto all = entries();
    w.put<std::uint64_t>(all.size());
    for (const auto& e : all) {
        w.put<std::uint64_t>(e.key.user_id);
        w.put<std::uint64_t>(e.key.item_id);
        w.put<std::uint16_t>(e.key.depth);
        w.put<std::uint64_t>(e.written_at);
        for (float f : e.value) w.put_f32(f);
    }
    const auto dead = tombstones();
    w.put<std::uint64_t>(dead.size());
    for (const auto& k : dead) {
        w.put<std::uint64_t>(k.user_id);
        w.put<std::uint64_t>(k.item_id);
        w.put<std::uint16_t>(k.depth);
    }
    if (!out) throw std::runtime_error("failed writing cache stream");
}

CacheStore CacheStore::read(std::istream& in) {
    Reader r(in);
    const Header h = read_header(r);
    CacheStore store(h.d, h.n_retain, h.L);
    Impl& impl = *store.impl_;

    const auto count = r.get<std::uint64_t>("record count");
    std::uint64_t prev_written = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto record_offset = r.offset();
        CacheEntry e;
        e.key.user_id = r.get<std::uint64_t>("user_id");
        e.key.item_id = r.get<std::uint64_t>("item_id");
        e.key.depth = r.get<std::uint16_t>("depth");
        e.written_at = r.get<std::uint64_t>("written_at");
        e.value.resize(h.d);
        for (auto& f : e.value) f = r.get_f32("value");
        if (e.key.depth == 0 || e.key.depth > h.L)
            throw CacheFormatError("record depth out of range", record_offset + 16);
        if (i > 0 && e.written_at < prev_written)
            throw CacheFormatError("records out of order", record_offset + 18);
        prev_written = e.written_at;
        Shard& shard = impl.shards[shard_of(e.key.user_id)];
        if (shard.slots.contains(e.key)) throw CacheFormatError("duplicate record", record_offset);
        const auto evictions_before = impl.evictions.load();
        impl.insert(shard, e);
        if (impl.evictions.load() != evictions_before)
            throw CacheFormatError("record overflows its retention window", record_offset);
    }
    const auto dead = r.get<std::uint64_t>("tombstone count");
    for (std::uint64_t i = 0; i < dead; ++i) {
        CacheKey k;
        k.user_id = r.get<std::uint64_t>("tombstone user_id");
        k.item_id = r.get<std::uint64_t>("tombstone item_id");
        k.depth = r.get<std::uint16_t>("tombstone depth");
        impl.shards[shard_of(k.user_id)].tombstones.insert(k);
    }
    if (!r.at_end()) throw CacheFormatError("trailing bytes", r.offset());

    impl.hits = h.counters.hits;
    impl.misses = h.counters.misses;
    impl.evictions = h.counters.evictions;
    impl.rejected = h.counters.rejected;
    impl.accepted = h.counters.accepted;
    if (impl.accepted.load() != impl.entries.load() + impl.evictions.load())
        throw CacheFormatError("counters inconsistent with records", 14);
    return store;
}

void CacheStore::persist(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write(out);
}

CacheStore CacheStore::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return read(in);
}

CacheStore CacheStore::clone() const {
    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    write(buf);
    buf.seekg(0);
    return read(buf);
}

CacheFileSummary inspect_cache_file(const std::filesystem::path& path) {
    const CacheStore store = CacheStore::load(path);
    CacheFileSummary s;
    s.version = CacheStore::kFormatVersion;
    s.d = static_cast<std::uint16_t>(store.dim());
    s.n_retain = static_cast<std::uint32_t>(store.n_retain());
    s.L = static_cast<std::uint16_t>(store.depth_count());
    s.stats = store.stats();
    s.tombstones = store.tombstones().size();
    std::set<std::uint64_t> users;
    for (const auto& e : store.entries()) users.insert(e.key.user_id);
    s.users = users.size();
    return s;
}

}  // namespace marm
