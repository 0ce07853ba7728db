#pragma once

// External memory for per-layer attention outputs, keyed by (user, item, depth).
//
// Policies:
//  - write-once: the first accepted value for a key is final. A later write to
//    the same key is rejected, including after that key has been evicted.
//  - retention: each (user, depth) keeps its n_retain most recent writes;
//    older entries are evicted.
//
// Keys are sharded by user. Readers take a shared lock on one shard, writers an
// exclusive one, so writes for different users can run in parallel. Writes for
// one user must arrive in event order.
//
// On-disk layout, all integers little-endian:
//   "MARM" | version u16 | d u16 | n_retain u32 | L u16
//   hits u64 | misses u64 | evictions u64 | rejected u64 | accepted u64
//   record count u64, then per record
//     user_id u64 | item_id u64 | depth u16 | written_at u64 | d x f32
//   tombstone count u64, then per evicted key
//     user_id u64 | item_id u64 | depth u16
// Records are ordered by (written_at, user_id, item_id, depth).

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "marm/attention.hpp"

namespace marm {

struct CacheKey {
    std::uint64_t user_id = 0;
    std::uint64_t item_id = 0;
    std::uint16_t depth = 0;

    auto operator<=>(const CacheKey&) const = default;
};

struct CacheKeyHash {
    std::size_t operator()(const CacheKey& k) const noexcept;
};

struct CacheEntry {
    CacheKey key;
    std::vector<float> value;
    std::uint64_t written_at = 0;

    bool operator==(const CacheEntry&) const = default;
};

struct CacheStats {
    std::uint64_t entries = 0;
    std::uint64_t element_count = 0;  // entries * d
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
    std::uint64_t evictions = 0;
    std::uint64_t rejected = 0;  // duplicate-key writes
    std::uint64_t accepted = 0;  // first writes; accepted = entries + evictions

    bool operator==(const CacheStats&) const = default;
};

class CacheFormatError : public std::runtime_error {
  public:
    CacheFormatError(const std::string& what, std::uint64_t offset);
    std::uint64_t offset() const { return offset_; }

  private:
    std::uint64_t offset_;
};

// One key per item, order preserved. depth must be >= 1.
std::vector<CacheKey> make_keys(std::uint64_t user_id, std::span<const std::uint64_t> item_ids,
                                std::uint16_t depth);

class CacheStore {
  public:
    static constexpr std::uint16_t kFormatVersion = 1;

    CacheStore(std::size_t d, std::size_t n_retain, std::size_t depth_count);
    ~CacheStore();
    CacheStore(CacheStore&&) noexcept;
    CacheStore& operator=(CacheStore&&) noexcept;

    std::size_t dim() const;
    std::size_t n_retain() const;
    std::size_t depth_count() const;

    // Positional lookup; missed slots are flagged and zero-filled. Counts hits and misses.
    CachedRow<float> lookup_batch(std::span<const CacheKey> keys);
    // Same result without touching the counters.
    CachedRow<float> peek_batch(std::span<const CacheKey> keys) const;
    std::optional<std::vector<float>> peek(const CacheKey& key) const;

    // Returns the number of accepted writes. Throws DimensionError on a width
    // mismatch, std::invalid_argument on a depth outside [1, L] or a written_at
    // that does not advance its (user, depth) window. Validation happens before
    // any write is applied.
    std::size_t save_batch(std::span<const CacheEntry> entries);

    CacheStats stats() const;

    // All live entries in file order.
    std::vector<CacheEntry> entries() const;
    // Live entries of one (user, depth) window, oldest first.
    std::vector<CacheEntry> window(std::uint64_t user_id, std::uint16_t depth) const;
    std::vector<CacheKey> tombstones() const;

    void write(std::ostream& out) const;
    static CacheStore read(std::istream& in);
    void persist(const std::filesystem::path& path) const;
    static CacheStore load(const std::filesystem::path& path);
    CacheStore clone() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Header fields and counters of a cache file, for `cache inspect`.
struct CacheFileSummary {
    std::uint16_t version = 0;
    std::uint16_t d = 0;
    std::uint32_t n_retain = 0;
    std::uint16_t L = 0;
    CacheStats stats;
    std::uint64_t tombstones = 0;
    std::uint64_t users = 0;
};

CacheFileSummary inspect_cache_file(const std::filesystem::path& path);

}  // namespace marm
