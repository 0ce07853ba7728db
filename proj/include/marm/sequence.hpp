#pragma once

// Event ingestion, per-user exposure histories and the synthetic stream.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "marm/config.hpp"
#include "marm/random.hpp"

namespace marm {

struct EventRecord {
    std::uint64_t timestamp = 0;
    std::uint64_t user_id = 0;
    std::uint64_t item_id = 0;
    int label = 0;
    int item_cluster = -1;  // synthetic ground truth, never read by the model

    bool operator==(const EventRecord&) const = default;
};

struct HistoryItem {
    std::uint64_t item_id = 0;
    int label = 0;
    std::uint64_t timestamp = 0;

    bool operator==(const HistoryItem&) const = default;
};

class OrderingError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// Fixed-capacity ring, chronological.
class UserHistory {
  public:
    explicit UserHistory(std::size_t capacity = 1);

    void push(const HistoryItem& item);
    std::size_t size() const { return size_; }
    std::size_t capacity() const { return buf_.size(); }
    // i = 0 is the oldest retained item.
    const HistoryItem& operator[](std::size_t i) const;
    // The newest min(n, size) items, oldest first.
    std::vector<HistoryItem> tail(std::size_t n) const;

    bool operator==(const UserHistory& o) const { return tail(size_) == o.tail(o.size_) && capacity() == o.capacity(); }

  private:
    std::vector<HistoryItem> buf_;
    std::size_t head_ = 0;  // next write position
    std::size_t size_ = 0;
};

// All consumed events per user. Keeps a second ring of label-1 items so the
// filtered sequence is as long as the unfiltered one.
class HistoryStore {
  public:
    explicit HistoryStore(std::size_t capacity);

    std::size_t capacity() const { return capacity_; }

    // Throws OrderingError unless event.timestamp exceeds the user's last one.
    void check_order(const EventRecord& event) const;
    // Records a consumed event. Checks the order first.
    void append(const EventRecord& event);

    std::vector<HistoryItem> exposure_events(std::uint64_t user_id, std::size_t n,
                                             SequenceFilter filter) const;
    std::vector<std::uint64_t> exposure_seq(std::uint64_t user_id, std::size_t n,
                                            SequenceFilter filter) const;

    std::optional<std::uint64_t> last_timestamp(std::uint64_t user_id) const;
    std::size_t user_count() const { return users_.size(); }
    std::vector<std::uint64_t> users() const;  // sorted

    struct PerUser {
        UserHistory all;
        UserHistory long_view;
        std::uint64_t last_timestamp = 0;
        bool operator==(const PerUser&) const = default;
    };
    const std::unordered_map<std::uint64_t, PerUser>& raw() const { return users_; }
    void restore_user(std::uint64_t user_id, PerUser state);

    bool operator==(const HistoryStore&) const = default;

  private:
    std::size_t capacity_;
    std::unordered_map<std::uint64_t, PerUser> users_;
};

// Hidden-Markov stream. Each user sits in an interest state (one per item
// cluster) and, independently, in an engaged or idle mood. Exposures come
// from the state's cluster with probability exposure_bias, otherwise from a
// uniformly drawn cluster. The first core_fraction of every cluster's items
// are its signature items; an in-state exposure is a signature item with
// probability engaged_core_prob (engaged) or idle_core_prob (idle), otherwise
// uniform over the cluster. A click (label 1) has probability
//   base_rate + gap * match * (engaged ? 1 : 1 - signature_weight)
// where match says the item's cluster is the current state. So a click is
// likely when the target matches the state and the recent in-state
// exposures carry the signature.
struct SynthConfig {
    std::size_t num_users = 500;
    std::size_t num_clusters = 4;
    std::size_t items_per_cluster = 100;
    std::size_t num_events = 200000;
    double stickiness = 0.995;  // used when transition is empty
    std::vector<std::vector<double>> transition;  // optional explicit state matrix
    double exposure_bias = 0.5;
    double base_rate = 0.1;
    double gap = 0.5;
    double signature_weight = 0.8;
    double core_fraction = 0.25;
    double engaged_core_prob = 0.9;
    double idle_core_prob = 0.1;
    double mood_switch = 0.005;  // per-event probability of flipping engaged/idle
    // Never show a user the same item twice. Cache keys are (user, item,
    // depth), so a repeat would hit the frozen value of its first exposure.
    bool unique_items_per_user = false;

    // Throws std::invalid_argument on the first bad field.
    void validate() const;
    std::size_t num_items() const { return num_clusters * items_per_cluster; }
    std::size_t core_size() const;
};

class SynthStream {
  public:
    SynthStream(SynthConfig config, std::uint64_t seed);

    // nullopt once num_events have been produced.
    std::optional<EventRecord> next();
    const SynthConfig& config() const { return config_; }
    // Current hidden state and mood of a user, for diagnostics.
    std::size_t state_of(std::uint64_t user_id) const;
    bool engaged(std::uint64_t user_id) const;
    int cluster_of(std::uint64_t item_id) const;
    bool is_signature_item(std::uint64_t item_id) const;

  private:
    struct UserState {
        std::size_t state = 0;
        bool engaged = false;
        std::unordered_set<std::uint64_t> seen;
    };

    std::uint64_t draw_item(UserState& u, std::size_t cluster, bool core);

    SynthConfig config_;
    Rng rng_;
    std::vector<UserState> users_;
    std::uint64_t produced_ = 0;
};

std::vector<EventRecord> synth_stream(const SynthConfig& config, std::uint64_t seed);

// Event log: one `timestamp,user_id,item_id,label` line per event.
void write_events(std::ostream& out, const std::vector<EventRecord>& events);
// Throws std::invalid_argument naming the line on malformed input or
// non-increasing timestamps.
std::vector<EventRecord> read_events(std::istream& in);

}  // namespace marm
