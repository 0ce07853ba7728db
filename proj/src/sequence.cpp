#include "marm/sequence.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <string_view>

namespace marm {

UserHistory::UserHistory(std::size_t capacity) : buf_(capacity) {
    if (capacity == 0) throw std::invalid_argument("history capacity must be >= 1");
}

void UserHistory::push(const HistoryItem& item) {
    buf_[head_] = item;
    head_ = (head_ + 1) % buf_.size();
    if (size_ < buf_.size()) ++size_;
}

const HistoryItem& UserHistory::operator[](std::size_t i) const {
    const std::size_t start = (head_ + buf_.size() - size_) % buf_.size();
    return buf_[(start + i) % buf_.size()];
}

std::vector<HistoryItem> UserHistory::tail(std::size_t n) const {
    const std::size_t m = std::min(n, size_);
    std::vector<HistoryItem> out;
    out.reserve(m);
    for (std::size_t i = size_ - m; i < size_; ++i) out.push_back((*this)[i]);
    return out;
}

HistoryStore::HistoryStore(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("history capacity must be >= 1");
}

void HistoryStore::check_order(const EventRecord& event) const {
    auto it = users_.find(event.user_id);
    if (it != users_.end() && event.timestamp <= it->second.last_timestamp) {
        throw OrderingError("event at timestamp " + std::to_string(event.timestamp) + " for user " +
                            std::to_string(event.user_id) + " is not after " +
                            std::to_string(it->second.last_timestamp));
    }
}

void HistoryStore::append(const EventRecord& event) {
    check_order(event);
    auto it = users_.find(event.user_id);
    if (it == users_.end()) {
        it = users_.emplace(event.user_id, PerUser{UserHistory(capacity_), UserHistory(capacity_), 0}).first;
    }
    const HistoryItem item{event.item_id, event.label, event.timestamp};
    it->second.all.push(item);
    if (event.label == 1) it->second.long_view.push(item);
    it->second.last_timestamp = event.timestamp;
}

std::vector<HistoryItem> HistoryStore::exposure_events(std::uint64_t user_id, std::size_t n,
                                                       SequenceFilter filter) const {
    if (n == 0) throw std::invalid_argument("exposure sequence length must be >= 1");
    auto it = users_.find(user_id);
    if (it == users_.end()) return {};
    const auto& ring = filter == SequenceFilter::all ? it->second.all : it->second.long_view;
    return ring.tail(n);
}

std::vector<std::uint64_t> HistoryStore::exposure_seq(std::uint64_t user_id, std::size_t n,
                                                      SequenceFilter filter) const {
    std::vector<std::uint64_t> ids;
    for (const auto& h : exposure_events(user_id, n, filter)) ids.push_back(h.item_id);
    return ids;
}

std::optional<std::uint64_t> HistoryStore::last_timestamp(std::uint64_t user_id) const {
    auto it = users_.find(user_id);
    if (it == users_.end()) return std::nullopt;
    return it->second.last_timestamp;
}

std::vector<std::uint64_t> HistoryStore::users() const {
    std::vector<std::uint64_t> out;
    out.reserve(users_.size());
    for (const auto& [u, _] : users_) out.push_back(u);
    std::sort(out.begin(), out.end());
    return out;
}

void HistoryStore::restore_user(std::uint64_t user_id, PerUser state) {
    if (state.all.capacity() != capacity_ || state.long_view.capacity() != capacity_)
        throw std::invalid_argument("history capacity mismatch on restore");
    users_.insert_or_assign(user_id, std::move(state));
}

void SynthConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("synth config: " + msg); };
    if (num_users == 0) fail("num_users must be >= 1");
    if (num_clusters < 2) fail("num_clusters must be >= 2");
    if (items_per_cluster == 0) fail("items_per_cluster must be >= 1");
    if (!(stickiness >= 0.0 && stickiness <= 1.0)) fail("stickiness must be in [0, 1]");
    if (!(exposure_bias >= 0.0 && exposure_bias <= 1.0)) fail("exposure_bias must be in [0, 1]");
    if (!(base_rate >= 0.0 && gap >= 0.0 && base_rate + gap <= 1.0))
        fail("need base_rate >= 0, gap >= 0 and base_rate + gap <= 1");
    auto prob = [&](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) fail(std::string(name) + " must be in [0, 1]");
    };
    prob(signature_weight, "signature_weight");
    prob(core_fraction, "core_fraction");
    prob(engaged_core_prob, "engaged_core_prob");
    prob(idle_core_prob, "idle_core_prob");
    prob(mood_switch, "mood_switch");
    if (!transition.empty()) {
        if (transition.size() != num_clusters) fail("transition matrix must have num_clusters rows");
        for (std::size_t r = 0; r < transition.size(); ++r) {
            const auto& row = transition[r];
            if (row.size() != num_clusters) fail("transition row " + std::to_string(r) + " has wrong length");
            double sum = 0.0;
            for (double p : row) {
                if (!(p >= 0.0 && std::isfinite(p))) fail("transition row " + std::to_string(r) + " has a bad entry");
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-9) fail("transition row " + std::to_string(r) + " does not sum to 1");
        }
    }
}

std::size_t SynthConfig::core_size() const {
    const auto k = static_cast<std::size_t>(core_fraction * static_cast<double>(items_per_cluster));
    return std::clamp<std::size_t>(k, 1, items_per_cluster);
}

SynthStream::SynthStream(SynthConfig config, std::uint64_t seed)
    : config_(std::move(config)), rng_(mix_seed(seed, 0x73796e7468)) {
    config_.validate();
    users_.resize(config_.num_users);
    for (auto& u : users_) {
        u.state = rng_.below(config_.num_clusters);
        u.engaged = rng_.bernoulli(0.5);
    }
}

std::size_t SynthStream::state_of(std::uint64_t user_id) const { return users_.at(user_id - 1).state; }

bool SynthStream::engaged(std::uint64_t user_id) const { return users_.at(user_id - 1).engaged; }

int SynthStream::cluster_of(std::uint64_t item_id) const {
    if (item_id == 0 || item_id > config_.num_items()) return -1;
    return static_cast<int>((item_id - 1) / config_.items_per_cluster);
}

bool SynthStream::is_signature_item(std::uint64_t item_id) const {
    if (cluster_of(item_id) < 0) return false;
    return (item_id - 1) % config_.items_per_cluster < config_.core_size();
}

std::optional<EventRecord> SynthStream::next() {
    if (produced_ >= config_.num_events) return std::nullopt;
    const std::size_t C = config_.num_clusters;
    const std::uint64_t user_index = rng_.below(config_.num_users);
    UserState& u = users_[user_index];

    // Advance the hidden state and mood.
    if (config_.transition.empty()) {
        if (!rng_.bernoulli(config_.stickiness)) {
            std::size_t next_state = rng_.below(C - 1);
            if (next_state >= u.state) ++next_state;
            u.state = next_state;
        }
    } else {
        const auto& row = config_.transition[u.state];
        double r = rng_.uniform();
        std::size_t s = 0;
        for (; s + 1 < C; ++s) {
            if (r < row[s]) break;
            r -= row[s];
        }
        // Skip zero-probability tail states that float rounding might land on.
        while (row[s] == 0.0 && s > 0) --s;
        u.state = s;
    }
    if (rng_.bernoulli(config_.mood_switch)) u.engaged = !u.engaged;

    const bool in_state = rng_.bernoulli(config_.exposure_bias);
    std::size_t cluster = in_state ? u.state : rng_.below(C);
    const bool core = in_state && rng_.bernoulli(u.engaged ? config_.engaged_core_prob : config_.idle_core_prob);
    const std::uint64_t item = draw_item(u, cluster, core);
    cluster = static_cast<std::size_t>(cluster_of(item));

    double p = config_.base_rate;
    if (cluster == u.state) p += config_.gap * (u.engaged ? 1.0 : 1.0 - config_.signature_weight);
    const int label = rng_.bernoulli(p) ? 1 : 0;

    ++produced_;
    return EventRecord{produced_, user_index + 1, item, label, static_cast<int>(cluster)};
}

std::uint64_t SynthStream::draw_item(UserState& u, std::size_t cluster, bool core) {
    const std::size_t per = config_.items_per_cluster;
    const std::size_t span = core ? config_.core_size() : per;
    auto item_at = [&](std::size_t c, std::size_t j) { return std::uint64_t{1} + c * per + j; };
    if (!config_.unique_items_per_user) return item_at(cluster, rng_.below(span));

    for (int attempt = 0; attempt < 32; ++attempt) {
        const auto item = item_at(cluster, rng_.below(span));
        if (u.seen.insert(item).second) return item;
    }
    // Dense region: scan from a random offset, then spill into the next clusters.
    const std::size_t offset = rng_.below(per);
    for (std::size_t dc = 0; dc < config_.num_clusters; ++dc) {
        const std::size_t c = (cluster + dc) % config_.num_clusters;
        for (std::size_t j = 0; j < per; ++j) {
            const auto item = item_at(c, (offset + j) % per);
            if (u.seen.insert(item).second) return item;
        }
    }
    throw std::runtime_error("synthetic stream ran out of unseen items for a user");
}

std::vector<EventRecord> synth_stream(const SynthConfig& config, std::uint64_t seed) {
    SynthStream stream(config, seed);
    std::vector<EventRecord> out;
    out.reserve(config.num_events);
    while (auto e = stream.next()) out.push_back(*e);
    return out;
}

void write_events(std::ostream& out, const std::vector<EventRecord>& events) {
    for (const auto& e : events)
        out << e.timestamp << ',' << e.user_id << ',' << e.item_id << ',' << e.label << '\n';
}

namespace {

std::uint64_t parse_u64(std::string_view field, std::size_t line_no) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
        throw std::invalid_argument("line " + std::to_string(line_no) + ": bad integer '" +
                                    std::string(field) + "'");
    }
    return v;
}

}  // namespace

std::vector<EventRecord> read_events(std::istream& in) {
    std::vector<EventRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::string_view rest(line);
        std::string_view fields[4];
        for (int f = 0; f < 4; ++f) {
            const auto comma = rest.find(',');
            if ((f < 3) != (comma != std::string_view::npos)) {
                throw std::invalid_argument("line " + std::to_string(line_no) + ": expected 4 fields");
            }
            fields[f] = rest.substr(0, comma);
            if (f < 3) rest.remove_prefix(comma + 1);
        }
        EventRecord e;
        e.timestamp = parse_u64(fields[0], line_no);
        e.user_id = parse_u64(fields[1], line_no);
        e.item_id = parse_u64(fields[2], line_no);
        const auto label = parse_u64(fields[3], line_no);
        if (label > 1) throw std::invalid_argument("line " + std::to_string(line_no) + ": label must be 0 or 1");
        e.label = static_cast<int>(label);
        if (!out.empty() && e.timestamp <= out.back().timestamp) {
            throw std::invalid_argument("line " + std::to_string(line_no) + ": timestamps must strictly increase");
        }
        out.push_back(e);
    }
    return out;
}

}  // namespace marm
