#include "marm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

namespace marm {

std::optional<double> auc(std::span<const ScoredLabel> pairs) {
    std::size_t pos = 0;
    for (const auto& p : pairs) pos += p.label == 1 ? 1 : 0;
    const std::size_t neg = pairs.size() - pos;
    if (pos == 0 || neg == 0) return std::nullopt;

    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return pairs[a].score < pairs[b].score; });

    // Ranks are 1-based; tied groups share the mean rank. Twice the rank keeps it integral.
    std::uint64_t twice_rank_sum = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && pairs[order[j]].score == pairs[order[i]].score) ++j;
        const std::uint64_t twice_mean = (i + 1) + j;  // 2 * (first + last) / 2
        for (std::size_t k = i; k < j; ++k)
            if (pairs[order[k]].label == 1) twice_rank_sum += twice_mean;
        i = j;
    }
    const double u = static_cast<double>(twice_rank_sum) / 2.0 -
                     static_cast<double>(pos) * static_cast<double>(pos + 1) / 2.0;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

void EvalBuffer::add(std::uint64_t user_id, double prediction, int label) {
    if (!(prediction >= 0.0 && prediction <= 1.0))
        throw std::invalid_argument("prediction outside [0, 1]: " + std::to_string(prediction));
    if (label != 0 && label != 1) throw std::invalid_argument("label must be 0 or 1");
    records_.push_back({user_id, prediction, label});
}

std::span<const EvalRecord> EvalBuffer::slice(std::size_t begin, std::size_t end) const {
    end = std::min(end, records_.size());
    begin = std::min(begin, end);
    return std::span<const EvalRecord>(records_).subspan(begin, end - begin);
}

GaucResult gauc_detail(std::span<const EvalRecord> records) {
    std::map<std::uint64_t, std::vector<ScoredLabel>> per_user;
    for (const auto& r : records) per_user[r.user_id].push_back({r.prediction, r.label});
    GaucResult out;
    double weighted = 0.0, total = 0.0;
    for (const auto& [user, pairs] : per_user) {
        const auto a = auc(pairs);
        if (!a) {
            ++out.users_skipped;
            continue;
        }
        ++out.users_used;
        weighted += static_cast<double>(pairs.size()) * *a;
        total += static_cast<double>(pairs.size());
    }
    if (out.users_used == 0) throw GaucUndefinedError("no user has both labels in the window");
    out.gauc = weighted / total;
    return out;
}

double gauc(std::span<const EvalRecord> records) { return gauc_detail(records).gauc; }
double gauc(const EvalBuffer& buffer) { return gauc(buffer.records()); }

double mean_log_loss(std::span<const EvalRecord> records) {
    if (records.empty()) return 0.0;
    constexpr double eps = 1e-12;
    double sum = 0.0;
    for (const auto& r : records) {
        const double p = std::clamp(r.prediction, eps, 1.0 - eps);
        sum -= r.label == 1 ? std::log(p) : std::log(1.0 - p);
    }
    return sum / static_cast<double>(records.size());
}

double windowed_gauc(const EvalBuffer& buffer, std::size_t window, std::size_t sub_windows) {
    if (sub_windows == 0) throw std::invalid_argument("sub_windows must be >= 1");
    const std::size_t size = buffer.size();
    if (window == 0 || window > size) window = size;
    const std::size_t start = size - window;
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t e = 0; e < sub_windows; ++e) {
        const std::size_t b = start + window * e / sub_windows;
        const std::size_t f = start + window * (e + 1) / sub_windows;
        try {
            sum += gauc(buffer.slice(b, f));
            ++defined;
        } catch (const GaucUndefinedError&) {
        }
    }
    if (defined == 0) throw GaucUndefinedError("no sub-window has a defined GAUC");
    return sum / static_cast<double>(defined);
}

double windowed_loss(const EvalBuffer& buffer, std::size_t window) {
    const std::size_t size = buffer.size();
    if (window == 0 || window > size) window = size;
    return mean_log_loss(buffer.slice(size - window, size));
}

std::vector<CurvePoint> gauc_curve(const EvalBuffer& buffer, std::size_t window) {
    if (window == 0) throw std::invalid_argument("curve window must be >= 1");
    std::vector<CurvePoint> out;
    for (std::size_t b = 0; b + window <= buffer.size(); b += window) {
        CurvePoint p;
        p.end_event = b + window;
        const auto s = buffer.slice(b, b + window);
        try {
            p.gauc = gauc(s);
        } catch (const GaucUndefinedError&) {
        }
        p.loss = mean_log_loss(s);
        out.push_back(p);
    }
    return out;
}

}  // namespace marm
