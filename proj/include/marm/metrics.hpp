#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace marm {

struct ScoredLabel {
    double score = 0.0;
    int label = 0;
};

// Mann-Whitney statistic P(pos > neg) + P(tie) / 2 via average ranks.
// nullopt when either class is absent.
std::optional<double> auc(std::span<const ScoredLabel> pairs);

class GaucUndefinedError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct EvalRecord {
    std::uint64_t user_id = 0;
    double prediction = 0.0;
    int label = 0;
};

// Predictions in stream order. Windows are counted in events.
class EvalBuffer {
  public:
    // Throws std::invalid_argument for a prediction outside [0, 1] or a non-binary label.
    void add(std::uint64_t user_id, double prediction, int label);
    std::size_t size() const { return records_.size(); }
    std::span<const EvalRecord> records() const { return records_; }
    // Records [begin, end).
    std::span<const EvalRecord> slice(std::size_t begin, std::size_t end) const;

  private:
    std::vector<EvalRecord> records_;
};

struct GaucResult {
    double gauc = 0.0;
    std::size_t users_used = 0;
    std::size_t users_skipped = 0;  // one-class users
};

// Sum over users with a defined AUC of w_u * AUC_u, w_u = logs_u / logs of
// those users. Throws GaucUndefinedError when no user qualifies.
GaucResult gauc_detail(std::span<const EvalRecord> records);
double gauc(std::span<const EvalRecord> records);
double gauc(const EvalBuffer& buffer);

double mean_log_loss(std::span<const EvalRecord> records);

// GAUC over the final `window` events split into `sub_windows` disjoint equal
// parts, averaged over the parts where it is defined. window = 0 means all.
double windowed_gauc(const EvalBuffer& buffer, std::size_t window, std::size_t sub_windows);
double windowed_loss(const EvalBuffer& buffer, std::size_t window);

struct CurvePoint {
    std::size_t end_event = 0;  // exclusive
    std::optional<double> gauc;
    double loss = 0.0;
};

// GAUC and loss over consecutive disjoint windows of `window` events.
std::vector<CurvePoint> gauc_curve(const EvalBuffer& buffer, std::size_t window);

}  // namespace marm
