#pragma once

// Empirical group fairness gaps (statistical parity, equality of opportunity,
// equalized odds) from predictions, labels and groups.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "fairfl/data.hpp"
#include "fairfl/errors.hpp"

namespace fairfl {

enum class FairnessMetric { SP, EqOp, EO };

inline constexpr std::array<FairnessMetric, 3> kMetrics{FairnessMetric::SP, FairnessMetric::EqOp,
                                                        FairnessMetric::EO};

inline const char* to_string(FairnessMetric m) noexcept {
  switch (m) {
    case FairnessMetric::SP: return "SP";
    case FairnessMetric::EqOp: return "EqOp";
    default: return "EO";
  }
}

inline FairnessMetric parse_metric(std::string_view s) {
  if (s == "SP" || s == "sp") return FairnessMetric::SP;
  if (s == "EqOp" || s == "eqop" || s == "EOP") return FairnessMetric::EqOp;
  if (s == "EO" || s == "eo") return FairnessMetric::EO;
  throw ValidationError("unknown fairness metric '" + std::string(s) + "'");
}

struct GroupCounts {
  std::size_t count = 0;
  std::size_t predicted_positive = 0;
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t label_positive = 0;
  std::size_t label_negative = 0;

  std::optional<double> selection_rate() const {
    if (count == 0) return std::nullopt;
    return static_cast<double>(predicted_positive) / static_cast<double>(count);
  }
  std::optional<double> tpr() const {
    if (label_positive == 0) return std::nullopt;
    return static_cast<double>(true_positive) / static_cast<double>(label_positive);
  }
  std::optional<double> fpr() const {
    if (label_negative == 0) return std::nullopt;
    return static_cast<double>(false_positive) / static_cast<double>(label_negative);
  }

  bool operator==(const GroupCounts&) const = default;
};

struct GroupRates {
  GroupCounts a;
  GroupCounts b;

  const GroupCounts& operator[](Group g) const noexcept { return g == Group::a ? a : b; }
  GroupCounts& operator[](Group g) noexcept { return g == Group::a ? a : b; }

  void add(int prediction, int label, Group g) noexcept {
    auto& c = (*this)[g];
    ++c.count;
    if (label == 1) ++c.label_positive;
    else ++c.label_negative;
    if (prediction == 1) {
      ++c.predicted_positive;
      if (label == 1) ++c.true_positive;
      else ++c.false_positive;
    }
  }

  bool operator==(const GroupRates&) const = default;
};

inline GroupRates group_rates(std::span<const int> predictions, std::span<const int> labels,
                              std::span<const Group> groups) {
  if (predictions.size() != labels.size() || labels.size() != groups.size())
    throw ValidationError("predictions, labels and groups must have equal length");
  if (predictions.empty()) throw ValidationError("group_rates needs at least one sample");
  GroupRates r;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if ((predictions[i] != 0 && predictions[i] != 1) || (labels[i] != 0 && labels[i] != 1))
      throw ValidationError("predictions and labels must be 0 or 1");
    r.add(predictions[i], labels[i], groups[i]);
  }
  return r;
}

/// Absolute gap between the two groups, or nullopt when a required denominator is zero.
inline std::optional<double> fairness_gap(FairnessMetric metric, const GroupRates& r) {
  auto diff = [](std::optional<double> x, std::optional<double> y) -> std::optional<double> {
    if (!x || !y) return std::nullopt;
    return std::abs(*x - *y);
  };
  switch (metric) {
    case FairnessMetric::SP: return diff(r.a.selection_rate(), r.b.selection_rate());
    case FairnessMetric::EqOp: return diff(r.a.tpr(), r.b.tpr());
    case FairnessMetric::EO: {
      const auto tp = diff(r.a.tpr(), r.b.tpr());
      const auto fp = diff(r.a.fpr(), r.b.fpr());
      if (!tp || !fp) return std::nullopt;
      return std::max(*tp, *fp);
    }
  }
  return std::nullopt;
}

struct AllGaps {
  std::optional<double> sp;
  std::optional<double> eqop;
  std::optional<double> eo;

  std::optional<double> get(FairnessMetric m) const noexcept {
    switch (m) {
      case FairnessMetric::SP: return sp;
      case FairnessMetric::EqOp: return eqop;
      default: return eo;
    }
  }
};

inline AllGaps all_gaps(const GroupRates& r) {
  return {fairness_gap(FairnessMetric::SP, r), fairness_gap(FairnessMetric::EqOp, r),
          fairness_gap(FairnessMetric::EO, r)};
}

}  // namespace fairfl
