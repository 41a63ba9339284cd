#pragma once

// Agglomerative clustering over a precomputed dissimilarity matrix.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fairfl/errors.hpp"

namespace fairfl {

using Matrix = std::vector<std::vector<double>>;

enum class Linkage { single, complete, average };

inline const char* to_string(Linkage l) noexcept {
  switch (l) {
    case Linkage::single: return "single";
    case Linkage::complete: return "complete";
    default: return "average";
  }
}

inline Linkage parse_linkage(std::string_view s) {
  if (s == "single") return Linkage::single;
  if (s == "complete") return Linkage::complete;
  if (s == "average") return Linkage::average;
  throw ValidationError("unknown linkage '" + std::string(s) + "'");
}

struct HCParams {
  Linkage linkage = Linkage::average;
  std::optional<std::size_t> target_clusters;
  /// Merging stops once the closest pair is farther apart than this.
  std::optional<double> distance_threshold;

  void validate() const {
    if (target_clusters.has_value() == distance_threshold.has_value())
      throw ValidationError("set exactly one of target_clusters and distance_threshold");
    if (target_clusters && *target_clusters == 0) throw ValidationError("target_clusters must be >= 1");
    if (distance_threshold && !(*distance_threshold >= 0.0))
      throw ValidationError("distance_threshold must be >= 0");
  }
};

inline void validate_dissimilarity(const Matrix& m) {
  const std::size_t n = m.size();
  if (n == 0) throw ValidationError("dissimilarity matrix is empty");
  for (std::size_t i = 0; i < n; ++i) {
    if (m[i].size() != n) throw ValidationError("dissimilarity matrix is not square");
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(m[i][j]) || m[i][j] < 0.0)
        throw ValidationError("dissimilarity entries must be finite and non-negative");
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (m[i][j] != m[j][i]) throw ValidationError("dissimilarity matrix is not symmetric");
}

/// Linkage distance between two member lists, recomputed from the raw matrix.
inline double linkage_distance(const Matrix& m, const std::vector<std::size_t>& x, const std::vector<std::size_t>& y,
                               Linkage linkage) {
  double best = linkage == Linkage::single ? std::numeric_limits<double>::infinity() : 0.0;
  double sum = 0.0;
  for (std::size_t i : x) {
    for (std::size_t j : y) {
      const double d = m[i][j];
      if (linkage == Linkage::single) best = std::min(best, d);
      else if (linkage == Linkage::complete) best = std::max(best, d);
      else sum += d;
    }
  }
  if (linkage == Linkage::average) return sum / static_cast<double>(x.size() * y.size());
  return best;
}

/// Returns a cluster label per item. Labels are numbered by each cluster's smallest member,
/// so item 0 is always in cluster 0. Merge ties go to the lexicographically smallest pair of
/// clusters, clusters being ordered by their smallest member.
inline std::vector<std::size_t> hierarchical_cluster(const Matrix& m, const HCParams& params) {
  params.validate();
  validate_dissimilarity(m);
  const std::size_t n = m.size();
  // Kept sorted by smallest member; merging x<y into x preserves that order.
  std::vector<std::vector<std::size_t>> clusters(n);
  for (std::size_t i = 0; i < n; ++i) clusters[i] = {i};

  while (clusters.size() > 1) {
    if (params.target_clusters && clusters.size() <= *params.target_clusters) break;
    double best = std::numeric_limits<double>::infinity();
    std::size_t bx = 0, by = 0;
    for (std::size_t x = 0; x < clusters.size(); ++x) {
      for (std::size_t y = x + 1; y < clusters.size(); ++y) {
        const double d = linkage_distance(m, clusters[x], clusters[y], params.linkage);
        if (d < best) {
          best = d;
          bx = x;
          by = y;
        }
      }
    }
    if (params.distance_threshold && best > *params.distance_threshold) break;
    auto& into = clusters[bx];
    into.insert(into.end(), clusters[by].begin(), clusters[by].end());
    std::sort(into.begin(), into.end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(by));
  }

  std::vector<std::size_t> labels(n);
  for (std::size_t k = 0; k < clusters.size(); ++k)
    for (std::size_t i : clusters[k]) labels[i] = k;
  return labels;
}

}  // namespace fairfl
