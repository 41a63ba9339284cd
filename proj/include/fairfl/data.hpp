#pragma once

// Samples, client datasets, synthetic Gaussian clients, partitioning and
// train/eval splitting.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fairfl/errors.hpp"
#include "fairfl/seed.hpp"

namespace fairfl {

enum class Group : std::uint8_t { a = 0, b = 1 };

inline constexpr std::array<Group, 2> kGroups{Group::a, Group::b};

constexpr std::size_t group_index(Group g) noexcept { return static_cast<std::size_t>(g); }

inline const char* to_string(Group g) noexcept { return g == Group::a ? "a" : "b"; }

/// (group, label) cells in the canonical order a1, a0, b1, b0.
constexpr std::size_t cell_index(Group g, int label) noexcept {
  return 2 * group_index(g) + (label == 1 ? 0 : 1);
}

template <class T>
struct PerCell {
  T a1{};
  T a0{};
  T b1{};
  T b0{};

  T& at(Group g, int label) noexcept {
    if (g == Group::a) return label == 1 ? a1 : a0;
    return label == 1 ? b1 : b0;
  }
  const T& at(Group g, int label) const noexcept {
    if (g == Group::a) return label == 1 ? a1 : a0;
    return label == 1 ? b1 : b0;
  }
  T& operator[](std::size_t cell) noexcept {
    switch (cell) {
      case 0: return a1;
      case 1: return a0;
      case 2: return b1;
      default: return b0;
    }
  }
  const T& operator[](std::size_t cell) const noexcept {
    switch (cell) {
      case 0: return a1;
      case 1: return a0;
      case 2: return b1;
      default: return b0;
    }
  }

  bool operator==(const PerCell&) const = default;
};

inline constexpr std::array<std::pair<Group, int>, 4> kCells{
    std::pair{Group::a, 1}, std::pair{Group::a, 0}, std::pair{Group::b, 1}, std::pair{Group::b, 0}};

struct Sample {
  std::vector<double> features;
  int label = 0;
  Group group = Group::a;

  bool operator==(const Sample&) const = default;
};

using CellCounts = std::array<std::size_t, 4>;

/// A client's local collection of samples. Never empty; all samples share one dimension.
class ClientDataset {
 public:
  ClientDataset(int client_id, std::vector<Sample> samples)
      : client_id_(client_id), samples_(std::move(samples)) {
    if (samples_.empty()) throw ValidationError("client dataset must contain at least one sample");
    dim_ = samples_.front().features.size();
    if (dim_ == 0) throw ValidationError("feature dimension must be >= 1");
    counts_.fill(0);
    for (const auto& s : samples_) {
      if (s.features.size() != dim_) throw ValidationError("samples have inconsistent feature dimension");
      if (s.label != 0 && s.label != 1) throw ValidationError("label must be 0 or 1");
      if (s.group != Group::a && s.group != Group::b) throw ValidationError("group must be a or b");
      ++counts_[cell_index(s.group, s.label)];
    }
  }

  int client_id() const noexcept { return client_id_; }
  std::size_t size() const noexcept { return samples_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const Sample> samples() const noexcept { return samples_; }
  const Sample& operator[](std::size_t i) const noexcept { return samples_[i]; }

  const CellCounts& cell_counts() const noexcept { return counts_; }
  std::size_t cell_count(Group g, int label) const noexcept { return counts_[cell_index(g, label)]; }
  std::size_t group_count(Group g) const noexcept { return cell_count(g, 1) + cell_count(g, 0); }

  ClientDataset with_id(int id) const { return ClientDataset(id, samples_); }

  bool operator==(const ClientDataset& o) const {
    return client_id_ == o.client_id_ && samples_ == o.samples_;
  }

 private:
  int client_id_;
  std::vector<Sample> samples_;
  std::size_t dim_ = 0;
  CellCounts counts_{};
};

/// Concatenates datasets of equal dimension into one client.
inline ClientDataset concatenate(std::span<const ClientDataset> parts, int client_id) {
  std::vector<Sample> all;
  for (const auto& p : parts) all.insert(all.end(), p.samples().begin(), p.samples().end());
  return ClientDataset(client_id, std::move(all));
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian clients

/// Analytic description of one population: per-cell means, shared sigma,
/// label rates alpha^y_g (alpha^1_g + alpha^0_g = 1) and group rates r_a + r_b = 1.
struct GaussianClientSpec {
  PerCell<double> means{};
  double sigma = 1.0;
  PerCell<double> label_rates{0.5, 0.5, 0.5, 0.5};
  double group_rate_a = 0.5;
  double group_rate_b = 0.5;
  std::size_t n_total = 0;
  /// When set, every (group, label) cell gets exactly this many samples and n_total is ignored.
  std::optional<std::size_t> n_per_component;

  double group_rate(Group g) const noexcept { return g == Group::a ? group_rate_a : group_rate_b; }
  double cell_rate(Group g, int label) const noexcept { return group_rate(g) * label_rates.at(g, label); }
  double mean(Group g, int label) const noexcept { return means.at(g, label); }

  /// Balanced group and label rates.
  static GaussianClientSpec balanced(double mu_a1, double mu_a0, double mu_b1, double mu_b0, double sigma,
                                     std::size_t n_total = 0) {
    GaussianClientSpec s;
    s.means = {mu_a1, mu_a0, mu_b1, mu_b0};
    s.sigma = sigma;
    s.n_total = n_total;
    return s;
  }

  void validate() const {
    constexpr double tol = 1e-9;
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("sigma must be > 0");
    for (std::size_t c = 0; c < 4; ++c) {
      if (!std::isfinite(means[c])) throw ValidationError("means must be finite");
      if (!(label_rates[c] >= 0.0 && label_rates[c] <= 1.0))
        throw ValidationError("label rates must lie in [0,1]");
    }
    if (!(group_rate_a >= 0.0 && group_rate_a <= 1.0 && group_rate_b >= 0.0 && group_rate_b <= 1.0))
      throw ValidationError("group rates must lie in [0,1]");
    if (std::abs(label_rates.a1 + label_rates.a0 - 1.0) > tol ||
        std::abs(label_rates.b1 + label_rates.b0 - 1.0) > tol)
      throw ValidationError("per-group label rates must sum to 1");
    if (std::abs(group_rate_a + group_rate_b - 1.0) > tol) throw ValidationError("group rates must sum to 1");
  }

  bool operator==(const GaussianClientSpec&) const = default;
};

/// Per-cell sample counts for a spec: floor(n * r_g * alpha^y_g) per cell, then the
/// remainder handed out one at a time in cell order a1, a0, b1, b0 (skipping
/// zero-rate cells).
inline CellCounts cell_counts_for(const GaussianClientSpec& spec) {
  spec.validate();
  CellCounts counts{};
  if (spec.n_per_component) {
    counts.fill(*spec.n_per_component);
    return counts;
  }
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    const auto [g, y] = kCells[c];
    const double exact = static_cast<double>(spec.n_total) * spec.cell_rate(g, y);
    // Nudge before flooring so that 1200 * 0.25 does not land on 299.999...
    counts[c] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += counts[c];
  }
  for (std::size_t c = 0; assigned < spec.n_total; c = (c + 1) % 4) {
    const auto [g, y] = kCells[c];
    if (spec.cell_rate(g, y) <= 0.0) continue;
    ++counts[c];
    ++assigned;
  }
  return counts;
}

struct GenerateOptions {
  /// Each coordinate is drawn independently from N(mu^y_g, sigma^2).
  std::size_t dim = 1;
  /// Appends the protected attribute as a trailing 0/1 feature (1 for group a).
  bool append_group_feature = false;
};

/// Draws a client dataset from `spec`. Samples are emitted cell by cell (a1, a0, b1, b0).
inline ClientDataset generate_gaussian_client(const GaussianClientSpec& spec, std::uint64_t seed, int client_id = 0,
                                              GenerateOptions opts = {}) {
  spec.validate();
  if (opts.dim == 0) throw ValidationError("generator dimension must be >= 1");
  const CellCounts counts = cell_counts_for(spec);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Sample> samples;
  samples.reserve(counts[0] + counts[1] + counts[2] + counts[3]);
  for (std::size_t c = 0; c < 4; ++c) {
    const auto [g, y] = kCells[c];
    const double mu = spec.mean(g, y);
    for (std::size_t i = 0; i < counts[c]; ++i) {
      Sample s;
      s.label = y;
      s.group = g;
      s.features.reserve(opts.dim + (opts.append_group_feature ? 1 : 0));
      for (std::size_t k = 0; k < opts.dim; ++k) s.features.push_back(mu + spec.sigma * normal(rng));
      if (opts.append_group_feature) s.features.push_back(g == Group::a ? 1.0 : 0.0);
      samples.push_back(std::move(s));
    }
  }
  return ClientDataset(client_id, std::move(samples));
}

// ---------------------------------------------------------------------------
// Partitioning

/// Shuffle, then cut into k near-equal contiguous parts (the first n % k parts get one extra).
struct RandomEven {
  std::size_t k = 1;
};

/// Exact sample counts for one client. Group-level counts take any label mix;
/// a client may not combine a group-level count with cell counts of the same group.
struct ClientQuota {
  std::optional<std::size_t> group_a;
  std::optional<std::size_t> group_b;
  PerCell<std::optional<std::size_t>> cells;

  static ClientQuota groups(std::size_t a, std::size_t b) {
    ClientQuota q;
    q.group_a = a;
    q.group_b = b;
    return q;
  }
  static ClientQuota per_cell(std::size_t a1, std::size_t a0, std::size_t b1, std::size_t b0) {
    ClientQuota q;
    q.cells = {a1, a0, b1, b0};
    return q;
  }
};

/// Samples not requested by any quota are left unassigned.
struct ImbalanceRecipe {
  std::vector<ClientQuota> clients;
};

using PartitionStrategy = std::variant<RandomEven, ImbalanceRecipe>;

namespace detail {

inline void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
}

inline std::vector<Sample> gather(const ClientDataset& ds, std::span<const std::size_t> idx) {
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(ds[i]);
  return out;
}

}  // namespace detail

/// Splits one pooled dataset into clients numbered 0..m-1.
inline std::vector<ClientDataset> partition_clients(const ClientDataset& pool, const PartitionStrategy& strategy,
                                                    std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ClientDataset> out;

  if (const auto* even = std::get_if<RandomEven>(&strategy)) {
    if (even->k == 0) throw ValidationError("random_even needs k >= 1");
    if (even->k > pool.size()) throw CapacityError("random_even(k) with k larger than the sample count");
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    detail::shuffle_indices(idx, rng);
    const std::size_t base = pool.size() / even->k;
    const std::size_t extra = pool.size() % even->k;
    std::size_t pos = 0;
    for (std::size_t c = 0; c < even->k; ++c) {
      const std::size_t len = base + (c < extra ? 1 : 0);
      out.emplace_back(static_cast<int>(c), detail::gather(pool, std::span(idx).subspan(pos, len)));
      pos += len;
    }
    return out;
  }

  const auto& recipe = std::get<ImbalanceRecipe>(strategy);
  if (recipe.clients.empty()) throw ValidationError("imbalance recipe has no clients");

  // Demand per cell and per group, checked before anything is drawn.
  CellCounts cell_demand{};
  std::array<std::size_t, 2> group_demand{};
  for (std::size_t c = 0; c < recipe.clients.size(); ++c) {
    const auto& q = recipe.clients[c];
    std::size_t total = 0;
    for (Group g : kGroups) {
      const auto& gq = g == Group::a ? q.group_a : q.group_b;
      const bool has_cells = q.cells.at(g, 1).has_value() || q.cells.at(g, 0).has_value();
      if (gq && has_cells)
        throw ValidationError("client " + std::to_string(c) + " mixes group and cell quotas for group " +
                              to_string(g));
      if (gq) {
        group_demand[group_index(g)] += *gq;
        total += *gq;
      }
    }
    for (std::size_t cell = 0; cell < 4; ++cell) {
      if (q.cells[cell]) {
        cell_demand[cell] += *q.cells[cell];
        total += *q.cells[cell];
      }
    }
    if (total == 0) throw ValidationError("client " + std::to_string(c) + " has an empty quota");
  }
  for (std::size_t cell = 0; cell < 4; ++cell) {
    if (cell_demand[cell] > pool.cell_counts()[cell])
      throw CapacityError("quota exceeds available samples in cell " + std::to_string(cell));
  }
  for (Group g : kGroups) {
    const std::size_t cells_used = cell_demand[cell_index(g, 1)] + cell_demand[cell_index(g, 0)];
    if (group_demand[group_index(g)] + cells_used > pool.group_count(g))
      throw CapacityError(std::string("quota exceeds available samples in group ") + to_string(g));
  }

  std::array<std::vector<std::size_t>, 4> pools;
  for (std::size_t i = 0; i < pool.size(); ++i) pools[cell_index(pool[i].group, pool[i].label)].push_back(i);
  for (auto& p : pools) detail::shuffle_indices(p, rng);

  std::vector<std::vector<std::size_t>> picked(recipe.clients.size());
  std::array<std::size_t, 4> cursor{};
  for (std::size_t c = 0; c < recipe.clients.size(); ++c) {
    for (std::size_t cell = 0; cell < 4; ++cell) {
      if (const auto& want = recipe.clients[c].cells[cell]) {
        for (std::size_t k = 0; k < *want; ++k) picked[c].push_back(pools[cell][cursor[cell]++]);
      }
    }
  }
  // Group-level quotas draw from whatever remains of that group, label-mixed.
  for (Group g : kGroups) {
    std::vector<std::size_t> rest;
    for (int y : {1, 0}) {
      const auto cell = cell_index(g, y);
      rest.insert(rest.end(), pools[cell].begin() + static_cast<std::ptrdiff_t>(cursor[cell]), pools[cell].end());
    }
    detail::shuffle_indices(rest, rng);
    std::size_t pos = 0;
    for (std::size_t c = 0; c < recipe.clients.size(); ++c) {
      const auto& gq = g == Group::a ? recipe.clients[c].group_a : recipe.clients[c].group_b;
      if (!gq) continue;
      for (std::size_t k = 0; k < *gq; ++k) picked[c].push_back(rest[pos++]);
    }
  }
  for (std::size_t c = 0; c < recipe.clients.size(); ++c) {
    std::sort(picked[c].begin(), picked[c].end());
    out.emplace_back(static_cast<int>(c), detail::gather(pool, picked[c]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Train / eval split

struct TrainEvalSplit {
  ClientDataset train;
  ClientDataset eval;
};

/// Stratified by (group, label) cell. The eval size is round(n * eval_fraction), spread over
/// cells by largest remainder; a cell keeps at least one sample in train, so singleton cells
/// always go to train. Relative sample order is preserved inside each split.
inline TrainEvalSplit train_eval_split(const ClientDataset& client, double eval_fraction, std::uint64_t seed) {
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) throw ValidationError("eval_fraction must lie in (0,1)");
  const std::size_t n = client.size();
  if (n < 2) throw ValidationError("need at least two samples to split");

  std::size_t target = static_cast<std::size_t>(std::llround(static_cast<double>(n) * eval_fraction));
  target = std::clamp<std::size_t>(target, 1, n - 1);

  const auto& counts = client.cell_counts();
  std::array<std::size_t, 4> take{};
  std::array<double, 4> frac{};
  std::size_t placed = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    if (counts[c] < 2) continue;
    const double ideal = static_cast<double>(counts[c]) * static_cast<double>(target) / static_cast<double>(n);
    take[c] = std::min(static_cast<std::size_t>(std::floor(ideal)), counts[c] - 1);
    frac[c] = ideal - std::floor(ideal);
    placed += take[c];
  }
  while (placed < target) {
    std::optional<std::size_t> best;
    for (std::size_t c = 0; c < 4; ++c) {
      if (counts[c] < 2 || take[c] + 1 > counts[c] - 1) continue;
      if (!best || frac[c] > frac[*best]) best = c;
    }
    if (!best) break;
    ++take[*best];
    frac[*best] = -1.0;  // at most one extra per pass
    ++placed;
    if (std::all_of(frac.begin(), frac.end(), [](double f) { return f < 0.0; }))
      for (std::size_t c = 0; c < 4; ++c) frac[c] = 0.0;
  }
  if (placed == 0) throw ValidationError("every (group,label) cell is a singleton; eval split would be empty");

  Rng rng(seed);
  std::array<std::vector<std::size_t>, 4> cells;
  for (std::size_t i = 0; i < n; ++i) cells[cell_index(client[i].group, client[i].label)].push_back(i);
  std::vector<char> to_eval(n, 0);
  for (std::size_t c = 0; c < 4; ++c) {
    detail::shuffle_indices(cells[c], rng);
    for (std::size_t k = 0; k < take[c]; ++k) to_eval[cells[c][k]] = 1;
  }
  std::vector<Sample> train, eval;
  for (std::size_t i = 0; i < n; ++i) (to_eval[i] ? eval : train).push_back(client[i]);
  return {ClientDataset(client.client_id(), std::move(train)), ClientDataset(client.client_id(), std::move(eval))};
}

}  // namespace fairfl
