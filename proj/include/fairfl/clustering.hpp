#pragma once

// Fairness-aware clustered FL: Fair-FCA (iterative cluster assignment with a
// mixed accuracy/fairness score) and Fair-FL+HC (FedAvg warm start, local
// personalization, hierarchical clustering, per-cluster FedAvg).

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fairfl/data.hpp"
#include "fairfl/errors.hpp"
#include "fairfl/fairness.hpp"
#include "fairfl/federation.hpp"
#include "fairfl/hierarchical.hpp"
#include "fairfl/models.hpp"
#include "fairfl/seed.hpp"

namespace fairfl {

struct AssignmentScore {
  double loss_term = 0.0;
  std::optional<double> fairness_term;
  double mixed = 0.0;
  /// True when the fairness term was undefined and `mixed` fell back to the loss term.
  bool fallback = false;
};

inline void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in [0,1]");
}

/// gamma * misclassification + (1 - gamma) * fairness gap of `model` on `client`.
inline AssignmentScore assignment_score(const ClientDataset& client, const ModelParams& model, double gamma,
                                        FairnessMetric metric) {
  check_gamma(gamma);
  const Evaluation e = evaluate(model, client);
  AssignmentScore s;
  s.loss_term = e.error_rate;
  s.fairness_term = e.gap(metric);
  if (s.fairness_term) {
    s.mixed = gamma * s.loss_term + (1.0 - gamma) * *s.fairness_term;
  } else {
    s.mixed = s.loss_term;
    s.fallback = true;
  }
  return s;
}

/// Index of the smallest mixed score; ties go to the lowest cluster index.
inline std::size_t argmin_score(std::span<const AssignmentScore> scores) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k)
    if (scores[k].mixed < scores[best].mixed) best = k;
  return best;
}

struct Assignment {
  /// Cluster index per client, aligned with the input order.
  std::vector<std::size_t> cluster;
  /// scores[i][k]: client i against cluster model k.
  std::vector<std::vector<AssignmentScore>> scores;
};

inline Assignment assign_clusters(std::span<const ClientDataset> clients, std::span<const ModelParams> models,
                                  double gamma, FairnessMetric metric) {
  if (models.empty()) throw ValidationError("need at least one cluster model");
  Assignment a;
  a.cluster.reserve(clients.size());
  a.scores.reserve(clients.size());
  for (const auto& c : clients) {
    std::vector<AssignmentScore> row;
    row.reserve(models.size());
    for (const auto& m : models) row.push_back(assignment_score(c, m, gamma, metric));
    a.cluster.push_back(argmin_score(row));
    a.scores.push_back(std::move(row));
  }
  return a;
}

/// Groups client ids by label; clusters ordered by their smallest id, ids ascending.
/// Empty clusters are dropped.
inline std::vector<std::vector<int>> partition_of(std::span<const ClientDataset> clients,
                                                  std::span<const std::size_t> labels) {
  std::map<std::size_t, std::vector<int>> by_label;
  for (std::size_t i = 0; i < clients.size(); ++i) by_label[labels[i]].push_back(clients[i].client_id());
  std::vector<std::vector<int>> out;
  for (auto& [label, ids] : by_label) {
    std::sort(ids.begin(), ids.end());
    out.push_back(std::move(ids));
  }
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.front() < y.front(); });
  return out;
}

// ---------------------------------------------------------------------------
// Fair-FCA

struct FairFcaConfig {
  /// Architecture, local SGD settings and base seed; `rounds` is not used here.
  FederationConfig fed;
  std::size_t K = 2;
  double gamma = 1.0;
  FairnessMetric metric = FairnessMetric::SP;
  std::size_t max_rounds = 100;
  /// Stop once the assignment has been unchanged for this many consecutive rounds.
  std::size_t stable_rounds = 3;
  /// When set, run exactly this many rounds and ignore the convergence rule.
  std::optional<std::size_t> fixed_rounds;
  /// Epochs of local training that seed each cluster model on its randomly picked client.
  std::size_t init_epochs = 1;
  /// Cluster update weights n_i / sum over all clients instead of over the cluster's members.
  bool global_weight_denominator = false;

  void validate() const {
    fed.architecture.validate();
    fed.local.validate();
    if (K < 1) throw ValidationError("K must be >= 1");
    check_gamma(gamma);
    if (max_rounds < 1) throw ValidationError("max_rounds must be >= 1");
    if (stable_rounds < 1) throw ValidationError("stable_rounds must be >= 1");
    if (fixed_rounds && *fixed_rounds < 1) throw ValidationError("fixed_rounds must be >= 1");
  }
};

struct ClusterState {
  std::size_t K = 0;
  std::vector<ModelParams> cluster_models;
  /// Cluster index per client, aligned with the input order.
  std::vector<std::size_t> assignment;
  std::size_t round = 0;
};

struct ClusterRoundLog {
  std::size_t round = 0;
  /// Cluster models the round's assignment was computed against.
  std::vector<ModelParams> models_before;
  Assignment assignment;
  std::vector<std::uint64_t> model_hashes_after;
  std::size_t fallback_count = 0;
};

struct FairFcaResult {
  ClusterState state;
  /// Deployed model per client (its cluster's model), aligned with the input order.
  std::vector<ModelParams> client_models;
  std::vector<ClusterRoundLog> log;
  bool converged = false;
  std::vector<std::vector<int>> partition;
};

namespace detail {

inline std::vector<ModelParams> initial_cluster_models(std::span<const ClientDataset> clients,
                                                       const FairFcaConfig& cfg) {
  // Pick K distinct clients by shuffling positions in client_id order.
  std::vector<std::size_t> order = sorted_order(clients);
  Rng rng(derive_seed(cfg.fed.seed, {stream::kCluster}));
  shuffle_indices(order, rng);
  std::vector<ModelParams> models;
  for (std::size_t k = 0; k < cfg.K; ++k) {
    ModelParams m = init_params(cfg.fed.architecture, init_seed(cfg.fed.seed, k));
    if (cfg.init_epochs > 0) {
      const auto& c = clients[order[k]];
      TrainConfig tc = cfg.fed.local;
      tc.epochs = cfg.init_epochs;
      tc.proximal.reset();
      tc.seed = derive_seed(cfg.fed.seed, {stream::kCluster, static_cast<std::int64_t>(k), c.client_id()});
      try {
        m = sgd_train(m, c, tc);
      } catch (const DivergenceError& e) {
        throw e.with_client(c.client_id());
      }
    }
    models.push_back(std::move(m));
  }
  return models;
}

}  // namespace detail

/// Fair-FCA. With gamma = 1 this is IFCA driven by misclassification rate.
inline FairFcaResult run_fair_fca(std::span<const ClientDataset> clients, const FairFcaConfig& cfg) {
  cfg.validate();
  detail::check_clients(clients, cfg.fed.architecture.input_dim);
  if (cfg.K > clients.size()) throw ValidationError("K exceeds the number of clients");
  const auto order = detail::sorted_order(clients);
  double n_all = 0.0;
  for (const auto& c : clients) n_all += static_cast<double>(c.size());

  FairFcaResult r;
  std::vector<ModelParams> models = detail::initial_cluster_models(clients, cfg);
  std::optional<std::vector<std::size_t>> previous;
  std::size_t unchanged = 0;
  const std::size_t limit = cfg.fixed_rounds ? *cfg.fixed_rounds : cfg.max_rounds;

  std::size_t t = 1;
  for (; t <= limit; ++t) {
    ClusterRoundLog entry;
    entry.round = t;
    entry.models_before = models;
    entry.assignment = assign_clusters(clients, models, cfg.gamma, cfg.metric);
    for (const auto& row : entry.assignment.scores)
      for (const auto& s : row) entry.fallback_count += s.fallback ? 1 : 0;
    const auto& assign = entry.assignment.cluster;

    // Local updates and per-cluster reduction, both in ascending client_id order.
    std::vector<std::vector<ModelParams>> locals(cfg.K);
    std::vector<std::vector<double>> weights(cfg.K);
    for (std::size_t i : order) {
      const std::size_t k = assign[i];
      locals[k].push_back(local_update(models[k], clients[i], cfg.fed, t));
      weights[k].push_back(static_cast<double>(clients[i].size()));
    }
    for (std::size_t k = 0; k < cfg.K; ++k) {
      if (locals[k].empty()) continue;  // empty cluster keeps its model
      if (!cfg.global_weight_denominator) {
        models[k] = aggregate_weighted(locals[k], weights[k]);
        continue;
      }
      std::vector<double> p(models[k].params().begin(), models[k].params().end());
      std::vector<double> step(p.size(), 0.0);
      for (std::size_t m = 0; m < locals[k].size(); ++m) {
        const double w = weights[k][m] / n_all;
        for (std::size_t j = 0; j < p.size(); ++j) step[j] += w * (p[j] - locals[k][m][j]);
      }
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= step[j];
      models[k] = ModelParams(cfg.fed.architecture, std::move(p));
    }
    for (const auto& m : models) entry.model_hashes_after.push_back(params_hash(m));

    if (previous && *previous == assign) ++unchanged;
    else unchanged = 0;
    previous = assign;
    r.log.push_back(std::move(entry));
    if (!cfg.fixed_rounds && unchanged >= cfg.stable_rounds) {
      r.converged = true;
      break;
    }
  }

  // Deployment: each client takes the cluster model it scores best against after training.
  const auto final_assign = assign_clusters(clients, models, cfg.gamma, cfg.metric);
  r.state.K = cfg.K;
  r.state.round = std::min(t, limit);
  r.state.assignment = final_assign.cluster;
  r.state.cluster_models = models;
  for (std::size_t i = 0; i < clients.size(); ++i) r.client_models.push_back(models[final_assign.cluster[i]]);
  r.partition = partition_of(clients, r.state.assignment);
  return r;
}

// ---------------------------------------------------------------------------
// Fair-FL+HC

struct MixedDissimilarity {
  /// Min-max normalized Euclidean distances between client models.
  Matrix distance;
  /// Worst-case cross fairness gap max(Psi(Z_i, theta_j), Psi(Z_j, theta_i)); nullopt when undefined.
  std::vector<std::vector<std::optional<double>>> psi;
  /// gamma * distance + (1 - gamma) * psi. An undefined psi entry falls back to the distance entry.
  Matrix mixed;
};

inline MixedDissimilarity pairwise_mixed_matrix(std::span<const ClientDataset> clients,
                                                std::span<const ModelParams> models, double gamma,
                                                FairnessMetric metric) {
  check_gamma(gamma);
  const std::size_t n = clients.size();
  if (models.size() != n) throw ValidationError("need one personalized model per client");
  for (const auto& m : models)
    if (m.architecture() != models.front().architecture())
      throw ValidationError("architecture mismatch between personalized models");

  MixedDissimilarity out;
  out.distance.assign(n, std::vector<double>(n, 0.0));
  out.psi.assign(n, std::vector<std::optional<double>>(n));
  out.mixed.assign(n, std::vector<double>(n, 0.0));

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = euclidean_distance(models[i], models[j]);
      out.distance[i][j] = out.distance[j][i] = d;
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = hi > lo ? (out.distance[i][j] - lo) / (hi - lo) : 0.0;
      out.distance[i][j] = out.distance[j][i] = v;
    }

  // cross[i][j] = gap of model j on client i's data
  std::vector<std::vector<std::optional<double>>> cross(n, std::vector<std::optional<double>>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cross[i][j] = evaluate(models[j], clients[i]).gap(metric);

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      std::optional<double> v;
      if (cross[i][j] && cross[j][i]) v = std::max(*cross[i][j], *cross[j][i]);
      else if (cross[i][j]) v = cross[i][j];
      else if (cross[j][i]) v = cross[j][i];
      out.psi[i][j] = out.psi[j][i] = v;
      const double dij = out.distance[i][j];
      const double m = gamma * dij + (1.0 - gamma) * (v ? *v : dij);
      out.mixed[i][j] = out.mixed[j][i] = m;
    }
  }
  return out;
}

struct FairFlhcConfig {
  /// Architecture, local SGD settings (also used for the personalization step) and base seed.
  FederationConfig fed;
  std::size_t k1 = 10;
  std::size_t k2 = 10;
  double gamma = 1.0;
  FairnessMetric metric = FairnessMetric::SP;
  HCParams hc{Linkage::average, 2, std::nullopt};

  void validate() const {
    fed.architecture.validate();
    fed.local.validate();
    if (k1 < 1 || k2 < 1) throw ValidationError("k1 and k2 must be >= 1");
    check_gamma(gamma);
    hc.validate();
  }
};

struct FairFlhcResult {
  /// Cluster label per client, aligned with the input order.
  std::vector<std::size_t> labels;
  std::vector<std::vector<int>> partition;
  std::vector<ModelParams> cluster_models;
  std::vector<ModelParams> client_models;
  ModelParams warm_start;
  std::vector<ModelParams> personalized;
  MixedDissimilarity matrix;
  std::vector<RoundLog> log;
};

/// k1 FedAvg rounds, one personalization update per client, clustering on the mixed matrix,
/// then k2 FedAvg rounds inside each cluster. Each cluster starts from the n_i-weighted
/// average of its members' personalized models.
inline FairFlhcResult run_fair_flhc(std::span<const ClientDataset> clients, const FairFlhcConfig& cfg) {
  cfg.validate();
  detail::check_clients(clients, cfg.fed.architecture.input_dim);
  FederationConfig warm = cfg.fed;
  warm.rounds = cfg.k1;
  auto fed = run_fedavg(clients, warm);

  std::vector<ModelParams> personalized;
  personalized.reserve(clients.size());
  for (const auto& c : clients) personalized.push_back(local_update(fed.global, c, cfg.fed, cfg.k1 + 1));

  auto matrix = pairwise_mixed_matrix(clients, personalized, cfg.gamma, cfg.metric);
  auto labels = hierarchical_cluster(matrix.mixed, cfg.hc);
  const std::size_t n_clusters = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;

  FairFlhcResult r{labels, partition_of(clients, labels), {}, {}, fed.global, personalized, std::move(matrix),
                   std::move(fed.log)};
  FederationConfig inner = cfg.fed;
  inner.rounds = cfg.k2;
  for (std::size_t k = 0; k < n_clusters; ++k) {
    std::vector<ClientDataset> members;
    std::vector<ModelParams> member_models;
    std::vector<double> weights;
    for (std::size_t i : detail::sorted_order(clients)) {
      if (labels[i] != k) continue;
      members.push_back(clients[i]);
      member_models.push_back(personalized[i]);
      weights.push_back(static_cast<double>(clients[i].size()));
    }
    const ModelParams start = aggregate_weighted(member_models, weights);
    auto cluster_run = run_fedavg(members, inner, start, std::nullopt, cfg.k1 + 2);
    r.cluster_models.push_back(std::move(cluster_run.global));
    r.log.insert(r.log.end(), cluster_run.log.begin(), cluster_run.log.end());
  }
  for (std::size_t i = 0; i < clients.size(); ++i) r.client_models.push_back(r.cluster_models[labels[i]]);
  return r;
}

}  // namespace fairfl
