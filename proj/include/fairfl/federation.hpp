#pragma once

// Round-based federated training: FedAvg, FedProx, fine-tuned personalization
// and standalone local training. All clients participate in every round.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fairfl/data.hpp"
#include "fairfl/errors.hpp"
#include "fairfl/models.hpp"
#include "fairfl/seed.hpp"

namespace fairfl {

struct FederationConfig {
  std::size_t rounds = 50;
  Architecture architecture = Architecture::linear(1);
  /// Local SGD settings; the seed field is ignored and derived per (round, client).
  TrainConfig local;
  std::uint64_t seed = 0;

  void validate() const {
    if (rounds < 1) throw ValidationError("rounds must be >= 1");
    architecture.validate();
    local.validate();
  }
};

struct RoundLog {
  std::size_t round = 0;
  /// (client_id, training loss of the client's model right after its local update).
  std::vector<std::pair<int, double>> client_loss;
  std::uint64_t model_hash = 0;
};

/// Seed for client `client_id`'s local training in round `round`.
inline std::uint64_t client_seed(std::uint64_t base, std::size_t round, int client_id) noexcept {
  return derive_seed(base, {stream::kTrain, static_cast<std::int64_t>(round), client_id});
}

/// Seed for the initial model of slot `slot` (the global model is slot 0).
inline std::uint64_t init_seed(std::uint64_t base, std::size_t slot = 0) noexcept {
  return derive_seed(base, {stream::kInit, static_cast<std::int64_t>(slot)});
}

/// Coordinate-wise weighted mean; weights are normalized internally.
inline ModelParams aggregate_weighted(std::span<const ModelParams> models, std::span<const double> weights) {
  if (models.empty()) throw ValidationError("nothing to aggregate");
  if (models.size() != weights.size()) throw ValidationError("one weight per model required");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("aggregation weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw ValidationError("aggregation weights sum to zero");
  const auto& arch = models.front().architecture();
  std::vector<double> acc(arch.param_count(), 0.0);
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (models[m].architecture() != arch) throw ValidationError("architecture mismatch in aggregation");
    const double w = weights[m] / total;
    const auto p = models[m].params();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * p[i];
  }
  return ModelParams(arch, std::move(acc));
}

namespace detail {

inline void check_clients(std::span<const ClientDataset> clients, std::size_t d) {
  if (clients.empty()) throw ValidationError("at least one client is required");
  for (const auto& c : clients)
    if (c.dim() != d) throw ValidationError("client " + std::to_string(c.client_id()) + " has feature dimension " +
                                            std::to_string(c.dim()) + ", expected " + std::to_string(d));
}

/// Positions of `clients` in ascending client_id order; rejects duplicate ids.
inline std::vector<std::size_t> sorted_order(std::span<const ClientDataset> clients) {
  std::vector<std::size_t> idx(clients.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t x, std::size_t y) { return clients[x].client_id() < clients[y].client_id(); });
  for (std::size_t k = 1; k < idx.size(); ++k)
    if (clients[idx[k]].client_id() == clients[idx[k - 1]].client_id())
      throw ValidationError("duplicate client id " + std::to_string(clients[idx[k]].client_id()));
  return idx;
}

}  // namespace detail

/// One client's local update in `round`, starting from `start`. With `mu` set the objective
/// gains the proximal term anchored at `start`.
inline ModelParams local_update(const ModelParams& start, const ClientDataset& client, const FederationConfig& cfg,
                                std::size_t round, std::optional<double> mu = std::nullopt) {
  TrainConfig tc = cfg.local;
  tc.seed = client_seed(cfg.seed, round, client.client_id());
  tc.proximal.reset();
  if (mu) tc.proximal = Proximal{*mu, start};
  try {
    return sgd_train(start, client, tc);
  } catch (const DivergenceError& e) {
    throw e.with_client(client.client_id());
  }
}

/// Every client trains from `global`; the result is the n_i-weighted average, summed in
/// ascending client_id order.
inline ModelParams fedavg_round(const ModelParams& global, std::span<const ClientDataset> clients,
                                const FederationConfig& cfg, std::size_t round = 1,
                                std::optional<double> mu = std::nullopt, RoundLog* log = nullptr) {
  detail::check_clients(clients, global.architecture().input_dim);
  const auto order = detail::sorted_order(clients);
  std::vector<ModelParams> locals;
  std::vector<double> weights;
  locals.reserve(clients.size());
  for (std::size_t i : order) {
    locals.push_back(local_update(global, clients[i], cfg, round, mu));
    weights.push_back(static_cast<double>(clients[i].size()));
    if (log) log->client_loss.emplace_back(clients[i].client_id(), loss(locals.back(), clients[i]));
  }
  ModelParams next = aggregate_weighted(locals, weights);
  if (log) {
    log->round = round;
    log->model_hash = params_hash(next);
  }
  return next;
}

struct FederatedResult {
  ModelParams global;
  std::vector<RoundLog> log;
};

/// `cfg.rounds` FedAvg rounds from `init` (a seeded initialization when absent). Rounds are
/// numbered from `first_round`, which keeps per-client seeds distinct when runs are chained.
inline FederatedResult run_fedavg(std::span<const ClientDataset> clients, const FederationConfig& cfg,
                                  std::optional<ModelParams> init = std::nullopt,
                                  std::optional<double> mu = std::nullopt, std::size_t first_round = 1) {
  cfg.validate();
  if (mu && !(*mu >= 0.0)) throw ValidationError("fedprox mu must be >= 0");
  FederatedResult r{init ? *init : init_params(cfg.architecture, init_seed(cfg.seed)), {}};
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    RoundLog entry;
    r.global = fedavg_round(r.global, clients, cfg, first_round + t, mu, &entry);
    r.log.push_back(std::move(entry));
  }
  return r;
}

inline FederatedResult run_fedprox(std::span<const ClientDataset> clients, const FederationConfig& cfg, double mu,
                                   std::optional<ModelParams> init = std::nullopt) {
  if (!(mu >= 0.0)) throw ValidationError("fedprox mu must be >= 0");
  return run_fedavg(clients, cfg, std::move(init), mu);
}

struct PersonalizedResult {
  ModelParams global;
  /// Aligned with the input client order.
  std::vector<ModelParams> personalized;
  std::vector<RoundLog> log;
};

/// FedAvg, then `extra_steps` full-batch gradient steps per client at rate `lr_ft`.
inline PersonalizedResult run_finetune(std::span<const ClientDataset> clients, const FederationConfig& cfg,
                                       std::size_t extra_steps, double lr_ft,
                                       std::optional<ModelParams> init = std::nullopt) {
  if (!(lr_ft >= 0.0)) throw ValidationError("fine-tune learning rate must be >= 0");
  auto fed = run_fedavg(clients, cfg, std::move(init));
  PersonalizedResult r{fed.global, {}, std::move(fed.log)};
  r.personalized.reserve(clients.size());
  for (const auto& c : clients) {
    try {
      r.personalized.push_back(gradient_steps(r.global, c, extra_steps, lr_ft));
    } catch (const DivergenceError& e) {
      throw e.with_client(c.client_id());
    }
  }
  return r;
}

/// Each client trains alone with `cfg.local` from its own seeded initialization.
inline std::vector<ModelParams> run_standalone(std::span<const ClientDataset> clients, const FederationConfig& cfg) {
  cfg.validate();
  detail::check_clients(clients, cfg.architecture.input_dim);
  std::vector<ModelParams> out;
  out.reserve(clients.size());
  for (const auto& c : clients) {
    const ModelParams start = init_params(cfg.architecture, init_seed(cfg.seed));
    out.push_back(local_update(start, c, cfg, 0));
  }
  return out;
}

}  // namespace fairfl
