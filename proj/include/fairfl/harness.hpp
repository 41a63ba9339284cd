#pragma once

// Declarative experiments: JSON config -> seeded multi-run execution -> report.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fairfl/analytic.hpp"
#include "fairfl/clustering.hpp"
#include "fairfl/csv.hpp"
#include "fairfl/data.hpp"
#include "fairfl/errors.hpp"
#include "fairfl/fairness.hpp"
#include "fairfl/federation.hpp"
#include "fairfl/models.hpp"
#include "fairfl/seed.hpp"

namespace fairfl {

using json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Config types

struct SyntheticClient {
  int id = 0;
  GaussianClientSpec spec;
};

struct SyntheticSource {
  /// Either explicit per-client specs...
  std::vector<SyntheticClient> clients;
  /// ...or one pooled population split by a partition strategy.
  std::optional<GaussianClientSpec> pool;
  std::optional<PartitionStrategy> partition;
  GenerateOptions generate;
};

struct CsvSource {
  std::string path;
  CsvSchema schema;
};

using DatasetSource = std::variant<SyntheticSource, CsvSource>;

enum class AlgorithmKind { standalone, fedavg, fedprox, finetune, fair_fca, fair_flhc };

inline const char* to_string(AlgorithmKind k) noexcept {
  switch (k) {
    case AlgorithmKind::standalone: return "standalone";
    case AlgorithmKind::fedavg: return "fedavg";
    case AlgorithmKind::fedprox: return "fedprox";
    case AlgorithmKind::finetune: return "finetune";
    case AlgorithmKind::fair_fca: return "fair_fca";
    default: return "fair_flhc";
  }
}

struct AlgorithmConfig {
  AlgorithmKind kind = AlgorithmKind::fedavg;
  std::size_t rounds = 50;
  double mu = 0.0;
  std::size_t extra_steps = 0;
  double lr_ft = 0.01;
  /// Standalone training length; defaults to rounds * local epochs.
  std::optional<std::size_t> standalone_epochs;
  // clustered algorithms
  double gamma = 1.0;
  FairnessMetric metric = FairnessMetric::SP;
  std::size_t K = 2;
  std::size_t max_rounds = 100;
  std::size_t stable_rounds = 3;
  std::optional<std::size_t> fixed_rounds;
  std::optional<std::size_t> init_epochs;
  bool global_weight_denominator = false;
  std::size_t k1 = 10;
  std::size_t k2 = 10;
  HCParams hc{Linkage::average, 2, std::nullopt};
};

struct ModelConfig {
  Architecture::Kind kind = Architecture::Kind::linear;
  std::size_t hidden = 0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSource dataset = SyntheticSource{};
  ModelConfig model;
  TrainConfig train;
  AlgorithmConfig algorithm;
  std::size_t runs = 1;
  std::uint64_t base_seed = 0;
  double eval_fraction = 0.2;
  /// The parsed document, echoed into reports.
  json raw = json::object();
};

// ---------------------------------------------------------------------------
// JSON helpers

namespace detail {

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

inline void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(join_path(path, key), "unknown field");
  }
}

inline double number_at(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(path, "must be finite");
  return x;
}

inline std::size_t count_at(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError(path, "expected a non-negative integer");
  return v.get<std::size_t>();
}

inline std::string string_at(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path, "expected a string");
  return v.get<std::string>();
}

inline bool bool_at(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path, "expected true or false");
  return v.get<bool>();
}

template <class F>
auto opt(const json& obj, const char* key, const std::string& path, F read)
    -> std::optional<decltype(read(obj, path))> {
  if (!obj.contains(key)) return std::nullopt;
  return read(obj.at(key), join_path(path, key));
}

inline const json& required(const json& obj, const char* key, const std::string& path) {
  if (!obj.contains(key)) throw ConfigError(join_path(path, key), "missing required field");
  return obj.at(key);
}

template <class F>
auto wrap_validation(const std::string& path, F f) -> decltype(f()) {
  try {
    return f();
  } catch (const ValidationError& e) {
    throw ConfigError(path, e.what());
  }
}

inline PerCell<double> cells_at(const json& v, const std::string& path) {
  PerCell<double> c;
  if (v.is_array()) {
    if (v.size() != 4) throw ConfigError(path, "expected [a1, a0, b1, b0]");
    for (std::size_t i = 0; i < 4; ++i) c[i] = number_at(v[i], path + "[" + std::to_string(i) + "]");
    return c;
  }
  check_keys(v, path, {"a1", "a0", "b1", "b0"});
  c.a1 = number_at(required(v, "a1", path), join_path(path, "a1"));
  c.a0 = number_at(required(v, "a0", path), join_path(path, "a0"));
  c.b1 = number_at(required(v, "b1", path), join_path(path, "b1"));
  c.b0 = number_at(required(v, "b0", path), join_path(path, "b0"));
  return c;
}

}  // namespace detail

/// Gaussian spec object:
///   {"means": [a1,a0,b1,b0] | {"a1":..}, "sigma": 1, "label1_rates": {"a": .5, "b": .5},
///    "group_rates": {"a": .5, "b": .5}, "n_total": N | "n_per_component": n}
inline GaussianClientSpec parse_gaussian_spec(const json& v, const std::string& path) {
  using namespace detail;
  check_keys(v, path, {"means", "sigma", "label1_rates", "group_rates", "n_total", "n_per_component"});
  GaussianClientSpec s;
  s.means = cells_at(required(v, "means", path), join_path(path, "means"));
  s.sigma = opt(v, "sigma", path, number_at).value_or(1.0);
  if (v.contains("label1_rates")) {
    const auto& lr = v.at("label1_rates");
    const auto p = join_path(path, "label1_rates");
    check_keys(lr, p, {"a", "b"});
    s.label_rates.a1 = number_at(required(lr, "a", p), join_path(p, "a"));
    s.label_rates.b1 = number_at(required(lr, "b", p), join_path(p, "b"));
    s.label_rates.a0 = 1.0 - s.label_rates.a1;
    s.label_rates.b0 = 1.0 - s.label_rates.b1;
  }
  if (v.contains("group_rates")) {
    const auto& gr = v.at("group_rates");
    const auto p = join_path(path, "group_rates");
    check_keys(gr, p, {"a", "b"});
    s.group_rate_a = number_at(required(gr, "a", p), join_path(p, "a"));
    s.group_rate_b = number_at(required(gr, "b", p), join_path(p, "b"));
  }
  s.n_total = opt(v, "n_total", path, count_at).value_or(0);
  s.n_per_component = opt(v, "n_per_component", path, count_at);
  wrap_validation(path, [&] { s.validate(); });
  return s;
}

inline json to_json(const GaussianClientSpec& s) {
  json j{{"means", {s.means.a1, s.means.a0, s.means.b1, s.means.b0}},
         {"sigma", s.sigma},
         {"label1_rates", {{"a", s.label_rates.a1}, {"b", s.label_rates.b1}}},
         {"group_rates", {{"a", s.group_rate_a}, {"b", s.group_rate_b}}}};
  if (s.n_per_component) j["n_per_component"] = *s.n_per_component;
  else j["n_total"] = s.n_total;
  return j;
}

namespace detail {

inline PartitionStrategy parse_partition(const json& v, const std::string& path) {
  const std::string strategy = string_at(required(v, "strategy", path), join_path(path, "strategy"));
  if (strategy == "random_even") {
    check_keys(v, path, {"strategy", "k"});
    const std::size_t k = count_at(required(v, "k", path), join_path(path, "k"));
    if (k == 0) throw ConfigError(join_path(path, "k"), "must be >= 1");
    return RandomEven{k};
  }
  if (strategy != "imbalance_recipe") throw ConfigError(join_path(path, "strategy"), "unknown partition strategy");
  check_keys(v, path, {"strategy", "clients"});
  const auto& arr = required(v, "clients", path);
  const auto p = join_path(path, "clients");
  if (!arr.is_array() || arr.empty()) throw ConfigError(p, "expected a non-empty array of quotas");
  ImbalanceRecipe recipe;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto qp = p + "[" + std::to_string(i) + "]";
    check_keys(arr[i], qp, {"a", "b", "a1", "a0", "b1", "b0"});
    ClientQuota q;
    q.group_a = opt(arr[i], "a", qp, count_at);
    q.group_b = opt(arr[i], "b", qp, count_at);
    q.cells.a1 = opt(arr[i], "a1", qp, count_at);
    q.cells.a0 = opt(arr[i], "a0", qp, count_at);
    q.cells.b1 = opt(arr[i], "b1", qp, count_at);
    q.cells.b0 = opt(arr[i], "b0", qp, count_at);
    recipe.clients.push_back(q);
  }
  return recipe;
}

inline DatasetSource parse_dataset(const json& v, const std::string& path) {
  const std::string type = string_at(required(v, "type", path), join_path(path, "type"));
  if (type == "csv") {
    check_keys(v, path, {"type", "path", "label_column", "group_column", "client_column", "group_value_map",
                         "label_value_map"});
    CsvSource src;
    src.path = string_at(required(v, "path", path), join_path(path, "path"));
    src.schema.label_column = opt(v, "label_column", path, string_at).value_or("label");
    src.schema.group_column = opt(v, "group_column", path, string_at).value_or("group");
    src.schema.client_column = opt(v, "client_column", path, string_at);
    const auto gp = join_path(path, "group_value_map");
    const auto& gm = required(v, "group_value_map", path);
    if (!gm.is_object() || gm.empty()) throw ConfigError(gp, "expected a non-empty object");
    for (const auto& [raw, g] : gm.items()) {
      const auto s = string_at(g, join_path(gp, raw));
      if (s != "a" && s != "b") throw ConfigError(join_path(gp, raw), "group must be \"a\" or \"b\"");
      src.schema.group_value_map[raw] = s == "a" ? Group::a : Group::b;
    }
    if (v.contains("label_value_map")) {
      const auto lp = join_path(path, "label_value_map");
      for (const auto& [raw, l] : v.at("label_value_map").items()) {
        const auto n = count_at(l, join_path(lp, raw));
        if (n > 1) throw ConfigError(join_path(lp, raw), "label must be 0 or 1");
        src.schema.label_value_map[raw] = static_cast<int>(n);
      }
    }
    return src;
  }
  if (type != "synthetic") throw ConfigError(join_path(path, "type"), "expected \"synthetic\" or \"csv\"");
  check_keys(v, path, {"type", "clients", "pool", "partition", "dim", "append_group_feature"});
  SyntheticSource src;
  src.generate.dim = opt(v, "dim", path, count_at).value_or(1);
  if (src.generate.dim == 0) throw ConfigError(join_path(path, "dim"), "must be >= 1");
  src.generate.append_group_feature = opt(v, "append_group_feature", path, bool_at).value_or(false);
  const bool has_clients = v.contains("clients");
  const bool has_pool = v.contains("pool");
  if (has_clients == has_pool) throw ConfigError(path, "set exactly one of \"clients\" and \"pool\"");
  if (has_clients) {
    const auto p = join_path(path, "clients");
    const auto& arr = v.at("clients");
    if (!arr.is_array() || arr.empty()) throw ConfigError(p, "expected a non-empty array");
    std::set<int> seen;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const auto cp = p + "[" + std::to_string(i) + "]";
      if (!arr[i].is_object()) throw ConfigError(cp, "expected an object");
      SyntheticClient c;
      c.id = arr[i].contains("id") ? static_cast<int>(count_at(arr[i].at("id"), join_path(cp, "id")))
                                   : static_cast<int>(i);
      if (!seen.insert(c.id).second) throw ConfigError(join_path(cp, "id"), "duplicate client id");
      json spec = arr[i];
      spec.erase("id");
      c.spec = parse_gaussian_spec(spec, cp);
      src.clients.push_back(std::move(c));
    }
    if (v.contains("partition")) throw ConfigError(join_path(path, "partition"), "only valid together with \"pool\"");
  } else {
    src.pool = parse_gaussian_spec(v.at("pool"), join_path(path, "pool"));
    src.partition = parse_partition(required(v, "partition", path), join_path(path, "partition"));
  }
  return src;
}

inline AlgorithmConfig parse_algorithm(const json& v, const std::string& path) {
  AlgorithmConfig a;
  const std::string name = string_at(required(v, "name", path), join_path(path, "name"));
  auto gamma_metric = [&] {
    a.gamma = opt(v, "gamma", path, number_at).value_or(1.0);
    if (!(a.gamma >= 0.0 && a.gamma <= 1.0)) throw ConfigError(join_path(path, "gamma"), "must lie in [0,1]");
    if (v.contains("metric")) {
      const auto mp = join_path(path, "metric");
      a.metric = wrap_validation(mp, [&] { return parse_metric(string_at(v.at("metric"), mp)); });
    }
  };
  auto rounds = [&] {
    a.rounds = opt(v, "rounds", path, count_at).value_or(50);
    if (a.rounds == 0) throw ConfigError(join_path(path, "rounds"), "must be >= 1");
  };
  if (name == "standalone") {
    check_keys(v, path, {"name", "rounds", "epochs"});
    a.kind = AlgorithmKind::standalone;
    rounds();
    a.standalone_epochs = opt(v, "epochs", path, count_at);
    if (a.standalone_epochs && *a.standalone_epochs == 0) throw ConfigError(join_path(path, "epochs"), "must be >= 1");
  } else if (name == "fedavg") {
    check_keys(v, path, {"name", "rounds"});
    a.kind = AlgorithmKind::fedavg;
    rounds();
  } else if (name == "fedprox") {
    check_keys(v, path, {"name", "rounds", "mu"});
    a.kind = AlgorithmKind::fedprox;
    rounds();
    a.mu = number_at(required(v, "mu", path), join_path(path, "mu"));
    if (a.mu < 0.0) throw ConfigError(join_path(path, "mu"), "must be >= 0");
  } else if (name == "finetune") {
    check_keys(v, path, {"name", "rounds", "extra_steps", "lr_ft"});
    a.kind = AlgorithmKind::finetune;
    rounds();
    a.extra_steps = opt(v, "extra_steps", path, count_at).value_or(0);
    a.lr_ft = opt(v, "lr_ft", path, number_at).value_or(0.01);
    if (a.lr_ft < 0.0) throw ConfigError(join_path(path, "lr_ft"), "must be >= 0");
  } else if (name == "fair_fca") {
    check_keys(v, path, {"name", "gamma", "metric", "K", "max_rounds", "stable_rounds", "fixed_rounds",
                         "init_epochs", "global_weight_denominator"});
    a.kind = AlgorithmKind::fair_fca;
    gamma_metric();
    a.K = opt(v, "K", path, count_at).value_or(2);
    a.max_rounds = opt(v, "max_rounds", path, count_at).value_or(100);
    a.stable_rounds = opt(v, "stable_rounds", path, count_at).value_or(3);
    a.fixed_rounds = opt(v, "fixed_rounds", path, count_at);
    a.init_epochs = opt(v, "init_epochs", path, count_at);
    a.global_weight_denominator = opt(v, "global_weight_denominator", path, bool_at).value_or(false);
    if (a.K == 0) throw ConfigError(join_path(path, "K"), "must be >= 1");
    if (a.max_rounds == 0) throw ConfigError(join_path(path, "max_rounds"), "must be >= 1");
    if (a.stable_rounds == 0) throw ConfigError(join_path(path, "stable_rounds"), "must be >= 1");
    if (a.fixed_rounds && *a.fixed_rounds == 0) throw ConfigError(join_path(path, "fixed_rounds"), "must be >= 1");
  } else if (name == "fair_flhc") {
    check_keys(v, path, {"name", "gamma", "metric", "k1", "k2", "hc"});
    a.kind = AlgorithmKind::fair_flhc;
    gamma_metric();
    a.k1 = opt(v, "k1", path, count_at).value_or(10);
    a.k2 = opt(v, "k2", path, count_at).value_or(10);
    if (a.k1 == 0) throw ConfigError(join_path(path, "k1"), "must be >= 1");
    if (a.k2 == 0) throw ConfigError(join_path(path, "k2"), "must be >= 1");
    if (v.contains("hc")) {
      const auto hp = join_path(path, "hc");
      const auto& h = v.at("hc");
      check_keys(h, hp, {"linkage", "target_clusters", "distance_threshold"});
      HCParams hc;
      if (h.contains("linkage"))
        hc.linkage = wrap_validation(join_path(hp, "linkage"),
                                     [&] { return parse_linkage(string_at(h.at("linkage"), join_path(hp, "linkage"))); });
      hc.target_clusters = opt(h, "target_clusters", hp, count_at);
      hc.distance_threshold = opt(h, "distance_threshold", hp, number_at);
      wrap_validation(hp, [&] { hc.validate(); });
      a.hc = hc;
    }
  } else {
    throw ConfigError(join_path(path, "name"), "unknown algorithm '" + name + "'");
  }
  return a;
}

}  // namespace detail

/// Parses and validates a config document. Errors carry the offending field path.
inline ExperimentConfig parse_config(const json& doc) {
  using namespace detail;
  check_keys(doc, "", {"name", "dataset", "model", "train", "algorithm", "runs", "base_seed", "eval_fraction"});
  ExperimentConfig c;
  c.raw = doc;
  c.name = opt(doc, "name", "", string_at).value_or("experiment");
  c.dataset = parse_dataset(required(doc, "dataset", ""), "dataset");
  if (doc.contains("model")) {
    const auto& m = doc.at("model");
    check_keys(m, "model", {"kind", "hidden"});
    const auto kind = opt(m, "kind", "model", string_at).value_or("linear");
    if (kind == "linear") {
      c.model.kind = Architecture::Kind::linear;
      if (m.contains("hidden")) throw ConfigError("model.hidden", "only valid for kind \"mlp\"");
    } else if (kind == "mlp") {
      c.model.kind = Architecture::Kind::mlp;
      c.model.hidden = count_at(required(m, "hidden", "model"), "model.hidden");
      if (c.model.hidden == 0) throw ConfigError("model.hidden", "must be >= 1");
    } else {
      throw ConfigError("model.kind", "expected \"linear\" or \"mlp\"");
    }
  }
  if (doc.contains("train")) {
    const auto& t = doc.at("train");
    check_keys(t, "train", {"epochs", "learning_rate", "batch_size"});
    c.train.epochs = opt(t, "epochs", "train", count_at).value_or(1);
    c.train.learning_rate = opt(t, "learning_rate", "train", number_at).value_or(0.1);
    c.train.batch_size = opt(t, "batch_size", "train", count_at).value_or(32);
    if (c.train.epochs == 0) throw ConfigError("train.epochs", "must be >= 1");
    if (!(c.train.learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be > 0");
    if (c.train.batch_size == 0) throw ConfigError("train.batch_size", "must be >= 1");
  }
  c.algorithm = parse_algorithm(required(doc, "algorithm", ""), "algorithm");
  c.runs = opt(doc, "runs", "", count_at).value_or(1);
  if (c.runs == 0) throw ConfigError("runs", "must be >= 1");
  c.base_seed = doc.contains("base_seed") ? static_cast<std::uint64_t>(count_at(doc.at("base_seed"), "base_seed")) : 0;
  c.eval_fraction = opt(doc, "eval_fraction", "", number_at).value_or(0.2);
  if (!(c.eval_fraction > 0.0 && c.eval_fraction < 1.0)) throw ConfigError("eval_fraction", "must lie in (0,1)");
  if (const auto* syn = std::get_if<SyntheticSource>(&c.dataset)) {
    if (c.algorithm.kind == AlgorithmKind::fair_fca && syn->clients.size() > 0 && c.algorithm.K > syn->clients.size())
      throw ConfigError("algorithm.K", "exceeds the number of clients");
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc);
}

// ---------------------------------------------------------------------------
// Data construction

/// Clients for run `run`. Synthetic data depends only on (base_seed, dataset) so that every
/// algorithm compared on one config family sees identical samples; the run index varies it.
inline std::vector<ClientDataset> build_clients(const ExperimentConfig& cfg, std::size_t run) {
  const std::uint64_t run_seed = derive_seed(cfg.base_seed, {static_cast<std::int64_t>(run)});
  if (const auto* csv = std::get_if<CsvSource>(&cfg.dataset)) return load_csv_dataset(csv->path, csv->schema);
  const auto& syn = std::get<SyntheticSource>(cfg.dataset);
  std::vector<ClientDataset> out;
  if (!syn.clients.empty()) {
    for (const auto& c : syn.clients)
      out.push_back(generate_gaussian_client(c.spec, derive_seed(run_seed, {stream::kData, c.id}), c.id, syn.generate));
    return out;
  }
  const auto pool = generate_gaussian_client(*syn.pool, derive_seed(run_seed, {stream::kData, -1}), 0, syn.generate);
  return partition_clients(pool, *syn.partition, derive_seed(run_seed, {stream::kPartition}));
}

// ---------------------------------------------------------------------------
// Reports

struct ClientResult {
  int client_id = 0;
  std::size_t n_train = 0;
  std::size_t n_eval = 0;
  double accuracy = 0.0;
  AllGaps gaps;
  std::optional<std::size_t> cluster;
};

struct RunResult {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  std::vector<ClientResult> clients;
  std::optional<std::vector<std::vector<int>>> partition;
  std::optional<std::size_t> rounds_executed;
};

struct MetricSummary {
  std::optional<double> mean;
  std::optional<double> std;
  std::size_t defined = 0;
  std::size_t undefined = 0;
};

/// Mean and sample standard deviation over defined values only.
inline MetricSummary summarize(const std::vector<std::optional<double>>& values) {
  MetricSummary s;
  double sum = 0.0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++s.defined;
    } else {
      ++s.undefined;
    }
  }
  if (s.defined == 0) return s;
  const double mean = sum / static_cast<double>(s.defined);
  double ss = 0.0;
  for (const auto& v : values)
    if (v) ss += (*v - mean) * (*v - mean);
  s.mean = mean;
  s.std = s.defined > 1 ? std::sqrt(ss / static_cast<double>(s.defined - 1)) : 0.0;
  return s;
}

struct ResultsReport {
  std::string name;
  AlgorithmKind algorithm = AlgorithmKind::fedavg;
  json config;
  std::vector<RunResult> runs;
  MetricSummary accuracy, sp, eqop, eo;
  /// Per-run means of accuracy and SP gap, for run-to-run spread.
  std::vector<double> run_accuracy;
  std::vector<std::optional<double>> run_sp;
  std::optional<std::vector<std::vector<int>>> modal_partition;
  std::size_t modal_count = 0;
  std::string version = kVersion;

  const MetricSummary& gap_summary(FairnessMetric m) const {
    switch (m) {
      case FairnessMetric::SP: return sp;
      case FairnessMetric::EqOp: return eqop;
      default: return eo;
    }
  }
};

/// Fills the aggregate fields from the per-client rows.
inline void aggregate(ResultsReport& r) {
  std::vector<std::optional<double>> acc, sp, eqop, eo;
  r.run_accuracy.clear();
  r.run_sp.clear();
  std::vector<std::vector<std::vector<int>>> partitions;
  for (const auto& run : r.runs) {
    std::vector<std::optional<double>> run_acc, run_sp;
    for (const auto& c : run.clients) {
      acc.push_back(c.accuracy);
      sp.push_back(c.gaps.sp);
      eqop.push_back(c.gaps.eqop);
      eo.push_back(c.gaps.eo);
      run_acc.push_back(c.accuracy);
      run_sp.push_back(c.gaps.sp);
    }
    r.run_accuracy.push_back(summarize(run_acc).mean.value_or(0.0));
    r.run_sp.push_back(summarize(run_sp).mean);
    if (run.partition) partitions.push_back(*run.partition);
  }
  r.accuracy = summarize(acc);
  r.sp = summarize(sp);
  r.eqop = summarize(eqop);
  r.eo = summarize(eo);
  r.modal_partition.reset();
  r.modal_count = 0;
  for (const auto& p : partitions) {
    const auto n = static_cast<std::size_t>(std::count(partitions.begin(), partitions.end(), p));
    if (n > r.modal_count) {
      r.modal_count = n;
      r.modal_partition = p;
    }
  }
}

namespace detail {

struct Deployed {
  std::vector<ModelParams> models;
  std::vector<std::size_t> clusters;
  std::optional<std::vector<std::vector<int>>> partition;
  std::optional<std::size_t> rounds;
};

inline Deployed run_algorithm(const ExperimentConfig& cfg, std::span<const ClientDataset> train, std::uint64_t seed) {
  const auto& a = cfg.algorithm;
  FederationConfig fed;
  fed.rounds = a.rounds;
  fed.architecture = cfg.model.kind == Architecture::Kind::linear ? Architecture::linear(train.front().dim())
                                                                  : Architecture::mlp(train.front().dim(), cfg.model.hidden);
  fed.local = cfg.train;
  fed.seed = seed;
  Deployed d;
  switch (a.kind) {
    case AlgorithmKind::standalone: {
      fed.local.epochs = a.standalone_epochs.value_or(a.rounds * cfg.train.epochs);
      d.models = run_standalone(train, fed);
      break;
    }
    case AlgorithmKind::fedavg:
    case AlgorithmKind::fedprox: {
      auto r = a.kind == AlgorithmKind::fedavg ? run_fedavg(train, fed) : run_fedprox(train, fed, a.mu);
      d.models.assign(train.size(), r.global);
      d.rounds = r.log.size();
      break;
    }
    case AlgorithmKind::finetune: {
      auto r = run_finetune(train, fed, a.extra_steps, a.lr_ft);
      d.models = std::move(r.personalized);
      d.rounds = r.log.size();
      break;
    }
    case AlgorithmKind::fair_fca: {
      FairFcaConfig fc;
      fc.fed = fed;
      fc.K = a.K;
      fc.gamma = a.gamma;
      fc.metric = a.metric;
      fc.max_rounds = a.max_rounds;
      fc.stable_rounds = a.stable_rounds;
      fc.fixed_rounds = a.fixed_rounds;
      fc.init_epochs = a.init_epochs.value_or(cfg.train.epochs);
      fc.global_weight_denominator = a.global_weight_denominator;
      auto r = run_fair_fca(train, fc);
      d.models = std::move(r.client_models);
      d.clusters = r.state.assignment;
      d.partition = std::move(r.partition);
      d.rounds = r.log.size();
      break;
    }
    case AlgorithmKind::fair_flhc: {
      FairFlhcConfig fc;
      fc.fed = fed;
      fc.k1 = a.k1;
      fc.k2 = a.k2;
      fc.gamma = a.gamma;
      fc.metric = a.metric;
      fc.hc = a.hc;
      auto r = run_fair_flhc(train, fc);
      d.models = std::move(r.client_models);
      d.clusters = r.labels;
      d.partition = std::move(r.partition);
      d.rounds = a.k1 + a.k2;
      break;
    }
  }
  return d;
}

}  // namespace detail

/// Executes every run of `cfg` and evaluates each client's deployed model on its eval split.
inline ResultsReport run_experiment(const ExperimentConfig& cfg) {
  ResultsReport report;
  report.name = cfg.name;
  report.algorithm = cfg.algorithm.kind;
  report.config = cfg.raw;
  for (std::size_t r = 0; r < cfg.runs; ++r) {
    const std::uint64_t run_seed = derive_seed(cfg.base_seed, {static_cast<std::int64_t>(r)});
    try {
      const auto clients = build_clients(cfg, r);
      if (cfg.algorithm.kind == AlgorithmKind::fair_fca && cfg.algorithm.K > clients.size())
        throw ConfigError("algorithm.K", "exceeds the number of clients (" + std::to_string(clients.size()) + ")");
      std::vector<ClientDataset> train, eval;
      for (const auto& c : clients) {
        auto split = train_eval_split(c, cfg.eval_fraction, derive_seed(run_seed, {stream::kSplit, c.client_id()}));
        train.push_back(std::move(split.train));
        eval.push_back(std::move(split.eval));
      }
      const auto deployed = detail::run_algorithm(cfg, train, run_seed);
      RunResult rr;
      rr.run = r;
      rr.seed = run_seed;
      rr.partition = deployed.partition;
      rr.rounds_executed = deployed.rounds;
      for (std::size_t i = 0; i < clients.size(); ++i) {
        const auto e = evaluate(deployed.models[i], eval[i]);
        ClientResult cr;
        cr.client_id = clients[i].client_id();
        cr.n_train = train[i].size();
        cr.n_eval = eval[i].size();
        cr.accuracy = e.accuracy();
        cr.gaps = all_gaps(e.rates);
        if (!deployed.clusters.empty()) cr.cluster = deployed.clusters[i];
        rr.clients.push_back(cr);
      }
      report.runs.push_back(std::move(rr));
    } catch (const ConfigError&) {
      throw;
    } catch (const DivergenceError& e) {
      throw std::runtime_error("run " + std::to_string(r) + ": " + e.what());
    }
  }
  aggregate(report);
  return report;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json summary_json(const MetricSummary& s) {
  return {{"mean", opt_json(s.mean)}, {"std", opt_json(s.std)}, {"defined", s.defined}, {"undefined", s.undefined}};
}

}  // namespace detail

/// JSON schema (schema_version 1):
///   {schema_version, software_version, name, algorithm, config,
///    runs: [{run, seed, rounds_executed?, partition?, clients: [{client_id, n_train, n_eval,
///            accuracy, sp, eqop, eo, cluster?}]}],
///    aggregates: {accuracy|sp|eqop|eo: {mean, std, defined, undefined}},
///    partitions?: {modal, modal_count, runs}}
/// Undefined gaps are null.
inline json report_to_json(const ResultsReport& r) {
  using detail::opt_json;
  json runs = json::array();
  bool any_partition = false;
  for (const auto& run : r.runs) {
    json clients = json::array();
    for (const auto& c : run.clients) {
      json jc{{"client_id", c.client_id}, {"n_train", c.n_train},       {"n_eval", c.n_eval},
              {"accuracy", c.accuracy},   {"sp", opt_json(c.gaps.sp)}, {"eqop", opt_json(c.gaps.eqop)},
              {"eo", opt_json(c.gaps.eo)}};
      if (c.cluster) jc["cluster"] = *c.cluster;
      clients.push_back(std::move(jc));
    }
    json jr{{"run", run.run}, {"seed", run.seed}, {"clients", std::move(clients)}};
    if (run.rounds_executed) jr["rounds_executed"] = *run.rounds_executed;
    if (run.partition) {
      jr["partition"] = *run.partition;
      any_partition = true;
    }
    runs.push_back(std::move(jr));
  }
  json out{{"schema_version", kSchemaVersion},
           {"software_version", r.version},
           {"name", r.name},
           {"algorithm", to_string(r.algorithm)},
           {"config", r.config},
           {"runs", std::move(runs)},
           {"aggregates",
            {{"accuracy", detail::summary_json(r.accuracy)},
             {"sp", detail::summary_json(r.sp)},
             {"eqop", detail::summary_json(r.eqop)},
             {"eo", detail::summary_json(r.eo)}}}};
  if (any_partition) {
    json all = json::array();
    for (const auto& run : r.runs) all.push_back(run.partition ? json(*run.partition) : json(nullptr));
    out["partitions"] = {{"modal", r.modal_partition ? json(*r.modal_partition) : json(nullptr)},
                         {"modal_count", r.modal_count},
                         {"runs", std::move(all)}};
  }
  return out;
}

/// Inverse of report_to_json for the per-client rows; aggregates are recomputed.
inline ResultsReport report_from_json(const json& j) {
  if (j.at("schema_version").get<int>() != kSchemaVersion) throw ValidationError("unsupported report schema_version");
  ResultsReport r;
  r.name = j.at("name").get<std::string>();
  const auto alg = j.at("algorithm").get<std::string>();
  for (auto k : {AlgorithmKind::standalone, AlgorithmKind::fedavg, AlgorithmKind::fedprox, AlgorithmKind::finetune,
                 AlgorithmKind::fair_fca, AlgorithmKind::fair_flhc})
    if (alg == to_string(k)) r.algorithm = k;
  r.config = j.at("config");
  r.version = j.at("software_version").get<std::string>();
  auto gap = [](const json& v) -> std::optional<double> {
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
  };
  for (const auto& jr : j.at("runs")) {
    RunResult run;
    run.run = jr.at("run").get<std::size_t>();
    run.seed = jr.at("seed").get<std::uint64_t>();
    if (jr.contains("rounds_executed")) run.rounds_executed = jr.at("rounds_executed").get<std::size_t>();
    if (jr.contains("partition")) run.partition = jr.at("partition").get<std::vector<std::vector<int>>>();
    for (const auto& jc : jr.at("clients")) {
      ClientResult c;
      c.client_id = jc.at("client_id").get<int>();
      c.n_train = jc.at("n_train").get<std::size_t>();
      c.n_eval = jc.at("n_eval").get<std::size_t>();
      c.accuracy = jc.at("accuracy").get<double>();
      c.gaps = {gap(jc.at("sp")), gap(jc.at("eqop")), gap(jc.at("eo"))};
      if (jc.contains("cluster")) c.cluster = jc.at("cluster").get<std::size_t>();
      run.clients.push_back(c);
    }
    r.runs.push_back(std::move(run));
  }
  aggregate(r);
  return r;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// One row per (run, client); undefined gaps are empty cells.
inline void write_report_csv(std::ostream& os, const ResultsReport& r) {
  auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  os << "run,client_id,n_train,n_eval,accuracy,sp,eqop,eo,cluster\n";
  for (const auto& run : r.runs)
    for (const auto& c : run.clients)
      os << run.run << ',' << c.client_id << ',' << c.n_train << ',' << c.n_eval << ',' << format_double(c.accuracy)
         << ',' << cell(c.gaps.sp) << ',' << cell(c.gaps.eqop) << ',' << cell(c.gaps.eo) << ','
         << (c.cluster ? std::to_string(*c.cluster) : std::string()) << '\n';
}

enum class ReportFormat { json, csv };

inline void emit_report(const ResultsReport& r, const std::string& path, ReportFormat format) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  if (format == ReportFormat::json) out << report_to_json(r).dump(2) << '\n';
  else write_report_csv(out, r);
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Comparison

struct ComparisonRow {
  std::string name;
  AlgorithmKind algorithm = AlgorithmKind::fedavg;
  MetricSummary accuracy, sp, eqop, eo;
};

/// Runs each config; all configs must share the dataset section and base_seed.
inline std::vector<ComparisonRow> compare_algorithms(const std::vector<ExperimentConfig>& configs) {
  if (configs.empty()) throw ValidationError("no configs to compare");
  const auto& ref = configs.front();
  for (std::size_t i = 1; i < configs.size(); ++i) {
    if (configs[i].raw.value("dataset", json()) != ref.raw.value("dataset", json()))
      throw ConfigError("dataset", "config '" + configs[i].name + "' uses a different dataset source");
    if (configs[i].base_seed != ref.base_seed)
      throw ConfigError("base_seed", "config '" + configs[i].name + "' uses a different base_seed");
  }
  std::vector<ComparisonRow> rows;
  for (const auto& c : configs) {
    const auto rep = run_experiment(c);
    rows.push_back({rep.name, rep.algorithm, rep.accuracy, rep.sp, rep.eqop, rep.eo});
  }
  return rows;
}

inline void write_comparison_csv(std::ostream& os, const std::vector<ComparisonRow>& rows) {
  auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  os << "name,algorithm,accuracy_mean,accuracy_std,sp_mean,sp_std,eqop_mean,eqop_std,eo_mean,eo_std\n";
  for (const auto& r : rows)
    os << r.name << ',' << to_string(r.algorithm) << ',' << cell(r.accuracy.mean) << ',' << cell(r.accuracy.std) << ','
       << cell(r.sp.mean) << ',' << cell(r.sp.std) << ',' << cell(r.eqop.mean) << ',' << cell(r.eqop.std) << ','
       << cell(r.eo.mean) << ',' << cell(r.eo.std) << '\n';
}

// ---------------------------------------------------------------------------
// Data emission and analysis

/// Writes samples as CSV: x0..x{d-1}, label, group ("a"/"b"), optionally a leading client column.
inline void write_clients_csv(std::ostream& os, std::span<const ClientDataset> clients, bool with_client_column) {
  if (clients.empty()) throw ValidationError("no clients to write");
  const std::size_t d = clients.front().dim();
  if (with_client_column) os << "client,";
  for (std::size_t j = 0; j < d; ++j) os << 'x' << j << ',';
  os << "label,group\n";
  for (const auto& c : clients) {
    if (c.dim() != d) throw ValidationError("clients disagree on feature dimension");
    for (const auto& s : c.samples()) {
      if (with_client_column) os << c.client_id() << ',';
      for (double x : s.features) os << format_double(x) << ',';
      os << s.label << ',' << to_string(s.group) << '\n';
    }
  }
}

/// Dataset-only document for data generation: {"dataset": {...}, "base_seed": n, "run": r}.
struct DatasetDocument {
  DatasetSource dataset;
  std::uint64_t base_seed = 0;
  std::size_t run = 0;
};

inline DatasetDocument parse_dataset_document(const json& doc) {
  using namespace detail;
  check_keys(doc, "", {"dataset", "base_seed", "run"});
  DatasetDocument d;
  d.dataset = parse_dataset(required(doc, "dataset", ""), "dataset");
  d.base_seed = doc.contains("base_seed") ? static_cast<std::uint64_t>(count_at(doc.at("base_seed"), "base_seed")) : 0;
  d.run = opt(doc, "run", "", count_at).value_or(0);
  return d;
}

inline std::vector<ClientDataset> build_clients(const DatasetDocument& d) {
  ExperimentConfig c;
  c.dataset = d.dataset;
  c.base_seed = d.base_seed;
  return build_clients(c, d.run);
}

/// Scenario document for the analytic module:
///   {"alpha": spec, "beta": spec, "p": 0.5, "global_rule": "loss_minimizer",
///    "metrics": ["SP", "EqOp", "EO"],
///    "curve": {"cluster": "alpha", "metric": "SP", "n_points": 200, "lo": .., "hi": ..}}
/// Specs need no sample counts here.
struct AnalyzeScenario {
  TwoClusterScenario scenario;
  GlobalThresholdRule rule = GlobalThresholdRule::loss_minimizer;
  std::vector<FairnessMetric> metrics{kMetrics.begin(), kMetrics.end()};
  struct Curve {
    bool alpha = true;
    FairnessMetric metric = FairnessMetric::SP;
    std::size_t n_points = 200;
    std::optional<double> lo, hi;
  };
  std::optional<Curve> curve;
};

inline AnalyzeScenario parse_scenario(const json& doc) {
  using namespace detail;
  check_keys(doc, "", {"alpha", "beta", "p", "global_rule", "metrics", "curve"});
  auto spec = [&](const char* key) {
    json v = required(doc, key, "");
    if (v.is_object() && !v.contains("n_total") && !v.contains("n_per_component")) v["n_total"] = 1;
    return parse_gaussian_spec(v, key);
  };
  AnalyzeScenario a;
  a.scenario.alpha = spec("alpha");
  a.scenario.beta = spec("beta");
  a.scenario.p = opt(doc, "p", "", number_at).value_or(0.5);
  if (!(a.scenario.p >= 0.0 && a.scenario.p <= 1.0)) throw ConfigError("p", "must lie in [0,1]");
  if (doc.contains("global_rule"))
    a.rule = wrap_validation("global_rule", [&] { return parse_global_rule(string_at(doc.at("global_rule"), "global_rule")); });
  if (doc.contains("metrics")) {
    const auto& m = doc.at("metrics");
    if (!m.is_array() || m.empty()) throw ConfigError("metrics", "expected a non-empty array");
    a.metrics.clear();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const auto mp = "metrics[" + std::to_string(i) + "]";
      a.metrics.push_back(wrap_validation(mp, [&] { return parse_metric(string_at(m[i], mp)); }));
    }
  }
  if (doc.contains("curve")) {
    const auto& c = doc.at("curve");
    check_keys(c, "curve", {"cluster", "metric", "n_points", "lo", "hi"});
    AnalyzeScenario::Curve cv;
    const auto cluster = opt(c, "cluster", "curve", string_at).value_or("alpha");
    if (cluster != "alpha" && cluster != "beta") throw ConfigError("curve.cluster", "expected \"alpha\" or \"beta\"");
    cv.alpha = cluster == "alpha";
    if (c.contains("metric"))
      cv.metric = wrap_validation("curve.metric", [&] { return parse_metric(string_at(c.at("metric"), "curve.metric")); });
    cv.n_points = opt(c, "n_points", "curve", count_at).value_or(200);
    if (cv.n_points < 2) throw ConfigError("curve.n_points", "must be >= 2");
    cv.lo = opt(c, "lo", "curve", number_at);
    cv.hi = opt(c, "hi", "curve", number_at);
    if (cv.lo.has_value() != cv.hi.has_value()) throw ConfigError("curve", "set both lo and hi or neither");
    if (cv.lo && !(*cv.hi > *cv.lo)) throw ConfigError("curve.hi", "must exceed lo");
    a.curve = cv;
  }
  return a;
}

inline std::vector<GapCurvePoint> scenario_curve(const AnalyzeScenario& a) {
  if (!a.curve) return {};
  const auto& spec = a.curve->alpha ? a.scenario.alpha : a.scenario.beta;
  if (a.curve->lo) return gap_curve(spec, a.curve->metric, *a.curve->lo, *a.curve->hi, a.curve->n_points);
  return gap_curve(spec, a.curve->metric, a.curve->n_points);
}

inline json analyze_to_json(const AnalyzeScenario& a) {
  const auto& sc = a.scenario;
  const double ta = optimal_threshold(sc.alpha);
  const double tb = optimal_threshold(sc.beta);
  const double tg = global_threshold(sc, a.rule);
  json gaps = json::object();
  for (auto m : a.metrics) {
    gaps[to_string(m)] = {
        {"alpha_clustered", analytic_gap(sc.alpha, ta, m)},
        {"alpha_global", analytic_gap(sc.alpha, tg, m)},
        {"beta_clustered", analytic_gap(sc.beta, tb, m)},
        {"beta_global", analytic_gap(sc.beta, tg, m)},
        {"average_clustered", average_gap(sc, m, GapMode::clustered, a.rule)},
        {"average_global", average_gap(sc, m, GapMode::global, a.rule)},
    };
  }
  auto cond = [](const GaussianClientSpec& s) {
    const auto c = sp_condition_check(s);
    return json{{"theta_bar", c.theta_bar}, {"lhs", c.lhs}, {"rhs", c.rhs}, {"label_rates_ok", c.label_rates_ok},
                {"holds", c.holds}};
  };
  const auto ph = critical_cluster_size(sc, a.rule);
  return json{{"schema_version", kSchemaVersion},
              {"software_version", kVersion},
              {"p", sc.p},
              {"global_rule", a.rule == GlobalThresholdRule::loss_minimizer ? "loss_minimizer" : "parameter_average"},
              {"theta_alpha", ta},
              {"theta_beta", tb},
              {"theta_global", tg},
              {"gaps", std::move(gaps)},
              {"sp_condition", {{"alpha", cond(sc.alpha)}, {"beta", cond(sc.beta)}}},
              {"p_hat",
               {{"value", ph.p_hat},
                {"iterations", ph.iterations},
                {"degenerate", ph.degenerate},
                {"zero_denominator", ph.zero_denominator},
                {"capped", ph.capped}}}};
}

}  // namespace fairfl
