#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fairfl/harness.hpp"

using namespace fairfl;

namespace {

json base_doc(const std::string& algorithm) {
  return json::parse(R"({
    "name": "t",
    "dataset": {"type": "synthetic", "append_group_feature": true, "clients": [
      {"id": 1, "means": [7, 4, 6, 3], "n_total": 200},
      {"id": 2, "means": [7, 4, 6, 3], "n_total": 160},
      {"id": 3, "means": [10, 7, 9, 6], "n_total": 200},
      {"id": 4, "means": [10, 7, 9, 6], "n_total": 120}]},
    "model": {"kind": "linear"},
    "train": {"epochs": 2, "learning_rate": 0.1, "batch_size": 32},
    "algorithm": {"name": ")" + algorithm + R"(", "rounds": 3},
    "runs": 2,
    "base_seed": 11
  })");
}

std::string error_path(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "";
}

}  // namespace

TEST_CASE("config errors carry field paths") {
  auto d = base_doc("fedavg");
  d["train"]["learning_rate"] = -1;
  CHECK(error_path(d) == "train.learning_rate");
  d = base_doc("fedavg");
  d["algorithm"]["name"] = "sgd";
  CHECK(error_path(d) == "algorithm.name");
  d = base_doc("fedavg");
  d["dataset"]["clients"][1]["means"] = {1, 2};
  CHECK(error_path(d) == "dataset.clients[1].means");
  d = base_doc("fedavg");
  d["dataset"]["clients"][0]["sigma"] = -1.0;
  CHECK(error_path(d) == "dataset.clients[0]");
  d = base_doc("fedavg");
  d["runz"] = 1;
  CHECK(error_path(d) == "runz");
  d = json::parse(R"({"dataset": {"type": "synthetic", "clients": [{"means": [1,0,1,0], "n_total": 10}]},
                      "algorithm": {"name": "fair_fca", "gamma": 2}})");
  CHECK(error_path(d) == "algorithm.gamma");
  d = json::parse(R"({"dataset": {"type": "synthetic", "clients": [{"means": [1,0,1,0], "n_total": 10}]},
                      "algorithm": {"name": "fair_fca", "K": 3}})");
  CHECK(error_path(d) == "algorithm.K");
  d = json::parse(R"({"dataset": {"type": "synthetic", "clients": [{"means": [1,0,1,0], "n_total": 10}]},
                      "algorithm": {"name": "fair_flhc", "hc": {"target_clusters": 2, "distance_threshold": 1}}})");
  CHECK(error_path(d) == "algorithm.hc");
  CHECK(error_path(base_doc("fedavg")).empty());
}

TEST_CASE("single-client standalone report") {
  const auto cfg = parse_config(json::parse(R"({
    "dataset": {"type": "synthetic", "clients": [{"means": [7,4,6,3], "n_total": 100}]},
    "algorithm": {"name": "standalone", "epochs": 5}})"));
  const auto r = run_experiment(cfg);
  REQUIRE(r.runs.size() == 1);
  REQUIRE(r.runs[0].clients.size() == 1);
  CHECK(r.accuracy.defined == 1);
  CHECK(r.sp.defined + r.sp.undefined == 1);
  CHECK(r.eqop.defined + r.eqop.undefined == 1);
  CHECK(r.eo.defined + r.eo.undefined == 1);
}

TEST_CASE("reports are deterministic") {
  const auto cfg = parse_config(base_doc("fedavg"));
  CHECK(report_to_json(run_experiment(cfg)).dump() == report_to_json(run_experiment(cfg)).dump());
}

TEST_CASE("aggregates are recomputable from per-client rows") {
  const auto r = run_experiment(parse_config(base_doc("finetune")));
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& run : r.runs)
    for (const auto& c : run.clients) sum += c.accuracy, ++n;
  CHECK(*r.accuracy.mean == sum / double(n));
  CHECK(r.accuracy.defined == 8);
}

TEST_CASE("json round trip and csv shape") {
  auto doc = base_doc("fair_fca");
  doc["algorithm"] = {{"name", "fair_fca"}, {"gamma", 0.5}, {"max_rounds", 5}};
  const auto r = run_experiment(parse_config(doc));
  const auto j = report_to_json(r);
  CHECK(j["schema_version"] == 1);
  CHECK(j.contains("partitions"));
  const auto back = report_from_json(json::parse(j.dump()));
  CHECK(report_to_json(back) == j);
  std::ostringstream os;
  write_report_csv(os, r);
  const auto text = os.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 2 * 4);
}

TEST_CASE("undefined gaps are null or empty, never zero") {
  ResultsReport r;
  RunResult run;
  ClientResult c;
  c.client_id = 1;
  c.accuracy = 0.5;
  c.gaps = {0.25, std::nullopt, std::nullopt};
  run.clients.push_back(c);
  r.runs.push_back(run);
  aggregate(r);
  CHECK(r.eqop.undefined == 1);
  CHECK_FALSE(r.eqop.mean.has_value());
  const auto j = report_to_json(r);
  CHECK(j["runs"][0]["clients"][0]["eqop"].is_null());
  CHECK(j["aggregates"]["eqop"]["mean"].is_null());
  std::ostringstream os;
  write_report_csv(os, r);
  CHECK(os.str().find("0,1,0,0,0.5,0.25,,,") != std::string::npos);
}

TEST_CASE("compare: fedavg and fedprox with mu = 0 give identical rows") {
  auto prox = base_doc("fedprox");
  prox["algorithm"]["mu"] = 0.0;
  const auto rows = compare_algorithms({parse_config(base_doc("fedavg")), parse_config(prox)});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].accuracy.mean == rows[1].accuracy.mean);
  CHECK(rows[0].sp.mean == rows[1].sp.mean);
  CHECK(rows[0].eo.mean == rows[1].eo.mean);
  const auto one = compare_algorithms({parse_config(base_doc("fedavg"))});
  const auto rep = run_experiment(parse_config(base_doc("fedavg")));
  CHECK(one[0].accuracy.mean == rep.accuracy.mean);
  CHECK(one[0].sp.mean == rep.sp.mean);
}

TEST_CASE("compare rejects mismatched datasets") {
  auto other = base_doc("fedavg");
  other["base_seed"] = 12;
  CHECK_THROWS_AS(compare_algorithms({parse_config(base_doc("fedavg")), parse_config(other)}), ConfigError);
  other = base_doc("fedavg");
  other["dataset"]["clients"][0]["n_total"] = 201;
  CHECK_THROWS_AS(compare_algorithms({parse_config(base_doc("fedavg")), parse_config(other)}), ConfigError);
}

TEST_CASE("pool plus partition recipe") {
  const auto cfg = parse_config(json::parse(R"({
    "dataset": {"type": "synthetic", "pool": {"means": [7,4,6,3], "n_total": 1000},
                "partition": {"strategy": "imbalance_recipe", "clients": [{"a": 100, "b": 100}, {"a": 180, "b": 20}]}},
    "algorithm": {"name": "fedavg", "rounds": 2}})"));
  const auto clients = build_clients(cfg, 0);
  REQUIRE(clients.size() == 2);
  CHECK(clients[1].group_count(Group::a) == 180);
}

TEST_CASE("csv dataset source") {
  const auto dir = std::filesystem::temp_directory_path() / "fairfl_harness_csv";
  std::filesystem::create_directories(dir);
  auto spec = GaussianClientSpec::balanced(7, 4, 6, 3, 1.0, 150);
  std::vector<ClientDataset> cs{generate_gaussian_client(spec, 1, 0), generate_gaussian_client(spec, 2, 1)};
  {
    std::ofstream out(dir / "d.csv");
    write_clients_csv(out, cs, true);
  }
  json doc = {{"dataset",
               {{"type", "csv"},
                {"path", (dir / "d.csv").string()},
                {"client_column", "client"},
                {"group_value_map", {{"a", "a"}, {"b", "b"}}}}},
              {"algorithm", {{"name", "fedavg"}, {"rounds", 3}}}};
  const auto r = run_experiment(parse_config(doc));
  CHECK(r.runs[0].clients.size() == 2);
  CHECK(*r.accuracy.mean > 0.8);
}

TEST_CASE("scenario analysis document") {
  const auto sc = parse_scenario(json::parse(R"({
    "alpha": {"means": [7,4,6,3]}, "beta": {"means": [10,7,9,6]}, "p": 0.6667,
    "curve": {"cluster": "beta", "metric": "EqOp", "n_points": 5}})"));
  const auto j = analyze_to_json(sc);
  CHECK(j["theta_beta"].get<double>() == Catch::Approx(8.0).margin(1e-4));
  CHECK(j["gaps"].contains("SP"));
  CHECK(scenario_curve(sc).size() == 5);
  CHECK_THROWS_AS(parse_scenario(json::parse(R"({"alpha": {"means": [1,0,1,0]}, "beta": {"means": [1,0,1,0]}, "p": 2})")),
                  ConfigError);
}
