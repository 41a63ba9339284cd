// fairfl command line: data generation, experiment runs, comparisons, analysis, metrics.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fairfl/fairfl.hpp"

namespace fs = std::filesystem;
using namespace fairfl;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON in '") + path + "': " + e.what());
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  return out;
}

void gen_data(const std::string& spec_path, const std::string& out_dir) {
  const auto doc = parse_dataset_document(read_json_file(spec_path));
  const auto clients = build_clients(doc);
  fs::create_directories(out_dir);
  for (const auto& c : clients) {
    auto out = open_out((fs::path(out_dir) / ("client_" + std::to_string(c.client_id()) + ".csv")).string());
    write_clients_csv(out, std::span<const ClientDataset>(&c, 1), false);
  }
  auto all = open_out((fs::path(out_dir) / "all_clients.csv").string());
  write_clients_csv(all, clients, true);
  std::cout << "wrote " << clients.size() << " clients to " << out_dir << '\n';
}

void run(const std::string& config_path, const std::string& out_path, const std::string& format) {
  const auto cfg = load_config(config_path);
  const auto report = run_experiment(cfg);
  emit_report(report, out_path, format == "csv" ? ReportFormat::csv : ReportFormat::json);
  std::cout << cfg.name << ": accuracy " << report.accuracy.mean.value_or(0.0) << ", sp "
            << (report.sp.mean ? std::to_string(*report.sp.mean) : "undefined") << '\n';
  if (report.modal_partition) std::cout << "modal partition " << json(*report.modal_partition).dump() << '\n';
}

void compare(const std::vector<std::string>& paths, const std::string& out_path) {
  std::vector<ExperimentConfig> configs;
  for (const auto& p : paths) configs.push_back(load_config(p));
  const auto rows = compare_algorithms(configs);
  auto out = open_out(out_path);
  write_comparison_csv(out, rows);
  write_comparison_csv(std::cout, rows);
}

void analyze(const std::string& scenario_path, const std::string& out_path, const std::string& curve_path) {
  const auto sc = parse_scenario(read_json_file(scenario_path));
  auto result = analyze_to_json(sc);
  if (!curve_path.empty()) {
    if (!sc.curve) throw ConfigError("curve", "--curve given but the scenario has no curve section");
    auto out = open_out(curve_path);
    write_gap_curve_csv(out, scenario_curve(sc));
    result["curve_csv"] = curve_path;
  }
  auto out = open_out(out_path);
  out << result.dump(2) << '\n';
  std::cout << result.dump(2) << '\n';
}

// Columns: prediction, label, group (a/b).
void metrics(const std::string& input) {
  std::ifstream in(input);
  if (!in) throw std::runtime_error("cannot open '" + input + "'");
  const auto t = read_csv(in);
  const auto pc = t.column("prediction"), lc = t.column("label"), gc = t.column("group");
  GroupRates rates;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    auto bit = [&](const std::string& v, const char* what) {
      if (v == "0") return 0;
      if (v == "1") return 1;
      throw ParseError(t.lines[r], std::string(what) + " '" + v + "' is not 0 or 1");
    };
    const auto& g = t.rows[r][gc];
    if (g != "a" && g != "b") throw ParseError(t.lines[r], "group '" + g + "' is not a or b");
    rates.add(bit(t.rows[r][pc], "prediction"), bit(t.rows[r][lc], "label"), g == "a" ? Group::a : Group::b);
  }
  const auto gaps = all_gaps(rates);
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json out{{"n", t.rows.size()}, {"sp", opt(gaps.sp)}, {"eqop", opt(gaps.eqop)}, {"eo", opt(gaps.eo)}};
  std::cout << out.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fairfl: locally fair clustered federated learning"};
  app.require_subcommand(1);

  std::string spec, out_dir;
  auto* gen = app.add_subcommand("gen-data", "generate synthetic client CSVs");
  gen->add_option("--spec", spec, "dataset document (JSON)")->required();
  gen->add_option("--out", out_dir, "output directory")->required();

  std::string config, out, format = "json";
  auto* run_cmd = app.add_subcommand("run", "run one experiment config");
  run_cmd->add_option("--config", config)->required();
  run_cmd->add_option("--out", out)->required();
  run_cmd->add_option("--format", format)->check(CLI::IsMember({"json", "csv"}));

  std::vector<std::string> configs;
  std::string cmp_out;
  auto* cmp = app.add_subcommand("compare", "compare algorithms on a shared dataset");
  cmp->add_option("--configs", configs)->required()->expected(1, -1);
  cmp->add_option("--out", cmp_out)->required();

  std::string scenario, an_out, curve;
  auto* an = app.add_subcommand("analyze", "two-cluster analytic quantities");
  an->add_option("--scenario", scenario)->required();
  an->add_option("--out", an_out)->required();
  an->add_option("--curve", curve, "write the scenario's gap curve to this CSV");

  std::string input;
  auto* met = app.add_subcommand("metrics", "fairness gaps of a prediction CSV");
  met->add_option("--input", input)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*gen) gen_data(spec, out_dir);
    else if (*run_cmd) run(config, out, format);
    else if (*cmp) compare(configs, cmp_out);
    else if (*an) analyze(scenario, an_out, curve);
    else if (*met) metrics(input);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
