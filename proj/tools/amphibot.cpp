// amphibot: scenario runner, jig calibration, bus benchmark, trace analysis and plots.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "amphibot/busring.hpp"
#include "amphibot/harness.hpp"
#include "amphibot/plant.hpp"

namespace fs = std::filesystem;
using namespace amphibot;

namespace {

struct Options {
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

int exit_code(const harness::MetricsReport& r) { return r.all_pass() ? 0 : 1; }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json load_json(const std::string& path) {
  std::string text = slurp(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw Error(path + ":" + std::to_string(line) + ":" + std::to_string(col) + ": JSON parse error");
  }
}

fs::path out_dir(const Options& o) {
  fs::path p(o.out);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write '" + p.string() + "'");
  f << content;
}

void write_json(const fs::path& p, const nlohmann::json& j) { write_file(p, j.dump(2) + "\n"); }

plant::Scenario load_scenario(const std::string& path) {
  try {
    return plant::Scenario::from_json(load_json(path));
  } catch (const plant::ScenarioError& e) {
    throw Error(path + ": " + e.what());
  }
}

nlohmann::json report_json(const calibration::RmseReport& r) {
  nlohmann::json j{{"samples", r.samples}};
  for (const auto& o : r.outputs) j[o.name] = {{"rmse", o.rmse}, {"unit", o.unit}};
  return j;
}

nlohmann::json calibration_summary(const plant::SensorCalibration& cal) {
  nlohmann::json feet = nlohmann::json::object(), fins = nlohmann::json::object();
  for (int i = 0; i < plant::kFeet; ++i) feet[plant::foot_names()[i]] = report_json(cal.foot_reports[i]);
  for (int i = 0; i < plant::kFins; ++i) fins[plant::fin_names()[i]] = report_json(cal.fin_reports[i]);
  return {{"feet", feet}, {"fins", fins}};
}

int cmd_run(const std::string& path, const Options& o) {
  plant::Scenario sc = load_scenario(path);
  if (o.seed) sc.seed = *o.seed;
  auto expect = harness::Expectations::from_json(sc.expect);
  auto cal = plant::calibrate_sensors(sc);
  auto result = plant::run_scenario(sc, &cal);

  fs::path dir = out_dir(o);
  {
    std::ofstream f(dir / "trace.csv", std::ios::binary);
    result.trace.write_csv(f, sc.trace_digits);
  }
  auto report = harness::analyze_trace(result.trace, expect, harness::anterior_joints(sc.fins));
  harness::add_bus_metrics(report, result.bus, expect.bus_rate_min_hz);
  nlohmann::json metrics = report.to_json();
  metrics["scenario"] = sc.name;
  metrics["seed"] = sc.seed;
  metrics["inversion_failures"] = result.inversion_failures;
  metrics["transition_time"] = result.transition_time ? nlohmann::json(*result.transition_time) : nlohmann::json();
  write_json(dir / "metrics.json", metrics);
  write_json(dir / "bus.json", result.bus.to_json());
  write_json(dir / "calibration.json", calibration_summary(cal));
  std::cout << report.to_text();
  if (o.verbose)
    std::cerr << "wrote " << result.trace.rows() << " rows x " << result.trace.cols() << " columns to "
              << (dir / "trace.csv").string() << "\n";
  return exit_code(report);
}

int cmd_calibrate(const std::string& path, const Options& o) {
  plant::Scenario sc = load_scenario(path);
  if (o.seed) sc.calibration.seed = *o.seed;
  auto cal = plant::calibrate_sensors(sc);
  fs::path dir = out_dir(o);
  fs::create_directories(dir / "models");
  std::vector<std::pair<std::string, double>> torque_bars, force_bars, fin_bars;
  for (int i = 0; i < plant::kFeet; ++i) {
    const auto& name = plant::foot_names()[i];
    write_json(dir / "models" / (name + ".json"), cal.foot_models[i].to_json());
    const auto& r = cal.foot_reports[i];
    torque_bars.emplace_back(name, 0.5 * (r.at("tau_pitch") + r.at("tau_yaw")));
    force_bars.emplace_back(name, r.at("f_x"));
  }
  for (int i = 0; i < plant::kFins; ++i) {
    const auto& name = plant::fin_names()[i];
    write_json(dir / "models" / (name + ".json"), cal.fin_models[i].to_json());
    fin_bars.emplace_back(name, cal.fin_reports[i].at("force"));
  }
  write_json(dir / "rmse.json", calibration_summary(cal));
  write_file(dir / "rmse_torque.svg", harness::render_bars("Torque estimation RMSE per foot", "N*mm", torque_bars));
  write_file(dir / "rmse_force.svg", harness::render_bars("Force estimation RMSE per foot", "N", force_bars));
  write_file(dir / "rmse_flow.svg", harness::render_bars("Flow force estimation RMSE per fin", "N", fin_bars));

  double tau = 0.0, f = 0.0;
  for (int i = 0; i < plant::kFeet; ++i) {
    tau += torque_bars[i].second / plant::kFeet;
    f += force_bars[i].second / plant::kFeet;
    std::printf("%-4s torque %.3f N*mm  force %.3f N\n", torque_bars[i].first.c_str(), torque_bars[i].second,
                force_bars[i].second);
  }
  std::printf("mean torque %.3f N*mm  mean force %.3f N\n", tau, f);
  return 0;
}

int cmd_bus_bench(const std::string& path, const Options& o) {
  nlohmann::json j = load_json(path);
  int n = j.value("n_modules", 10);
  double duration = j.value("duration", 1.0);
  busring::LineConfig line = j.contains("line") ? busring::LineConfig::from_json(j.at("line")) : busring::LineConfig{};
  busring::FaultPlan faults = j.contains("faults") ? busring::FaultPlan::from_json(j.at("faults")) : busring::FaultPlan{};
  if (o.seed) faults.seed = *o.seed;
  std::optional<double> min_rate;
  if (j.contains("expect") && j.at("expect").contains("bus_rate_min_hz"))
    min_rate = j.at("expect").at("bus_rate_min_hz").get<double>();

  auto stats = busring::simulate_ring(n, line, duration, faults);
  harness::MetricsReport report;
  harness::add_bus_metrics(report, stats, min_rate);
  report.add("bus_rate_nominal", busring::nominal_module_rate(n, line), std::nullopt, std::nullopt, "Hz");

  fs::path dir = out_dir(o);
  nlohmann::json js = stats.to_json();
  write_json(dir / "bus.json", js);
  write_json(dir / "metrics.json", report.to_json());
  std::cout << report.to_text();
  if (o.verbose) std::cerr << js.dump(2) << "\n";
  return exit_code(report);
}

Trace load_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return Trace::read_csv(in);
}

int cmd_analyze(const std::string& path, const std::string& scenario_path, const Options& o) {
  Trace trace = load_trace(path);
  harness::Expectations expect;
  auto joints = harness::anterior_joints(plant::default_fins());
  if (!scenario_path.empty()) {
    plant::Scenario sc = load_scenario(scenario_path);
    expect = harness::Expectations::from_json(sc.expect);
    joints = harness::anterior_joints(sc.fins);
  }
  auto report = harness::analyze_trace(trace, expect, joints);
  write_json(out_dir(o) / "metrics.json", report.to_json());
  std::cout << report.to_text();
  return exit_code(report);
}

int cmd_plot(const std::string& trace_path, const std::string& spec_path, const Options& o) {
  Trace trace = load_trace(trace_path);
  auto spec = harness::PlotSpec::from_json(load_json(spec_path));
  fs::path dir = out_dir(o);
  for (const auto& [name, svg] : harness::render_plots(trace, spec)) {
    write_file(dir / (name + ".svg"), svg);
    if (o.verbose) std::cerr << "wrote " << (dir / (name + ".svg")).string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"amphibot: synthetic sensing and locomotion harness"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--out", o.out, "output directory")->capture_default_str();
  app.add_option("--seed", o.seed, "override the seed of the input config");
  app.add_flag("--verbose", o.verbose, "extra diagnostics on stderr");

  std::string input, second;
  auto* run = app.add_subcommand("run", "run a scenario, write the trace and metrics");
  run->add_option("scenario", input, "scenario JSON")->required();
  auto* calibrate = app.add_subcommand("calibrate", "simulate the jigs and fit calibration models");
  calibrate->add_option("jig", input, "jig JSON")->required();
  auto* bench = app.add_subcommand("bus-bench", "benchmark the sensor ring");
  bench->add_option("line", input, "line JSON")->required();
  auto* analyze = app.add_subcommand("analyze", "compute metrics for a trace CSV");
  analyze->add_option("trace", input, "trace CSV")->required();
  analyze->add_option("--scenario", second, "scenario JSON holding the expectations");
  auto* plot = app.add_subcommand("plot", "render SVG panels from a trace CSV");
  plot->add_option("trace", input, "trace CSV")->required();
  plot->add_option("spec", second, "plot spec JSON")->required();

  // Global options are accepted after the subcommand as well.
  for (auto* sub : {run, calibrate, bench, analyze, plot}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(input, o);
    if (*calibrate) return cmd_calibrate(input, o);
    if (*bench) return cmd_bus_bench(input, o);
    if (*analyze) return cmd_analyze(input, second, o);
    if (*plot) return cmd_plot(input, second, o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
