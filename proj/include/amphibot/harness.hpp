#pragma once

// Trace analysis, metric reports with tolerances, and SVG panels.

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "amphibot/busring.hpp"
#include "amphibot/plant.hpp"
#include "amphibot/trace.hpp"
#include <json.hpp>

namespace amphibot::harness {

class TooShortTraceError : public Error {
public:
  using Error::Error;
};

class EmptyTraceError : public Error {
public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Signal analysis

/// Mean rate of upward mean-crossings, interpolated linearly between samples.
/// Needs at least `min_cycles` full cycles.
double zero_crossing_frequency(const std::vector<double>& t, const std::vector<double>& x, double min_cycles = 5.0);

/// Lag of `b` behind `a` in cycles, wrapped to [-0.5, 0.5), from the peak of
/// the circular cross-correlation over the last whole number of periods.
/// `period` is in samples.
double phase_lag_cycles(const std::vector<double>& a, const std::vector<double>& b, double period);

double rmse(const std::vector<double>& a, const std::vector<double>& b, std::size_t first = 0);
double max_abs(const std::vector<double>& x, std::size_t first = 0);
/// Half the peak-to-peak swing.
double half_range(const std::vector<double>& x, std::size_t first = 0);

/// First index with x < threshold, if any.
std::optional<std::size_t> first_below(const std::vector<double>& x, double threshold, std::size_t first = 0);

// ---------------------------------------------------------------------------
// Metrics

struct Metric {
  std::string name;
  double value = 0.0;
  std::optional<double> lo;  // inclusive bounds; absent means unbounded
  std::optional<double> hi;
  std::string unit;

  bool pass() const;
  std::string tolerance() const;
};

struct MetricsReport {
  std::vector<Metric> metrics;

  Metric& add(std::string name, double value, std::optional<double> lo, std::optional<double> hi,
              std::string unit = "");
  bool all_pass() const;
  const Metric* find(const std::string& name) const;
  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// What a trace is checked against. Absent entries are not measured.
struct Expectations {
  double settle = 5.0;  // s skipped before any steady-state measure
  std::string gait_signal = "gt_q0";
  std::optional<double> gait_frequency_hz;
  double gait_frequency_rel_tol = 0.02;
  std::optional<double> axial_amplitude_deg;
  double axial_amplitude_tol_deg = 1.0;
  std::optional<double> diagonal_lag_max;     // cycles
  std::optional<double> ipsilateral_lag_tol;  // |lag - 0.5| bound, cycles
  std::string phase_source = "gt";
  double foot_rmse_max = 0.3;  // N
  std::optional<double> foot_abs_max;  // N, over the whole trace
  std::optional<double> flow_lag_max;  // cycles
  bool flow_wave_monotone = false;
  std::optional<double> transition_threshold;  // N
  double transition_latency_max = 0.02;        // s
  bool no_transition = false;
  std::optional<double> bus_rate_min_hz;

  static Expectations from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Joint index ahead of each fin, from the fin mounts.
std::array<int, plant::kFins> anterior_joints(const std::array<plant::FlowFinModel, plant::kFins>& fins);

MetricsReport analyze_trace(const Trace& trace, const Expectations& expect,
                            const std::array<int, plant::kFins>& fin_joints = anterior_joints(plant::default_fins()));

void add_bus_metrics(MetricsReport& report, const busring::RingStats& stats, std::optional<double> min_rate_hz);

// ---------------------------------------------------------------------------
// Plots

struct Series {
  std::string column;
  std::string label;
  std::string color;  // empty picks from the palette
  double width = 1.2;
};

struct Panel {
  std::string name;  // output file stem
  std::string title;
  std::string y_label;
  std::vector<Series> series;
  std::optional<double> t0;
  std::optional<double> t1;
};

struct PlotSpec {
  int width = 900;
  int height = 320;
  int max_points = 1500;
  std::vector<Panel> panels;

  static PlotSpec from_json(const nlohmann::json& j);
};

/// One standalone SVG document per panel, as (file stem, document).
std::vector<std::pair<std::string, std::string>> render_plots(const Trace& trace, const PlotSpec& spec);

/// Labelled bar chart, used for per-sensor calibration errors.
std::string render_bars(const std::string& title, const std::string& y_label,
                        const std::vector<std::pair<std::string, double>>& bars);

}  // namespace amphibot::harness
