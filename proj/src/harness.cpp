#include "amphibot/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

namespace amphibot::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean(const std::vector<double>& x, std::size_t first, std::size_t last) {
  double s = 0.0;
  for (std::size_t i = first; i < last; ++i) s += x[i];
  return s / static_cast<double>(last - first);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double wrap_cycles(double c) {
  c -= std::floor(c + 0.5);
  return c >= 0.5 ? c - 1.0 : c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Signal analysis

double zero_crossing_frequency(const std::vector<double>& t, const std::vector<double>& x, double min_cycles) {
  if (t.size() != x.size()) throw std::invalid_argument("time and signal lengths differ");
  if (x.size() < 3) throw TooShortTraceError("trace too short for a frequency estimate");
  const double m = mean(x, 0, x.size());
  // Hysteresis keeps noise from adding crossings near the mean.
  const double h = 0.25 * half_range(x);
  std::vector<double> crossings;
  bool armed = false;
  for (std::size_t i = 1; i < x.size(); ++i) {
    double prev = x[i - 1] - m, cur = x[i] - m;
    if (cur < -h) armed = true;
    if (armed && prev < 0.0 && cur >= 0.0) {
      crossings.push_back(t[i - 1] + (t[i] - t[i - 1]) * (-prev) / (cur - prev));
      armed = false;
    }
  }
  if (crossings.size() < 2 || static_cast<double>(crossings.size() - 1) < min_cycles)
    throw TooShortTraceError("trace holds " + std::to_string(crossings.empty() ? 0 : crossings.size() - 1) +
                             " cycles, need at least " + fmt("%g", min_cycles));
  return static_cast<double>(crossings.size() - 1) / (crossings.back() - crossings.front());
}

double phase_lag_cycles(const std::vector<double>& a, const std::vector<double>& b, double period) {
  if (a.size() != b.size()) throw std::invalid_argument("signals differ in length");
  if (!(period >= 4.0)) throw std::invalid_argument("period must span at least 4 samples");
  const double whole = std::floor(static_cast<double>(a.size()) / period);
  if (whole < 1.0) throw TooShortTraceError("signal shorter than one period");
  const auto n = static_cast<std::size_t>(std::llround(whole * period));
  const std::size_t off = a.size() - n;
  std::vector<double> u(a.begin() + static_cast<std::ptrdiff_t>(off), a.end());
  std::vector<double> v(b.begin() + static_cast<std::ptrdiff_t>(off), b.end());
  const double mu = mean(u, 0, n), mv = mean(v, 0, n);
  for (auto& x : u) x -= mu;
  for (auto& x : v) x -= mv;

  const auto half = static_cast<long>(std::ceil(period / 2.0)) + 1;
  auto corr = [&](long k) {
    double s = 0.0;
    const auto sn = static_cast<long>(n);
    long shift = ((k % sn) + sn) % sn;
    for (long i = 0; i < sn; ++i) {
      long j = i + shift;
      if (j >= sn) j -= sn;
      s += u[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(j)];
    }
    return s;
  };
  long best = 0;
  double best_c = -std::numeric_limits<double>::infinity();
  for (long k = -half; k <= half; ++k) {
    double c = corr(k);
    if (c > best_c) {
      best_c = c;
      best = k;
    }
  }
  double c0 = corr(best - 1), c2 = corr(best + 1);
  double denom = c0 - 2.0 * best_c + c2;
  double frac = denom < 0.0 ? 0.5 * (c0 - c2) / denom : 0.0;
  return wrap_cycles((static_cast<double>(best) + frac) / period);
}

double rmse(const std::vector<double>& a, const std::vector<double>& b, std::size_t first) {
  if (a.size() != b.size()) throw std::invalid_argument("signals differ in length");
  if (first >= a.size()) throw TooShortTraceError("nothing left to compare");
  double s = 0.0;
  for (std::size_t i = first; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size() - first));
}

double max_abs(const std::vector<double>& x, std::size_t first) {
  double m = 0.0;
  for (std::size_t i = first; i < x.size(); ++i) m = std::max(m, std::abs(x[i]));
  return m;
}

double half_range(const std::vector<double>& x, std::size_t first) {
  if (first >= x.size()) return 0.0;
  auto [lo, hi] = std::minmax_element(x.begin() + static_cast<std::ptrdiff_t>(first), x.end());
  return 0.5 * (*hi - *lo);
}

std::optional<std::size_t> first_below(const std::vector<double>& x, double threshold, std::size_t first) {
  for (std::size_t i = first; i < x.size(); ++i)
    if (x[i] < threshold) return i;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Metrics

bool Metric::pass() const {
  if (std::isnan(value)) return false;
  if (lo && value < *lo) return false;
  if (hi && value > *hi) return false;
  return true;
}

std::string Metric::tolerance() const {
  if (lo && hi) return "[" + fmt("%.6g", *lo) + ", " + fmt("%.6g", *hi) + "]";
  if (lo) return ">= " + fmt("%.6g", *lo);
  if (hi) return "<= " + fmt("%.6g", *hi);
  return "none";
}

Metric& MetricsReport::add(std::string name, double value, std::optional<double> lo, std::optional<double> hi,
                           std::string unit) {
  metrics.push_back({std::move(name), value, lo, hi, std::move(unit)});
  return metrics.back();
}

bool MetricsReport::all_pass() const {
  return std::all_of(metrics.begin(), metrics.end(), [](const Metric& m) { return m.pass(); });
}

const Metric* MetricsReport::find(const std::string& name) const {
  for (const auto& m : metrics)
    if (m.name == name) return &m;
  return nullptr;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& m : metrics) {
    nlohmann::json j{{"name", m.name}, {"unit", m.unit}, {"tolerance", m.tolerance()}, {"pass", m.pass()}};
    j["value"] = std::isfinite(m.value) ? nlohmann::json(m.value) : nlohmann::json(nullptr);
    if (m.lo) j["lo"] = *m.lo;
    if (m.hi) j["hi"] = *m.hi;
    a.push_back(j);
  }
  return {{"metrics", a}, {"pass", all_pass()}};
}

std::string MetricsReport::to_text() const {
  std::ostringstream out;
  for (const auto& m : metrics) {
    char line[256];
    std::snprintf(line, sizeof line, "%-4s %-28s %12.6g %-6s %s\n", m.pass() ? "ok" : "FAIL", m.name.c_str(),
                  m.value, m.unit.c_str(), m.tolerance().c_str());
    out << line;
  }
  return out.str();
}

Expectations Expectations::from_json(const nlohmann::json& j) {
  static const std::set<std::string> keys{
      "settle",          "gait_signal",        "gait_frequency_hz",    "gait_frequency_rel_tol",
      "axial_amplitude_deg", "axial_amplitude_tol_deg", "diagonal_lag_max", "ipsilateral_lag_tol",
      "phase_source",    "foot_rmse_max",      "foot_abs_max",         "flow_lag_max",
      "flow_wave_monotone", "transition_threshold", "transition_latency_max", "no_transition",
      "bus_rate_min_hz"};
  if (!j.is_object()) throw Error("expect: expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!keys.count(it.key())) throw Error("expect: unknown key '" + it.key() + "'");
  Expectations e;
  auto opt = [&](const char* k, std::optional<double>& f) {
    if (j.contains(k)) f = j.at(k).get<double>();
  };
  e.settle = j.value("settle", e.settle);
  e.gait_signal = j.value("gait_signal", e.gait_signal);
  opt("gait_frequency_hz", e.gait_frequency_hz);
  e.gait_frequency_rel_tol = j.value("gait_frequency_rel_tol", e.gait_frequency_rel_tol);
  opt("axial_amplitude_deg", e.axial_amplitude_deg);
  e.axial_amplitude_tol_deg = j.value("axial_amplitude_tol_deg", e.axial_amplitude_tol_deg);
  opt("diagonal_lag_max", e.diagonal_lag_max);
  opt("ipsilateral_lag_tol", e.ipsilateral_lag_tol);
  e.phase_source = j.value("phase_source", e.phase_source);
  if (e.phase_source != "gt" && e.phase_source != "est") throw Error("expect: phase_source must be 'gt' or 'est'");
  e.foot_rmse_max = j.value("foot_rmse_max", e.foot_rmse_max);
  opt("foot_abs_max", e.foot_abs_max);
  opt("flow_lag_max", e.flow_lag_max);
  e.flow_wave_monotone = j.value("flow_wave_monotone", e.flow_wave_monotone);
  opt("transition_threshold", e.transition_threshold);
  e.transition_latency_max = j.value("transition_latency_max", e.transition_latency_max);
  e.no_transition = j.value("no_transition", e.no_transition);
  opt("bus_rate_min_hz", e.bus_rate_min_hz);
  return e;
}

nlohmann::json Expectations::to_json() const {
  nlohmann::json j{{"settle", settle},
                   {"gait_signal", gait_signal},
                   {"gait_frequency_rel_tol", gait_frequency_rel_tol},
                   {"axial_amplitude_tol_deg", axial_amplitude_tol_deg},
                   {"phase_source", phase_source},
                   {"foot_rmse_max", foot_rmse_max},
                   {"flow_wave_monotone", flow_wave_monotone},
                   {"transition_latency_max", transition_latency_max},
                   {"no_transition", no_transition}};
  auto put = [&](const char* k, const std::optional<double>& v) {
    if (v) j[k] = *v;
  };
  put("gait_frequency_hz", gait_frequency_hz);
  put("axial_amplitude_deg", axial_amplitude_deg);
  put("diagonal_lag_max", diagonal_lag_max);
  put("ipsilateral_lag_tol", ipsilateral_lag_tol);
  put("foot_abs_max", foot_abs_max);
  put("flow_lag_max", flow_lag_max);
  put("transition_threshold", transition_threshold);
  put("bus_rate_min_hz", bus_rate_min_hz);
  return j;
}

std::array<int, plant::kFins> anterior_joints(const std::array<plant::FlowFinModel, plant::kFins>& fins) {
  std::array<int, plant::kFins> out{};
  for (int i = 0; i < plant::kFins; ++i) out[i] = fins[i].anterior_joint();
  return out;
}

MetricsReport analyze_trace(const Trace& trace, const Expectations& e, const std::array<int, plant::kFins>& fin_joints) {
  if (trace.rows() == 0) throw EmptyTraceError("trace has no rows");
  const auto& t = trace.column("t");
  if (t.size() < 2) throw TooShortTraceError("trace has a single row");
  const double dt = t[1] - t[0];
  const std::size_t settle = std::lower_bound(t.begin(), t.end(), t.front() + e.settle) - t.begin();
  if (settle >= t.size()) throw TooShortTraceError("trace ends before the settling time");
  auto tail = [&](const std::string& name) {
    const auto& c = trace.column(name);
    return std::vector<double>(c.begin() + static_cast<std::ptrdiff_t>(settle), c.end());
  };
  const std::vector<double> ts = tail("t");
  const auto& feet = plant::foot_names();
  const auto& fins = plant::fin_names();

  MetricsReport r;
  double freq = kNaN;
  if (trace.has(e.gait_signal)) {
    try {
      freq = zero_crossing_frequency(ts, tail(e.gait_signal));
    } catch (const TooShortTraceError&) {
      if (e.gait_frequency_hz || e.diagonal_lag_max || e.ipsilateral_lag_tol || e.flow_lag_max ||
          e.flow_wave_monotone)
        throw;
    }
  }
  if (e.gait_frequency_hz) {
    double f0 = *e.gait_frequency_hz, tol = f0 * e.gait_frequency_rel_tol;
    r.add("gait_frequency", freq, f0 - tol, f0 + tol, "Hz");
  } else if (std::isfinite(freq)) {
    r.add("gait_frequency", freq, std::nullopt, std::nullopt, "Hz");
  }
  const double period = 1.0 / (freq * dt);

  if (e.axial_amplitude_deg) {
    double lo = *e.axial_amplitude_deg - e.axial_amplitude_tol_deg;
    double hi = *e.axial_amplitude_deg + e.axial_amplitude_tol_deg;
    for (int k = 0; k < cpg::kAxialJoints; ++k) {
      double amp = half_range(tail("gt_q" + std::to_string(k))) * 180.0 / std::numbers::pi;
      r.add("axial_amplitude_q" + std::to_string(k), amp, lo, hi, "deg");
    }
  }

  auto force = [&](int foot) { return tail(e.phase_source + "_" + feet[foot] + "_f_x"); };
  if (e.diagonal_lag_max) {
    r.add("diagonal_lag_FL_HR", std::abs(phase_lag_cycles(force(0), force(3), period)), std::nullopt,
          *e.diagonal_lag_max, "cycle");
    r.add("diagonal_lag_FR_HL", std::abs(phase_lag_cycles(force(1), force(2), period)), std::nullopt,
          *e.diagonal_lag_max, "cycle");
  }
  if (e.ipsilateral_lag_tol) {
    double tol = *e.ipsilateral_lag_tol;
    r.add("ipsilateral_lag_FL_HL", std::abs(phase_lag_cycles(force(0), force(2), period)), 0.5 - tol, 0.5 + tol,
          "cycle");
    r.add("ipsilateral_lag_FR_HR", std::abs(phase_lag_cycles(force(1), force(3), period)), 0.5 - tol, 0.5 + tol,
          "cycle");
  }

  for (int f = 0; f < plant::kFeet; ++f) {
    const std::string base = feet[f] + "_f_x";
    if (!trace.has("gt_" + base) || !trace.has("est_" + base)) continue;
    r.add("foot_rmse_" + feet[f], rmse(trace.column("gt_" + base), trace.column("est_" + base), settle),
          std::nullopt, e.foot_rmse_max, "N");
  }
  if (e.foot_abs_max)
    for (int f = 0; f < plant::kFeet; ++f)
      r.add("foot_abs_max_" + feet[f], max_abs(trace.column("est_" + feet[f] + "_f_x")), std::nullopt,
            *e.foot_abs_max, "N");

  if (e.flow_lag_max) {
    for (int i = 0; i < plant::kFins; ++i) {
      auto q = tail("gt_q" + std::to_string(fin_joints[i]));
      r.add("flow_lag_" + fins[i], std::abs(phase_lag_cycles(q, tail("gt_" + fins[i] + "_force"), period)),
            std::nullopt, *e.flow_lag_max, "cycle");
      r.add("flow_lag_est_" + fins[i], std::abs(phase_lag_cycles(q, tail("est_" + fins[i] + "_force"), period)),
            std::nullopt, *e.flow_lag_max, "cycle");
    }
  }
  if (e.flow_wave_monotone) {
    // Fins sharing an anterior joint carry the same phase; keep the first of each.
    std::vector<int> chain;
    std::set<int> seen;
    for (int i = 0; i < plant::kFins; ++i)
      if (seen.insert(fin_joints[i]).second) chain.push_back(i);
    double min_step = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < chain.size(); ++k) {
      double step = phase_lag_cycles(tail("gt_" + fins[chain[k - 1]] + "_force"),
                                     tail("gt_" + fins[chain[k]] + "_force"), period);
      min_step = std::min(min_step, step);
    }
    r.add("flow_wave_min_step", min_step, 1e-6, std::nullopt, "cycle");
  }

  const auto& mode = trace.column("mode");
  if (e.transition_threshold) {
    auto cross = first_below(trace.column("est_foot_sum"), *e.transition_threshold);
    std::optional<std::size_t> sw;
    for (std::size_t i = 0; i < mode.size(); ++i)
      if (mode[i] > 0.5) {
        sw = i;
        break;
      }
    double latency = cross && sw ? t[*sw] - t[*cross] : kNaN;
    r.add("transition_latency", latency, 0.0, e.transition_latency_max + 1e-9, "s");
  }
  if (e.no_transition) {
    double switches = 0.0;
    for (std::size_t i = 1; i < mode.size(); ++i)
      if (mode[i] != mode[i - 1]) switches += 1.0;
    r.add("mode_switches", switches, std::nullopt, 0.0);
  }
  return r;
}

void add_bus_metrics(MetricsReport& report, const busring::RingStats& stats, std::optional<double> min_rate_hz) {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& m : stats.modules) lo = std::min(lo, m.rate_hz);
  if (stats.modules.empty()) lo = 0.0;
  report.add("bus_rate_min", lo, min_rate_hz, std::nullopt, "Hz");
  report.add("bus_undetected_corruptions",
             static_cast<double>(stats.frames_corrupted) - static_cast<double>(stats.corruptions_detected),
             std::nullopt, 0.0);
}

// ---------------------------------------------------------------------------
// Plots

namespace {

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Round step for about `n` ticks across `span`.
double nice_step(double span, int n) {
  double raw = span / n;
  double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double r = raw / mag;
  double s = r < 1.5 ? 1.0 : r < 3.5 ? 2.0 : r < 7.5 ? 5.0 : 10.0;
  return s * mag;
}

// Min/max per bucket keeps the envelope of noisy streams.
std::vector<std::size_t> decimate(const std::vector<double>& y, std::size_t first, std::size_t last,
                                  int max_points) {
  std::vector<std::size_t> idx;
  std::size_t n = last - first;
  if (n <= static_cast<std::size_t>(max_points)) {
    for (std::size_t i = first; i < last; ++i) idx.push_back(i);
    return idx;
  }
  std::size_t buckets = static_cast<std::size_t>(max_points) / 2;
  for (std::size_t b = 0; b < buckets; ++b) {
    std::size_t a = first + n * b / buckets, z = first + n * (b + 1) / buckets;
    std::size_t lo = a, hi = a;
    for (std::size_t i = a; i < z; ++i) {
      if (y[i] < y[lo]) lo = i;
      if (y[i] > y[hi]) hi = i;
    }
    idx.push_back(std::min(lo, hi));
    if (lo != hi) idx.push_back(std::max(lo, hi));
  }
  return idx;
}

struct Frame {
  double w = 0, h = 0;
  double left = 64, right = 150, top = 34, bottom = 44;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (w - left - right); }
  double py(double y) const { return top + (y1 - y) / (y1 - y0) * (h - top - bottom); }
};

void axes(std::ostringstream& o, const Frame& f, const std::string& title, const std::string& x_label,
          const std::string& y_label, bool x_ticks) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" viewBox=\"0 0 %d %d\" "
                "font-family=\"sans-serif\" font-size=\"11\">\n",
                static_cast<int>(f.w), static_cast<int>(f.h), static_cast<int>(f.w), static_cast<int>(f.h));
  o << buf;
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"20\" font-size=\"13\">", f.left);
  o << buf << xml_escape(title) << "</text>\n";
  double pl = f.left, pr = f.w - f.right, pt = f.top, pb = f.h - f.bottom;
  std::snprintf(buf, sizeof buf,
                "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"#333\"/>\n", pl,
                pt, pr - pl, pb - pt);
  o << buf;
  double ys = nice_step(f.y1 - f.y0, 5);
  for (double y = std::ceil(f.y0 / ys) * ys; y <= f.y1 + 1e-12 * ys; y += ys) {
    double v = std::abs(y) < 1e-9 * ys ? 0.0 : y;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.2f\" x2=\"%.1f\" y2=\"%.2f\" stroke=\"#ddd\"/>"
                  "<text x=\"%.1f\" y=\"%.2f\" text-anchor=\"end\">%g</text>\n",
                  pl, f.py(v), pr, f.py(v), pl - 4, f.py(v) + 4, v);
    o << buf;
  }
  if (x_ticks) {
    double xs = nice_step(f.x1 - f.x0, 8);
    for (double x = std::ceil(f.x0 / xs) * xs; x <= f.x1 + 1e-12 * xs; x += xs) {
      std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%.1f\" text-anchor=\"middle\">%g</text>\n", f.px(x),
                    pb + 16, x);
      o << buf;
    }
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">", 0.5 * (pl + pr), f.h - 6);
  o << buf << xml_escape(x_label) << "</text>\n";
  std::snprintf(buf, sizeof buf, "<text transform=\"translate(14 %.1f) rotate(-90)\" text-anchor=\"middle\">",
                0.5 * (pt + pb));
  o << buf << xml_escape(y_label) << "</text>\n";
}

}  // namespace

PlotSpec PlotSpec::from_json(const nlohmann::json& j) {
  PlotSpec s;
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  s.max_points = j.value("max_points", s.max_points);
  if (s.width < 200 || s.height < 120 || s.max_points < 10) throw Error("plotspec: canvas or point budget too small");
  for (const auto& pj : j.at("panels")) {
    Panel p;
    p.name = pj.at("name").get<std::string>();
    p.title = pj.value("title", p.name);
    p.y_label = pj.value("y_label", "");
    if (pj.contains("t0")) p.t0 = pj.at("t0").get<double>();
    if (pj.contains("t1")) p.t1 = pj.at("t1").get<double>();
    for (const auto& sj : pj.at("series")) {
      Series se;
      if (sj.is_string()) {
        se.column = sj.get<std::string>();
      } else {
        se.column = sj.at("column").get<std::string>();
        se.label = sj.value("label", "");
        se.color = sj.value("color", "");
        se.width = sj.value("width", se.width);
      }
      if (se.label.empty()) se.label = se.column;
      p.series.push_back(se);
    }
    if (p.series.empty()) throw Error("plotspec: panel '" + p.name + "' has no series");
    s.panels.push_back(p);
  }
  return s;
}

std::vector<std::pair<std::string, std::string>> render_plots(const Trace& trace, const PlotSpec& spec) {
  if (trace.rows() == 0) throw EmptyTraceError("cannot plot an empty trace");
  const auto& t = trace.column("t");
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& p : spec.panels) {
    double ta = p.t0.value_or(t.front()), tb = p.t1.value_or(t.back());
    std::size_t first = std::lower_bound(t.begin(), t.end(), ta) - t.begin();
    std::size_t last = std::upper_bound(t.begin(), t.end(), tb) - t.begin();
    if (last <= first + 1) throw EmptyTraceError("panel '" + p.name + "' selects fewer than two rows");

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : p.series) {
      const auto& y = trace.column(s.column);
      for (std::size_t i = first; i < last; ++i) {
        lo = std::min(lo, y[i]);
        hi = std::max(hi, y[i]);
      }
    }
    if (hi - lo < 1e-12) {
      lo -= 1.0;
      hi += 1.0;
    }
    double pad = 0.05 * (hi - lo);
    Frame f;
    f.w = spec.width;
    f.h = spec.height;
    f.x0 = t[first];
    f.x1 = t[last - 1];
    f.y0 = lo - pad;
    f.y1 = hi + pad;

    std::ostringstream o;
    axes(o, f, p.title, "time (s)", p.y_label, true);
    char buf[128];
    for (std::size_t k = 0; k < p.series.size(); ++k) {
      const auto& s = p.series[k];
      const auto& y = trace.column(s.column);
      std::string color = s.color.empty() ? kPalette[k % std::size(kPalette)] : s.color;
      o << "<polyline fill=\"none\" stroke=\"" << xml_escape(color) << "\" stroke-width=\"" << fmt("%g", s.width)
        << "\" points=\"";
      bool sep = false;
      for (std::size_t i : decimate(y, first, last, spec.max_points)) {
        std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", sep ? " " : "", f.px(t[i]), f.py(y[i]));
        o << buf;
        sep = true;
      }
      o << "\"/>\n";
      double ly = f.top + 14.0 * static_cast<double>(k) + 8.0;
      double lx = f.w - f.right + 10.0;
      std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"", lx, ly,
                    lx + 18, ly);
      o << buf << xml_escape(color) << "\" stroke-width=\"2\"/>";
      std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\">", lx + 22, ly + 4);
      o << buf << xml_escape(s.label) << "</text>\n";
    }
    o << "</svg>\n";
    out.emplace_back(p.name, o.str());
  }
  return out;
}

std::string render_bars(const std::string& title, const std::string& y_label,
                        const std::vector<std::pair<std::string, double>>& bars) {
  if (bars.empty()) throw EmptyTraceError("no bars to draw");
  double hi = 0.0;
  for (const auto& b : bars) hi = std::max(hi, b.second);
  if (hi <= 0.0) hi = 1.0;
  Frame f;
  f.w = std::max(320.0, 90.0 * static_cast<double>(bars.size()) + 120.0);
  f.h = 300.0;
  f.right = 20;
  f.x0 = 0.0;
  f.x1 = static_cast<double>(bars.size());
  f.y0 = 0.0;
  f.y1 = hi * 1.15;
  std::ostringstream o;
  axes(o, f, title, "", y_label, false);
  char buf[256];
  for (std::size_t i = 0; i < bars.size(); ++i) {
    double xa = f.px(static_cast<double>(i) + 0.2), xb = f.px(static_cast<double>(i) + 0.8);
    double ya = f.py(bars[i].second), yb = f.py(0.0);
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"%s\"/>"
                  "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\">%.3g</text>",
                  xa, ya, xb - xa, yb - ya, kPalette[i % std::size(kPalette)], 0.5 * (xa + xb), ya - 4,
                  bars[i].second);
    o << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\">", 0.5 * (xa + xb), yb + 16);
    o << buf << xml_escape(bars[i].first) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace amphibot::harness
