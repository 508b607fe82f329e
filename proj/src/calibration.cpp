#include "amphibot/calibration.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

namespace amphibot::calibration {

namespace {

constexpr double kRankThreshold = 1e-10;

std::size_t feature_count(SensorKind kind) { return kind == SensorKind::Foot ? 10 : 6; }
std::size_t output_count(SensorKind kind) { return kind == SensorKind::Foot ? 3 : 1; }

Eigen::VectorXd features_of(SensorKind kind, const Vec3& location) {
  if (kind == SensorKind::Foot) {
    const QuadFeatures3 f = quad_features(location);
    return Eigen::Map<const Eigen::VectorXd>(f.data(), 10);
  }
  const QuadFeatures2 f = quad_features(location.x, location.y);
  return Eigen::Map<const Eigen::VectorXd>(f.data(), 6);
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

std::string to_string(SensorKind kind) { return kind == SensorKind::Foot ? "foot" : "flow"; }

SensorKind sensor_kind_from_string(const std::string& s) {
  if (s == "foot") return SensorKind::Foot;
  if (s == "flow") return SensorKind::Flow;
  throw KindMismatchError("unknown sensor kind '" + s + "'");
}

FootWrench::FootWrench(double pitch, double yaw, double fx) : tau_pitch(pitch), tau_yaw(yaw), f_x(fx) {
  if (!std::isfinite(pitch) || !std::isfinite(yaw) || !std::isfinite(fx))
    throw std::invalid_argument("FootWrench: non-finite component");
}

QuadFeatures3 quad_features(const Vec3& p) {
  return {1.0, p.x, p.y, p.z, p.x * p.x, p.y * p.y, p.z * p.z, p.x * p.y, p.x * p.z, p.y * p.z};
}

QuadFeatures2 quad_features(double dx, double dy) {
  return {1.0, dx, dy, dx * dx, dy * dy, dx * dy};
}

const std::vector<std::string>& feature_names(SensorKind kind) {
  static const std::vector<std::string> foot{"1",     "p_x",   "p_y",     "p_z",     "p_x^2",
                                             "p_y^2", "p_z^2", "p_x*p_y", "p_x*p_z", "p_y*p_z"};
  static const std::vector<std::string> flow{"1", "dp_x", "dp_y", "dp_x^2", "dp_y^2", "dp_x*dp_y"};
  return kind == SensorKind::Foot ? foot : flow;
}

const std::vector<std::string>& output_names(SensorKind kind) {
  static const std::vector<std::string> foot{"tau_pitch", "tau_yaw", "f_x"};
  static const std::vector<std::string> flow{"force"};
  return kind == SensorKind::Foot ? foot : flow;
}

const std::vector<std::string>& output_units(SensorKind kind) {
  static const std::vector<std::string> foot{"N*mm", "N*mm", "N"};
  static const std::vector<std::string> flow{"N"};
  return kind == SensorKind::Foot ? foot : flow;
}

// ---------------------------------------------------------------------------

CalibrationDataset::CalibrationDataset(SensorKind kind, std::vector<CalibrationSample> samples)
    : kind_(kind), samples_(std::move(samples)) {
  for (const auto& s : samples_)
    if (s.reference.size() != output_count(kind_))
      throw KindMismatchError("sample reference has " + std::to_string(s.reference.size()) +
                              " outputs, expected " + std::to_string(output_count(kind_)));
}

std::set<int> CalibrationDataset::cycles() const {
  std::set<int> out;
  for (const auto& s : samples_) out.insert(s.cycle_id);
  return out;
}

CalibrationDataset CalibrationDataset::subset(const std::set<int>& keep) const {
  std::vector<CalibrationSample> out;
  for (const auto& s : samples_)
    if (keep.count(s.cycle_id)) out.push_back(s);
  return CalibrationDataset(kind_, std::move(out));
}

void CalibrationDataset::write_csv(std::ostream& out) const {
  if (kind_ == SensorKind::Foot)
    out << "cycle_id,load_type,p_x,p_y,p_z,ref_tau_pitch,ref_tau_yaw,ref_f_x\n";
  else
    out << "cycle_id,load_type,dp_x,dp_y,ref_force\n";
  for (const auto& s : samples_) {
    out << s.cycle_id << ',' << s.load_type << ',' << fmt_double(s.location.x) << ','
        << fmt_double(s.location.y);
    if (kind_ == SensorKind::Foot) out << ',' << fmt_double(s.location.z);
    for (double r : s.reference) out << ',' << fmt_double(r);
    out << '\n';
  }
}

CalibrationDataset CalibrationDataset::read_csv(std::istream& in, SensorKind kind) {
  std::string line;
  if (!std::getline(in, line)) throw Error("calibration CSV: missing header");
  const std::size_t columns = kind == SensorKind::Foot ? 8 : 5;
  if (split_csv_line(line).size() != columns)
    throw KindMismatchError("calibration CSV header does not match sensor kind " + to_string(kind));
  std::vector<CalibrationSample> samples;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != columns)
      throw Error("calibration CSV line " + std::to_string(line_no) + ": expected " +
                  std::to_string(columns) + " columns");
    CalibrationSample s;
    try {
      s.cycle_id = std::stoi(cells[0]);
      s.load_type = cells[1];
      if (kind == SensorKind::Foot) {
        s.location = Vec3(std::stod(cells[2]), std::stod(cells[3]), std::stod(cells[4]));
        s.reference = {std::stod(cells[5]), std::stod(cells[6]), std::stod(cells[7])};
      } else {
        s.location = Vec3(std::stod(cells[2]), std::stod(cells[3]), 0.0);
        s.reference = {std::stod(cells[4])};
      }
    } catch (const std::logic_error& e) {
      throw Error("calibration CSV line " + std::to_string(line_no) + ": " + e.what());
    }
    samples.push_back(std::move(s));
  }
  return CalibrationDataset(kind, std::move(samples));
}

// ---------------------------------------------------------------------------

nlohmann::json PolyModel::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind);
  j["features"] = feature_names(kind);
  j["outputs"] = output_names(kind);
  auto& rows = j["coefficients"] = nlohmann::json::array();
  for (Eigen::Index r = 0; r < coefficients.rows(); ++r) {
    std::vector<double> row(coefficients.cols());
    for (Eigen::Index c = 0; c < coefficients.cols(); ++c) row[c] = coefficients(r, c);
    rows.push_back(row);
  }
  j["train_rmse"] = train_rmse;
  j["train_samples"] = train_samples;
  j["train_cycles"] = train_cycles;
  return j;
}

PolyModel PolyModel::from_json(const nlohmann::json& j) {
  PolyModel m;
  m.kind = sensor_kind_from_string(j.at("kind").get<std::string>());
  if (j.at("features").get<std::vector<std::string>>() != feature_names(m.kind))
    throw KindMismatchError("model feature ordering does not match " + to_string(m.kind));
  const auto rows = j.at("coefficients").get<std::vector<std::vector<double>>>();
  if (rows.size() != output_count(m.kind))
    throw KindMismatchError("model output count does not match " + to_string(m.kind));
  m.coefficients.resize(static_cast<Eigen::Index>(rows.size()),
                        static_cast<Eigen::Index>(feature_count(m.kind)));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != feature_count(m.kind))
      throw KindMismatchError("model coefficient row has the wrong feature count");
    for (std::size_t c = 0; c < rows[r].size(); ++c) m.coefficients(r, c) = rows[r][c];
  }
  m.train_rmse = j.value("train_rmse", std::vector<double>{});
  m.train_samples = j.value("train_samples", std::size_t{0});
  m.train_cycles = j.value("train_cycles", std::set<int>{});
  return m;
}

double RmseReport::at(const std::string& name) const {
  for (const auto& o : outputs)
    if (o.name == name) return o.rmse;
  throw std::out_of_range("RmseReport: no output named " + name);
}

// ---------------------------------------------------------------------------

PolyModel fit_poly(const CalibrationDataset& data) {
  const SensorKind kind = data.kind();
  const auto nf = static_cast<Eigen::Index>(feature_count(kind));
  const auto no = static_cast<Eigen::Index>(output_count(kind));
  const auto n = static_cast<Eigen::Index>(data.size());
  if (n < nf)
    throw InsufficientSamplesError(std::to_string(n) + " samples cannot determine " +
                                   std::to_string(nf) + " " + to_string(kind) + " coefficients");

  Eigen::MatrixXd x(n, nf);
  Eigen::MatrixXd y(n, no);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = data.samples()[i];
    x.row(i) = features_of(kind, s.location).transpose();
    for (Eigen::Index k = 0; k < no; ++k) y(i, k) = s.reference[k];
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(kRankThreshold);
  if (qr.rank() < nf) {
    std::vector<std::string> deficient;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index i = qr.rank(); i < nf; ++i) deficient.push_back(feature_names(kind)[perm(i)]);
    std::string msg = "feature matrix has rank " + std::to_string(qr.rank()) + " < " +
                      std::to_string(nf) + "; unresolved directions:";
    for (const auto& d : deficient) msg += " " + d;
    throw RankDeficiencyError(msg, deficient);
  }

  PolyModel model;
  model.kind = kind;
  model.coefficients = qr.solve(y).transpose();
  const Eigen::MatrixXd resid = x * model.coefficients.transpose() - y;
  for (Eigen::Index k = 0; k < no; ++k)
    model.train_rmse.push_back(std::sqrt(resid.col(k).squaredNorm() / static_cast<double>(n)));
  model.train_samples = static_cast<std::size_t>(n);
  model.train_cycles = data.cycles();
  return model;
}

FootWrench apply_poly(const PolyModel& model, const Vec3& p) {
  if (model.kind != SensorKind::Foot)
    throw KindMismatchError("apply_poly: foot input given to a flow model");
  const Eigen::Vector3d out = model.coefficients * features_of(SensorKind::Foot, p);
  return {out(0), out(1), out(2)};
}

double apply_poly(const PolyModel& model, double dx, double dy) {
  if (model.kind != SensorKind::Flow)
    throw KindMismatchError("apply_poly: flow input given to a foot model");
  const QuadFeatures2 f = quad_features(dx, dy);
  return model.coefficients.row(0).dot(Eigen::Map<const Eigen::VectorXd>(f.data(), 6));
}

RmseReport evaluate_rmse(const PolyModel& model, const CalibrationDataset& eval_data) {
  if (eval_data.kind() != model.kind)
    throw KindMismatchError("evaluate_rmse: dataset kind differs from model kind");
  if (eval_data.size() == 0) throw EmptyEvalError("evaluate_rmse: no evaluation samples");
  for (int c : eval_data.cycles())
    if (model.train_cycles.count(c))
      throw CycleOverlapError("evaluation cycle " + std::to_string(c) +
                              " was also used for training");

  const std::size_t no = output_count(model.kind);
  std::vector<double> sum2(no, 0.0);
  for (const auto& s : eval_data.samples()) {
    const Eigen::VectorXd pred = model.coefficients * features_of(model.kind, s.location);
    for (std::size_t k = 0; k < no; ++k) {
      const double e = pred(static_cast<Eigen::Index>(k)) - s.reference[k];
      sum2[k] += e * e;
    }
  }
  RmseReport report;
  report.samples = eval_data.size();
  for (std::size_t k = 0; k < no; ++k)
    report.outputs.push_back({output_names(model.kind)[k], output_units(model.kind)[k],
                              std::sqrt(sum2[k] / static_cast<double>(eval_data.size()))});
  return report;
}

double reference_torque(double force_n, double lever_mm) {
  if (!(lever_mm > 0.0)) throw std::invalid_argument("reference_torque: lever must be positive");
  return force_n * lever_mm;
}

double fin_angle(const magnetics::FlowPose& pose, const magnetics::FlowPose& rest_pose,
                 double min_distance) {
  if (std::hypot(pose.p_x, pose.p_y) < min_distance ||
      std::hypot(rest_pose.p_x, rest_pose.p_y) < min_distance)
    throw magnetics::DegeneratePoseError("fin_angle: magnet too close to the rotation axis");
  const double cross = rest_pose.p_x * pose.p_y - rest_pose.p_y * pose.p_x;
  const double dot = rest_pose.p_x * pose.p_x + rest_pose.p_y * pose.p_y;
  return std::atan2(cross, dot);
}

// ---------------------------------------------------------------------------

namespace {

// Triangular ramp 0 -> 1 -> 0 across a cycle.
double ramp(int k, int n) {
  const double u = n > 1 ? static_cast<double>(k) / (n - 1) : 0.0;
  return 1.0 - std::abs(2.0 * u - 1.0);
}

// Load-cell force applied at a contact point. The contact geometry of each
// cycle is drawn once so that the three outputs are exercised jointly.
struct Contact {
  double sign_a;
  double sign_b;
  double offset_mm;    // centre-of-pressure offset for normal loads
  double tangential;   // tangential/normal force ratio
  double preload;      // normal/tangential ratio for yaw loading
};

FootWrench jig_wrench(const std::string& type, double force, const Contact& c, double lever) {
  if (type == "force")
    return {c.sign_a * reference_torque(force, c.offset_mm),
            c.sign_b * reference_torque(c.tangential * force, lever), force};
  if (type == "pitch")
    return {c.sign_a * reference_torque(force, lever),
            c.sign_b * reference_torque(c.tangential * force, lever), force};
  if (type == "yaw") {
    const double normal = c.preload * force;
    return {c.sign_b * reference_torque(normal, c.offset_mm),
            c.sign_a * reference_torque(force, lever), normal};
  }
  throw Error("jig: unknown foot load type '" + type + "'");
}

}  // namespace

JigResult simulate_foot_jig(const FootTransduction& ground_truth, const JigConfig& config) {
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  std::vector<CalibrationSample> samples;
  std::set<int> train, eval;
  int cycle_id = 0;
  for (const auto& load : config.loads) {
    if (load.train_cycles < 1 || load.eval_cycles < 0)
      throw Error("jig: load type '" + load.load_type + "' needs at least one training cycle");
    const int cycles = load.train_cycles + load.eval_cycles;
    for (int c = 0; c < cycles; ++c, ++cycle_id) {
      (c < load.train_cycles ? train : eval).insert(cycle_id);
      Contact contact{};
      contact.sign_a = (c % 2 == 0) ? 1.0 : -1.0;
      contact.sign_b = uni(rng) < 0.5 ? 1.0 : -1.0;
      contact.offset_mm = 0.5 + 3.5 * uni(rng);
      contact.tangential = 0.2 * uni(rng);
      contact.preload = 1.0 + 2.0 * uni(rng);
      for (int k = 0; k < config.samples_per_cycle; ++k) {
        const double force = load.max_force_n * ramp(k, config.samples_per_cycle);
        const FootWrench w = jig_wrench(load.load_type, force, contact, config.lever_mm);
        const magnetics::MagnetPose pose = ground_truth(w);
        Vec3 b = magnetics::dipole_flux(pose, config.dipole);
        if (config.flux_noise_mt > 0.0)
          b += config.flux_noise_mt * Vec3(noise(rng), noise(rng), noise(rng));
        const Vec3 p = magnetics::invert_foot_flux(b, config.dipole);
        samples.push_back({cycle_id, load.load_type, p, {w.tau_pitch, w.tau_yaw, w.f_x}});
      }
    }
  }
  return {CalibrationDataset(SensorKind::Foot, std::move(samples)), train, eval, {}};
}

JigResult simulate_fin_jig(const FinTransduction& ground_truth, const magnetics::FlowPose& rest,
                           const JigConfig& config) {
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<CalibrationSample> samples;
  std::vector<std::pair<double, double>> angle_force;
  std::set<int> train, eval;
  int cycle_id = 0;
  for (const auto& load : config.loads) {
    const int cycles = load.train_cycles + load.eval_cycles;
    for (int c = 0; c < cycles; ++c, ++cycle_id) {
      (c < load.train_cycles ? train : eval).insert(cycle_id);
      const int n = config.samples_per_cycle;
      for (int k = 0; k < n; ++k) {
        // Full sweep in both flow directions.
        const double u = static_cast<double>(k) / n;
        const double force = load.max_force_n * std::sin(2.0 * std::numbers::pi * u);
        const magnetics::FlowPose pose = ground_truth(force);
        Vec3 b = magnetics::flow_flux(pose, config.dipole);
        if (config.flux_noise_mt > 0.0)
          b += config.flux_noise_mt * Vec3(noise(rng), noise(rng), noise(rng));
        const magnetics::FlowPose est =
            magnetics::invert_flow_flux(b, rest.d_z0, config.dipole, rest);
        samples.push_back(
            {cycle_id, load.load_type, Vec3(est.p_x - rest.p_x, est.p_y - rest.p_y, 0.0), {force}});
        angle_force.emplace_back(force, fin_angle(est, rest));
      }
    }
  }
  return {CalibrationDataset(SensorKind::Flow, std::move(samples)), train, eval,
          std::move(angle_force)};
}

}  // namespace amphibot::calibration
