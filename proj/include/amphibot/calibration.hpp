#pragma once

// Second-order polynomial maps from estimated magnet location to the
// loads a sensor carries, plus the simulated characterization jig that
// produces their training data.

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "amphibot/magnetics.hpp"
#include <json.hpp>

namespace amphibot::calibration {

class InsufficientSamplesError : public Error {
public:
  using Error::Error;
};

class RankDeficiencyError : public Error {
public:
  RankDeficiencyError(const std::string& what, std::vector<std::string> directions)
      : Error(what), deficient(std::move(directions)) {}
  std::vector<std::string> deficient;
};

class KindMismatchError : public Error {
public:
  using Error::Error;
};

class EmptyEvalError : public Error {
public:
  using Error::Error;
};

/// Raised when evaluation data shares cycles with the training set.
class CycleOverlapError : public Error {
public:
  using Error::Error;
};

enum class SensorKind { Foot, Flow };

std::string to_string(SensorKind kind);
SensorKind sensor_kind_from_string(const std::string& s);

/// Pitch torque (N*mm), yaw torque (N*mm), normal force along x (N).
struct FootWrench {
  double tau_pitch = 0.0;
  double tau_yaw = 0.0;
  double f_x = 0.0;

  FootWrench() = default;
  FootWrench(double pitch, double yaw, double fx);

  FootWrench operator*(double s) const { return {tau_pitch * s, tau_yaw * s, f_x * s}; }
  bool operator==(const FootWrench&) const = default;
};

/// [1, px, py, pz, px^2, py^2, pz^2, px*py, px*pz, py*pz]
using QuadFeatures3 = std::array<double, 10>;
/// [1, dx, dy, dx^2, dy^2, dx*dy]
using QuadFeatures2 = std::array<double, 6>;

QuadFeatures3 quad_features(const Vec3& p);
QuadFeatures2 quad_features(double dx, double dy);

const std::vector<std::string>& feature_names(SensorKind kind);
const std::vector<std::string>& output_names(SensorKind kind);
const std::vector<std::string>& output_units(SensorKind kind);

/// One jig observation. For fin sensors only location.x/.y are used
/// (location change from rest); the reference then holds a single force.
struct CalibrationSample {
  int cycle_id = 0;
  std::string load_type;
  Vec3 location;
  std::vector<double> reference;
};

class CalibrationDataset {
public:
  CalibrationDataset(SensorKind kind, std::vector<CalibrationSample> samples);

  SensorKind kind() const { return kind_; }
  const std::vector<CalibrationSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  std::set<int> cycles() const;

  /// Samples whose cycle id is in `keep`.
  CalibrationDataset subset(const std::set<int>& keep) const;

  void write_csv(std::ostream& out) const;
  static CalibrationDataset read_csv(std::istream& in, SensorKind kind);

private:
  SensorKind kind_;
  std::vector<CalibrationSample> samples_;
};

struct PolyModel {
  SensorKind kind = SensorKind::Foot;
  Eigen::MatrixXd coefficients;  // outputs x features
  std::vector<double> train_rmse;
  std::size_t train_samples = 0;
  std::set<int> train_cycles;

  nlohmann::json to_json() const;
  static PolyModel from_json(const nlohmann::json& j);
};

struct OutputRmse {
  std::string name;
  std::string unit;
  double rmse = 0.0;
};

struct RmseReport {
  std::vector<OutputRmse> outputs;
  std::size_t samples = 0;

  double at(const std::string& name) const;
};

/// Per-output ordinary least squares through a column-pivoted QR.
PolyModel fit_poly(const CalibrationDataset& data);

FootWrench apply_poly(const PolyModel& model, const Vec3& p);
double apply_poly(const PolyModel& model, double dx, double dy);

RmseReport evaluate_rmse(const PolyModel& model, const CalibrationDataset& eval_data);

double reference_torque(double force_n, double lever_mm);

/// Signed rotation about z from the rest magnet location to the current one.
double fin_angle(const magnetics::FlowPose& pose, const magnetics::FlowPose& rest_pose,
                 double min_distance = magnetics::kDefaultMinDistanceMm);

// ---------------------------------------------------------------------------
// Characterization jig

using FootTransduction = std::function<magnetics::MagnetPose(const FootWrench&)>;
using FinTransduction = std::function<magnetics::FlowPose(double force_n)>;

/// One load type of the jig schedule. Each cycle ramps the load-cell force
/// from zero to `max_force_n` and back.
struct JigLoad {
  std::string load_type;  // "force", "pitch", "yaw" for feet; "flow" for fins
  double max_force_n = 1.0;
  int train_cycles = 10;
  int eval_cycles = 2;
};

struct JigConfig {
  std::vector<JigLoad> loads;
  int samples_per_cycle = 60;
  double lever_mm = 19.0;
  double flux_noise_mt = 0.0;
  std::uint64_t seed = 1;
  magnetics::DipoleParams dipole;
};

struct JigResult {
  CalibrationDataset data;
  std::set<int> train_cycles;
  std::set<int> eval_cycles;
  /// Fin jig only: (applied force, estimated fin angle) pairs.
  std::vector<std::pair<double, double>> angle_force;

  CalibrationDataset train() const { return data.subset(train_cycles); }
  CalibrationDataset eval() const { return data.subset(eval_cycles); }
};

JigResult simulate_foot_jig(const FootTransduction& ground_truth, const JigConfig& config);

JigResult simulate_fin_jig(const FinTransduction& ground_truth, const magnetics::FlowPose& rest,
                           const JigConfig& config);

}  // namespace amphibot::calibration
