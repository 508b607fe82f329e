#pragma once

// Synthetic robot: planar kinematic chain driven by CPG joint targets,
// quasi-static contact and drag forces, elastic transduction to magnet
// poses, and the closed sensing loop through the bus, filters, inversions
// and calibration models.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "amphibot/busring.hpp"
#include "amphibot/calibration.hpp"
#include "amphibot/cpg.hpp"
#include "amphibot/magnetics.hpp"
#include "amphibot/trace.hpp"
#include <json.hpp>

namespace amphibot::plant {

inline constexpr int kFeet = 4;
inline constexpr int kFins = 6;
inline constexpr int kModules = kFeet + kFins;

/// FL, FR, HL, HR
const std::array<std::string, kFeet>& foot_names();
/// Fins on spine links 1, 2, 4, 6, 8 and on the passive tail.
const std::array<std::string, kFins>& fin_names();

class OutOfElasticRangeError : public Error {
public:
  using Error::Error;
};

class ScenarioError : public Error {
public:
  using Error::Error;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Lengths in m. Link 0 is the head; joint k joins link k and link k+1.
struct RobotKinematics {
  double head_length = 0.10;
  std::array<double, cpg::kAxialJoints> link_lengths{0.105, 0.105, 0.105, 0.105, 0.06, 0.06, 0.06, 0.04};
  double tail_length = 0.28;  // passive, rigidly continues link 8
  double leg_length = 0.09;
  double fore_girdle_offset = 0.01;   // along link 1
  double hind_girdle_offset = 0.012;  // along link 5

  /// Snout to hind girdle.
  double snout_vent_length() const;
  double body_length() const;

  struct Pose {
    std::array<Point2, cpg::kAxialJoints> joints;  // joint positions
    std::array<double, cpg::kAxialJoints + 1> heading;  // link headings, head = 0
    std::array<Point2, 4> feet;
    Point2 tail_tip;
  };

  /// Body frame: snout at the origin, head pointing along +x.
  Pose forward_kinematics(const cpg::JointAngles& q) const;
  /// Body-frame point `offset` m behind the start of link `link` (9 = passive tail).
  Point2 point_on_link(const Pose& pose, int link, double offset) const;

  nlohmann::json to_json() const;
  static RobotKinematics from_json(const nlohmann::json& j);
};

/// Foot skin compliance. The magnet sits at `rest` (mm) from the sensor; a
/// normal load pushes it along x, torques rotate it about the sensor origin.
struct ElasticFootModel {
  Vec3 rest{-4.0, 0.0, 0.0};
  double c_force = 0.01;    // mm/N
  double c_pitch = 1.2e-3;  // rad/(N*mm)
  double c_yaw = 1.2e-3;    // rad/(N*mm)
  double max_force_n = 25.0;
  double max_torque_nmm = 150.0;

  ElasticFootModel scaled(double compliance_scale) const;
  void validate() const;
  nlohmann::json to_json() const;
  static ElasticFootModel from_json(const nlohmann::json& j);
};

struct FootDofs {
  double dx = 0.0;     // mm
  double pitch = 0.0;  // rad about y
  double yaw = 0.0;    // rad about z
};

FootDofs foot_dofs(const calibration::FootWrench& w, const ElasticFootModel& model);
magnetics::MagnetPose foot_deflection(const calibration::FootWrench& w, const ElasticFootModel& model);

/// Fin on a torsion spring. Drag F = 0.5 rho C_d A v|v| (N) acts at
/// `lever_mm` from the hinge.
struct FlowFinModel {
  double stiffness_nmm_per_rad = 5.7;
  double lever_mm = 20.0;
  double area_m2 = 0.004;
  double drag_coefficient = 1.5;
  double water_density = 1000.0;
  double max_angle_rad = 0.7;
  magnetics::FlowPose rest{0.0, -3.0, 0.0, 2.0};
  int mount_link = 1;            // 1..8 spine links, 9 = passive tail
  double mount_offset_m = 0.03;  // behind the anterior joint

  int anterior_joint() const;
  double drag(double v_normal) const;
  double angle_from_force(double force_n) const;
  magnetics::FlowPose pose_from_force(double force_n) const;
  void validate() const;

  nlohmann::json to_json() const;
  static FlowFinModel from_json(const nlohmann::json& j);
};

std::array<FlowFinModel, kFins> default_fins();

struct ContactParams {
  double supported_weight_n = 14.0;  // share of body weight carried by the feet
  double stance_threshold_rad = 0.9;   // dorsoventral angle below which a foot bears load
  double stance_smoothing_rad = 0.05;
  double cop_offset_mm = 3.0;
  double friction = 0.15;
  double yaw_lever_mm = 19.0;
  double buoyancy_factor = 2.5;  // supported weight falls to zero at 1/factor of the body over water

  nlohmann::json to_json() const;
  static ContactParams from_json(const nlohmann::json& j);
};

struct Terrain {
  enum class Kind { Floor, Water, Shoreline };
  Kind kind = Kind::Floor;
  double shoreline_x = 0.0;  // water for x >= shoreline_x

  bool is_water(double x) const;
  /// Fraction of the snout-vent length beyond the shoreline.
  double fraction_over_water(double snout_x, double snout_vent_length) const;

  nlohmann::json to_json() const;
  static Terrain from_json(const nlohmann::json& j);
};

/// Stance weight of one foot: smooth ramp of the depth below the threshold.
double stance_weight(double dorsoventral_angle, const ContactParams& params);

/// Foot wrenches for the given stance support. Zero stance feet -> all zero.
std::array<calibration::FootWrench, kFeet> contact_forces(const cpg::JointAngles& q,
                                                         const std::array<bool, kFeet>& on_floor,
                                                         double supported_weight_n, const ContactParams& params);

/// Same, with support derived from kinematics, terrain and buoyancy.
std::array<calibration::FootWrench, kFeet> contact_forces(const cpg::JointAngles& q, const RobotKinematics& kin,
                                                         const Terrain& terrain, double snout_x,
                                                         const ContactParams& params);

/// Lateral flow at each fin in the frame of the link ahead of its anterior
/// joint: v = U sin(theta) + l * dtheta/dt. Dry fins carry no force.
std::array<double, kFins> flow_forces(const cpg::JointAngles& q, const cpg::JointAngles& qdot, double speed,
                                      const std::array<bool, kFins>& wet,
                                      const std::array<FlowFinModel, kFins>& fins);

struct MotionParams {
  double walk_speed = 0.16;  // m/s
  double swim_speed = 0.31;  // m/s
  double start_x = 0.0;      // snout position at t = 0

  nlohmann::json to_json() const;
  static MotionParams from_json(const nlohmann::json& j);
};

struct SensingConfig {
  double flux_noise_mt = 3.3e-3;
  double dipole_nt = 50.0;
  double lowpass_hz = 3.6;
  busring::LineConfig line;
  busring::FaultPlan faults;

  nlohmann::json to_json() const;
  static SensingConfig from_json(const nlohmann::json& j);
};

struct CalibrationConfig {
  std::vector<calibration::JigLoad> foot_loads{{"force", 8.0, 10, 2}, {"pitch", 3.0, 10, 2}, {"yaw", 4.0, 10, 2}};
  std::vector<calibration::JigLoad> fin_loads{{"flow", 0.15, 10, 2}};
  int samples_per_cycle = 60;
  double lever_mm = 19.0;
  std::uint64_t seed = 11;

  nlohmann::json to_json() const;
  static CalibrationConfig from_json(const nlohmann::json& j);
};

struct Scenario {
  std::string name = "scenario";
  double duration = 20.0;  // s
  double dt = 1e-3;
  double warmup = 3.0;  // s of CPG integration before t = 0
  std::uint64_t seed = 1;
  Terrain terrain;
  MotionParams motion;
  cpg::GaitMode initial_mode = cpg::GaitMode::Walking;
  bool feedback = false;
  double control_rate_hz = 50.0;
  int trace_digits = 9;
  cpg::NetworkConfig cpg;
  cpg::TransitionConfig transition;
  RobotKinematics robot;
  ContactParams contact;
  ElasticFootModel foot;
  std::array<double, kFeet> foot_compliance_scale{1.0, 1.0, 1.0, 1.0};
  std::array<FlowFinModel, kFins> fins = default_fins();
  SensingConfig sensing;
  CalibrationConfig calibration;
  /// Analysis settings and tolerances, consumed by the harness.
  nlohmann::json expect = nlohmann::json::object();

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown top-level keys are rejected.
  static Scenario from_json(const nlohmann::json& j);
};

/// Jig-calibrated models for every sensor of a scenario.
struct SensorCalibration {
  std::array<calibration::PolyModel, kFeet> foot_models;
  std::array<calibration::PolyModel, kFins> fin_models;
  std::array<calibration::RmseReport, kFeet> foot_reports;
  std::array<calibration::RmseReport, kFins> fin_reports;
};

SensorCalibration calibrate_sensors(const Scenario& scenario);

struct ScenarioResult {
  Trace trace;
  std::optional<double> transition_time;  // s, first switch to swimming
  busring::RingStats bus;
  std::uint64_t inversion_failures = 0;
};

/// Fixed-step closed loop; see the trace column names for the recorded streams.
ScenarioResult run_scenario(const Scenario& scenario, const SensorCalibration* calibration = nullptr);

}  // namespace amphibot::plant
