#include "amphibot/plant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

namespace amphibot::plant {

namespace {

constexpr double kPi = std::numbers::pi;

Point2 back(double heading) { return {-std::cos(heading), -std::sin(heading)}; }
Point2 add(Point2 a, Point2 d, double s) { return {a.x + s * d.x, a.y + s * d.y}; }

double softplus(double x, double s) {
  double u = x / s;
  if (u > 30.0) return x;
  return s * std::log1p(std::exp(u));
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ScenarioError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ScenarioError(where + ": unknown key '" + it.key() + "'");
}

nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x, v.y, v.z}); }
Vec3 vec_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw ScenarioError("expected a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

nlohmann::json loads_json(const std::vector<calibration::JigLoad>& loads) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& l : loads)
    a.push_back({{"load_type", l.load_type},
                 {"max_force_n", l.max_force_n},
                 {"train_cycles", l.train_cycles},
                 {"eval_cycles", l.eval_cycles}});
  return a;
}

std::vector<calibration::JigLoad> loads_from(const nlohmann::json& a) {
  std::vector<calibration::JigLoad> out;
  for (const auto& l : a) {
    calibration::JigLoad load;
    load.load_type = l.at("load_type").get<std::string>();
    load.max_force_n = l.at("max_force_n").get<double>();
    read(l, "train_cycles", load.train_cycles);
    read(l, "eval_cycles", load.eval_cycles);
    out.push_back(load);
  }
  return out;
}

}  // namespace

const std::array<std::string, kFeet>& foot_names() {
  static const std::array<std::string, kFeet> names{"FL", "FR", "HL", "HR"};
  return names;
}

const std::array<std::string, kFins>& fin_names() {
  static const std::array<std::string, kFins> names{"fin1", "fin2", "fin4", "fin6", "fin8", "tail"};
  return names;
}

// ---------------------------------------------------------------------------
// Kinematics

double RobotKinematics::snout_vent_length() const {
  return head_length + link_lengths[0] + link_lengths[1] + link_lengths[2] + link_lengths[3] + hind_girdle_offset;
}

double RobotKinematics::body_length() const {
  double l = head_length + tail_length;
  for (double x : link_lengths) l += x;
  return l;
}

RobotKinematics::Pose RobotKinematics::forward_kinematics(const cpg::JointAngles& q) const {
  Pose pose;
  pose.heading[0] = 0.0;
  for (int k = 0; k < cpg::kAxialJoints; ++k) pose.heading[k + 1] = pose.heading[k] + q[k];
  pose.joints[0] = add({0.0, 0.0}, back(pose.heading[0]), head_length);
  for (int k = 1; k < cpg::kAxialJoints; ++k)
    pose.joints[k] = add(pose.joints[k - 1], back(pose.heading[k]), link_lengths[k - 1]);
  Point2 link8_end = add(pose.joints[7], back(pose.heading[8]), link_lengths[7]);
  pose.tail_tip = add(link8_end, back(pose.heading[8]), tail_length);

  for (int leg = 0; leg < 4; ++leg) {
    bool fore = leg < 2;
    bool left = leg % 2 == 0;
    int link = fore ? 1 : 5;
    Point2 girdle = point_on_link(pose, link, fore ? fore_girdle_offset : hind_girdle_offset);
    double fa = q[cpg::limb_joint(leg, false)];
    double psi = pose.heading[link];
    // Positive fore-aft swings the foot toward the head on both sides.
    double angle = left ? psi + kPi / 2 - fa : psi - kPi / 2 + fa;
    pose.feet[leg] = {girdle.x + leg_length * std::cos(angle), girdle.y + leg_length * std::sin(angle)};
  }
  return pose;
}

Point2 RobotKinematics::point_on_link(const Pose& pose, int link, double offset) const {
  if (link < 0 || link > 9) throw std::out_of_range("link index must lie in 0..9");
  if (link == 0) return add({0.0, 0.0}, back(0.0), offset);
  if (link == 9) return add(pose.joints[7], back(pose.heading[8]), link_lengths[7] + offset);
  return add(pose.joints[link - 1], back(pose.heading[link]), offset);
}

nlohmann::json RobotKinematics::to_json() const {
  return {{"head_length", head_length},
          {"link_lengths", link_lengths},
          {"tail_length", tail_length},
          {"leg_length", leg_length},
          {"fore_girdle_offset", fore_girdle_offset},
          {"hind_girdle_offset", hind_girdle_offset}};
}

RobotKinematics RobotKinematics::from_json(const nlohmann::json& j) {
  check_keys(j,
             {"head_length", "link_lengths", "tail_length", "leg_length", "fore_girdle_offset",
              "hind_girdle_offset"},
             "robot");
  RobotKinematics k;
  read(j, "head_length", k.head_length);
  read(j, "link_lengths", k.link_lengths);
  read(j, "tail_length", k.tail_length);
  read(j, "leg_length", k.leg_length);
  read(j, "fore_girdle_offset", k.fore_girdle_offset);
  read(j, "hind_girdle_offset", k.hind_girdle_offset);
  for (double l : k.link_lengths)
    if (!(l > 0.0)) throw ScenarioError("robot: link lengths must be positive");
  return k;
}

// ---------------------------------------------------------------------------
// Foot

ElasticFootModel ElasticFootModel::scaled(double s) const {
  if (!(s > 0.0)) throw std::invalid_argument("compliance scale must be positive");
  ElasticFootModel m = *this;
  m.c_force *= s;
  m.c_pitch *= s;
  m.c_yaw *= s;
  return m;
}

void ElasticFootModel::validate() const {
  if (!(c_force > 0.0 && c_pitch > 0.0 && c_yaw > 0.0))
    throw std::invalid_argument("foot compliances must be positive");
  if (!(max_force_n > 0.0 && max_torque_nmm > 0.0)) throw std::invalid_argument("elastic caps must be positive");
  if (rest.norm() <= 0.0) throw std::invalid_argument("foot rest position must be away from the sensor");
}

nlohmann::json ElasticFootModel::to_json() const {
  return {{"rest_mm", vec_json(rest)},      {"c_force", c_force},         {"c_pitch", c_pitch},
          {"c_yaw", c_yaw},                 {"max_force_n", max_force_n}, {"max_torque_nmm", max_torque_nmm}};
}

ElasticFootModel ElasticFootModel::from_json(const nlohmann::json& j) {
  check_keys(j, {"rest_mm", "c_force", "c_pitch", "c_yaw", "max_force_n", "max_torque_nmm"}, "foot");
  ElasticFootModel m;
  if (j.contains("rest_mm")) m.rest = vec_from(j.at("rest_mm"));
  read(j, "c_force", m.c_force);
  read(j, "c_pitch", m.c_pitch);
  read(j, "c_yaw", m.c_yaw);
  read(j, "max_force_n", m.max_force_n);
  read(j, "max_torque_nmm", m.max_torque_nmm);
  m.validate();
  return m;
}

FootDofs foot_dofs(const calibration::FootWrench& w, const ElasticFootModel& m) {
  if (std::abs(w.f_x) > m.max_force_n || std::abs(w.tau_pitch) > m.max_torque_nmm ||
      std::abs(w.tau_yaw) > m.max_torque_nmm)
    throw OutOfElasticRangeError("foot load beyond the elastic range");
  return {m.c_force * w.f_x, m.c_pitch * w.tau_pitch, m.c_yaw * w.tau_yaw};
}

magnetics::MagnetPose foot_deflection(const calibration::FootWrench& w, const ElasticFootModel& m) {
  FootDofs d = foot_dofs(w, m);
  Vec3 p = m.rest + Vec3(d.dx, 0.0, 0.0);
  // pitch about y, then yaw about z, both about the sensor origin
  double cp = std::cos(d.pitch), sp = std::sin(d.pitch);
  Vec3 a(p.x * cp + p.z * sp, p.y, -p.x * sp + p.z * cp);
  double cy = std::cos(d.yaw), sy = std::sin(d.yaw);
  Vec3 b(a.x * cy - a.y * sy, a.x * sy + a.y * cy, a.z);
  return magnetics::MagnetPose::facingOrigin(b);
}

// ---------------------------------------------------------------------------
// Fin

int FlowFinModel::anterior_joint() const { return std::min(mount_link, 8) - 1; }

double FlowFinModel::drag(double v) const { return 0.5 * water_density * drag_coefficient * area_m2 * v * std::abs(v); }

double FlowFinModel::angle_from_force(double f) const {
  double theta = f * lever_mm / stiffness_nmm_per_rad;
  if (std::abs(theta) > max_angle_rad) throw OutOfElasticRangeError("fin deflection beyond the elastic range");
  return theta;
}

magnetics::FlowPose FlowFinModel::pose_from_force(double f) const { return rest.rotated(angle_from_force(f)); }

void FlowFinModel::validate() const {
  if (!(stiffness_nmm_per_rad > 0.0 && lever_mm > 0.0 && area_m2 > 0.0 && drag_coefficient > 0.0 &&
        water_density > 0.0 && max_angle_rad > 0.0))
    throw std::invalid_argument("fin model parameters must be positive");
  if (mount_link < 1 || mount_link > 9) throw std::invalid_argument("fin mount link must lie in 1..9");
  if (!(mount_offset_m >= 0.0)) throw std::invalid_argument("fin mount offset must be non-negative");
}

nlohmann::json FlowFinModel::to_json() const {
  return {{"stiffness_nmm_per_rad", stiffness_nmm_per_rad},
          {"lever_mm", lever_mm},
          {"area_m2", area_m2},
          {"drag_coefficient", drag_coefficient},
          {"water_density", water_density},
          {"max_angle_rad", max_angle_rad},
          {"rest", {{"p_x", rest.p_x}, {"p_y", rest.p_y}, {"h_y", rest.h_y}, {"d_z0", rest.d_z0}}},
          {"mount_link", mount_link},
          {"mount_offset_m", mount_offset_m}};
}

FlowFinModel FlowFinModel::from_json(const nlohmann::json& j) {
  check_keys(j,
             {"stiffness_nmm_per_rad", "lever_mm", "area_m2", "drag_coefficient", "water_density", "max_angle_rad",
              "rest", "mount_link", "mount_offset_m"},
             "fin");
  FlowFinModel m;
  read(j, "stiffness_nmm_per_rad", m.stiffness_nmm_per_rad);
  read(j, "lever_mm", m.lever_mm);
  read(j, "area_m2", m.area_m2);
  read(j, "drag_coefficient", m.drag_coefficient);
  read(j, "water_density", m.water_density);
  read(j, "max_angle_rad", m.max_angle_rad);
  if (j.contains("rest")) {
    const auto& r = j.at("rest");
    m.rest = magnetics::FlowPose(r.at("p_x").get<double>(), r.at("p_y").get<double>(), r.at("h_y").get<double>(),
                                 r.at("d_z0").get<double>());
  }
  read(j, "mount_link", m.mount_link);
  read(j, "mount_offset_m", m.mount_offset_m);
  m.validate();
  return m;
}

std::array<FlowFinModel, kFins> default_fins() {
  std::array<FlowFinModel, kFins> fins;
  const int links[kFins] = {1, 2, 4, 6, 8, 9};
  for (int i = 0; i < kFins; ++i) {
    fins[i].mount_link = links[i];
    fins[i].mount_offset_m = 0.03;
  }
  // The tail fin sits at the root of the passive tail, one link length behind joint 7.
  fins[5].mount_offset_m = 0.04;
  return fins;
}

// ---------------------------------------------------------------------------
// Contact and flow

nlohmann::json ContactParams::to_json() const {
  return {{"supported_weight_n", supported_weight_n},
          {"stance_threshold_rad", stance_threshold_rad},
          {"stance_smoothing_rad", stance_smoothing_rad},
          {"cop_offset_mm", cop_offset_mm},
          {"friction", friction},
          {"yaw_lever_mm", yaw_lever_mm},
          {"buoyancy_factor", buoyancy_factor}};
}

ContactParams ContactParams::from_json(const nlohmann::json& j) {
  check_keys(j,
             {"supported_weight_n", "stance_threshold_rad", "stance_smoothing_rad", "cop_offset_mm", "friction",
              "yaw_lever_mm", "buoyancy_factor"},
             "contact");
  ContactParams c;
  read(j, "supported_weight_n", c.supported_weight_n);
  read(j, "stance_threshold_rad", c.stance_threshold_rad);
  read(j, "stance_smoothing_rad", c.stance_smoothing_rad);
  read(j, "cop_offset_mm", c.cop_offset_mm);
  read(j, "friction", c.friction);
  read(j, "yaw_lever_mm", c.yaw_lever_mm);
  read(j, "buoyancy_factor", c.buoyancy_factor);
  if (!(c.supported_weight_n >= 0.0 && c.stance_smoothing_rad > 0.0 && c.friction >= 0.0 && c.yaw_lever_mm > 0.0 &&
        c.buoyancy_factor >= 0.0))
    throw ScenarioError("contact: invalid parameter");
  return c;
}

bool Terrain::is_water(double x) const {
  switch (kind) {
    case Kind::Floor: return false;
    case Kind::Water: return true;
    case Kind::Shoreline: return x >= shoreline_x;
  }
  return false;
}

double Terrain::fraction_over_water(double snout_x, double svl) const {
  switch (kind) {
    case Kind::Floor: return 0.0;
    case Kind::Water: return 1.0;
    case Kind::Shoreline: return std::clamp((snout_x - shoreline_x) / svl, 0.0, 1.0);
  }
  return 0.0;
}

nlohmann::json Terrain::to_json() const {
  const char* k = kind == Kind::Floor ? "floor" : kind == Kind::Water ? "water" : "shoreline";
  return {{"kind", k}, {"shoreline_x", shoreline_x}};
}

Terrain Terrain::from_json(const nlohmann::json& j) {
  check_keys(j, {"kind", "shoreline_x"}, "terrain");
  Terrain t;
  std::string k = j.value("kind", std::string("floor"));
  if (k == "floor") t.kind = Kind::Floor;
  else if (k == "water") t.kind = Kind::Water;
  else if (k == "shoreline") t.kind = Kind::Shoreline;
  else throw ScenarioError("terrain: unknown kind '" + k + "'");
  read(j, "shoreline_x", t.shoreline_x);
  return t;
}

double stance_weight(double dv, const ContactParams& p) {
  return softplus(p.stance_threshold_rad - dv, p.stance_smoothing_rad);
}

std::array<calibration::FootWrench, kFeet> contact_forces(const cpg::JointAngles& q,
                                                         const std::array<bool, kFeet>& on_floor, double weight,
                                                         const ContactParams& p) {
  std::array<double, kFeet> w{};
  double total = 0.0;
  for (int leg = 0; leg < kFeet; ++leg) {
    w[leg] = on_floor[leg] ? stance_weight(q[cpg::limb_joint(leg, true)], p) : 0.0;
    total += w[leg];
  }
  std::array<calibration::FootWrench, kFeet> out{};
  if (total <= 0.0 || weight <= 0.0) return out;
  for (int leg = 0; leg < kFeet; ++leg) {
    double n = weight * w[leg] / total;
    out[leg] = calibration::FootWrench(n * p.cop_offset_mm, p.friction * n * p.yaw_lever_mm, n);
  }
  return out;
}

std::array<calibration::FootWrench, kFeet> contact_forces(const cpg::JointAngles& q, const RobotKinematics& kin,
                                                         const Terrain& terrain, double snout_x,
                                                         const ContactParams& p) {
  auto pose = kin.forward_kinematics(q);
  std::array<bool, kFeet> on_floor{};
  for (int leg = 0; leg < kFeet; ++leg) on_floor[leg] = !terrain.is_water(snout_x + pose.feet[leg].x);
  double frac = terrain.fraction_over_water(snout_x, kin.snout_vent_length());
  double weight = p.supported_weight_n * std::clamp(1.0 - p.buoyancy_factor * frac, 0.0, 1.0);
  return contact_forces(q, on_floor, weight, p);
}

std::array<double, kFins> flow_forces(const cpg::JointAngles& q, const cpg::JointAngles& qdot, double speed,
                                      const std::array<bool, kFins>& wet,
                                      const std::array<FlowFinModel, kFins>& fins) {
  std::array<double, kFins> f{};
  for (int i = 0; i < kFins; ++i) {
    if (!wet[i]) continue;
    int j = fins[i].anterior_joint();
    double v = speed * std::sin(q[j]) + fins[i].mount_offset_m * qdot[j];
    f[i] = fins[i].drag(v);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Scenario config

nlohmann::json MotionParams::to_json() const {
  return {{"walk_speed", walk_speed}, {"swim_speed", swim_speed}, {"start_x", start_x}};
}

MotionParams MotionParams::from_json(const nlohmann::json& j) {
  check_keys(j, {"walk_speed", "swim_speed", "start_x"}, "motion");
  MotionParams m;
  read(j, "walk_speed", m.walk_speed);
  read(j, "swim_speed", m.swim_speed);
  read(j, "start_x", m.start_x);
  return m;
}

nlohmann::json SensingConfig::to_json() const {
  return {{"flux_noise_mt", flux_noise_mt}, {"dipole_nt", dipole_nt}, {"lowpass_hz", lowpass_hz},
          {"line", line.to_json()},         {"faults", faults.to_json()}};
}

SensingConfig SensingConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"flux_noise_mt", "dipole_nt", "lowpass_hz", "line", "faults"}, "sensing");
  SensingConfig s;
  read(j, "flux_noise_mt", s.flux_noise_mt);
  read(j, "dipole_nt", s.dipole_nt);
  read(j, "lowpass_hz", s.lowpass_hz);
  if (j.contains("line")) s.line = busring::LineConfig::from_json(j.at("line"));
  if (j.contains("faults")) s.faults = busring::FaultPlan::from_json(j.at("faults"));
  if (!(s.flux_noise_mt >= 0.0 && s.dipole_nt > 0.0 && s.lowpass_hz > 0.0))
    throw ScenarioError("sensing: invalid parameter");
  return s;
}

nlohmann::json CalibrationConfig::to_json() const {
  return {{"foot_loads", loads_json(foot_loads)},
          {"fin_loads", loads_json(fin_loads)},
          {"samples_per_cycle", samples_per_cycle},
          {"lever_mm", lever_mm},
          {"seed", seed}};
}

CalibrationConfig CalibrationConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"foot_loads", "fin_loads", "samples_per_cycle", "lever_mm", "seed"}, "calibration");
  CalibrationConfig c;
  if (j.contains("foot_loads")) c.foot_loads = loads_from(j.at("foot_loads"));
  if (j.contains("fin_loads")) c.fin_loads = loads_from(j.at("fin_loads"));
  read(j, "samples_per_cycle", c.samples_per_cycle);
  read(j, "lever_mm", c.lever_mm);
  read(j, "seed", c.seed);
  return c;
}

void Scenario::validate() const {
  if (!(duration > 0.0)) throw ScenarioError("duration must be positive");
  if (!(dt > 0.0 && dt <= 0.01)) throw ScenarioError("dt must lie in (0, 10 ms]");
  if (!(warmup >= 0.0)) throw ScenarioError("warmup must be non-negative");
  double ratio = 1.0 / (control_rate_hz * dt);
  if (!(control_rate_hz > 0.0) || std::abs(ratio - std::round(ratio)) > 1e-9)
    throw ScenarioError("control period must be a whole number of plant steps");
  if (trace_digits < 6 || trace_digits > 17) throw ScenarioError("trace_digits must lie in 6..17");
  foot.validate();
  for (const auto& f : fins) f.validate();
  for (double s : foot_compliance_scale)
    if (!(s > 0.0)) throw ScenarioError("foot compliance scales must be positive");
  sensing.line.validate();
}

nlohmann::json Scenario::to_json() const {
  nlohmann::json fins_j = nlohmann::json::array();
  for (const auto& f : fins) fins_j.push_back(f.to_json());
  return {{"name", name},
          {"duration", duration},
          {"dt", dt},
          {"warmup", warmup},
          {"seed", seed},
          {"terrain", terrain.to_json()},
          {"motion", motion.to_json()},
          {"initial_mode", cpg::to_string(initial_mode)},
          {"feedback", feedback},
          {"control_rate_hz", control_rate_hz},
          {"trace_digits", trace_digits},
          {"cpg", cpg.to_json()},
          {"transition",
           {{"threshold_n", transition.threshold_n},
            {"allow_reverse", transition.allow_reverse},
            {"reverse_threshold_n", transition.reverse_threshold_n}}},
          {"robot", robot.to_json()},
          {"contact", contact.to_json()},
          {"foot", foot.to_json()},
          {"foot_compliance_scale", foot_compliance_scale},
          {"fins", fins_j},
          {"sensing", sensing.to_json()},
          {"calibration", calibration.to_json()},
          {"expect", expect}};
}

Scenario Scenario::from_json(const nlohmann::json& j) {
  check_keys(j,
             {"name", "duration", "dt", "warmup", "seed", "terrain", "motion", "initial_mode", "feedback", "control_rate_hz",
              "trace_digits", "cpg", "transition", "robot", "contact", "foot", "foot_compliance_scale", "fins",
              "sensing", "calibration", "expect"},
             "scenario");
  Scenario s;
  try {
    read(j, "name", s.name);
    read(j, "duration", s.duration);
    read(j, "dt", s.dt);
    read(j, "warmup", s.warmup);
    read(j, "seed", s.seed);
    if (j.contains("terrain")) s.terrain = Terrain::from_json(j.at("terrain"));
    if (j.contains("motion")) s.motion = MotionParams::from_json(j.at("motion"));
    if (j.contains("initial_mode")) {
      std::string m = j.at("initial_mode").get<std::string>();
      if (m == "walking") s.initial_mode = cpg::GaitMode::Walking;
      else if (m == "swimming") s.initial_mode = cpg::GaitMode::Swimming;
      else throw ScenarioError("initial_mode must be 'walking' or 'swimming'");
    }
    read(j, "feedback", s.feedback);
    read(j, "control_rate_hz", s.control_rate_hz);
    read(j, "trace_digits", s.trace_digits);
    if (j.contains("cpg")) s.cpg = cpg::NetworkConfig::from_json(j.at("cpg"));
    if (j.contains("transition")) {
      const auto& t = j.at("transition");
      check_keys(t, {"threshold_n", "allow_reverse", "reverse_threshold_n"}, "transition");
      read(t, "threshold_n", s.transition.threshold_n);
      read(t, "allow_reverse", s.transition.allow_reverse);
      read(t, "reverse_threshold_n", s.transition.reverse_threshold_n);
    }
    if (j.contains("robot")) s.robot = RobotKinematics::from_json(j.at("robot"));
    if (j.contains("contact")) s.contact = ContactParams::from_json(j.at("contact"));
    if (j.contains("foot")) s.foot = ElasticFootModel::from_json(j.at("foot"));
    read(j, "foot_compliance_scale", s.foot_compliance_scale);
    if (j.contains("fins")) {
      const auto& a = j.at("fins");
      if (!a.is_array() || a.size() != kFins) throw ScenarioError("fins: expected an array of 6 fin models");
      for (int i = 0; i < kFins; ++i) s.fins[i] = FlowFinModel::from_json(a[i]);
    }
    if (j.contains("sensing")) s.sensing = SensingConfig::from_json(j.at("sensing"));
    if (j.contains("calibration")) s.calibration = CalibrationConfig::from_json(j.at("calibration"));
    if (j.contains("expect")) s.expect = j.at("expect");
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError(std::string("scenario field has the wrong type: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(e.what());
  }
  s.transition.d_swim = s.cpg.d_swim;
  s.transition.d_walk = s.cpg.d_walk;
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Calibration

SensorCalibration calibrate_sensors(const Scenario& sc) {
  SensorCalibration out;
  calibration::JigConfig jig;
  jig.samples_per_cycle = sc.calibration.samples_per_cycle;
  jig.lever_mm = sc.calibration.lever_mm;
  jig.flux_noise_mt = sc.sensing.flux_noise_mt;
  jig.dipole = magnetics::DipoleParams(sc.sensing.dipole_nt);

  jig.loads = sc.calibration.foot_loads;
  for (int i = 0; i < kFeet; ++i) {
    ElasticFootModel model = sc.foot.scaled(sc.foot_compliance_scale[i]);
    jig.seed = sc.calibration.seed + static_cast<std::uint64_t>(i);
    auto result = calibration::simulate_foot_jig(
        [&](const calibration::FootWrench& w) { return foot_deflection(w, model); }, jig);
    out.foot_models[i] = calibration::fit_poly(result.train());
    out.foot_reports[i] = calibration::evaluate_rmse(out.foot_models[i], result.eval());
  }
  jig.loads = sc.calibration.fin_loads;
  for (int i = 0; i < kFins; ++i) {
    const FlowFinModel& fin = sc.fins[i];
    jig.seed = sc.calibration.seed + 100 + static_cast<std::uint64_t>(i);
    auto result = calibration::simulate_fin_jig([&](double f) { return fin.pose_from_force(f); }, fin.rest, jig);
    out.fin_models[i] = calibration::fit_poly(result.train());
    out.fin_reports[i] = calibration::evaluate_rmse(out.fin_models[i], result.eval());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed loop

namespace {

// Trace columns, in row order.
std::vector<std::string> trace_columns() {
  std::vector<std::string> c{"t", "mode", "drive", "gt_x", "gt_water_fraction"};
  for (int k = 0; k < cpg::kJoints; ++k) c.push_back("gt_q" + std::to_string(k));
  for (const auto& f : foot_names()) {
    for (const char* s : {"tau_pitch", "tau_yaw", "f_x", "p_x", "p_y", "p_z", "b_x", "b_y", "b_z", "bn_x", "bn_y",
                          "bn_z"})
      c.push_back("gt_" + f + "_" + s);
  }
  for (const auto& f : fin_names()) {
    for (const char* s : {"force", "angle", "p_x", "p_y", "h_y", "b_x", "b_y", "b_z", "bn_x", "bn_y", "bn_z"})
      c.push_back("gt_" + f + "_" + s);
  }
  c.push_back("gt_foot_sum");
  for (const auto& f : foot_names()) {
    for (const char* s : {"tau_pitch", "tau_yaw", "f_x", "bf_x", "bf_y", "bf_z"}) c.push_back("est_" + f + "_" + s);
  }
  for (const auto& f : fin_names()) {
    for (const char* s : {"force", "angle", "bf_x", "bf_y", "bf_z"}) c.push_back("est_" + f + "_" + s);
  }
  c.push_back("est_foot_sum");
  return c;
}

struct ModuleEstimate {
  magnetics::LowPassState lpf;
  double last_t = -1.0;
  Vec3 filtered;
  Vec3 noisy;
  calibration::FootWrench wrench;  // feet
  magnetics::FlowPose pose;        // fins
  double force = 0.0;
  double angle = 0.0;
};

void push3(std::vector<double>& row, const Vec3& v) {
  row.push_back(v.x);
  row.push_back(v.y);
  row.push_back(v.z);
}

}  // namespace

ScenarioResult run_scenario(const Scenario& sc, const SensorCalibration* precomputed) {
  sc.validate();
  SensorCalibration own;
  if (!precomputed) {
    own = calibrate_sensors(sc);
    precomputed = &own;
  }
  const SensorCalibration& cal = *precomputed;
  const magnetics::DipoleParams dipole(sc.sensing.dipole_nt);

  cpg::Network net = cpg::build_polymander_network(sc.cpg);
  cpg::GaitState gait{sc.initial_mode, sc.initial_mode == cpg::GaitMode::Walking ? net.d_walk : net.d_swim};
  cpg::NetworkState state = cpg::NetworkState::initial(net, gait.drive);
  const auto warmup_steps = static_cast<long>(std::llround(sc.warmup / sc.dt));
  for (long i = 0; i < warmup_steps; ++i) state = cpg::step_network(state, net, sc.dt);
  state.t = 0.0;

  std::array<ElasticFootModel, kFeet> feet;
  for (int i = 0; i < kFeet; ++i) feet[i] = sc.foot.scaled(sc.foot_compliance_scale[i]);

  // Plant outputs shared with the bus sample source.
  std::array<Vec3, kModules> clean_flux;
  std::array<Vec3, kModules> last_noisy;
  std::mt19937_64 noise_rng(sc.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sigma = sc.sensing.flux_noise_mt;
  auto source = [&](std::uint8_t id, double t) {
    magnetics::FluxSample s;
    s.module_id = id;
    s.timestamp = t;
    s.temperature = 25.0;
    Vec3 b = clean_flux[id];
    if (sigma > 0.0) b += sigma * Vec3(gauss(noise_rng), gauss(noise_rng), gauss(noise_rng));
    last_noisy[id] = b;
    s.b = b;
    return s;
  };
  busring::RingSimulator ring(kModules, sc.sensing.line, sc.sensing.faults, source);
  ring.keep_trace(false);

  std::array<ModuleEstimate, kModules> est;
  for (auto& e : est) e.lpf = magnetics::LowPassState(sc.sensing.lowpass_hz);
  for (int i = 0; i < kFins; ++i) est[kFeet + i].pose = sc.fins[i].rest;

  ScenarioResult result;
  result.trace = Trace(trace_columns());
  const auto steps = static_cast<long>(std::llround(sc.duration / sc.dt));
  const auto control_every = static_cast<long>(std::llround(1.0 / (sc.control_rate_hz * sc.dt)));
  double x = sc.motion.start_x;
  cpg::JointAngles q_prev = cpg::joint_targets(cpg::oscillator_output(state), net.joints, net.gain);
  double window_min = std::numeric_limits<double>::infinity();
  double window_max = -window_min;
  std::vector<double> row;
  row.reserve(result.trace.cols());

  for (long i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) * sc.dt;
    const double speed = gait.mode == cpg::GaitMode::Walking ? sc.motion.walk_speed : sc.motion.swim_speed;
    if (i > 0) {
      state.drive = gait.drive;
      state = cpg::step_network(state, net, sc.dt);
      x += speed * sc.dt;
    }
    const cpg::JointAngles q = cpg::joint_targets(cpg::oscillator_output(state), net.joints, net.gain);
    cpg::JointAngles qdot{};
    if (i > 0)
      for (int k = 0; k < cpg::kJoints; ++k) qdot[k] = (q[k] - q_prev[k]) / sc.dt;
    q_prev = q;

    const auto pose = sc.robot.forward_kinematics(q);
    const double frac = sc.terrain.fraction_over_water(x, sc.robot.snout_vent_length());
    const auto wrenches = contact_forces(q, sc.robot, sc.terrain, x, sc.contact);
    std::array<bool, kFins> wet{};
    for (int f = 0; f < kFins; ++f) {
      Point2 m = sc.robot.point_on_link(pose, std::min(sc.fins[f].mount_link, 8), sc.fins[f].mount_offset_m);
      wet[f] = sc.terrain.is_water(x + m.x);
    }
    const auto fin_force = flow_forces(q, qdot, speed, wet, sc.fins);

    std::array<magnetics::MagnetPose, kFeet> foot_pose;
    std::array<magnetics::FlowPose, kFins> fin_pose;
    std::array<double, kFins> fin_theta{};
    try {
      for (int f = 0; f < kFeet; ++f) {
        foot_pose[f] = foot_deflection(wrenches[f], feet[f]);
        clean_flux[f] = magnetics::dipole_flux(foot_pose[f], dipole);
      }
      for (int f = 0; f < kFins; ++f) {
        fin_theta[f] = sc.fins[f].angle_from_force(fin_force[f]);
        fin_pose[f] = sc.fins[f].rest.rotated(fin_theta[f]);
        clean_flux[kFeet + f] = magnetics::flow_flux(fin_pose[f], dipole);
      }
    } catch (const Error& e) {
      throw ScenarioError("scenario '" + sc.name + "' at t=" + std::to_string(t) + " s: " + e.what());
    }

    for (const auto& frame : ring.run_until(t + sc.dt)) {
      if (!frame.sample) continue;
      const int id = frame.sample->module_id;
      if (id >= kModules) continue;
      ModuleEstimate& e = est[id];
      const double dt_frame = e.last_t < 0.0 ? sc.dt : frame.t_end - e.last_t;
      e.last_t = frame.t_end;
      e.noisy = frame.sample->b;
      e.filtered = magnetics::lowpass_step(e.lpf, frame.sample->b, dt_frame);
      try {
        if (id < kFeet) {
          Vec3 p = magnetics::invert_foot_flux(e.filtered, dipole);
          e.wrench = calibration::apply_poly(cal.foot_models[id], p);
        } else {
          const FlowFinModel& fin = sc.fins[id - kFeet];
          e.pose = magnetics::invert_flow_flux(e.filtered, fin.rest.d_z0, dipole, e.pose);
          e.force = calibration::apply_poly(cal.fin_models[id - kFeet], e.pose.p_x - fin.rest.p_x,
                                            e.pose.p_y - fin.rest.p_y);
          e.angle = calibration::fin_angle(e.pose, fin.rest);
        }
      } catch (const Error&) {
        ++result.inversion_failures;  // keep the previous estimate
      }
    }

    double est_sum = 0.0, gt_sum = 0.0;
    for (int f = 0; f < kFeet; ++f) {
      est_sum += est[f].wrench.f_x;
      gt_sum += wrenches[f].f_x;
    }
    window_min = std::min(window_min, est_sum);
    window_max = std::max(window_max, est_sum);
    if (i % control_every == 0) {
      // The controller sees every estimate buffered since its last tick.
      double seen = gait.mode == cpg::GaitMode::Walking ? window_min : window_max;
      window_min = std::numeric_limits<double>::infinity();
      window_max = -std::numeric_limits<double>::infinity();
      if (sc.feedback) {
        cpg::GaitState next = cpg::transition_controller(seen, gait, sc.transition);
        if (next.mode != gait.mode && next.mode == cpg::GaitMode::Swimming && !result.transition_time)
          result.transition_time = t;
        gait = next;
      }
    }

    row.clear();
    row.push_back(t);
    row.push_back(gait.mode == cpg::GaitMode::Walking ? 0.0 : 1.0);
    row.push_back(gait.drive);
    row.push_back(x);
    row.push_back(frac);
    for (double a : q) row.push_back(a);
    for (int f = 0; f < kFeet; ++f) {
      row.push_back(wrenches[f].tau_pitch);
      row.push_back(wrenches[f].tau_yaw);
      row.push_back(wrenches[f].f_x);
      push3(row, foot_pose[f].p);
      push3(row, clean_flux[f]);
      push3(row, last_noisy[f]);
    }
    for (int f = 0; f < kFins; ++f) {
      row.push_back(fin_force[f]);
      row.push_back(fin_theta[f]);
      row.push_back(fin_pose[f].p_x);
      row.push_back(fin_pose[f].p_y);
      row.push_back(fin_pose[f].h_y);
      push3(row, clean_flux[kFeet + f]);
      push3(row, last_noisy[kFeet + f]);
    }
    row.push_back(gt_sum);
    for (int f = 0; f < kFeet; ++f) {
      row.push_back(est[f].wrench.tau_pitch);
      row.push_back(est[f].wrench.tau_yaw);
      row.push_back(est[f].wrench.f_x);
      push3(row, est[f].filtered);
    }
    for (int f = 0; f < kFins; ++f) {
      const ModuleEstimate& e = est[kFeet + f];
      row.push_back(e.force);
      row.push_back(e.angle);
      push3(row, e.filtered);
    }
    row.push_back(est_sum);
    result.trace.push_row(row);
  }
  result.bus = ring.stats();
  return result;
}

}  // namespace amphibot::plant
