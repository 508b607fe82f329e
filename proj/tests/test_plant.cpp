#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Geometry>
#include <doctest.h>

#include "amphibot/plant.hpp"

using namespace amphibot;
using namespace amphibot::plant;

namespace {

constexpr double kPi = std::numbers::pi;

// Complex amplitude of x at frequency f (single-bin DFT).
std::complex<double> dft_bin(const std::vector<double>& x, double f, double dt) {
  std::complex<double> acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * std::polar(1.0, -2.0 * kPi * f * dt * static_cast<double>(i));
  return acc / static_cast<double>(x.size());
}

// Lag of b behind a in cycles from the fundamental phase, wrapped to [-0.5, 0.5).
double dft_lag(const std::vector<double>& a, const std::vector<double>& b, double f, double dt) {
  double d = std::arg(dft_bin(a, f, dt)) - std::arg(dft_bin(b, f, dt));
  d /= 2.0 * kPi;
  return d - std::floor(d + 0.5);
}

struct Gait {
  std::vector<cpg::JointAngles> q;
  std::vector<cpg::JointAngles> qdot;
};

// Settled CPG joint targets over whole cycles.
Gait generate(double drive, double freq, int cycles, double dt = 1e-3) {
  auto net = cpg::build_polymander_network(cpg::NetworkConfig{});
  auto s = cpg::NetworkState::initial(net, drive);
  for (int i = 0; i < 5000; ++i) s = cpg::step_network(s, net, dt);
  Gait g;
  auto n = static_cast<int>(std::lround(cycles / freq / dt));
  cpg::JointAngles prev = cpg::joint_targets(cpg::oscillator_output(s), net.joints, net.gain);
  for (int i = 0; i < n; ++i) {
    s = cpg::step_network(s, net, dt);
    auto q = cpg::joint_targets(cpg::oscillator_output(s), net.joints, net.gain);
    cpg::JointAngles qd{};
    for (int k = 0; k < cpg::kJoints; ++k) qd[k] = (q[k] - prev[k]) / dt;
    g.q.push_back(q);
    g.qdot.push_back(qd);
    prev = q;
  }
  return g;
}

Scenario short_scenario(double duration = 2.0) {
  Scenario sc;
  sc.duration = duration;
  sc.warmup = 1.0;
  return sc;
}

}  // namespace

TEST_CASE("straight chain kinematics") {
  RobotKinematics k;
  cpg::JointAngles q{};
  auto pose = k.forward_kinematics(q);
  double x = -k.head_length;
  CHECK(pose.joints[0].x == doctest::Approx(x));
  for (int j = 1; j < cpg::kAxialJoints; ++j) {
    x -= k.link_lengths[j - 1];
    CHECK(pose.joints[j].x == doctest::Approx(x));
    CHECK(pose.joints[j].y == doctest::Approx(0.0));
  }
  CHECK(-pose.tail_tip.x == doctest::Approx(k.body_length()));
  CHECK(k.body_length() == doctest::Approx(0.10 + 4 * 0.105 + 3 * 0.06 + 0.04 + 0.28));
  // Feet stick straight out sideways at zero fore-aft angle.
  CHECK(pose.feet[0].y == doctest::Approx(k.leg_length));
  CHECK(pose.feet[1].y == doctest::Approx(-k.leg_length));
  CHECK(pose.feet[0].x == doctest::Approx(-(k.head_length + k.fore_girdle_offset)));
  CHECK(pose.feet[2].x ==
        doctest::Approx(-(k.head_length + 4 * 0.105 + k.hind_girdle_offset)));
  CHECK(k.snout_vent_length() == doctest::Approx(-pose.feet[2].x));
}

TEST_CASE("positive fore-aft swings both feet of a girdle forward") {
  RobotKinematics k;
  cpg::JointAngles q{};
  auto rest = k.forward_kinematics(q);
  q[cpg::limb_joint(0, false)] = 0.3;
  q[cpg::limb_joint(1, false)] = 0.3;
  auto swung = k.forward_kinematics(q);
  CHECK(swung.feet[0].x > rest.feet[0].x);
  CHECK(swung.feet[1].x > rest.feet[1].x);
  CHECK(swung.feet[0].x - rest.feet[0].x == doctest::Approx(k.leg_length * std::sin(0.3)));
}

TEST_CASE("a bent joint rotates everything behind it") {
  RobotKinematics k;
  cpg::JointAngles q{};
  q[2] = 0.4;
  auto pose = k.forward_kinematics(q);
  for (int j = 0; j <= 2; ++j) CHECK(pose.heading[j] == doctest::Approx(0.0));
  for (int j = 3; j <= 8; ++j) CHECK(pose.heading[j] == doctest::Approx(0.4));
  // Joint 3 sits one link behind joint 2 along the new heading.
  CHECK(pose.joints[3].x - pose.joints[2].x == doctest::Approx(-k.link_lengths[2] * std::cos(0.4)));
  CHECK(pose.joints[3].y - pose.joints[2].y == doctest::Approx(-k.link_lengths[2] * std::sin(0.4)));
  CHECK_THROWS_AS(k.point_on_link(pose, 10, 0.0), std::out_of_range);
}

TEST_CASE("zero wrench leaves the foot magnet at rest") {
  ElasticFootModel m;
  auto pose = foot_deflection({0.0, 0.0, 0.0}, m);
  CHECK(pose.p.x == doctest::Approx(m.rest.x));
  CHECK(pose.p.y == doctest::Approx(m.rest.y));
  CHECK(pose.p.z == doctest::Approx(m.rest.z));
  CHECK(pose.h.x == doctest::Approx(1.0));
}

TEST_CASE("foot deflection against a rotation-matrix oracle") {
  ElasticFootModel m;
  m.rest = Vec3(-4.0, 0.5, 0.3);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uf(-20.0, 20.0), ut(-100.0, 100.0);
  for (int i = 0; i < 200; ++i) {
    calibration::FootWrench w(ut(rng), ut(rng), uf(rng));
    auto pose = foot_deflection(w, m);
    Eigen::Vector3d p(m.rest.x + m.c_force * w.f_x, m.rest.y, m.rest.z);
    Eigen::Vector3d expect = Eigen::AngleAxisd(m.c_yaw * w.tau_yaw, Eigen::Vector3d::UnitZ()) *
                             Eigen::AngleAxisd(m.c_pitch * w.tau_pitch, Eigen::Vector3d::UnitY()) * p;
    CHECK(pose.p.x == doctest::Approx(expect.x()).epsilon(1e-12));
    CHECK(pose.p.y == doctest::Approx(expect.y()).epsilon(1e-12));
    CHECK(pose.p.z == doctest::Approx(expect.z()).epsilon(1e-12));
    // Foot convention: magnetization points at the sensor.
    CHECK(pose.h.x == doctest::Approx(-expect.x() / expect.norm()));
  }
}

TEST_CASE("foot deflection is linear in its three degrees of freedom") {
  ElasticFootModel m;
  calibration::FootWrench w(12.0, -30.0, 7.5);
  auto a = foot_dofs(w, m);
  auto b = foot_dofs({2 * w.tau_pitch, 2 * w.tau_yaw, 2 * w.f_x}, m);
  CHECK(b.dx == doctest::Approx(2 * a.dx));
  CHECK(b.pitch == doctest::Approx(2 * a.pitch));
  CHECK(b.yaw == doctest::Approx(2 * a.yaw));

  // A pure normal load translates along x only, so the displacement doubles exactly.
  auto rest = foot_deflection({0, 0, 0}, m);
  auto one = foot_deflection({0, 0, 5.0}, m);
  auto two = foot_deflection({0, 0, 10.0}, m);
  CHECK(two.p.x - rest.p.x == doctest::Approx(2 * (one.p.x - rest.p.x)));
  CHECK(one.p.y == rest.p.y);
  CHECK(one.p.z == rest.p.z);
}

TEST_CASE("foot loads beyond the elastic caps are rejected") {
  ElasticFootModel m;
  CHECK_THROWS_AS(foot_deflection({0, 0, m.max_force_n + 1.0}, m), OutOfElasticRangeError);
  CHECK_THROWS_AS(foot_deflection({-m.max_torque_nmm - 1.0, 0, 0}, m), OutOfElasticRangeError);
  CHECK_THROWS_AS(foot_deflection({0, m.max_torque_nmm + 1.0, 0}, m), OutOfElasticRangeError);
  CHECK_NOTHROW(foot_deflection({0, 0, m.max_force_n}, m));
  CHECK_THROWS(m.scaled(0.0));
  auto s = m.scaled(1.5);
  CHECK(s.c_force == doctest::Approx(1.5 * m.c_force));
  CHECK(s.c_yaw == doctest::Approx(1.5 * m.c_yaw));
}

TEST_CASE("fin spring balance and rotated magnet") {
  FlowFinModel fin;
  double f = 0.1;
  double theta = f * fin.lever_mm / fin.stiffness_nmm_per_rad;
  CHECK(fin.angle_from_force(f) == doctest::Approx(theta));
  // Restoring torque -k*theta balances the applied moment.
  CHECK(-fin.stiffness_nmm_per_rad * theta + f * fin.lever_mm == doctest::Approx(0.0));
  auto pose = fin.pose_from_force(f);
  CHECK(pose.p_x == doctest::Approx(-fin.rest.p_y * std::sin(theta)));
  CHECK(pose.p_y == doctest::Approx(fin.rest.p_y * std::cos(theta)));
  CHECK(std::hypot(pose.p_x, pose.p_y) == doctest::Approx(std::abs(fin.rest.p_y)));
  CHECK_THROWS_AS(fin.angle_from_force(1.0), OutOfElasticRangeError);
  CHECK(fin.drag(0.2) == doctest::Approx(0.5 * 1000.0 * 1.5 * 0.004 * 0.04));
  CHECK(fin.drag(-0.2) == doctest::Approx(-fin.drag(0.2)));
}

TEST_CASE("fin mounts and anterior joints") {
  auto fins = default_fins();
  const int links[] = {1, 2, 4, 6, 8, 9};
  const int joints[] = {0, 1, 3, 5, 7, 7};
  for (int i = 0; i < kFins; ++i) {
    CHECK(fins[i].mount_link == links[i]);
    CHECK(fins[i].anterior_joint() == joints[i]);
  }
  // The tail fin sits behind the last actuated link.
  RobotKinematics k;
  CHECK(fins[5].mount_offset_m >= k.link_lengths[7]);
}

TEST_CASE("identical stance shares the load equally") {
  ContactParams p;
  cpg::JointAngles q{};
  auto w = contact_forces(q, {true, true, true, true}, 12.0, p);
  for (const auto& f : w) {
    CHECK(f.f_x == doctest::Approx(3.0));
    CHECK(f.tau_pitch == doctest::Approx(3.0 * p.cop_offset_mm));
    CHECK(f.tau_yaw == doctest::Approx(p.friction * 3.0 * p.yaw_lever_mm));
  }
}

TEST_CASE("no support gives zero wrenches") {
  ContactParams p;
  cpg::JointAngles q{};
  for (const auto& f : contact_forces(q, {false, false, false, false}, 14.0, p)) CHECK(f.f_x == 0.0);
  RobotKinematics k;
  Terrain water{Terrain::Kind::Water, 0.0};
  for (const auto& f : contact_forces(q, k, water, 0.0, p)) {
    CHECK(f.f_x == 0.0);
    CHECK(f.tau_pitch == 0.0);
    CHECK(f.tau_yaw == 0.0);
  }
}

TEST_CASE("normal forces close on the supported weight") {
  ContactParams p;
  RobotKinematics k;
  Terrain floor;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  for (int i = 0; i < 500; ++i) {
    cpg::JointAngles q{};
    for (auto& a : q) a = u(rng);
    auto w = contact_forces(q, k, floor, 0.0, p);
    double sum = 0.0;
    for (const auto& f : w) {
      CHECK(f.f_x >= 0.0);
      sum += f.f_x;
    }
    CHECK(sum == doctest::Approx(p.supported_weight_n).epsilon(1e-12));
  }
}

TEST_CASE("buoyancy ramps the supported weight down across the shoreline") {
  ContactParams p;
  RobotKinematics k;
  Terrain shore{Terrain::Kind::Shoreline, 1.0};
  cpg::JointAngles q{};
  double svl = k.snout_vent_length();
  auto total = [&](double x) {
    double s = 0.0;
    for (const auto& f : contact_forces(q, k, shore, x, p)) s += f.f_x;
    return s;
  };
  CHECK(total(0.5) == doctest::Approx(p.supported_weight_n));
  CHECK(total(1.0) == doctest::Approx(p.supported_weight_n));
  double frac = 0.1;
  CHECK(total(1.0 + frac * svl) == doctest::Approx(p.supported_weight_n * (1.0 - p.buoyancy_factor * frac)));
  CHECK(total(1.0 + 0.6 * svl) == 0.0);
  // Monotone in the snout position.
  double prev = total(0.9);
  for (double x = 0.9; x < 1.5; x += 0.01) {
    double t = total(x);
    CHECK(t <= prev + 1e-12);
    prev = t;
  }
  CHECK(shore.fraction_over_water(0.0, svl) == 0.0);
  CHECK(shore.fraction_over_water(5.0, svl) == 1.0);
}

TEST_CASE("stance weight is a smooth decreasing ramp") {
  ContactParams p;
  double prev = stance_weight(-1.0, p);
  for (double a = -1.0; a < 1.5; a += 0.01) {
    double w = stance_weight(a, p);
    CHECK(w > 0.0);
    CHECK(w <= prev);
    prev = w;
  }
  CHECK(stance_weight(-1.0, p) == doctest::Approx(p.stance_threshold_rad + 1.0));
  CHECK(stance_weight(p.stance_threshold_rad + 0.5, p) < 1e-4);
}

TEST_CASE("walking loads: diagonal feet in phase, ipsilateral feet in antiphase") {
  const double f = 0.47, dt = 1e-3;
  auto g = generate(2.0, f, 6, dt);
  ContactParams p;
  std::array<std::vector<double>, kFeet> load;
  for (const auto& q : g.q) {
    auto w = contact_forces(q, {true, true, true, true}, p.supported_weight_n, p);
    for (int i = 0; i < kFeet; ++i) load[i].push_back(w[i].f_x);
  }
  CHECK(std::abs(dft_lag(load[0], load[3], f, dt)) < 0.15);
  CHECK(std::abs(dft_lag(load[1], load[2], f, dt)) < 0.15);
  CHECK(std::abs(std::abs(dft_lag(load[0], load[2], f, dt)) - 0.5) < 0.15);
  CHECK(std::abs(std::abs(dft_lag(load[1], load[3], f, dt)) - 0.5) < 0.15);
  // Loads swing well inside the elastic range.
  for (const auto& l : load)
    for (double v : l) CHECK(v < ElasticFootModel{}.max_force_n);
}

TEST_CASE("flow forces vanish on a still or dry body") {
  auto fins = default_fins();
  cpg::JointAngles q{}, qd{};
  for (double v : flow_forces(q, qd, 0.0, {true, true, true, true, true, true}, fins)) CHECK(v == 0.0);
  q[3] = 0.3;
  qd[3] = 2.0;
  for (double v : flow_forces(q, qd, 0.3, {false, false, false, false, false, false}, fins)) CHECK(v == 0.0);
  auto f = flow_forces(q, qd, 0.3, {true, true, true, true, true, true}, fins);
  CHECK(f[2] == doctest::Approx(fins[2].drag(0.3 * std::sin(0.3) + fins[2].mount_offset_m * 2.0)));
  CHECK(f[0] == 0.0);
}

TEST_CASE("single-joint sinusoid drives a periodic fin force at the joint frequency") {
  const double freq = 0.9, dt = 1e-3, amp = 0.4, speed = 0.25;
  auto fins = default_fins();
  std::vector<double> force;
  for (int i = 0; i < 10000; ++i) {
    double t = i * dt;
    cpg::JointAngles q{}, qd{};
    q[3] = amp * std::sin(2 * kPi * freq * t);
    qd[3] = amp * 2 * kPi * freq * std::cos(2 * kPi * freq * t);
    force.push_back(flow_forces(q, qd, speed, {true, true, true, true, true, true}, fins)[2]);
  }
  // Spectral peak over a frequency grid.
  double best_f = 0.0, best = 0.0;
  for (double fr = 0.1; fr <= 5.0; fr += 0.01) {
    double m = std::abs(dft_bin(force, fr, dt));
    if (m > best) {
      best = m;
      best_f = fr;
    }
  }
  CHECK(best_f == doctest::Approx(freq).epsilon(0.012));
  // One period later the force repeats.
  auto period = static_cast<std::size_t>(std::lround(1.0 / freq / dt));
  for (std::size_t i = 0; i + period < 3000; ++i) CHECK(force[i + period] == doctest::Approx(force[i]).epsilon(1e-2));
}

TEST_CASE("swimming fin forces follow their anterior joint angles") {
  const double f = 0.78, dt = 1e-3;
  auto g = generate(5.0, f, 6, dt);
  auto fins = default_fins();
  std::array<std::vector<double>, kFins> force;
  std::array<std::vector<double>, kFins> angle;
  for (std::size_t i = 0; i < g.q.size(); ++i) {
    auto F = flow_forces(g.q[i], g.qdot[i], 0.31, {true, true, true, true, true, true}, fins);
    for (int k = 0; k < kFins; ++k) {
      force[k].push_back(F[k]);
      angle[k].push_back(g.q[i][fins[k].anterior_joint()]);
    }
  }
  for (int k = 0; k < kFins; ++k) {
    double lag = dft_lag(angle[k], force[k], f, dt);
    CHECK(std::abs(lag) < 0.10);
    CHECK(lag < 0.0);  // the rate term makes the force lead
  }
  // Forces stay inside the fin's elastic range.
  for (const auto& fk : force)
    for (double v : fk) CHECK(std::abs(v) * fins[0].lever_mm / fins[0].stiffness_nmm_per_rad < fins[0].max_angle_rad);
}

TEST_CASE("scenario JSON round trip and validation") {
  Scenario sc = short_scenario();
  sc.name = "rt";
  sc.terrain = {Terrain::Kind::Shoreline, 0.7};
  sc.foot_compliance_scale = {1.0, 1.1, 0.9, 1.0};
  sc.expect = {{"settle", 1.0}};
  auto j = sc.to_json();
  auto back = Scenario::from_json(j);
  CHECK(back.to_json() == j);

  auto bad = j;
  bad["colour"] = 1;
  CHECK_THROWS_AS(Scenario::from_json(bad), ScenarioError);
  bad = j;
  bad["dt"] = 0.02;
  CHECK_THROWS_AS(Scenario::from_json(bad), ScenarioError);
  bad = j;
  bad["dt"] = 0.0015;  // 20 ms is not a whole number of steps
  CHECK_THROWS_AS(Scenario::from_json(bad), ScenarioError);
  bad = j;
  bad["terrain"]["kind"] = "lava";
  CHECK_THROWS_AS(Scenario::from_json(bad), ScenarioError);
  bad = j;
  bad["duration"] = "long";
  CHECK_THROWS_AS(Scenario::from_json(bad), ScenarioError);
  bad = j;
  bad["fins"].erase(0);
  CHECK_THROWS_AS(Scenario::from_json(bad), ScenarioError);
  CHECK_NOTHROW(Scenario::from_json(nlohmann::json::object()));
}

TEST_CASE("noiseless jig: feet fit closely, fins expose the circle degeneracy") {
  Scenario sc = short_scenario();
  sc.sensing.flux_noise_mt = 0.0;
  calibration::JigConfig jig;
  jig.loads = sc.calibration.foot_loads;
  jig.flux_noise_mt = 0.0;
  ElasticFootModel foot = sc.foot.scaled(1.2);
  auto result = calibration::simulate_foot_jig(
      [&](const calibration::FootWrench& w) { return foot_deflection(w, foot); }, jig);
  auto model = calibration::fit_poly(result.train());
  auto report = calibration::evaluate_rmse(model, result.eval());
  MESSAGE("noiseless foot rmse f_x " << report.at("f_x") << " tau_pitch " << report.at("tau_pitch"));
  CHECK(report.at("f_x") < 0.01);
  CHECK(report.at("tau_pitch") < 0.05);
  CHECK(report.at("tau_yaw") < 0.05);
  // A one-DoF fin keeps the magnet on a circle, so the quadratic basis loses rank.
  CHECK_THROWS_AS(calibrate_sensors(sc), calibration::RankDeficiencyError);
}

TEST_CASE("default noise lands the jig errors in their bands") {
  auto cal = calibrate_sensors(short_scenario());
  double tau = 0.0, f = 0.0;
  for (const auto& r : cal.foot_reports) {
    tau += 0.5 * (r.at("tau_pitch") + r.at("tau_yaw")) / kFeet;
    f += r.at("f_x") / kFeet;
  }
  CHECK(tau >= 1.26);
  CHECK(tau <= 2.5);
  CHECK(f >= 0.24);
  CHECK(f <= 0.34);
  for (const auto& r : cal.fin_reports) CHECK(r.at("force") < 0.01);
}

TEST_CASE("closed loop on the floor tracks the ground truth") {
  Scenario sc = short_scenario(6.0);
  auto r = run_scenario(sc);
  const auto& t = r.trace.column("t");
  CHECK(r.trace.rows() == 6001);
  CHECK(t.back() == doctest::Approx(6.0));
  CHECK(r.inversion_failures == 0);
  CHECK_FALSE(r.transition_time);
  for (const auto& f : foot_names()) {
    const auto& gt = r.trace.column("gt_" + f + "_f_x");
    const auto& est = r.trace.column("est_" + f + "_f_x");
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 2000; i < gt.size(); ++i, ++n) s += (gt[i] - est[i]) * (gt[i] - est[i]);
    CHECK(std::sqrt(s / n) < 0.3);
  }
  // Dry fins read nothing.
  for (const auto& f : fin_names())
    for (double v : r.trace.column("gt_" + f + "_force")) CHECK(v == 0.0);
  CHECK(r.bus.rounds > 0);
}

TEST_CASE("closed loop in water keeps the foot estimates near zero") {
  Scenario sc = short_scenario(4.0);
  sc.terrain.kind = Terrain::Kind::Water;
  sc.initial_mode = cpg::GaitMode::Swimming;
  auto r = run_scenario(sc);
  for (const auto& f : foot_names())
    for (double v : r.trace.column("est_" + f + "_f_x")) CHECK(std::abs(v) < 1.0);
  double peak = 0.0;
  for (double v : r.trace.column("gt_fin4_force")) peak = std::max(peak, std::abs(v));
  CHECK(peak > 0.02);
}

TEST_CASE("feedback switches to swimming after the shoreline") {
  Scenario sc = short_scenario(12.0);
  sc.terrain = {Terrain::Kind::Shoreline, 1.0};
  sc.feedback = true;
  auto r = run_scenario(sc);
  REQUIRE(r.transition_time);
  const auto& sum = r.trace.column("est_foot_sum");
  const auto& t = r.trace.column("t");
  std::size_t cross = 0;
  while (cross < sum.size() && sum[cross] >= sc.transition.threshold_n) ++cross;
  REQUIRE(cross < sum.size());
  CHECK(*r.transition_time - t[cross] >= 0.0);
  CHECK(*r.transition_time - t[cross] <= 0.02 + 1e-9);
  CHECK(r.trace.column("mode").back() == 1.0);
  CHECK(r.trace.column("drive").back() == doctest::Approx(sc.cpg.d_swim));
}

TEST_CASE("a dead sensor module does not stall the loop") {
  Scenario sc = short_scenario(2.0);
  sc.sensing.faults.kills.push_back({3, 0.5});
  auto r = run_scenario(sc);
  CHECK(r.bus.timeout_recoveries > 0);
  // The dead foot keeps its last estimate, the others keep updating.
  const auto& hr = r.trace.column("est_HR_f_x");
  const auto& fl = r.trace.column("est_FL_f_x");
  CHECK(hr[1900] == hr[1000]);
  CHECK(fl[1900] != fl[1000]);
}

TEST_CASE("fixed seed gives byte-identical traces") {
  Scenario sc = short_scenario(1.5);
  auto csv = [](const Scenario& s) {
    std::ostringstream o;
    run_scenario(s).trace.write_csv(o, s.trace_digits);
    return o.str();
  };
  std::string a = csv(sc), b = csv(sc);
  CHECK(a == b);
  sc.seed = 99;
  CHECK(csv(sc) != a);
}
