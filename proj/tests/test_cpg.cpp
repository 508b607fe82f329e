#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <doctest.h>

#include "amphibot/cpg.hpp"

using namespace amphibot::cpg;

namespace {

constexpr double kPi = std::numbers::pi;

double wrap(double a) { return std::remainder(a, 2.0 * kPi); }

NetworkState run(const Network& net, NetworkState s, double seconds, double dt = 1e-3) {
  int steps = static_cast<int>(std::lround(seconds / dt));
  for (int i = 0; i < steps; ++i) s = step_network(s, net, dt);
  return s;
}

NetworkState random_start(const Network& net, double drive, std::mt19937_64& rng) {
  NetworkState s = NetworkState::initial(net, drive);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  std::uniform_real_distribution<double> ur(0.0, 1.5);
  for (std::size_t i = 0; i < s.phase.size(); ++i) {
    s.phase[i] = u(rng);
    s.amplitude[i] = ur(rng);
  }
  return s;
}

// Single oscillator network with constant maps on [0, 10].
Network single(double omega, double R, double a) {
  Network net;
  OscillatorParams p;
  p.a = a;
  p.omega = SaturationMap(0.0, 10.0, 0.0, omega);
  p.amplitude = SaturationMap(0.0, 10.0, 0.0, R);
  net.oscillators = {p};
  net.graph = CouplingGraph(1, {});
  return net;
}

int osc_of(int joint) { return 2 * joint; }

}  // namespace

TEST_CASE("network structure") {
  Network net = build_polymander_network();
  CHECK(net.oscillators.size() == 32);
  std::set<int> used;
  for (const auto& jp : net.joints) {
    CHECK(used.insert(jp.flexor).second);
    CHECK(used.insert(jp.extensor).second);
  }
  CHECK(used.size() == 32);
  CHECK(net.graph.connected());

  int pair_edges = 0;
  for (const auto& e : net.graph.edges()) {
    CHECK(e.target != e.source);
    CHECK(e.weight >= 0.0);
    for (const auto& jp : net.joints) {
      bool within = (e.target == jp.flexor && e.source == jp.extensor) ||
                    (e.target == jp.extensor && e.source == jp.flexor);
      if (within) {
        ++pair_edges;
        CHECK(std::abs(std::abs(e.bias) - kPi) < 1e-15);
      }
    }
  }
  CHECK(pair_edges == 32);
  int axial = 0;
  for (const auto& p : net.oscillators) axial += p.group == OscillatorGroup::Axial;
  CHECK(axial == 16);
}

TEST_CASE("coupling graph validation") {
  CHECK_THROWS_AS(CouplingGraph(2, {{0, 0, 1.0, 0.0, false}}), std::invalid_argument);
  CHECK_THROWS_AS(CouplingGraph(2, {{0, 1, std::nan(""), 0.0, false}}), std::invalid_argument);
  CHECK_THROWS_AS(CouplingGraph(2, {{0, 1, -1.0, 0.0, false}}), std::invalid_argument);
  CHECK_FALSE(CouplingGraph(3, {{0, 1, 1.0, 0.0, false}}).connected());
  CHECK_THROWS_AS(SaturationMap(2.0, 1.0, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("drive to intrinsic") {
  SaturationMap m(1.0, 3.0, 2.0, 0.5);
  CHECK(drive_to_intrinsic(0.5, m) == 0.0);
  CHECK(drive_to_intrinsic(4.0, m) == 0.0);
  CHECK(drive_to_intrinsic(2.0, m) == doctest::Approx(4.5));

  Network net = build_polymander_network();
  const auto& axial = net.oscillators[osc_of(axial_joint(3))];
  const auto& limb = net.oscillators[osc_of(limb_joint(2, false))];
  CHECK(drive_to_intrinsic(net.d_walk, axial.omega) == doctest::Approx(2 * kPi * 0.47).epsilon(1e-12));
  CHECK(drive_to_intrinsic(net.d_swim, axial.omega) == doctest::Approx(2 * kPi * 0.78).epsilon(1e-12));
  CHECK(drive_to_intrinsic(net.d_swim, limb.omega) == 0.0);
  CHECK(drive_to_intrinsic(net.d_swim, limb.amplitude) == 0.0);
  CHECK(drive_to_intrinsic(net.d_walk, limb.omega) == doctest::Approx(2 * kPi * 0.47).epsilon(1e-12));
  // walking trunk amplitude below the swimming one
  CHECK(drive_to_intrinsic(net.d_walk, axial.amplitude) < drive_to_intrinsic(net.d_swim, axial.amplitude));
}

TEST_CASE("uncoupled oscillator phase grows linearly") {
  Network net = single(2 * kPi, 1.0, 20.0);
  NetworkState s;
  s.phase = {0.0};
  s.amplitude = {1.0};
  s.drive = 1.0;
  s = run(net, s, 1.0);
  CHECK(std::abs(s.phase[0] - 2 * kPi) < 1e-6);
  CHECK(std::abs(s.t - 1.0) < 1e-9);
}

TEST_CASE("amplitude relaxes exponentially") {
  const double a = 20.0, R = 1.3, r0 = 0.2;
  Network net = single(1.0, R, a);
  NetworkState s;
  s.phase = {0.0};
  s.amplitude = {r0};
  s.drive = 1.0;
  double t_end = 5.0 / a;
  s = run(net, s, t_end);
  double oracle = R + (r0 - R) * std::exp(-a * t_end);
  CHECK(std::abs(s.amplitude[0] - oracle) < 1e-9);
  CHECK(std::abs(s.amplitude[0] - R) < 0.007 * std::abs(r0 - R));
}

TEST_CASE("two coupled oscillators lock at the bias") {
  const double w = 10.0, b = 0.7;
  Network net;
  OscillatorParams p;
  p.omega = SaturationMap(0.0, 10.0, 0.0, 3.0);
  p.amplitude = SaturationMap(0.0, 10.0, 0.0, 1.0);
  net.oscillators = {p, p};
  // target 1 pulled toward phi_0 - b_10 with b_10 = -b, so phi_1 - phi_0 -> b
  net.graph = CouplingGraph(2, {{0, 1, w, b, false}, {1, 0, w, -b, false}});
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  for (int trial = 0; trial < 10; ++trial) {
    NetworkState s;
    s.phase = {u(rng), u(rng)};
    s.amplitude = {1.0, 1.0};
    s.drive = 1.0;
    // psi' = -2w sin(psi - b): the only stable fixed point is psi = b
    if (std::abs(wrap(s.phase[1] - s.phase[0] - b) - kPi) < 1e-3) continue;
    s = run(net, s, 5.0);
    CHECK(std::abs(wrap(s.phase[1] - s.phase[0] - b)) < 1e-9);
  }
}

TEST_CASE("oscillator output") {
  NetworkState s;
  s.phase = {0.0, kPi, 1.0};
  s.amplitude = {1.0, 1.0, 0.5};
  auto x = oscillator_output(s);
  CHECK(x[0] == doctest::Approx(2.0));
  CHECK(std::abs(x[1]) < 1e-15);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-50, 50), ur(0, 3);
  for (int i = 0; i < 1000; ++i) {
    NetworkState t;
    t.phase = {u(rng)};
    t.amplitude = {ur(rng)};
    double xi = oscillator_output(t)[0];
    CHECK(xi >= 0.0);
    CHECK(xi <= 2 * t.amplitude[0] + 1e-15);
  }
}

TEST_CASE("joint readout is the pair difference") {
  Network net = build_polymander_network();
  std::vector<double> x(32, 0.8);
  for (double a : joint_targets(x, net.joints, net.gain)) CHECK(a == 0.0);

  const double r = 0.9;
  for (double phi : {0.0, 0.4, 1.9, 3.0, -2.2}) {
    NetworkState s = NetworkState::initial(net, net.d_swim);
    for (int i = 0; i < 32; ++i) {
      s.phase[i] = phi + (i % 2 ? kPi : 0.0);
      s.amplitude[i] = r;
    }
    auto angles = joint_targets(oscillator_output(s), net.joints, net.gain);
    // r(1+cos phi) - r(1 - cos phi) = 2 r cos phi
    for (double a : angles) CHECK(a == doctest::Approx(net.gain * 2 * r * std::cos(phi)).epsilon(1e-12));
  }
  // swim amplitude R = 1 at full excursion gives 29 degrees
  CHECK(net.gain * 2.0 * drive_to_intrinsic(net.d_swim, net.oscillators[0].amplitude) * 180.0 / kPi ==
        doctest::Approx(29.0));
}

TEST_CASE("transition controller") {
  GaitState walk{GaitMode::Walking, 2.0};
  CHECK(transition_controller(20.0, walk).mode == GaitMode::Walking);
  CHECK(transition_controller(20.0, walk).drive == 2.0);
  GaitState next = transition_controller(6.9, walk);
  CHECK(next.mode == GaitMode::Swimming);
  CHECK(next.drive == 5.0);
  CHECK(transition_controller(7.0, walk).mode == GaitMode::Walking);
  GaitState swim{GaitMode::Swimming, 5.0};
  CHECK(transition_controller(30.0, swim).mode == GaitMode::Swimming);
  TransitionConfig rev;
  rev.allow_reverse = true;
  CHECK(transition_controller(30.0, swim, rev).mode == GaitMode::Walking);
}

TEST_CASE("dt bounds") {
  Network net = build_polymander_network();
  NetworkState s = NetworkState::initial(net, net.d_walk);
  CHECK_THROWS_AS(step_network(s, net, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(step_network(s, net, 0.011), std::invalid_argument);
  CHECK_NOTHROW(step_network(s, net, 0.010));
}

TEST_CASE("amplitudes stay non-negative under drive changes") {
  Network net = build_polymander_network();
  std::mt19937_64 rng(11);
  NetworkState s = random_start(net, net.d_walk, rng);
  std::uniform_real_distribution<double> d(0.0, 7.0);
  for (int k = 0; k < 40; ++k) {
    s.drive = d(rng);
    for (int i = 0; i < 100; ++i) {
      s = step_network(s, net, 0.01);
      for (double r : s.amplitude) REQUIRE(r >= 0.0);
    }
  }
}

TEST_CASE("swim drive phase-lock convergence") {
  Network net = build_polymander_network();
  std::mt19937_64 rng(2024);
  // Axial oscillators are the active ones at swim drive. Saturated limbs are
  // mutually coupled but cut off from the trunk, so only limb-limb
  // differences are defined.
  std::vector<int> axial, limb;
  for (int i = 0; i < 32; ++i)
    (net.oscillators[i].group == OscillatorGroup::Axial ? axial : limb).push_back(i);
  std::vector<double> ref_axial, ref_limb;
  for (int trial = 0; trial < 20; ++trial) {
    NetworkState s = run(net, random_start(net, net.d_swim, rng), 30.0, 2e-3);
    std::vector<double> da, dl;
    for (int i : axial) da.push_back(wrap(s.phase[i] - s.phase[axial[0]]));
    for (int i : limb) dl.push_back(wrap(s.phase[i] - s.phase[limb[0]]));
    if (trial == 0) {
      ref_axial = da;
      ref_limb = dl;
      continue;
    }
    for (std::size_t k = 0; k < da.size(); ++k) CHECK(std::abs(wrap(da[k] - ref_axial[k])) < 1e-3);
    for (std::size_t k = 0; k < dl.size(); ++k) CHECK(std::abs(wrap(dl[k] - ref_limb[k])) < 1e-3);
  }
}

TEST_CASE("traveling wave at swim drive") {
  NetworkConfig cfg;
  for (double total : {2 * kPi, kPi, 1.5 * kPi}) {
    cfg.axial_total_lag = total;
    Network net = build_polymander_network(cfg);
    NetworkState s = run(net, NetworkState::initial(net, net.d_swim), 20.0);
    double sum = 0.0;
    for (int k = 0; k + 1 < kAxialJoints; ++k) {
      double lag = wrap(s.phase[osc_of(k)] - s.phase[osc_of(k + 1)]);
      CHECK(lag > 0.0);
      sum += lag;
    }
    CHECK(std::abs(sum - total) < 0.05 * total);
  }
}

TEST_CASE("gait frequencies follow the drive") {
  Network net = build_polymander_network();
  for (auto [drive, hz] : {std::pair{net.d_walk, 0.47}, std::pair{net.d_swim, 0.78}}) {
    NetworkState s = run(net, NetworkState::initial(net, drive), 10.0);
    double p0 = s.phase[osc_of(4)];
    s = run(net, s, 10.0);
    double f = (s.phase[osc_of(4)] - p0) / (2 * kPi * 10.0);
    CHECK(f == doctest::Approx(hz).epsilon(1e-6));
  }
}

TEST_CASE("walking limb phase relations") {
  Network net = build_polymander_network();
  NetworkState s = run(net, NetworkState::initial(net, net.d_walk, 1.0, 5), 15.0);
  auto ph = [&](int leg) { return s.phase[osc_of(limb_joint(leg, false))]; };
  auto cyc = [](double d) { return std::abs(wrap(d)) / (2 * kPi); };
  // FL=0 FR=1 HL=2 HR=3
  CHECK(cyc(ph(0) - ph(3)) < 0.01);
  CHECK(cyc(ph(1) - ph(2)) < 0.01);
  CHECK(std::abs(cyc(ph(0) - ph(2)) - 0.5) < 0.01);
  CHECK(std::abs(cyc(ph(1) - ph(3)) - 0.5) < 0.01);
  for (int leg = 0; leg < 4; ++leg) {
    double lead = wrap(s.phase[osc_of(limb_joint(leg, true))] - ph(leg));
    CHECK(lead == doctest::Approx(kPi / 2).epsilon(1e-6));
  }
  // trunk: front and rear girdles half a cycle apart
  double girdle = wrap(s.phase[osc_of(1)] - s.phase[osc_of(5)]);
  CHECK(std::abs(std::abs(girdle) - kPi) < 0.25 * kPi);
}

TEST_CASE("limbs saturate within three cycles of the swim switch") {
  Network net = build_polymander_network();
  NetworkState s = run(net, NetworkState::initial(net, net.d_walk), 10.0);
  for (int i = 0; i < 32; ++i)
    if (net.oscillators[i].group == OscillatorGroup::Limb) CHECK(s.amplitude[i] > 0.5);
  s.drive = net.d_swim;
  s = run(net, s, 3.0 / 0.78);
  auto angles = joint_targets(oscillator_output(s), net.joints, net.gain);
  for (int i = 0; i < 32; ++i)
    if (net.oscillators[i].group == OscillatorGroup::Limb) CHECK(s.amplitude[i] < 1e-3);
  for (int j = kAxialJoints; j < kJoints; ++j) CHECK(std::abs(angles[j]) < 1e-3);
}

TEST_CASE("halving dt barely moves the steady state") {
  Network net = build_polymander_network();
  for (double drive : {net.d_walk, net.d_swim}) {
    NetworkState a = run(net, NetworkState::initial(net, drive, 0.5, 9), 20.0, 2e-3);
    NetworkState b = run(net, NetworkState::initial(net, drive, 0.5, 9), 20.0, 1e-3);
    for (int i = 1; i < 32; ++i) {
      double da = wrap(a.phase[i] - a.phase[0]);
      double db = wrap(b.phase[i] - b.phase[0]);
      CHECK(std::abs(wrap(da - db)) < 1e-4);
    }
  }
}

TEST_CASE("json round trip") {
  NetworkConfig cfg;
  cfg.walk_axial_amplitude_deg = 18.0;
  cfg.axial_total_lag = 4.0;
  NetworkConfig back = NetworkConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());

  Network net = build_polymander_network(cfg);
  Network copy = Network::from_json(nlohmann::json::parse(net.to_json().dump()));
  CHECK(copy.to_json() == net.to_json());
  NetworkState s1 = run(net, NetworkState::initial(net, net.d_walk), 1.0);
  NetworkState s2 = run(copy, NetworkState::initial(copy, copy.d_walk), 1.0);
  CHECK(s1.phase == s2.phase);
  CHECK(s1.amplitude == s2.amplitude);
}
