#include "amphibot/cpg.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "amphibot/vec3.hpp"

namespace amphibot::cpg {

namespace {

constexpr double kPi = std::numbers::pi;

double deg2rad(double d) { return d * kPi / 180.0; }

// Affine map through (d_a, v_a) and (d_b, v_b) restricted to [low, high].
SaturationMap through(double low, double high, double d_a, double v_a, double d_b, double v_b) {
  double slope = (v_b - v_a) / (d_b - d_a);
  return SaturationMap(low, high, slope, v_a - slope * d_a);
}

SaturationMap constant(double low, double high, double v) { return SaturationMap(low, high, 0.0, v); }

const char* kLegNames[4] = {"FL", "FR", "HL", "HR"};

}  // namespace

std::string to_string(GaitMode mode) { return mode == GaitMode::Walking ? "walking" : "swimming"; }

SaturationMap::SaturationMap(double low, double high, double slope, double offset)
    : d_low(low), d_high(high), c1(slope), c0(offset) {
  if (!(low < high)) throw std::invalid_argument("saturation map needs d_low < d_high");
  if (!std::isfinite(slope) || !std::isfinite(offset))
    throw std::invalid_argument("saturation map coefficients must be finite");
}

double drive_to_intrinsic(double d, const SaturationMap& map) {
  return map.in_band(d) ? map.c1 * d + map.c0 : 0.0;
}

CouplingGraph::CouplingGraph(int oscillators, std::vector<CouplingEdge> edges)
    : n_(oscillators), edges_(std::move(edges)) {
  for (const auto& e : edges_) {
    if (e.target < 0 || e.target >= n_ || e.source < 0 || e.source >= n_)
      throw std::invalid_argument("coupling edge index out of range");
    if (e.target == e.source) throw std::invalid_argument("coupling graph has a self-edge");
    if (!std::isfinite(e.weight) || e.weight < 0.0)
      throw std::invalid_argument("coupling weight must be finite and non-negative");
    if (!std::isfinite(e.bias)) throw std::invalid_argument("coupling bias must be finite");
  }
}

bool CouplingGraph::connected() const {
  if (n_ == 0) return true;
  std::vector<std::vector<int>> adj(n_);
  for (const auto& e : edges_) {
    adj[e.target].push_back(e.source);
    adj[e.source].push_back(e.target);
  }
  std::vector<bool> seen(n_, false);
  std::vector<int> stack{0};
  seen[0] = true;
  int count = 1;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (int u : adj[v])
      if (!seen[u]) {
        seen[u] = true;
        ++count;
        stack.push_back(u);
      }
  }
  return count == n_;
}

int axial_joint(int k) {
  if (k < 0 || k >= kAxialJoints) throw std::out_of_range("axial joint index");
  return k;
}

int limb_joint(int leg, bool dorsoventral) {
  if (leg < 0 || leg >= 4) throw std::out_of_range("leg index");
  return kAxialJoints + 2 * leg + (dorsoventral ? 1 : 0);
}

Network build_polymander_network(const NetworkConfig& c) {
  if (!(c.d_walk < c.d_swim)) throw std::invalid_argument("d_walk must be below d_swim");
  if (!(c.convergence_rate > 0.0)) throw std::invalid_argument("a_i must be positive");
  if (c.limb_band_high >= c.d_swim || c.limb_band_high < c.d_walk)
    throw std::invalid_argument("limb band must contain d_walk and end below d_swim");

  Network net;
  net.d_walk = c.d_walk;
  net.d_swim = c.d_swim;
  net.turn_bias = c.turn_bias;

  // Amplitudes are normalized so that the swim axial target is R = 1.
  const double r_swim = 1.0;
  net.gain = deg2rad(c.swim_axial_amplitude_deg) / (2.0 * r_swim);
  const double r_walk = deg2rad(c.walk_axial_amplitude_deg) / (2.0 * net.gain);

  const double w_walk = 2.0 * kPi * c.walk_frequency_hz;
  const double w_swim = 2.0 * kPi * c.swim_frequency_hz;
  SaturationMap axial_omega =
      through(c.axial_band_low, c.axial_band_high, c.d_walk, w_walk, c.d_swim, w_swim);
  SaturationMap axial_amp =
      through(c.axial_band_low, c.axial_band_high, c.d_walk, r_walk, c.d_swim, r_swim);
  // Limbs follow the axial frequency law inside their narrower band so both
  // groups share one frequency at walking drive.
  SaturationMap limb_omega(c.limb_band_low, c.limb_band_high, axial_omega.c1, axial_omega.c0);

  net.oscillators.resize(kOscillators);
  for (int j = 0; j < kJoints; ++j) {
    bool axial = j < kAxialJoints;
    SaturationMap omega = axial ? axial_omega : limb_omega;
    SaturationMap amp = axial_amp;
    if (!axial) {
      bool dv = (j - kAxialJoints) % 2 == 1;
      double deg = dv ? c.limb_dorsoventral_amplitude_deg : c.limb_fore_aft_amplitude_deg;
      amp = constant(c.limb_band_low, c.limb_band_high, deg2rad(deg) / (2.0 * net.gain));
    }
    for (int s = 0; s < 2; ++s) {
      OscillatorParams& p = net.oscillators[2 * j + s];
      p.a = c.convergence_rate;
      p.omega = omega;
      p.amplitude = amp;
      p.group = axial ? OscillatorGroup::Axial : OscillatorGroup::Limb;
      p.side = s == 0 ? 1 : -1;
    }
    JointPair& jp = net.joints[j];
    jp.flexor = 2 * j;
    jp.extensor = 2 * j + 1;
    if (axial) {
      jp.name = "axial" + std::to_string(j);
    } else {
      int leg = (j - kAxialJoints) / 2;
      bool dv = (j - kAxialJoints) % 2 == 1;
      jp.name = std::string(kLegNames[leg]) + (dv ? "_dv" : "_fa");
    }
  }

  std::vector<CouplingEdge> edges;
  auto both = [&](int i, int j, double w, double bias_i_from_j, bool gated = false) {
    // phi_j - phi_i -> bias at lock
    edges.push_back({i, j, w, bias_i_from_j, gated});
    edges.push_back({j, i, w, -bias_i_from_j, gated});
  };
  const double w = c.coupling_weight;

  for (int j = 0; j < kJoints; ++j) both(2 * j, 2 * j + 1, w, kPi);

  // Axial chain on each side: the head leads, so phi_k - phi_{k+1} = lag.
  const double lag = c.axial_total_lag / (kAxialJoints - 1);
  for (int k = 0; k + 1 < kAxialJoints; ++k)
    for (int s = 0; s < 2; ++s) both(2 * (k + 1) + s, 2 * k + s, w, lag);

  auto limb_osc = [](int leg, bool dv) { return 2 * limb_joint(leg, dv); };
  // FL=0, FR=1, HL=2, HR=3. Contralateral and ipsilateral anti-phase, so
  // diagonals end up in phase.
  both(limb_osc(1, false), limb_osc(0, false), w, kPi);
  both(limb_osc(3, false), limb_osc(2, false), w, kPi);
  both(limb_osc(2, false), limb_osc(0, false), w, kPi);
  both(limb_osc(3, false), limb_osc(1, false), w, kPi);
  // Dorsoventral leads fore-aft by a quarter cycle: the foot is down while
  // the leg sweeps backward.
  for (int leg = 0; leg < 4; ++leg) both(limb_osc(leg, true), limb_osc(leg, false), w, -kPi / 2.0);

  // One-way limb to girdle couplings. Fore legs pull the front trunk, hind
  // legs the rear trunk; the girdles sit half a cycle apart, giving the
  // S-shaped standing wave while stepping.
  const double wl = c.limb_to_axial_weight;
  const int front[] = {0, 1, 2};
  const int rear[] = {4, 5, 6};
  for (int leg = 0; leg < 4; ++leg) {
    int src = limb_osc(leg, false);
    int side = leg % 2;  // left legs drive left (flexor) oscillators
    const int* seg = leg < 2 ? front : rear;
    for (int n = 0; n < 3; ++n) edges.push_back({2 * seg[n] + side, src, wl, 0.0, true});
  }

  net.graph = CouplingGraph(kOscillators, std::move(edges));
  return net;
}

NetworkState NetworkState::initial(const Network& net, double drive, double spread, unsigned seed) {
  NetworkState s;
  std::size_t n = net.oscillators.size();
  s.phase.assign(n, 0.0);
  s.amplitude.assign(n, 0.0);
  s.drive = drive;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-spread, spread);
  for (std::size_t i = 0; i < n; ++i) {
    // Start each pair in antiphase so the readout is smooth from t = 0.
    s.phase[i] = (i % 2 == 1 ? kPi : 0.0) + (spread > 0.0 ? u(rng) : 0.0);
  }
  return s;
}

namespace {

struct Derivative {
  std::vector<double> dphi;
  std::vector<double> dr;
};

void evaluate(const Network& net, const std::vector<double>& omega, const std::vector<double>& target,
              const std::vector<bool>& source_active, const std::vector<double>& phi,
              const std::vector<double>& r, Derivative& out) {
  std::size_t n = phi.size();
  out.dphi.assign(omega.begin(), omega.end());
  out.dr.resize(n);
  for (const auto& e : net.graph.edges()) {
    if (e.gated_by_source && !source_active[e.source]) continue;
    out.dphi[e.target] += e.weight * std::sin(phi[e.source] - phi[e.target] - e.bias);
  }
  for (std::size_t i = 0; i < n; ++i) out.dr[i] = net.oscillators[i].a * (target[i] - r[i]);
}

}  // namespace

NetworkState step_network(const NetworkState& state, const Network& net, double dt) {
  if (!(dt > 0.0 && dt <= 0.010)) throw std::invalid_argument("dt must lie in (0, 10 ms]");
  std::size_t n = net.oscillators.size();
  if (state.phase.size() != n || state.amplitude.size() != n)
    throw std::invalid_argument("network state does not match network size");

  std::vector<double> omega(n), target(n);
  std::vector<bool> active(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = net.oscillators[i];
    omega[i] = drive_to_intrinsic(state.drive, p.omega);
    double r = drive_to_intrinsic(state.drive, p.amplitude);
    if (p.group == OscillatorGroup::Axial && p.omega.in_band(state.drive)) r += p.side * net.turn_bias;
    target[i] = std::max(0.0, r);
    active[i] = p.omega.in_band(state.drive);
  }

  Derivative k1, k2, k3, k4;
  std::vector<double> phi(n), r(n);
  evaluate(net, omega, target, active, state.phase, state.amplitude, k1);
  for (std::size_t i = 0; i < n; ++i) {
    phi[i] = state.phase[i] + 0.5 * dt * k1.dphi[i];
    r[i] = state.amplitude[i] + 0.5 * dt * k1.dr[i];
  }
  evaluate(net, omega, target, active, phi, r, k2);
  for (std::size_t i = 0; i < n; ++i) {
    phi[i] = state.phase[i] + 0.5 * dt * k2.dphi[i];
    r[i] = state.amplitude[i] + 0.5 * dt * k2.dr[i];
  }
  evaluate(net, omega, target, active, phi, r, k3);
  for (std::size_t i = 0; i < n; ++i) {
    phi[i] = state.phase[i] + dt * k3.dphi[i];
    r[i] = state.amplitude[i] + dt * k3.dr[i];
  }
  evaluate(net, omega, target, active, phi, r, k4);

  NetworkState next = state;
  for (std::size_t i = 0; i < n; ++i) {
    next.phase[i] += dt / 6.0 * (k1.dphi[i] + 2.0 * k2.dphi[i] + 2.0 * k3.dphi[i] + k4.dphi[i]);
    next.amplitude[i] += dt / 6.0 * (k1.dr[i] + 2.0 * k2.dr[i] + 2.0 * k3.dr[i] + k4.dr[i]);
    if (next.amplitude[i] < 0.0) next.amplitude[i] = 0.0;
  }
  next.t = state.t + dt;
  return next;
}

std::vector<double> oscillator_output(const NetworkState& state) {
  std::vector<double> x(state.phase.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = state.amplitude[i] * (1.0 + std::cos(state.phase[i]));
  return x;
}

JointAngles joint_targets(const std::vector<double>& x, const JointMap& joints, double gain) {
  JointAngles out{};
  for (int k = 0; k < kJoints; ++k) {
    const auto& jp = joints[k];
    if (jp.flexor < 0 || jp.extensor < 0 || static_cast<std::size_t>(jp.flexor) >= x.size() ||
        static_cast<std::size_t>(jp.extensor) >= x.size())
      throw std::out_of_range("joint map refers to a missing oscillator");
    out[k] = gain * (x[jp.flexor] - x[jp.extensor]);
  }
  return out;
}

GaitState transition_controller(double foot_sum_n, const GaitState& state, const TransitionConfig& c) {
  GaitState next = state;
  if (state.mode == GaitMode::Walking) {
    if (foot_sum_n < c.threshold_n) {
      next.mode = GaitMode::Swimming;
      next.drive = c.d_swim;
    }
  } else if (c.allow_reverse && foot_sum_n > c.reverse_threshold_n) {
    next.mode = GaitMode::Walking;
    next.drive = c.d_walk;
  }
  return next;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json map_json(const SaturationMap& m) {
  return {{"d_low", m.d_low}, {"d_high", m.d_high}, {"c1", m.c1}, {"c0", m.c0}};
}

SaturationMap map_from(const nlohmann::json& j) {
  return SaturationMap(j.at("d_low").get<double>(), j.at("d_high").get<double>(),
                       j.at("c1").get<double>(), j.at("c0").get<double>());
}

}  // namespace

nlohmann::json NetworkConfig::to_json() const {
  return {{"d_walk", d_walk},
          {"d_swim", d_swim},
          {"walk_frequency_hz", walk_frequency_hz},
          {"swim_frequency_hz", swim_frequency_hz},
          {"axial_band_low", axial_band_low},
          {"axial_band_high", axial_band_high},
          {"limb_band_low", limb_band_low},
          {"limb_band_high", limb_band_high},
          {"walk_axial_amplitude_deg", walk_axial_amplitude_deg},
          {"swim_axial_amplitude_deg", swim_axial_amplitude_deg},
          {"limb_fore_aft_amplitude_deg", limb_fore_aft_amplitude_deg},
          {"limb_dorsoventral_amplitude_deg", limb_dorsoventral_amplitude_deg},
          {"coupling_weight", coupling_weight},
          {"limb_to_axial_weight", limb_to_axial_weight},
          {"convergence_rate", convergence_rate},
          {"axial_total_lag", axial_total_lag},
          {"turn_bias", turn_bias}};
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  NetworkConfig c;
  auto get = [&](const char* key, double& field) {
    if (j.contains(key)) field = j.at(key).get<double>();
  };
  get("d_walk", c.d_walk);
  get("d_swim", c.d_swim);
  get("walk_frequency_hz", c.walk_frequency_hz);
  get("swim_frequency_hz", c.swim_frequency_hz);
  get("axial_band_low", c.axial_band_low);
  get("axial_band_high", c.axial_band_high);
  get("limb_band_low", c.limb_band_low);
  get("limb_band_high", c.limb_band_high);
  get("walk_axial_amplitude_deg", c.walk_axial_amplitude_deg);
  get("swim_axial_amplitude_deg", c.swim_axial_amplitude_deg);
  get("limb_fore_aft_amplitude_deg", c.limb_fore_aft_amplitude_deg);
  get("limb_dorsoventral_amplitude_deg", c.limb_dorsoventral_amplitude_deg);
  get("coupling_weight", c.coupling_weight);
  get("limb_to_axial_weight", c.limb_to_axial_weight);
  get("convergence_rate", c.convergence_rate);
  get("axial_total_lag", c.axial_total_lag);
  get("turn_bias", c.turn_bias);
  return c;
}

nlohmann::json Network::to_json() const {
  nlohmann::json osc = nlohmann::json::array();
  for (const auto& p : oscillators)
    osc.push_back({{"a", p.a},
                   {"omega", map_json(p.omega)},
                   {"amplitude", map_json(p.amplitude)},
                   {"group", p.group == OscillatorGroup::Axial ? "axial" : "limb"},
                   {"side", p.side}});
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : graph.edges())
    edges.push_back({{"target", e.target},
                     {"source", e.source},
                     {"weight", e.weight},
                     {"bias", e.bias},
                     {"gated_by_source", e.gated_by_source}});
  nlohmann::json jm = nlohmann::json::array();
  for (const auto& jp : joints) jm.push_back({{"name", jp.name}, {"flexor", jp.flexor}, {"extensor", jp.extensor}});
  return {{"oscillators", osc}, {"edges", edges}, {"joints", jm},     {"gain", gain},
          {"d_walk", d_walk},   {"d_swim", d_swim}, {"turn_bias", turn_bias}};
}

Network Network::from_json(const nlohmann::json& j) {
  Network net;
  for (const auto& o : j.at("oscillators")) {
    OscillatorParams p;
    p.a = o.at("a").get<double>();
    if (!(p.a > 0.0)) throw std::invalid_argument("a_i must be positive");
    p.omega = map_from(o.at("omega"));
    p.amplitude = map_from(o.at("amplitude"));
    std::string g = o.at("group").get<std::string>();
    if (g != "axial" && g != "limb") throw std::invalid_argument("unknown oscillator group: " + g);
    p.group = g == "axial" ? OscillatorGroup::Axial : OscillatorGroup::Limb;
    p.side = o.value("side", 0);
    net.oscillators.push_back(p);
  }
  std::vector<CouplingEdge> edges;
  for (const auto& e : j.at("edges"))
    edges.push_back({e.at("target").get<int>(), e.at("source").get<int>(), e.at("weight").get<double>(),
                     e.at("bias").get<double>(), e.value("gated_by_source", false)});
  net.graph = CouplingGraph(static_cast<int>(net.oscillators.size()), std::move(edges));
  const auto& jm = j.at("joints");
  if (jm.size() != static_cast<std::size_t>(kJoints)) throw std::invalid_argument("joint map must have 16 joints");
  for (int k = 0; k < kJoints; ++k) {
    net.joints[k].name = jm[k].at("name").get<std::string>();
    net.joints[k].flexor = jm[k].at("flexor").get<int>();
    net.joints[k].extensor = jm[k].at("extensor").get<int>();
  }
  net.gain = j.at("gain").get<double>();
  net.d_walk = j.at("d_walk").get<double>();
  net.d_swim = j.at("d_swim").get<double>();
  net.turn_bias = j.value("turn_bias", 0.0);
  if (!(net.d_walk < net.d_swim)) throw std::invalid_argument("d_walk must be below d_swim");
  return net;
}

}  // namespace amphibot::cpg
