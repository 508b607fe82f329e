#pragma once

// Phase-oscillator central pattern generator: 32 oscillators, one
// antagonist pair per actuated joint, with drive-dependent saturation that
// switches the network between a stepping gait and a traveling body wave.

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

namespace amphibot::cpg {

inline constexpr int kJoints = 16;
inline constexpr int kAxialJoints = 8;
inline constexpr int kOscillators = 2 * kJoints;

enum class OscillatorGroup { Axial, Limb };
enum class GaitMode { Walking, Swimming };

std::string to_string(GaitMode mode);

/// Affine in the band [d_low, d_high], zero outside it.
struct SaturationMap {
  double d_low = 0.0;
  double d_high = 1.0;
  double c1 = 0.0;
  double c0 = 0.0;

  SaturationMap() = default;
  SaturationMap(double low, double high, double slope, double offset);

  bool in_band(double d) const { return d >= d_low && d <= d_high; }
};

double drive_to_intrinsic(double d, const SaturationMap& map);

struct OscillatorParams {
  double a = 20.0;  // 1/s
  SaturationMap omega;      // rad/s
  SaturationMap amplitude;  // target amplitude R
  OscillatorGroup group = OscillatorGroup::Axial;
  int side = 0;  // +1 flexor/left, -1 extensor/right; scales the turning offset
};

/// Directed coupling: oscillator `target` is pulled toward phase(source) - bias.
struct CouplingEdge {
  int target = 0;
  int source = 0;
  double weight = 0.0;  // 1/s
  double bias = 0.0;    // rad
  /// Inactive while the source oscillator's frequency map is saturated.
  bool gated_by_source = false;
};

class CouplingGraph {
public:
  CouplingGraph() = default;
  CouplingGraph(int oscillators, std::vector<CouplingEdge> edges);

  int size() const { return n_; }
  const std::vector<CouplingEdge>& edges() const { return edges_; }
  bool connected() const;

private:
  int n_ = 0;
  std::vector<CouplingEdge> edges_;
};

/// Oscillator indices driving one joint.
struct JointPair {
  std::string name;
  int flexor = 0;
  int extensor = 0;
};

using JointMap = std::array<JointPair, kJoints>;
using JointAngles = std::array<double, kJoints>;

/// Declared network constants. Frequencies in Hz, amplitudes in degrees of
/// joint excursion (half peak-to-peak).
struct NetworkConfig {
  double d_walk = 2.0;
  double d_swim = 5.0;
  double walk_frequency_hz = 0.47;
  double swim_frequency_hz = 0.78;
  double axial_band_low = 1.0;
  double axial_band_high = 6.0;
  double limb_band_low = 1.0;
  double limb_band_high = 3.0;
  double walk_axial_amplitude_deg = 20.0;
  double swim_axial_amplitude_deg = 29.0;
  double limb_fore_aft_amplitude_deg = 35.0;
  double limb_dorsoventral_amplitude_deg = 30.0;
  double coupling_weight = 10.0;
  double limb_to_axial_weight = 10.0;
  double convergence_rate = 20.0;  // a_i
  double axial_total_lag = 6.283185307179586;  // head-to-tail phase lag, rad
  double turn_bias = 0.0;

  nlohmann::json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);
};

struct Network {
  std::vector<OscillatorParams> oscillators;
  CouplingGraph graph;
  JointMap joints;
  double gain = 0.0;  // rad per unit activity difference
  double d_walk = 2.0;
  double d_swim = 5.0;
  double turn_bias = 0.0;

  nlohmann::json to_json() const;
  static Network from_json(const nlohmann::json& j);
};

struct NetworkState {
  std::vector<double> phase;      // rad, unwrapped
  std::vector<double> amplitude;  // >= 0
  double drive = 0.0;
  double t = 0.0;

  static NetworkState initial(const Network& net, double drive, double phase_seed_spread = 0.0,
                              unsigned seed = 0);
};

struct GaitState {
  GaitMode mode = GaitMode::Walking;
  double drive = 2.0;
};

struct TransitionConfig {
  double threshold_n = 7.0;
  double d_swim = 5.0;
  bool allow_reverse = false;  // hook for a swim->walk rule, off by default
  double reverse_threshold_n = 12.0;
  double d_walk = 2.0;
};

/// Joint order: 8 axial joints head to tail, then FL, FR, HL, HR, each as
/// (fore-aft, dorsoventral).
Network build_polymander_network(const NetworkConfig& config = {});

/// One RK4 step of the phase/amplitude dynamics.
NetworkState step_network(const NetworkState& state, const Network& net, double dt);

/// x_i = r_i (1 + cos phi_i)
std::vector<double> oscillator_output(const NetworkState& state);

JointAngles joint_targets(const std::vector<double>& activity, const JointMap& joints, double gain);

GaitState transition_controller(double foot_sum_n, const GaitState& state,
                                const TransitionConfig& config = {});

/// Joint index helpers.
int axial_joint(int k);
int limb_joint(int leg, bool dorsoventral);  // leg: 0 FL, 1 FR, 2 HL, 3 HR

}  // namespace amphibot::cpg
