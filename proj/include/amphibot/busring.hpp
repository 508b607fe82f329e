#pragma once

// Sensor bus: 11-byte frame codec with CRC-8 and a discrete-event model of
// the masterless token ring in which each module transmits right after its
// predecessor's frame, falling back to a watchdog when a predecessor is
// silent.

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "amphibot/magnetics.hpp"
#include <json.hpp>

namespace amphibot::busring {

inline constexpr std::uint8_t kSync = 0xAA;
inline constexpr std::uint8_t kControlSync = 0x55;
inline constexpr std::size_t kFrameBytes = 11;
inline constexpr std::size_t kControlBytes = 3;
inline constexpr double kDefaultFluxLsbMt = 2e-4;
inline constexpr double kTemperatureLsbC = 0.01;

using Frame = std::array<std::uint8_t, kFrameBytes>;

class OverflowError : public Error {
public:
  using Error::Error;
};

enum class DecodeStatus { Ok, BadSync, BadCrc, ShortFrame };
std::string to_string(DecodeStatus s);

class DecodeError : public Error {
public:
  DecodeError(DecodeStatus s, const std::string& what) : Error(what), status(s) {}
  DecodeStatus status;
};

/// CRC-8, polynomial 0x07, init 0x00, no reflection, no final xor.
std::uint8_t crc8(std::span<const std::uint8_t> bytes);

/// Frame: sync, id, bx, by, bz (int16 LE, flux / lsb), temperature (int16 LE,
/// 0.01 C), crc8(id..temperature). The timestamp is not carried on the wire.
Frame encode_frame(const magnetics::FluxSample& sample, double flux_lsb_mt = kDefaultFluxLsbMt);

/// Timestamp of the result is set to `t_receive`.
magnetics::FluxSample decode_frame(std::span<const std::uint8_t> bytes,
                                   double flux_lsb_mt = kDefaultFluxLsbMt, double t_receive = 0.0);

/// Status only, no exception.
DecodeStatus check_frame(std::span<const std::uint8_t> bytes);

enum class ControlOpcode : std::uint8_t { Start = 0x01, Reset = 0x02 };
std::array<std::uint8_t, kControlBytes> encode_control(ControlOpcode op);

struct LineConfig {
  double baud = 1e6;
  int bits_per_byte = 10;
  double inter_frame_gap = 20e-6;
  /// Watchdog per missing slot; <= 0 selects 2 x (frame + gap).
  double timeout = 0.0;
  /// Transmissions starting closer than this cannot sense each other and collide.
  double carrier_sense_window = 1e-6;
  double flux_lsb_mt = kDefaultFluxLsbMt;

  double byte_time() const { return bits_per_byte / baud; }
  double frame_time() const { return kFrameBytes * byte_time(); }
  double control_time() const { return kControlBytes * byte_time(); }
  double effective_timeout() const;
  void validate() const;

  nlohmann::json to_json() const;
  static LineConfig from_json(const nlohmann::json& j);
};

/// Closed-form fault-free per-module rate.
double nominal_module_rate(int n_modules, const LineConfig& line);

struct KillFault {
  int module = 0;
  double at = 0.0;
};

/// Adds `extra` seconds before the module's first transmission opportunity at or after `at`.
struct DelayFault {
  int module = 0;
  double at = 0.0;
  double extra = 0.0;
};

/// Flips one wire bit (0..87) of the module's first frame at or after `at`.
struct BitFlipFault {
  int module = 0;
  double at = 0.0;
  int bit = 0;
};

struct FaultPlan {
  std::vector<KillFault> kills;
  std::vector<DelayFault> delays;
  std::vector<BitFlipFault> flips;
  /// Independent per-frame probability of one random bit flip.
  double random_flip_probability = 0.0;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static FaultPlan from_json(const nlohmann::json& j);
};

/// Frame sample provider: (module id, transmit start time) -> sample.
using SampleSource = std::function<magnetics::FluxSample(std::uint8_t module_id, double t)>;

/// What the host saw on the bus.
struct ReceivedFrame {
  double t_start = 0.0;
  double t_end = 0.0;
  Frame bytes{};
  DecodeStatus status = DecodeStatus::Ok;
  std::optional<magnetics::FluxSample> sample;
  /// Ground truth for statistics; the host only knows `sample`.
  std::vector<int> senders;
  bool watchdog = false;  // sent after a watchdog expiry rather than a predecessor frame
};

struct ModuleStats {
  int id = 0;
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_received_ok = 0;
  std::uint64_t timeout_recoveries = 0;
  double rate_hz = 0.0;  // from the mean interval between valid frames
};

struct RingStats {
  int n_modules = 0;
  double duration = 0.0;
  std::vector<ModuleStats> modules;
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_corrupted = 0;  // injected flips plus collisions
  std::uint64_t corruptions_detected = 0;
  std::uint64_t collisions = 0;
  std::uint64_t timeout_recoveries = 0;
  std::uint64_t host_frames_sent = 0;
  double round_period_mean = 0.0;
  double round_period_min = 0.0;
  double round_period_max = 0.0;
  std::uint64_t rounds = 0;

  nlohmann::json to_json() const;
};

enum class ModuleState { Idle, Armed, Transmitting };

class RingSimulator {
public:
  RingSimulator(int n_modules, const LineConfig& line, FaultPlan faults = {}, SampleSource source = {});

  /// Host start broadcast at the current time. Called implicitly by the first run_until.
  void start();
  /// Host reset broadcast: the ring restarts from module 0.
  void reset();

  /// Advances the simulation and returns frames whose transmission ended in (now, t].
  std::vector<ReceivedFrame> run_until(double t);

  double now() const { return now_; }
  ModuleState state(int module) const;
  const std::vector<ReceivedFrame>& trace() const { return trace_; }
  void keep_trace(bool keep) { keep_trace_ = keep; }
  RingStats stats() const;

private:
  struct Node {
    int id = 0;
    bool alive = true;
    ModuleState state = ModuleState::Idle;
    int last_seen = -1;  // id this node attributes to the last frame it observed
    ModuleStats stats;
    double first_ok = -1.0;
    double last_ok = -1.0;
  };

  void host_broadcast(ControlOpcode op);
  void apply_kills(double t);
  /// Next bus transmission after the last observed frame, or nothing.
  bool schedule_next(double limit, std::vector<ReceivedFrame>& out);

  int n_;
  LineConfig line_;
  FaultPlan faults_;
  SampleSource source_;
  std::vector<Node> nodes_;
  std::vector<bool> delay_used_;
  std::vector<bool> flip_used_;
  std::vector<bool> kill_applied_;
  std::mt19937_64 rng_;

  bool started_ = false;
  double now_ = 0.0;
  double bus_free_ = 0.0;  // end of the last observed transmission
  double start_time_ = 0.0;

  std::vector<ReceivedFrame> trace_;
  bool keep_trace_ = true;
  RingStats totals_;
  std::vector<double> round_starts_;
  int last_round_lead_ = -1;
};

/// Fault-free or faulted ring for `duration` seconds.
RingStats simulate_ring(int n_modules, const LineConfig& line, double duration, const FaultPlan& faults = {});

/// Upper bound on the motor loop rate when each motor is written then read in turn.
double motor_bus_budget(int n_motors, double t_write, double t_read);

/// Binary: per frame, t_end as IEEE-754 little-endian double followed by the 11 wire bytes.
void write_trace_binary(std::ostream& out, const std::vector<ReceivedFrame>& frames);
void write_trace_csv(std::ostream& out, const std::vector<ReceivedFrame>& frames);

}  // namespace amphibot::busring
