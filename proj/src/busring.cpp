#include "amphibot/busring.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace amphibot::busring {

namespace {

std::int16_t to_raw(double value, double lsb, const char* what) {
  double q = std::nearbyint(value / lsb);
  if (!std::isfinite(q) || q < std::numeric_limits<std::int16_t>::min() ||
      q > std::numeric_limits<std::int16_t>::max())
    throw OverflowError(std::string(what) + " out of int16 range after scaling");
  return static_cast<std::int16_t>(q);
}

void put16(std::uint8_t* dst, std::int16_t v) {
  auto u = static_cast<std::uint16_t>(v);
  dst[0] = static_cast<std::uint8_t>(u & 0xFF);
  dst[1] = static_cast<std::uint8_t>(u >> 8);
}

std::int16_t get16(const std::uint8_t* src) {
  return static_cast<std::int16_t>(static_cast<std::uint16_t>(src[0] | (src[1] << 8)));
}

int ring_distance(int from, int to, int n) { return ((to - from) % n + n) % n; }

}  // namespace

std::string to_string(DecodeStatus s) {
  switch (s) {
    case DecodeStatus::Ok: return "ok";
    case DecodeStatus::BadSync: return "bad_sync";
    case DecodeStatus::BadCrc: return "bad_crc";
    case DecodeStatus::ShortFrame: return "short_frame";
  }
  return "unknown";
}

std::uint8_t crc8(std::span<const std::uint8_t> bytes) {
  std::uint8_t crc = 0x00;
  for (std::uint8_t b : bytes) {
    crc ^= b;
    for (int i = 0; i < 8; ++i) crc = (crc & 0x80) ? static_cast<std::uint8_t>((crc << 1) ^ 0x07) : static_cast<std::uint8_t>(crc << 1);
  }
  return crc;
}

Frame encode_frame(const magnetics::FluxSample& s, double lsb) {
  if (!(lsb > 0.0)) throw std::invalid_argument("flux LSB must be positive");
  Frame f{};
  f[0] = kSync;
  f[1] = s.module_id;
  put16(&f[2], to_raw(s.b.x, lsb, "flux x"));
  put16(&f[4], to_raw(s.b.y, lsb, "flux y"));
  put16(&f[6], to_raw(s.b.z, lsb, "flux z"));
  put16(&f[8], to_raw(s.temperature, kTemperatureLsbC, "temperature"));
  f[10] = crc8(std::span<const std::uint8_t>(f.data() + 1, 9));
  return f;
}

DecodeStatus check_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFrameBytes) return DecodeStatus::ShortFrame;
  if (bytes[0] != kSync) return DecodeStatus::BadSync;
  if (crc8(bytes.subspan(1, 9)) != bytes[10]) return DecodeStatus::BadCrc;
  return DecodeStatus::Ok;
}

magnetics::FluxSample decode_frame(std::span<const std::uint8_t> bytes, double lsb, double t_receive) {
  DecodeStatus st = check_frame(bytes);
  if (st != DecodeStatus::Ok) throw DecodeError(st, "frame decode failed: " + to_string(st));
  magnetics::FluxSample s;
  s.module_id = bytes[1];
  s.b = Vec3(get16(&bytes[2]) * lsb, get16(&bytes[4]) * lsb, get16(&bytes[6]) * lsb);
  s.temperature = get16(&bytes[8]) * kTemperatureLsbC;
  s.timestamp = t_receive;
  return s;
}

std::array<std::uint8_t, kControlBytes> encode_control(ControlOpcode op) {
  std::array<std::uint8_t, kControlBytes> f{kControlSync, static_cast<std::uint8_t>(op), 0};
  f[2] = crc8(std::span<const std::uint8_t>(f.data() + 1, 1));
  return f;
}

// ---------------------------------------------------------------------------

double LineConfig::effective_timeout() const {
  return timeout > 0.0 ? timeout : 2.0 * (frame_time() + inter_frame_gap);
}

void LineConfig::validate() const {
  if (!(baud > 0.0)) throw std::invalid_argument("baud must be positive");
  if (bits_per_byte < 8) throw std::invalid_argument("bits_per_byte must be at least 8");
  if (!(inter_frame_gap >= 0.0)) throw std::invalid_argument("inter_frame_gap must be non-negative");
  if (!(effective_timeout() > frame_time())) throw std::invalid_argument("timeout must exceed the frame duration");
  if (!(carrier_sense_window >= 0.0)) throw std::invalid_argument("carrier_sense_window must be non-negative");
  if (!(flux_lsb_mt > 0.0)) throw std::invalid_argument("flux LSB must be positive");
}

nlohmann::json LineConfig::to_json() const {
  return {{"baud", baud},
          {"bits_per_byte", bits_per_byte},
          {"inter_frame_gap", inter_frame_gap},
          {"timeout", timeout},
          {"carrier_sense_window", carrier_sense_window},
          {"flux_lsb_mt", flux_lsb_mt}};
}

LineConfig LineConfig::from_json(const nlohmann::json& j) {
  LineConfig c;
  c.baud = j.value("baud", c.baud);
  c.bits_per_byte = j.value("bits_per_byte", c.bits_per_byte);
  c.inter_frame_gap = j.value("inter_frame_gap", c.inter_frame_gap);
  c.timeout = j.value("timeout", c.timeout);
  c.carrier_sense_window = j.value("carrier_sense_window", c.carrier_sense_window);
  c.flux_lsb_mt = j.value("flux_lsb_mt", c.flux_lsb_mt);
  c.validate();
  return c;
}

double nominal_module_rate(int n, const LineConfig& line) {
  if (n < 1) throw std::invalid_argument("ring needs at least one module");
  return 1.0 / (n * (line.frame_time() + line.inter_frame_gap));
}

nlohmann::json FaultPlan::to_json() const {
  nlohmann::json j;
  j["kills"] = nlohmann::json::array();
  for (const auto& k : kills) j["kills"].push_back({{"module", k.module}, {"at", k.at}});
  j["delays"] = nlohmann::json::array();
  for (const auto& d : delays) j["delays"].push_back({{"module", d.module}, {"at", d.at}, {"extra", d.extra}});
  j["flips"] = nlohmann::json::array();
  for (const auto& f : flips) j["flips"].push_back({{"module", f.module}, {"at", f.at}, {"bit", f.bit}});
  j["random_flip_probability"] = random_flip_probability;
  j["seed"] = seed;
  return j;
}

FaultPlan FaultPlan::from_json(const nlohmann::json& j) {
  FaultPlan p;
  for (const auto& k : j.value("kills", nlohmann::json::array()))
    p.kills.push_back({k.at("module").get<int>(), k.at("at").get<double>()});
  for (const auto& d : j.value("delays", nlohmann::json::array()))
    p.delays.push_back({d.at("module").get<int>(), d.at("at").get<double>(), d.at("extra").get<double>()});
  for (const auto& f : j.value("flips", nlohmann::json::array()))
    p.flips.push_back({f.at("module").get<int>(), f.at("at").get<double>(), f.at("bit").get<int>()});
  p.random_flip_probability = j.value("random_flip_probability", 0.0);
  p.seed = j.value("seed", std::uint64_t{1});
  return p;
}

nlohmann::json RingStats::to_json() const {
  nlohmann::json mods = nlohmann::json::array();
  for (const auto& m : modules)
    mods.push_back({{"id", m.id},
                    {"frames_sent", m.frames_sent},
                    {"frames_received_ok", m.frames_received_ok},
                    {"timeout_recoveries", m.timeout_recoveries},
                    {"rate_hz", m.rate_hz}});
  return {{"n_modules", n_modules},
          {"duration", duration},
          {"modules", mods},
          {"frames_sent", frames_sent},
          {"frames_corrupted", frames_corrupted},
          {"corruptions_detected", corruptions_detected},
          {"collisions", collisions},
          {"timeout_recoveries", timeout_recoveries},
          {"host_frames_sent", host_frames_sent},
          {"rounds", rounds},
          {"round_period_mean", round_period_mean},
          {"round_period_min", round_period_min},
          {"round_period_max", round_period_max}};
}

// ---------------------------------------------------------------------------

RingSimulator::RingSimulator(int n, const LineConfig& line, FaultPlan faults, SampleSource source)
    : n_(n), line_(line), faults_(std::move(faults)), source_(std::move(source)), rng_(faults_.seed) {
  if (n < 1 || n > 255) throw std::invalid_argument("ring needs 1..255 modules");
  line_.validate();
  if (!(faults_.random_flip_probability >= 0.0 && faults_.random_flip_probability <= 1.0))
    throw std::invalid_argument("flip probability must lie in [0, 1]");
  for (const auto& k : faults_.kills)
    if (k.module < 0 || k.module >= n) throw std::invalid_argument("kill fault names an unknown module");
  for (const auto& d : faults_.delays)
    if (d.module < 0 || d.module >= n || d.extra < 0.0) throw std::invalid_argument("invalid delay fault");
  for (const auto& f : faults_.flips)
    if (f.module < 0 || f.module >= n || f.bit < 0 || f.bit >= static_cast<int>(8 * kFrameBytes))
      throw std::invalid_argument("invalid bit-flip fault");
  nodes_.resize(n);
  for (int i = 0; i < n; ++i) {
    nodes_[i].id = i;
    nodes_[i].stats.id = i;
  }
  delay_used_.assign(faults_.delays.size(), false);
  flip_used_.assign(faults_.flips.size(), false);
  kill_applied_.assign(faults_.kills.size(), false);
  totals_.n_modules = n;
  if (!source_) {
    source_ = [](std::uint8_t id, double t) {
      magnetics::FluxSample s;
      s.module_id = id;
      s.timestamp = t;
      s.temperature = 25.0;
      return s;
    };
  }
}

void RingSimulator::host_broadcast(ControlOpcode) {
  double t0 = std::max(now_, bus_free_);
  bus_free_ = t0 + line_.control_time();
  for (auto& node : nodes_) {
    node.last_seen = n_ - 1;  // module 0 goes first
    node.state = ModuleState::Idle;
  }
  nodes_[0].state = nodes_[0].alive ? ModuleState::Armed : ModuleState::Idle;
  ++totals_.host_frames_sent;
}

void RingSimulator::start() {
  if (started_) return;
  started_ = true;
  start_time_ = now_;
  host_broadcast(ControlOpcode::Start);
}

void RingSimulator::reset() {
  started_ = true;
  host_broadcast(ControlOpcode::Reset);
}

void RingSimulator::apply_kills(double t) {
  for (std::size_t k = 0; k < faults_.kills.size(); ++k) {
    if (!kill_applied_[k] && faults_.kills[k].at <= t) {
      kill_applied_[k] = true;
      nodes_[faults_.kills[k].module].alive = false;
      nodes_[faults_.kills[k].module].state = ModuleState::Idle;
    }
  }
}

ModuleState RingSimulator::state(int module) const { return nodes_.at(module).state; }

bool RingSimulator::schedule_next(double limit, std::vector<ReceivedFrame>& out) {
  const double inf = std::numeric_limits<double>::infinity();
  const double timeout = line_.effective_timeout();
  const double frame = line_.frame_time();

  // Candidate start time for each live node given what it last observed.
  std::vector<double> cand(n_, inf);
  std::vector<int> slots(n_, 0);
  std::vector<int> delay_idx(n_, -1);
  for (int i = 0; i < n_; ++i) {
    Node& node = nodes_[i];
    slots[i] = ring_distance(node.last_seen, i, n_) - 1;
    if (slots[i] < 0) slots[i] = n_ - 1;  // own frame: everyone else is missing
    double t = bus_free_ + line_.inter_frame_gap + slots[i] * timeout;
    for (std::size_t k = 0; k < faults_.delays.size(); ++k) {
      const auto& d = faults_.delays[k];
      if (!delay_used_[k] && d.module == i && d.at <= t && slots[i] == 0) {
        t += d.extra;
        delay_idx[i] = static_cast<int>(k);
        break;
      }
    }
    bool dead = !node.alive;
    for (std::size_t k = 0; k < faults_.kills.size() && !dead; ++k)
      if (faults_.kills[k].module == i && faults_.kills[k].at <= t) dead = true;
    if (!dead) cand[i] = t;
  }

  double earliest = *std::min_element(cand.begin(), cand.end());
  if (!std::isfinite(earliest)) return false;

  std::vector<int> senders;
  double last_start = earliest;
  for (int i = 0; i < n_; ++i) {
    if (cand[i] <= earliest + line_.carrier_sense_window) {
      senders.push_back(i);
      last_start = std::max(last_start, cand[i]);
    }
  }
  double t_end = last_start + frame;
  if (t_end > limit) return false;

  apply_kills(earliest);
  // Delays belonging to a node whose turn this was are spent whether or not it won.
  for (int i = 0; i < n_; ++i)
    if (delay_idx[i] >= 0 && (cand[i] <= t_end || slots[i] == 0)) delay_used_[delay_idx[i]] = true;

  ReceivedFrame rf;
  rf.t_start = earliest;
  rf.t_end = t_end;
  rf.senders = senders;
  bool corrupted = false;
  for (std::size_t s = 0; s < senders.size(); ++s) {
    int id = senders[s];
    magnetics::FluxSample sample = source_(static_cast<std::uint8_t>(id), cand[id]);
    sample.module_id = static_cast<std::uint8_t>(id);
    Frame f = encode_frame(sample, line_.flux_lsb_mt);
    for (std::size_t k = 0; k < faults_.flips.size(); ++k) {
      const auto& fl = faults_.flips[k];
      if (!flip_used_[k] && fl.module == id && fl.at <= cand[id]) {
        f[fl.bit / 8] ^= static_cast<std::uint8_t>(0x80 >> (fl.bit % 8));
        flip_used_[k] = true;
        corrupted = true;
        break;
      }
    }
    if (faults_.random_flip_probability > 0.0) {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      if (u(rng_) < faults_.random_flip_probability) {
        std::uniform_int_distribution<int> bit(0, 8 * kFrameBytes - 1);
        int b = bit(rng_);
        f[b / 8] ^= static_cast<std::uint8_t>(0x80 >> (b % 8));
        corrupted = true;
      }
    }
    if (s == 0) {
      rf.bytes = f;
    } else {
      // Overlapping transmissions garble each other; the sync bytes cancel.
      for (std::size_t b = 0; b < kFrameBytes; ++b) rf.bytes[b] ^= f[b];
    }
    Node& node = nodes_[id];
    ++node.stats.frames_sent;
    ++totals_.frames_sent;
    if (slots[id] > 0) {
      ++node.stats.timeout_recoveries;
      ++totals_.timeout_recoveries;
      rf.watchdog = true;
    }
  }
  if (senders.size() > 1) {
    ++totals_.collisions;
    corrupted = true;
  }
  if (corrupted) ++totals_.frames_corrupted;

  rf.status = check_frame(rf.bytes);
  int observed_id = -1;
  if (rf.status == DecodeStatus::Ok) {
    rf.sample = decode_frame(rf.bytes, line_.flux_lsb_mt, t_end);
    observed_id = rf.sample->module_id;
    if (observed_id < n_) {
      Node& src = nodes_[observed_id];
      ++src.stats.frames_received_ok;
      if (src.first_ok < 0.0) src.first_ok = rf.t_start;
      src.last_ok = rf.t_start;
    }
  } else {
    ++totals_.corruptions_detected;
  }

  // Round boundaries: the lowest sender id wraps around.
  int lead = senders.front();
  if (round_starts_.empty() || lead <= last_round_lead_) round_starts_.push_back(rf.t_start);
  last_round_lead_ = lead;

  for (int i = 0; i < n_; ++i) {
    Node& node = nodes_[i];
    if (std::find(senders.begin(), senders.end(), i) != senders.end() && senders.size() == 1) {
      node.last_seen = i;
    } else if (observed_id >= 0 && observed_id < n_) {
      node.last_seen = observed_id;
    } else {
      node.last_seen = (node.last_seen + 1) % n_;  // unreadable: assume the expected sender
    }
    node.state = ModuleState::Idle;
  }
  for (int i = 0; i < n_; ++i)
    if (nodes_[i].alive && ring_distance(nodes_[i].last_seen, i, n_) == 1) nodes_[i].state = ModuleState::Armed;

  bus_free_ = t_end;
  if (keep_trace_) trace_.push_back(rf);
  out.push_back(std::move(rf));
  return true;
}

std::vector<ReceivedFrame> RingSimulator::run_until(double t) {
  if (!started_) start();
  std::vector<ReceivedFrame> out;
  while (schedule_next(t, out)) {
  }
  if (t > now_) now_ = t;
  apply_kills(now_);
  return out;
}

RingStats RingSimulator::stats() const {
  RingStats s = totals_;
  s.duration = now_ - start_time_;
  s.modules.clear();
  for (const auto& node : nodes_) {
    ModuleStats m = node.stats;
    if (m.frames_received_ok >= 2 && node.last_ok > node.first_ok)
      m.rate_hz = static_cast<double>(m.frames_received_ok - 1) / (node.last_ok - node.first_ok);
    s.modules.push_back(m);
  }
  if (round_starts_.size() >= 2) {
    double mn = std::numeric_limits<double>::infinity(), mx = 0.0;
    for (std::size_t i = 1; i < round_starts_.size(); ++i) {
      double p = round_starts_[i] - round_starts_[i - 1];
      mn = std::min(mn, p);
      mx = std::max(mx, p);
    }
    s.rounds = round_starts_.size() - 1;
    s.round_period_mean = (round_starts_.back() - round_starts_.front()) / static_cast<double>(s.rounds);
    s.round_period_min = mn;
    s.round_period_max = mx;
  }
  return s;
}

RingStats simulate_ring(int n, const LineConfig& line, double duration, const FaultPlan& faults) {
  RingSimulator sim(n, line, faults);
  sim.keep_trace(false);
  sim.run_until(duration);
  return sim.stats();
}

double motor_bus_budget(int n_motors, double t_write, double t_read) {
  if (n_motors < 1 || !(t_write > 0.0) || !(t_read > 0.0))
    throw std::invalid_argument("motor bus budget needs positive inputs");
  return 1.0 / (n_motors * (t_write + t_read));
}

void write_trace_binary(std::ostream& out, const std::vector<ReceivedFrame>& frames) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  for (const auto& f : frames) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(f.t_end);
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    out.write(buf, 8);
    out.write(reinterpret_cast<const char*>(f.bytes.data()), kFrameBytes);
  }
}

void write_trace_csv(std::ostream& out, const std::vector<ReceivedFrame>& frames) {
  out << "t_start,t_end,senders,watchdog,status,module_id,b_x,b_y,b_z,temperature,bytes\n";
  char buf[128];
  for (const auto& f : frames) {
    std::snprintf(buf, sizeof buf, "%.9f,%.9f,", f.t_start, f.t_end);
    out << buf;
    for (std::size_t i = 0; i < f.senders.size(); ++i) out << (i ? ";" : "") << f.senders[i];
    out << ',' << (f.watchdog ? 1 : 0) << ',' << to_string(f.status) << ',';
    if (f.sample) {
      std::snprintf(buf, sizeof buf, "%d,%.6g,%.6g,%.6g,%.6g", f.sample->module_id, f.sample->b.x, f.sample->b.y,
                    f.sample->b.z, f.sample->temperature);
      out << buf;
    } else {
      out << ",,,,";
    }
    out << ',';
    for (auto b : f.bytes) {
      std::snprintf(buf, sizeof buf, "%02x", b);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace amphibot::busring
