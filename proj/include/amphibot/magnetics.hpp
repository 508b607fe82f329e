#pragma once

// Magnetic dipole forward models for the foot and fin sensors, their
// inversions, and the first-order low-pass stage applied to raw flux.
//
// Units: positions in mm, flux in mT, the dipole constant in mT*mm^3.

#include <cstdint>

#include "amphibot/vec3.hpp"

namespace amphibot::magnetics {

class DegeneratePoseError : public Error {
public:
  using Error::Error;
};

/// No magnet detectable: flux magnitude at or below the noise floor.
class BelowNoiseFloorError : public Error {
public:
  using Error::Error;
};

/// The fin inversion failed to reproduce the measured flux.
class NoConvergenceError : public Error {
public:
  using Error::Error;
};

inline constexpr double kDefaultMinDistanceMm = 1.0;
inline constexpr double kDefaultNoiseFloorMt = 0.001;

/// Lumped dipole constant N_T = mu_r * mu_0 * M_T / (4 pi).
struct DipoleParams {
  double n_t = 50.0;

  DipoleParams() = default;
  explicit DipoleParams(double n) : n_t(n) {
    if (!(n > 0.0) || !std::isfinite(n))
      throw std::invalid_argument("DipoleParams: n_t must be positive");
  }
};

struct MagnetPose {
  Vec3 p;  // magnet position, mm
  Vec3 h;  // unit magnetization direction

  MagnetPose() = default;
  MagnetPose(const Vec3& position, const Vec3& direction);

  /// Foot convention: magnetization points from the magnet to the sensor.
  static MagnetPose facingOrigin(const Vec3& position);
};

struct FluxSample {
  Vec3 b;                   // mT
  double temperature = 0.0; // degC, carried but unused
  double timestamp = 0.0;   // s
  std::uint8_t module_id = 0;

  bool operator==(const FluxSample&) const = default;
};

/// Fin magnet pose: p_z is pinned to d_z0, H lies in the xy plane with
/// h_x = sqrt(1 - h_y^2) >= 0.
struct FlowPose {
  double p_x = 0.0;
  double p_y = 0.0;
  double h_y = 0.0;
  double d_z0 = 0.0;

  FlowPose() = default;
  FlowPose(double px, double py, double hy, double dz0);

  double h_x() const;
  MagnetPose magnet() const;
  /// Rotates magnet position and magnetization about z by `angle` rad.
  FlowPose rotated(double angle) const;
};

struct LowPassState {
  Vec3 y;
  double cutoff_hz = 3.6;
  bool initialized = false;

  LowPassState() = default;
  explicit LowPassState(double cutoff);
};

Vec3 dipole_flux(const MagnetPose& pose, const DipoleParams& params,
                 double min_distance = kDefaultMinDistanceMm);

/// Dipole flux with the magnetization pinned to -P/|P|.
Vec3 dipole_flux_radial(const Vec3& p, const DipoleParams& params,
                        double min_distance = kDefaultMinDistanceMm);

/// Closed-form inverse of dipole_flux_radial.
Vec3 invert_foot_flux(const Vec3& b, const DipoleParams& params,
                      double noise_floor = kDefaultNoiseFloorMt);

Vec3 flow_flux(const FlowPose& pose, const DipoleParams& params,
               double min_distance = kDefaultMinDistanceMm);

struct FlowSolverOptions {
  int max_newton_steps = 50;
  double residual_tol = 1e-10;  // mT
  double grid_step_deg = 2.0;
  double grid_span_deg = 90.0;
  int grid_candidates = 4;
};

/// Recovers (p_x, p_y, h_y) from fin flux by damped Newton iteration,
/// falling back to a grid of rotated copies of `initial_guess`.
FlowPose invert_flow_flux(const Vec3& b, double d_z0, const DipoleParams& params,
                          const FlowPose& initial_guess,
                          const FlowSolverOptions& options = {});

/// One first-order IIR update; the first call seeds the state with `x`.
Vec3 lowpass_step(LowPassState& state, const Vec3& x, double dt);

}  // namespace amphibot::magnetics
