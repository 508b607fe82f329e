#include "amphibot/magnetics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <numbers>
#include <string>
#include <vector>

namespace amphibot::magnetics {

namespace {

void require_distance(const Vec3& p, double min_distance) {
  if (p.norm() < min_distance)
    throw DegeneratePoseError("magnet closer than " + std::to_string(min_distance) +
                              " mm to the sensor origin");
}

Eigen::Vector3d to_eigen(const Vec3& v) { return {v.x, v.y, v.z}; }

// Partial derivatives of the dipole field with respect to P and H.
struct DipoleJacobian {
  Eigen::Matrix3d d_p;
  Eigen::Matrix3d d_h;
};

DipoleJacobian dipole_jacobian(const Vec3& p_, const Vec3& h_, double n_t) {
  const Eigen::Vector3d p = to_eigen(p_);
  const Eigen::Vector3d h = to_eigen(h_);
  const double r2 = p.squaredNorm();
  const double r = std::sqrt(r2);
  const double r5 = r2 * r2 * r;
  const double hp = h.dot(p);
  const Eigen::Vector3d f = 3.0 * hp * p - r2 * h;
  const Eigen::Matrix3d eye = Eigen::Matrix3d::Identity();

  DipoleJacobian j;
  j.d_p = n_t / r5 *
              (3.0 * p * h.transpose() + 3.0 * hp * eye - 2.0 * h * p.transpose()) -
          5.0 * n_t / (r5 * r2) * f * p.transpose();
  j.d_h = n_t / r5 * (3.0 * p * p.transpose() - r2 * eye);
  return j;
}

Eigen::Vector3d flow_residual(const Eigen::Vector3d& x, double d_z0, const DipoleParams& params,
                              const Eigen::Vector3d& target) {
  const FlowPose pose(x(0), x(1), x(2), d_z0);
  return to_eigen(flow_flux(pose, params, 0.0)) - target;
}

Eigen::Matrix3d flow_jacobian(const Eigen::Vector3d& x, double d_z0, const DipoleParams& params) {
  const FlowPose pose(x(0), x(1), x(2), d_z0);
  const MagnetPose m = pose.magnet();
  const DipoleJacobian dj = dipole_jacobian(m.p, m.h, params.n_t);
  Eigen::Matrix3d jac;
  jac.col(0) = dj.d_p.col(0);
  jac.col(1) = dj.d_p.col(1);
  jac.col(2) = dj.d_h * Eigen::Vector3d(-pose.h_y / pose.h_x(), 1.0, 0.0);
  return jac;
}

constexpr double kMaxHy = 1.0 - 1e-9;

struct NewtonResult {
  Eigen::Vector3d x;
  double residual;
  bool converged;
};

NewtonResult damped_newton(Eigen::Vector3d x, double d_z0, const DipoleParams& params,
                           const Eigen::Vector3d& target, const FlowSolverOptions& opt) {
  Eigen::Vector3d res = flow_residual(x, d_z0, params, target);
  double norm = res.norm();
  for (int it = 0; it < opt.max_newton_steps && norm >= opt.residual_tol; ++it) {
    const Eigen::Matrix3d jac = flow_jacobian(x, d_z0, params);
    const Eigen::FullPivLU<Eigen::Matrix3d> lu(jac);
    if (!lu.isInvertible()) break;
    const Eigen::Vector3d step = lu.solve(-res);

    bool improved = false;
    for (double alpha = 1.0; alpha > 1e-6; alpha *= 0.5) {
      Eigen::Vector3d trial = x + alpha * step;
      trial(2) = std::clamp(trial(2), -kMaxHy, kMaxHy);
      if (std::hypot(trial(0), trial(1), d_z0) < kDefaultMinDistanceMm) continue;
      const Eigen::Vector3d trial_res = flow_residual(trial, d_z0, params, target);
      if (trial_res.norm() < norm) {
        x = trial;
        res = trial_res;
        norm = trial_res.norm();
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  return {x, norm, norm < opt.residual_tol};
}

}  // namespace

MagnetPose::MagnetPose(const Vec3& position, const Vec3& direction) : p(position), h(direction) {
  if (std::abs(h.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("MagnetPose: magnetization must be a unit vector");
  if (!(p.norm() > 0.0))
    throw DegeneratePoseError("MagnetPose: magnet coincides with the sensor origin");
}

MagnetPose MagnetPose::facingOrigin(const Vec3& position) {
  const double r = position.norm();
  if (!(r > 0.0)) throw DegeneratePoseError("MagnetPose: magnet coincides with the sensor origin");
  return MagnetPose(position, -position / r);
}

FlowPose::FlowPose(double px, double py, double hy, double dz0)
    : p_x(px), p_y(py), h_y(hy), d_z0(dz0) {
  if (!std::isfinite(px) || !std::isfinite(py) || !std::isfinite(hy) || !std::isfinite(dz0))
    throw std::invalid_argument("FlowPose: non-finite field");
  if (std::abs(hy) > 1.0) throw std::invalid_argument("FlowPose: |h_y| must not exceed 1");
}

double FlowPose::h_x() const { return std::sqrt(std::max(0.0, 1.0 - h_y * h_y)); }

MagnetPose FlowPose::magnet() const {
  const Vec3 p(p_x, p_y, d_z0);
  const Vec3 h(h_x(), h_y, 0.0);
  return MagnetPose(p, h / h.norm());
}

FlowPose FlowPose::rotated(double angle) const {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double hx = h_x();
  const double hy = std::clamp(s * hx + c * h_y, -1.0, 1.0);
  return FlowPose(c * p_x - s * p_y, s * p_x + c * p_y, hy, d_z0);
}

LowPassState::LowPassState(double cutoff) : cutoff_hz(cutoff) {
  if (!(cutoff > 0.0)) throw std::invalid_argument("LowPassState: cutoff must be positive");
}

Vec3 dipole_flux(const MagnetPose& pose, const DipoleParams& params, double min_distance) {
  require_distance(pose.p, min_distance);
  const Vec3& p = pose.p;
  const Vec3& h = pose.h;
  const double r2 = p.squaredNorm();
  const double r5 = r2 * r2 * std::sqrt(r2);
  return params.n_t * (3.0 * h.dot(p) * p - r2 * h) / r5;
}

Vec3 dipole_flux_radial(const Vec3& p, const DipoleParams& params, double min_distance) {
  require_distance(p, min_distance);
  const double r2 = p.squaredNorm();
  return -params.n_t * (2.0 * p / (r2 * r2));
}

Vec3 invert_foot_flux(const Vec3& b, const DipoleParams& params, double noise_floor) {
  const double mag = b.norm();
  if (mag <= noise_floor)
    throw BelowNoiseFloorError("flux magnitude " + std::to_string(mag) +
                               " mT is below the noise floor; no magnet detectable");
  const double r = std::cbrt(2.0 * params.n_t / mag);
  const double r2 = r * r;
  return -b * (r2 * r2 / (2.0 * params.n_t));
}

Vec3 flow_flux(const FlowPose& pose, const DipoleParams& params, double min_distance) {
  const double px = pose.p_x;
  const double py = pose.p_y;
  const double dz = pose.d_z0;
  const double hx = pose.h_x();
  const double hy = pose.h_y;
  const double r2 = px * px + py * py + dz * dz;
  const double r = std::sqrt(r2);
  if (r < min_distance)
    throw DegeneratePoseError("fin magnet closer than " + std::to_string(min_distance) +
                              " mm to the sensor origin");
  const double r5 = r2 * r2 * r;
  const double n = params.n_t;
  return {n * (3.0 * (px * px * hx + px * py * hy) - r2 * hx) / r5,
          n * (3.0 * (px * py * hx + py * py * hy) - r2 * hy) / r5,
          n * (3.0 * dz * (px * hx + py * hy)) / r5};
}

FlowPose invert_flow_flux(const Vec3& b, double d_z0, const DipoleParams& params,
                          const FlowPose& initial_guess, const FlowSolverOptions& options) {
  if (b.norm() <= kDefaultNoiseFloorMt)
    throw NoConvergenceError("fin flux below the noise floor cannot be produced by any pose");

  const Eigen::Vector3d target = to_eigen(b);
  const FlowPose guess(initial_guess.p_x, initial_guess.p_y, initial_guess.h_y, d_z0);

  auto as_pose = [d_z0](const Eigen::Vector3d& x) { return FlowPose(x(0), x(1), x(2), d_z0); };

  NewtonResult first =
      damped_newton({guess.p_x, guess.p_y, guess.h_y}, d_z0, params, target, options);
  if (first.converged) return as_pose(first.x);

  // Grid fallback over fin angle: rotate the guess, rank by residual.
  std::vector<std::pair<double, FlowPose>> grid;
  const double deg = std::numbers::pi / 180.0;
  for (double a = -options.grid_span_deg; a <= options.grid_span_deg + 1e-9;
       a += options.grid_step_deg) {
    const MagnetPose m = guess.magnet();
    const double c = std::cos(a * deg);
    const double s = std::sin(a * deg);
    if (c * m.h.x - s * m.h.y <= 0.0) continue;  // h_x would turn negative
    const FlowPose cand = guess.rotated(a * deg);
    if (std::hypot(cand.p_x, cand.p_y, d_z0) < kDefaultMinDistanceMm) continue;
    const double resid = (to_eigen(flow_flux(cand, params, 0.0)) - target).norm();
    grid.emplace_back(resid, cand);
  }
  std::sort(grid.begin(), grid.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  NewtonResult best = first;
  const int tries = std::min<int>(options.grid_candidates, static_cast<int>(grid.size()));
  for (int i = 0; i < tries; ++i) {
    const FlowPose& c = grid[i].second;
    NewtonResult r = damped_newton({c.p_x, c.p_y, c.h_y}, d_z0, params, target, options);
    if (r.converged) return as_pose(r.x);
    if (r.residual < best.residual) best = r;
  }
  throw NoConvergenceError("fin inversion did not converge (best residual " +
                           std::to_string(best.residual) + " mT)");
}

Vec3 lowpass_step(LowPassState& state, const Vec3& x, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("lowpass_step: dt must be positive");
  if (!state.initialized) {
    state.y = x;
    state.initialized = true;
    return state.y;
  }
  const double tau = 1.0 / (2.0 * std::numbers::pi * state.cutoff_hz);
  const double alpha = dt / (tau + dt);
  state.y = state.y + alpha * (x - state.y);
  return state.y;
}

}  // namespace amphibot::magnetics
