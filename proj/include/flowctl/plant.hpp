#pragma once

/**
 * @file
 * @brief Synthetic wake plant: a self-excited oscillator with drag/lift observables.
 *
 * The oscillator
 * \f[
 *   \dot q = p, \qquad
 *   \dot p = \varepsilon(r)\,\omega(r)\,(1 - q^2)\,p - \omega(r)^2 q + b\,\omega(r)^2 u,
 * \f]
 * has a limit cycle of amplitude close to 2 for the regimes of interest. The
 * observables are \f$ c_d = c_0 + c_2 q^2 \f$ and \f$ c_l = \kappa_L q \f$, so
 * lift oscillates at the shedding frequency and drag at twice that frequency.
 * The regime parameter r plays the role of the Reynolds number and is hidden
 * from every model and controller.
 */

#include <atomic>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "flowctl/error.hpp"

namespace flowctl {

inline constexpr double kDefaultSampleStep = 0.1;
inline constexpr double kDefaultSpinupTime = 100.0;
inline constexpr int kDefaultHistoryLength = 60;

struct QoiSample
{
  double c_d{0};
  double c_l{0};

  Eigen::Vector2d vec() const { return {c_d, c_l}; }
  static QoiSample from(const Eigen::Vector2d & v) { return {v(0), v(1)}; }
  friend bool operator==(const QoiSample &, const QoiSample &) = default;
};

struct PlantState
{
  double q{0};
  double p{0};
  double t{0};

  friend bool operator==(const PlantState &, const PlantState &) = default;
};

class PlantParams
{
public:
  double c0{1.0};
  double c2{0.15};
  double kappa_l{0.6};
  double b{0.4};
  double dt_internal{0.002};
  /// Angular frequency omega(r) = 2 pi (0.15 + 0.0002 r).
  double omega{0};
  /// Nonlinearity eps(r) = 0.2 + r / 1000.
  double eps{0};

  /// The hidden regime parameter. Every read is counted (see regime_read_count()).
  double regime() const;

private:
  double r_{0};
  friend PlantParams make_plant(double r);
};

/// Builds the default plant for regime r. Throws InvalidRegime for r <= 0.
PlantParams make_plant(double r);

/// omega(r) in radians per time unit.
double angular_frequency(double r);
double nonlinearity(double r);

/// Right-hand side of the oscillator, templated so it can be evaluated on any scalar type.
template<typename Scalar>
Eigen::Matrix<Scalar, 2, 1> oscillator_rhs(
  const PlantParams & params, const Eigen::Matrix<Scalar, 2, 1> & x, const Scalar & u)
{
  const double w = params.omega;
  const double w2 = w * w;
  const Scalar & q = x(0);
  const Scalar & p = x(1);
  return {p, params.eps * w * (Scalar(1) - q * q) * p - w2 * q + params.b * w2 * u};
}

/// Advances one sample step dt with u held constant, using RK4 substeps of dt_internal.
PlantState plant_step(const PlantParams & params, const PlantState & state, double u, double dt);

QoiSample observe(const PlantParams & params, const PlantState & state);

struct SpinupResult
{
  PlantState state;
  /// H0 samples at spacing dt, oldest first; the last one is observed at t = T_spin.
  std::vector<QoiSample> samples;
  /// H0 controls, all zero.
  std::vector<double> controls;
  double dt{kDefaultSampleStep};
};

/// Uncontrolled run from (q, p) = (0.1, 0) to t = T_spin, keeping the last H0 samples.
SpinupResult spinup(
  const PlantParams & params,
  double t_spin = kDefaultSpinupTime,
  int history_length = kDefaultHistoryLength,
  double dt = kDefaultSampleStep);

/// Predicted observables over a control sequence plus their exact derivatives.
struct PlantSensitivity
{
  /// K x 2, row k holds (c_d, c_l) after k + 1 steps.
  Eigen::MatrixX2d qoi;
  /// 2K x K; row 2k is d c_d(k) / du, row 2k + 1 is d c_l(k) / du.
  Eigen::MatrixXd jacobian;
  PlantState final_state;
};

/**
 * @brief Rolls the plant over a control sequence and propagates the tangent
 * linear system alongside each RK4 stage.
 *
 * The variational equations are integrated with the same RK4 tableau, so the
 * Jacobian is the exact derivative of the discrete map. Counts as K plant calls.
 */
PlantSensitivity plant_rollout_with_sensitivity(
  const PlantParams & params, const PlantState & state, std::span<const double> controls, double dt);

/// Number of substeps per sample step; throws Configuration unless dt / dt_internal is integral.
int substeps_per_sample(const PlantParams & params, double dt);

/// Total plant_step invocations in this process.
std::uint64_t plant_call_count();
/// Total PlantParams::regime() reads in this process.
std::uint64_t regime_read_count();

}  // namespace flowctl
