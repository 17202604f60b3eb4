#include "flowctl/plant.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace flowctl {

namespace {

std::atomic<std::uint64_t> g_plant_calls{0};
std::atomic<std::uint64_t> g_regime_reads{0};

void check_control(double u)
{
  if (!(std::abs(u) <= 1.0)) {
    std::ostringstream os;
    os << "control " << u << " outside [-1, 1]";
    fail(ErrorKind::ControlBound, os.str());
  }
}

Eigen::Matrix2d rhs_jacobian(const PlantParams & params, const Eigen::Vector2d & x)
{
  const double w = params.omega;
  Eigen::Matrix2d J;
  J << 0.0, 1.0, -2.0 * params.eps * w * x(0) * x(1) - w * w, params.eps * w * (1.0 - x(0) * x(0));
  return J;
}

}  // namespace

double PlantParams::regime() const
{
  g_regime_reads.fetch_add(1, std::memory_order_relaxed);
  return r_;
}

double angular_frequency(double r) { return 2.0 * std::numbers::pi * (0.15 + 0.0002 * r); }

double nonlinearity(double r) { return 0.2 + r / 1000.0; }

PlantParams make_plant(double r)
{
  if (!(r > 0.0) || !std::isfinite(r)) {
    std::ostringstream os;
    os << "regime parameter must be positive, got " << r;
    fail(ErrorKind::InvalidRegime, os.str());
  }
  PlantParams params;
  params.r_ = r;
  params.omega = angular_frequency(r);
  params.eps = nonlinearity(r);
  return params;
}

int substeps_per_sample(const PlantParams & params, double dt)
{
  require(dt > 0.0 && params.dt_internal > 0.0, ErrorKind::Configuration, "sample and internal steps must be positive");
  const double ratio = dt / params.dt_internal;
  const double n = std::round(ratio);
  if (n < 1.0 || std::abs(ratio - n) > 1e-9 * ratio) {
    std::ostringstream os;
    os << "sample step " << dt << " is not an integer multiple of the internal step " << params.dt_internal;
    fail(ErrorKind::Configuration, os.str());
  }
  return static_cast<int>(n);
}

PlantState plant_step(const PlantParams & params, const PlantState & state, double u, double dt)
{
  check_control(u);
  const int n = substeps_per_sample(params, dt);
  g_plant_calls.fetch_add(1, std::memory_order_relaxed);

  const double h = params.dt_internal;
  Eigen::Vector2d x(state.q, state.p);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d k1 = oscillator_rhs(params, x, u);
    const Eigen::Vector2d k2 = oscillator_rhs<double>(params, x + 0.5 * h * k1, u);
    const Eigen::Vector2d k3 = oscillator_rhs<double>(params, x + 0.5 * h * k2, u);
    const Eigen::Vector2d k4 = oscillator_rhs<double>(params, x + h * k3, u);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return {x(0), x(1), state.t + dt};
}

QoiSample observe(const PlantParams & params, const PlantState & state)
{
  return {params.c0 + params.c2 * state.q * state.q, params.kappa_l * state.q};
}

SpinupResult spinup(const PlantParams & params, double t_spin, int history_length, double dt)
{
  require(history_length >= 1, ErrorKind::InvalidArgument, "history length must be at least 1");
  require(dt > 0.0, ErrorKind::Configuration, "sample step must be positive");
  const double steps_real = t_spin / dt;
  const auto steps = static_cast<long>(std::llround(steps_real));
  require(std::abs(steps_real - static_cast<double>(steps)) < 1e-9 * std::max(1.0, steps_real),
    ErrorKind::Configuration, "spinup duration must be a multiple of the sample step");
  if (steps < history_length) {
    std::ostringstream os;
    os << "spinup of " << t_spin << " time units cannot provide " << history_length << " samples at dt=" << dt;
    fail(ErrorKind::InsufficientHistory, os.str());
  }

  SpinupResult out;
  out.dt = dt;
  out.samples.reserve(static_cast<std::size_t>(history_length));
  out.controls.assign(static_cast<std::size_t>(history_length), 0.0);

  PlantState state{0.1, 0.0, 0.0};
  const long first_kept = steps - history_length + 1;
  for (long k = 1; k <= steps; ++k) {
    state = plant_step(params, state, 0.0, dt);
    if (k >= first_kept) { out.samples.push_back(observe(params, state)); }
  }
  // Sample times are exact multiples of dt.
  state.t = static_cast<double>(steps) * dt;
  out.state = state;
  return out;
}

PlantSensitivity plant_rollout_with_sensitivity(
  const PlantParams & params, const PlantState & state, std::span<const double> controls, double dt)
{
  const int n = substeps_per_sample(params, dt);
  const auto K = static_cast<Eigen::Index>(controls.size());
  const double h = params.dt_internal;
  const double forcing = params.b * params.omega * params.omega;

  PlantSensitivity out;
  out.qoi.resize(K, 2);
  out.jacobian = Eigen::MatrixXd::Zero(2 * K, K);

  Eigen::Vector2d x(state.q, state.p);
  Eigen::Matrix<double, 2, Eigen::Dynamic> S = Eigen::Matrix<double, 2, Eigen::Dynamic>::Zero(2, K);
  Eigen::Matrix<double, 2, Eigen::Dynamic> K1(2, K), K2(2, K), K3(2, K), K4(2, K);

  for (Eigen::Index j = 0; j < K; ++j) {
    const double u = controls[static_cast<std::size_t>(j)];
    check_control(u);
    g_plant_calls.fetch_add(1, std::memory_order_relaxed);
    const Eigen::Index active = j + 1;
    auto s = S.leftCols(active);
    auto d1 = K1.leftCols(active);
    auto d2 = K2.leftCols(active);
    auto d3 = K3.leftCols(active);
    auto d4 = K4.leftCols(active);

    for (int i = 0; i < n; ++i) {
      const Eigen::Vector2d x1 = x;
      const Eigen::Vector2d k1 = oscillator_rhs(params, x1, u);
      d1.noalias() = rhs_jacobian(params, x1) * s;
      d1(1, j) += forcing;

      const Eigen::Vector2d x2 = x + 0.5 * h * k1;
      const Eigen::Vector2d k2 = oscillator_rhs(params, x2, u);
      d2.noalias() = rhs_jacobian(params, x2) * (s + 0.5 * h * d1);
      d2(1, j) += forcing;

      const Eigen::Vector2d x3 = x + 0.5 * h * k2;
      const Eigen::Vector2d k3 = oscillator_rhs(params, x3, u);
      d3.noalias() = rhs_jacobian(params, x3) * (s + 0.5 * h * d2);
      d3(1, j) += forcing;

      const Eigen::Vector2d x4 = x + h * k3;
      const Eigen::Vector2d k4 = oscillator_rhs(params, x4, u);
      d4.noalias() = rhs_jacobian(params, x4) * (s + h * d3);
      d4(1, j) += forcing;

      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      s += (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
    }

    const double q = x(0);
    out.qoi(j, 0) = params.c0 + params.c2 * q * q;
    out.qoi(j, 1) = params.kappa_l * q;
    out.jacobian.row(2 * j).head(active) = 2.0 * params.c2 * q * s.row(0);
    out.jacobian.row(2 * j + 1).head(active) = params.kappa_l * s.row(0);
  }
  out.final_state = {x(0), x(1), state.t + static_cast<double>(K) * dt};
  return out;
}

std::uint64_t plant_call_count() { return g_plant_calls.load(std::memory_order_relaxed); }

std::uint64_t regime_read_count() { return g_regime_reads.load(std::memory_order_relaxed); }

}  // namespace flowctl
