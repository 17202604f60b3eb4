#include "flowctl/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace flowctl {

namespace {

struct TerminalWindow
{
  std::size_t total{0};
  std::size_t recorded{0};
  std::size_t first_prediction{0};
};

TerminalWindow terminal_window(const MpcPlanContext & ctx, std::size_t horizon, const MpcConfig & config)
{
  TerminalWindow tw;
  tw.total = static_cast<std::size_t>(window_samples(config.window, config.dt));
  tw.recorded = tw.total > horizon ? tw.total - horizon : 0;
  tw.first_prediction = horizon > tw.total ? horizon - tw.total : 0;
  if (ctx.history.size() < tw.recorded) {
    std::ostringstream os;
    os << "planner needs " << tw.recorded << " recorded samples, history holds " << ctx.history.size();
    fail(ErrorKind::InsufficientHistory, os.str());
  }
  return tw;
}

struct WindowSums
{
  double cd{0};
  double cl{0};
};

WindowSums recorded_sums(const MpcPlanContext & ctx, std::size_t count)
{
  const auto cd = ctx.history.cd();
  const auto cl = ctx.history.cl();
  WindowSums s;
  for (std::size_t i = cd.size() - count; i < cd.size(); ++i) {
    s.cd += cd[i];
    s.cl += cl[i];
  }
  return s;
}

}  // namespace

Eigen::MatrixX2d SurrogateHorizon::predict(const MpcPlanContext & ctx, std::span<const double> controls) const
{
  const auto pred = rollout(*model_, ctx.window, controls);
  Eigen::MatrixX2d out(static_cast<Eigen::Index>(pred.size()), 2);
  for (std::size_t k = 0; k < pred.size(); ++k) { out.row(static_cast<Eigen::Index>(k)) << pred[k].c_d, pred[k].c_l; }
  return out;
}

Eigen::VectorXd SurrogateHorizon::pullback(const MpcPlanContext & ctx,
  std::span<const double> controls,
  const LossGradient & loss_gradient,
  Eigen::MatrixX2d * predictions) const
{
  return rollout_pullback(*model_, ctx.window, controls, loss_gradient, predictions);
}

Eigen::MatrixX2d PlantOracleHorizon::predict(const MpcPlanContext &, std::span<const double> controls) const
{
  Eigen::MatrixX2d out(static_cast<Eigen::Index>(controls.size()), 2);
  PlantState s = state_;
  for (std::size_t k = 0; k < controls.size(); ++k) {
    s = plant_step(params_, s, controls[k], dt_);
    const QoiSample v = observe(params_, s);
    out.row(static_cast<Eigen::Index>(k)) << v.c_d, v.c_l;
  }
  return out;
}

Eigen::VectorXd PlantOracleHorizon::pullback(const MpcPlanContext &,
  std::span<const double> controls,
  const LossGradient & loss_gradient,
  Eigen::MatrixX2d * predictions) const
{
  const PlantSensitivity sens = plant_rollout_with_sensitivity(params_, state_, controls, dt_);
  if (predictions) { *predictions = sens.qoi; }
  const Eigen::MatrixX2d g = loss_gradient(sens.qoi);
  // Row-major flattening of g matches the (c_d, c_l) interleaving of the Jacobian rows.
  Eigen::VectorXd flat(2 * g.rows());
  for (Eigen::Index k = 0; k < g.rows(); ++k) {
    flat(2 * k) = g(k, 0);
    flat(2 * k + 1) = g(k, 1);
  }
  return sens.jacobian.transpose() * flat;
}

double mpc_objective(const MpcPlanContext & ctx, const Eigen::MatrixX2d & predictions, const MpcConfig & config)
{
  const auto horizon = static_cast<std::size_t>(predictions.rows());
  const TerminalWindow tw = terminal_window(ctx, horizon, config);
  WindowSums s = recorded_sums(ctx, tw.recorded);
  for (std::size_t k = tw.first_prediction; k < horizon; ++k) {
    s.cd += predictions(static_cast<Eigen::Index>(k), 0);
    s.cl += predictions(static_cast<Eigen::Index>(k), 1);
  }
  const double n = static_cast<double>(tw.total);
  return s.cd / n + config.lift_weight * std::abs(s.cl / n);
}

std::vector<double> mpc_initial_sequence(const MpcPlanContext & ctx, const MpcConfig & config)
{
  const auto n = static_cast<std::size_t>(config.horizon);
  std::vector<double> u(n, 0.0);
  if (config.warm_start && ctx.previous.size() == n && n > 0) {
    std::copy(ctx.previous.begin() + 1, ctx.previous.end(), u.begin());
    u.back() = ctx.previous.back();
  }
  for (double & x : u) { x = std::clamp(x, -config.bound, config.bound); }
  return u;
}

MpcPlan mpc_plan(const HorizonModel & model, const MpcPlanContext & ctx, const MpcConfig & config)
{
  require(config.horizon >= 1, ErrorKind::Configuration, "prediction horizon must be at least 1");
  require(config.iterations >= 1, ErrorKind::Configuration, "planner needs at least one iteration");
  require(config.bound > 0.0 && config.bound <= 1.0, ErrorKind::Configuration, "control bound must lie in (0, 1]");
  if (model.memory() > 0 && ctx.window.memory() != model.memory()) {
    std::ostringstream os;
    os << "planning window has n_M=" << ctx.window.memory() << ", model expects " << model.memory();
    fail(ErrorKind::Dimension, os.str());
  }

  const auto horizon = static_cast<std::size_t>(config.horizon);
  const TerminalWindow tw = terminal_window(ctx, horizon, config);
  const WindowSums recorded = recorded_sums(ctx, tw.recorded);
  const double n = static_cast<double>(tw.total);

  double objective = 0;
  const auto loss_gradient = [&](const Eigen::MatrixX2d & pred) {
    double cd = recorded.cd;
    double cl = recorded.cl;
    for (std::size_t k = tw.first_prediction; k < horizon; ++k) {
      cd += pred(static_cast<Eigen::Index>(k), 0);
      cl += pred(static_cast<Eigen::Index>(k), 1);
    }
    objective = cd / n + config.lift_weight * std::abs(cl / n);
    const double sign = cl > 0 ? 1.0 : (cl < 0 ? -1.0 : 0.0);
    Eigen::MatrixX2d g = Eigen::MatrixX2d::Zero(pred.rows(), 2);
    for (std::size_t k = tw.first_prediction; k < horizon; ++k) {
      g(static_cast<Eigen::Index>(k), 0) = 1.0 / n;
      g(static_cast<Eigen::Index>(k), 1) = config.lift_weight * sign / n;
    }
    return g;
  };

  std::vector<double> u = mpc_initial_sequence(ctx, config);
  MpcPlan plan;
  plan.trace.reserve(static_cast<std::size_t>(config.iterations) + 1);

  Eigen::VectorXd m = Eigen::VectorXd::Zero(config.horizon);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(config.horizon);
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;

  double best = 0;
  for (int it = 0; it <= config.iterations; ++it) {
    const bool last = it == config.iterations;
    Eigen::VectorXd grad;
    if (last) {
      objective = mpc_objective(ctx, model.predict(ctx, u), config);
    } else {
      grad = model.pullback(ctx, u, loss_gradient, nullptr);
    }
    plan.trace.push_back(objective);
    if (it == 0) {
      plan.initial_objective = objective;
      best = objective;
      plan.controls = u;
    } else if (objective < best) {
      best = objective;
      plan.controls = u;
    }
    if (last) { break; }

    m = beta1 * m + (1 - beta1) * grad;
    v = beta2 * v + (1 - beta2) * grad.cwiseAbs2();
    const double t = it + 1;
    const double lr = config.step_size * (1.0 - static_cast<double>(it) / config.iterations);
    const Eigen::VectorXd m_hat = m / (1 - std::pow(beta1, t));
    const Eigen::VectorXd v_hat = v / (1 - std::pow(beta2, t));
    for (std::size_t k = 0; k < horizon; ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      u[k] = std::clamp(u[k] - lr * m_hat(i) / (std::sqrt(v_hat(i)) + eps), -config.bound, config.bound);
    }
  }
  plan.final_objective = best;
  return plan;
}

double mpc_act(const HorizonModel & model, MpcPlanContext & ctx, const MpcConfig & config, MpcPlan * plan_out)
{
  MpcPlan plan = mpc_plan(model, ctx, config);
  ctx.previous = plan.controls;
  const double u = plan.controls.front();
  if (plan_out) { *plan_out = std::move(plan); }
  return u;
}

}  // namespace flowctl
