#pragma once

/**
 * @file
 * @brief Receding-horizon control through a horizon model.
 *
 * At each step the planner minimizes the windowed cost evaluated at the end of
 * the horizon, J(t_n + T_P) = <c_d>_T + omega_L |<c_l>_T|, where the window
 * holds the last T/dt - n_P recorded samples followed by the n_P predictions.
 * Only the first control of the plan is applied.
 */

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "flowctl/flowmap.hpp"
#include "flowctl/metrics.hpp"
#include "flowctl/plant.hpp"

namespace flowctl {

struct MpcConfig
{
  /// n_P; 20 steps is T_P = 2.0 at dt = 0.1.
  int horizon{20};
  int iterations{50};
  /// Initial Adam step; annealed linearly to step_size / iterations over the run.
  double step_size{0.1};
  bool warm_start{true};
  double bound{1.0};
  double window{kCostWindow};
  double lift_weight{kLiftWeight};
  double dt{kDefaultSampleStep};
};

struct MpcPlanContext
{
  MemoryWindow window;
  /// Recorded observations; the newest is V_n. Needs at least T/dt - n_P entries.
  QoiWindow history;
  /// Previous optimal sequence; empty means cold start.
  std::vector<double> previous;
};

/// Predicts the observables over a control sequence and back-propagates cost gradients.
class HorizonModel
{
public:
  using LossGradient = std::function<Eigen::MatrixX2d(const Eigen::MatrixX2d &)>;

  virtual ~HorizonModel() = default;

  /// K x 2 predictions (c_d, c_l) after each control.
  virtual Eigen::MatrixX2d predict(const MpcPlanContext & ctx, std::span<const double> controls) const = 0;

  /// dL/du given dL/dV from `loss_gradient`; predictions are returned through `predictions`.
  virtual Eigen::VectorXd pullback(const MpcPlanContext & ctx,
    std::span<const double> controls,
    const LossGradient & loss_gradient,
    Eigen::MatrixX2d * predictions) const = 0;

  /// Memory length of the window the model consumes.
  virtual int memory() const = 0;
};

/// The learned flow map as a horizon model. Never touches the plant.
class SurrogateHorizon final : public HorizonModel
{
public:
  explicit SurrogateHorizon(std::shared_ptr<const FlowMapModel> model) : model_(std::move(model)) {}

  Eigen::MatrixX2d predict(const MpcPlanContext & ctx, std::span<const double> controls) const override;
  Eigen::VectorXd pullback(const MpcPlanContext & ctx,
    std::span<const double> controls,
    const LossGradient & loss_gradient,
    Eigen::MatrixX2d * predictions) const override;
  int memory() const override { return model_->n_memory; }

  const FlowMapModel & model() const { return *model_; }

private:
  std::shared_ptr<const FlowMapModel> model_;
};

/**
 * @brief The true plant as a horizon model (an oracle with full state access).
 *
 * Used to measure the controllability ceiling. The current plant state must be
 * handed over with sync() before each plan.
 */
class PlantOracleHorizon final : public HorizonModel
{
public:
  PlantOracleHorizon(PlantParams params, double dt) : params_(params), dt_(dt) {}

  void sync(const PlantState & state) { state_ = state; }

  Eigen::MatrixX2d predict(const MpcPlanContext & ctx, std::span<const double> controls) const override;
  Eigen::VectorXd pullback(const MpcPlanContext & ctx,
    std::span<const double> controls,
    const LossGradient & loss_gradient,
    Eigen::MatrixX2d * predictions) const override;
  int memory() const override { return 0; }

private:
  PlantParams params_;
  double dt_;
  PlantState state_{};
};

struct MpcPlan
{
  std::vector<double> controls;
  double initial_objective{0};
  double final_objective{0};
  /// Objective of every evaluated iterate, starting with the initial sequence.
  std::vector<double> trace;
};

/// Terminal windowed cost of a predicted horizon given the recorded history.
double mpc_objective(const MpcPlanContext & ctx, const Eigen::MatrixX2d & predictions, const MpcConfig & config);

/// The initial iterate: previous plan shifted left with the last entry repeated, or zeros.
std::vector<double> mpc_initial_sequence(const MpcPlanContext & ctx, const MpcConfig & config);

/// Projected Adam on [-bound, bound]^{n_P}; returns the best iterate seen.
MpcPlan mpc_plan(const HorizonModel & model, const MpcPlanContext & ctx, const MpcConfig & config);

/// Plans, stores the plan in ctx.previous for the next warm start, and returns its first control.
double mpc_act(const HorizonModel & model, MpcPlanContext & ctx, const MpcConfig & config, MpcPlan * plan_out = nullptr);

}  // namespace flowctl
