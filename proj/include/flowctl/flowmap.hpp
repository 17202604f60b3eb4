#pragma once

/**
 * @file
 * @brief Memory-based flow map surrogate for the drag/lift response.
 *
 * The model advances the observables one sample step,
 *   V_{n+1} = G(V_n, ..., V_{n-n_M}; u_n, ..., u_{n-n_M}),
 * where G is an MLP from R^{3(n_M+1)} to R^2. Inputs are standardized per
 * channel and laid out newest first: the V block (c_d, c_l pairs) followed by
 * the u block.
 */

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "flowctl/excitation.hpp"
#include "flowctl/mlp.hpp"
#include "flowctl/plant.hpp"

namespace flowctl {

/// Per-channel standardization for (c_d, c_l, u).
struct Normalization
{
  Eigen::Vector3d mean{0, 0, 0};
  Eigen::Vector3d std{1, 1, 1};

  Eigen::Vector2d normalize(const QoiSample & v) const
  {
    return {(v.c_d - mean(0)) / std(0), (v.c_l - mean(1)) / std(1)};
  }
  QoiSample denormalize(const Eigen::Vector2d & z) const
  {
    return {z(0) * std(0) + mean(0), z(1) * std(1) + mean(1)};
  }
  double normalize_control(double u) const { return (u - mean(2)) / std(2); }

  static Normalization from_dataset(const Dataset & dataset);
  friend bool operator==(const Normalization & a, const Normalization & b)
  {
    return a.mean == b.mean && a.std == b.std;
  }
};

/// Trailing observation/control history: n_M + 1 observables and n_M past controls.
struct MemoryWindow
{
  /// 2 x (n_M + 1), oldest column first.
  Eigen::Matrix<double, 2, Eigen::Dynamic> V;
  /// u_{n-n_M}, ..., u_{n-1}, oldest first.
  Eigen::VectorXd u;

  int memory() const { return static_cast<int>(V.cols()) - 1; }
  QoiSample newest() const { return QoiSample::from(V.col(V.cols() - 1)); }
  QoiSample at(int age) const { return QoiSample::from(V.col(V.cols() - 1 - age)); }
  /// u_{n-1}; zero when n_M = 0.
  double last_control() const { return u.size() ? u(u.size() - 1) : 0.0; }

  /// Builds the window from the tails of a history; controls.back() is u_{n-1}.
  static MemoryWindow from_history(std::span<const QoiSample> samples, std::span<const double> controls, int n_memory);

  friend bool operator==(const MemoryWindow & a, const MemoryWindow & b) { return a.V == b.V && a.u == b.u; }
};

/// Drops the oldest V and u, appends V_new and the control that produced it.
MemoryWindow advance_window(const MemoryWindow & window, const QoiSample & v_new, double u_used);

struct FlowMapModel
{
  Mlp mlp;
  int n_memory{0};
  double dt{kDefaultSampleStep};
  Normalization norm;

  int input_width() const { return 3 * (n_memory + 1); }

  /// Throws Dimension unless widths obey 3(n_M + 1) -> ... -> 2 and scales are positive.
  void validate() const;

  friend bool operator==(const FlowMapModel &, const FlowMapModel &) = default;
};

/// Input width of G for a given memory: 3(n_M + 1).
constexpr int flowmap_input_width(int n_memory) { return 3 * (n_memory + 1); }

/// Normalized network input for window + u_n, newest first (V block then u block).
Eigen::VectorXd flowmap_input(const FlowMapModel & model, const MemoryWindow & window, double u_n);

QoiSample flowmap_step(const FlowMapModel & model, const MemoryWindow & window, double u_n);

/// Feeds each prediction back into the window; returns the K predictions in order.
std::vector<QoiSample> rollout(const FlowMapModel & model, const MemoryWindow & window, std::span<const double> controls);

/// Same as rollout(), also returning the advanced window.
std::vector<QoiSample> rollout(
  const FlowMapModel & model, const MemoryWindow & window, std::span<const double> controls, MemoryWindow & advanced);

/**
 * @brief Vector-Jacobian product of a rollout.
 *
 * Runs rollout() and back-propagates dL/dV (K x 2, raw units) to dL/du for
 * each control. Returns the predictions through `predictions` (K x 2).
 */
Eigen::VectorXd rollout_pullback(const FlowMapModel & model,
  const MemoryWindow & window,
  std::span<const double> controls,
  const std::function<Eigen::MatrixX2d(const Eigen::MatrixX2d &)> & loss_gradient,
  Eigen::MatrixX2d * predictions = nullptr);

/// Mean over the n_R steps of the squared prediction error, in normalized units.
double multistep_loss(const FlowMapModel & model, const TrainingSegment & segment);

/// Mean multistep loss over a batch and its parameter gradient.
double multistep_loss_and_gradient(
  const FlowMapModel & model, std::span<const TrainingSegment> batch, Eigen::VectorXd * grad);

struct TrainConfig
{
  int n_recurrent{3};
  /// Optimizer updates; one update per freshly sampled minibatch.
  long epochs{20000};
  int batch_size{1024};
  double learning_rate{5e-4};
  double decay{0.9999};
  /// Segments drawn per trajectory for each pass; 0 picks ceil(batch / N_sim).
  int segments_per_trajectory{0};
  std::uint64_t seed{7};
  /// Called every `log_every` updates with (update index, minibatch loss).
  long log_every{0};
  std::function<void(long, double)> on_log;
};

struct TrainResult
{
  FlowMapModel model;
  std::vector<double> loss_curve;
};

TrainResult train_flowmap(const Dataset & dataset, int n_memory, const std::vector<int> & widths, const TrainConfig & config);

/// Rollout accuracy against recorded trajectories.
struct OpenLoopErrors
{
  /// Per channel RMSE divided by the channel's standard deviation over the held-out data.
  Eigen::Vector2d normalized_rmse{0, 0};
  Eigen::Vector2d rmse{0, 0};
  Eigen::Vector2d reference_std{0, 0};
  std::size_t samples{0};
};

/// Rolls out K steps from the window ending at sample `start` of every trajectory.
OpenLoopErrors open_loop_errors(
  const FlowMapModel & model, std::span<const Trajectory> trajectories, std::size_t start, std::size_t steps);

/// Teacher-forced one-step RMSE in normalized units, averaged over both channels.
double one_step_normalized_rmse(const FlowMapModel & model, std::span<const Trajectory> trajectories);

inline constexpr int kModelFormatVersion = 1;

void save_model(const FlowMapModel & model, const std::filesystem::path & path);
FlowMapModel load_model(const std::filesystem::path & path);

}  // namespace flowctl
