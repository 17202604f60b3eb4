#pragma once

/**
 * @file
 * @brief PPO controller trained entirely inside the flow-map surrogate.
 *
 * State s_n is the memory window flattened newest first,
 *   (V_n, ..., V_{n-n_M}, u_{n-1}, ..., u_{n-n_M}),  length 3 n_M + 2,
 * actions are tanh-squashed Gaussian samples, and the applied control is
 * smoothed, u_n = (1 - alpha) u_{n-1} + alpha a_n. The reward is the negative
 * windowed cost of the buffer after the transition.
 */

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "flowctl/excitation.hpp"
#include "flowctl/flowmap.hpp"
#include "flowctl/metrics.hpp"
#include "flowctl/mlp.hpp"

namespace flowctl {

struct RlState
{
  MemoryWindow window;
  /// Last T / dt observations, for the windowed reward.
  QoiWindow buffer;

  /// Raw (unnormalized) state vector of length 3 n_M + 2.
  Eigen::VectorXd flatten() const;

  friend bool operator==(const RlState &, const RlState &) = default;
};

constexpr int policy_input_width(int n_memory) { return 3 * n_memory + 2; }

struct RlConfig
{
  double gamma{0.99};
  int episode_length{200};
  double smoothing{0.5};
  int episodes{500};
  int episodes_per_iteration{10};
  double clip_ratio{0.2};
  double gae_lambda{0.95};
  int update_epochs{10};
  int minibatch{64};
  double policy_lr{3e-4};
  double value_lr{3e-4};
  double entropy_coef{0.0};
  /// Global gradient-norm cap per network; 0 disables it.
  double max_grad_norm{0.5};
  double initial_log_std{-0.5};
  int hidden{512};
  double window{kCostWindow};
  double lift_weight{kLiftWeight};
  std::uint64_t seed{11};

  /// Throws Configuration on out-of-range settings.
  void validate() const;
};

struct PolicyModel
{
  /// 3 n_M + 2 -> hidden -> hidden -> 1; output is the pre-squash mean.
  Mlp mean;
  /// Same hidden shape, scalar output in normalized value units.
  Mlp value;
  double log_std{0};
  int n_memory{0};
  double smoothing{0.5};
  /// Feature scaling, copied from the flow map the policy was trained in.
  Normalization norm;
  double value_offset{0};
  double value_scale{1};

  int input_width() const { return policy_input_width(n_memory); }
  /// Normalized network input for a state. Throws Dimension on a width mismatch.
  Eigen::VectorXd features(const RlState & state) const;
  /// Throws Dimension / InvalidArgument on inconsistent shapes or a non-finite log-std.
  void validate() const;

  friend bool operator==(const PolicyModel &, const PolicyModel &) = default;
};

/// Fresh policy for a flow map; the mean head starts near zero so initial actions are small.
PolicyModel make_policy(const FlowMapModel & model, const RlConfig & config, Rng & rng);

/// Draws one pool entry and builds the reset state (all-zero control history, full reward buffer).
RlState env_reset(std::span<const InitialHistory> pool, int n_memory, Rng & rng, double window = kCostWindow,
  double dt = kDefaultSampleStep);

/// (1 - alpha) u_prev + alpha a.
double smooth_control(double u_prev, double action, double alpha);

struct StepResult
{
  RlState state;
  double reward{0};
  double control{0};
};

/// One surrogate transition. Throws ControlBound for |a| > 1. Never calls the plant.
StepResult env_step(const FlowMapModel & model, const RlState & state, double action, double smoothing = 0.5,
  double lift_weight = kLiftWeight);

/// Returns-to-go G_t = r_t + gamma G_{t+1}, with G after the last reward equal to `bootstrap`.
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma, double bootstrap = 0.0);

/// Generalized advantage estimates; values[t] = V(s_t), bootstrap = V(s_T).
std::vector<double> gae_advantages(
  std::span<const double> rewards, std::span<const double> values, double bootstrap, double gamma, double lambda);

/// Squashed action; stochastic mode needs an rng.
double policy_act(const PolicyModel & policy, const RlState & state, bool deterministic, Rng * rng = nullptr);

struct PpoIterationLog
{
  int iteration{0};
  /// Discounted episode returns over the iteration's episodes.
  double mean_return{0};
  double std_return{0};
  double mean_windowed_cd{0};
};

struct PpoResult
{
  PolicyModel policy;
  std::vector<PpoIterationLog> log;
  /// Surrogate transitions collected, episodes x n_RL.
  std::size_t samples{0};
};

PpoResult ppo_train(const FlowMapModel & model, std::span<const InitialHistory> pool, const RlConfig & config,
  const std::function<void(const PpoIterationLog &)> & on_iteration = {});

/// Mean discounted return of the deterministic policy (or zero action) over episodes from each pool entry.
double evaluate_return(const FlowMapModel & model, std::span<const InitialHistory> pool, const PolicyModel * policy,
  const RlConfig & config);

void write_training_log(const std::vector<PpoIterationLog> & log, const std::filesystem::path & path);

inline constexpr int kPolicyFormatVersion = 1;

void save_policy(const PolicyModel & policy, const std::filesystem::path & path);
PolicyModel load_policy(const std::filesystem::path & path);

}  // namespace flowctl
