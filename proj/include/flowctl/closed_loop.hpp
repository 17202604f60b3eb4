#pragma once

/**
 * @file
 * @brief On-the-fly closed loop between the true plant and a controller.
 *
 * After spinup the loop repeats: observe V_n, hand the observed history to the
 * controller, apply u_n to the plant for one sample step. Controllers only ever
 * see observations and the controls already applied; the regime parameter stays
 * inside the plant.
 */

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "flowctl/metrics.hpp"
#include "flowctl/mpc.hpp"
#include "flowctl/plant.hpp"
#include "flowctl/rl.hpp"

namespace flowctl {

/// Everything a controller may look at. Both spans have equal length; u.back() is u_{n-1}.
struct ObservedHistory
{
  std::span<const QoiSample> V;
  std::span<const double> u;
};

class Controller
{
public:
  virtual ~Controller() = default;
  /// "none", "drl" or "mpc".
  virtual std::string tag() const = 0;
  /// Control u_n for the history ending at V_n.
  virtual double act(const ObservedHistory & history) = 0;
};

class NoController final : public Controller
{
public:
  std::string tag() const override { return "none"; }
  double act(const ObservedHistory &) override { return 0.0; }
};

/// Policy action smoothed against the applied control history.
class DrlController final : public Controller
{
public:
  explicit DrlController(std::shared_ptr<const PolicyModel> policy, bool deterministic = true, std::uint64_t seed = 0);

  std::string tag() const override { return "drl"; }
  double act(const ObservedHistory & history) override;

private:
  std::shared_ptr<const PolicyModel> policy_;
  bool deterministic_;
  Rng rng_;
};

struct MpcTraceRow
{
  std::size_t step{0};
  int iteration{0};
  double objective{0};
};

class MpcController final : public Controller
{
public:
  MpcController(std::shared_ptr<const HorizonModel> model, MpcConfig config);

  std::string tag() const override { return "mpc"; }
  double act(const ObservedHistory & history) override;

  /// Objectives of the most recent plan.
  const MpcPlan & last_plan() const { return last_plan_; }
  /// Collect per-iteration objectives of every plan into `sink` (null disables).
  void record_trace(std::vector<MpcTraceRow> * sink) { trace_ = sink; }

private:
  std::shared_ptr<const HorizonModel> model_;
  MpcConfig config_;
  std::vector<double> previous_;
  MpcPlan last_plan_;
  std::vector<MpcTraceRow> * trace_{nullptr};
  std::size_t step_{0};
};

void write_plan_trace(const std::vector<MpcTraceRow> & trace, const std::filesystem::path & path);

inline constexpr double kDefaultDuration = 200.0;
inline constexpr double kDefaultSettleTime = 50.0;

struct ClosedLoopOptions
{
  double duration{kDefaultDuration};
  double dt{kDefaultSampleStep};
  double t_spin{kDefaultSpinupTime};
  int history_length{kDefaultHistoryLength};
  double window{kCostWindow};
  double lift_weight{kLiftWeight};
  std::uint64_t seed{0};
  /// Plant state right before each controller call; only oracle controllers hook in here.
  std::function<void(const PlantState &)> state_tap;
};

struct LogRow
{
  double t{0};
  double c_d{0};
  double c_l{0};
  double u{0};
  double cd_win{0};
  double cl_win{0};
  double J{0};

  friend bool operator==(const LogRow &, const LogRow &) = default;
};

struct ClosedLoopLog
{
  std::string controller;
  double regime{0};
  std::uint64_t seed{0};
  double dt{kDefaultSampleStep};
  double window{kCostWindow};
  double lift_weight{kLiftWeight};
  /// Uncontrolled samples observed before t = 0, oldest first; they pre-fill the windows.
  std::vector<QoiSample> prefix;
  std::vector<LogRow> rows;
  std::string config_snapshot;

  friend bool operator==(const ClosedLoopLog &, const ClosedLoopLog &) = default;
};

ClosedLoopLog run_closed_loop(const PlantParams & params, Controller & controller, const ClosedLoopOptions & options = {});

/// Mean of cd_win over rows with t > t_settle.
double mean_windowed_drag(const ClosedLoopLog & log, double t_settle = kDefaultSettleTime);
/// Mean of J over rows with t > t_settle.
double mean_cost(const ClosedLoopLog & log, double t_settle = kDefaultSettleTime);

/// 100 (baseline - controlled) / baseline of the settled windowed drag. Throws InvalidArgument on mismatched grids.
double drag_reduction(const ClosedLoopLog & baseline, const ClosedLoopLog & controlled, double t_settle = kDefaultSettleTime);

/// Writes `t,c_d,c_l,u,cd_win,cl_win,J` to path and the metadata next to it (same stem, .json).
void write_log(const ClosedLoopLog & log, const std::filesystem::path & path);
ClosedLoopLog read_log(const std::filesystem::path & path);

}  // namespace flowctl
