#pragma once

#include <deque>
#include <span>
#include <vector>

#include "flowctl/plant.hpp"

namespace flowctl {

/// Averaging window of the cost, in time units.
inline constexpr double kCostWindow = 5.0;
/// Weight of the windowed lift magnitude in the cost.
inline constexpr double kLiftWeight = 0.2;

/// Samples per averaging window; throws Configuration unless T / dt is integral.
int window_samples(double window, double dt);

/**
 * Trailing mean over `window` time units. Entry k averages the last
 * min(k + 1, T / dt) samples, always summed oldest first.
 */
std::vector<double> moving_average(std::span<const double> series, double window, double dt);

/// Mean of a span, summed front to back.
double mean_of(std::span<const double> values);

/// J = <c_d> + omega_L |<c_l>| over equally long windows.
double cost_J(std::span<const double> cd_window, std::span<const double> cl_window, double lift_weight = kLiftWeight);

/// Fixed-length trailing buffer of observations used by the reward and the closed-loop log.
class QoiWindow
{
public:
  QoiWindow() = default;
  explicit QoiWindow(std::size_t capacity) : capacity_(capacity) {}

  /// Keeps the newest `capacity` entries of a history, oldest first.
  QoiWindow(std::size_t capacity, std::span<const QoiSample> history);

  void push(const QoiSample & v);
  bool full() const { return cd_.size() == capacity_; }
  std::size_t size() const { return cd_.size(); }
  std::size_t capacity() const { return capacity_; }

  double mean_cd() const;
  double mean_cl() const;
  double cost(double lift_weight = kLiftWeight) const;

  std::vector<double> cd() const { return {cd_.begin(), cd_.end()}; }
  std::vector<double> cl() const { return {cl_.begin(), cl_.end()}; }

  friend bool operator==(const QoiWindow &, const QoiWindow &) = default;

private:
  std::size_t capacity_{0};
  std::deque<double> cd_;
  std::deque<double> cl_;
};

}  // namespace flowctl
