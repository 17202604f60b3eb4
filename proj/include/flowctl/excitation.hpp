#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flowctl/plant.hpp"
#include "flowctl/random.hpp"

namespace flowctl {

/// Piecewise-constant excitation, one value per sample step.
struct ExcitationSignal
{
  std::vector<double> values;
  std::uint64_t seed{0};
};

/// Recorded excitation/response history: V_0..V_N and u_0..u_{N-1}.
struct Trajectory
{
  /// Regime the trajectory was generated at. Kept for provenance only.
  double regime{0};
  std::vector<QoiSample> V;
  std::vector<double> u;
  double dt{kDefaultSampleStep};

  std::size_t steps() const { return u.size(); }
  friend bool operator==(const Trajectory &, const Trajectory &) = default;
};

enum class RegimeMode {
  Fixed,    ///< every trajectory at the same regime
  Uniform,  ///< r ~ U(lo, hi) per trajectory
};

std::string to_string(RegimeMode mode);
RegimeMode regime_mode_from_string(const std::string & s);

struct DatasetConfig
{
  int n_sim{200};
  double t_sim{100.0};
  double dt{kDefaultSampleStep};
  RegimeMode mode{RegimeMode::Fixed};
  double fixed_regime{300.0};
  double regime_lo{100.0};
  double regime_hi{500.0};
  std::uint64_t master_seed{1};
  double t_spin{kDefaultSpinupTime};
  /// Spinup histories kept for controller resets (phase-shifted, see make_initial_pool).
  int pool_size{16};
  int history_length{kDefaultHistoryLength};
};

/// An uncontrolled history used to start control episodes.
struct InitialHistory
{
  std::vector<QoiSample> samples;
  std::vector<double> controls;

  friend bool operator==(const InitialHistory &, const InitialHistory &) = default;
};

struct Dataset
{
  std::vector<Trajectory> trajectories;
  double dt{kDefaultSampleStep};
  double t_sim{0};
  RegimeMode mode{RegimeMode::Fixed};
  std::uint64_t master_seed{0};
  /// Spinup histories recorded alongside the data; not part of the training set.
  std::vector<InitialHistory> initial_pool;

  std::size_t steps() const { return trajectories.empty() ? 0 : trajectories.front().steps(); }
  friend bool operator==(const Dataset &, const Dataset &) = default;
};

/// Inputs and targets for one multi-step loss evaluation.
struct TrainingSegment
{
  /// V_{n0} .. V_{n0+n_M}, oldest first.
  std::vector<QoiSample> window;
  /// u_{n0} .. u_{n0+n_M+n_R-1}.
  std::vector<double> controls;
  /// V_{n0+n_M+1} .. V_{n0+n_M+n_R}.
  std::vector<QoiSample> targets;
  std::size_t start{0};

  int memory() const { return static_cast<int>(window.size()) - 1; }
  int horizon() const { return static_cast<int>(targets.size()); }
};

/// I.i.d. U(-1, 1) values, reproducible from the seed.
ExcitationSignal random_excitation(std::size_t n_step, std::uint64_t seed);

/// Spinup to t_spin, then drive the plant with the signal for t_sim time units.
Trajectory generate_trajectory(
  const PlantParams & params,
  const ExcitationSignal & signal,
  double t_sim,
  double dt = kDefaultSampleStep,
  double t_spin = kDefaultSpinupTime);

Dataset generate_dataset(const DatasetConfig & config);

/// Spinup histories with start times t_spin + k * 3 dt, k = 0..count-1, at the given regimes.
std::vector<InitialHistory> make_initial_pool(
  const std::vector<double> & regimes, int count, double t_spin, int history_length, double dt);

/// Draws n0 ~ U{0, ..., N_step - n_L} and slices the segment, n_L = n_M + 1 + n_R.
TrainingSegment sample_segment(const Trajectory & trajectory, int n_memory, int n_recurrent, Rng & rng);

/// Slices the segment starting at a given n0 (no bounds randomization).
TrainingSegment segment_at(const Trajectory & trajectory, int n_memory, int n_recurrent, std::size_t n0);

void write_dataset(const Dataset & dataset, const std::filesystem::path & dir);
Dataset read_dataset(const std::filesystem::path & dir);

inline constexpr int kDatasetFormatVersion = 1;

}  // namespace flowctl
