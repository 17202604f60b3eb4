#pragma once

/**
 * @file
 * @brief Experiment configuration: an INI file of [section] key = value pairs.
 *
 * Every key has a default, so a file only lists what it changes; the
 * [experiment] section must carry `version = 1`. Unknown sections or keys are
 * rejected. See README.md for the full schema.
 */

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "flowctl/excitation.hpp"
#include "flowctl/flowmap.hpp"
#include "flowctl/mpc.hpp"
#include "flowctl/rl.hpp"

namespace flowctl {

inline constexpr int kConfigVersion = 1;

struct ExperimentConfig
{
  int version{kConfigVersion};
  std::string mode;
  std::filesystem::path out{"out"};

  // [plant]
  double regime{300.0};
  double dt{kDefaultSampleStep};
  double t_spin{kDefaultSpinupTime};
  int history_length{kDefaultHistoryLength};

  // [data]
  std::filesystem::path data_dir;
  DatasetConfig data;

  // [fml]
  int n_memory{20};
  std::vector<int> widths{63, 50, 50, 50, 50, 2};
  TrainConfig train;

  // [validate]
  int validate_trajectories{10};
  double validate_time{20.0};
  std::vector<double> validate_regimes{300.0};
  std::uint64_t validate_seed{99};

  // [ppo]
  RlConfig rl;

  // [mpc]
  MpcConfig mpc;

  // [control]
  std::string controller{"none"};
  double duration{200.0};
  double t_settle{50.0};
  std::filesystem::path model;
  std::filesystem::path policy;
  bool stochastic{false};
  std::uint64_t control_seed{0};
  bool trace{false};

  /// data_dir if set, else <out>/data.
  std::filesystem::path dataset_dir() const;
  /// Throws Configuration on inconsistent settings.
  void validate() const;
};

/// Throws Configuration with the offending key on malformed input.
ExperimentConfig parse_config(std::istream & in, const std::string & where);
ExperimentConfig load_config(const std::filesystem::path & path);

/// The complete configuration in the file format; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig & config);

}  // namespace flowctl
