#include "flowctl/excitation.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "flowctl/csv.hpp"

namespace flowctl {

namespace {

constexpr std::uint64_t kExcitationStream = 0x65786369;  // "exci"
constexpr std::uint64_t kRegimeStream = 0x72656769;      // "regi"

std::size_t steps_for(double duration, double dt, const char * what)
{
  require(dt > 0.0, ErrorKind::Configuration, "sample step must be positive");
  const double ratio = duration / dt;
  const double n = std::round(ratio);
  if (n < 1.0 || std::abs(ratio - n) > 1e-9 * ratio) {
    std::ostringstream os;
    os << what << " " << duration << " is not a positive multiple of dt=" << dt;
    fail(ErrorKind::Configuration, os.str());
  }
  return static_cast<std::size_t>(n);
}

std::string trajectory_file(std::size_t index)
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "traj_%05zu.csv", index);
  return buf;
}

}  // namespace

std::string to_string(RegimeMode mode) { return mode == RegimeMode::Fixed ? "fixed" : "uniform"; }

RegimeMode regime_mode_from_string(const std::string & s)
{
  if (s == "fixed") { return RegimeMode::Fixed; }
  if (s == "uniform") { return RegimeMode::Uniform; }
  fail(ErrorKind::Configuration, "unknown regime mode '" + s + "' (expected fixed or uniform)");
}

ExcitationSignal random_excitation(std::size_t n_step, std::uint64_t seed)
{
  require(n_step >= 1, ErrorKind::InvalidArgument, "excitation needs at least one step");
  ExcitationSignal signal;
  signal.seed = seed;
  signal.values.resize(n_step);
  Rng rng(seed);
  for (auto & v : signal.values) { v = uniform(rng, -1.0, 1.0); }
  return signal;
}

Trajectory generate_trajectory(
  const PlantParams & params, const ExcitationSignal & signal, double t_sim, double dt, double t_spin)
{
  const std::size_t n_step = steps_for(t_sim, dt, "simulation time");
  if (signal.values.size() != n_step) {
    std::ostringstream os;
    os << "excitation has " << signal.values.size() << " values, expected " << n_step;
    fail(ErrorKind::InvalidArgument, os.str());
  }

  const SpinupResult warm = spinup(params, t_spin, 1, dt);
  Trajectory traj;
  traj.regime = params.regime();
  traj.dt = dt;
  traj.u = signal.values;
  traj.V.reserve(n_step + 1);

  PlantState state = warm.state;
  traj.V.push_back(observe(params, state));
  for (double u : signal.values) {
    state = plant_step(params, state, u, dt);
    traj.V.push_back(observe(params, state));
  }
  return traj;
}

std::vector<InitialHistory> make_initial_pool(
  const std::vector<double> & regimes, int count, double t_spin, int history_length, double dt)
{
  require(!regimes.empty() && count >= 1, ErrorKind::InvalidArgument, "initial pool needs regimes and count >= 1");
  std::vector<InitialHistory> pool;
  pool.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const PlantParams params = make_plant(regimes[static_cast<std::size_t>(k) % regimes.size()]);
    const double start = t_spin + 3.0 * dt * k;
    const SpinupResult warm = spinup(params, start, history_length, dt);
    pool.push_back({warm.samples, warm.controls});
  }
  return pool;
}

Dataset generate_dataset(const DatasetConfig & config)
{
  require(config.n_sim >= 1, ErrorKind::Configuration, "n_sim must be at least 1");
  require(config.mode == RegimeMode::Fixed || config.regime_hi > config.regime_lo, ErrorKind::Configuration,
    "regime range must be nonempty");
  const std::size_t n_step = steps_for(config.t_sim, config.dt, "simulation time");

  Dataset ds;
  ds.dt = config.dt;
  ds.t_sim = config.t_sim;
  ds.mode = config.mode;
  ds.master_seed = config.master_seed;
  ds.trajectories.resize(static_cast<std::size_t>(config.n_sim));

  std::vector<double> regimes(ds.trajectories.size());
  for (std::size_t j = 0; j < regimes.size(); ++j) {
    if (config.mode == RegimeMode::Fixed) {
      regimes[j] = config.fixed_regime;
    } else {
      Rng rng(derive_seed(config.master_seed, kRegimeStream, j));
      regimes[j] = uniform(rng, config.regime_lo, config.regime_hi);
    }
  }

  // Each trajectory depends only on (master seed, index), so this loop may be split across workers.
  for (std::size_t j = 0; j < ds.trajectories.size(); ++j) {
    const PlantParams params = make_plant(regimes[j]);
    const auto signal = random_excitation(n_step, derive_seed(config.master_seed, kExcitationStream, j));
    ds.trajectories[j] = generate_trajectory(params, signal, config.t_sim, config.dt, config.t_spin);
  }

  if (config.pool_size > 0) {
    ds.initial_pool =
      make_initial_pool(regimes, config.pool_size, config.t_spin, config.history_length, config.dt);
  }
  return ds;
}

TrainingSegment segment_at(const Trajectory & trajectory, int n_memory, int n_recurrent, std::size_t n0)
{
  require(n_memory >= 0 && n_recurrent >= 1, ErrorKind::Segment, "need n_M >= 0 and n_R >= 1");
  const auto n_m = static_cast<std::size_t>(n_memory);
  const auto n_r = static_cast<std::size_t>(n_recurrent);
  const std::size_t n_l = n_m + 1 + n_r;
  if (trajectory.steps() < n_l || n0 > trajectory.steps() - n_l) {
    std::ostringstream os;
    os << "segment of length " << n_l << " at n0=" << n0 << " does not fit a trajectory with " << trajectory.steps()
       << " steps";
    fail(ErrorKind::Segment, os.str());
  }
  TrainingSegment seg;
  seg.start = n0;
  seg.window.assign(trajectory.V.begin() + static_cast<std::ptrdiff_t>(n0),
    trajectory.V.begin() + static_cast<std::ptrdiff_t>(n0 + n_m + 1));
  seg.controls.assign(trajectory.u.begin() + static_cast<std::ptrdiff_t>(n0),
    trajectory.u.begin() + static_cast<std::ptrdiff_t>(n0 + n_m + n_r));
  seg.targets.assign(trajectory.V.begin() + static_cast<std::ptrdiff_t>(n0 + n_m + 1),
    trajectory.V.begin() + static_cast<std::ptrdiff_t>(n0 + n_m + 1 + n_r));
  return seg;
}

TrainingSegment sample_segment(const Trajectory & trajectory, int n_memory, int n_recurrent, Rng & rng)
{
  require(n_memory >= 0 && n_recurrent >= 1, ErrorKind::Segment, "need n_M >= 0 and n_R >= 1");
  const auto n_l = static_cast<std::size_t>(n_memory + 1 + n_recurrent);
  if (trajectory.steps() < n_l) {
    std::ostringstream os;
    os << "trajectory with " << trajectory.steps() << " steps is shorter than segment length " << n_l;
    fail(ErrorKind::Segment, os.str());
  }
  const std::size_t n0 = uniform_index(rng, trajectory.steps() - n_l + 1);
  return segment_at(trajectory, n_memory, n_recurrent, n0);
}

void write_dataset(const Dataset & dataset, const std::filesystem::path & dir)
{
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::Io, "cannot create dataset directory " + dir.string());

  nlohmann::ordered_json manifest;
  manifest["format_version"] = kDatasetFormatVersion;
  manifest["dt"] = dataset.dt;
  manifest["T_sim"] = dataset.t_sim;
  manifest["N_step"] = dataset.steps();
  manifest["N_sim"] = dataset.trajectories.size();
  manifest["regime_mode"] = to_string(dataset.mode);
  manifest["master_seed"] = dataset.master_seed;
  std::vector<double> regimes;
  for (const auto & t : dataset.trajectories) { regimes.push_back(t.regime); }
  manifest["regimes"] = regimes;
  manifest["initial_pool"] = dataset.initial_pool.empty() ? "" : "initial_pool.csv";
  {
    std::ofstream out(dir / "manifest.json");
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
  }

  for (std::size_t j = 0; j < dataset.trajectories.size(); ++j) {
    const auto & traj = dataset.trajectories[j];
    std::ofstream out(dir / trajectory_file(j));
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + trajectory_file(j));
    out << "step,t,c_d,c_l,u\n";
    for (std::size_t k = 0; k < traj.V.size(); ++k) {
      out << k << ',' << csv::format_double(static_cast<double>(k) * traj.dt) << ','
          << csv::format_double(traj.V[k].c_d) << ',' << csv::format_double(traj.V[k].c_l) << ',';
      if (k < traj.u.size()) { out << csv::format_double(traj.u[k]); }
      out << '\n';
    }
  }

  if (!dataset.initial_pool.empty()) {
    std::ofstream out(dir / "initial_pool.csv");
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write initial_pool.csv");
    out << "entry,step,c_d,c_l,u\n";
    for (std::size_t e = 0; e < dataset.initial_pool.size(); ++e) {
      const auto & h = dataset.initial_pool[e];
      for (std::size_t k = 0; k < h.samples.size(); ++k) {
        out << e << ',' << k << ',' << csv::format_double(h.samples[k].c_d) << ','
            << csv::format_double(h.samples[k].c_l) << ',' << csv::format_double(h.controls[k]) << '\n';
      }
    }
  }
}

namespace {

Trajectory read_trajectory(const std::filesystem::path & path, std::size_t index, std::size_t n_step, double dt)
{
  const std::string where = "trajectory " + std::to_string(index) + " (" + path.filename().string() + ")";
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Parse, where + ": file missing");

  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && csv::trim(line) == "step,t,c_d,c_l,u", ErrorKind::Parse,
    where + ": bad header");

  Trajectory traj;
  traj.dt = dt;
  traj.V.reserve(n_step + 1);
  traj.u.reserve(n_step);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) { continue; }
    const std::string at = where + " line " + std::to_string(lineno);
    const auto fields = csv::split(csv::trim(line));
    require(fields.size() == 5, ErrorKind::Parse, at + ": expected 5 fields, got " + std::to_string(fields.size()));
    const std::size_t k = traj.V.size();
    require(csv::parse_size(fields[0], at) == k, ErrorKind::Parse, at + ": step index out of sequence");
    traj.V.push_back({csv::parse_double(fields[2], at), csv::parse_double(fields[3], at)});
    if (k < n_step) {
      require(!fields[4].empty(), ErrorKind::Parse, at + ": missing control");
      const double u = csv::parse_double(fields[4], at);
      require(std::abs(u) <= 1.0, ErrorKind::Parse, at + ": control " + std::string(fields[4]) + " outside [-1, 1]");
      traj.u.push_back(u);
    } else {
      require(fields[4].empty(), ErrorKind::Parse, at + ": final row must not carry a control");
    }
    require(k <= n_step, ErrorKind::Parse, at + ": more rows than N_step + 1");
  }
  if (traj.V.size() != n_step + 1) {
    std::ostringstream os;
    os << where << ": truncated, found " << traj.V.size() << " of " << n_step + 1 << " records";
    fail(ErrorKind::Parse, os.str());
  }
  return traj;
}

}  // namespace

Dataset read_dataset(const std::filesystem::path & dir)
{
  std::ifstream in(dir / "manifest.json");
  require(static_cast<bool>(in), ErrorKind::MissingArtifact, "no manifest.json in " + dir.string());

  Dataset ds;
  std::size_t n_step = 0;
  std::size_t n_sim = 0;
  std::vector<double> regimes;
  std::string pool_file;
  try {
    const auto manifest = nlohmann::json::parse(in);
    const int version = manifest.at("format_version").get<int>();
    require(version == kDatasetFormatVersion, ErrorKind::Parse,
      "dataset format version " + std::to_string(version) + " is not supported");
    ds.dt = manifest.at("dt").get<double>();
    ds.t_sim = manifest.at("T_sim").get<double>();
    n_step = manifest.at("N_step").get<std::size_t>();
    n_sim = manifest.at("N_sim").get<std::size_t>();
    ds.mode = regime_mode_from_string(manifest.at("regime_mode").get<std::string>());
    ds.master_seed = manifest.at("master_seed").get<std::uint64_t>();
    regimes = manifest.at("regimes").get<std::vector<double>>();
    pool_file = manifest.value("initial_pool", std::string{});
  } catch (const nlohmann::json::exception & e) {
    fail(ErrorKind::Parse, "manifest.json: " + std::string(e.what()));
  }
  require(regimes.size() == n_sim, ErrorKind::Parse, "manifest.json: regimes list does not match N_sim");

  ds.trajectories.reserve(n_sim);
  for (std::size_t j = 0; j < n_sim; ++j) {
    Trajectory t = read_trajectory(dir / trajectory_file(j), j, n_step, ds.dt);
    t.regime = regimes[j];
    ds.trajectories.push_back(std::move(t));
  }

  if (!pool_file.empty()) {
    std::ifstream pin(dir / pool_file);
    require(static_cast<bool>(pin), ErrorKind::Parse, pool_file + ": file missing");
    std::string line;
    require(static_cast<bool>(std::getline(pin, line)) && csv::trim(line) == "entry,step,c_d,c_l,u",
      ErrorKind::Parse, pool_file + ": bad header");
    std::size_t lineno = 1;
    while (std::getline(pin, line)) {
      ++lineno;
      if (csv::trim(line).empty()) { continue; }
      const std::string at = pool_file + " line " + std::to_string(lineno);
      const auto fields = csv::split(csv::trim(line));
      require(fields.size() == 5, ErrorKind::Parse, at + ": expected 5 fields");
      const std::size_t e = csv::parse_size(fields[0], at);
      require(e == ds.initial_pool.size() || e + 1 == ds.initial_pool.size(), ErrorKind::Parse,
        at + ": entries out of order");
      if (e == ds.initial_pool.size()) { ds.initial_pool.emplace_back(); }
      auto & h = ds.initial_pool.back();
      require(csv::parse_size(fields[1], at) == h.samples.size(), ErrorKind::Parse, at + ": step out of sequence");
      h.samples.push_back({csv::parse_double(fields[2], at), csv::parse_double(fields[3], at)});
      h.controls.push_back(csv::parse_double(fields[4], at));
    }
  }
  return ds;
}

}  // namespace flowctl
