#include "flowctl/closed_loop.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "flowctl/csv.hpp"

namespace flowctl {

DrlController::DrlController(std::shared_ptr<const PolicyModel> policy, bool deterministic, std::uint64_t seed)
  : policy_(std::move(policy)), deterministic_(deterministic), rng_(seed)
{
  require(policy_ != nullptr, ErrorKind::MissingArtifact, "DRL controller needs a policy");
  policy_->validate();
}

double DrlController::act(const ObservedHistory & history)
{
  RlState s;
  s.window = MemoryWindow::from_history(history.V, history.u, policy_->n_memory);
  const double a = policy_act(*policy_, s, deterministic_, &rng_);
  return smooth_control(history.u.empty() ? 0.0 : history.u.back(), a, policy_->smoothing);
}

MpcController::MpcController(std::shared_ptr<const HorizonModel> model, MpcConfig config)
  : model_(std::move(model)), config_(config)
{
  require(model_ != nullptr, ErrorKind::MissingArtifact, "MPC controller needs a horizon model");
}

double MpcController::act(const ObservedHistory & history)
{
  MpcPlanContext ctx;
  ctx.window = MemoryWindow::from_history(history.V, history.u, model_->memory());
  ctx.history = QoiWindow(static_cast<std::size_t>(window_samples(config_.window, config_.dt)), history.V);
  ctx.previous = std::move(previous_);
  const double u = mpc_act(*model_, ctx, config_, &last_plan_);
  previous_ = std::move(ctx.previous);
  if (trace_) {
    for (std::size_t i = 0; i < last_plan_.trace.size(); ++i) {
      trace_->push_back({step_, static_cast<int>(i), last_plan_.trace[i]});
    }
  }
  ++step_;
  return u;
}

void write_plan_trace(const std::vector<MpcTraceRow> & trace, const std::filesystem::path & path)
{
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write plan trace " + path.string());
  out << "step,iter,objective\n";
  for (const auto & r : trace) { out << r.step << ',' << r.iteration << ',' << csv::format_double(r.objective) << '\n'; }
}

ClosedLoopLog run_closed_loop(const PlantParams & params, Controller & controller, const ClosedLoopOptions & options)
{
  require(options.duration > 0.0, ErrorKind::Configuration, "closed-loop duration must be positive");
  const int n_steps = window_samples(options.duration, options.dt);
  const auto w = static_cast<std::size_t>(window_samples(options.window, options.dt));
  require(options.history_length >= static_cast<int>(w), ErrorKind::InsufficientHistory,
    "spinup history is shorter than the averaging window");

  ClosedLoopLog log;
  log.controller = controller.tag();
  log.regime = params.regime();
  log.seed = options.seed;
  log.dt = options.dt;
  log.window = options.window;
  log.lift_weight = options.lift_weight;

  SpinupResult spin = spinup(params, options.t_spin, options.history_length, options.dt);
  std::vector<QoiSample> V = std::move(spin.samples);
  std::vector<double> u = std::move(spin.controls);
  log.prefix.assign(V.begin(), V.end() - 1);
  PlantState state = spin.state;
  QoiWindow win(w, V);

  V.reserve(V.size() + static_cast<std::size_t>(n_steps));
  u.reserve(u.size() + static_cast<std::size_t>(n_steps));
  log.rows.reserve(static_cast<std::size_t>(n_steps));
  for (int n = 0; n < n_steps; ++n) {
    if (options.state_tap) { options.state_tap(state); }
    const double control = controller.act({V, u});
    LogRow row;
    row.t = n * options.dt;
    row.c_d = V.back().c_d;
    row.c_l = V.back().c_l;
    row.u = control;
    row.cd_win = win.mean_cd();
    row.cl_win = win.mean_cl();
    row.J = win.cost(options.lift_weight);
    log.rows.push_back(row);

    state = plant_step(params, state, control, options.dt);
    const QoiSample v = observe(params, state);
    V.push_back(v);
    u.push_back(control);
    win.push(v);
  }
  return log;
}

namespace {

template<typename F>
double settled_mean(const ClosedLoopLog & log, double t_settle, F field)
{
  double s = 0;
  std::size_t n = 0;
  for (const auto & r : log.rows) {
    if (r.t > t_settle) {
      s += field(r);
      ++n;
    }
  }
  if (n == 0) {
    std::ostringstream os;
    os << "no samples after t_settle=" << t_settle << " in a log of " << log.rows.size() << " rows";
    fail(ErrorKind::InvalidArgument, os.str());
  }
  return s / static_cast<double>(n);
}

}  // namespace

double mean_windowed_drag(const ClosedLoopLog & log, double t_settle)
{
  return settled_mean(log, t_settle, [](const LogRow & r) { return r.cd_win; });
}

double mean_cost(const ClosedLoopLog & log, double t_settle)
{
  return settled_mean(log, t_settle, [](const LogRow & r) { return r.J; });
}

double drag_reduction(const ClosedLoopLog & baseline, const ClosedLoopLog & controlled, double t_settle)
{
  bool same = baseline.dt == controlled.dt && baseline.rows.size() == controlled.rows.size();
  for (std::size_t i = 0; same && i < baseline.rows.size(); ++i) { same = baseline.rows[i].t == controlled.rows[i].t; }
  if (!same) {
    std::ostringstream os;
    os << "mismatched grids: baseline has " << baseline.rows.size() << " rows at dt=" << baseline.dt
       << ", controlled has " << controlled.rows.size() << " rows at dt=" << controlled.dt;
    fail(ErrorKind::InvalidArgument, os.str());
  }
  const double b = mean_windowed_drag(baseline, t_settle);
  const double c = mean_windowed_drag(controlled, t_settle);
  return 100.0 * (b - c) / b;
}

namespace {

std::filesystem::path sidecar(const std::filesystem::path & path)
{
  auto p = path;
  p.replace_extension(".json");
  return p;
}

constexpr int kLogFormatVersion = 1;
constexpr const char * kLogHeader = "t,c_d,c_l,u,cd_win,cl_win,J";

}  // namespace

void write_log(const ClosedLoopLog & log, const std::filesystem::path & path)
{
  {
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write closed-loop log " + path.string());
    out << kLogHeader << '\n';
    for (const auto & r : log.rows) {
      out << csv::format_double(r.t) << ',' << csv::format_double(r.c_d) << ',' << csv::format_double(r.c_l) << ','
          << csv::format_double(r.u) << ',' << csv::format_double(r.cd_win) << ',' << csv::format_double(r.cl_win)
          << ',' << csv::format_double(r.J) << '\n';
    }
  }
  nlohmann::ordered_json j;
  j["format_version"] = kLogFormatVersion;
  j["controller"] = log.controller;
  j["regime"] = log.regime;
  j["seed"] = log.seed;
  j["dt"] = log.dt;
  j["window"] = log.window;
  j["lift_weight"] = log.lift_weight;
  std::vector<double> cd, cl;
  for (const auto & v : log.prefix) {
    cd.push_back(v.c_d);
    cl.push_back(v.c_l);
  }
  j["prefix"] = {{"c_d", cd}, {"c_l", cl}};
  j["config"] = log.config_snapshot;
  std::ofstream out(sidecar(path));
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write log metadata " + sidecar(path).string());
  out << j.dump(1) << '\n';
}

ClosedLoopLog read_log(const std::filesystem::path & path)
{
  ClosedLoopLog log;
  {
    std::ifstream meta(sidecar(path));
    require(static_cast<bool>(meta), ErrorKind::MissingArtifact, "missing log metadata " + sidecar(path).string());
    try {
      const auto j = nlohmann::json::parse(meta);
      require(j.at("format_version").get<int>() == kLogFormatVersion, ErrorKind::Parse,
        sidecar(path).string() + ": unsupported log format version");
      log.controller = j.at("controller").get<std::string>();
      log.regime = j.at("regime").get<double>();
      log.seed = j.at("seed").get<std::uint64_t>();
      log.dt = j.at("dt").get<double>();
      log.window = j.at("window").get<double>();
      log.lift_weight = j.at("lift_weight").get<double>();
      const auto cd = j.at("prefix").at("c_d").get<std::vector<double>>();
      const auto cl = j.at("prefix").at("c_l").get<std::vector<double>>();
      require(cd.size() == cl.size(), ErrorKind::Parse, sidecar(path).string() + ": prefix channels differ in length");
      for (std::size_t i = 0; i < cd.size(); ++i) { log.prefix.push_back({cd[i], cl[i]}); }
      log.config_snapshot = j.at("config").get<std::string>();
    } catch (const nlohmann::json::exception & e) {
      fail(ErrorKind::Parse, sidecar(path).string() + ": " + e.what());
    }
  }

  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingArtifact, "cannot open closed-loop log " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || csv::trim(line) != kLogHeader) {
    fail(ErrorKind::Parse, path.string() + ":1: expected header " + std::string(kLogHeader));
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) { continue; }
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto f = csv::split(line);
    if (f.size() != 7) { fail(ErrorKind::Parse, where + ": expected 7 fields, found " + std::to_string(f.size())); }
    LogRow r;
    r.t = csv::parse_double(f[0], where);
    r.c_d = csv::parse_double(f[1], where);
    r.c_l = csv::parse_double(f[2], where);
    r.u = csv::parse_double(f[3], where);
    r.cd_win = csv::parse_double(f[4], where);
    r.cl_win = csv::parse_double(f[5], where);
    r.J = csv::parse_double(f[6], where);
    log.rows.push_back(r);
  }
  return log;
}

}  // namespace flowctl
