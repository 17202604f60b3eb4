// Command-line driver: data generation, surrogate training, validation,
// controller training, closed-loop runs and reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flowctl/closed_loop.hpp"
#include "flowctl/config.hpp"
#include "flowctl/csv.hpp"
#include "flowctl/excitation.hpp"
#include "flowctl/flowmap.hpp"
#include "flowctl/mpc.hpp"
#include "flowctl/report.hpp"
#include "flowctl/rl.hpp"

namespace fs = std::filesystem;
using namespace flowctl;

namespace {

/// Exit statuses; documented in README.md.
enum Exit : int {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kConfig = 3,
  kArtifact = 4,
  kData = 5,
  kDiverged = 6,
  kDomain = 7,
};

int exit_code(ErrorKind kind)
{
  switch (kind) {
    case ErrorKind::UnknownCommand: return kUsage;
    case ErrorKind::Configuration: return kConfig;
    case ErrorKind::MissingArtifact:
    case ErrorKind::Io: return kArtifact;
    case ErrorKind::Parse:
    case ErrorKind::Dimension:
    case ErrorKind::Segment: return kData;
    case ErrorKind::Divergence: return kDiverged;
    case ErrorKind::InvalidArgument:
    case ErrorKind::InvalidRegime:
    case ErrorKind::ControlBound:
    case ErrorKind::InsufficientHistory: return kDomain;
  }
  return kUnexpected;
}

struct Overrides
{
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> regime;
  std::optional<std::string> controller;
  std::optional<std::string> model;
  std::optional<std::string> policy;
  std::optional<std::string> out;
  std::optional<double> duration;
};

void add_common(CLI::App * cmd, Overrides & o)
{
  cmd->add_option("--config", o.config, "experiment configuration file");
  cmd->add_option("--seed", o.seed, "seed of this stage");
  cmd->add_option("--regime", o.regime, "plant regime parameter r");
  cmd->add_option("--controller", o.controller, "none, drl or mpc");
  cmd->add_option("--model", o.model, "flow-map model file");
  cmd->add_option("--policy", o.policy, "policy file");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--duration", o.duration, "closed-loop duration");
}

ExperimentConfig resolve(const Overrides & o, const std::string & stage)
{
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  c.mode = stage;
  if (o.out) { c.out = *o.out; }
  if (o.model) { c.model = *o.model; }
  if (o.policy) { c.policy = *o.policy; }
  if (o.controller) { c.controller = *o.controller; }
  if (o.duration) { c.duration = *o.duration; }
  if (o.regime) {
    c.regime = *o.regime;
    c.data.fixed_regime = *o.regime;
    c.validate_regimes = {*o.regime};
  }
  if (o.seed) {
    if (stage == "gen-data") { c.data.master_seed = *o.seed; }
    if (stage == "train-fml") { c.train.seed = *o.seed; }
    if (stage == "validate-open-loop") { c.validate_seed = *o.seed; }
    if (stage == "train-ppo") { c.rl.seed = *o.seed; }
    if (stage == "run-control") { c.control_seed = *o.seed; }
  }
  c.validate();
  fs::create_directories(c.out);
  return c;
}

fs::path model_path(const ExperimentConfig & c) { return c.model.empty() ? c.out / "fml.json" : c.model; }
fs::path policy_path(const ExperimentConfig & c) { return c.policy.empty() ? c.out / "policy.json" : c.policy; }

std::string regime_tag(double r)
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", r);
  return buf;
}

int cmd_spinup(const ExperimentConfig & c)
{
  const SpinupResult s = spinup(make_plant(c.regime), c.t_spin, c.history_length, c.dt);
  const fs::path path = c.out / ("spinup_r" + regime_tag(c.regime) + ".csv");
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << "step,t,c_d,c_l,u\n";
  const auto n = s.samples.size();
  for (std::size_t k = 0; k < n; ++k) {
    const double t = c.t_spin - static_cast<double>(n - 1 - k) * c.dt;
    out << k << ',' << csv::format_double(t) << ',' << csv::format_double(s.samples[k].c_d) << ','
        << csv::format_double(s.samples[k].c_l) << ',' << csv::format_double(s.controls[k]) << '\n';
  }
  std::printf("spinup at r=%g: %zu samples ending at t=%g -> %s\n", c.regime, n, c.t_spin, path.string().c_str());
  return kOk;
}

int cmd_gen_data(const ExperimentConfig & c)
{
  const Dataset ds = generate_dataset(c.data);
  write_dataset(ds, c.dataset_dir());
  std::printf("wrote %zu trajectories of %zu steps (%s regime) to %s\n", ds.trajectories.size(), ds.steps(),
    to_string(ds.mode).c_str(), c.dataset_dir().string().c_str());
  return kOk;
}

int cmd_train_fml(const ExperimentConfig & c)
{
  const Dataset ds = read_dataset(c.dataset_dir());
  TrainConfig tc = c.train;
  if (tc.log_every > 0) {
    tc.on_log = [](long update, double loss) { std::printf("update %ld  loss %.6e\n", update, loss); };
  }
  const TrainResult res = train_flowmap(ds, c.n_memory, c.widths, tc);
  save_model(res.model, model_path(c));
  std::ofstream curve(c.out / "fml_loss.csv");
  curve << "update,loss\n";
  for (std::size_t i = 0; i < res.loss_curve.size(); ++i) {
    curve << i << ',' << csv::format_double(res.loss_curve[i]) << '\n';
  }
  std::printf("trained n_M=%d model, final loss %.4e -> %s\n", c.n_memory,
    res.loss_curve.empty() ? 0.0 : res.loss_curve.back(), model_path(c).string().c_str());
  return kOk;
}

int cmd_validate(const ExperimentConfig & c)
{
  const FlowMapModel model = load_model(model_path(c));
  const auto steps = static_cast<std::size_t>(window_samples(c.validate_time, model.dt));
  const auto start = static_cast<std::size_t>(model.n_memory);
  const auto n_step = start + steps;

  std::ofstream summary(c.out / "open_loop_errors.csv");
  summary << "regime,steps,nrmse_cd,nrmse_cl,rmse_cd,rmse_cl,std_cd,std_cl\n";
  std::printf("%10s  %6s  %10s  %10s\n", "regime", "steps", "nrmse c_d", "nrmse c_l");
  for (std::size_t ri = 0; ri < c.validate_regimes.size(); ++ri) {
    const double r = c.validate_regimes[ri];
    const PlantParams params = make_plant(r);
    std::vector<Trajectory> held;
    for (int j = 0; j < c.validate_trajectories; ++j) {
      const auto seed = derive_seed(c.validate_seed, ri, static_cast<std::uint64_t>(j));
      held.push_back(generate_trajectory(params, random_excitation(n_step, seed),
        static_cast<double>(n_step) * model.dt, model.dt, c.t_spin));
    }
    const OpenLoopErrors e = open_loop_errors(model, held, start, steps);
    summary << csv::format_double(r) << ',' << steps << ',' << csv::format_double(e.normalized_rmse(0)) << ','
            << csv::format_double(e.normalized_rmse(1)) << ',' << csv::format_double(e.rmse(0)) << ','
            << csv::format_double(e.rmse(1)) << ',' << csv::format_double(e.reference_std(0)) << ','
            << csv::format_double(e.reference_std(1)) << '\n';
    std::printf("%10.2f  %6zu  %10.4f  %10.4f\n", r, steps, e.normalized_rmse(0), e.normalized_rmse(1));

    std::ofstream traj(c.out / ("open_loop_r" + regime_tag(r) + ".csv"));
    traj << "traj,step,t,u,c_d_true,c_l_true,c_d_pred,c_l_pred\n";
    for (std::size_t j = 0; j < held.size(); ++j) {
      const Trajectory & tr = held[j];
      const MemoryWindow w = MemoryWindow::from_history(std::span(tr.V).first(start + 1), std::span(tr.u).first(start),
        model.n_memory);
      const auto pred = rollout(model, w, std::span(tr.u).subspan(start, steps));
      for (std::size_t k = 0; k < steps; ++k) {
        const QoiSample & v = tr.V[start + k + 1];
        traj << j << ',' << k + 1 << ',' << csv::format_double(static_cast<double>(k + 1) * model.dt) << ','
             << csv::format_double(tr.u[start + k]) << ',' << csv::format_double(v.c_d) << ','
             << csv::format_double(v.c_l) << ',' << csv::format_double(pred[k].c_d) << ','
             << csv::format_double(pred[k].c_l) << '\n';
      }
    }
  }
  return kOk;
}

int cmd_train_ppo(const ExperimentConfig & c)
{
  const FlowMapModel model = load_model(model_path(c));
  const Dataset ds = read_dataset(c.dataset_dir());
  require(!ds.initial_pool.empty(), ErrorKind::MissingArtifact,
    "dataset " + c.dataset_dir().string() + " has no initial-state pool");
  const PpoResult res = ppo_train(model, ds.initial_pool, c.rl, [](const PpoIterationLog & e) {
    std::printf("iter %3d  mean return %.4f  std %.4f  windowed c_d %.5f\n", e.iteration, e.mean_return, e.std_return,
      e.mean_windowed_cd);
    std::fflush(stdout);
  });
  save_policy(res.policy, policy_path(c));
  write_training_log(res.log, c.out / "ppo_log.csv");
  std::printf("%zu surrogate samples -> %s\n", res.samples, policy_path(c).string().c_str());
  return kOk;
}

int cmd_run_control(const ExperimentConfig & c)
{
  const PlantParams params = make_plant(c.regime);
  std::unique_ptr<Controller> controller;
  MpcController * mpc = nullptr;
  std::vector<MpcTraceRow> trace;
  if (c.controller == "none") {
    controller = std::make_unique<NoController>();
  } else if (c.controller == "drl") {
    auto policy = std::make_shared<const PolicyModel>(load_policy(policy_path(c)));
    controller = std::make_unique<DrlController>(policy, !c.stochastic, c.control_seed);
  } else {
    auto model = std::make_shared<const FlowMapModel>(load_model(model_path(c)));
    auto owned = std::make_unique<MpcController>(std::make_shared<SurrogateHorizon>(model), c.mpc);
    mpc = owned.get();
    controller = std::move(owned);
    if (c.trace) { mpc->record_trace(&trace); }
  }

  ClosedLoopOptions opt;
  opt.duration = c.duration;
  opt.dt = c.dt;
  opt.t_spin = c.t_spin;
  opt.history_length = c.history_length;
  opt.seed = c.control_seed;
  ClosedLoopLog log = run_closed_loop(params, *controller, opt);
  log.config_snapshot = to_text(c);

  const std::string stem = "closed_loop_" + c.controller + "_r" + regime_tag(c.regime) + "_s" + std::to_string(c.control_seed);
  write_log(log, c.out / (stem + ".csv"));
  if (mpc && c.trace) { write_plan_trace(trace, c.out / (stem + "_trace.csv")); }
  std::printf("%s at r=%g: mean windowed c_d %.5f over t > %g -> %s\n", c.controller.c_str(), c.regime,
    mean_windowed_drag(log, c.t_settle), c.t_settle, (c.out / (stem + ".csv")).string().c_str());
  return kOk;
}

int cmd_report(const ExperimentConfig & c)
{
  const auto rows = build_report(collect_logs(c.out), c.t_settle);
  write_report_csv(rows, c.out / "report.csv");
  std::fputs(format_report_table(rows).c_str(), stdout);
  return kOk;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Flow-map surrogate training and closed-loop drag control"};
  app.require_subcommand(1);
  Overrides o;

  struct Stage
  {
    const char * name;
    const char * help;
    int (*run)(const ExperimentConfig &);
  };
  const Stage stages[] = {
    {"spinup", "run the uncontrolled plant to its limit cycle and save the history", cmd_spinup},
    {"gen-data", "generate randomly excited training trajectories", cmd_gen_data},
    {"train-fml", "train the flow-map surrogate", cmd_train_fml},
    {"validate-open-loop", "compare surrogate rollouts with the plant on held-out excitation", cmd_validate},
    {"train-ppo", "train the PPO controller inside the surrogate", cmd_train_ppo},
    {"run-control", "run the plant in closed loop with a controller", cmd_run_control},
    {"report", "summarize closed-loop logs in the output directory", cmd_report},
  };
  std::vector<std::pair<CLI::App *, const Stage *>> commands;
  for (const Stage & s : stages) {
    CLI::App * cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, o);
    commands.emplace_back(cmd, &s);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    const int status = app.exit(e);
    return status == 0 ? kOk : kUsage;
  }

  try {
    for (const auto & [cmd, stage] : commands) {
      if (cmd->parsed()) { return stage->run(resolve(o, stage->name)); }
    }
    fail(ErrorKind::UnknownCommand, "no subcommand given");
  } catch (const Error & e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.kind())).c_str(), e.what());
    return exit_code(e.kind());
  } catch (const std::exception & e) {
    std::fprintf(stderr, "error [unexpected]: %s\n", e.what());
    return kUnexpected;
  }
}
