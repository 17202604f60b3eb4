// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "flowctl/closed_loop.hpp"
#include "flowctl/excitation.hpp"
#include "flowctl/flowmap.hpp"
#include "flowctl/metrics.hpp"
#include "flowctl/mpc.hpp"
#include "flowctl/rl.hpp"

using namespace flowctl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict
{
  bool pass{true};
  std::ostringstream detail;

  void require(bool ok, const std::string & what)
  {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void report(int id, const std::string & title, const Verdict & v)
{
  std::printf("criterion %d %s: %s;%s\n", id, v.pass ? "PASS" : "FAIL", title.c_str(), v.detail.str().c_str());
  std::fflush(stdout);
  failures += v.pass ? 0 : 1;
}

std::string slurp(const fs::path & p)
{
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

bool same_files(const fs::path & a, const fs::path & b)
{
  std::vector<fs::path> names;
  for (const auto & e : fs::directory_iterator(a)) { names.push_back(e.path().filename()); }
  std::size_t count_b = 0;
  for ([[maybe_unused]] const auto & e : fs::directory_iterator(b)) { ++count_b; }
  if (names.size() != count_b || names.empty()) { return false; }
  return std::all_of(names.begin(), names.end(), [&](const fs::path & n) { return slurp(a / n) == slurp(b / n); });
}

// ---------------------------------------------------------------------------
// Shared artifacts

struct TrainedModel
{
  Dataset dataset;
  FlowMapModel model;
  std::vector<double> loss;
  double train_seconds{0};
};

TrainedModel train_desk_model(RegimeMode mode, int n_memory, int hidden)
{
  TrainedModel t;
  DatasetConfig dc;
  dc.mode = mode;
  t.dataset = generate_dataset(dc);
  TrainConfig tc;
  std::vector<int> widths{flowmap_input_width(n_memory), hidden, hidden, hidden, hidden, 2};
  const auto t0 = Clock::now();
  TrainResult r = train_flowmap(t.dataset, n_memory, widths, tc);
  t.train_seconds = seconds_since(t0);
  t.model = std::move(r.model);
  t.loss = std::move(r.loss_curve);
  return t;
}

std::vector<Trajectory> held_out(double regime, std::size_t n_step, std::uint64_t stream)
{
  std::vector<Trajectory> out;
  for (std::uint64_t j = 0; j < 10; ++j) {
    const auto seed = derive_seed(424242, stream, j);
    out.push_back(generate_trajectory(make_plant(regime), random_excitation(n_step, seed), 0.1 * static_cast<double>(n_step)));
  }
  return out;
}

ClosedLoopLog baseline(double regime)
{
  NoController none;
  return run_closed_loop(make_plant(regime), none);
}

/// Forwards to an MPC controller and audits each plan and the plant calls made while planning.
class AuditedMpc final : public Controller
{
public:
  explicit AuditedMpc(MpcController & inner) : inner_(inner) {}
  std::string tag() const override { return inner_.tag(); }
  double act(const ObservedHistory & h) override
  {
    const auto before = plant_call_count();
    const double u = inner_.act(h);
    plant_calls += plant_call_count() - before;
    const MpcPlan & p = inner_.last_plan();
    ++plans;
    for (double c : p.controls) { feasible = feasible && std::abs(c) <= 1.0; }
    monotone = monotone && p.final_objective <= p.initial_objective;
    first_applied = first_applied && u == p.controls.front();
    return u;
  }

  std::uint64_t plant_calls{0};
  std::size_t plans{0};
  bool feasible{true};
  bool monotone{true};
  bool first_applied{true};

private:
  MpcController & inner_;
};

struct MpcRun
{
  double reduction{0};
  double seconds{0};
  std::uint64_t plant_calls{0};
  bool feasible{true};
  bool monotone{true};
  bool first_applied{true};
};

MpcRun surrogate_mpc(const FlowMapModel & model, double regime, const ClosedLoopLog & base)
{
  MpcController mpc(std::make_shared<SurrogateHorizon>(std::make_shared<const FlowMapModel>(model)), MpcConfig{});
  AuditedMpc audited(mpc);
  const auto t0 = Clock::now();
  const ClosedLoopLog log = run_closed_loop(make_plant(regime), audited);
  MpcRun r;
  r.seconds = seconds_since(t0);
  r.reduction = drag_reduction(base, log);
  r.plant_calls = audited.plant_calls;
  r.feasible = audited.feasible;
  r.monotone = audited.monotone;
  r.first_applied = audited.first_applied;
  return r;
}

// ---------------------------------------------------------------------------
// Criterion 1: numerics core

double mlp_gradient_error(Rng & rng)
{
  std::vector<int> widths;
  const int depth = 2 + static_cast<int>(uniform_index(rng, 3));
  for (int i = 0; i <= depth; ++i) { widths.push_back(1 + static_cast<int>(uniform_index(rng, 8))); }
  const Mlp net = Mlp::random(widths, rng);
  Eigen::MatrixXd x(net.input_width(), 4);
  Eigen::MatrixXd c(net.output_width(), 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) { x(i) = uniform(rng, -1, 1); }
  for (Eigen::Index i = 0; i < c.size(); ++i) { c(i) = uniform(rng, -1, 1); }
  const auto f = [&](const Mlp & m) { return (m.forward(x).array() * c.array()).sum(); };

  Mlp::Cache cache;
  net.forward(x, &cache);
  Eigen::VectorXd grad;
  net.backward(cache, c, &grad, nullptr);
  double worst = 0;
  const double h = 1e-5;
  for (Eigen::Index k = 0; k < net.parameter_count(); ++k) {
    Mlp up = net;
    Mlp dn = net;
    up.parameters()(k) += h;
    dn.parameters()(k) -= h;
    const double fd = (f(up) - f(dn)) / (2 * h);
    worst = std::max(worst, std::abs(fd - grad(k)) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

// Scalar loops over the segment, independent of the batched implementation.
double straight_line_loss(const FlowMapModel & m, const TrainingSegment & s)
{
  const int n_m = m.n_memory;
  std::vector<double> cd, cl;
  for (const auto & v : s.window) {
    cd.push_back((v.c_d - m.norm.mean(0)) / m.norm.std(0));
    cl.push_back((v.c_l - m.norm.mean(1)) / m.norm.std(1));
  }
  double loss = 0;
  for (int k = 0; k < s.horizon(); ++k) {
    const int newest = n_m + k;
    std::vector<double> a;
    for (int j = 0; j <= n_m; ++j) {
      a.push_back(cd[static_cast<std::size_t>(newest - j)]);
      a.push_back(cl[static_cast<std::size_t>(newest - j)]);
    }
    for (int j = 0; j <= n_m; ++j) {
      a.push_back((s.controls[static_cast<std::size_t>(newest - j)] - m.norm.mean(2)) / m.norm.std(2));
    }
    for (int l = 0; l < m.mlp.layers(); ++l) {
      const auto w = m.mlp.weight(l);
      const auto b = m.mlp.bias(l);
      std::vector<double> z(static_cast<std::size_t>(w.rows()));
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        double acc = b(i);
        for (Eigen::Index j = 0; j < w.cols(); ++j) { acc += w(i, j) * a[static_cast<std::size_t>(j)]; }
        z[static_cast<std::size_t>(i)] = l + 1 < m.mlp.layers() ? std::tanh(acc) : acc;
      }
      a = z;
    }
    cd.push_back(a[0]);
    cl.push_back(a[1]);
    const double td = (s.targets[static_cast<std::size_t>(k)].c_d - m.norm.mean(0)) / m.norm.std(0);
    const double tl = (s.targets[static_cast<std::size_t>(k)].c_l - m.norm.mean(1)) / m.norm.std(1);
    loss += (a[0] - td) * (a[0] - td) + (a[1] - tl) * (a[1] - tl);
  }
  return loss / s.horizon();
}

void criterion_numerics()
{
  const auto t0 = Clock::now();
  Verdict v;
  Rng rng(1001);

  double grad_err = 0;
  for (int i = 0; i < 20; ++i) { grad_err = std::max(grad_err, mlp_gradient_error(rng)); }
  v.detail << " mlp gradient max rel err " << grad_err;
  v.require(grad_err < 1e-4, "gradient error < 1e-4");

  const Trajectory traj = generate_trajectory(make_plant(300), random_excitation(200, 5), 20.0, 0.1, 30.0);
  double loss_err = 0;
  for (int i = 0; i < 20; ++i) {
    FlowMapModel m;
    m.n_memory = 3 + static_cast<int>(uniform_index(rng, 5));
    m.mlp = Mlp::random({flowmap_input_width(m.n_memory), 16, 16, 2}, rng);
    m.norm.mean << 1.3, 0.0, 0.0;
    m.norm.std << 0.1, 0.8, 0.58;
    const TrainingSegment s = sample_segment(traj, m.n_memory, 3, rng);
    loss_err = std::max(loss_err, std::abs(multistep_loss(m, s) - straight_line_loss(m, s)));
  }
  v.detail << ", multistep loss vs straight-line oracle " << loss_err;
  v.require(loss_err < 1e-12, "loss agreement < 1e-12");

  const PlantParams coarse = make_plant(300);
  PlantParams fine = coarse;
  fine.dt_internal /= 2;
  PlantState a{0.1, 0.0, 0.0};
  PlantState b = a;
  for (int k = 0; k < 100; ++k) {
    const double u = uniform(rng, -1, 1);
    a = plant_step(coarse, a, u, 0.1);
    b = plant_step(fine, b, u, 0.1);
  }
  const double step_err = std::max(std::abs(a.q - b.q), std::abs(a.p - b.p));
  v.detail << ", RK4 halving change at t=10 " << step_err;
  v.require(step_err < 1e-6, "halving change < 1e-6");

  const double secs = seconds_since(t0);
  v.detail << ", " << secs << " s";
  v.require(secs < 60.0, "runtime < 1 min");
  report(1, "numerics core", v);
}

// ---------------------------------------------------------------------------
// Criterion 2: open-loop FML-1

void criterion_fml1(const TrainedModel & t)
{
  Verdict v;
  const auto held = held_out(300.0, 20 + 200, 1);
  const OpenLoopErrors e = open_loop_errors(t.model, held, 20, 200);
  const double one_step = one_step_normalized_rmse(t.model, held);
  v.detail << " 200-step nrmse c_d " << e.normalized_rmse(0) << ", c_l " << e.normalized_rmse(1) << ", one-step nrmse "
           << one_step << ", training " << t.train_seconds << " s (" << t.loss.size() << " updates, final loss "
           << t.loss.back() << ")";
  v.require(e.normalized_rmse(0) < 0.10 && e.normalized_rmse(1) < 0.10, "nrmse < 0.10 per channel");
  v.require(one_step < 0.02, "one-step nrmse < 0.02");
  v.require(t.train_seconds < 1800.0, "training < 30 min");
  report(2, "open-loop FML-1 at r=300", v);
}

// ---------------------------------------------------------------------------
// Criterion 3: open-loop FML-2 with the regime hidden

void criterion_fml2(const TrainedModel & t)
{
  Verdict v;
  v.detail << " training " << t.train_seconds << " s;";
  std::uint64_t stream = 10;
  for (double r : {118.62, 303.10, 444.22}) {
    const auto held = held_out(r, 30 + 20, stream++);
    const OpenLoopErrors e = open_loop_errors(t.model, held, 30, 20);
    v.detail << " r=" << r << ": c_d " << e.normalized_rmse(0) << ", c_l " << e.normalized_rmse(1) << ";";
    v.require(e.normalized_rmse(0) < 0.10 && e.normalized_rmse(1) < 0.10, "nrmse < 0.10 at r=" + std::to_string(r));
  }
  report(3, "open-loop FML-2 over 20 steps", v);
}

// ---------------------------------------------------------------------------
// Criterion 4: oracle MPC ceiling

double criterion_oracle(const ClosedLoopLog & base)
{
  Verdict v;
  auto oracle = std::make_shared<PlantOracleHorizon>(make_plant(300), 0.1);
  MpcController mpc(oracle, MpcConfig{});
  ClosedLoopOptions opt;
  opt.state_tap = [&](const PlantState & s) { oracle->sync(s); };
  const ClosedLoopLog log = run_closed_loop(make_plant(300), mpc, opt);
  const double red = drag_reduction(base, log);
  v.detail << " reduction " << red << "% (baseline windowed c_d " << mean_windowed_drag(base) << ", controlled "
           << mean_windowed_drag(log) << ")";
  v.require(red >= 18.0, "reduction >= 18%");
  report(4, "oracle MPC ceiling at r=300", v);
  return red;
}

// ---------------------------------------------------------------------------
// Criterion 5: FML-MPC at r=300

MpcRun criterion_fml_mpc(const TrainedModel & t, const ClosedLoopLog & base, double ceiling)
{
  Verdict v;
  const MpcRun r = surrogate_mpc(t.model, 300.0, base);
  v.detail << " reduction " << r.reduction << "% vs oracle " << ceiling << "% (ratio " << r.reduction / ceiling
           << "), plant calls while planning " << r.plant_calls << ", " << r.seconds << " s";
  v.require(r.reduction >= 15.0, "reduction >= 15%");
  v.require(r.reduction >= 0.8 * ceiling, "reduction >= 0.8 x oracle");
  v.require(r.plant_calls == 0, "zero plant calls");
  v.require(r.seconds < 600.0, "runtime < 10 min");
  report(5, "FML-MPC at r=300", v);
  return r;
}

// ---------------------------------------------------------------------------
// Criterion 6: FML-DRL at r=300

void criterion_drl(const TrainedModel & t, const ClosedLoopLog & base)
{
  Verdict v;
  RlConfig rc;
  const auto before = plant_call_count();
  const auto t0 = Clock::now();
  const PpoResult res = ppo_train(t.model, t.dataset.initial_pool, rc);
  const double secs = seconds_since(t0);
  const auto calls = plant_call_count() - before;

  DrlController drl(std::make_shared<const PolicyModel>(res.policy));
  const ClosedLoopLog log = run_closed_loop(make_plant(300), drl);
  const double red = drag_reduction(base, log);
  const double first = res.log.front().mean_return;
  const double last = res.log.back().mean_return;
  v.detail << " reduction " << red << "%, mean return " << first << " (iter 1) -> " << last << " (iter "
           << res.log.size() << "), " << res.samples << " surrogate samples, plant calls in training " << calls << ", "
           << secs << " s";
  v.require(red >= 10.0, "reduction >= 10%");
  v.require(last > first, "return improves");
  v.require(calls == 0, "zero plant calls");
  v.require(res.samples == 500u * 200u, "500 x 200 samples");
  report(6, "FML-DRL at r=300", v);
}

// ---------------------------------------------------------------------------
// Criterion 7: FML-2 MPC across regimes

void criterion_generalization(const TrainedModel & t)
{
  Verdict v;
  std::vector<double> red;
  for (double r : {100.0, 300.0, 500.0, 1000.0}) {
    const MpcRun run = surrogate_mpc(t.model, r, baseline(r));
    red.push_back(run.reduction);
    v.detail << " r=" << r << ": " << run.reduction << "%;";
    v.require(run.plant_calls == 0, "zero plant calls");
  }
  v.require(red[0] > 0.0 && red[1] > 0.0 && red[2] > 0.0, "positive reduction at r=100, 300, 500");
  v.require(red[2] >= red[0], "reduction at r=500 >= reduction at r=100");
  v.require(red[3] >= 0.0, "no degradation at r=1000");
  report(7, "FML-2 MPC generalization", v);
}

// ---------------------------------------------------------------------------
// Criterion 8: determinism and round trips

void criterion_determinism(const TrainedModel & fml1)
{
  Verdict v;
  const fs::path root = fs::temp_directory_path() / "flowctl_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  DatasetConfig dc;
  dc.n_sim = 6;
  dc.t_sim = 30.0;
  dc.mode = RegimeMode::Uniform;
  dc.master_seed = 77;
  dc.pool_size = 3;
  const Dataset a = generate_dataset(dc);
  write_dataset(a, root / "a");
  write_dataset(generate_dataset(dc), root / "b");
  v.require(same_files(root / "a", root / "b"), "dataset bytes reproduce");
  const Dataset back = read_dataset(root / "a");
  v.require(back == a, "dataset reads back equal");
  write_dataset(back, root / "c");
  v.require(same_files(root / "a", root / "c"), "dataset rewrite is byte-identical");

  TrainConfig tc;
  tc.epochs = 300;
  tc.batch_size = 128;
  tc.seed = 5;
  const std::vector<int> widths{15, 24, 24, 2};
  const TrainResult m1 = train_flowmap(a, 4, widths, tc);
  const TrainResult m2 = train_flowmap(a, 4, widths, tc);
  save_model(m1.model, root / "m1.json");
  save_model(m2.model, root / "m2.json");
  v.require(slurp(root / "m1.json") == slurp(root / "m2.json"), "model files reproduce");
  v.require(m1.loss_curve == m2.loss_curve, "loss curves reproduce");
  const FlowMapModel loaded = load_model(root / "m1.json");
  v.require(loaded == m1.model, "model reads back equal");
  save_model(loaded, root / "m3.json");
  v.require(slurp(root / "m1.json") == slurp(root / "m3.json"), "model rewrite is byte-identical");

  save_model(fml1.model, root / "fml1.json");
  v.require(load_model(root / "fml1.json") == fml1.model, "FML-1 reads back equal");

  RlConfig rc;
  rc.hidden = 32;
  rc.episodes = 8;
  rc.episodes_per_iteration = 4;
  rc.episode_length = 20;
  const PpoResult p1 = ppo_train(m1.model, a.initial_pool, rc);
  const PpoResult p2 = ppo_train(m1.model, a.initial_pool, rc);
  save_policy(p1.policy, root / "p1.json");
  save_policy(p2.policy, root / "p2.json");
  v.require(slurp(root / "p1.json") == slurp(root / "p2.json"), "policy files reproduce");
  v.require(load_policy(root / "p1.json") == p1.policy, "policy reads back equal");

  v.detail << " dataset, model and policy checks over " << root.string();
  fs::remove_all(root);
  report(8, "determinism and round trips", v);
}

// ---------------------------------------------------------------------------
// Criterion 9: contract suite

void criterion_contracts(const TrainedModel & fml1, const TrainedModel & fml2, const MpcRun & mpc)
{
  Verdict v;
  Rng rng(909);

  const std::vector<double> flat(300, 1.37);
  const auto flat_avg = moving_average(flat, 5.0, 0.1);
  v.require(std::all_of(flat_avg.begin(), flat_avg.end(), [](double x) { return std::abs(x - 1.37) < 1e-14; }),
    "moving average of a constant");
  std::vector<double> ramp(300);
  for (std::size_t k = 0; k < ramp.size(); ++k) { ramp[k] = 0.1 * static_cast<double>(k); }
  const auto ramp_avg = moving_average(ramp, 5.0, 0.1);
  bool lag_ok = true;
  for (std::size_t k = 49; k < ramp.size(); ++k) { lag_ok = lag_ok && std::abs(ramp[k] - ramp_avg[k] - 2.45) < 1e-12; }
  v.require(lag_ok, "ramp lag (T - dt) / 2");
  v.require(moving_average(ramp, 0.1, 0.1) == ramp, "one-sample window is the identity");

  bool fixed_point = true;
  for (int i = 0; i < 1000; ++i) {
    const double u = uniform(rng, -1, 1);
    const double alpha = uniform(rng, 0.01, 1.0);
    fixed_point = fixed_point && std::abs(smooth_control(u, u, alpha) - u) < 1e-15;
  }
  v.require(fixed_point, "smoother fixed point");

  RlState s = env_reset(fml1.dataset.initial_pool, fml1.model.n_memory, rng);
  double reward_err = 0;
  bool shift_ok = true;
  for (int k = 0; k < 200; ++k) {
    const StepResult r = env_step(fml1.model, s, uniform(rng, -1, 1));
    reward_err = std::max(reward_err, std::abs(r.reward + cost_J(r.state.buffer.cd(), r.state.buffer.cl())));
    shift_ok = shift_ok && r.state.window.V.leftCols(20) == s.window.V.rightCols(20) &&
               r.state.window.u.head(19) == s.window.u.tail(19) && r.state.window.last_control() == r.control;
    s = r.state;
  }
  v.require(reward_err < 1e-12, "reward equals -cost_J");
  v.require(shift_ok, "window shift");

  const MemoryWindow w1 = MemoryWindow::from_history(fml1.dataset.initial_pool.front().samples,
    fml1.dataset.initial_pool.front().controls, 20);
  v.require(fml1.model.input_width() == 63 && fml1.model.mlp.input_width() == 63 && fml1.model.mlp.output_width() == 2 &&
              flowmap_input(fml1.model, w1, 0.0).size() == 63,
    "FML-1 maps 63 -> 2");
  v.require(fml2.model.input_width() == 93 && fml2.model.mlp.input_width() == 93 && fml2.model.mlp.output_width() == 2,
    "FML-2 maps 93 -> 2");

  v.require(mpc.feasible, "every MPC plan within [-1, 1]");
  v.require(mpc.monotone, "every MPC plan ends at or below its initial objective");
  v.require(mpc.first_applied, "applied control is the first planned control");
  v.detail << " reward vs -cost_J max err " << reward_err << ", 2000 audited MPC plans";
  report(9, "contract suite", v);
}

}  // namespace

int main()
{
  try {
    criterion_numerics();

    std::printf("training FML-1 (fixed r=300, n_M=20)...\n");
    std::fflush(stdout);
    const TrainedModel fml1 = train_desk_model(RegimeMode::Fixed, 20, 50);
    criterion_fml1(fml1);

    std::printf("training FML-2 (r ~ U(100, 500), n_M=30)...\n");
    std::fflush(stdout);
    const TrainedModel fml2 = train_desk_model(RegimeMode::Uniform, 30, 80);
    criterion_fml2(fml2);

    const ClosedLoopLog base300 = baseline(300.0);
    const double ceiling = criterion_oracle(base300);
    const MpcRun mpc = criterion_fml_mpc(fml1, base300, ceiling);
    criterion_drl(fml1, base300);
    criterion_generalization(fml2);
    criterion_determinism(fml1);
    criterion_contracts(fml1, fml2, mpc);
  } catch (const std::exception & e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
