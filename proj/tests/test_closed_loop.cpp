#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "flowctl/closed_loop.hpp"
#include "flowctl/report.hpp"

using namespace flowctl;
namespace fs = std::filesystem;

namespace {

// Wraps a controller and records what the plant and the regime parameter saw between calls.
class Probe final : public Controller
{
public:
  explicit Probe(Controller & inner) : inner_(inner) {}
  std::string tag() const override { return inner_.tag(); }
  double act(const ObservedHistory & h) override
  {
    const auto calls = plant_call_count();
    const auto reads = regime_read_count();
    if (last_calls_) { steps_between.push_back(calls - *last_calls_); }
    const double u = inner_.act(h);
    calls_inside += plant_call_count() - calls;
    reads_inside += regime_read_count() - reads;
    history_sizes.push_back(h.V.size());
    last_calls_ = plant_call_count();
    return u;
  }

  std::uint64_t calls_inside{0};
  std::uint64_t reads_inside{0};
  std::vector<std::uint64_t> steps_between;
  std::vector<std::size_t> history_sizes;

private:
  Controller & inner_;
  std::optional<std::uint64_t> last_calls_;
};

ClosedLoopLog constant_log(double cd, std::size_t n)
{
  ClosedLoopLog log;
  log.controller = "none";
  log.regime = 300;
  for (std::size_t k = 0; k < n; ++k) {
    LogRow r;
    r.t = 0.1 * static_cast<double>(k);
    r.c_d = r.cd_win = r.J = cd;
    log.rows.push_back(r);
  }
  return log;
}

std::shared_ptr<FlowMapModel> random_surrogate(int n_m, Rng & rng)
{
  auto m = std::make_shared<FlowMapModel>();
  m->n_memory = n_m;
  m->mlp = Mlp::random({flowmap_input_width(n_m), 8, 2}, rng);
  m->norm.mean << 1.3, 0.0, 0.0;
  m->norm.std << 0.1, 0.8, 0.58;
  return m;
}

}  // namespace

TEST_CASE("uncontrolled loop reproduces the baseline drag")
{
  NoController none;
  const ClosedLoopLog log = run_closed_loop(make_plant(300), none);
  REQUIRE(log.rows.size() == 2000);
  CHECK(log.controller == "none");
  CHECK(log.regime == 300.0);
  CHECK(log.prefix.size() == 59);
  CHECK(mean_windowed_drag(log) == doctest::Approx(1.30).epsilon(0.01));
  for (std::size_t k = 0; k < log.rows.size(); ++k) {
    REQUIRE(log.rows[k].u == 0.0);
    REQUIRE(log.rows[k].t == doctest::Approx(0.1 * static_cast<double>(k)).epsilon(1e-12));
  }

  double lo = 1e300, hi = -1e300, sum = 0;
  int n = 0;
  for (const auto & r : log.rows) {
    if (r.t > 50.0) {
      lo = std::min(lo, r.cd_win);
      hi = std::max(hi, r.cd_win);
      sum += r.cd_win;
      ++n;
    }
  }
  CHECK((hi - lo) / (sum / n) < 0.02);
}

TEST_CASE("windowed columns equal a post hoc moving average of the raw columns")
{
  Rng rng(1);
  ClosedLoopOptions opt;
  opt.duration = 30.0;
  // A random controller exercises nonzero controls.
  class RandomController final : public Controller
  {
  public:
    explicit RandomController(Rng & r) : rng_(r) {}
    std::string tag() const override { return "rand"; }
    double act(const ObservedHistory &) override { return uniform(rng_, -1, 1); }

  private:
    Rng & rng_;
  } random(rng);
  const ClosedLoopLog log = run_closed_loop(make_plant(300), random, opt);

  std::vector<double> cd, cl;
  for (const auto & v : log.prefix) {
    cd.push_back(v.c_d);
    cl.push_back(v.c_l);
  }
  for (const auto & r : log.rows) {
    cd.push_back(r.c_d);
    cl.push_back(r.c_l);
  }
  const auto cd_avg = moving_average(cd, 5.0, 0.1);
  const auto cl_avg = moving_average(cl, 5.0, 0.1);
  const std::size_t off = log.prefix.size();
  for (std::size_t k = 0; k < log.rows.size(); ++k) {
    const LogRow & r = log.rows[k];
    REQUIRE(std::abs(r.cd_win - cd_avg[off + k]) < 1e-12);
    REQUIRE(std::abs(r.cl_win - cl_avg[off + k]) < 1e-12);
    const std::span<const double> wd(cd.data() + off + k - 49, 50);
    const std::span<const double> wl(cl.data() + off + k - 49, 50);
    REQUIRE(std::abs(r.J - cost_J(wd, wl)) < 1e-12);
  }
}

TEST_CASE("controllers see only observations, never the regime, and the plant steps once per control")
{
  Rng rng(2);
  MpcConfig cfg;
  cfg.iterations = 3;
  MpcController mpc(std::make_shared<SurrogateHorizon>(random_surrogate(4, rng)), cfg);
  Probe probe(mpc);
  ClosedLoopOptions opt;
  opt.duration = 5.0;
  const auto reads = regime_read_count();
  const ClosedLoopLog log = run_closed_loop(make_plant(300), probe, opt);
  CHECK(regime_read_count() - reads == 1);
  CHECK(probe.reads_inside == 0);
  CHECK(probe.calls_inside == 0);
  REQUIRE(probe.steps_between.size() == 49);
  for (auto s : probe.steps_between) { CHECK(s == 1); }
  for (std::size_t k = 0; k < probe.history_sizes.size(); ++k) { CHECK(probe.history_sizes[k] == 60 + k); }
  CHECK(log.rows.back().u == mpc.last_plan().controls.front());
  CHECK(log.controller == "mpc");
}

TEST_CASE("MPC controller records a plan trace")
{
  Rng rng(3);
  MpcConfig cfg;
  cfg.iterations = 4;
  MpcController mpc(std::make_shared<SurrogateHorizon>(random_surrogate(2, rng)), cfg);
  std::vector<MpcTraceRow> trace;
  mpc.record_trace(&trace);
  ClosedLoopOptions opt;
  opt.duration = 1.0;
  run_closed_loop(make_plant(300), mpc, opt);
  CHECK(trace.size() == 10 * 5);
  CHECK(trace.back().step == 9);
  CHECK(trace.back().iteration == 4);
}

TEST_CASE("DRL controller smooths against the applied control")
{
  Rng rng(4);
  const auto model = random_surrogate(3, rng);
  RlConfig rc;
  rc.hidden = 8;
  auto policy = std::make_shared<PolicyModel>(make_policy(*model, rc, rng));
  policy->mean.parameters() *= 20.0;
  DrlController drl(policy);
  ClosedLoopOptions opt;
  opt.duration = 3.0;
  const ClosedLoopLog log = run_closed_loop(make_plant(300), drl, opt);

  std::vector<QoiSample> V(log.prefix.begin(), log.prefix.end());
  std::vector<double> u(V.size(), 0.0);
  double prev = 0.0;
  for (const auto & r : log.rows) {
    V.push_back({r.c_d, r.c_l});
    u.push_back(prev);
    RlState s;
    s.window = MemoryWindow::from_history(V, u, 3);
    const double expected = 0.5 * prev + 0.5 * policy_act(*policy, s, true);
    CHECK(r.u == doctest::Approx(expected).epsilon(1e-14));
    prev = r.u;
  }
}

TEST_CASE("drag reduction worked examples")
{
  const ClosedLoopLog base = constant_log(1.3, 2000);
  CHECK(drag_reduction(base, base) == 0.0);
  CHECK(drag_reduction(base, constant_log(1.0, 2000)) == doctest::Approx(23.0769).epsilon(1e-5));
  try {
    drag_reduction(base, constant_log(1.0, 1500));
    FAIL("mismatched grids accepted");
  } catch (const Error & e) {
    CHECK(e.kind() == ErrorKind::InvalidArgument);
  }
  // Only rows with t strictly after the settle time count.
  ClosedLoopLog ctl = constant_log(1.0, 2000);
  for (auto & r : ctl.rows) {
    if (r.t <= 50.0 + 1e-9) { r.cd_win = 5.0; }
  }
  CHECK(drag_reduction(base, ctl) == doctest::Approx(23.0769).epsilon(1e-5));
}

TEST_CASE("log file round trip and report")
{
  const fs::path dir = fs::temp_directory_path() / "flowctl_test_logs";
  fs::remove_all(dir);
  fs::create_directories(dir);
  NoController none;
  ClosedLoopOptions opt;
  opt.duration = 60.0;
  ClosedLoopLog base = run_closed_loop(make_plant(300), none, opt);
  base.config_snapshot = "[experiment]\nversion = 1\n";
  write_log(base, dir / "closed_loop_none_r300_s0.csv");
  const ClosedLoopLog back = read_log(dir / "closed_loop_none_r300_s0.csv");
  CHECK(back == base);

  ClosedLoopLog half = base;
  half.controller = "mpc";
  half.seed = 4;
  for (auto & r : half.rows) { r.cd_win *= 0.5; }
  write_log(half, dir / "closed_loop_mpc_r300_s4.csv");

  const auto rows = build_report(collect_logs(dir));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].controller == "mpc");
  CHECK(rows[0].reduction_pct == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(rows[1].controller == "none");
  CHECK(rows[1].reduction_pct == 0.0);
  CHECK(format_report_table(rows).find("mpc") != std::string::npos);

  fs::remove(dir / "closed_loop_none_r300_s0.csv");
  try {
    build_report(collect_logs(dir));
    FAIL("report without a baseline accepted");
  } catch (const Error & e) {
    CHECK(e.kind() == ErrorKind::MissingArtifact);
  }
  fs::remove_all(dir);
}
