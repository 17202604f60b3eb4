#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "flowctl/csv.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "flowctl_cli_test";

int run(const std::string & args)
{
  const std::string cmd = std::string(FLOWCTL_CLI_PATH) + " " + args + " > " + (kRoot / "last.out").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path & p)
{
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path write_config(const std::string & name, const std::string & body)
{
  const fs::path p = kRoot / name;
  std::ofstream(p) << body;
  return p;
}

const char * kSmall = R"([experiment]
version = 1

[data]
n_sim = 3
t_sim = 10
pool_size = 2

[fml]
n_memory = 2
widths = 9, 8, 2
updates = 20
batch_size = 16

[validate]
trajectories = 2
time = 1
regimes = 118.62, 303.10, 444.22

[ppo]
episodes = 2
episodes_per_iteration = 2
episode_length = 5
hidden = 8
minibatch = 5
update_epochs = 1

[mpc]
iterations = 2

[control]
duration = 60
)";

struct Fixture
{
  Fixture()
  {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
  ~Fixture() { fs::remove_all(kRoot); }
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "gen-data with a fixed seed is byte-identical")
{
  const fs::path cfg = write_config("small.ini", kSmall);
  REQUIRE(run("gen-data --config " + cfg.string() + " --seed 5 --out " + (kRoot / "a").string()) == 0);
  REQUIRE(run("gen-data --config " + cfg.string() + " --seed 5 --out " + (kRoot / "b").string()) == 0);
  REQUIRE(run("gen-data --config " + cfg.string() + " --seed 6 --out " + (kRoot / "c").string()) == 0);
  int files = 0;
  for (const auto & e : fs::directory_iterator(kRoot / "a" / "data")) {
    const fs::path other = kRoot / "b" / "data" / e.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(slurp(e.path()) == slurp(other));
    ++files;
  }
  CHECK(files >= 4);
  CHECK(slurp(kRoot / "a" / "data" / "traj_00000.csv") != slurp(kRoot / "c" / "data" / "traj_00000.csv"));
}

TEST_CASE_FIXTURE(Fixture, "full pipeline on a tiny configuration")
{
  const fs::path cfg = write_config("small.ini", kSmall);
  const std::string out = " --config " + cfg.string() + " --out " + (kRoot / "run").string();
  REQUIRE(run("spinup" + out) == 0);
  CHECK(fs::exists(kRoot / "run" / "spinup_r300.csv"));
  REQUIRE(run("gen-data" + out) == 0);
  REQUIRE(run("train-fml" + out) == 0);
  CHECK(fs::exists(kRoot / "run" / "fml.json"));
  CHECK(fs::exists(kRoot / "run" / "fml_loss.csv"));

  REQUIRE(run("validate-open-loop" + out) == 0);
  std::ifstream errors(kRoot / "run" / "open_loop_errors.csv");
  std::string line;
  std::getline(errors, line);
  CHECK(line == "regime,steps,nrmse_cd,nrmse_cl,rmse_cd,rmse_cl,std_cd,std_cl");
  std::vector<double> regimes;
  while (std::getline(errors, line)) { regimes.push_back(std::stod(std::string(flowctl::csv::split(line).front()))); }
  CHECK(regimes == std::vector<double>{118.62, 303.10, 444.22});

  REQUIRE(run("train-ppo" + out) == 0);
  CHECK(fs::exists(kRoot / "run" / "policy.json"));
  CHECK(fs::exists(kRoot / "run" / "ppo_log.csv"));

  REQUIRE(run("run-control --controller none" + out) == 0);
  REQUIRE(run("report" + out) == 0);
  std::ifstream report(kRoot / "run" / "report.csv");
  std::getline(report, line);
  CHECK(line == "regime,controller,seed,reduction_pct,mean_J");
  std::getline(report, line);
  const auto fields = flowctl::csv::split(line);
  REQUIRE(fields.size() == 5);
  CHECK(fields[1] == "none");
  CHECK(std::stod(std::string(fields[3])) == 0.0);

  REQUIRE(run("run-control --controller mpc --seed 2" + out) == 0);
  REQUIRE(run("run-control --controller drl --seed 3" + out) == 0);
  CHECK(fs::exists(kRoot / "run" / "closed_loop_mpc_r300_s2.csv"));
  CHECK(fs::exists(kRoot / "run" / "closed_loop_drl_r300_s3.json"));
  REQUIRE(run("report" + out) == 0);
  CHECK(slurp(kRoot / "last.out").find("drl") != std::string::npos);
}

TEST_CASE_FIXTURE(Fixture, "error categories map to exit codes")
{
  CHECK(run("frobnicate") == 2);
  CHECK(run("") == 2);
  CHECK(run("report --config " + (kRoot / "missing.ini").string()) == 4);
  const fs::path bad = write_config("bad.ini", "[experiment]\nversion = 1\n[plant]\nregmie = 3\n");
  CHECK(run("spinup --config " + bad.string() + " --out " + kRoot.string()) == 3);
  CHECK(slurp(kRoot / "last.out").find("regmie") != std::string::npos);
  CHECK(run("run-control --controller mpc --model " + (kRoot / "nope.json").string() + " --out " + kRoot.string()) == 4);
  CHECK(run("run-control --controller pid --out " + kRoot.string()) == 3);
  CHECK(run("spinup --regime -4 --out " + kRoot.string()) == 3);
  CHECK(run("report --out " + (kRoot / "empty").string()) == 0);
}
