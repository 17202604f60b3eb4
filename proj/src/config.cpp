#include "flowctl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "flowctl/csv.hpp"

namespace flowctl {

namespace {

struct Entry
{
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string &)> set;
};

[[noreturn]] void bad_value(const std::string & key, const std::string & value, const char * expected)
{
  fail(ErrorKind::Configuration, "key '" + key + "': '" + value + "' is not " + expected);
}

template<typename T>
T parse_number(const std::string & key, const std::string & text)
{
  const std::string_view s = csv::trim(text);
  T x{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) { bad_value(key, text, "a number"); }
  return x;
}

bool parse_bool(const std::string & key, const std::string & text)
{
  const std::string_view s = csv::trim(text);
  if (s == "true" || s == "1" || s == "yes") { return true; }
  if (s == "false" || s == "0" || s == "no") { return false; }
  bad_value(key, text, "a boolean");
}

template<typename T>
std::vector<T> parse_list(const std::string & key, const std::string & text)
{
  std::vector<T> out;
  for (auto field : csv::split(text)) { out.push_back(parse_number<T>(key, std::string(field))); }
  return out;
}

std::string format(double x) { return csv::format_double(x); }
template<typename T>
std::string format(T x) requires std::is_integral_v<T>
{
  return std::to_string(x);
}

template<typename T>
std::string format_list(const std::vector<T> & v)
{
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) { s += (i ? "," : "") + format(v[i]); }
  return s;
}

class Table
{
public:
  template<typename T>
  void number(const char * section, const char * key, T & field)
  {
    const std::string name = std::string(section) + "." + key;
    entries_.push_back({section, key, [&field] { return format(field); },
      [&field, name](const std::string & v) { field = parse_number<T>(name, v); }});
  }
  void flag(const char * section, const char * key, bool & field)
  {
    const std::string name = std::string(section) + "." + key;
    entries_.push_back({section, key, [&field] { return std::string(field ? "true" : "false"); },
      [&field, name](const std::string & v) { field = parse_bool(name, v); }});
  }
  void text(const char * section, const char * key, std::string & field)
  {
    entries_.push_back({section, key, [&field] { return field; },
      [&field](const std::string & v) { field = std::string(csv::trim(v)); }});
  }
  void path(const char * section, const char * key, std::filesystem::path & field)
  {
    entries_.push_back({section, key, [&field] { return field.string(); },
      [&field](const std::string & v) { field = std::string(csv::trim(v)); }});
  }
  template<typename T>
  void list(const char * section, const char * key, std::vector<T> & field)
  {
    const std::string name = std::string(section) + "." + key;
    entries_.push_back({section, key, [&field] { return format_list(field); },
      [&field, name](const std::string & v) { field = parse_list<T>(name, v); }});
  }
  template<typename F, typename G>
  void custom(const char * section, const char * key, F get, G set)
  {
    entries_.push_back({section, key, get, set});
  }

  const std::vector<Entry> & entries() const { return entries_; }

private:
  std::vector<Entry> entries_;
};

Table table_for(ExperimentConfig & c)
{
  Table t;
  t.number("experiment", "version", c.version);
  t.text("experiment", "mode", c.mode);
  t.path("experiment", "out", c.out);

  t.number("plant", "regime", c.regime);
  t.number("plant", "dt", c.dt);
  t.number("plant", "t_spin", c.t_spin);
  t.number("plant", "history_length", c.history_length);

  t.path("data", "dir", c.data_dir);
  t.number("data", "n_sim", c.data.n_sim);
  t.number("data", "t_sim", c.data.t_sim);
  t.custom("data", "regime_mode", [&c] { return to_string(c.data.mode); },
    [&c](const std::string & v) {
      try {
        c.data.mode = regime_mode_from_string(std::string(csv::trim(v)));
      } catch (const Error &) {
        bad_value("data.regime_mode", v, "'fixed' or 'uniform'");
      }
    });
  t.number("data", "fixed_regime", c.data.fixed_regime);
  t.number("data", "regime_lo", c.data.regime_lo);
  t.number("data", "regime_hi", c.data.regime_hi);
  t.number("data", "pool_size", c.data.pool_size);
  t.number("data", "seed", c.data.master_seed);

  t.number("fml", "n_memory", c.n_memory);
  t.list("fml", "widths", c.widths);
  t.number("fml", "n_recurrent", c.train.n_recurrent);
  t.number("fml", "updates", c.train.epochs);
  t.number("fml", "batch_size", c.train.batch_size);
  t.number("fml", "learning_rate", c.train.learning_rate);
  t.number("fml", "decay", c.train.decay);
  t.number("fml", "segments_per_trajectory", c.train.segments_per_trajectory);
  t.number("fml", "seed", c.train.seed);
  t.number("fml", "log_every", c.train.log_every);

  t.number("validate", "trajectories", c.validate_trajectories);
  t.number("validate", "time", c.validate_time);
  t.list("validate", "regimes", c.validate_regimes);
  t.number("validate", "seed", c.validate_seed);

  t.number("ppo", "gamma", c.rl.gamma);
  t.number("ppo", "episode_length", c.rl.episode_length);
  t.number("ppo", "smoothing", c.rl.smoothing);
  t.number("ppo", "episodes", c.rl.episodes);
  t.number("ppo", "episodes_per_iteration", c.rl.episodes_per_iteration);
  t.number("ppo", "clip_ratio", c.rl.clip_ratio);
  t.number("ppo", "gae_lambda", c.rl.gae_lambda);
  t.number("ppo", "update_epochs", c.rl.update_epochs);
  t.number("ppo", "minibatch", c.rl.minibatch);
  t.number("ppo", "policy_lr", c.rl.policy_lr);
  t.number("ppo", "value_lr", c.rl.value_lr);
  t.number("ppo", "entropy_coef", c.rl.entropy_coef);
  t.number("ppo", "max_grad_norm", c.rl.max_grad_norm);
  t.number("ppo", "initial_log_std", c.rl.initial_log_std);
  t.number("ppo", "hidden", c.rl.hidden);
  t.number("ppo", "seed", c.rl.seed);

  t.number("mpc", "horizon", c.mpc.horizon);
  t.number("mpc", "iterations", c.mpc.iterations);
  t.number("mpc", "step_size", c.mpc.step_size);
  t.flag("mpc", "warm_start", c.mpc.warm_start);

  t.text("control", "controller", c.controller);
  t.number("control", "duration", c.duration);
  t.number("control", "t_settle", c.t_settle);
  t.path("control", "model", c.model);
  t.path("control", "policy", c.policy);
  t.flag("control", "stochastic", c.stochastic);
  t.number("control", "seed", c.control_seed);
  t.flag("control", "trace", c.trace);
  return t;
}

/// Settings shared across sections follow the [plant] values.
void propagate(ExperimentConfig & c)
{
  c.data.dt = c.dt;
  c.data.t_spin = c.t_spin;
  c.data.history_length = c.history_length;
  c.mpc.dt = c.dt;
}

}  // namespace

std::filesystem::path ExperimentConfig::dataset_dir() const { return data_dir.empty() ? out / "data" : data_dir; }

void ExperimentConfig::validate() const
{
  require(version == kConfigVersion, ErrorKind::Configuration,
    "unsupported config version " + std::to_string(version) + " (expected " + std::to_string(kConfigVersion) + ")");
  require(regime > 0.0, ErrorKind::Configuration, "plant.regime must be positive");
  require(dt > 0.0 && t_spin > 0.0 && history_length >= 1, ErrorKind::Configuration, "invalid plant timing");
  require(n_memory >= 0, ErrorKind::Configuration, "fml.n_memory must be non-negative");
  require(widths.size() >= 2 && widths.front() == flowmap_input_width(n_memory) && widths.back() == 2,
    ErrorKind::Configuration,
    "fml.widths must run from 3(n_memory + 1) = " + std::to_string(flowmap_input_width(n_memory)) + " to 2");
  require(controller == "none" || controller == "drl" || controller == "mpc", ErrorKind::Configuration,
    "control.controller must be none, drl or mpc, got '" + controller + "'");
  require(duration > 0.0 && t_settle >= 0.0 && t_settle < duration, ErrorKind::Configuration,
    "control.t_settle must lie in [0, duration)");
  require(mpc.horizon >= 1 && mpc.iterations >= 1, ErrorKind::Configuration, "mpc.horizon and mpc.iterations must be >= 1");
  require(validate_trajectories >= 1 && validate_time > 0.0 && !validate_regimes.empty(), ErrorKind::Configuration,
    "invalid [validate] settings");
  rl.validate();
}

ExperimentConfig parse_config(std::istream & in, const std::string & where)
{
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error & e) {
    fail(ErrorKind::Configuration, where + ":" + std::to_string(e.line()) + ": " + e.message());
  }

  ExperimentConfig c;
  const Table table = table_for(c);
  bool has_version = false;
  for (const auto & [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      fail(ErrorKind::Configuration, where + ": key '" + section + "' outside of a [section]");
    }
    for (const auto & [key, value] : body) {
      const Entry * match = nullptr;
      for (const auto & e : table.entries()) {
        if (e.section == section && e.key == key) { match = &e; }
      }
      if (!match) { fail(ErrorKind::Configuration, where + ": unknown key '" + key + "' in [" + section + "]"); }
      try {
        match->set(value.data());
      } catch (const Error & e) {
        fail(ErrorKind::Configuration, where + ": " + e.what());
      }
      has_version = has_version || (section == "experiment" && key == "version");
    }
  }
  require(has_version, ErrorKind::Configuration, where + ": [experiment] version is required");
  propagate(c);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path & path)
{
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingArtifact, "cannot open config file " + path.string());
  return parse_config(in, path.string());
}

std::string to_text(const ExperimentConfig & config)
{
  ExperimentConfig copy = config;
  const Table table = table_for(copy);
  std::ostringstream os;
  std::string section;
  for (const auto & e : table.entries()) {
    if (e.section != section) {
      os << (section.empty() ? "" : "\n") << '[' << e.section << "]\n";
      section = e.section;
    }
    os << e.key << " = " << e.get() << '\n';
  }
  return os.str();
}

}  // namespace flowctl
