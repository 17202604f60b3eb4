#include "flowctl/rl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "flowctl/csv.hpp"
#include "flowctl/mlp_io.hpp"

namespace flowctl {

namespace {

constexpr std::uint64_t kInitStream = 0x706f6c696379ULL;
constexpr std::uint64_t kRolloutStream = 0x726f6c6c6f7574ULL;

double gaussian_log_density(double z, double mu, double log_std)
{
  const double s = (z - mu) * std::exp(-log_std);
  return -0.5 * s * s - log_std - 0.5 * std::log(2.0 * std::numbers::pi);
}

double clip_gradient(Eigen::VectorXd & g, double max_norm)
{
  const double norm = g.norm();
  if (max_norm > 0.0 && norm > max_norm) { g *= max_norm / norm; }
  return norm;
}

struct Stats
{
  double mean{0};
  double std{0};
};

Stats stats_of(const Eigen::VectorXd & x)
{
  Stats s;
  s.mean = x.mean();
  s.std = std::sqrt((x.array() - s.mean).square().mean());
  return s;
}

}  // namespace

Eigen::VectorXd RlState::flatten() const
{
  const int n_m = window.memory();
  Eigen::VectorXd s(policy_input_width(n_m));
  Eigen::Index k = 0;
  for (int age = 0; age <= n_m; ++age) {
    const auto col = window.V.col(n_m - age);
    s(k++) = col(0);
    s(k++) = col(1);
  }
  for (int age = 0; age < n_m; ++age) { s(k++) = window.u(n_m - 1 - age); }
  return s;
}

void RlConfig::validate() const
{
  require(gamma >= 0.0 && gamma < 1.0, ErrorKind::Configuration, "discount factor must lie in [0, 1)");
  require(smoothing > 0.0 && smoothing <= 1.0, ErrorKind::Configuration, "smoothing factor must lie in (0, 1]");
  require(episode_length >= 1, ErrorKind::Configuration, "episode length must be positive");
  require(episodes >= 1 && episodes_per_iteration >= 1, ErrorKind::Configuration, "episode budget must be positive");
  require(clip_ratio > 0.0, ErrorKind::Configuration, "clip ratio must be positive");
  require(gae_lambda >= 0.0 && gae_lambda <= 1.0, ErrorKind::Configuration, "GAE lambda must lie in [0, 1]");
  require(update_epochs >= 1 && minibatch >= 1, ErrorKind::Configuration, "update epochs and minibatch must be positive");
  require(policy_lr >= 0.0 && value_lr >= 0.0, ErrorKind::Configuration, "learning rates must be non-negative");
  require(hidden >= 1, ErrorKind::Configuration, "hidden width must be positive");
  require(std::isfinite(initial_log_std), ErrorKind::Configuration, "initial log-std must be finite");
}

Eigen::VectorXd PolicyModel::features(const RlState & state) const
{
  if (state.window.memory() != n_memory) {
    std::ostringstream os;
    os << "state has n_M=" << state.window.memory() << " (width " << policy_input_width(state.window.memory())
       << "), policy expects width " << input_width();
    fail(ErrorKind::Dimension, os.str());
  }
  Eigen::VectorXd x = state.flatten();
  const Eigen::Index nv = 2 * (n_memory + 1);
  for (Eigen::Index i = 0; i < nv; ++i) { x(i) = (x(i) - norm.mean(i % 2)) / norm.std(i % 2); }
  for (Eigen::Index i = nv; i < x.size(); ++i) { x(i) = norm.normalize_control(x(i)); }
  return x;
}

void PolicyModel::validate() const
{
  require(n_memory >= 0, ErrorKind::Dimension, "policy memory must be non-negative");
  require(mean.layers() >= 1 && mean.input_width() == input_width() && mean.output_width() == 1,
    ErrorKind::Dimension, "policy mean network must map 3 n_M + 2 inputs to one output");
  require(value.layers() >= 1 && value.input_width() == input_width() && value.output_width() == 1,
    ErrorKind::Dimension, "value network must map 3 n_M + 2 inputs to one output");
  require(std::isfinite(log_std), ErrorKind::InvalidArgument, "policy log-std is not finite");
  require(smoothing > 0.0 && smoothing <= 1.0, ErrorKind::InvalidArgument, "policy smoothing must lie in (0, 1]");
  require((norm.std.array() > 0.0).all() && value_scale > 0.0, ErrorKind::InvalidArgument, "non-positive scale");
}

PolicyModel make_policy(const FlowMapModel & model, const RlConfig & config, Rng & rng)
{
  PolicyModel p;
  p.n_memory = model.n_memory;
  p.norm = model.norm;
  p.smoothing = config.smoothing;
  p.log_std = config.initial_log_std;
  const int w = p.input_width();
  p.mean = Mlp::random({w, config.hidden, config.hidden, 1}, rng);
  p.value = Mlp::random({w, config.hidden, config.hidden, 1}, rng);
  const int last = p.mean.layers() - 1;
  p.mean.weight(last) *= 0.01;
  p.mean.bias(last).setZero();
  return p;
}

RlState env_reset(std::span<const InitialHistory> pool, int n_memory, Rng & rng, double window, double dt)
{
  require(!pool.empty(), ErrorKind::InvalidArgument, "initial-state pool is empty");
  const InitialHistory & h = pool[uniform_index(rng, pool.size())];
  const std::vector<double> zeros(h.samples.size(), 0.0);
  RlState s;
  s.window = MemoryWindow::from_history(h.samples, zeros, n_memory);
  const auto w = static_cast<std::size_t>(window_samples(window, dt));
  if (h.samples.size() < w) {
    std::ostringstream os;
    os << "initial history holds " << h.samples.size() << " samples, reward window needs " << w;
    fail(ErrorKind::InsufficientHistory, os.str());
  }
  s.buffer = QoiWindow(w, h.samples);
  return s;
}

double smooth_control(double u_prev, double action, double alpha) { return (1.0 - alpha) * u_prev + alpha * action; }

StepResult env_step(const FlowMapModel & model, const RlState & state, double action, double smoothing, double lift_weight)
{
  if (!(std::abs(action) <= 1.0)) {
    std::ostringstream os;
    os << "action " << action << " outside [-1, 1]";
    fail(ErrorKind::ControlBound, os.str());
  }
  StepResult r;
  r.control = smooth_control(state.window.last_control(), action, smoothing);
  const QoiSample v = flowmap_step(model, state.window, r.control);
  r.state.window = advance_window(state.window, v, r.control);
  r.state.buffer = state.buffer;
  r.state.buffer.push(v);
  r.reward = -r.state.buffer.cost(lift_weight);
  return r;
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma, double bootstrap)
{
  std::vector<double> g(rewards.size());
  double acc = bootstrap;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

std::vector<double> gae_advantages(
  std::span<const double> rewards, std::span<const double> values, double bootstrap, double gamma, double lambda)
{
  require(rewards.size() == values.size(), ErrorKind::Dimension, "rewards and values differ in length");
  std::vector<double> adv(rewards.size());
  double acc = 0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    const double next = i + 1 < values.size() ? values[i + 1] : bootstrap;
    const double delta = rewards[i] + gamma * next - values[i];
    acc = delta + gamma * lambda * acc;
    adv[i] = acc;
  }
  return adv;
}

double policy_act(const PolicyModel & policy, const RlState & state, bool deterministic, Rng * rng)
{
  const Eigen::VectorXd x = policy.features(state);
  const double mu = policy.mean.forward(x)(0, 0);
  if (deterministic) { return std::tanh(mu); }
  require(rng != nullptr, ErrorKind::InvalidArgument, "stochastic action needs a random generator");
  return std::tanh(mu + std::exp(policy.log_std) * standard_normal(*rng));
}

PpoResult ppo_train(const FlowMapModel & model, std::span<const InitialHistory> pool, const RlConfig & config,
  const std::function<void(const PpoIterationLog &)> & on_iteration)
{
  config.validate();
  model.validate();
  require(!pool.empty(), ErrorKind::InvalidArgument, "initial-state pool is empty");

  Rng init_rng(derive_seed(config.seed, kInitStream, 0));
  Rng rng(derive_seed(config.seed, kRolloutStream, 0));

  PpoResult result;
  PolicyModel & policy = result.policy;
  policy = make_policy(model, config, init_rng);

  const int width = policy.input_width();
  const int horizon = config.episode_length;
  const int iterations = (config.episodes + config.episodes_per_iteration - 1) / config.episodes_per_iteration;

  Adam<double> adam_policy;
  Adam<double> adam_value;
  const Eigen::Index n_mean = policy.mean.parameter_count();

  for (int it = 0; it < iterations; ++it) {
    const int n_ep = std::min(config.episodes_per_iteration, config.episodes - it * config.episodes_per_iteration);
    const Eigen::Index n = static_cast<Eigen::Index>(n_ep) * horizon;

    std::vector<RlState> states;
    states.reserve(static_cast<std::size_t>(n_ep));
    for (int e = 0; e < n_ep; ++e) { states.push_back(env_reset(pool, model.n_memory, rng, config.window, model.dt)); }

    Eigen::MatrixXd obs(width, n);
    Eigen::VectorXd z_taken(n), logp_old(n), v_hat(n), rewards(n), cd_win(n);
    const double sigma = std::exp(policy.log_std);

    Eigen::MatrixXd x(width, n_ep);
    for (int t = 0; t < horizon; ++t) {
      for (int e = 0; e < n_ep; ++e) { x.col(e) = policy.features(states[static_cast<std::size_t>(e)]); }
      const Eigen::MatrixXd mu = policy.mean.forward(x);
      const Eigen::MatrixXd vv = policy.value.forward(x);
      for (int e = 0; e < n_ep; ++e) {
        const Eigen::Index i = static_cast<Eigen::Index>(e) * horizon + t;
        const double z = mu(0, e) + sigma * standard_normal(rng);
        StepResult step = env_step(model, states[static_cast<std::size_t>(e)], std::tanh(z), config.smoothing,
          config.lift_weight);
        obs.col(i) = x.col(e);
        z_taken(i) = z;
        logp_old(i) = gaussian_log_density(z, mu(0, e), policy.log_std);
        v_hat(i) = vv(0, e);
        rewards(i) = step.reward;
        cd_win(i) = step.state.buffer.mean_cd();
        states[static_cast<std::size_t>(e)] = std::move(step.state);
      }
    }
    for (int e = 0; e < n_ep; ++e) { x.col(e) = policy.features(states[static_cast<std::size_t>(e)]); }
    const Eigen::MatrixXd v_last = policy.value.forward(x);

    if (!rewards.allFinite()) { fail(ErrorKind::Divergence, "non-finite reward in surrogate rollout"); }
    if (it == 0) {
      policy.value_offset = rewards.mean() / (1.0 - config.gamma);
      policy.value_scale = 1.0;
    }

    Eigen::VectorXd adv(n), targets(n);
    std::vector<double> episode_returns;
    for (int e = 0; e < n_ep; ++e) {
      const Eigen::Index o = static_cast<Eigen::Index>(e) * horizon;
      std::vector<double> r(rewards.data() + o, rewards.data() + o + horizon);
      std::vector<double> v(static_cast<std::size_t>(horizon));
      for (int t = 0; t < horizon; ++t) {
        v[static_cast<std::size_t>(t)] = policy.value_offset + policy.value_scale * v_hat(o + t);
      }
      const double boot = policy.value_offset + policy.value_scale * v_last(0, e);
      const auto a = gae_advantages(r, v, boot, config.gamma, config.gae_lambda);
      for (int t = 0; t < horizon; ++t) {
        adv(o + t) = a[static_cast<std::size_t>(t)];
        targets(o + t) = a[static_cast<std::size_t>(t)] + v[static_cast<std::size_t>(t)];
      }
      episode_returns.push_back(discounted_returns(r, config.gamma).front());
    }
    if (it == 0) { policy.value_scale = std::max(stats_of(targets).std, 1e-6); }

    PpoIterationLog entry;
    entry.iteration = it + 1;
    const Stats ret = stats_of(Eigen::Map<Eigen::VectorXd>(episode_returns.data(), n_ep));
    entry.mean_return = ret.mean;
    entry.std_return = ret.std;
    entry.mean_windowed_cd = cd_win.mean();
    result.log.push_back(entry);
    result.samples += static_cast<std::size_t>(n);

    const Stats as = stats_of(adv);
    adv = (adv.array() - as.mean) / (as.std + 1e-8);
    const Eigen::VectorXd v_target = (targets.array() - policy.value_offset) / policy.value_scale;

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Mlp::Cache mean_cache;
    Mlp::Cache value_cache;
    for (int epoch = 0; epoch < config.update_epochs; ++epoch) {
      shuffle(order.begin(), order.end(), rng);
      for (Eigen::Index start = 0; start < n; start += config.minibatch) {
        const Eigen::Index b = std::min<Eigen::Index>(config.minibatch, n - start);
        Eigen::MatrixXd xb(width, b);
        for (Eigen::Index j = 0; j < b; ++j) { xb.col(j) = obs.col(order[static_cast<std::size_t>(start + j)]); }
        const Eigen::MatrixXd mu = policy.mean.forward(xb, &mean_cache);
        const Eigen::MatrixXd vb = policy.value.forward(xb, &value_cache);

        const double inv_var = std::exp(-2.0 * policy.log_std);
        Eigen::MatrixXd d_mu(1, b), d_v(1, b);
        double d_log_std = -config.entropy_coef;
        double loss = -config.entropy_coef * policy.log_std;
        for (Eigen::Index j = 0; j < b; ++j) {
          const Eigen::Index i = order[static_cast<std::size_t>(start + j)];
          const double diff = z_taken(i) - mu(0, j);
          const double ratio = std::exp(gaussian_log_density(z_taken(i), mu(0, j), policy.log_std) - logp_old(i));
          const double a = adv(i);
          const double clipped = std::clamp(ratio, 1.0 - config.clip_ratio, 1.0 + config.clip_ratio);
          loss -= std::min(ratio * a, clipped * a) / static_cast<double>(b);
          const bool active = !((a > 0 && ratio > 1.0 + config.clip_ratio) || (a < 0 && ratio < 1.0 - config.clip_ratio));
          const double g = active ? -a * ratio / static_cast<double>(b) : 0.0;
          d_mu(0, j) = g * diff * inv_var;
          d_log_std += g * (diff * diff * inv_var - 1.0);
          const double err = vb(0, j) - v_target(i);
          d_v(0, j) = err / static_cast<double>(b);
          loss += 0.5 * err * err / static_cast<double>(b);
        }
        if (!std::isfinite(loss)) {
          std::ostringstream os;
          os << "PPO loss is not finite at iteration " << it + 1 << ", epoch " << epoch + 1;
          fail(ErrorKind::Divergence, os.str());
        }

        Eigen::VectorXd g_mean;
        policy.mean.backward(mean_cache, d_mu, &g_mean, nullptr);
        Eigen::VectorXd g_policy(n_mean + 1);
        g_policy << g_mean, d_log_std;
        clip_gradient(g_policy, config.max_grad_norm);
        Eigen::VectorXd theta(n_mean + 1);
        theta << policy.mean.parameters(), policy.log_std;
        adam_policy.step(theta, g_policy, config.policy_lr);
        policy.mean.parameters() = theta.head(n_mean);
        policy.log_std = theta(n_mean);

        Eigen::VectorXd g_value;
        policy.value.backward(value_cache, d_v, &g_value, nullptr);
        clip_gradient(g_value, config.max_grad_norm);
        adam_value.step(policy.value.parameters(), g_value, config.value_lr);
      }
    }
    if (!policy.mean.all_finite() || !policy.value.all_finite() || !std::isfinite(policy.log_std)) {
      std::ostringstream os;
      os << "policy parameters became non-finite at iteration " << it + 1;
      fail(ErrorKind::Divergence, os.str());
    }
    if (on_iteration) { on_iteration(entry); }
  }
  return result;
}

double evaluate_return(const FlowMapModel & model, std::span<const InitialHistory> pool, const PolicyModel * policy,
  const RlConfig & config)
{
  require(!pool.empty(), ErrorKind::InvalidArgument, "initial-state pool is empty");
  double total = 0;
  for (std::size_t k = 0; k < pool.size(); ++k) {
    RlState s;
    const std::vector<double> zeros(pool[k].samples.size(), 0.0);
    s.window = MemoryWindow::from_history(pool[k].samples, zeros, model.n_memory);
    s.buffer = QoiWindow(static_cast<std::size_t>(window_samples(config.window, model.dt)), pool[k].samples);
    std::vector<double> rewards;
    for (int t = 0; t < config.episode_length; ++t) {
      const double a = policy ? policy_act(*policy, s, true) : 0.0;
      StepResult step = env_step(model, s, a, config.smoothing, config.lift_weight);
      rewards.push_back(step.reward);
      s = std::move(step.state);
    }
    total += discounted_returns(rewards, config.gamma).front();
  }
  return total / static_cast<double>(pool.size());
}

void write_training_log(const std::vector<PpoIterationLog> & log, const std::filesystem::path & path)
{
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write training log " + path.string());
  out << "iter,mean_return,std_return,mean_windowed_cd\n";
  for (const auto & e : log) {
    out << e.iteration << ',' << csv::format_double(e.mean_return) << ',' << csv::format_double(e.std_return) << ','
        << csv::format_double(e.mean_windowed_cd) << '\n';
  }
}

void save_policy(const PolicyModel & policy, const std::filesystem::path & path)
{
  policy.validate();
  nlohmann::ordered_json j;
  j["format_version"] = kPolicyFormatVersion;
  j["n_M"] = policy.n_memory;
  j["input_width"] = policy.input_width();
  j["activation"] = "tanh";
  j["squash"] = "tanh";
  j["smoothing"] = policy.smoothing;
  j["log_std"] = policy.log_std;
  j["norm"] = {{"mean", {policy.norm.mean(0), policy.norm.mean(1), policy.norm.mean(2)}},
    {"std", {policy.norm.std(0), policy.norm.std(1), policy.norm.std(2)}}};
  j["mean"] = {{"widths", policy.mean.widths()}, {"layers", mlp_layers_to_json(policy.mean)}};
  j["value"] = {{"widths", policy.value.widths()}, {"layers", mlp_layers_to_json(policy.value)},
    {"offset", policy.value_offset}, {"scale", policy.value_scale}};

  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write policy file " + path.string());
  out << j.dump() << '\n';
}

PolicyModel load_policy(const std::filesystem::path & path)
{
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingArtifact, "cannot open policy file " + path.string());
  PolicyModel p;
  try {
    const auto j = nlohmann::json::parse(in);
    const int version = j.at("format_version").get<int>();
    require(version == kPolicyFormatVersion, ErrorKind::Parse,
      path.string() + ": unsupported policy format version " + std::to_string(version));
    require(j.at("activation").get<std::string>() == "tanh" && j.at("squash").get<std::string>() == "tanh",
      ErrorKind::Parse, path.string() + ": unknown activation or squashing");
    p.n_memory = j.at("n_M").get<int>();
    p.smoothing = j.at("smoothing").get<double>();
    p.log_std = j.at("log_std").get<double>();
    const auto mean = j.at("norm").at("mean").get<std::vector<double>>();
    const auto sd = j.at("norm").at("std").get<std::vector<double>>();
    require(mean.size() == 3 && sd.size() == 3, ErrorKind::Dimension, path.string() + ": norm needs 3 channels");
    p.norm.mean = Eigen::Vector3d(mean[0], mean[1], mean[2]);
    p.norm.std = Eigen::Vector3d(sd[0], sd[1], sd[2]);
    p.mean = mlp_from_json(j.at("mean").at("widths"), j.at("mean").at("layers"), path.string() + " (mean)");
    p.value = mlp_from_json(j.at("value").at("widths"), j.at("value").at("layers"), path.string() + " (value)");
    p.value_offset = j.at("value").at("offset").get<double>();
    p.value_scale = j.at("value").at("scale").get<double>();
    require(j.at("input_width").get<int>() == p.input_width(), ErrorKind::Dimension,
      path.string() + ": input width disagrees with n_M");
  } catch (const nlohmann::json::exception & e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  p.validate();
  return p;
}

}  // namespace flowctl
