#include "flowctl/flowmap.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "flowctl/mlp_io.hpp"

namespace flowctl {

namespace {

using Matrix = Eigen::MatrixXd;

void check_control_bound(double u)
{
  if (!(std::abs(u) <= 1.0)) {
    std::ostringstream os;
    os << "control " << u << " outside [-1, 1]";
    fail(ErrorKind::ControlBound, os.str());
  }
}

void check_window(const FlowMapModel & model, const MemoryWindow & window)
{
  if (window.memory() != model.n_memory || window.u.size() != model.n_memory) {
    std::ostringstream os;
    os << "window holds n_M=" << window.memory() << " (" << window.u.size() << " controls), model expects n_M="
       << model.n_memory;
    fail(ErrorKind::Dimension, os.str());
  }
}

/**
 * Batched recurrence over K steps. Rows of `seq` hold normalized observables,
 * two rows per sample index 0..n_M+K (the first n_M+1 given, the rest
 * predicted); rows of `ctl` hold normalized controls with index i applied
 * between samples i and i+1. Columns are batch members.
 */
class Recurrence
{
public:
  Recurrence(const FlowMapModel & model, int steps, Eigen::Index batch)
    : model_(model), n_m_(model.n_memory), steps_(steps),
      seq_(Matrix::Zero(2 * (n_m_ + 1 + steps), batch)), ctl_(Matrix::Zero(n_m_ + steps, batch))
  {}

  Matrix & seq() { return seq_; }
  Matrix & ctl() { return ctl_; }

  auto prediction(int k) { return seq_.middleRows(2 * (n_m_ + 1 + k), 2); }

  void forward()
  {
    caches_.resize(static_cast<std::size_t>(steps_));
    Matrix x(model_.input_width(), seq_.cols());
    for (int k = 0; k < steps_; ++k) {
      gather(k, x);
      prediction(k) = model_.mlp.forward(x, &caches_[static_cast<std::size_t>(k)]);
    }
  }

  /// d_seq: gradient w.r.t. seq rows (prediction rows prefilled with the loss gradient). Consumed in place.
  void backward(Matrix & d_seq, Eigen::VectorXd * grad, Matrix * d_ctl)
  {
    if (d_ctl) { *d_ctl = Matrix::Zero(ctl_.rows(), ctl_.cols()); }
    Matrix d_in;
    for (int k = steps_ - 1; k >= 0; --k) {
      const Matrix d_out = d_seq.middleRows(2 * (n_m_ + 1 + k), 2);
      model_.mlp.backward(caches_[static_cast<std::size_t>(k)], d_out, grad, &d_in);
      for (int j = 0; j <= n_m_; ++j) {
        const int s = n_m_ + k - j;
        d_seq.middleRows(2 * s, 2) += d_in.middleRows(2 * j, 2);
        if (d_ctl) { d_ctl->row(s) += d_in.row(2 * (n_m_ + 1) + j); }
      }
    }
  }

private:
  void gather(int k, Matrix & x) const
  {
    for (int j = 0; j <= n_m_; ++j) {
      const int s = n_m_ + k - j;
      x.middleRows(2 * j, 2) = seq_.middleRows(2 * s, 2);
      x.row(2 * (n_m_ + 1) + j) = ctl_.row(s);
    }
  }

  const FlowMapModel & model_;
  int n_m_;
  int steps_;
  Matrix seq_;
  Matrix ctl_;
  std::vector<Mlp::Cache> caches_;
};

/// Loads one segment into column `c` of a recurrence.
void load_segment(const FlowMapModel & model, const TrainingSegment & seg, Recurrence & rec, Eigen::Index c)
{
  for (std::size_t i = 0; i < seg.window.size(); ++i) {
    rec.seq().block(2 * static_cast<Eigen::Index>(i), c, 2, 1) = model.norm.normalize(seg.window[i]);
  }
  for (std::size_t i = 0; i < seg.controls.size(); ++i) {
    rec.ctl()(static_cast<Eigen::Index>(i), c) = model.norm.normalize_control(seg.controls[i]);
  }
}

void check_segment(const FlowMapModel & model, const TrainingSegment & seg, int n_r)
{
  if (seg.memory() != model.n_memory || seg.horizon() != n_r ||
      seg.controls.size() != static_cast<std::size_t>(model.n_memory + n_r)) {
    std::ostringstream os;
    os << "segment (n_M=" << seg.memory() << ", n_R=" << seg.horizon() << ") does not match model n_M="
       << model.n_memory;
    fail(ErrorKind::Dimension, os.str());
  }
}

}  // namespace

Normalization Normalization::from_dataset(const Dataset & dataset)
{
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  Eigen::Vector3d sq = Eigen::Vector3d::Zero();
  double n_v = 0;
  double n_u = 0;
  for (const auto & t : dataset.trajectories) {
    for (const auto & v : t.V) {
      sum(0) += v.c_d;
      sum(1) += v.c_l;
      n_v += 1;
    }
    for (double u : t.u) {
      sum(2) += u;
      n_u += 1;
    }
  }
  require(n_v > 0 && n_u > 0, ErrorKind::InvalidArgument, "cannot normalize an empty dataset");
  Normalization norm;
  norm.mean << sum(0) / n_v, sum(1) / n_v, sum(2) / n_u;
  for (const auto & t : dataset.trajectories) {
    for (const auto & v : t.V) {
      sq(0) += (v.c_d - norm.mean(0)) * (v.c_d - norm.mean(0));
      sq(1) += (v.c_l - norm.mean(1)) * (v.c_l - norm.mean(1));
    }
    for (double u : t.u) { sq(2) += (u - norm.mean(2)) * (u - norm.mean(2)); }
  }
  norm.std << std::sqrt(sq(0) / n_v), std::sqrt(sq(1) / n_v), std::sqrt(sq(2) / n_u);
  for (int i = 0; i < 3; ++i) {
    if (!(norm.std(i) > 1e-12)) { norm.std(i) = 1.0; }
  }
  return norm;
}

MemoryWindow MemoryWindow::from_history(std::span<const QoiSample> samples, std::span<const double> controls, int n_memory)
{
  require(n_memory >= 0, ErrorKind::InvalidArgument, "memory must be nonnegative");
  const auto n = static_cast<std::size_t>(n_memory);
  if (samples.size() < n + 1 || controls.size() < n) {
    std::ostringstream os;
    os << "history of " << samples.size() << " samples / " << controls.size() << " controls cannot fill n_M="
       << n_memory;
    fail(ErrorKind::InsufficientHistory, os.str());
  }
  MemoryWindow w;
  w.V.resize(2, n_memory + 1);
  const std::size_t v0 = samples.size() - (n + 1);
  for (std::size_t i = 0; i <= n; ++i) { w.V.col(static_cast<Eigen::Index>(i)) = samples[v0 + i].vec(); }
  w.u.resize(n_memory);
  const std::size_t u0 = controls.size() - n;
  for (std::size_t i = 0; i < n; ++i) {
    check_control_bound(controls[u0 + i]);
    w.u(static_cast<Eigen::Index>(i)) = controls[u0 + i];
  }
  return w;
}

MemoryWindow advance_window(const MemoryWindow & window, const QoiSample & v_new, double u_used)
{
  check_control_bound(u_used);
  MemoryWindow out;
  const auto n = window.V.cols();
  out.V.resize(2, n);
  out.V.leftCols(n - 1) = window.V.rightCols(n - 1);
  out.V.col(n - 1) = v_new.vec();
  const auto m = window.u.size();
  out.u.resize(m);
  if (m > 0) {
    out.u.head(m - 1) = window.u.tail(m - 1);
    out.u(m - 1) = u_used;
  }
  return out;
}

void FlowMapModel::validate() const
{
  const auto & w = mlp.widths();
  if (w.size() < 2 || w.front() != input_width() || w.back() != 2) {
    std::ostringstream os;
    os << "flow map widths must run from 3(n_M+1)=" << input_width() << " to 2; got";
    for (int x : w) { os << ' ' << x; }
    fail(ErrorKind::Dimension, os.str());
  }
  require(n_memory >= 0, ErrorKind::Dimension, "memory must be nonnegative");
  require(dt > 0.0, ErrorKind::Dimension, "sample step must be positive");
  require((norm.std.array() > 0.0).all() && norm.std.allFinite() && norm.mean.allFinite(), ErrorKind::Dimension,
    "normalization scales must be positive and finite");
}

Eigen::VectorXd flowmap_input(const FlowMapModel & model, const MemoryWindow & window, double u_n)
{
  check_window(model, window);
  check_control_bound(u_n);
  const int n_m = model.n_memory;
  Eigen::VectorXd x(model.input_width());
  for (int j = 0; j <= n_m; ++j) { x.segment(2 * j, 2) = model.norm.normalize(window.at(j)); }
  x(2 * (n_m + 1)) = model.norm.normalize_control(u_n);
  for (int j = 1; j <= n_m; ++j) { x(2 * (n_m + 1) + j) = model.norm.normalize_control(window.u(n_m - j)); }
  return x;
}

QoiSample flowmap_step(const FlowMapModel & model, const MemoryWindow & window, double u_n)
{
  const Eigen::VectorXd x = flowmap_input(model, window, u_n);
  const Eigen::MatrixXd y = model.mlp.forward(x);
  return model.norm.denormalize(y.col(0));
}

std::vector<QoiSample> rollout(
  const FlowMapModel & model, const MemoryWindow & window, std::span<const double> controls, MemoryWindow & advanced)
{
  std::vector<QoiSample> out;
  out.reserve(controls.size());
  advanced = window;
  for (double u : controls) {
    const QoiSample v = flowmap_step(model, advanced, u);
    advanced = advance_window(advanced, v, u);
    out.push_back(v);
  }
  return out;
}

std::vector<QoiSample> rollout(const FlowMapModel & model, const MemoryWindow & window, std::span<const double> controls)
{
  MemoryWindow scratch;
  return rollout(model, window, controls, scratch);
}

Eigen::VectorXd rollout_pullback(const FlowMapModel & model,
  const MemoryWindow & window,
  std::span<const double> controls,
  const std::function<Eigen::MatrixX2d(const Eigen::MatrixX2d &)> & loss_gradient,
  Eigen::MatrixX2d * predictions)
{
  check_window(model, window);
  const int n_m = model.n_memory;
  const int steps = static_cast<int>(controls.size());
  require(steps >= 1, ErrorKind::InvalidArgument, "rollout needs at least one control");

  Recurrence rec(model, steps, 1);
  for (int i = 0; i <= n_m; ++i) {
    rec.seq().block(2 * i, 0, 2, 1) = model.norm.normalize(QoiSample::from(window.V.col(i)));
  }
  for (int i = 0; i < n_m; ++i) { rec.ctl()(i, 0) = model.norm.normalize_control(window.u(i)); }
  for (int k = 0; k < steps; ++k) {
    const double u = controls[static_cast<std::size_t>(k)];
    check_control_bound(u);
    rec.ctl()(n_m + k, 0) = model.norm.normalize_control(u);
  }
  rec.forward();

  Eigen::MatrixX2d raw(steps, 2);
  for (int k = 0; k < steps; ++k) { raw.row(k) = model.norm.denormalize(rec.prediction(k).col(0)).vec().transpose(); }
  if (predictions) { *predictions = raw; }

  const Eigen::MatrixX2d d_raw = loss_gradient(raw);
  require(d_raw.rows() == steps, ErrorKind::Dimension, "loss gradient has wrong number of rows");
  Matrix d_seq = Matrix::Zero(rec.seq().rows(), 1);
  for (int k = 0; k < steps; ++k) {
    d_seq(2 * (n_m + 1 + k), 0) = d_raw(k, 0) * model.norm.std(0);
    d_seq(2 * (n_m + 1 + k) + 1, 0) = d_raw(k, 1) * model.norm.std(1);
  }
  Matrix d_ctl;
  rec.backward(d_seq, nullptr, &d_ctl);
  return d_ctl.col(0).tail(steps) / model.norm.std(2);
}

double multistep_loss_and_gradient(
  const FlowMapModel & model, std::span<const TrainingSegment> batch, Eigen::VectorXd * grad)
{
  require(!batch.empty(), ErrorKind::InvalidArgument, "empty batch");
  const int n_r = batch.front().horizon();
  const auto count = static_cast<Eigen::Index>(batch.size());
  Recurrence rec(model, n_r, count);
  Matrix targets(2 * n_r, count);
  for (Eigen::Index c = 0; c < count; ++c) {
    const auto & seg = batch[static_cast<std::size_t>(c)];
    check_segment(model, seg, n_r);
    load_segment(model, seg, rec, c);
    for (int k = 0; k < n_r; ++k) {
      targets.block(2 * k, c, 2, 1) = model.norm.normalize(seg.targets[static_cast<std::size_t>(k)]);
    }
  }
  rec.forward();

  const auto pred = rec.seq().bottomRows(2 * n_r);
  const Matrix diff = pred - targets;
  const double loss = diff.squaredNorm() / (static_cast<double>(n_r) * static_cast<double>(count));

  if (grad) {
    *grad = Eigen::VectorXd::Zero(model.mlp.parameter_count());
    Matrix d_seq = Matrix::Zero(rec.seq().rows(), count);
    d_seq.bottomRows(2 * n_r) = (2.0 / (static_cast<double>(n_r) * static_cast<double>(count))) * diff;
    rec.backward(d_seq, grad, nullptr);
  }
  return loss;
}

double multistep_loss(const FlowMapModel & model, const TrainingSegment & segment)
{
  return multistep_loss_and_gradient(model, std::span(&segment, 1), nullptr);
}

TrainResult train_flowmap(
  const Dataset & dataset, int n_memory, const std::vector<int> & widths, const TrainConfig & config)
{
  require(!dataset.trajectories.empty(), ErrorKind::InvalidArgument, "training needs a nonempty dataset");
  require(config.n_recurrent >= 1, ErrorKind::Configuration, "n_R must be at least 1");
  require(config.decay > 0.0 && config.decay <= 1.0, ErrorKind::Configuration, "decay must lie in (0, 1]");
  require(config.batch_size >= 1 && config.epochs >= 0, ErrorKind::Configuration, "bad batch size or epoch count");

  Rng rng(config.seed);
  TrainResult result;
  FlowMapModel & model = result.model;
  model.n_memory = n_memory;
  model.dt = dataset.dt;
  model.norm = Normalization::from_dataset(dataset);
  model.mlp = Mlp::random(widths, rng);
  model.validate();

  const std::size_t n_sim = dataset.trajectories.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t per_traj = config.segments_per_trajectory > 0
                                 ? static_cast<std::size_t>(config.segments_per_trajectory)
                                 : std::max<std::size_t>(1, (batch + n_sim - 1) / n_sim);
  const std::size_t pool_size = n_sim * per_traj;
  require(pool_size >= batch, ErrorKind::Configuration, "N_sim * n_B is smaller than the batch size");

  Adam<double> adam;
  Eigen::VectorXd grad;
  std::vector<TrainingSegment> pool;
  std::size_t cursor = pool_size;
  result.loss_curve.reserve(static_cast<std::size_t>(config.epochs));

  for (long update = 0; update < config.epochs; ++update) {
    if (cursor + batch > pool_size) {
      pool.clear();
      for (const auto & traj : dataset.trajectories) {
        for (std::size_t b = 0; b < per_traj; ++b) {
          pool.push_back(sample_segment(traj, n_memory, config.n_recurrent, rng));
        }
      }
      shuffle(pool.begin(), pool.end(), rng);
      cursor = 0;
    }
    const double loss = multistep_loss_and_gradient(model, std::span(pool).subspan(cursor, batch), &grad);
    cursor += batch;
    if (!std::isfinite(loss) || !grad.allFinite()) {
      std::ostringstream os;
      os << "flow map training diverged at update " << update << " (loss " << loss << ")";
      fail(ErrorKind::Divergence, os.str());
    }
    const double lr = config.learning_rate * std::pow(config.decay, static_cast<double>(update));
    adam.step(model.mlp.parameters(), grad, lr);
    result.loss_curve.push_back(loss);
    if (config.on_log && config.log_every > 0 && (update % config.log_every == 0 || update + 1 == config.epochs)) {
      config.on_log(update, loss);
    }
  }
  return result;
}

OpenLoopErrors open_loop_errors(
  const FlowMapModel & model, std::span<const Trajectory> trajectories, std::size_t start, std::size_t steps)
{
  const auto n_m = static_cast<std::size_t>(model.n_memory);
  require(start >= n_m, ErrorKind::InvalidArgument, "rollout start leaves too little history for the memory");
  Eigen::Vector2d sq = Eigen::Vector2d::Zero();
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  Eigen::Vector2d sum2 = Eigen::Vector2d::Zero();
  OpenLoopErrors out;
  for (const auto & traj : trajectories) {
    require(start + steps <= traj.steps(), ErrorKind::InvalidArgument, "rollout extends past the trajectory");
    const MemoryWindow w = MemoryWindow::from_history(std::span(traj.V).first(start + 1), std::span(traj.u).first(start),
      model.n_memory);
    const auto pred = rollout(model, w, std::span(traj.u).subspan(start, steps));
    for (std::size_t k = 0; k < steps; ++k) {
      const Eigen::Vector2d ref = traj.V[start + 1 + k].vec();
      sq += (pred[k].vec() - ref).cwiseAbs2();
      sum += ref;
      sum2 += ref.cwiseAbs2();
    }
    out.samples += steps;
  }
  const double n = static_cast<double>(out.samples);
  require(n > 0, ErrorKind::InvalidArgument, "no samples to evaluate");
  out.rmse = (sq / n).cwiseSqrt();
  const Eigen::Vector2d mean = sum / n;
  out.reference_std = (sum2 / n - mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
  out.normalized_rmse = out.rmse.cwiseQuotient(out.reference_std);
  return out;
}

double one_step_normalized_rmse(const FlowMapModel & model, std::span<const Trajectory> trajectories)
{
  const int n_m = model.n_memory;
  double sq = 0;
  double count = 0;
  for (const auto & traj : trajectories) {
    const auto n_steps = static_cast<int>(traj.steps());
    if (n_steps <= n_m) { continue; }
    Eigen::MatrixXd x(model.input_width(), n_steps - n_m);
    Eigen::MatrixXd target(2, n_steps - n_m);
    for (int n = n_m; n < n_steps; ++n) {
      const Eigen::Index c = n - n_m;
      for (int j = 0; j <= n_m; ++j) {
        x.block(2 * j, c, 2, 1) = model.norm.normalize(traj.V[static_cast<std::size_t>(n - j)]);
        x(2 * (n_m + 1) + j, c) = model.norm.normalize_control(traj.u[static_cast<std::size_t>(n - j)]);
      }
      target.col(c) = model.norm.normalize(traj.V[static_cast<std::size_t>(n + 1)]);
    }
    const Eigen::MatrixXd y = model.mlp.forward(x);
    sq += (y - target).squaredNorm();
    count += static_cast<double>(2 * y.cols());
  }
  require(count > 0, ErrorKind::InvalidArgument, "no trajectories long enough to evaluate");
  return std::sqrt(sq / count);
}

void save_model(const FlowMapModel & model, const std::filesystem::path & path)
{
  model.validate();
  nlohmann::ordered_json j;
  j["format_version"] = kModelFormatVersion;
  j["n_M"] = model.n_memory;
  j["dt"] = model.dt;
  j["widths"] = model.mlp.widths();
  j["activation"] = "tanh";
  j["norm"] = {{"mean", {model.norm.mean(0), model.norm.mean(1), model.norm.mean(2)}},
    {"std", {model.norm.std(0), model.norm.std(1), model.norm.std(2)}}};
  j["layers"] = mlp_layers_to_json(model.mlp);

  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write model file " + path.string());
  out << j.dump() << '\n';
}

FlowMapModel load_model(const std::filesystem::path & path)
{
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::MissingArtifact, "cannot open model file " + path.string());
  FlowMapModel model;
  try {
    const auto j = nlohmann::json::parse(in);
    const int version = j.at("format_version").get<int>();
    require(version == kModelFormatVersion, ErrorKind::Parse,
      path.string() + ": unsupported model format version " + std::to_string(version));
    require(j.at("activation").get<std::string>() == "tanh", ErrorKind::Parse, path.string() + ": unknown activation");
    model.n_memory = j.at("n_M").get<int>();
    model.dt = j.at("dt").get<double>();
    const auto mean = j.at("norm").at("mean").get<std::vector<double>>();
    const auto sd = j.at("norm").at("std").get<std::vector<double>>();
    require(mean.size() == 3 && sd.size() == 3, ErrorKind::Dimension, path.string() + ": norm needs 3 channels");
    model.norm.mean = Eigen::Vector3d(mean[0], mean[1], mean[2]);
    model.norm.std = Eigen::Vector3d(sd[0], sd[1], sd[2]);
    model.mlp = mlp_from_json(j.at("widths"), j.at("layers"), path.string());
  } catch (const nlohmann::json::exception & e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  model.validate();
  return model;
}

}  // namespace flowctl
