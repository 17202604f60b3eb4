#pragma once

/**
 * @file
 * @brief Fully connected tanh network with batched reverse-mode gradients.
 *
 * Parameters live in one contiguous vector, layer by layer: W_i (column-major,
 * out x in) followed by b_i. Gradients use the same layout, so optimizers work
 * on plain vectors.
 */

#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include <Eigen/Core>

#include "flowctl/error.hpp"
#include "flowctl/random.hpp"

namespace flowctl {

template<typename Scalar>
class BasicMlp
{
public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  /// Post-activation values of every layer for one batch; acts[0] is the input.
  struct Cache
  {
    std::vector<Matrix> acts;
  };

  BasicMlp() = default;

  /// Zero-initialized network with the given layer widths (input first, output last).
  explicit BasicMlp(std::vector<int> widths) : widths_(std::move(widths))
  {
    require(widths_.size() >= 2, ErrorKind::Dimension, "an MLP needs at least input and output widths");
    offsets_.push_back(0);
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
      require(widths_[i] >= 1 && widths_[i + 1] >= 1, ErrorKind::Dimension, "layer widths must be positive");
      offsets_.push_back(offsets_.back() + static_cast<Eigen::Index>(widths_[i + 1]) * (widths_[i] + 1));
    }
    params_ = Vector::Zero(offsets_.back());
  }

  /// Uniform initialization on +-sqrt(1 / fan_in) for weights and biases.
  static BasicMlp random(std::vector<int> widths, Rng & rng)
  {
    BasicMlp net(std::move(widths));
    for (int i = 0; i < net.layers(); ++i) {
      const double bound = std::sqrt(1.0 / net.widths_[static_cast<std::size_t>(i)]);
      auto w = net.weight(i);
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        for (Eigen::Index r = 0; r < w.rows(); ++r) { w(r, c) = static_cast<Scalar>(uniform(rng, -bound, bound)); }
      }
      auto b = net.bias(i);
      for (Eigen::Index r = 0; r < b.size(); ++r) { b(r) = static_cast<Scalar>(uniform(rng, -bound, bound)); }
    }
    return net;
  }

  int layers() const { return static_cast<int>(widths_.size()) - 1; }
  int input_width() const { return widths_.front(); }
  int output_width() const { return widths_.back(); }
  const std::vector<int> & widths() const { return widths_; }
  Eigen::Index parameter_count() const { return params_.size(); }

  Vector & parameters() { return params_; }
  const Vector & parameters() const { return params_; }

  Eigen::Map<Matrix> weight(int i) { return {params_.data() + offsets_[idx(i)], rows(i), cols(i)}; }
  Eigen::Map<const Matrix> weight(int i) const { return {params_.data() + offsets_[idx(i)], rows(i), cols(i)}; }
  Eigen::Map<Vector> bias(int i) { return {params_.data() + offsets_[idx(i)] + rows(i) * cols(i), rows(i)}; }
  Eigen::Map<const Vector> bias(int i) const
  {
    return {params_.data() + offsets_[idx(i)] + rows(i) * cols(i), rows(i)};
  }

  /// Views into a gradient vector laid out like parameters().
  Eigen::Map<Matrix> weight_of(Vector & grad, int i) const
  {
    return {grad.data() + offsets_[idx(i)], rows(i), cols(i)};
  }
  Eigen::Map<Vector> bias_of(Vector & grad, int i) const
  {
    return {grad.data() + offsets_[idx(i)] + rows(i) * cols(i), rows(i)};
  }

  /// Batched forward pass; columns are samples. Fills the cache when given.
  template<typename Derived>
  Matrix forward(const Eigen::MatrixBase<Derived> & x, Cache * cache = nullptr) const
  {
    check_input(x.rows());
    if (cache) {
      cache->acts.resize(static_cast<std::size_t>(layers()) + 1);
      cache->acts[0] = x;
    }
    Matrix a = x;
    for (int i = 0; i < layers(); ++i) {
      Matrix z = weight(i) * a;
      z.colwise() += bias(i);
      if (i + 1 < layers()) { z = z.array().tanh().matrix(); }
      a = std::move(z);
      if (cache) { cache->acts[idx(i) + 1] = a; }
    }
    return a;
  }

  /**
   * @brief Reverse pass for the batch recorded in the cache.
   * @param d_out  dLoss/dOutput, output_width x batch
   * @param grad   accumulates dLoss/dParameters when non-null
   * @param d_in   receives dLoss/dInput when non-null
   */
  void backward(const Cache & cache, const Matrix & d_out, Vector * grad, Matrix * d_in) const
  {
    require(cache.acts.size() == static_cast<std::size_t>(layers()) + 1, ErrorKind::Dimension, "stale forward cache");
    if (grad && grad->size() != params_.size()) { *grad = Vector::Zero(params_.size()); }
    Matrix delta = d_out;
    for (int i = layers() - 1; i >= 0; --i) {
      const Matrix & a_in = cache.acts[idx(i)];
      if (grad) {
        weight_of(*grad, i).noalias() += delta * a_in.transpose();
        bias_of(*grad, i) += delta.rowwise().sum();
      }
      if (i > 0) {
        Matrix back = weight(i).transpose() * delta;
        delta = (back.array() * (Scalar(1) - a_in.array().square())).matrix();
      } else if (d_in) {
        d_in->noalias() = weight(0).transpose() * delta;
      }
    }
  }

  template<typename Other>
  BasicMlp<Other> cast() const
  {
    BasicMlp<Other> out(widths_);
    out.parameters() = params_.template cast<Other>();
    return out;
  }

  bool all_finite() const { return params_.allFinite(); }

  friend bool operator==(const BasicMlp & a, const BasicMlp & b)
  {
    return a.widths_ == b.widths_ && a.params_.size() == b.params_.size() &&
           (a.params_.array() == b.params_.array()).all();
  }

private:
  static std::size_t idx(int i) { return static_cast<std::size_t>(i); }
  Eigen::Index rows(int i) const { return widths_[idx(i) + 1]; }
  Eigen::Index cols(int i) const { return widths_[idx(i)]; }

  void check_input(Eigen::Index n) const
  {
    if (widths_.empty() || n != widths_.front()) {
      std::ostringstream os;
      os << "MLP input has " << n << " rows, network expects " << (widths_.empty() ? 0 : widths_.front());
      fail(ErrorKind::Dimension, os.str());
    }
  }

  std::vector<int> widths_;
  std::vector<Eigen::Index> offsets_;
  Vector params_;
};

using Mlp = BasicMlp<double>;
using MlpF = BasicMlp<float>;

/// Adam on a flat parameter vector.
template<typename Scalar>
struct Adam
{
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
  Vector m;
  Vector v;
  long t{0};

  void step(Vector & params, const Vector & grad, double lr)
  {
    if (m.size() != params.size()) {
      m = Vector::Zero(params.size());
      v = Vector::Zero(params.size());
    }
    ++t;
    m = Scalar(beta1) * m + Scalar(1 - beta1) * grad;
    v = Scalar(beta2) * v + Scalar(1 - beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const Scalar step_size = static_cast<Scalar>(lr / c1);
    const Scalar root_c2 = static_cast<Scalar>(std::sqrt(c2));
    params.array() -= step_size * m.array() / (v.array().sqrt() / root_c2 + Scalar(eps));
  }
};

}  // namespace flowctl
