#include "flowctl/metrics.hpp"

#include <cmath>
#include <sstream>

namespace flowctl {

int window_samples(double window, double dt)
{
  require(window > 0.0 && dt > 0.0, ErrorKind::Configuration, "window and sample step must be positive");
  const double ratio = window / dt;
  const double n = std::round(ratio);
  if (n < 1.0 || std::abs(ratio - n) > 1e-9 * ratio) {
    std::ostringstream os;
    os << "averaging window " << window << " is not a multiple of dt=" << dt;
    fail(ErrorKind::Configuration, os.str());
  }
  return static_cast<int>(n);
}

double mean_of(std::span<const double> values)
{
  require(!values.empty(), ErrorKind::InvalidArgument, "mean of an empty window");
  double s = 0;
  for (double v : values) { s += v; }
  return s / static_cast<double>(values.size());
}

std::vector<double> moving_average(std::span<const double> series, double window, double dt)
{
  require(!series.empty(), ErrorKind::InvalidArgument, "moving average of an empty series");
  const auto w = static_cast<std::size_t>(window_samples(window, dt));
  std::vector<double> out(series.size());
  for (std::size_t k = 0; k < series.size(); ++k) {
    const std::size_t len = std::min(k + 1, w);
    out[k] = mean_of(series.subspan(k + 1 - len, len));
  }
  return out;
}

double cost_J(std::span<const double> cd_window, std::span<const double> cl_window, double lift_weight)
{
  require(cd_window.size() == cl_window.size(), ErrorKind::InvalidArgument, "drag and lift windows differ in length");
  return mean_of(cd_window) + lift_weight * std::abs(mean_of(cl_window));
}

QoiWindow::QoiWindow(std::size_t capacity, std::span<const QoiSample> history) : capacity_(capacity)
{
  const std::size_t first = history.size() > capacity ? history.size() - capacity : 0;
  for (std::size_t i = first; i < history.size(); ++i) { push(history[i]); }
}

void QoiWindow::push(const QoiSample & v)
{
  require(capacity_ > 0, ErrorKind::InvalidArgument, "window has zero capacity");
  cd_.push_back(v.c_d);
  cl_.push_back(v.c_l);
  if (cd_.size() > capacity_) {
    cd_.pop_front();
    cl_.pop_front();
  }
}

double QoiWindow::mean_cd() const
{
  require(!cd_.empty(), ErrorKind::InvalidArgument, "mean of an empty window");
  double s = 0;
  for (double v : cd_) { s += v; }
  return s / static_cast<double>(cd_.size());
}

double QoiWindow::mean_cl() const
{
  require(!cl_.empty(), ErrorKind::InvalidArgument, "mean of an empty window");
  double s = 0;
  for (double v : cl_) { s += v; }
  return s / static_cast<double>(cl_.size());
}

double QoiWindow::cost(double lift_weight) const { return mean_cd() + lift_weight * std::abs(mean_cl()); }

}  // namespace flowctl
