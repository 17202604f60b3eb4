#include "flowctl/mlp_io.hpp"

#include <vector>

namespace flowctl {

nlohmann::ordered_json mlp_layers_to_json(const Mlp & mlp)
{
  auto layers = nlohmann::ordered_json::array();
  for (int i = 0; i < mlp.layers(); ++i) {
    const auto w = mlp.weight(i);
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) { flat.push_back(w(r, c)); }
    }
    const auto b = mlp.bias(i);
    layers.push_back({{"W", flat}, {"b", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  return layers;
}

Mlp mlp_from_json(const nlohmann::json & widths_json, const nlohmann::json & layers, const std::string & where)
{
  Mlp mlp(widths_json.get<std::vector<int>>());
  require(layers.is_array() && static_cast<int>(layers.size()) == mlp.layers(), ErrorKind::Dimension,
    where + ": layer count does not match widths");
  for (int i = 0; i < mlp.layers(); ++i) {
    const auto & layer = layers.at(static_cast<std::size_t>(i));
    const auto flat = layer.at("W").get<std::vector<double>>();
    const auto bias = layer.at("b").get<std::vector<double>>();
    auto w = mlp.weight(i);
    auto b = mlp.bias(i);
    if (flat.size() != static_cast<std::size_t>(w.size()) || bias.size() != static_cast<std::size_t>(b.size())) {
      fail(ErrorKind::Dimension, where + ": layer " + std::to_string(i) + " has the wrong number of parameters");
    }
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) { w(r, c) = flat[static_cast<std::size_t>(r * w.cols() + c)]; }
    }
    for (Eigen::Index r = 0; r < b.size(); ++r) { b(r) = bias[static_cast<std::size_t>(r)]; }
  }
  return mlp;
}

}  // namespace flowctl
