#pragma once

// JSON encoding shared by the model and policy files: one object per layer
// with W flattened row-major and b as a plain array.

#include <string>

#include <nlohmann/json.hpp>

#include "flowctl/mlp.hpp"

namespace flowctl {

nlohmann::ordered_json mlp_layers_to_json(const Mlp & mlp);

/// Throws Dimension when the layer blocks do not match the widths.
Mlp mlp_from_json(const nlohmann::json & widths, const nlohmann::json & layers, const std::string & where);

}  // namespace flowctl
