#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace attnflow {

std::string version();

/// Library versions recorded in run manifests.
nlohmann::json build_info();

}  // namespace attnflow
