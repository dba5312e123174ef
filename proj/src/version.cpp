#include "attnflow/version.hpp"

#include <Eigen/Core>
#include <opencv2/core/version.hpp>
#include <openssl/opensslv.h>

namespace attnflow {

std::string version() { return "0.1.0"; }

nlohmann::json build_info() {
  return {
      {"attnflow", version()},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                    "." + std::to_string(EIGEN_MINOR_VERSION)},
      {"opencv", CV_VERSION},
      {"openssl", OPENSSL_VERSION_TEXT},
      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                            std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
      {"compiler", __VERSION__},
  };
}

}  // namespace attnflow
