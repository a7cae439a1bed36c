#include "poolerc/log_density.hpp"

namespace poolerc {

std::vector<std::string> LogDensity::parameter_names() const {
  std::vector<std::string> names;
  for (Eigen::Index i = 0; i < dimension(); ++i) {
    names.push_back("x[" + std::to_string(i + 1) + "]");
  }
  return names;
}

}  // namespace poolerc
