#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "attnflow/tensor.hpp"

namespace attnflow {

/// A named trainable tensor together with its gradient accumulator.
struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<Real> value;
  std::vector<Real> grad;

  Param() = default;
  Param(std::string n, std::vector<std::size_t> s);

  std::size_t numel() const noexcept { return value.size(); }
  void zero_grad();
};

using ParamList = std::vector<Param*>;
using ConstParamList = std::vector<const Param*>;

void zero_grads(const ParamList& params);

}  // namespace attnflow
