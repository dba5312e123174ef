#include <cmath>
#include <sstream>

#include "attnflow/error.hpp"
#include "attnflow/param.hpp"
#include "attnflow/rng.hpp"
#include "attnflow/tensor.hpp"

namespace attnflow {

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::metric:
      return 2;
    case ErrorKind::numerical:
      return 3;
    case ErrorKind::io:
    case ErrorKind::input:
      return 4;
  }
  return 1;
}

FeatureMap::FeatureMap(std::size_t channels, std::size_t height, std::size_t width,
                       Real fill)
    : channels_(channels),
      height_(height),
      width_(width),
      data_(channels * height * width, fill) {}

bool FeatureMap::all_finite() const noexcept {
  for (Real v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string FeatureMap::shape_string() const {
  std::ostringstream os;
  os << channels_ << "x" << height_ << "x" << width_;
  return os.str();
}

void require_finite(const FeatureMap& x, const char* where) {
  if (x.empty()) {
    throw InputError(std::string(where) + ": empty feature map");
  }
  if (!x.all_finite()) {
    throw InputError(std::string(where) + ": non-finite value in feature map " +
                     x.shape_string());
  }
}

Param::Param(std::string n, std::vector<std::size_t> s)
    : name(std::move(n)), shape(std::move(s)) {
  std::size_t count = 1;
  for (auto d : shape) count *= d;
  value.assign(count, 0.0);
  grad.assign(count, 0.0);
}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void zero_grads(const ParamList& params) {
  for (auto* p : params) p->zero_grad();
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) {
  return splitmix64(root ^ fnv1a64(tag));
}

}  // namespace attnflow
