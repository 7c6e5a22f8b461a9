#include "core/tensor.hpp"

#include <cmath>
#include <sstream>

#include "core/error.hpp"

namespace gapkit {

int64_t Tensor::checked_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e < 0) fail(ErrorCode::invalid_argument, "negative extent in shape " + shape_str(shape));
    if (e != 0 && n > (int64_t{1} << 40) / (e == 0 ? 1 : e))
      fail(ErrorCode::overflow, "extent product overflow in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

Tensor::Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(checked_numel(shape)), 0.0f);
}

Tensor::Tensor(std::vector<int64_t> s, std::vector<float> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (checked_numel(shape) != static_cast<int64_t>(data.size()))
    fail(ErrorCode::shape_mismatch,
         "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
}

int64_t Tensor::extent(int axis) const {
  if (axis < 0 || axis >= rank())
    fail(ErrorCode::invalid_argument, "axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  return shape[axis];
}

int64_t Tensor::sample_size() const {
  if (rank() == 0 || shape[0] == 0) return 0;
  return numel() / shape[0];
}

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

bool same_shape(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  return a == b;
}

void check_finite(const Tensor& t, const std::string& what, int layer) {
  for (float v : t.data) {
    if (!std::isfinite(v)) {
      std::string where = layer >= 0 ? " at layer " + std::to_string(layer) : "";
      fail(ErrorCode::numeric, "non-finite value in " + what + where);
    }
  }
}

}  // namespace gapkit
