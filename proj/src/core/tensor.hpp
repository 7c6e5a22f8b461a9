#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gapkit {

// Dense row-major float32 tensor. Reductions and convolutions accumulate
// in float64 and store back to float32.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s);
  Tensor(std::vector<int64_t> s, std::vector<float> d);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t extent(int axis) const;
  bool empty() const { return data.empty(); }

  // Leading-axis slice helpers for batched (N, ...) tensors.
  int64_t sample_size() const;
  const float* sample(int64_t n) const { return data.data() + n * sample_size(); }
  float* sample(int64_t n) { return data.data() + n * sample_size(); }

  static int64_t checked_numel(const std::vector<int64_t>& shape);
};

std::string shape_str(const std::vector<int64_t>& shape);

bool same_shape(const std::vector<int64_t>& a, const std::vector<int64_t>& b);

// Throws ErrorCode::numeric naming `what` (and layer when >= 0) on NaN/Inf.
void check_finite(const Tensor& t, const std::string& what, int layer = -1);

}  // namespace gapkit
