#include "core/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "core/error.hpp"

namespace gapkit {

void gemm_f32(const float* a, const float* b, float* c, int64_t m, int64_t k,
              int64_t n, bool accumulate) {
  std::vector<double> acc(static_cast<size_t>(n));
  for (int64_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* arow = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      const float* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    float* crow = c + i * n;
    if (accumulate)
      for (int64_t j = 0; j < n; ++j) crow[j] = static_cast<float>(crow[j] + acc[j]);
    else
      for (int64_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[j]);
  }
}

void gemm_at_b(const float* a, const float* b, float* c, int64_t k, int64_t m,
               int64_t n, bool accumulate) {
  std::vector<double> acc(static_cast<size_t>(m) * n, 0.0);
  if (accumulate)
    for (int64_t i = 0; i < m * n; ++i) acc[i] = c[i];
  for (int64_t p = 0; p < k; ++p) {
    const float* arow = a + p * m;
    const float* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      double av = arow[i];
      if (av == 0.0) continue;
      double* crow = acc.data() + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  for (int64_t i = 0; i < m * n; ++i) c[i] = static_cast<float>(acc[i]);
}

void gemm_a_bt(const float* a, const float* b, float* c, int64_t m, int64_t k,
               int64_t n, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const float* brow = b + j * k;
      double acc = accumulate ? crow[j] : 0.0;
      for (int64_t p = 0; p < k; ++p) acc += double(arow[p]) * brow[p];
      crow[j] = static_cast<float>(acc);
    }
  }
}

void jacobi_eigh(std::vector<double> a, int n, std::vector<double>& values,
                 std::vector<double>& vectors) {
  if (n <= 0) fail(ErrorCode::invalid_argument, "jacobi_eigh: empty matrix");
  vectors.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) vectors[i * n + i] = 1.0;

  auto off = [&]() {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) s += a[i * n + j] * a[i * n + j];
    return s;
  };

  const int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps && off() > 1e-24; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        double app = a[p * n + p], aqq = a[q * n + q];
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        double cth = 1.0 / std::sqrt(1.0 + t * t);
        double sth = t * cth;
        for (int i = 0; i < n; ++i) {
          double aip = a[i * n + p], aiq = a[i * n + q];
          a[i * n + p] = cth * aip - sth * aiq;
          a[i * n + q] = sth * aip + cth * aiq;
        }
        for (int i = 0; i < n; ++i) {
          double api = a[p * n + i], aqi = a[q * n + i];
          a[p * n + i] = cth * api - sth * aqi;
          a[q * n + i] = sth * api + cth * aqi;
        }
        for (int i = 0; i < n; ++i) {
          double vip = vectors[i * n + p], viq = vectors[i * n + q];
          vectors[i * n + p] = cth * vip - sth * viq;
          vectors[i * n + q] = sth * vip + cth * viq;
        }
      }
    }
  }

  values.resize(n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> diag(n);
  for (int i = 0; i < n; ++i) diag[i] = a[i * n + i];
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return diag[x] > diag[y]; });
  std::vector<double> sorted_vec(vectors.size());
  for (int c = 0; c < n; ++c) {
    values[c] = diag[order[c]];
    for (int r = 0; r < n; ++r) sorted_vec[r * n + c] = vectors[r * n + order[c]];
  }
  vectors.swap(sorted_vec);
}

}  // namespace gapkit
