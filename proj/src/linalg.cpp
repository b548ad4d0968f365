#include "ncood/linalg.hpp"

#include <cmath>

namespace ncood::linalg {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

std::vector<double> residual(std::span<const double> v, const Tensor& basis) {
  std::vector<double> r(v.begin(), v.end());
  if (basis.empty()) return r;
  for (std::size_t k = 0; k < basis.rows(); ++k) {
    auto q = basis.row(k);
    const double c = dot(r, q);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= c * q[i];
  }
  return r;
}

Tensor orthonormal_basis(const Tensor& rows, double drop_tol) {
  const std::size_t d = rows.cols();
  std::vector<double> kept;
  std::size_t k = 0;
  for (std::size_t j = 0; j < rows.rows(); ++j) {
    std::vector<double> v(rows.row(j).begin(), rows.row(j).end());
    // Two MGS sweeps ("twice is enough").
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t b = 0; b < k; ++b) {
        std::span<const double> q(kept.data() + b * d, d);
        const double c = dot(v, q);
        for (std::size_t i = 0; i < d; ++i) v[i] -= c * q[i];
      }
    const double n = norm(v);
    if (n < drop_tol) continue;
    for (auto& x : v) kept.push_back(x / n);
    ++k;
  }
  if (k == 0) return {};
  return Tensor({k, d}, std::move(kept));
}

}  // namespace ncood::linalg
