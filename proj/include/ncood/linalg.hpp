#pragma once

#include <span>
#include <vector>

#include "ncood/tensor.hpp"

namespace ncood::linalg {

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

// Orthonormal basis for the row span of `rows` by modified Gram-Schmidt with
// one re-orthogonalization pass. Directions whose residual norm falls below
// `drop_tol` are discarded, so the result has rank(rows) rows (possibly zero,
// in which case the returned tensor is empty).
Tensor orthonormal_basis(const Tensor& rows, double drop_tol = 1e-10);

// v minus its orthogonal projection onto the row span of an orthonormal basis.
std::vector<double> residual(std::span<const double> v, const Tensor& basis);

}  // namespace ncood::linalg
