#include "ncood/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "ncood/error.hpp"

namespace ncood {

namespace {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (auto e : shape_)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
  if (shape_size(shape_) != data_.size())
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

std::size_t Tensor::rows() const { return rank() == 2 ? shape_[0] : 1; }
std::size_t Tensor::cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

std::span<const double> Tensor::row(std::size_t r) const {
  return std::span<const double>(data_).subspan(r * cols(), cols());
}

std::span<double> Tensor::row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::select_rows(std::span<const std::size_t> indices) const {
  const std::size_t c = cols();
  std::vector<double> out;
  out.reserve(indices.size() * c);
  for (auto i : indices) {
    if (i >= rows()) throw DimensionError("row index out of range");
    auto r = row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor({indices.size(), c}, std::move(out));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// --- Var / Tape -------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }
Tensor Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

void Tape::check_owner(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) throw ContractError("variable does not belong to this tape");
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> parents, BackwardFn backward) {
  if (consumed_) throw ContractError("cannot record on a tape after backward");
  bool needs = false;
  for (const auto& p : parents) {
    check_owner(p);
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

Tensor Tape::grad(std::size_t id) const {
  const auto& n = nodes_[id];
  if (n.grad.empty()) return Tensor::zeros(n.value.shape());
  return Tensor(n.value.shape(), n.grad);
}

std::span<double> Tape::grad_buffer(Var target) {
  auto& n = nodes_[target.id()];
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::accumulate_grad(Var target, std::span<const double> g) {
  auto buf = grad_buffer(target);
  if (buf.empty()) return;
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var loss) {
  check_owner(loss);
  if (consumed_) throw ContractError("backward called twice on the same tape");
  if (nodes_[loss.id()].value.size() != 1) throw DimensionError("backward requires a scalar loss");
  consumed_ = true;
  auto& root = nodes_[loss.id()];
  if (!root.requires_grad) return;
  root.grad.assign(1, 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    const Tensor g(n.value.shape(), n.grad);
    n.backward(*this, g);
  }
}

// --- operations -------------------------------------------------------------

namespace {

Tape& tape_of(Var a) { return *a.tape(); }

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k)
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A(i, p);
      for (std::size_t j = 0; j < n; ++j) out(i, j) += aip * B(p, j);
    }
  return tape_of(a).record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g(i, j) * B(p, j);
          ga[i * k + p] += s;
        }
    if (auto gb = t.grad_buffer(b); !gb.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A(i, p);
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g(i, j);
        }
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "matmul_nt");
  require_matrix(B, "matmul_nt");
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  if (B.cols() != k)
    throw DimensionError("matmul_nt: inner dimensions disagree " + shape_str(A.shape()) + " x " +
                         shape_str(B.shape()) + "^T");
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += A(i, p) * B(j, p);
      out(i, j) = s;
    }
  return tape_of(a).record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g(i, j);
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * B(j, p);
        }
    if (auto gb = t.grad_buffer(b); !gb.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g(i, j);
          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * A(i, p);
        }
  });
}

Var add_bias(Var a, Var bias) {
  const Tensor& A = a.value();
  const Tensor& b = bias.value();
  require_matrix(A, "add_bias");
  if (b.rank() != 1 || b.size() != A.cols())
    throw DimensionError("add_bias: bias " + shape_str(b.shape()) + " does not match " + shape_str(A.shape()));
  Tensor out = A;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) += b[j];
  return tape_of(a).record(std::move(out), {a, bias}, [a, bias](Tape& t, const Tensor& g) {
    t.accumulate_grad(a, g.data());
    if (auto gb = t.grad_buffer(bias); !gb.empty())
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate_grad(a, g.data());
    t.accumulate_grad(b, g.data());
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate_grad(a, g.data());
    if (auto gb = t.grad_buffer(b); !gb.empty())
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * b.value()[i];
    if (auto gb = t.grad_buffer(b); !gb.empty())
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * a.value()[i];
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  return tape_of(a).record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * g[i];
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    auto ga = t.grad_buffer(a);
    const auto& x = a.value();
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  });
}

Var abs(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::fabs(v);
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    auto ga = t.grad_buffer(a);
    const auto& x = a.value();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (x[i] > 0.0)
        ga[i] += g[i];
      else if (x[i] < 0.0)
        ga[i] -= g[i];
    }
  });
}

Var reciprocal(Var a, double eps) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = 1.0 / (v + eps);
  return tape_of(a).record(std::move(out), {a}, [a, eps](Tape& t, const Tensor& g) {
    auto ga = t.grad_buffer(a);
    const auto& x = a.value();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double d = x[i] + eps;
      ga[i] -= g[i] / (d * d);
    }
  });
}

Var log_softmax(Var logits) {
  const Tensor& X = logits.value();
  if (X.rank() > 2) throw DimensionError("log_softmax: expected rank 1 or 2");
  const std::size_t n = X.rows(), c = X.cols();
  Tensor out = X;
  for (std::size_t i = 0; i < n; ++i) {
    auto r = out.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double v : r) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (auto& v : r) v -= lse;
  }
  Var y = tape_of(logits).record(out, {logits}, [logits, n, c](Tape& t, const Tensor& g) {
    auto gx = t.grad_buffer(logits);
    // The op's output is recomputed from the input to avoid a self-reference.
    const Tensor& X = logits.value();
    for (std::size_t i = 0; i < n; ++i) {
      auto r = X.row(i);
      const double mx = *std::max_element(r.begin(), r.end());
      double s = 0.0;
      for (double v : r) s += std::exp(v - mx);
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += g(i, j);
      for (std::size_t j = 0; j < c; ++j) {
        const double p = std::exp(r[j] - mx) / s;
        gx[i * c + j] += g.data()[i * c + j] - p * gs;
      }
    }
  });
  return y;
}

Var l2_normalize(Var a, std::vector<bool>* degenerate) {
  const Tensor& X = a.value();
  if (X.rank() > 2) throw DimensionError("l2_normalize: expected rank 1 or 2");
  const std::size_t n = X.rows(), d = X.cols();
  Tensor out = X;
  std::vector<double> norms(n);
  if (degenerate) degenerate->assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = out.row(i);
    double s = 0.0;
    for (double v : r) s += v * v;
    const double nrm = std::sqrt(s);
    norms[i] = nrm;
    if (nrm <= kNormEpsilon) {
      std::fill(r.begin(), r.end(), 0.0);
      if (degenerate) (*degenerate)[i] = true;
    } else {
      for (auto& v : r) v /= nrm;
    }
  }
  Tensor y = out;
  return tape_of(a).record(std::move(out), {a}, [a, y = std::move(y), norms = std::move(norms), n, d](
                                                    Tape& t, const Tensor& g) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < n; ++i) {
      if (norms[i] <= kNormEpsilon) continue;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += y.data()[i * d + j] * g.data()[i * d + j];
      for (std::size_t j = 0; j < d; ++j)
        ga[i * d + j] += (g.data()[i * d + j] - y.data()[i * d + j] * dot) / norms[i];
    }
  });
}

Var row_norm(Var a) {
  const Tensor& X = a.value();
  const std::size_t n = X.rows(), d = X.cols();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : X.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
  }
  return tape_of(a).record(Tensor::vector(norms), {a}, [a, norms, d](Tape& t, const Tensor& g) {
    auto ga = t.grad_buffer(a);
    const Tensor& X = a.value();
    for (std::size_t i = 0; i < norms.size(); ++i) {
      if (norms[i] == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += g[i] * X(i, j) / norms[i];
    }
  });
}

Var pairwise_distance(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "pairwise_distance");
  require_matrix(B, "pairwise_distance");
  if (A.cols() != B.cols()) throw DimensionError("pairwise_distance: row widths differ");
  const std::size_t m = A.rows(), c = B.rows(), d = A.cols();
  Tensor out = Tensor::zeros({m, c});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) {
        const double diff = A(i, p) - B(j, p);
        s += diff * diff;
      }
      out(i, j) = std::sqrt(s);
    }
  Tensor dist = out;
  return tape_of(a).record(std::move(out), {a, b}, [a, b, dist = std::move(dist), m, c, d](Tape& t,
                                                                                            const Tensor& g) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    auto ga = t.grad_buffer(a);
    auto gb = t.grad_buffer(b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double dij = dist(i, j);
        if (dij == 0.0) continue;
        const double w = g(i, j) / dij;
        for (std::size_t p = 0; p < d; ++p) {
          const double diff = (A(i, p) - B(j, p)) * w;
          if (!ga.empty()) ga[i * d + p] += diff;
          if (!gb.empty()) gb[j * d + p] -= diff;
        }
      }
  });
}

Var pick(Var a, std::span<const int> index) {
  const Tensor& X = a.value();
  require_matrix(X, "pick");
  if (index.size() != X.rows()) throw DimensionError("pick: index length does not match row count");
  const std::size_t c = X.cols();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= c)
      throw DimensionError("pick: index " + std::to_string(index[i]) + " out of range [0, " + std::to_string(c) +
                           ")");
    out[i] = X(i, static_cast<std::size_t>(index[i]));
  }
  std::vector<int> idx(index.begin(), index.end());
  return tape_of(a).record(Tensor::vector(std::move(out)), {a}, [a, idx = std::move(idx), c](Tape& t,
                                                                                            const Tensor& g) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < idx.size(); ++i) ga[i * c + static_cast<std::size_t>(idx[i])] += g[i];
  });
}

Var gather_rows(Var a, std::span<const int> index) {
  const Tensor& X = a.value();
  require_matrix(X, "gather_rows");
  const std::size_t r = X.rows(), d = X.cols();
  std::vector<std::size_t> rows(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= r)
      throw DimensionError("gather_rows: index " + std::to_string(index[i]) + " out of range [0, " +
                           std::to_string(r) + ")");
    rows[i] = static_cast<std::size_t>(index[i]);
  }
  Tensor out = X.select_rows(rows);
  return tape_of(a).record(std::move(out), {a}, [a, rows = std::move(rows), d](Tape& t, const Tensor& g) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t p = 0; p < d; ++p) ga[rows[i] * d + p] += g(i, p);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return tape_of(a).record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    auto ga = t.grad_buffer(a);
    for (auto& v : ga) v += g[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return tape_of(a).record(Tensor::scalar(s / n), {a}, [a, n](Tape& t, const Tensor& g) {
    auto ga = t.grad_buffer(a);
    for (auto& v : ga) v += g[0] / n;
  });
}

}  // namespace ncood
