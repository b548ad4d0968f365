#include "ncood/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ncood/error.hpp"
#include "ncood/losses.hpp"
#include "ncood/model.hpp"
#include "ncood/rng.hpp"

namespace ncood {

namespace {

double evaluate(const LossBuilder& build, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t, false));
  return build(tape, leaves).value().item();
}

}  // namespace

GradCheckResult check_gradients(const LossBuilder& build, const std::vector<Tensor>& inputs, double step,
                                bool flip_analytic_sign) {
  GradCheckResult result;
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
    Var loss = build(tape, leaves);
    tape.backward(loss);
    for (const auto& l : leaves) analytic.push_back(l.grad());
    ++result.evaluations;
  }

  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x = inputs[k][i];
      probe[k][i] = x + step;
      const double up = evaluate(build, probe);
      probe[k][i] = x - step;
      const double down = evaluate(build, probe);
      probe[k][i] = x;
      result.evaluations += 2;
      const double numeric = (up - down) / (2.0 * step);
      const double a = flip_analytic_sign ? -analytic[k][i] : analytic[k][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double denom = std::sqrt(std::max(a2, n2));
    const double err = denom == 0.0 ? 0.0 : std::sqrt(diff2) / denom;
    result.max_rel_error = std::max(result.max_rel_error, err);
  }
  return result;
}

// --- suite ----------------------------------------------------------------------

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

// Entries pushed at least `gap` away from zero, keeping kinks out of reach of
// the finite-difference stencil.
Tensor away_from_zero(Shape shape, Rng& rng, double gap) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (auto& v : t.data()) v = std::copysign(gap + std::fabs(v), v);
  return t;
}

std::vector<int> random_labels(std::size_t n, std::size_t c, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(c));
  return y;
}

double min_abs_cosine(const Tensor& z, const Tensor& w) {
  Tape tape;
  Var s = matmul_nt(l2_normalize(tape.constant(z)), l2_normalize(tape.constant(w)));
  double m = std::numeric_limits<double>::infinity();
  for (double v : s.value().data()) m = std::min(m, std::fabs(v));
  return m;
}

// Problem sizes for one trial.
struct Dims {
  std::size_t n, m, c, d;
};

Dims draw_dims(Rng& rng, const GradCheckSuiteOptions& o) {
  Dims s;
  s.c = 2 + rng.below(std::max<std::size_t>(o.max_classes, 2) - 1);
  const std::size_t lo = s.c + 1;
  s.d = lo + rng.below(std::max(o.max_dim, lo) - lo + 1);
  s.n = 1 + rng.below(4);
  s.m = 1 + rng.below(4);
  return s;
}

struct Trial {
  LossBuilder build;
  std::vector<Tensor> inputs;
};

using TrialFactory = std::function<bool(Rng&, const GradCheckSuiteOptions&, Trial&)>;

struct Check {
  std::string name;
  TrialFactory make;
};

constexpr double kKinkGap = 1e-3;

std::vector<Check> suite_checks() {
  std::vector<Check> checks;

  checks.push_back({"matmul", [](Rng& rng, const GradCheckSuiteOptions& o, Trial& t) {
                      const auto s = draw_dims(rng, o);
                      t.inputs = {random_tensor({s.n, s.d}, rng), random_tensor({s.d, s.c}, rng)};
                      t.build = [](Tape&, std::span<const Var> v) { return sum(mul(matmul(v[0], v[1]), matmul(v[0], v[1]))); };
                      return true;
                    }});
  checks.push_back({"matmul_nt+bias", [](Rng& rng, const GradCheckSuiteOptions& o, Trial& t) {
                      const auto s = draw_dims(rng, o);
                      t.inputs = {random_tensor({s.n, s.d}, rng), random_tensor({s.c, s.d}, rng),
                                  random_tensor({s.c}, rng)};
                      t.build = [](Tape&, std::span<const Var> v) {
                        Var y = add_bias(matmul_nt(v[0], v[1]), v[2]);
                        return sum(mul(y, y));
                      };
                      return true;
                    }});
  checks.push_back({"relu", [](Rng& rng, const GradCheckSuiteOptions& o, Trial& t) {
                      const auto s = draw_dims(rng, o);
                      t.inputs = {away_from_zero({s.n, s.d}, rng, 0.05), random_tensor({s.n, s.d}, rng)};
                      t.build = [](Tape&, std::span<const Var> v) { return sum(mul(relu(v[0]), v[1])); };
                      return true;
                    }});
  checks.push_back({"abs", [](Rng& rng, const GradCheckSuiteOptions& o, Trial& t) {
                      const auto s = draw_dims(rng, o);
                      t.inputs = {away_from_zero({s.n, s.d}, rng, 0.05), random_tensor({s.n, s.d}, rng)};
                      t.build = [](Tape&, std::span<const Var> v) { return sum(mul(abs(v[0]), v[1])); };
                      return true;
                    }});
  checks.push_back({"log_softmax", [](Rng& rng, const GradCheckSuiteOptions& o, Trial& t) {
                      const auto s = draw_dims(rng, o);
                      t.inputs = {random_tensor({s.n, s.c}, rng, 3.0), random_tensor({s.n, s.c}, rng)};
                      t.build = [](Tape&, std::span<const Var> v) { return sum(mul(log_softmax(v[0]), v[1])); };
                      return true;
                    }});
  checks.push_back({"l2_normalize", [](Rng& rng, const GradCheckSuiteOptions& o, Trial& t) {
                      const auto s = draw_dims(rng, o);
                      t.inputs = {random_tensor({s.n, s.d}, rng), random_tensor({s.n, s.d}, rng)};
                      t.build = [](Tape&, std::span<const Var> v) { return sum(mul(l2_normalize(v[0]), v[1])); };
                      return true;
                    }});
  checks.push_back({"distance+reciprocal", [](Rng& rng, const GradCheckSuiteOptions& o, Trial& t) {
                      const auto s = draw_dims(rng, o);
                      t.inputs = {random_tensor({s.m, s.d}, rng), random_tensor({s.c, s.d}, rng)};
                      t.build = [](Tape&, std::span<const Var> v) {
                        return add(sum(reciprocal(pairwise_distance(v[0], v[1]), 0.1)), sum(row_norm(v[0])));
                      };
                      return true;
                    }});
  checks.push_back({"ce_loss", [](Rng& rng, const GradCheckSuiteOptions& o, Trial& t) {
                      const auto s = draw_dims(rng, o);
                      auto y = random_labels(s.n, s.c, rng);
                      t.inputs = {random_tensor({s.n, s.c}, rng, 2.0)};
                      t.build = [y](Tape&, std::span<const Var> v) { return ce_loss(v[0], y); };
                      return true;
                    }});
  checks.push_back({"oe_loss", [](Rng& rng, const GradCheckSuiteOptions& o, Trial& t) {
                      const auto s = draw_dims(rng, o);
                      t.inputs = {random_tensor({s.m, s.c}, rng, 2.0)};
                      t.build = [](Tape&, std::span<const Var> v) { return oe_loss(v[0]); };
                      return true;
                    }});
  checks.push_back({"nc_loss", [](Rng& rng, const GradCheckSuiteOptions& o, Trial& t) {
                      const auto s = draw_dims(rng, o);
                      auto y = random_labels(s.n, s.c, rng);
                      t.inputs = {random_tensor({s.n, s.d}, rng), random_tensor({s.c, s.d}, rng)};
                      t.build = [y](Tape&, std::span<const Var> v) { return nc_loss(v[0], y, v[1]); };
                      return true;
                    }});
  checks.push_back({"orth_loss", [](Rng& rng, const GradCheckSuiteOptions& o, Trial& t) {
                      const auto s = draw_dims(rng, o);
                      t.inputs = {random_tensor({s.m, s.d}, rng), random_tensor({s.c, s.d}, rng)};
                      t.build = [](Tape&, std::span<const Var> v) { return orth_loss(v[0], v[1]); };
                      return min_abs_cosine(t.inputs[0], t.inputs[1]) > kKinkGap;
                    }});
  checks.push_back({"euclidean_loss", [](Rng& rng, const GradCheckSuiteOptions& o, Trial& t) {
                      const auto s = draw_dims(rng, o);
                      auto y = random_labels(s.n, s.c, rng);
                      t.inputs = {random_tensor({s.m, s.d}, rng), random_tensor({s.n, s.d}, rng),
                                  random_tensor({s.c, s.d}, rng)};
                      t.build = [y](Tape&, std::span<const Var> v) {
                        return euclidean_ablation_loss(v[0], v[1], y, v[2]).total;
                      };
                      return true;
                    }});

  auto composite_outputs = [](LossVariant variant) {
    return [variant](Rng& rng, const GradCheckSuiteOptions& o, Trial& t) {
      const auto s = draw_dims(rng, o);
      auto y = random_labels(s.n, s.c, rng);
      const LossWeights w{rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0)};
      t.inputs = {random_tensor({s.n, s.c}, rng, 2.0), random_tensor({s.n, s.d}, rng),
                  random_tensor({s.m, s.c}, rng, 2.0), random_tensor({s.m, s.d}, rng),
                  random_tensor({s.c, s.d}, rng)};
      t.build = [y, w, variant](Tape&, std::span<const Var> v) {
        return composite_loss(stage_mask(2, variant), w, v[0], v[1], y, v[2], v[3], v[4]).total;
      };
      return min_abs_cosine(t.inputs[3], t.inputs[4]) > kKinkGap;
    };
  };
  checks.push_back({"composite", composite_outputs(LossVariant::ours)});
  checks.push_back({"composite_euclidean", composite_outputs(LossVariant::euclidean)});

  checks.push_back({"composite_mlp", [](Rng& rng, const GradCheckSuiteOptions& o, Trial& t) {
                      const auto s = draw_dims(rng, o);
                      const std::size_t d_in = 3 + rng.below(4);
                      const std::size_t hidden = 4 + rng.below(5);
                      const Model model = Model::init({d_in, hidden, s.d}, s.c, rng.next_u64());
                      auto y = random_labels(s.n, s.c, rng);
                      const Tensor id_x = random_tensor({s.n, d_in}, rng);
                      const Tensor ood_x = random_tensor({s.m, d_in}, rng, 2.0);
                      for (const auto* p : model.parameters()) t.inputs.push_back(*p);
                      // Biases start at zero; give them random values so every path is exercised.
                      for (std::size_t i = 1; i < t.inputs.size(); i += 2)
                        for (auto& b : t.inputs[i].data()) b = 0.1 * rng.normal();
                      const LossWeights w{0.5, 1.0, 1.0};
                      t.build = [y, w, id_x, ood_x](Tape& tape, std::span<const Var> v) {
                        BoundModel bm{std::vector<Var>(v.begin(), v.end())};
                        return composite_loss(2, LossVariant::ours, w, tape, bm, id_x, y, &ood_x).total;
                      };
                      // Reject draws with a relu or |.| kink within reach of the stencil.
                      Tape tape;
                      BoundModel bm;
                      for (const auto& p : t.inputs) bm.params.push_back(tape.leaf(p, false));
                      for (const Tensor* x : {&id_x, &ood_x}) {
                        const auto out = forward(tape, bm, *x);
                        for (const auto& pre : out.preactivations)
                          for (double v : pre.value().data())
                            if (std::fabs(v) < kKinkGap) return false;
                        if (x == &ood_x && min_abs_cosine(out.features.value(), t.inputs[t.inputs.size() - 2]) <= kKinkGap)
                          return false;
                      }
                      return true;
                    }});
  return checks;
}

}  // namespace

std::vector<GradCheckRow> run_gradcheck_suite(const GradCheckSuiteOptions& options) {
  std::vector<GradCheckRow> rows;
  const auto checks = suite_checks();
  for (std::size_t c = 0; c < checks.size(); ++c) {
    GradCheckRow row;
    row.name = checks[c].name;
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
      Rng rng(derive_seed(options.seed, c * 1'000'003 + trial));
      Trial t;
      int attempts = 0;
      while (!checks[c].make(rng, options, t)) {
        t = Trial{};
        if (++attempts > 100) throw NumericError("gradcheck: could not draw a kink-free case for " + row.name);
      }
      const auto r = check_gradients(t.build, t.inputs, options.step, options.inject_sign_flip == row.name);
      row.max_rel_error = std::max(row.max_rel_error, r.max_rel_error);
      ++row.trials;
    }
    row.passed = row.max_rel_error < options.tolerance;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ncood
