#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ncood/tensor.hpp"

namespace ncood {

// Builds a scalar loss on `tape` from leaves holding the given inputs.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> inputs)>;

struct GradCheckResult {
  double max_rel_error = 0.0;  // worst input, norm-wise
  std::size_t evaluations = 0;
};

// Compares reverse-mode gradients against central finite differences.
// The error for each input is ||analytic - numeric|| / max(||analytic||,
// ||numeric||), taken as 0 when both norms vanish.
GradCheckResult check_gradients(const LossBuilder& build, const std::vector<Tensor>& inputs, double step = 1e-4,
                                bool flip_analytic_sign = false);

struct GradCheckRow {
  std::string name;
  std::size_t trials = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckSuiteOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 50;
  double step = 1e-4;
  double tolerance = 1e-4;
  std::size_t max_dim = 32;
  std::size_t max_classes = 5;
  // Negates the analytic gradient of the named check; used to confirm the
  // suite detects a broken derivative.
  std::string inject_sign_flip;
};

// Finite-difference checks over every differentiable op and every loss,
// including the composite objective evaluated both on raw model outputs and
// through a small MLP.
std::vector<GradCheckRow> run_gradcheck_suite(const GradCheckSuiteOptions& options);

}  // namespace ncood
