#pragma once

#include <optional>
#include <span>
#include <string_view>

#include "ncood/model.hpp"
#include "ncood/tensor.hpp"

namespace ncood {

struct LossWeights {
  double lambda = 0.5;  // outlier exposure
  double alpha = 1.0;   // NC alignment (or Euclidean ID term)
  double beta = 1.0;    // OrthLoss (or Euclidean OOD term)

  void validate() const;
};

// Training objectives selectable per run. `ce_only` is the warm-up objective.
enum class LossVariant { ours, oe_only, v1, v2, v3, euclidean, ce_only };

LossVariant parse_loss_variant(std::string_view name);
std::string_view to_string(LossVariant v);

// Which terms enter the objective. CE is always on.
struct LossMask {
  bool oe = false;
  bool nc = false;
  bool orth = false;
  bool euclidean = false;

  bool needs_outliers() const { return oe || orth || euclidean; }
  friend bool operator==(const LossMask&, const LossMask&) = default;
};

// Terms a variant enables once every stage is active.
LossMask variant_mask(LossVariant v);
// Stage 1 allows {CE, OE}; stage 2 allows everything. The result is the
// intersection with the variant's own terms.
LossMask stage_mask(int stage, LossVariant v);

// Mean cross-entropy of logits [n x C] against labels.
Var ce_loss(Var logits, std::span<const int> labels);
// Mean over rows of -(1/C) sum_j log softmax(logits)_j.
Var oe_loss(Var ood_logits);
// Mean over rows of (1/C) sum_i |z^T w_i| with z and w_i l2-normalized.
// Degenerate (near-zero) feature rows contribute 0; the count is reported
// through `degenerate_features` when given.
Var orth_loss(Var ood_features, Var class_weights, std::size_t* degenerate_features = nullptr);
// Mean over rows of -z^T w_y with z and w_y l2-normalized.
Var nc_loss(Var id_features, std::span<const int> labels, Var class_weights);

inline constexpr double kEuclideanEpsilon = 1e-6;

struct EuclideanTerms {
  Var ood;  // mean over rows of (1/C) sum_i 1/(||z - w_i|| + eps)
  Var id;   // mean over rows of ||z_ID - w_y||
  Var total;
};

EuclideanTerms euclidean_ablation_loss(Var ood_features, Var id_features, std::span<const int> labels,
                                       Var class_weights);

// Unweighted component values of one composite evaluation. Terms outside the
// active mask are absent.
struct LossBreakdown {
  double ce = 0.0;
  std::optional<double> oe;
  std::optional<double> nc;
  std::optional<double> orth;
  std::optional<double> euclid_id;
  std::optional<double> euclid_ood;
  double total = 0.0;

  // CE + lambda*OE + alpha*(NC | euclid_id) + beta*(Orth | euclid_ood).
  double weighted_sum(const LossWeights& w) const;
};

struct CompositeLoss {
  Var total;
  LossBreakdown breakdown;
};

// Composite objective from model outputs. The outlier arguments may be empty
// Vars when the mask does not need them.
CompositeLoss composite_loss(const LossMask& mask, const LossWeights& weights, Var id_logits, Var id_features,
                             std::span<const int> labels, Var ood_logits, Var ood_features, Var class_weights);

// Composite objective of a bound model on one ID batch and one outlier batch.
CompositeLoss composite_loss(int stage, LossVariant variant, const LossWeights& weights, Tape& tape,
                             const BoundModel& model, const Tensor& id_x, std::span<const int> labels,
                             const Tensor* ood_x);

}  // namespace ncood
