#include "ncood/losses.hpp"

#include <cmath>
#include <string>

#include "ncood/error.hpp"

namespace ncood {

void LossWeights::validate() const {
  if (!(lambda >= 0.0) || !(alpha >= 0.0) || !(beta >= 0.0))
    throw ConfigError("loss weights lambda, alpha, beta must be non-negative");
}

LossVariant parse_loss_variant(std::string_view name) {
  if (name == "ours") return LossVariant::ours;
  if (name == "oe-only") return LossVariant::oe_only;
  if (name == "v1") return LossVariant::v1;
  if (name == "v2") return LossVariant::v2;
  if (name == "v3") return LossVariant::v3;
  if (name == "euclidean") return LossVariant::euclidean;
  if (name == "ce-only") return LossVariant::ce_only;
  throw ConfigError("unknown loss_variant '" + std::string(name) +
                    "' (expected ours, oe-only, v1, v2, v3, euclidean or ce-only)");
}

std::string_view to_string(LossVariant v) {
  switch (v) {
    case LossVariant::ours:
      return "ours";
    case LossVariant::oe_only:
      return "oe-only";
    case LossVariant::v1:
      return "v1";
    case LossVariant::v2:
      return "v2";
    case LossVariant::v3:
      return "v3";
    case LossVariant::euclidean:
      return "euclidean";
    case LossVariant::ce_only:
      return "ce-only";
  }
  return "?";
}

LossMask variant_mask(LossVariant v) {
  switch (v) {
    case LossVariant::ours:
      return {.oe = true, .nc = true, .orth = true};
    case LossVariant::oe_only:
      return {.oe = true};
    case LossVariant::v1:
      return {.nc = true, .orth = true};
    case LossVariant::v2:
      return {.oe = true, .nc = true};
    case LossVariant::v3:
      return {.oe = true, .orth = true};
    case LossVariant::euclidean:
      return {.oe = true, .euclidean = true};
    case LossVariant::ce_only:
      return {};
  }
  return {};
}

LossMask stage_mask(int stage, LossVariant v) {
  if (stage != 1 && stage != 2) throw ContractError("stage must be 1 or 2, got " + std::to_string(stage));
  LossMask m = variant_mask(v);
  if (stage == 1) m.nc = m.orth = m.euclidean = false;
  return m;
}

Var ce_loss(Var logits, std::span<const int> labels) {
  return scale(mean(pick(log_softmax(logits), labels)), -1.0);
}

Var oe_loss(Var ood_logits) {
  // mean over rows of (1/C) sum_j equals the mean over all m*C entries
  return scale(mean(log_softmax(ood_logits)), -1.0);
}

Var orth_loss(Var ood_features, Var class_weights, std::size_t* degenerate_features) {
  std::vector<bool> flags;
  Var z = l2_normalize(ood_features, &flags);
  Var w = l2_normalize(class_weights);
  if (degenerate_features) {
    *degenerate_features = 0;
    for (bool f : flags) *degenerate_features += f ? 1 : 0;
  }
  return mean(abs(matmul_nt(z, w)));
}

Var nc_loss(Var id_features, std::span<const int> labels, Var class_weights) {
  Var z = l2_normalize(id_features);
  Var w = l2_normalize(class_weights);
  return scale(mean(pick(matmul_nt(z, w), labels)), -1.0);
}

EuclideanTerms euclidean_ablation_loss(Var ood_features, Var id_features, std::span<const int> labels,
                                       Var class_weights) {
  Var w = l2_normalize(class_weights);
  Var z_ood = l2_normalize(ood_features);
  Var z_id = l2_normalize(id_features);
  EuclideanTerms t;
  t.ood = mean(reciprocal(pairwise_distance(z_ood, w), kEuclideanEpsilon));
  t.id = mean(row_norm(sub(z_id, gather_rows(w, labels))));
  t.total = add(t.ood, t.id);
  return t;
}

double LossBreakdown::weighted_sum(const LossWeights& w) const {
  double s = ce;
  if (oe) s += w.lambda * *oe;
  if (nc) s += w.alpha * *nc;
  if (orth) s += w.beta * *orth;
  if (euclid_id) s += w.alpha * *euclid_id;
  if (euclid_ood) s += w.beta * *euclid_ood;
  return s;
}

CompositeLoss composite_loss(const LossMask& mask, const LossWeights& weights, Var id_logits, Var id_features,
                             std::span<const int> labels, Var ood_logits, Var ood_features, Var class_weights) {
  weights.validate();
  if (mask.needs_outliers() && ood_logits.tape() == nullptr)
    throw ContractError("composite_loss: the active terms need an outlier batch");
  CompositeLoss out;
  Var total = ce_loss(id_logits, labels);
  out.breakdown.ce = total.value().item();
  if (mask.oe) {
    Var l = oe_loss(ood_logits);
    out.breakdown.oe = l.value().item();
    total = add(total, scale(l, weights.lambda));
  }
  if (mask.nc) {
    Var l = nc_loss(id_features, labels, class_weights);
    out.breakdown.nc = l.value().item();
    total = add(total, scale(l, weights.alpha));
  }
  if (mask.orth) {
    Var l = orth_loss(ood_features, class_weights);
    out.breakdown.orth = l.value().item();
    total = add(total, scale(l, weights.beta));
  }
  if (mask.euclidean) {
    auto t = euclidean_ablation_loss(ood_features, id_features, labels, class_weights);
    out.breakdown.euclid_id = t.id.value().item();
    out.breakdown.euclid_ood = t.ood.value().item();
    total = add(total, add(scale(t.id, weights.alpha), scale(t.ood, weights.beta)));
  }
  out.total = total;
  out.breakdown.total = total.value().item();
  return out;
}

CompositeLoss composite_loss(int stage, LossVariant variant, const LossWeights& weights, Tape& tape,
                             const BoundModel& model, const Tensor& id_x, std::span<const int> labels,
                             const Tensor* ood_x) {
  const LossMask mask = stage_mask(stage, variant);
  const auto id_out = forward(tape, model, id_x);
  Var ood_logits, ood_features;
  if (mask.needs_outliers()) {
    if (ood_x == nullptr) throw ContractError("composite_loss: the active terms need an outlier batch");
    const auto ood_out = forward(tape, model, *ood_x);
    ood_logits = ood_out.logits;
    ood_features = ood_out.features;
  }
  return composite_loss(mask, weights, id_out.logits, id_out.features, labels, ood_logits, ood_features,
                        model.head_weight());
}

}  // namespace ncood
