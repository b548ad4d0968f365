#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ncood/model.hpp"
#include "ncood/tensor.hpp"

namespace ncood {

enum class ScoreKind { msp, combined };

ScoreKind parse_score_kind(std::string_view name);
std::string_view to_string(ScoreKind kind);

// Maximum softmax probability of one logit row.
double msp_score(std::span<const double> logits);

// (1/C) sum_i |z^T w_i| with z and the rows of `class_weights` l2-normalized;
// a degenerate z yields 0.
double mean_abs_cosine(std::span<const double> feature, const Tensor& class_weights);

// msp_score(logits) + mean_abs_cosine(feature, class_weights). Higher means
// more ID-like.
double combined_score(std::span<const double> logits, std::span<const double> feature, const Tensor& class_weights);

// Per-sample scores of a model on a batch of inputs.
std::vector<double> score_samples(const Model& model, const Tensor& x, ScoreKind kind);

struct ScoreSeries {
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
  ScoreKind kind = ScoreKind::msp;

  void validate() const;
};

// The ceil(tpr * n)-th largest ID score: the largest threshold that keeps at
// least that many ID samples at score >= threshold.
double threshold_at_tpr(std::span<const double> id_scores, double tpr = 0.95);

// Fraction of OOD scores >= threshold_at_tpr(id_scores, tpr). Ties at the
// threshold count as ID.
double fpr_at_tpr(const ScoreSeries& series, double tpr = 0.95);

// P(id > ood) + P(id == ood) / 2 over all pairs, via midranks.
double auroc(const ScoreSeries& series);

struct DetectionReport {
  double fpr95 = 0.0;
  double auroc = 0.0;
  double threshold = 0.0;
  ScoreKind kind = ScoreKind::msp;
};

DetectionReport evaluate_detection(const ScoreSeries& series);

// --- feature separation ---------------------------------------------------------

// Mean distances of unit features to the unit weight of the predicted class
// and to the span of all class weights.
struct SeparationStats {
  double euclidean = 0.0;
  double cosine = 0.0;
  double reconstruction_error = 0.0;
  std::size_t count = 0;
};

struct SeparationTriplet {
  SeparationStats id;
  SeparationStats ood;
  SeparationStats diff;  // |id - ood| per metric
};

// Per-population means. Features and weight rows are l2-normalized; the
// reconstruction error is ||z - P_W z|| with P_W the orthogonal projector on
// span(w_1..w_C).
SeparationStats separation_metrics(const Tensor& features, std::span<const int> predicted_labels,
                                   const Tensor& class_weights);

SeparationTriplet separation_triplet(const SeparationStats& id, const SeparationStats& ood);

std::vector<int> predict_labels(const Tensor& logits);

// --- projection -----------------------------------------------------------------

struct PrincipalDirection {
  std::vector<double> vector;  // unit; largest-magnitude component positive
  double eigenvalue = 0.0;
  double second_eigenvalue = 0.0;
  bool unique = true;  // false when the top eigenvalue is (numerically) repeated
  std::size_t iterations = 0;
};

// Top eigenvector of the mean-centred covariance of the rows of `features`,
// by power iteration. Throws NumericError when the covariance vanishes.
PrincipalDirection principal_ood_direction(const Tensor& features);

// Coordinates of l2-normalized features in the frame (e1, e2[, e3]) where
// e1, e2 orthonormalize w_1, w_2 and e3 is `ood_direction` orthogonalized
// against them.
Tensor project_features(const Tensor& features, const Tensor& class_weights,
                        const std::optional<std::vector<double>>& ood_direction = std::nullopt);

struct ProjectionBlock {
  std::string population;  // "id:<class>" or "ood"
  std::vector<double> coords;
};

// CSV `population,c1,c2[,c3]`.
std::string projection_csv(std::size_t dims, const std::vector<ProjectionBlock>& rows);
void write_projection_csv(const std::filesystem::path& path, std::size_t dims,
                          const std::vector<ProjectionBlock>& rows);

}  // namespace ncood
