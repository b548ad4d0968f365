// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "ncood/benchmark.hpp"
#include "ncood/detection.hpp"
#include "ncood/gradcheck.hpp"
#include "ncood/losses.hpp"
#include "support.hpp"

using namespace ncood;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and thresholds, frozen.
constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-4;
constexpr std::size_t kGradSeeds = 50;
constexpr double kGradSeconds = 60.0;
constexpr std::size_t kMetricSets = 100;
constexpr double kOrthZeroTol = 1e-12;
constexpr double kOrthScaleTol = 1e-9;
constexpr double kAuxOrthMax = 0.05;
constexpr double kIdAccMin = 0.95;
constexpr double kNcCosMin = 0.8;
constexpr double kSecondsPerSeed = 120.0;
constexpr std::size_t kV3WinsMin = 4;
constexpr double kScoreSlack = 0.005;
constexpr double kOodCosMax = 0.05;
constexpr double kResumeTol = 1e-12;
constexpr double kAngleTol = 1e-6;
constexpr double kContractionSlack = 1e-12;
constexpr std::size_t kToySeeds = 5;

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("[%s] %d %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// --- 1 ----------------------------------------------------------------------------

void gradient_suite() {
  const auto t0 = Clock::now();
  GradCheckSuiteOptions opt;
  opt.trials = kGradSeeds;
  opt.step = kGradStep;
  opt.tolerance = kGradTol;
  opt.max_dim = 32;
  opt.max_classes = 5;
  const auto rows = run_gradcheck_suite(opt);
  const double secs = seconds_since(t0);
  bool ok = secs < kGradSeconds;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& r : rows) {
    ok = ok && r.passed && r.trials == kGradSeeds;
    if (r.max_rel_error >= worst) worst = r.max_rel_error, worst_name = r.name;
  }
  for (const char* needed : {"ce_loss", "oe_loss", "nc_loss", "orth_loss", "euclidean_loss", "composite"})
    ok = ok && std::any_of(rows.begin(), rows.end(), [&](const GradCheckRow& r) { return r.name == needed; });
  report(1, "gradient suite", ok,
         fmt("%zu checks x %zu seeds, worst rel err %.2e (%s) < %.0e, %.1f s < %.0f s", rows.size(), kGradSeeds, worst,
             worst_name.c_str(), kGradTol, secs, kGradSeconds));
}

// --- 2 ----------------------------------------------------------------------------

double brute_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  std::uint64_t twice = 0;
  for (double a : id)
    for (double b : ood) twice += a > b ? 2 : (a == b ? 1 : 0);
  return static_cast<double>(twice) / static_cast<double>(2 * id.size() * ood.size());
}

double brute_fpr95(std::vector<double> id, const std::vector<double>& ood) {
  const std::size_t k = (95 * id.size() + 99) / 100;  // ceil(0.95 n)
  std::sort(id.begin(), id.end(), std::greater<>());
  const double lambda = id[k - 1];
  return static_cast<double>(std::count_if(ood.begin(), ood.end(), [&](double s) { return s >= lambda; })) /
         static_cast<double>(ood.size());
}

void metric_oracles() {
  Rng rng(2024);
  std::size_t auroc_ok = 0, fpr_ok = 0, invariant_ok = 0;
  for (std::size_t trial = 0; trial < kMetricSets; ++trial) {
    const std::size_t n = 1 + rng.below(200), m = 1 + rng.below(200);
    // Half the sets live on a coarse grid so ties are frequent.
    const bool grid = trial % 2 == 0;
    auto draw = [&](std::size_t count, double shift) {
      std::vector<double> v(count);
      for (auto& x : v) x = grid ? static_cast<double>(rng.below(24)) / 8.0 + shift : rng.normal() + shift;
      return v;
    };
    ScoreSeries s{draw(n, 0.4), draw(m, 0.0), ScoreKind::msp};
    const double a = auroc(s), f = fpr_at_tpr(s);
    auroc_ok += a == brute_auroc(s.id_scores, s.ood_scores);
    fpr_ok += f == brute_fpr95(s.id_scores, s.ood_scores);

    bool inv = true;
    for (int kind = 0; kind < 2; ++kind) {
      ScoreSeries t = s;
      for (auto* v : {&t.id_scores, &t.ood_scores})
        for (auto& x : *v) x = kind == 0 ? std::exp(x) : std::atan(x) + 2.0 * x;
      inv = inv && auroc(t) == a && fpr_at_tpr(t) == f;
    }
    invariant_ok += inv;
  }
  report(2, "metric oracles",
         auroc_ok == kMetricSets && fpr_ok == kMetricSets && invariant_ok == kMetricSets,
         fmt("auroc exact %zu/%zu, fpr95 exact %zu/%zu, monotone-invariant %zu/%zu (n, m <= 200)", auroc_ok,
             kMetricSets, fpr_ok, kMetricSets, invariant_ok, kMetricSets));
}

// --- 3 ----------------------------------------------------------------------------

double orth_value(const Tensor& z, const Tensor& w) {
  Tape tape;
  return orth_loss(tape.constant(z), tape.constant(w)).value().item();
}

void orth_geometry() {
  Rng rng(7);
  double worst_zero = 0.0, worst_scale = 0.0;
  bool exact = true;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 2 + rng.below(4), d = c + 1 + rng.below(12), n = 1 + rng.below(10);
    const auto w = testing::random_matrix(c, d, rng);
    // z orthogonal to span(W): project random vectors onto the complement.
    Eigen::MatrixXd a(d, c);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t k = 0; k < d; ++k) a(k, i) = w(i, k);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::MatrixXd q = qr.householderQ();
    Tensor z = Tensor::zeros({n, d});
    for (std::size_t r = 0; r < n; ++r) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
      for (std::size_t k = c; k < d; ++k) v += rng.normal() * q.col(k);
      for (std::size_t k = 0; k < d; ++k) z(r, k) = v(k);
    }
    worst_zero = std::max(worst_zero, orth_value(z, w));

    // z = w_i with W a signed permutation of standard basis rows.
    const auto perm = rng.permutation(d);
    Tensor wo = Tensor::zeros({c, d});
    for (std::size_t i = 0; i < c; ++i) wo(i, perm[i]) = rng.below(2) ? 1.0 : -1.0;
    const std::size_t pick = rng.below(c);
    const std::size_t rows[] = {pick};
    exact = exact && orth_value(wo.select_rows(rows), wo) == 1.0 / static_cast<double>(c);

    // Positive row rescaling of either argument.
    const auto zr = testing::random_matrix(n, d, rng);
    const double base = orth_value(zr, w);
    Tensor zs = zr, ws = w;
    for (auto* t : {&zs, &ws})
      for (std::size_t r = 0; r < t->rows(); ++r) {
        const double k = std::exp(3.0 * rng.normal());
        for (auto& x : t->row(r)) x *= k;
      }
    worst_scale = std::max(worst_scale, std::fabs(orth_value(zs, ws) - base));
  }
  report(3, "OrthLoss geometry", worst_zero <= kOrthZeroTol && exact && worst_scale <= kOrthScaleTol,
         fmt("z perp span(W): max %.1e <= %.0e; z = w_i: 1/C exact %s; rescaling drift %.1e <= %.0e", worst_zero,
             kOrthZeroTol, exact ? "yes" : "no", worst_scale, kOrthScaleTol));
}

// --- 4-7 --------------------------------------------------------------------------

struct VariantResult {
  double aux_orth = 0.0;
  double test_acc = 0.0;
  double nc_cos = 0.0;
  DetectionReport msp, combined;
  SeparationTriplet sep;
};

VariantResult evaluate(const Model& m, const Benchmark& b) {
  VariantResult r;
  const auto& w = m.head().weight;
  const auto aux = m.forward(b.ood_aux.features);
  Tape tape;
  r.aux_orth = orth_loss(tape.constant(aux.features), tape.constant(w)).value().item();

  const auto id = m.forward(b.id_test.features);
  const auto pred = predict_labels(id.logits);
  std::size_t correct = 0;
  double cos_sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] != b.id_test.labels[i]) continue;
    ++correct;
    const auto z = id.features.row(i);
    const auto wy = w.row(static_cast<std::size_t>(pred[i]));
    double zw = 0.0, zz = 0.0, ww = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) zw += z[k] * wy[k], zz += z[k] * z[k], ww += wy[k] * wy[k];
    cos_sum += zz > 0.0 ? zw / std::sqrt(zz * ww) : 0.0;
  }
  r.test_acc = static_cast<double>(correct) / static_cast<double>(pred.size());
  r.nc_cos = correct ? cos_sum / static_cast<double>(correct) : 0.0;

  for (auto kind : {ScoreKind::msp, ScoreKind::combined}) {
    ScoreSeries s{score_samples(m, b.id_test.features, kind), score_samples(m, b.ood_test.features, kind), kind};
    (kind == ScoreKind::msp ? r.msp : r.combined) = evaluate_detection(s);
  }
  const auto ood = m.forward(b.ood_test.features);
  r.sep = separation_triplet(separation_metrics(id.features, pred, w),
                             separation_metrics(ood.features, predict_labels(ood.logits), w));
  return r;
}

void toy_criteria() {
  const BenchmarkSpec spec;
  std::map<LossVariant, std::vector<VariantResult>> res;
  std::vector<double> ours_seconds;
  for (std::uint64_t seed = 0; seed < kToySeeds; ++seed) {
    const auto bench = make_benchmark(spec, seed);
    WarmupConfig wc;
    wc.seed = seed;
    const auto t0 = Clock::now();
    const auto warm = warm_start(bench, default_layer_dims(spec.dim), wc, seed);
    for (auto v : {LossVariant::ours, LossVariant::oe_only, LossVariant::v3}) {
      const auto trained = train(warm, bench.id_train, bench.ood_aux, toy_train_config(seed, v));
      // ours runs first, so this is warm-up plus one fine-tuning run
      if (v == LossVariant::ours) ours_seconds.push_back(seconds_since(t0));
      res[v].push_back(evaluate(trained.model, bench));
    }
  }
  const auto& ours = res[LossVariant::ours];
  const auto& oe = res[LossVariant::oe_only];
  const auto& v3 = res[LossVariant::v3];
  auto mean = [](const std::vector<VariantResult>& v, auto f) {
    double s = 0.0;
    for (const auto& r : v) s += f(r);
    return s / static_cast<double>(v.size());
  };

  // 4
  bool ok4 = true;
  double worst_orth = 0.0, worst_acc = 1.0, worst_cos = 1.0, worst_secs = 0.0;
  for (std::size_t s = 0; s < kToySeeds; ++s) {
    worst_orth = std::max(worst_orth, ours[s].aux_orth);
    worst_acc = std::min(worst_acc, ours[s].test_acc);
    worst_cos = std::min(worst_cos, ours[s].nc_cos);
    worst_secs = std::max(worst_secs, ours_seconds[s]);
  }
  ok4 = worst_orth < kAuxOrthMax && worst_acc >= kIdAccMin && worst_cos >= kNcCosMin && worst_secs < kSecondsPerSeed;
  report(4, "toy two-stage training", ok4,
         fmt("worst of %zu seeds: aux orth %.4f < %.2f, ID test acc %.3f >= %.2f, NC cos %.3f >= %.1f, %.1f s/seed",
             kToySeeds, worst_orth, kAuxOrthMax, worst_acc, kIdAccMin, worst_cos, kNcCosMin, worst_secs));

  // 5 (combined score, the method's detector, for every variant)
  const double auc_ours = mean(ours, [](const auto& r) { return r.combined.auroc; });
  const double auc_oe = mean(oe, [](const auto& r) { return r.combined.auroc; });
  std::size_t v3_wins = 0;
  std::string fprs;
  for (std::size_t s = 0; s < kToySeeds; ++s) {
    v3_wins += v3[s].combined.fpr95 <= oe[s].combined.fpr95;
    fprs += fmt("%s%.4f/%.4f", s ? " " : "", v3[s].combined.fpr95, oe[s].combined.fpr95);
  }
  report(5, "ablation direction", auc_ours >= auc_oe && v3_wins >= kV3WinsMin,
         fmt("mean AUROC ours %.5f >= oe-only %.5f; v3 FPR95 <= oe-only in %zu/%zu seeds (v3/oe: %s)", auc_ours,
             auc_oe, v3_wins, kToySeeds, fprs.c_str()));

  // 6
  const double comb = mean(ours, [](const auto& r) { return r.combined.auroc; });
  const double msp = mean(ours, [](const auto& r) { return r.msp.auroc; });
  double worst_gap = 1.0;
  for (const auto& r : ours) worst_gap = std::min(worst_gap, r.combined.auroc - r.msp.auroc);
  report(6, "score-function comparison", comb >= msp - kScoreSlack,
         fmt("ours mean AUROC combined %.5f >= MSP %.5f - %.3f (worst seed gap %+.5f)", comb, msp, kScoreSlack,
             worst_gap));

  // 7
  const double diff_ours = mean(ours, [](const auto& r) { return r.sep.diff.cosine; });
  const double diff_oe = mean(oe, [](const auto& r) { return r.sep.diff.cosine; });
  const double ood_cos = mean(ours, [](const auto& r) { return r.sep.ood.cosine; });
  report(7, "separation degree", diff_ours > diff_oe && ood_cos < kOodCosMax,
         fmt("mean cosine Diff ours %.4f > oe-only %.4f; ours OOD mean cosine %.4f < %.2f", diff_ours, diff_oe,
             ood_cos, kOodCosMax));
}

// --- 8 ----------------------------------------------------------------------------

void determinism() {
  testing::TempDir dir("acceptance");
  const auto bench = make_benchmark(BenchmarkSpec{}, 0);
  WarmupConfig wc;
  const auto warm = warm_start(bench, default_layer_dims(16), wc, 0);
  const auto cfg = toy_train_config(0, LossVariant::ours);

  std::string logs[2], ckpts[2];
  for (int run = 0; run < 2; ++run) {
    Trainer t(warm, bench.id_train, &bench.ood_aux, cfg);
    t.run();
    const auto p = dir / ("run" + std::to_string(run) + ".bin");
    t.save_checkpoint(p);
    t.log().save(dir / "log.csv");
    logs[run] = testing::read_file(dir / "log.csv");
    ckpts[run] = testing::read_file(p);
  }
  const bool identical = logs[0] == logs[1] && ckpts[0] == ckpts[1];

  const auto full = load_checkpoint(dir / "run0.bin").model;
  double worst = 0.0;
  for (std::size_t stop : {std::size_t{7}, cfg.switch_epoch, std::size_t{22}}) {
    Trainer t(warm, bench.id_train, &bench.ood_aux, cfg);
    t.run_until(stop);
    t.save_checkpoint(dir / "mid.bin");
    const auto resumed = resume(dir / "mid.bin", bench.id_train, bench.ood_aux, cfg).model;
    const auto a = resumed.parameters();
    const auto b = full.parameters();
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t k = 0; k < a[i]->size(); ++k)
        worst = std::max(worst, std::fabs(a[i]->data()[k] - b[i]->data()[k]));
  }
  report(8, "determinism and persistence", identical && worst <= kResumeTol,
         fmt("rerun byte-identical log+checkpoint: %s; resume at epochs 7/15/22 max |dtheta| %.1e <= %.0e",
             identical ? "yes" : "no", worst, kResumeTol));
}

// --- 9 ----------------------------------------------------------------------------

void projection() {
  Rng rng(99);
  double worst_angle = 0.0, worst_excess = -1.0;
  std::size_t trials = 0;
  for (std::size_t d = 2; d <= 16; ++d) {
    for (int rep = 0; rep < 10; ++rep, ++trials) {
      const std::size_t m = d + 2 + rng.below(60);
      auto x = testing::random_matrix(m, d, rng);
      // Random per-axis stretch in a random rotation.
      Eigen::MatrixXd rot = Eigen::MatrixXd::NullaryExpr(d, d, [&] { return rng.normal(); });
      rot = Eigen::HouseholderQR<Eigen::MatrixXd>(rot).householderQ();
      Eigen::MatrixXd e(m, d);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < d; ++k) e(i, k) = x(i, k) * (1.0 + static_cast<double>(k)) + 0.5;
      e = e * rot.transpose();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < d; ++k) x(i, k) = e(i, k);

      const auto pd = principal_ood_direction(x);
      Eigen::MatrixXd c = e.rowwise() - e.colwise().mean();
      const Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(m - 1);
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
      const Eigen::VectorXd top = es.eigenvectors().col(static_cast<Eigen::Index>(d - 1));
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += pd.vector[k] * top(static_cast<Eigen::Index>(k));
      const double angle = std::atan2(std::sqrt(std::max(0.0, 1.0 - dot * dot)), std::fabs(dot));
      worst_angle = std::max(worst_angle, angle);

      if (d >= 3) {
        const auto w = testing::random_matrix(2 + rng.below(std::min<std::size_t>(d - 1, 4)), d, rng);
        for (const auto& p : {project_features(x, w), project_features(x, w, pd.vector)}) {
          for (std::size_t i = 0; i < m; ++i) {
            double energy = 0.0, zz = 0.0;
            for (double v : p.row(i)) energy += v * v;
            for (double v : x.row(i)) zz += v * v;
            // Coordinates are of the unit feature, so the bound is 1 (= its norm).
            worst_excess = std::max(worst_excess, energy - (zz > 0.0 ? 1.0 : 0.0));
          }
        }
      }
    }
  }
  report(9, "projection pipeline", worst_angle <= kAngleTol && worst_excess <= kContractionSlack,
         fmt("%zu clouds d=2..16: max angle to dense eigenvector %.1e <= %.0e; max energy excess %.1e", trials,
             worst_angle, kAngleTol, worst_excess));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  gradient_suite();
  metric_oracles();
  orth_geometry();
  toy_criteria();
  determinism();
  projection();
  std::printf("%d of 9 criteria failed (%.1f s)\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
