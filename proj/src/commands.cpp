#include "ncood/commands.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "ncood/error.hpp"

namespace ncood {
namespace {

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw IoError("cannot create output directory '" + dir.string() + "'");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Header plus the first `rows` data lines of an earlier log, or nullopt if
// the file is missing or too short.
std::optional<std::string> log_prefix(const std::filesystem::path& path, std::size_t rows) {
  if (!std::filesystem::is_regular_file(path)) return std::nullopt;
  const std::string text = read_file(path);
  std::size_t pos = 0;
  for (std::size_t line = 0; line <= rows; ++line) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) return std::nullopt;
    pos = nl + 1;
  }
  return text.substr(0, pos);
}

void check_dims(const Model& model, std::size_t d, const std::filesystem::path& path) {
  if (model.input_dim() != d)
    throw DimensionError("'" + path.string() + "' has " + std::to_string(d) + " features but the model expects " +
                         std::to_string(model.input_dim()));
}

}  // namespace

void write_text(const std::filesystem::path& path, const std::string& text, std::ostream& fallback) {
  if (path.empty()) {
    fallback << text;
    return;
  }
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void cmd_gen_data(const BenchmarkSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir,
                  std::ostream& log) {
  const auto b = make_benchmark(spec, seed);
  ensure_dir(out_dir);
  save_csv(b.id_train, out_dir / "id_train.csv");
  save_csv(b.id_test, out_dir / "id_test.csv");
  save_csv(b.ood_aux, out_dir / "ood_aux.csv");
  save_csv(b.ood_test, out_dir / "ood_test.csv");
  log << "wrote " << b.id_train.size() << " ID train, " << b.id_test.size() << " ID test, " << b.ood_aux.size()
      << " auxiliary (" << to_string(spec.aux_mode) << ") and " << b.ood_test.size() << " test ("
      << to_string(spec.test_mode) << ") samples to " << out_dir.string() << "\n";
}

void cmd_train(const RunConfig& config, const TrainOptions& options, std::ostream& log) {
  config.validate();
  const auto id = load_labeled_csv(config.id_train);
  const auto aux = load_outlier_csv(config.ood_aux, OutlierRole::auxiliary);
  ensure_dir(config.out_dir);
  write_text(config.out_dir / "config.txt", to_text(config), log);

  std::optional<Trainer> trainer;
  std::string prefix;
  if (options.resume) {
    const auto ck = load_checkpoint(*options.resume);
    check_dims(ck.model, id.dim(), config.id_train);
    trainer.emplace(Trainer::from_checkpoint(ck, id, &aux, config.train));
    if (auto p = log_prefix(config.out_dir / "train_log.csv", ck.meta.epoch)) {
      prefix = *p;
    } else if (ck.meta.epoch > 0) {
      log << "note: no earlier train_log.csv with " << ck.meta.epoch
          << " rows; the new log starts at the resumed epoch\n";
    }
    log << "resuming at epoch " << ck.meta.epoch << "\n";
  } else {
    Model model;
    if (config.init_checkpoint) {
      model = load_checkpoint(*config.init_checkpoint).model;
      check_dims(model, id.dim(), config.id_train);
      if (model.num_classes() != id.num_classes)
        throw DimensionError("initial checkpoint has " + std::to_string(model.num_classes()) +
                             " classes but the ID data has " + std::to_string(id.num_classes));
    } else {
      model = Model::init(config.layer_dims(id.dim()), id.num_classes, derive_seed(config.train.seed, 13));
      auto warm = warmup(std::move(model), id, config.warmup);
      model = std::move(warm.model);
      save_checkpoint(model, CheckpointMeta{}, config.out_dir / "warmup.bin");
      warm.log.save(config.out_dir / "warmup_log.csv");
      log << "warm-up: " << config.warmup.epochs << " epochs, ID accuracy "
          << (warm.log.records.empty() ? 0.0 : warm.log.records.back().id_acc) << "\n";
    }
    trainer.emplace(std::move(model), id, &aux, config.train);
  }

  const std::size_t until = std::min(options.stop_after.value_or(config.train.epochs), config.train.epochs);
  while (trainer->epoch() < until) {
    const auto& r = trainer->run_epoch();
    log << "epoch " << r.epoch << " stage " << r.stage << " lr " << r.lr << " loss " << r.losses.total
        << " id_acc " << r.id_acc;
    if (r.aux_orth_mean) log << " aux_orth " << *r.aux_orth_mean;
    log << "\n";
  }
  trainer->save_checkpoint(config.out_dir / "checkpoint.bin");
  std::string csv = trainer->log().to_csv();
  if (!prefix.empty()) csv = prefix + csv.substr(csv.find('\n') + 1);
  write_text(config.out_dir / "train_log.csv", csv, log);
  log << "saved " << (config.out_dir / "checkpoint.bin").string() << " after epoch " << trainer->epoch() << "\n";
}

std::vector<DetectionRow> cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& id_test,
                                   const std::vector<std::filesystem::path>& ood_tests, const std::string& score_kind) {
  std::vector<ScoreKind> kinds;
  if (score_kind == "all")
    kinds = {ScoreKind::msp, ScoreKind::combined};
  else
    kinds = {parse_score_kind(score_kind)};
  if (ood_tests.empty()) throw ConfigError("eval needs at least one OOD test file");

  const auto model = load_checkpoint(checkpoint).model;
  const auto id = load_labeled_csv(id_test);
  check_dims(model, id.dim(), id_test);
  std::vector<OutlierDataset> oods;
  for (const auto& p : ood_tests) {
    oods.push_back(load_outlier_csv(p, OutlierRole::test));
    check_dims(model, oods.back().dim(), p);
  }

  std::vector<DetectionRow> rows;
  for (auto kind : kinds) {
    const auto id_scores = score_samples(model, id.features, kind);
    for (std::size_t i = 0; i < oods.size(); ++i) {
      ScoreSeries s{id_scores, score_samples(model, oods[i].features, kind), kind};
      rows.push_back({kind, ood_tests[i].stem().string(), evaluate_detection(s)});
    }
  }
  return rows;
}

std::string detection_csv(const std::vector<DetectionRow>& rows) {
  std::string out = "score_kind,dataset,fpr95,auroc,threshold\n";
  for (const auto& r : rows)
    out += std::string(to_string(r.kind)) + "," + r.dataset + "," + real(r.report.fpr95) + "," +
           real(r.report.auroc) + "," + real(r.report.threshold) + "\n";
  return out;
}

SeparationTriplet cmd_separation(const std::filesystem::path& checkpoint, const std::filesystem::path& id_test,
                                 const std::filesystem::path& ood_test) {
  const auto model = load_checkpoint(checkpoint).model;
  const auto id = load_labeled_csv(id_test);
  const auto ood = load_outlier_csv(ood_test, OutlierRole::test);
  check_dims(model, id.dim(), id_test);
  check_dims(model, ood.dim(), ood_test);
  const auto& w = model.head().weight;
  const auto id_out = model.forward(id.features);
  const auto ood_out = model.forward(ood.features);
  return separation_triplet(separation_metrics(id_out.features, predict_labels(id_out.logits), w),
                            separation_metrics(ood_out.features, predict_labels(ood_out.logits), w));
}

std::string separation_csv(const SeparationTriplet& t) {
  std::string out = "metric,id,ood,diff\n";
  out += "euclidean," + real(t.id.euclidean) + "," + real(t.ood.euclidean) + "," + real(t.diff.euclidean) + "\n";
  out += "cosine," + real(t.id.cosine) + "," + real(t.ood.cosine) + "," + real(t.diff.cosine) + "\n";
  out += "reconstruction," + real(t.id.reconstruction_error) + "," + real(t.ood.reconstruction_error) + "," +
         real(t.diff.reconstruction_error) + "\n";
  return out;
}

std::vector<ProjectionBlock> cmd_project(const std::filesystem::path& checkpoint, const std::filesystem::path& id_test,
                                         const std::filesystem::path& ood_test, std::size_t dims, std::ostream& log) {
  if (dims != 2 && dims != 3) throw ConfigError("projection dims must be 2 or 3");
  const auto model = load_checkpoint(checkpoint).model;
  const auto id = load_labeled_csv(id_test);
  const auto ood = load_outlier_csv(ood_test, OutlierRole::test);
  check_dims(model, id.dim(), id_test);
  check_dims(model, ood.dim(), ood_test);
  const auto& w = model.head().weight;
  const auto id_feat = model.forward(id.features).features;
  const auto ood_feat = model.forward(ood.features).features;

  std::optional<std::vector<double>> direction;
  if (dims == 3) {
    Tape tape;
    auto unit = l2_normalize(tape.constant(ood_feat)).value();
    auto pd = principal_ood_direction(unit);
    if (!pd.unique)
      log << "note: top OOD eigenvalue is repeated (" << pd.eigenvalue << " vs " << pd.second_eigenvalue
          << "); the third axis is one of several valid choices\n";
    direction = std::move(pd.vector);
  }
  const auto id_xy = project_features(id_feat, w, direction);
  const auto ood_xy = project_features(ood_feat, w, direction);

  std::vector<ProjectionBlock> rows;
  rows.reserve(id.size() + ood.size());
  for (std::size_t i = 0; i < id.size(); ++i) {
    auto r = id_xy.row(i);
    rows.push_back({"id:" + std::to_string(id.labels[i]), {r.begin(), r.end()}});
  }
  for (std::size_t i = 0; i < ood.size(); ++i) {
    auto r = ood_xy.row(i);
    rows.push_back({"ood", {r.begin(), r.end()}});
  }
  return rows;
}

bool cmd_gradcheck(const GradCheckSuiteOptions& options, std::ostream& out) {
  const auto rows = run_gradcheck_suite(options);
  bool ok = true;
  out << "check,trials,max_rel_error,status\n";
  for (const auto& r : rows) {
    out << r.name << "," << r.trials << "," << real(r.max_rel_error) << "," << (r.passed ? "pass" : "FAIL") << "\n";
    ok = ok && r.passed;
  }
  return ok;
}

}  // namespace ncood
