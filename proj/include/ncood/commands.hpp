#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ncood/benchmark.hpp"
#include "ncood/config.hpp"
#include "ncood/detection.hpp"
#include "ncood/gradcheck.hpp"

namespace ncood {

// Writes id_train.csv, id_test.csv, ood_aux.csv and ood_test.csv into out_dir.
void cmd_gen_data(const BenchmarkSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir,
                  std::ostream& log);

struct TrainOptions {
  std::optional<std::filesystem::path> resume;  // checkpoint to continue from
  std::optional<std::size_t> stop_after;        // stop once this many epochs are done
};

// Warm-up (unless init_checkpoint is set or resuming), then fine-tuning.
// Writes checkpoint.bin, train_log.csv and config.txt into out_dir, plus
// warmup.bin / warmup_log.csv when a warm-up ran. A resumed run keeps the
// first `epoch` rows of an existing train_log.csv so the final log matches an
// uninterrupted one.
void cmd_train(const RunConfig& config, const TrainOptions& options, std::ostream& log);

struct DetectionRow {
  ScoreKind kind;
  std::string dataset;
  DetectionReport report;
};

// score_kind is "msp", "combined" or "all". CSV
// `score_kind,dataset,fpr95,auroc,threshold`, one row per (kind, OOD file).
std::vector<DetectionRow> cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& id_test,
                                   const std::vector<std::filesystem::path>& ood_tests, const std::string& score_kind);
std::string detection_csv(const std::vector<DetectionRow>& rows);

// CSV `metric,id,ood,diff` with rows euclidean, cosine, reconstruction.
SeparationTriplet cmd_separation(const std::filesystem::path& checkpoint, const std::filesystem::path& id_test,
                                 const std::filesystem::path& ood_test);
std::string separation_csv(const SeparationTriplet& t);

// Projection coordinates for every ID test row (population id:<label>) and
// OOD row. With dims = 3 the third axis is the top principal direction of the
// normalized OOD features.
std::vector<ProjectionBlock> cmd_project(const std::filesystem::path& checkpoint, const std::filesystem::path& id_test,
                                         const std::filesystem::path& ood_test, std::size_t dims, std::ostream& log);

// Prints `check,trials,max_rel_error,status` rows; true when all pass.
bool cmd_gradcheck(const GradCheckSuiteOptions& options, std::ostream& out);

// Writes `text` to `path`, or to `fallback` when path is empty.
void write_text(const std::filesystem::path& path, const std::string& text, std::ostream& fallback);

}  // namespace ncood
