#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ncood/dataset.hpp"
#include "ncood/losses.hpp"
#include "ncood/model.hpp"
#include "ncood/rng.hpp"

namespace ncood {

// Fine-tuning hyperparameters. Defaults are the 50-epoch recipe: SGD with
// momentum 0.9, weight decay 5e-4, cosine schedule from 0.07, NC/Orth terms
// switched on at epoch 25.
struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t switch_epoch = 25;
  std::size_t id_batch = 128;
  std::size_t ood_batch = 256;
  double lr0 = 0.07;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  LossWeights weights;
  std::uint64_t seed = 0;
  LossVariant variant = LossVariant::ours;

  void validate() const;
};

// Stable hash of every field; stored in checkpoints to reject resuming with
// a different configuration.
std::uint64_t fingerprint(const TrainConfig& config);

// lr0 * (1 + cos(pi * epoch / epochs)) / 2, defined for 0 <= epoch <= epochs.
double cosine_lr(std::size_t epoch, const TrainConfig& config);

struct SgdState {
  std::vector<Tensor> velocity;  // empty until the first step
};

// Coupled weight decay with heavy-ball momentum:
//   g = grad + wd * theta;  v = momentum * v + g;  theta -= lr * v
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr, double momentum,
              double weight_decay, SgdState& state);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  int stage = 1;
  LossBreakdown losses;  // batch means; absent terms were not in the objective
  double id_acc = 0.0;   // accuracy over the whole ID training set after the epoch
  std::optional<double> aux_orth_mean;  // orth_loss over the whole auxiliary set
  double id_nc_cos = 0.0;               // mean cos(z_ID, w_y) over the ID training set
};

struct TrainLog {
  std::vector<EpochRecord> records;

  // Header `epoch,lr,ce,oe,nc,orth,id_acc,aux_orth_mean,id_nc_cos`; absent
  // terms are empty cells. The Euclidean variant reports its ID term under
  // `nc` and its OOD term under `orth`.
  std::string to_csv() const;
  void save(const std::filesystem::path& path) const;
};

// Infinite stream over outlier indices: one fresh permutation per pass.
class OutlierStream {
 public:
  OutlierStream() = default;
  OutlierStream(std::size_t size, Rng rng) : size_(size), rng_(rng) {}

  std::vector<std::size_t> next(std::size_t count);

  const Rng& rng() const { return rng_; }
  std::size_t cursor() const { return cursor_; }
  const std::vector<std::size_t>& order() const { return order_; }
  void restore(Rng rng, std::vector<std::size_t> order, std::size_t cursor);

 private:
  std::size_t size_ = 0;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Two-stage fine-tuning loop. Each epoch walks a shuffled pass over the ID
// data; every ID batch is paired with the next outlier batch from an
// independently cycling stream. Stage 1 runs for epochs < switch_epoch.
class Trainer {
 public:
  // `aux` may be null only for objectives that never touch outliers
  // (ce-only). Its role must be auxiliary.
  Trainer(Model model, const LabeledDataset& id_data, const OutlierDataset* aux, TrainConfig config);

  // Continues from a checkpoint written by save_checkpoint with the same config.
  static Trainer from_checkpoint(const Checkpoint& checkpoint, const LabeledDataset& id_data,
                                 const OutlierDataset* aux, TrainConfig config);

  int stage_of(std::size_t epoch) const;
  std::size_t epoch() const { return epoch_; }
  bool done() const { return epoch_ >= config_.epochs; }

  const EpochRecord& run_epoch();
  void run_until(std::size_t epoch);
  void run() { run_until(config_.epochs); }

  CheckpointMeta checkpoint_meta() const;
  void save_checkpoint(const std::filesystem::path& path) const;

  const Model& model() const { return model_; }
  const TrainLog& log() const { return log_; }
  const TrainConfig& config() const { return config_; }

 private:
  void diagnostics(EpochRecord& rec) const;

  Model model_;
  const LabeledDataset* id_;
  const OutlierDataset* aux_;
  TrainConfig config_;
  std::size_t epoch_ = 0;
  int last_stage_ = 0;
  Rng id_rng_;
  OutlierStream ood_;
  SgdState sgd_;
  TrainLog log_;
};

struct TrainResult {
  Model model;
  TrainLog log;
};

TrainResult train(Model model, const LabeledDataset& id_data, const OutlierDataset& aux, const TrainConfig& config);

TrainResult resume(const std::filesystem::path& checkpoint_path, const LabeledDataset& id_data,
                   const OutlierDataset& aux, const TrainConfig& config);

// CE-only warm-up standing in for pretraining: `epochs` epochs of SGD from
// lr `lr` on a cosine schedule, same optimizer settings as fine-tuning.
struct WarmupConfig {
  std::size_t epochs = 20;
  double lr = 0.1;
  std::size_t batch = 128;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::uint64_t seed = 0;
};

TrainResult warmup(Model model, const LabeledDataset& id_data, const WarmupConfig& config);

}  // namespace ncood
