#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ncood/rng.hpp"
#include "ncood/tensor.hpp"

namespace ncood {

struct DenseLayer {
  Tensor weight;  // out x in
  Tensor bias;    // out

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Plain (tape-free) forward results.
struct ModelOutputs {
  Tensor logits;    // n x C
  Tensor features;  // n x d_feat, the penultimate (post-relu) activations
};

// MLP classifier: relu hidden layers followed by a linear head whose rows are
// the class weights w_1..w_C. logits = features * W^T + b.
class Model {
 public:
  Model() = default;
  Model(std::vector<DenseLayer> hidden, DenseLayer head);

  // layer_dims = {d_in, h_1, ..., d_feat}. Hidden weights are drawn from
  // U(-sqrt(6/fan_in), sqrt(6/fan_in)) and head weights from
  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)); every bias starts at zero.
  static Model init(const std::vector<std::size_t>& layer_dims, std::size_t num_classes, std::uint64_t seed);

  std::size_t input_dim() const;
  std::size_t feature_dim() const { return head_.weight.cols(); }
  std::size_t num_classes() const { return head_.weight.rows(); }
  std::vector<std::size_t> layer_dims() const;

  const std::vector<DenseLayer>& hidden() const { return hidden_; }
  const DenseLayer& head() const { return head_; }
  DenseLayer& head() { return head_; }
  std::vector<DenseLayer>& hidden() { return hidden_; }

  // Parameters in a fixed order: hidden (weight, bias)..., head weight, head bias.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;

  ModelOutputs forward(const Tensor& x) const;

  friend bool operator==(const Model&, const Model&) = default;

 private:
  std::vector<DenseLayer> hidden_;
  DenseLayer head_;
};

// Model parameters recorded on a tape, same order as Model::parameters().
struct BoundModel {
  std::vector<Var> params;

  Var head_weight() const { return params[params.size() - 2]; }
  Var head_bias() const { return params.back(); }
};

struct ForwardVars {
  Var logits;
  Var features;
  std::vector<Var> preactivations;  // hidden layer inputs to relu
};

BoundModel bind(Tape& tape, const Model& model, bool requires_grad = true);
ForwardVars forward(Tape& tape, const BoundModel& bound, const Tensor& x);

struct NormalizedWeights {
  Tensor rows;                   // C x d_feat, unit rows (zero where degenerate)
  std::vector<bool> degenerate;  // one flag per class

  bool any_degenerate() const;
};

NormalizedWeights normalized_class_weights(const Model& model);

// --- checkpoints --------------------------------------------------------------
//
// Binary little-endian layout:
//   "NCOODCKP"                      8-byte magic
//   u32 version (= 1)
//   u32 stage                       0 = not fine-tuning, 1, 2
//   u64 epoch                       completed epochs
//   u64 config fingerprint          0 when not produced by the trainer
//   u64 num_classes, u64 L, u64 dims[L]
//   f64 parameters[...]             Model::parameters() order, row-major
//   u64 rng state[4]                id-batch stream
//   u64 rng state[4]                outlier stream
//   u64 outlier cursor, u64 n, u64 outlier order[n]
//   u8  has_momentum, then f64 momentum[...] in parameter order
//   "NCOODEND"                      8-byte trailer
struct CheckpointMeta {
  std::uint32_t stage = 0;
  std::uint64_t epoch = 0;
  std::uint64_t config_fingerprint = 0;
  Rng::State rng_state{};
  Rng::State ood_rng_state{};
  std::uint64_t ood_cursor = 0;
  std::vector<std::uint64_t> ood_order;
  std::vector<Tensor> momentum;  // empty, or one tensor per parameter

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  Model model;
  CheckpointMeta meta;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ncood
