#include "ncood/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "ncood/error.hpp"

namespace ncood {

void TrainConfig::validate() const {
  if (switch_epoch > epochs) throw ConfigError("switch_epoch must not exceed epochs");
  if (id_batch == 0 || ood_batch == 0) throw ConfigError("batch sizes must be at least 1");
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be a finite non-negative number");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  weights.validate();
}

std::uint64_t fingerprint(const TrainConfig& c) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu|%zu|%zu|%zu|%.17g|%.17g|%.17g|%.17g|%.17g|%.17g|%llu|%s", c.epochs,
                c.switch_epoch, c.id_batch, c.ood_batch, c.lr0, c.momentum, c.weight_decay, c.weights.lambda,
                c.weights.alpha, c.weights.beta, static_cast<unsigned long long>(c.seed),
                std::string(to_string(c.variant)).c_str());
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (const char* p = buf; *p; ++p) {
    h ^= static_cast<unsigned char>(*p);
    h *= 0x100000001b3ULL;
  }
  return h == 0 ? 1 : h;
}

double cosine_lr(std::size_t epoch, const TrainConfig& config) {
  if (config.epochs == 0) return config.lr0;
  if (epoch > config.epochs) throw ContractError("cosine_lr: epoch beyond schedule");
  const double t = static_cast<double>(epoch) / static_cast<double>(config.epochs);
  return config.lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr, double momentum,
              double weight_decay, SgdState& state) {
  if (params.size() != grads.size()) throw DimensionError("sgd_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i]->shape() != grads[i].shape()) throw DimensionError("sgd_step: gradient shape mismatch");
  if (state.velocity.empty())
    for (const auto* p : params) state.velocity.push_back(Tensor::zeros(p->shape()));
  if (state.velocity.size() != params.size()) throw DimensionError("sgd_step: optimizer state mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->data();
    auto v = state.velocity[i].data();
    const auto g = grads[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = g[k] + weight_decay * theta[k];
      v[k] = momentum * v[k] + gk;
      theta[k] -= lr * v[k];
    }
  }
}

// --- log ----------------------------------------------------------------------

namespace {

std::string cell(std::optional<double> v) {
  if (!v) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

}  // namespace

std::string TrainLog::to_csv() const {
  std::string out = "epoch,lr,ce,oe,nc,orth,id_acc,aux_orth_mean,id_nc_cos\n";
  for (const auto& r : records) {
    const auto& l = r.losses;
    const auto nc = l.euclid_id ? l.euclid_id : l.nc;
    const auto orth = l.euclid_ood ? l.euclid_ood : l.orth;
    out += std::to_string(r.epoch) + "," + cell(r.lr) + "," + cell(l.ce) + "," + cell(l.oe) + "," + cell(nc) + "," +
           cell(orth) + "," + cell(r.id_acc) + "," + cell(r.aux_orth_mean) + "," + cell(r.id_nc_cos) + "\n";
  }
  return out;
}

void TrainLog::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write training log '" + path.string() + "'");
  out << to_csv();
  if (!out) throw IoError("write failed for training log '" + path.string() + "'");
}

// --- outlier stream -------------------------------------------------------------

std::vector<std::size_t> OutlierStream::next(std::size_t count) {
  std::vector<std::size_t> out;
  out.reserve(count);
  while (out.size() < count) {
    if (cursor_ >= order_.size()) {
      order_ = rng_.permutation(size_);
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

void OutlierStream::restore(Rng rng, std::vector<std::size_t> order, std::size_t cursor) {
  if (cursor > order.size()) throw FormatError("outlier stream cursor beyond its order");
  for (auto i : order)
    if (i >= size_) throw FormatError("outlier stream order does not match the auxiliary set size");
  rng_ = rng;
  order_ = std::move(order);
  cursor_ = cursor;
}

// --- trainer --------------------------------------------------------------------

namespace {

void check_data(const Model& model, const LabeledDataset& id, const OutlierDataset* aux, const TrainConfig& cfg) {
  cfg.validate();
  id.validate();
  if (id.dim() != model.input_dim())
    throw DimensionError("ID data width " + std::to_string(id.dim()) + " does not match model input " +
                         std::to_string(model.input_dim()));
  if (id.num_classes > model.num_classes())
    throw DimensionError("ID data has more classes than the model head");
  if (aux) {
    aux->validate();
    if (aux->role != OutlierRole::auxiliary)
      throw ContractError("training requires auxiliary outliers; test outliers must not be used for fitting");
    if (aux->dim() != id.dim()) throw DimensionError("auxiliary outliers and ID data differ in width");
  } else if (variant_mask(cfg.variant).needs_outliers()) {
    throw ContractError("loss variant '" + std::string(to_string(cfg.variant)) + "' needs auxiliary outliers");
  }
}

}  // namespace

Trainer::Trainer(Model model, const LabeledDataset& id_data, const OutlierDataset* aux, TrainConfig config)
    : model_(std::move(model)),
      id_(&id_data),
      aux_(aux),
      config_(config),
      id_rng_(derive_seed(config.seed, 1)),
      ood_(aux ? aux->size() : 0, Rng(derive_seed(config.seed, 2))) {
  check_data(model_, id_data, aux, config_);
}

Trainer Trainer::from_checkpoint(const Checkpoint& ck, const LabeledDataset& id_data, const OutlierDataset* aux,
                                 TrainConfig config) {
  if (ck.meta.config_fingerprint != fingerprint(config))
    throw ConfigError("checkpoint was written under a different training configuration");
  if (ck.meta.epoch > config.epochs) throw FormatError("checkpoint epoch lies beyond the configured schedule");
  Trainer t(ck.model, id_data, aux, config);
  t.epoch_ = ck.meta.epoch;
  t.last_stage_ = static_cast<int>(ck.meta.stage);
  t.id_rng_ = Rng::from_state(ck.meta.rng_state);
  std::vector<std::size_t> order(ck.meta.ood_order.begin(), ck.meta.ood_order.end());
  t.ood_.restore(Rng::from_state(ck.meta.ood_rng_state), std::move(order), ck.meta.ood_cursor);
  t.sgd_.velocity = ck.meta.momentum;
  return t;
}

int Trainer::stage_of(std::size_t epoch) const { return epoch < config_.switch_epoch ? 1 : 2; }

const EpochRecord& Trainer::run_epoch() {
  if (done()) throw ContractError("run_epoch: training already finished");
  EpochRecord rec;
  rec.epoch = epoch_;
  rec.stage = stage_of(epoch_);
  rec.lr = cosine_lr(epoch_, config_);

  LossBreakdown sums;
  std::size_t n_batches = 0;
  const auto add_opt = [](std::optional<double>& acc, const std::optional<double>& v) {
    if (v) acc = acc.value_or(0.0) + *v;
  };

  for (const auto& idx : batches(id_->size(), config_.id_batch, id_rng_)) {
    const LabeledDataset batch = id_->subset(idx);
    Tensor ood_x;
    if (aux_) ood_x = aux_->features.select_rows(ood_.next(std::min(config_.ood_batch, aux_->size())));

    Tape tape;
    const BoundModel bound = bind(tape, model_);
    const auto loss = composite_loss(rec.stage, config_.variant, config_.weights, tape, bound, batch.features,
                                     batch.labels, aux_ ? &ood_x : nullptr);
    tape.backward(loss.total);

    std::vector<Tensor> grads;
    for (const auto& p : bound.params) grads.push_back(p.grad());
    const auto params = model_.parameters();
    sgd_step(params, grads, rec.lr, config_.momentum, config_.weight_decay, sgd_);

    const auto& b = loss.breakdown;
    sums.ce += b.ce;
    sums.total += b.total;
    add_opt(sums.oe, b.oe);
    add_opt(sums.nc, b.nc);
    add_opt(sums.orth, b.orth);
    add_opt(sums.euclid_id, b.euclid_id);
    add_opt(sums.euclid_ood, b.euclid_ood);
    ++n_batches;
  }

  const double inv = 1.0 / static_cast<double>(n_batches);
  const auto scale_opt = [inv](std::optional<double>& v) {
    if (v) *v *= inv;
  };
  sums.ce *= inv;
  sums.total *= inv;
  scale_opt(sums.oe);
  scale_opt(sums.nc);
  scale_opt(sums.orth);
  scale_opt(sums.euclid_id);
  scale_opt(sums.euclid_ood);
  rec.losses = sums;
  diagnostics(rec);

  ++epoch_;
  last_stage_ = rec.stage;
  log_.records.push_back(rec);
  return log_.records.back();
}

void Trainer::diagnostics(EpochRecord& rec) const {
  const auto out = model_.forward(id_->features);
  const auto w = normalized_class_weights(model_).rows;
  std::size_t correct = 0;
  double cos_sum = 0.0;
  for (std::size_t i = 0; i < id_->size(); ++i) {
    const auto row = out.logits.row(i);
    const auto pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (pred == id_->labels[i]) ++correct;
    const auto z = out.features.row(i);
    double zz = 0.0, zw = 0.0;
    const auto wy = w.row(static_cast<std::size_t>(id_->labels[i]));
    for (std::size_t k = 0; k < z.size(); ++k) {
      zz += z[k] * z[k];
      zw += z[k] * wy[k];
    }
    const double n = std::sqrt(zz);
    if (n > kNormEpsilon) cos_sum += zw / n;
  }
  rec.id_acc = static_cast<double>(correct) / static_cast<double>(id_->size());
  rec.id_nc_cos = cos_sum / static_cast<double>(id_->size());
  if (aux_) {
    const auto feats = model_.forward(aux_->features).features;
    Tape tape;
    rec.aux_orth_mean = orth_loss(tape.constant(feats), tape.constant(model_.head().weight)).value().item();
  }
}

void Trainer::run_until(std::size_t epoch) {
  const std::size_t stop = std::min(epoch, config_.epochs);
  while (epoch_ < stop) run_epoch();
}

CheckpointMeta Trainer::checkpoint_meta() const {
  CheckpointMeta meta;
  meta.stage = static_cast<std::uint32_t>(last_stage_);
  meta.epoch = epoch_;
  meta.config_fingerprint = fingerprint(config_);
  meta.rng_state = id_rng_.state();
  meta.ood_rng_state = ood_.rng().state();
  meta.ood_cursor = ood_.cursor();
  meta.ood_order.assign(ood_.order().begin(), ood_.order().end());
  meta.momentum = sgd_.velocity;
  return meta;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  ncood::save_checkpoint(model_, checkpoint_meta(), path);
}

TrainResult train(Model model, const LabeledDataset& id_data, const OutlierDataset& aux, const TrainConfig& config) {
  Trainer t(std::move(model), id_data, &aux, config);
  t.run();
  return {t.model(), t.log()};
}

TrainResult resume(const std::filesystem::path& checkpoint_path, const LabeledDataset& id_data,
                   const OutlierDataset& aux, const TrainConfig& config) {
  const auto ck = load_checkpoint(checkpoint_path);
  Trainer t = Trainer::from_checkpoint(ck, id_data, &aux, config);
  t.run();
  return {t.model(), t.log()};
}

TrainResult warmup(Model model, const LabeledDataset& id_data, const WarmupConfig& config) {
  TrainConfig tc;
  tc.epochs = config.epochs;
  tc.switch_epoch = config.epochs;
  tc.id_batch = config.batch;
  tc.lr0 = config.lr;
  tc.momentum = config.momentum;
  tc.weight_decay = config.weight_decay;
  tc.seed = config.seed;
  tc.variant = LossVariant::ce_only;
  Trainer t(std::move(model), id_data, nullptr, tc);
  t.run();
  return {t.model(), t.log()};
}

}  // namespace ncood
