#include "ncood/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "ncood/error.hpp"

namespace ncood {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

void check_layer(const DenseLayer& l, const char* what) {
  if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.size() != l.weight.rows())
    throw DimensionError(std::string(what) + ": weight/bias shapes disagree");
}

DenseLayer uniform_layer(std::size_t in, std::size_t out, double bound, Rng& rng) {
  DenseLayer l{Tensor::zeros({out, in}), Tensor::zeros({out})};
  for (auto& w : l.weight.data()) w = rng.uniform(-bound, bound);
  return l;
}

}  // namespace

Model::Model(std::vector<DenseLayer> hidden, DenseLayer head) : hidden_(std::move(hidden)), head_(std::move(head)) {
  check_layer(head_, "head");
  std::size_t width = 0;
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    check_layer(hidden_[i], "hidden layer");
    if (i > 0 && hidden_[i].weight.cols() != width)
      throw DimensionError("hidden layer " + std::to_string(i) + " input width does not match previous layer");
    width = hidden_[i].weight.rows();
  }
  if (!hidden_.empty() && head_.weight.cols() != width)
    throw DimensionError("head input width does not match the last hidden layer");
  if (feature_dim() <= num_classes())
    throw ConfigError("feature dimension " + std::to_string(feature_dim()) + " must exceed class count " +
                      std::to_string(num_classes()));
}

Model Model::init(const std::vector<std::size_t>& layer_dims, std::size_t num_classes, std::uint64_t seed) {
  if (layer_dims.size() < 2) throw ConfigError("layer_dims needs an input width and at least one hidden width");
  for (auto d : layer_dims)
    if (d == 0) throw ConfigError("layer widths must be positive");
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  if (layer_dims.back() <= num_classes)
    throw ConfigError("penultimate width d_feat=" + std::to_string(layer_dims.back()) +
                      " must exceed the class count C=" + std::to_string(num_classes));
  Rng rng(seed);
  std::vector<DenseLayer> hidden;
  for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) {
    const double fan_in = static_cast<double>(layer_dims[i]);
    hidden.push_back(uniform_layer(layer_dims[i], layer_dims[i + 1], std::sqrt(6.0 / fan_in), rng));
  }
  const double fan_in = static_cast<double>(layer_dims.back());
  DenseLayer head = uniform_layer(layer_dims.back(), num_classes, 1.0 / std::sqrt(fan_in), rng);
  return Model(std::move(hidden), std::move(head));
}

std::size_t Model::input_dim() const { return hidden_.empty() ? head_.weight.cols() : hidden_.front().weight.cols(); }

std::vector<std::size_t> Model::layer_dims() const {
  std::vector<std::size_t> dims{input_dim()};
  for (const auto& l : hidden_) dims.push_back(l.weight.rows());
  return dims;
}

std::vector<Tensor*> Model::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : hidden_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&head_.weight);
  out.push_back(&head_.bias);
  return out;
}

std::vector<const Tensor*> Model::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& l : hidden_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&head_.weight);
  out.push_back(&head_.bias);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

ModelOutputs Model::forward(const Tensor& x) const {
  Tape tape;
  const auto bound = bind(tape, *this, false);
  const auto out = ncood::forward(tape, bound, x);
  return {out.logits.value(), out.features.value()};
}

BoundModel bind(Tape& tape, const Model& model, bool requires_grad) {
  BoundModel b;
  for (const auto* p : model.parameters()) b.params.push_back(tape.leaf(*p, requires_grad));
  return b;
}

ForwardVars forward(Tape& tape, const BoundModel& bound, const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("forward: input must be an n x d matrix");
  const std::size_t n_hidden = (bound.params.size() - 2) / 2;
  const std::size_t in_width = n_hidden ? bound.params[0].value().cols() : bound.head_weight().value().cols();
  if (x.cols() != in_width)
    throw DimensionError("forward: input width " + std::to_string(x.cols()) + " does not match model input " +
                         std::to_string(in_width));
  ForwardVars out;
  Var h = tape.constant(x);
  for (std::size_t i = 0; i < n_hidden; ++i) {
    Var pre = add_bias(matmul_nt(h, bound.params[2 * i]), bound.params[2 * i + 1]);
    out.preactivations.push_back(pre);
    h = relu(pre);
  }
  out.features = h;
  out.logits = add_bias(matmul_nt(h, bound.head_weight()), bound.head_bias());
  return out;
}

bool NormalizedWeights::any_degenerate() const {
  for (bool d : degenerate)
    if (d) return true;
  return false;
}

NormalizedWeights normalized_class_weights(const Model& model) {
  Tape tape;
  NormalizedWeights out;
  out.rows = l2_normalize(tape.constant(model.head().weight), &out.degenerate).value();
  return out;
}

// --- checkpoint I/O -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'N', 'C', 'O', 'O', 'D', 'C', 'K', 'P'};
constexpr char kTrailer[8] = {'N', 'C', 'O', 'O', 'D', 'E', 'N', 'D'};

class Writer {
 public:
  template <class T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    bytes_.insert(bytes_.end(), buf, buf + sizeof(T));
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void tensor(const Tensor& t) {
    for (double v : t.data()) put(v);
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void expect(const char (&tag)[8], const char* what) {
    need(8);
    if (std::memcmp(bytes_.data() + pos_, tag, 8) != 0) throw FormatError(std::string("checkpoint: bad ") + what);
    pos_ += 8;
  }
  void fill(Tensor& t) {
    for (auto& v : t.data()) v = get<double>();
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint: truncated payload");
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

constexpr std::uint64_t kMaxCount = std::uint64_t{1} << 32;

}  // namespace

void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  const auto params = model.parameters();
  if (!meta.momentum.empty()) {
    if (meta.momentum.size() != params.size()) throw DimensionError("checkpoint: momentum count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
      if (meta.momentum[i].shape() != params[i]->shape())
        throw DimensionError("checkpoint: momentum shape mismatch");
  }
  Writer w;
  w.raw(kMagic, 8);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(meta.stage);
  w.put<std::uint64_t>(meta.epoch);
  w.put<std::uint64_t>(meta.config_fingerprint);
  w.put<std::uint64_t>(model.num_classes());
  const auto dims = model.layer_dims();
  w.put<std::uint64_t>(dims.size());
  for (auto d : dims) w.put<std::uint64_t>(d);
  for (const auto* p : params) w.tensor(*p);
  for (auto s : meta.rng_state) w.put<std::uint64_t>(s);
  for (auto s : meta.ood_rng_state) w.put<std::uint64_t>(s);
  w.put<std::uint64_t>(meta.ood_cursor);
  w.put<std::uint64_t>(meta.ood_order.size());
  for (auto v : meta.ood_order) w.put<std::uint64_t>(v);
  w.put<std::uint8_t>(meta.momentum.empty() ? 0 : 1);
  for (const auto& m : meta.momentum) w.tensor(m);
  w.raw(kTrailer, 8);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  out.flush();
  if (!out) throw IoError("write failed for checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in || std::filesystem::is_directory(path)) throw IoError("cannot open checkpoint '" + path.string() + "'");
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

  r.expect(kMagic, "magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  ck.meta.stage = r.get<std::uint32_t>();
  if (ck.meta.stage > 2) throw FormatError("checkpoint: invalid stage marker");
  ck.meta.epoch = r.get<std::uint64_t>();
  ck.meta.config_fingerprint = r.get<std::uint64_t>();
  const auto num_classes = r.get<std::uint64_t>();
  const auto n_dims = r.get<std::uint64_t>();
  if (n_dims < 2 || n_dims > 64 || num_classes < 2 || num_classes > kMaxCount)
    throw FormatError("checkpoint: invalid dimension table");
  std::vector<std::size_t> dims(n_dims);
  for (auto& d : dims) {
    d = r.get<std::uint64_t>();
    if (d == 0 || d > kMaxCount) throw FormatError("checkpoint: invalid layer width");
  }
  if (dims.back() <= num_classes) throw FormatError("checkpoint: feature width must exceed class count");

  std::vector<DenseLayer> hidden;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer l{Tensor::zeros({dims[i + 1], dims[i]}), Tensor::zeros({dims[i + 1]})};
    r.fill(l.weight);
    r.fill(l.bias);
    hidden.push_back(std::move(l));
  }
  DenseLayer head{Tensor::zeros({num_classes, dims.back()}), Tensor::zeros({num_classes})};
  r.fill(head.weight);
  r.fill(head.bias);
  ck.model = Model(std::move(hidden), std::move(head));

  for (auto& s : ck.meta.rng_state) s = r.get<std::uint64_t>();
  for (auto& s : ck.meta.ood_rng_state) s = r.get<std::uint64_t>();
  ck.meta.ood_cursor = r.get<std::uint64_t>();
  const auto n_order = r.get<std::uint64_t>();
  if (n_order > kMaxCount) throw FormatError("checkpoint: invalid outlier order length");
  ck.meta.ood_order.resize(n_order);
  for (auto& v : ck.meta.ood_order) v = r.get<std::uint64_t>();
  const auto has_momentum = r.get<std::uint8_t>();
  if (has_momentum > 1) throw FormatError("checkpoint: invalid momentum flag");
  if (has_momentum)
    for (const auto* p : ck.model.parameters()) {
      Tensor m = Tensor::zeros(p->shape());
      r.fill(m);
      ck.meta.momentum.push_back(std::move(m));
    }
  r.expect(kTrailer, "trailer");
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes after trailer");
  return ck;
}

}  // namespace ncood
