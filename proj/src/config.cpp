#include "ncood/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "ncood/error.hpp"

namespace ncood {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

std::uint64_t parse_u64(std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

double parse_real(std::string_view v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError("expected a finite number, got '" + std::string(v) + "'");
  return out;
}

std::vector<std::size_t> parse_dims(std::string_view v) {
  std::vector<std::size_t> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    const auto item = trim(v.substr(0, comma));
    out.push_back(parse_size(item));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, std::string_view, const std::filesystem::path&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Get>
Key size_key(std::string name, Get field) {
  return {name, [field](RunConfig& c, std::string_view v, const auto&) { field(c) = parse_size(v); },
          [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Key real_key(std::string name, Get field) {
  return {name, [field](RunConfig& c, std::string_view v, const auto&) { field(c) = parse_real(v); },
          [field](const RunConfig& c) { return real(field(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Key seed_key(std::string name, Get field) {
  return {name, [field](RunConfig& c, std::string_view v, const auto&) { field(c) = parse_u64(v); },
          [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Key path_key(std::string name, Get field) {
  return {name,
          [field](RunConfig& c, std::string_view v, const std::filesystem::path& base) {
            std::filesystem::path p{std::string(v)};
            field(c) = p.is_relative() && !base.empty() ? base / p : p;
          },
          [field](const RunConfig& c) { return field(const_cast<RunConfig&>(c)).string(); }};
}

template <class Get>
Key mode_key(std::string name, Get field) {
  return {name, [field](RunConfig& c, std::string_view v, const auto&) { field(c) = parse_outlier_mode(v); },
          [field](const RunConfig& c) { return std::string(to_string(field(const_cast<RunConfig&>(c)))); }};
}

#define F(expr) [](RunConfig& c) -> auto& { return expr; }

const std::vector<Key>& keys() {
  static const std::vector<Key> k = [] {
    std::vector<Key> v;
    // fine-tuning
    v.push_back(size_key("epochs", F(c.train.epochs)));
    v.push_back(size_key("switch_epoch", F(c.train.switch_epoch)));
    v.push_back(size_key("id_batch", F(c.train.id_batch)));
    v.push_back(size_key("ood_batch", F(c.train.ood_batch)));
    v.push_back(real_key("lr0", F(c.train.lr0)));
    v.push_back(real_key("momentum", F(c.train.momentum)));
    v.push_back(real_key("weight_decay", F(c.train.weight_decay)));
    v.push_back(real_key("lambda", F(c.train.weights.lambda)));
    v.push_back(real_key("alpha", F(c.train.weights.alpha)));
    v.push_back(real_key("beta", F(c.train.weights.beta)));
    v.push_back(seed_key("seed", F(c.train.seed)));
    v.push_back({"loss_variant",
                 [](RunConfig& c, std::string_view s, const auto&) { c.train.variant = parse_loss_variant(s); },
                 [](const RunConfig& c) { return std::string(to_string(c.train.variant)); }});
    // warm-up
    v.push_back(size_key("warmup_epochs", F(c.warmup.epochs)));
    v.push_back(real_key("warmup_lr", F(c.warmup.lr)));
    v.push_back(size_key("warmup_batch", F(c.warmup.batch)));
    // model
    v.push_back({"hidden_dims", [](RunConfig& c, std::string_view s, const auto&) { c.hidden_dims = parse_dims(s); },
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.hidden_dims.size(); ++i)
                     out += (i ? "," : "") + std::to_string(c.hidden_dims[i]);
                   return out;
                 }});
    v.push_back(size_key("feature_dim", F(c.feature_dim)));
    // data generation
    v.push_back(size_key("num_classes", F(c.data.num_classes)));
    v.push_back(size_key("dim", F(c.data.dim)));
    v.push_back(size_key("n_train_per_class", F(c.data.n_train_per_class)));
    v.push_back(size_key("n_test_per_class", F(c.data.n_test_per_class)));
    v.push_back(real_key("mean_scale", F(c.data.mean_scale)));
    v.push_back(real_key("sigma", F(c.data.sigma)));
    v.push_back(size_key("aux_count", F(c.data.aux_count)));
    v.push_back(mode_key("aux_mode", F(c.data.aux_mode)));
    v.push_back(real_key("aux_shift", F(c.data.aux_params.shift)));
    v.push_back(real_key("aux_sigma", F(c.data.aux_params.sigma)));
    v.push_back(real_key("aux_radius_min", F(c.data.aux_params.radius_min)));
    v.push_back(real_key("aux_radius_max", F(c.data.aux_params.radius_max)));
    v.push_back(size_key("aux_components", F(c.data.aux_params.components)));
    v.push_back(size_key("test_count", F(c.data.test_count)));
    v.push_back(mode_key("test_mode", F(c.data.test_mode)));
    v.push_back(real_key("test_shift", F(c.data.test_params.shift)));
    v.push_back(real_key("test_sigma", F(c.data.test_params.sigma)));
    v.push_back(real_key("test_radius_min", F(c.data.test_params.radius_min)));
    v.push_back(real_key("test_radius_max", F(c.data.test_params.radius_max)));
    v.push_back(size_key("test_components", F(c.data.test_params.components)));
    v.push_back(seed_key("data_seed", F(c.data_seed)));
    // files
    v.push_back(path_key("id_train", F(c.id_train)));
    v.push_back(path_key("ood_aux", F(c.ood_aux)));
    v.push_back({"init_checkpoint",
                 [](RunConfig& c, std::string_view s, const std::filesystem::path& base) {
                   std::filesystem::path p{std::string(s)};
                   c.init_checkpoint = p.is_relative() && !base.empty() ? base / p : p;
                 },
                 [](const RunConfig& c) { return c.init_checkpoint ? c.init_checkpoint->string() : std::string(); }});
    v.push_back(path_key("out_dir", F(c.out_dir)));
    return v;
  }();
  return k;
}

#undef F

}  // namespace

void RunConfig::validate() const {
  train.validate();
  data.validate();
  if (hidden_dims.empty()) throw ConfigError("hidden_dims needs at least one layer width");
  for (auto h : hidden_dims)
    if (h == 0) throw ConfigError("hidden_dims entries must be positive");
  if (feature_dim == 0) throw ConfigError("feature_dim must be positive");
  if (warmup.batch == 0) throw ConfigError("warmup_batch must be at least 1");
  if (!(warmup.lr >= 0.0)) throw ConfigError("warmup_lr must be non-negative");
}

std::vector<std::size_t> RunConfig::layer_dims(std::size_t input_dim) const {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(feature_dim);
  return dims;
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig c;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key{trim(line.substr(0, eq))};
    const auto value = trim(line.substr(eq + 1));
    const auto& table = keys();
    auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return k.name == key; });
    if (it == table.end()) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second)
      throw ConfigError("config line " + std::to_string(line_no) + ": key '" + key + "' given twice");
    if (value.empty() && key != "init_checkpoint")
      throw ConfigError("config line " + std::to_string(line_no) + ": missing value for '" + key + "'");
    try {
      if (key == "init_checkpoint" && value.empty())
        c.init_checkpoint.reset();
      else
        it->set(c, value, base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + " (" + key + "): " + e.what());
    }
  }
  c.validate();
  // Warm-up shares the fine-tuning optimizer settings and seed.
  c.warmup.momentum = c.train.momentum;
  c.warmup.weight_decay = c.train.weight_decay;
  c.warmup.seed = c.train.seed;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in || std::filesystem::is_directory(path)) throw IoError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(k.name);
  return out;
}

}  // namespace ncood
