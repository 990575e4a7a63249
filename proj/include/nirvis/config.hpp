#pragma once

// Experiment configuration as flat dotted keys:
//
//     # comment
//     blend.alpha = 0.6
//     paths.features = feats.nvft
//
// Relative paths resolve against the config file's directory. Unknown keys
// are errors. to_text() emits every key in sorted order, so equal
// configurations serialize identically.

#include "nirvis/blend.hpp"
#include "nirvis/convnet.hpp"
#include "nirvis/core.hpp"
#include "nirvis/hallucinator.hpp"
#include "nirvis/lowrank.hpp"
#include "nirvis/patch_miner.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace nirvis {

struct ExperimentConfig {
  // paths
  std::string manifest;     // image mode
  std::string features;     // feature-file mode
  std::string weights_dir;  // pretrained networks; skips mining and training when set
  std::string out_dir = "nirvis_out";

  std::uint64_t seed = 1;
  int jobs = 1;

  int folds = 6;
  int test_fold = 0;

  MiningConfig mining{};
  TrainConfig train{};
  SlopeMode slopes = SlopeMode::PerChannel;
  std::int64_t max_pairs = 0;  // training pairs per network; 0 = all

  BlendConfig blend{};
  int feature_grid = 8;

  bool normalize = true;
  bool use_pca = true;
  int pca_dim = 1024;
  CcpConfig ccp{};

  bool hallucination = true;
  bool lowrank = true;
  int max_rank = 10;
  std::vector<double> alphas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  std::vector<std::string> keys() const;
  std::string to_text() const;
  /// Keys starting with any of `prefixes`, in to_text() form.
  std::string subtree(const std::vector<std::string>& prefixes) const;
  void validate(bool check_paths = true) const;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("key '" + key + "': cannot parse '" + v + "' as a number");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

inline std::string format_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<double>(key, item));
  }
  return out;
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field number_field(T ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*member = parse_number<T>(k, v); },
          [member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
            else return std::to_string(c.*member);
          }};
}

template <typename T>
Field nested_number(std::function<T&(ExperimentConfig&)> ref) {
  return {[ref](ExperimentConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_number<T>(k, v); },
          [ref](const ExperimentConfig& c) {
            const T& x = ref(const_cast<ExperimentConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) return format_double(x);
            else return std::to_string(x);
          }};
}

inline Field bool_field(std::function<bool&(ExperimentConfig&)> ref) {
  return {[ref](ExperimentConfig& c, const std::string& k, const std::string& v) { ref(c) = parse_bool(k, v); },
          [ref](const ExperimentConfig& c) { return std::string(ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false"); }};
}

inline Field string_field(std::string ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, const std::string&, const std::string& v) { c.*member = v; },
          [member](const ExperimentConfig& c) { return c.*member; }};
}

inline const std::map<std::string, Field>& fields() {
  using C = ExperimentConfig;
  static const std::map<std::string, Field> table = {
      {"paths.manifest", string_field(&C::manifest)},
      {"paths.features", string_field(&C::features)},
      {"paths.weights_dir", string_field(&C::weights_dir)},
      {"paths.out_dir", string_field(&C::out_dir)},
      {"seed", number_field(&C::seed)},
      {"jobs", number_field(&C::jobs)},
      {"protocol.folds", number_field(&C::folds)},
      {"protocol.test_fold", number_field(&C::test_fold)},
      {"mining.window", nested_number<int>([](C& c) -> int& { return c.mining.window; })},
      {"mining.stride", nested_number<int>([](C& c) -> int& { return c.mining.stride; })},
      {"mining.crop", nested_number<int>([](C& c) -> int& { return c.mining.crop; })},
      {"mining.sum_threshold", nested_number<double>([](C& c) -> double& { return c.mining.sum_threshold; })},
      {"mining.min_threshold", nested_number<double>([](C& c) -> double& { return c.mining.min_threshold; })},
      {"mining.target_total", nested_number<int>([](C& c) -> int& { return c.mining.target_total; })},
      {"mining.grid_regions", nested_number<int>([](C& c) -> int& { return c.mining.grid_regions; })},
      {"mining.flip", bool_field([](C& c) -> bool& { return c.mining.flip; })},
      {"hallucinator.epochs", nested_number<int>([](C& c) -> int& { return c.train.epochs; })},
      {"hallucinator.batch", nested_number<int>([](C& c) -> int& { return c.train.batch; })},
      {"hallucinator.learning_rate", nested_number<double>([](C& c) -> double& { return c.train.adam.learning_rate; })},
      {"hallucinator.beta1", nested_number<double>([](C& c) -> double& { return c.train.adam.beta1; })},
      {"hallucinator.beta2", nested_number<double>([](C& c) -> double& { return c.train.adam.beta2; })},
      {"hallucinator.epsilon", nested_number<double>([](C& c) -> double& { return c.train.adam.epsilon; })},
      {"hallucinator.max_iterations",
       nested_number<std::int64_t>([](C& c) -> std::int64_t& { return c.train.max_iterations; })},
      {"hallucinator.max_pairs", number_field(&C::max_pairs)},
      {"hallucinator.slopes",
       {[](C& c, const std::string& k, const std::string& v) {
          if (v == "per-channel") c.slopes = SlopeMode::PerChannel;
          else if (v == "shared") c.slopes = SlopeMode::Shared;
          else throw ConfigError("key '" + k + "': expected per-channel or shared");
        },
        [](const C& c) { return std::string(c.slopes == SlopeMode::Shared ? "shared" : "per-channel"); }}},
      {"blend.alpha", nested_number<double>([](C& c) -> double& { return c.blend.alpha; })},
      {"blend.sigma", nested_number<double>([](C& c) -> double& { return c.blend.sigma; })},
      {"blend.filter",
       {[](C& c, const std::string& k, const std::string& v) {
          if (v == "two-pass") c.blend.filter = BlendFilter::TwoPass;
          else if (v == "single-pass") c.blend.filter = BlendFilter::SinglePass;
          else throw ConfigError("key '" + k + "': expected two-pass or single-pass");
        },
        [](const C& c) { return std::string(c.blend.filter == BlendFilter::TwoPass ? "two-pass" : "single-pass"); }}},
      {"features.grid", number_field(&C::feature_grid)},
      {"embedding.normalize", bool_field([](C& c) -> bool& { return c.normalize; })},
      {"embedding.pca", bool_field([](C& c) -> bool& { return c.use_pca; })},
      {"embedding.pca_dim", number_field(&C::pca_dim)},
      {"ccp.max_outer_iters", nested_number<int>([](C& c) -> int& { return c.ccp.max_outer_iters; })},
      {"ccp.outer_tolerance", nested_number<double>([](C& c) -> double& { return c.ccp.outer_tolerance; })},
      {"ccp.inner_max_iters", nested_number<int>([](C& c) -> int& { return c.ccp.inner_max_iters; })},
      {"ccp.inner_step", nested_number<double>([](C& c) -> double& { return c.ccp.inner_step; })},
      {"ccp.inner_tolerance", nested_number<double>([](C& c) -> double& { return c.ccp.inner_tolerance; })},
      {"ccp.rank_tolerance", nested_number<double>([](C& c) -> double& { return c.ccp.rank_tolerance; })},
      {"ablation.hallucination", bool_field([](C& c) -> bool& { return c.hallucination; })},
      {"ablation.lowrank", bool_field([](C& c) -> bool& { return c.lowrank; })},
      {"report.max_rank", number_field(&C::max_rank)},
      {"sweep.alphas",
       {[](C& c, const std::string& k, const std::string& v) { c.alphas = parse_list(k, v); },
        [](const C& c) {
          std::string s;
          for (std::size_t i = 0; i < c.alphas.size(); ++i) s += (i ? "," : "") + format_double(c.alphas[i]);
          return s;
        }}},
  };
  return table;
}

}  // namespace config_detail

inline void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto& table = config_detail::fields();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown configuration key '" + key + "'");
  it->second.set(*this, key, config_detail::trim(value));
}

inline std::string ExperimentConfig::get(const std::string& key) const {
  const auto& table = config_detail::fields();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown configuration key '" + key + "'");
  return it->second.get(*this);
}

inline std::vector<std::string> ExperimentConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, f] : config_detail::fields()) out.push_back(k);
  return out;
}

inline std::string ExperimentConfig::to_text() const { return subtree({""}); }

inline std::string ExperimentConfig::subtree(const std::vector<std::string>& prefixes) const {
  std::string out;
  for (const auto& [k, f] : config_detail::fields())
    for (const auto& p : prefixes)
      if (k.rfind(p, 0) == 0) {
        out += k + " = " + f.get(*this) + "\n";
        break;
      }
  return out;
}

inline void ExperimentConfig::validate(bool check_paths) const {
  namespace fs = std::filesystem;
  if (manifest.empty() && features.empty()) throw ConfigError("set paths.manifest or paths.features");
  if (!manifest.empty() && !features.empty()) throw ConfigError("paths.manifest and paths.features are exclusive");
  if (check_paths) {
    if (!manifest.empty() && !fs::exists(manifest)) throw ConfigError("manifest '" + manifest + "' does not exist");
    if (!features.empty() && !fs::exists(features)) throw ConfigError("feature file '" + features + "' does not exist");
    if (!weights_dir.empty() && !fs::is_directory(weights_dir))
      throw ConfigError("weights directory '" + weights_dir + "' does not exist");
  }
  if (out_dir.empty()) throw ConfigError("paths.out_dir must not be empty");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (folds < 1) throw ConfigError("protocol.folds must be >= 1");
  if (test_fold < 0 || test_fold >= folds) throw ConfigError("protocol.test_fold must lie in [0, folds)");
  if (pca_dim < 1) throw ConfigError("embedding.pca_dim must be >= 1");
  if (max_rank < 1) throw ConfigError("report.max_rank must be >= 1");
  if (feature_grid < 1) throw ConfigError("features.grid must be >= 1");
  if (max_pairs < 0) throw ConfigError("hallucinator.max_pairs must be >= 0");
  if (!(blend.alpha >= 0.0 && blend.alpha <= 1.0)) throw ConfigError("blend.alpha must lie in [0, 1]");
  if (!(blend.sigma > 0.0)) throw ConfigError("blend.sigma must be positive");
  for (double a : alphas)
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("sweep.alphas entries must lie in [0, 1]");
  try {
    mining.validate();
    train.validate();
    ccp.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

/// Reads `key = value` lines into `config`; relative path values resolve
/// against the file's directory.
inline void load_config_file(const std::string& path, ExperimentConfig& config) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  const auto base = std::filesystem::path(path).parent_path();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = config_detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = config_detail::trim(t.substr(0, eq));
    std::string value = config_detail::trim(t.substr(eq + 1));
    if (key.rfind("paths.", 0) == 0 && !value.empty() && std::filesystem::path(value).is_relative())
      value = (base / value).lexically_normal().string();
    try {
      config.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig c;
  load_config_file(path, c);
  return c;
}

inline void save_config(const std::string& path, const ExperimentConfig& config) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << config.to_text();
}

}  // namespace nirvis
