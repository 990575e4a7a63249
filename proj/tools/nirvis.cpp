// nirvis command-line front end.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 stage failure.

#include "nirvis/config.hpp"
#include "nirvis/features_io.hpp"
#include "nirvis/hallucinator.hpp"
#include "nirvis/pipeline.hpp"
#include "nirvis/synthetic.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace nirvis;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> jobs;
  std::vector<std::string> overrides;  // key=value
  bool quiet = false;
};

// Key/value pairs collected from subcommand flags; applied after the config
// file and before --set overrides.
using FlagValues = std::vector<std::pair<std::string, std::string>>;

ExperimentConfig build_config(const GlobalOptions& g, const FlagValues& flags) {
  ExperimentConfig c;
  if (!g.config_path.empty()) load_config_file(g.config_path, c);
  for (const auto& [k, v] : flags) c.set(k, v);
  if (g.seed) c.seed = *g.seed;
  if (g.out_dir) c.out_dir = *g.out_dir;
  if (g.jobs) c.jobs = *g.jobs;
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return c;
}

template <typename T>
void add_flag_value(CLI::App* app, const std::string& flag, const std::string& key, FlagValues& values,
                    const std::string& help) {
  app->add_option_function<T>(
      flag, [&values, key](const T& v) { values.emplace_back(key, CLI::detail::to_string(v)); }, help);
}

Logger make_logger(const GlobalOptions& g) { return g.quiet ? silent_logger() : stderr_logger(); }

void print_file(const fs::path& p) {
  std::ifstream in(p);
  std::cout << in.rdbuf();
}

int cmd_mine(const ExperimentConfig& c, Logger log) {
  if (c.manifest.empty()) throw ConfigError("mine-patches needs paths.manifest");
  c.validate();
  PipelineContext ctx{c, std::move(log)};
  fs::create_directories(ctx.out());
  const auto faces = run_stage("align", [&] { return prepare_faces(c); });
  const auto mined = mine_stage(ctx, faces);
  std::cout << "mined " << mined.pairs.size() << " patch pairs -> " << (ctx.out() / "patches.nvpd").string() << '\n';
  return 0;
}

int cmd_train(const ExperimentConfig& c, const std::string& channel, const std::string& patches_path, Logger log) {
  const fs::path out = c.out_dir;
  const std::string path = patches_path.empty() ? (out / "patches.nvpd").string() : patches_path;
  if (!fs::exists(path)) throw ConfigError("patch dataset '" + path + "' not found; run mine-patches first");
  try {
    c.train.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  std::vector<Channel> channels;
  if (channel == "all") channels = {Channel::Y, Channel::Cb, Channel::Cr};
  else channels = {parse_channel(channel)};
  const auto patches = run_stage("train-hallucinator", [&] { return load_patch_dataset(path); });
  const auto subset = evenly_spaced(patches, c.max_pairs);
  fs::create_directories(out / "weights");
  for (Channel ch : channels) {
    run_stage("train-hallucinator", [&] {
      auto net = HallucinationNet<float>(hallucination_spec(ch, c.slopes), c.seed + static_cast<std::uint64_t>(ch));
      TrainConfig tc = c.train;
      tc.seed = c.seed * 31 + static_cast<std::uint64_t>(ch);
      const auto pairs = training_pairs(subset, ch);
      const auto result = train(net, pairs, tc);
      const std::string name(to_string(ch));
      save_net((out / "weights" / (name + ".nvhn")).string(), net);
      write_training_log((out / "weights" / ("train_" + name + ".csv")).string(), result.epoch_losses);
      log("train-hallucinator: " + name + " net trained on " + std::to_string(pairs.size()) + " pairs for " +
          std::to_string(result.iterations) + " iterations");
      return 0;
    });
  }
  std::cout << "weights written to " << (out / "weights").string() << '\n';
  return 0;
}

int cmd_hallucinate(const ExperimentConfig& c, const std::string& weights, const std::string& input,
                    const std::string& output, Logger log) {
  const fs::path out = c.out_dir;
  const fs::path wdir = !weights.empty() ? fs::path(weights) : !c.weights_dir.empty() ? fs::path(c.weights_dir) : out / "weights";
  if (!fs::exists(wdir / "Y.nvhn")) throw ConfigError("no networks in '" + wdir.string() + "'");
  if (!(c.blend.alpha >= 0.0 && c.blend.alpha <= 1.0) || !(c.blend.sigma > 0.0))
    throw ConfigError("alpha must lie in [0, 1] and sigma must be positive");
  const auto nets = run_stage("hallucinate", [&] { return load_nets(wdir); });
  auto run_one = [&](const Image& nir, const std::string& dest) {
    run_stage("hallucinate", [&] {
      auto h = hallucinate(nets, nir);
      for (const auto& w : h.warnings) log("hallucinate: warning: " + w);
      const Rgb rgb = finish_hallucination(h.ycc, nir, c.blend);
      write_pnm(dest, {rgb.r, rgb.g, rgb.b});
      return 0;
    });
    std::cout << dest << '\n';
  };
  if (!input.empty()) {
    const auto planes = run_stage("hallucinate", [&] { return read_pnm(input); });
    const Image nir = planes.size() == 3 ? rgb_to_ycbcr({planes[0], planes[1], planes[2]}).y : planes[0];
    run_one(nir, output.empty() ? (out / (fs::path(input).stem().string() + "_vis.ppm")).string() : output);
    return 0;
  }
  if (c.manifest.empty()) throw ConfigError("hallucinate needs --input or paths.manifest");
  const auto faces = run_stage("align", [&] { return prepare_faces(c); });
  const fs::path dir = output.empty() ? out / "hallucinated" : fs::path(output);
  fs::create_directories(dir);
  for (const auto& f : faces.nir) run_one(f.luma, (dir / (f.image_id + "_vis.ppm")).string());
  return 0;
}

int cmd_learn_embedding(const ExperimentConfig& c, bool use_hallucinated, bool all_subjects, Logger log) {
  if (c.features.empty()) throw ConfigError("learn-embedding needs paths.features (--features)");
  if (!fs::exists(c.features)) throw ConfigError("feature file '" + c.features + "' does not exist");
  const fs::path dir = fs::path(c.out_dir) / "embedding";
  auto records = run_stage("learn-embedding", [&] { return load_features(c.features); });
  const InputKind nir_kind = use_hallucinated ? InputKind::Hallucinated : InputKind::RawNir;
  std::vector<FeatureRecord> used;
  for (const auto& r : records)
    if (r.kind == InputKind::Vis || r.kind == nir_kind) used.push_back(r);
  if (!all_subjects) {
    const auto folds = FoldAssignment::by_order(distinct_subjects(used), c.folds);
    used = split_folds(used, folds, c.test_fold).train;
  }
  const auto learned = run_stage("learn-embedding", [&] { return learn_embedding(used, c); });
  fs::create_directories(dir);
  if (learned.model.pca) save_pca((dir / "pca.nvmx").string(), *learned.model.pca);
  save_transform((dir / "transform.nvmx").string(), learned.model.transform);
  log("learn-embedding: " + std::to_string(learned.ccp.outer_iterations) + " outer iterations, objective " +
      format_real(learned.ccp.objective_history.front()) + " -> " + format_real(learned.ccp.objective_history.back()));
  std::cout << "embedding written to " << dir.string() << '\n';
  return 0;
}

int cmd_evaluate(const ExperimentConfig& c, Logger log) {
  run_experiment(c, std::move(log));
  print_file(fs::path(c.out_dir) / "summary.txt");
  return 0;
}

int cmd_alpha_sweep(const ExperimentConfig& c, Logger log) {
  alpha_sweep(c, c.alphas, std::move(log));
  print_file(fs::path(c.out_dir) / "alpha_sweep.csv");
  return 0;
}

int cmd_report(const ExperimentConfig& c) {
  const fs::path out = c.out_dir;
  const auto report = run_stage("report", [&] { return report_from_disk(out); });
  run_stage("report", [&] {
    write_summary(out, report);
    return 0;
  });
  print_file(out / "summary.txt");
  return 0;
}

int cmd_make_fixture(const std::string& kind, const std::string& dir, int subjects, std::uint64_t seed) {
  fs::create_directories(dir);
  std::ofstream cfg(fs::path(dir) / "config.txt");
  if (kind == "faces") {
    synthetic::FaceDatasetConfig fc;
    fc.subjects = subjects;
    fc.seed = seed;
    synthetic::write_face_dataset((fs::path(dir) / "images").string(), fc);
    cfg << "paths.manifest = images/manifest.txt\npaths.out_dir = out\nprotocol.folds = " << std::min(subjects, 6)
        << "\n";
  } else if (kind == "features") {
    synthetic::PipelineFeatureConfig pc;
    pc.subjects = subjects;
    pc.seed = seed;
    store_features((fs::path(dir) / "features.nvft").string(), synthetic::make_pipeline_features(pc));
    cfg << "paths.features = features.nvft\npaths.out_dir = out\nprotocol.folds = " << std::min(subjects, 6) << "\n";
  } else {
    throw ConfigError("fixture kind must be 'faces' or 'features'");
  }
  std::cout << "fixture written to " << dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NIR-to-VIS cross-spectral face matching toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config_path, "Configuration file (flat dotted keys)");
  app.add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& v) { g.seed = v; }, "Random seed");
  app.add_option_function<std::string>("--out-dir", [&](const std::string& v) { g.out_dir = v; }, "Output directory");
  app.add_option_function<int>("--jobs", [&](const int& v) { g.jobs = v; }, "Worker threads");
  app.add_option("--set", g.overrides, "Override a configuration key (key=value)");
  app.add_flag("-q,--quiet", g.quiet, "Suppress progress messages");

  FlagValues flags;

  auto* mine = app.add_subcommand("mine-patches", "Mine registered NIR/VIS patch pairs from the training folds");
  add_flag_value<std::string>(mine, "--manifest", "paths.manifest", flags, "Image manifest");
  add_flag_value<int>(mine, "--window", "mining.window", flags, "Sliding window size");
  add_flag_value<int>(mine, "--stride", "mining.stride", flags, "Window stride");
  add_flag_value<int>(mine, "--crop", "mining.crop", flags, "Center crop size");
  add_flag_value<double>(mine, "--sum-threshold", "mining.sum_threshold", flags, "Gate: minimum correlation sum");
  add_flag_value<double>(mine, "--min-threshold", "mining.min_threshold", flags, "Gate: minimum single correlation");
  add_flag_value<int>(mine, "--target-total", "mining.target_total", flags, "Pre-flip pair budget for pruning");
  add_flag_value<int>(mine, "--folds", "protocol.folds", flags, "Fold count");

  auto* train_cmd = app.add_subcommand("train-hallucinator", "Train the per-channel hallucination networks");
  std::string channel = "all";
  std::string patches_path;
  train_cmd->add_option("--channel", channel, "Y, Cb, Cr or all")->check(CLI::IsMember({"Y", "Cb", "Cr", "all"}));
  train_cmd->add_option("--patches", patches_path, "Patch dataset (default <out>/patches.nvpd)");
  add_flag_value<int>(train_cmd, "--epochs", "hallucinator.epochs", flags, "Training epochs");
  add_flag_value<int>(train_cmd, "--batch", "hallucinator.batch", flags, "Minibatch size");
  add_flag_value<std::int64_t>(train_cmd, "--max-pairs", "hallucinator.max_pairs", flags, "Training pairs per network");

  auto* hall = app.add_subcommand("hallucinate", "Hallucinate VIS images from NIR images");
  std::string weights, input, output;
  bool single_pass = false;
  hall->add_option("--weights", weights, "Directory with Y.nvhn, Cb.nvhn, Cr.nvhn");
  hall->add_option("--input", input, "Single aligned NIR image (PGM); default: every NIR face of the manifest");
  hall->add_option("--output", output, "Output image (with --input) or directory");
  add_flag_value<double>(hall, "--alpha", "blend.alpha", flags, "Blending weight");
  add_flag_value<double>(hall, "--sigma", "blend.sigma", flags, "Blending Gaussian sigma");
  hall->add_flag("--single-pass", single_pass, "Apply the blending Gaussian once instead of twice");

  auto* learn = app.add_subcommand("learn-embedding", "Learn PCA and the low-rank transform from a feature file");
  bool use_hallucinated = false;
  bool all_subjects = false;
  add_flag_value<std::string>(learn, "--features", "paths.features", flags, "Feature file");
  add_flag_value<int>(learn, "--pca-dim", "embedding.pca_dim", flags, "PCA output dimension");
  learn->add_flag("--hallucinated", use_hallucinated, "Train on hallucinated rather than raw NIR records");
  learn->add_flag("--all-subjects", all_subjects, "Train on every subject instead of the training folds");

  auto* eval = app.add_subcommand("evaluate", "Run the full experiment and the four-cell ablation");
  add_flag_value<std::string>(eval, "--features", "paths.features", flags, "Feature file");
  add_flag_value<std::string>(eval, "--manifest", "paths.manifest", flags, "Image manifest");

  auto* sweep = app.add_subcommand("alpha-sweep", "Rank-1 rate as a function of the blending weight");
  add_flag_value<std::string>(sweep, "--alphas", "sweep.alphas", flags, "Comma-separated alpha values");

  auto* report = app.add_subcommand("report", "Rebuild the summary table from existing cell reports");

  auto* fixture = app.add_subcommand("make-fixture", "Write a synthetic dataset and config");
  std::string fixture_kind = "features";
  std::string fixture_dir = "fixture";
  int fixture_subjects = 12;
  std::uint64_t fixture_seed = 1;
  fixture->add_option("--kind", fixture_kind, "faces or features")->check(CLI::IsMember({"faces", "features"}));
  fixture->add_option("--dir", fixture_dir, "Destination directory");
  fixture->add_option("--subjects", fixture_subjects, "Number of subjects")->check(CLI::Range(1, 100000));
  fixture->add_option("--fixture-seed", fixture_seed, "Fixture seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (single_pass) flags.emplace_back("blend.filter", "single-pass");
    if (fixture->parsed()) return cmd_make_fixture(fixture_kind, fixture_dir, fixture_subjects, fixture_seed);
    const ExperimentConfig c = build_config(g, flags);
    const Logger log = make_logger(g);
    if (mine->parsed()) return cmd_mine(c, log);
    if (train_cmd->parsed()) return cmd_train(c, channel, patches_path, log);
    if (hall->parsed()) return cmd_hallucinate(c, weights, input, output, log);
    if (learn->parsed()) return cmd_learn_embedding(c, use_hallucinated, all_subjects, log);
    if (eval->parsed()) return cmd_evaluate(c, log);
    if (sweep->parsed()) return cmd_alpha_sweep(c, log);
    if (report->parsed()) return cmd_report(c);
  } catch (const ConfigError& e) {
    std::cerr << "nirvis: configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "nirvis: " << e.what() << '\n';
    return kExitStage;
  }
  return 0;
}
