#pragma once

// End-to-end experiment: align -> mine -> train -> hallucinate -> describe ->
// PCA -> low-rank -> match -> report, producing the 2 x 2 ablation over
// {hallucination, low-rank} on one held-out fold.
//
// Two input modes: an image manifest (every stage runs) or a feature file
// holding VIS, raw-NIR and optionally hallucinated descriptors (embedding and
// matching only). Intermediate artifacts are cached under <out>/cache, keyed
// by a content hash of their inputs and the relevant configuration keys.

#include "nirvis/blend.hpp"
#include "nirvis/color.hpp"
#include "nirvis/config.hpp"
#include "nirvis/features_io.hpp"
#include "nirvis/hallucinator.hpp"
#include "nirvis/lowrank.hpp"
#include "nirvis/manifest.hpp"
#include "nirvis/matcher.hpp"
#include "nirvis/matrix_io.hpp"
#include "nirvis/patch_miner.hpp"
#include "nirvis/pca.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace nirvis {

class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error("stage '" + stage + "' failed: " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

using Logger = std::function<void(const std::string&)>;

inline Logger stderr_logger() {
  return [](const std::string& msg) { std::cerr << "[nirvis] " << msg << '\n'; };
}

inline Logger silent_logger() {
  return [](const std::string&) {};
}

/// Runs `f`, rethrowing anything but configuration errors as a StageError
/// naming `stage`.
template <typename F>
auto run_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

// ---------------------------------------------------------------------------
// Content hashing

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;

inline std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvOffset) { return fnv1a(s.data(), s.size(), h); }

inline std::uint64_t hash_image(const Image& img, std::uint64_t h = kFnvOffset) {
  const std::int64_t shape[2] = {img.rows(), img.cols()};
  h = fnv1a(shape, sizeof shape, h);
  return fnv1a(img.data(), static_cast<std::size_t>(img.size()) * sizeof(double), h);
}

inline std::uint64_t hash_file(const std::string& path, std::uint64_t h = kFnvOffset) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

inline std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Faces

struct PreparedFaces {
  std::vector<AlignedFace> vis, nir;  // manifest order
  FoldAssignment folds;
  ReferenceStats reference;
  std::uint64_t hash = kFnvOffset;
};

/// Aligns every manifest image, assigns folds by subject order, and normalizes
/// all faces to the first VIS face of the training folds.
inline PreparedFaces prepare_faces(const ExperimentConfig& config) {
  PreparedFaces out;
  const auto entries = read_manifest(config.manifest);
  if (entries.empty()) throw InvalidInput("manifest '" + config.manifest + "' has no records");
  std::vector<SubjectId> subjects;
  for (const auto& e : entries) subjects.push_back(e.subject);
  out.folds = FoldAssignment::by_order(subjects, config.folds);
  std::vector<AlignedFace> faces;
  for (const auto& e : entries) faces.push_back(load_aligned_face(e));
  const AlignedFace* reference = nullptr;
  for (const auto& f : faces)
    if (f.spectrum == Spectrum::Vis && out.folds.fold_of(f.subject) != config.test_fold) {
      reference = &f;
      break;
    }
  if (!reference) throw InvalidInput("no VIS face in the training folds to serve as the normalization reference");
  out.reference = ReferenceStats::of(*reference);
  for (auto& f : faces) {
    AlignedFace n = normalize_face(f, out.reference);
    out.hash = hash_image(n.luma, out.hash);
    if (n.has_chroma()) {
      out.hash = hash_image(n.cb, out.hash);
      out.hash = hash_image(n.cr, out.hash);
    }
    out.hash = fnv1a(n.image_id + "/" + std::to_string(n.subject), out.hash);
    (n.spectrum == Spectrum::Vis ? out.vis : out.nir).push_back(std::move(n));
  }
  return out;
}

inline std::vector<AlignedFace> faces_in_folds(const std::vector<AlignedFace>& faces, const FoldAssignment& folds,
                                               int test_fold, bool want_test) {
  std::vector<AlignedFace> out;
  for (const auto& f : faces)
    if ((folds.fold_of(f.subject) == test_fold) == want_test) out.push_back(f);
  return out;
}

// ---------------------------------------------------------------------------
// Stages

struct PipelineContext {
  ExperimentConfig config;
  Logger log = stderr_logger();

  std::filesystem::path out() const { return config.out_dir; }
  std::filesystem::path cache() const { return out() / "cache"; }
};

struct MinedPatches {
  std::vector<PatchPair> pairs;
  std::uint64_t hash = 0;
  std::string path;
};

inline MinedPatches mine_stage(const PipelineContext& ctx, const PreparedFaces& faces) {
  return run_stage("mine-patches", [&] {
    namespace fs = std::filesystem;
    const auto& c = ctx.config;
    const std::uint64_t key = fnv1a(c.subtree({"mining.", "protocol."}), faces.hash);
    fs::create_directories(ctx.cache());
    const std::string cached = (ctx.cache() / ("patches-" + hex(key) + ".nvpd")).string();
    MinedPatches mined;
    if (fs::exists(cached)) {
      ctx.log("mine-patches: reusing " + cached);
      mined.pairs = load_patch_dataset(cached);
    } else {
      auto config = c.mining;
      config.jobs = c.jobs;
      const auto nir = faces_in_folds(faces.nir, faces.folds, c.test_fold, false);
      const auto vis = faces_in_folds(faces.vis, faces.folds, c.test_fold, false);
      const auto result = mine_pairs(nir, vis, config);
      ctx.log("mine-patches: scanned " + std::to_string(result.windows_scanned) + " windows, accepted " +
              std::to_string(result.accepted) + ", kept " + std::to_string(result.kept) + ", output " +
              std::to_string(result.pairs.size()));
      save_patch_dataset(cached + ".tmp", result.pairs);
      fs::rename(cached + ".tmp", cached);
      fs::rename(cached + ".tmp.idx", cached + ".idx");
      mined.pairs = result.pairs;
    }
    fs::copy_file(cached, ctx.out() / "patches.nvpd", fs::copy_options::overwrite_existing);
    fs::copy_file(cached + ".idx", ctx.out() / "patches.nvpd.idx", fs::copy_options::overwrite_existing);
    mined.hash = hash_file(cached);
    mined.path = cached;
    return mined;
  });
}

/// Evenly spaced subset of at most `limit` items; 0 keeps everything.
template <typename T>
std::vector<T> evenly_spaced(const std::vector<T>& items, std::int64_t limit) {
  if (limit <= 0 || static_cast<std::size_t>(limit) >= items.size()) return items;
  std::vector<T> out;
  const auto n = static_cast<std::size_t>(limit);
  for (std::size_t i = 0; i < n; ++i) out.push_back(items[i * items.size() / n]);
  return out;
}

struct TrainedNets {
  HallucinationNets nets;
  std::uint64_t hash = 0;
};

inline std::uint64_t hash_weights_dir(const std::filesystem::path& dir) {
  std::uint64_t h = kFnvOffset;
  for (const char* name : {"Y.nvhn", "Cb.nvhn", "Cr.nvhn"}) h = hash_file((dir / name).string(), h);
  return h;
}

inline HallucinationNets load_nets(const std::filesystem::path& dir) {
  return {load_net<float>((dir / "Y.nvhn").string()), load_net<float>((dir / "Cb.nvhn").string()),
          load_net<float>((dir / "Cr.nvhn").string())};
}

/// Trains the three networks on mined patches, or loads paths.weights_dir.
inline TrainedNets train_stage(const PipelineContext& ctx, const MinedPatches* patches) {
  return run_stage("train-hallucinator", [&] {
    namespace fs = std::filesystem;
    const auto& c = ctx.config;
    TrainedNets out;
    if (!c.weights_dir.empty()) {
      ctx.log("train-hallucinator: loading networks from " + c.weights_dir);
      out.nets = load_nets(c.weights_dir);
      out.hash = hash_weights_dir(c.weights_dir);
      return out;
    }
    require(patches != nullptr, "training needs mined patches");
    if (patches->pairs.empty()) throw InvalidInput("no patch pairs were mined; relax the gate or add images");
    const std::uint64_t key = fnv1a(c.subtree({"hallucinator.", "seed"}), patches->hash);
    const fs::path dir = ctx.cache() / ("weights-" + hex(key));
    if (fs::exists(dir / "complete")) {
      ctx.log("train-hallucinator: reusing " + dir.string());
    } else {
      fs::create_directories(dir);
      const auto subset = evenly_spaced(patches->pairs, c.max_pairs);
      auto nets = HallucinationNets::fresh(c.seed, c.slopes);
      for (Channel ch : {Channel::Y, Channel::Cb, Channel::Cr}) {
        const auto pairs = training_pairs(subset, ch);
        TrainConfig tc = c.train;
        tc.seed = c.seed * 31 + static_cast<std::uint64_t>(ch);
        const auto result = train(nets[ch], pairs, tc);
        ctx.log("train-hallucinator: " + std::string(to_string(ch)) + " net, " + std::to_string(pairs.size()) +
                " pairs, " + std::to_string(result.iterations) + " iterations" +
                (result.epoch_losses.empty() ? std::string()
                                             : ", final loss " + format_real(result.epoch_losses.back())));
        save_net((dir / (std::string(to_string(ch)) + ".nvhn")).string(), nets[ch]);
        write_training_log((dir / ("train_" + std::string(to_string(ch)) + ".csv")).string(), result.epoch_losses);
      }
      std::ofstream(dir / "complete") << "ok\n";
    }
    const fs::path published = ctx.out() / "weights";
    fs::create_directories(published);
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.path().filename() != "complete")
        fs::copy_file(entry.path(), published / entry.path().filename(), fs::copy_options::overwrite_existing);
    out.nets = load_nets(dir);
    out.hash = hash_weights_dir(dir);
    return out;
  });
}

inline Matrix image_to_matrix(const Image& img) { return img.matrix(); }
inline Image matrix_to_image(const Matrix& m) { return m.array(); }

/// Network outputs before blending, cached per (weights, face).
inline YCbCr hallucinate_cached(const PipelineContext& ctx, const TrainedNets& nets, const AlignedFace& face) {
  namespace fs = std::filesystem;
  const fs::path dir = ctx.cache() / "hallucinated";
  fs::create_directories(dir);
  const std::string path = (dir / (hex(hash_image(face.luma, nets.hash)) + ".nvmx")).string();
  if (fs::exists(path)) {
    const auto m = io::load_matrices(path);
    return {matrix_to_image(io::require_entry(m, "Y")), matrix_to_image(io::require_entry(m, "Cb")),
            matrix_to_image(io::require_entry(m, "Cr"))};
  }
  auto h = hallucinate(nets.nets, face.luma);
  for (const auto& w : h.warnings) ctx.log("hallucinate: warning: " + w);
  io::save_matrices(path + ".tmp", {{"Y", image_to_matrix(h.ycc.y)},
                                    {"Cb", image_to_matrix(h.ycc.cb)},
                                    {"Cr", image_to_matrix(h.ycc.cr)}});
  fs::rename(path + ".tmp", path);
  return h.ycc;
}

/// Blends the hallucinated luminance with the NIR input and converts to RGB.
inline Rgb finish_hallucination(const YCbCr& raw, const Image& nir, const BlendConfig& blend_config) {
  YCbCr out = raw;
  out.y = blend(raw.y, nir, blend_config);
  return ycbcr_to_rgb(out, true);
}

inline Rgb face_rgb(const AlignedFace& face) {
  if (!face.has_chroma()) return replicate_gray(face.luma);
  return ycbcr_to_rgb({face.luma, face.cb, face.cr}, true);
}

/// Descriptors for VIS faces, raw NIR faces, and (when `nets` is given) the
/// hallucinated NIR faces. Hallucination is limited to the faces the enabled
/// cells use.
inline std::vector<FeatureRecord> describe_faces(const PipelineContext& ctx, const PreparedFaces& faces,
                                                 const TrainedNets* nets, const BlendConfig& blend_config) {
  return run_stage("features", [&] {
    const auto& c = ctx.config;
    const BlockMeanProvider provider(c.feature_grid);
    std::vector<FeatureRecord> records;
    for (const auto& f : faces.vis) {
      const Rgb rgb = face_rgb(f);
      records.push_back(
          extract_record(provider, {rgb.r, rgb.g, rgb.b}, f.subject, f.image_id, Spectrum::Vis, InputKind::Vis));
    }
    for (const auto& f : faces.nir)
      records.push_back(extract_record(provider, {f.luma}, f.subject, f.image_id, Spectrum::Nir, InputKind::RawNir));
    if (nets) {
      for (const auto& f : faces.nir) {
        const bool test = faces.folds.fold_of(f.subject) == c.test_fold;
        if (!test && !c.lowrank) continue;
        const Rgb rgb = finish_hallucination(hallucinate_cached(ctx, *nets, f), f.luma, blend_config);
        records.push_back(extract_record(provider, {rgb.r, rgb.g, rgb.b}, f.subject, f.image_id, Spectrum::Nir,
                                         InputKind::Hallucinated));
      }
    }
    return records;
  });
}

// ---------------------------------------------------------------------------
// Embedding and evaluation

/// Optional column normalization, optional PCA, then T.
struct EmbeddingModel {
  bool normalize = true;
  std::optional<PcaModel> pca;
  LowRankTransform transform{1};

  Matrix apply(Matrix x) const {
    if (normalize) x.colwise().normalize();
    if (pca) x = apply_pca(*pca, x);
    return embed(transform, x);
  }
};

struct EmbeddingResult {
  EmbeddingModel model;
  CcpResult ccp;
};

inline EmbeddingResult learn_embedding(const std::vector<FeatureRecord>& train_records, const ExperimentConfig& c) {
  if (train_records.empty()) throw InvalidInput("no training records for the embedding");
  EmbeddingModel model;
  model.normalize = c.normalize;
  Matrix x = feature_matrix(train_records);
  if (model.normalize) x.colwise().normalize();
  if (c.use_pca) {
    const Eigen::Index k = pca_working_dim(c.pca_dim, x.rows(), x.cols());
    model.pca = fit_pca(x, k);
    x = apply_pca(*model.pca, x);
  }
  std::vector<Spectrum> spectra;
  for (const auto& r : train_records) spectra.push_back(r.spectrum);
  LabeledFeatureMatrix y(x, record_labels(train_records), spectra);
  EmbeddingResult out{model, learn_lowrank_transform(y, c.ccp)};
  out.model.transform = out.ccp.transform;
  return out;
}

struct CellReport {
  std::string name;
  bool hallucination = false;
  bool lowrank = false;
  MatchReport report;
  std::optional<CcpResult> ccp;
  std::size_t gallery_size = 0;
  std::size_t probe_count = 0;
};

inline std::string cell_name(bool hallucination, bool lowrank) {
  if (hallucination && lowrank) return "hallucination_lowrank";
  if (hallucination) return "hallucination";
  if (lowrank) return "lowrank";
  return "baseline";
}

inline std::string cell_title(bool hallucination, bool lowrank) {
  if (hallucination && lowrank) return "Hallucination + Low-rank";
  if (hallucination) return "Hallucination";
  if (lowrank) return "Low-rank";
  return "Baseline";
}

inline LabeledSet to_labeled_set(const std::vector<FeatureRecord>& records, Spectrum spectrum) {
  LabeledSet s;
  s.features = feature_matrix(records);
  s.labels = record_labels(records);
  for (const auto& r : records) s.ids.push_back(r.image_id);
  s.spectrum = spectrum;
  return s;
}

inline void write_text_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  body(out);
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

/// One ablation cell: test-fold VIS gallery against test-fold NIR probes
/// (raw or hallucinated), optionally through an embedding learned on the
/// training folds. Writes cmc.csv and decisions.csv into `dir` when non-empty.
inline CellReport evaluate_cell(const std::vector<FeatureRecord>& records, const FoldAssignment& folds,
                                const ExperimentConfig& c, bool hallucination, bool lowrank,
                                const std::filesystem::path& dir = {}) {
  const std::string name = cell_name(hallucination, lowrank);
  return run_stage("evaluate:" + name, [&] {
    const InputKind probe_kind = hallucination ? InputKind::Hallucinated : InputKind::RawNir;
    std::vector<FeatureRecord> used;
    for (const auto& r : records)
      if (r.kind == InputKind::Vis || r.kind == probe_kind) used.push_back(r);
    const auto split = split_folds(used, folds, c.test_fold);
    std::vector<FeatureRecord> gallery, probes;
    for (const auto& r : split.test) (r.kind == InputKind::Vis ? gallery : probes).push_back(r);
    if (gallery.empty()) throw InvalidInput("test fold has no VIS gallery records");
    if (probes.empty())
      throw InvalidInput("test fold has no " + std::string(to_string(probe_kind)) + " probe records");
    CellReport cell;
    cell.name = name;
    cell.hallucination = hallucination;
    cell.lowrank = lowrank;
    LabeledSet g = to_labeled_set(gallery, Spectrum::Vis);
    LabeledSet p = to_labeled_set(probes, Spectrum::Nir);
    if (lowrank) {
      auto learned = learn_embedding(split.train, c);
      g.features = learned.model.apply(g.features);
      p.features = learned.model.apply(p.features);
      if (!dir.empty()) {
        std::filesystem::create_directories(dir);
        if (learned.model.pca) save_pca((dir / "pca.nvmx").string(), *learned.model.pca);
        save_transform((dir / "transform.nvmx").string(), learned.model.transform);
        write_text_file(dir / "ccp.csv", [&](std::ostream& o) {
          o << "iteration,objective\n";
          for (std::size_t i = 0; i < learned.ccp.objective_history.size(); ++i)
            o << i << ',' << format_real(learned.ccp.objective_history[i]) << '\n';
        });
      }
      cell.ccp = learned.ccp;
    }
    const std::size_t max_rank = std::min<std::size_t>(static_cast<std::size_t>(c.max_rank), gallery.size());
    cell.report = identify(g, p, max_rank);
    cell.gallery_size = gallery.size();
    cell.probe_count = probes.size();
    if (!dir.empty()) {
      std::filesystem::create_directories(dir);
      write_text_file(dir / "cmc.csv", [&](std::ostream& o) { write_cmc_csv(o, cell.report); });
      write_text_file(dir / "decisions.csv", [&](std::ostream& o) { write_decisions_csv(o, cell.report); });
      write_text_file(dir / "sizes.csv", [&](std::ostream& o) {
        o << "gallery,probes\n" << cell.gallery_size << ',' << cell.probe_count << '\n';
      });
    }
    return cell;
  });
}

struct ExperimentReport {
  std::vector<CellReport> cells;

  const CellReport* find(const std::string& name) const {
    for (const auto& c : cells)
      if (c.name == name) return &c;
    return nullptr;
  }
};

inline void write_summary(const std::filesystem::path& out, const ExperimentReport& report) {
  write_text_file(out / "summary.csv", [&](std::ostream& o) {
    o << "cell,hallucination,lowrank,gallery,probes,rank1\n";
    for (const auto& c : report.cells)
      o << c.name << ',' << (c.hallucination ? 1 : 0) << ',' << (c.lowrank ? 1 : 0) << ',' << c.gallery_size << ','
        << c.probe_count << ',' << format_real(c.report.rank1()) << '\n';
  });
  write_text_file(out / "summary.txt", [&](std::ostream& o) {
    o << "Cross-spectral rank-1 identification rate\n\n";
    char line[128];
    std::snprintf(line, sizeof line, "%-28s %10s\n", "Method", "Rank-1 (%)");
    o << line;
    o << std::string(39, '-') << '\n';
    for (const auto& c : report.cells) {
      std::snprintf(line, sizeof line, "%-28s %10.2f\n", cell_title(c.hallucination, c.lowrank).c_str(),
                    100.0 * c.report.rank1());
      o << line;
    }
  });
}

/// Loads the inputs, runs whatever stages the input mode needs, and returns
/// the descriptor records used by every cell.
struct ExperimentInputs {
  std::vector<FeatureRecord> records;
  FoldAssignment folds;
  std::optional<PreparedFaces> faces;
  std::optional<TrainedNets> nets;
};

inline ExperimentInputs gather_inputs(const PipelineContext& ctx) {
  const auto& c = ctx.config;
  ExperimentInputs in;
  if (!c.features.empty()) {
    in.records = run_stage("ingest-features", [&] { return load_features(c.features); });
    in.folds = run_stage("ingest-features", [&] { return FoldAssignment::by_order(distinct_subjects(in.records), c.folds); });
    return in;
  }
  in.faces = run_stage("align", [&] { return prepare_faces(c); });
  in.folds = in.faces->folds;
  if (c.hallucination) {
    std::optional<MinedPatches> patches;
    if (c.weights_dir.empty()) patches = mine_stage(ctx, *in.faces);
    in.nets = train_stage(ctx, patches ? &*patches : nullptr);
  }
  in.records = describe_faces(ctx, *in.faces, in.nets ? &*in.nets : nullptr, c.blend);
  run_stage("features", [&] {
    FeatureFile file{BlockMeanProvider(c.feature_grid).name(), 3, in.records};
    store_features((ctx.out() / "features.nvft").string(), file);
    return 0;
  });
  return in;
}

inline ExperimentReport evaluate_all(const PipelineContext& ctx, const std::vector<FeatureRecord>& records,
                                     const FoldAssignment& folds) {
  const auto& c = ctx.config;
  ExperimentReport report;
  for (bool h : {false, true}) {
    if (h && !c.hallucination) continue;
    for (bool l : {false, true}) {
      if (l && !c.lowrank) continue;
      auto cell = evaluate_cell(records, folds, c, h, l, ctx.out() / "cells" / cell_name(h, l));
      ctx.log("evaluate: " + cell.name + " rank-1 " + format_real(cell.report.rank1()));
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

inline ExperimentReport run_experiment(const ExperimentConfig& config, Logger log = stderr_logger()) {
  config.validate();
  PipelineContext ctx{config, std::move(log)};
  std::filesystem::create_directories(ctx.out());
  save_config((ctx.out() / "config.txt").string(), config);
  const auto inputs = gather_inputs(ctx);
  auto report = evaluate_all(ctx, inputs.records, inputs.folds);
  run_stage("report", [&] {
    write_summary(ctx.out(), report);
    return 0;
  });
  return report;
}

struct SweepPoint {
  double alpha = 0.0;
  double rank1 = 0.0;
  std::optional<double> rank1_lowrank;
};

/// One hallucination evaluation per alpha; network outputs are computed once.
inline std::vector<SweepPoint> alpha_sweep(const ExperimentConfig& config, const std::vector<double>& alphas,
                                           Logger log = stderr_logger()) {
  if (alphas.empty()) throw ConfigError("alpha sweep needs at least one alpha");
  config.validate();
  if (!config.hallucination) throw ConfigError("alpha sweep requires ablation.hallucination = true");
  if (config.manifest.empty()) throw ConfigError("alpha sweep requires image input (paths.manifest)");
  for (double a : alphas)
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("alpha values must lie in [0, 1]");
  PipelineContext ctx{config, std::move(log)};
  std::filesystem::create_directories(ctx.out());
  const auto faces = run_stage("align", [&] { return prepare_faces(config); });
  std::optional<MinedPatches> patches;
  if (config.weights_dir.empty()) patches = mine_stage(ctx, faces);
  const auto nets = train_stage(ctx, patches ? &*patches : nullptr);
  std::vector<SweepPoint> points;
  for (double a : alphas) {
    BlendConfig b = config.blend;
    b.alpha = a;
    const auto records = describe_faces(ctx, faces, &nets, b);
    SweepPoint pt;
    pt.alpha = a;
    pt.rank1 = evaluate_cell(records, faces.folds, config, true, false).report.rank1();
    if (config.lowrank) pt.rank1_lowrank = evaluate_cell(records, faces.folds, config, true, true).report.rank1();
    ctx.log("alpha-sweep: alpha " + config_detail::format_double(a) + " rank-1 " + format_real(pt.rank1));
    points.push_back(pt);
  }
  run_stage("report", [&] {
    write_text_file(ctx.out() / "alpha_sweep.csv", [&](std::ostream& o) {
      o << "alpha,rank1" << (config.lowrank ? ",rank1_lowrank" : "") << '\n';
      for (const auto& p : points) {
        o << config_detail::format_double(p.alpha) << ',' << format_real(p.rank1);
        if (p.rank1_lowrank) o << ',' << format_real(*p.rank1_lowrank);
        o << '\n';
      }
    });
    return 0;
  });
  return points;
}

/// Rebuilds summary files from the per-cell CMC files already on disk.
inline ExperimentReport report_from_disk(const std::filesystem::path& out) {
  ExperimentReport report;
  for (bool h : {false, true})
    for (bool l : {false, true}) {
      const auto dir = out / "cells" / cell_name(h, l);
      if (!std::filesystem::exists(dir / "cmc.csv")) continue;
      CellReport cell;
      cell.name = cell_name(h, l);
      cell.hallucination = h;
      cell.lowrank = l;
      std::ifstream in(dir / "cmc.csv");
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw FormatError("malformed " + (dir / "cmc.csv").string());
        cell.report.cmc.push_back(std::stod(line.substr(comma + 1)));
      }
      std::ifstream sizes(dir / "sizes.csv");
      std::getline(sizes, line);
      char comma = 0;
      if (!(sizes >> cell.gallery_size >> comma >> cell.probe_count) || comma != ',')
        throw FormatError("malformed " + (dir / "sizes.csv").string());
      report.cells.push_back(std::move(cell));
    }
  if (report.cells.empty()) throw InvalidInput("no cell reports under '" + out.string() + "'");
  return report;
}

}  // namespace nirvis
