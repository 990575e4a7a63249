#pragma once

// Deterministic synthetic fixtures: cross-spectral feature sets with a known
// global spectral rotation, and rendered NIR/VIS face images with landmarks.

#include "nirvis/color.hpp"
#include "nirvis/core.hpp"
#include "nirvis/features_io.hpp"
#include "nirvis/image.hpp"
#include "nirvis/manifest.hpp"
#include "nirvis/patch_miner.hpp"

#include <Eigen/QR>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace nirvis::synthetic {

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

/// Haar-distributed orthogonal matrix.
inline Matrix random_orthogonal(Eigen::Index n, std::mt19937_64& rng) {
  const Matrix g = gaussian_matrix(n, n, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < n; ++i)
    if (r(i, i) < 0) q.col(i) = -q.col(i);
  return q;
}

struct CrossSpectralConfig {
  int subjects = 20;
  int dim = 64;
  int samples_per_spectrum = 10;
  double noise = 0.1;  // per-coordinate standard deviation
  std::uint64_t seed = 1;
};

/// VIS samples = s + noise, NIR samples = R s + noise, with s a random unit
/// vector per subject and R one orthogonal matrix shared by all subjects.
/// Records are ordered by subject, then VIS samples, then NIR samples.
struct CrossSpectralSet {
  Matrix rotation;
  Matrix subjects;  // dim x subjects
  std::vector<FeatureRecord> records;
};

inline CrossSpectralSet make_cross_spectral(const CrossSpectralConfig& config) {
  require(config.subjects >= 1 && config.dim >= 1 && config.samples_per_spectrum >= 1, "invalid fixture size");
  std::mt19937_64 rng(config.seed);
  CrossSpectralSet set;
  set.rotation = random_orthogonal(config.dim, rng);
  set.subjects = gaussian_matrix(config.dim, config.subjects, rng);
  set.subjects.colwise().normalize();
  std::normal_distribution<double> noise(0.0, config.noise);
  for (int s = 0; s < config.subjects; ++s) {
    for (Spectrum spectrum : {Spectrum::Vis, Spectrum::Nir}) {
      const Vector base = spectrum == Spectrum::Vis ? Vector(set.subjects.col(s)) : Vector(set.rotation * set.subjects.col(s));
      for (int k = 0; k < config.samples_per_spectrum; ++k) {
        FeatureRecord r;
        r.subject = s;
        r.spectrum = spectrum;
        r.kind = spectrum == Spectrum::Vis ? InputKind::Vis : InputKind::RawNir;
        r.image_id = std::string(spectrum == Spectrum::Vis ? "v" : "n") + std::to_string(s) + "_" + std::to_string(k);
        r.vector = base;
        for (Eigen::Index i = 0; i < r.vector.size(); ++i) r.vector(i) += noise(rng);
        set.records.push_back(std::move(r));
      }
    }
  }
  return set;
}

/// Feature-file fixture for the pipeline: VIS, raw-NIR and hallucinated
/// records per subject. Raw NIR features are rotated by a global spectral
/// rotation; hallucinated ones undo a fraction `hallucination_gain` of it.
struct PipelineFeatureConfig {
  int subjects = 60;
  int dim = 32;
  int vis_per_subject = 2;
  int nir_per_subject = 2;
  double noise = 0.15;
  double hallucination_gain = 0.5;
  std::uint64_t seed = 7;
};

inline FeatureFile make_pipeline_features(const PipelineFeatureConfig& config) {
  std::mt19937_64 rng(config.seed);
  const Matrix rotation = random_orthogonal(config.dim, rng);
  Matrix subjects = gaussian_matrix(config.dim, config.subjects, rng);
  subjects.colwise().normalize();
  std::normal_distribution<double> noise(0.0, config.noise);
  auto noisy = [&](Vector v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += noise(rng);
    return v;
  };
  FeatureFile file;
  file.provider = "synthetic";
  file.input_channels = 3;
  const double g = std::clamp(config.hallucination_gain, 0.0, 1.0);
  for (int s = 0; s < config.subjects; ++s) {
    const SubjectId id = 1000 + s;
    const Vector vis = subjects.col(s);
    const Vector nir = rotation * vis;
    for (int k = 0; k < config.vis_per_subject; ++k)
      file.records.push_back({id, "vis_" + std::to_string(id) + "_" + std::to_string(k), Spectrum::Vis, InputKind::Vis,
                              Provenance::Native, noisy(vis)});
    for (int k = 0; k < config.nir_per_subject; ++k) {
      const Vector raw = noisy(nir);
      const Vector hallucinated = noisy((1.0 - g) * nir + g * vis);
      const std::string tag = std::to_string(id) + "_" + std::to_string(k);
      file.records.push_back({id, "nir_" + tag, Spectrum::Nir, InputKind::RawNir, Provenance::Replicated, raw});
      file.records.push_back(
          {id, "nir_" + tag, Spectrum::Nir, InputKind::Hallucinated, Provenance::Native, hallucinated});
    }
  }
  return file;
}

// ---------------------------------------------------------------------------
// Faces

/// Smooth random texture on a 224 x 224 canonical frame.
inline Image smooth_noise(std::mt19937_64& rng, double sigma, int size = kFaceSize) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Image img(size, size);
  for (Eigen::Index y = 0; y < size; ++y)
    for (Eigen::Index x = 0; x < size; ++x) img(y, x) = normal(rng);
  img = gaussian_filter(img, sigma);
  const double s = image_std(img);
  return s > 0 ? Image((img - image_mean(img)) / s) : img;
}

/// Canonical-frame appearance of one subject: VIS color planes and the
/// matching NIR plane.
struct FaceAppearance {
  Rgb vis;
  Image nir;
};

/// Renders a subject's canonical face. Identity lives in a smooth texture and
/// skin tone; the NIR plane is a fixed nonlinear function of the VIS planes
/// with weaker chroma-driven contrast (darker lips and brows vanish in NIR).
inline FaceAppearance render_canonical_face(std::uint64_t subject_seed) {
  std::mt19937_64 rng(subject_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const CanonicalLandmarks lm;
  const Image texture = smooth_noise(rng, 6.0);
  const Image fine = smooth_noise(rng, 2.0);
  const double tone_r = 0.65 + 0.2 * unit(rng);
  const double tone_g = 0.45 + 0.15 * unit(rng);
  const double tone_b = 0.35 + 0.15 * unit(rng);
  const double face_w = 80 + 12 * unit(rng);
  const double face_h = 100 + 12 * unit(rng);
  const double eye_size = 9 + 4 * unit(rng);
  const double mouth_w = 20 + 8 * unit(rng);

  FaceAppearance f;
  f.vis.r.resize(kFaceSize, kFaceSize);
  f.vis.g.resize(kFaceSize, kFaceSize);
  f.vis.b.resize(kFaceSize, kFaceSize);
  f.nir.resize(kFaceSize, kFaceSize);
  const double cx = 112, cy = 120;
  for (int y = 0; y < kFaceSize; ++y)
    for (int x = 0; x < kFaceSize; ++x) {
      const double ex = (x - cx) / face_w, ey = (y - cy) / face_h;
      const double inside = 1.0 / (1.0 + std::exp((std::sqrt(ex * ex + ey * ey) - 1.0) * 25.0));
      auto blob = [&](const Eigen::Vector2d& c, double sx, double sy) {
        const double dx = (x - c.x()) / sx, dy = (y - c.y()) / sy;
        return std::exp(-0.5 * (dx * dx + dy * dy));
      };
      const double eyes = blob(lm.left_eye, eye_size, eye_size * 0.6) + blob(lm.right_eye, eye_size, eye_size * 0.6);
      const double brows = blob(lm.left_eye + Eigen::Vector2d(0, -16), 14, 3) + blob(lm.right_eye + Eigen::Vector2d(0, -16), 14, 3);
      const double lips = blob(lm.mouth, mouth_w, 5);
      const double shade = 0.08 * texture(y, x) + 0.03 * fine(y, x);
      const double skin = inside * (1.0 + shade) + (1.0 - inside) * (0.25 + 0.05 * texture(y, x));
      double r = tone_r * skin - 0.35 * eyes + 0.05 * lips - 0.2 * brows;
      double g = tone_g * skin - 0.30 * eyes - 0.2 * lips - 0.2 * brows;
      double b = tone_b * skin - 0.25 * eyes - 0.1 * lips - 0.15 * brows;
      r = std::clamp(r, 0.0, 1.0);
      g = std::clamp(g, 0.0, 1.0);
      b = std::clamp(b, 0.0, 1.0);
      f.vis.r(y, x) = r;
      f.vis.g(y, x) = g;
      f.vis.b(y, x) = b;
      const double luma = kLumaR * r + kLumaG * g + kLumaB * b;
      const double n = 0.15 + 0.9 * std::pow(std::max(luma, 0.0), 0.8) + 0.12 * (r - g) + 0.15 * lips + 0.1 * brows;
      f.nir(y, x) = std::clamp(n, 0.0, 1.0);
    }
  return f;
}

struct FaceSample {
  std::vector<Image> planes;  // 1 plane for NIR, 3 for VIS
  Landmarks landmarks;
};

/// Places a canonical face into a `size` x `size` image under a random
/// similarity pose and illumination change, with sensor noise.
inline FaceSample pose_face(const std::vector<Image>& canonical, std::mt19937_64& rng, int size = 240,
                            double max_shift = 6.0, double max_angle = 0.05, double noise = 0.01) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double angle = max_angle * u(rng);
  const double scale = 1.0 + 0.04 * u(rng);
  const double tx = 0.5 * (size - kFaceSize) + max_shift * u(rng);
  const double ty = 0.5 * (size - kFaceSize) + max_shift * u(rng);
  const double gain = 1.0 + 0.08 * u(rng);
  const double bias = 0.03 * u(rng);
  // forward: canonical -> image
  Eigen::Matrix3d fwd = Eigen::Matrix3d::Identity();
  fwd(0, 0) = scale * std::cos(angle);
  fwd(0, 1) = -scale * std::sin(angle);
  fwd(1, 0) = scale * std::sin(angle);
  fwd(1, 1) = scale * std::cos(angle);
  fwd(0, 2) = tx;
  fwd(1, 2) = ty;
  const Affine2 inverse = affine_from_homogeneous(fwd.inverse());
  std::normal_distribution<double> normal(0.0, noise);
  FaceSample s;
  for (const auto& plane : canonical) {
    Image img = warp_affine(plane, inverse, size, size) * gain + bias;
    for (Eigen::Index y = 0; y < img.rows(); ++y)
      for (Eigen::Index x = 0; x < img.cols(); ++x) img(y, x) = std::clamp(img(y, x) + normal(rng), 0.0, 1.0);
    s.planes.push_back(std::move(img));
  }
  const CanonicalLandmarks lm;
  const Landmarks canon = lm.points();
  for (std::size_t i = 0; i < 3; ++i) {
    const Eigen::Vector3d p = fwd * Eigen::Vector3d(canon[i].x(), canon[i].y(), 1.0);
    s.landmarks[i] = p.head<2>();
  }
  return s;
}

struct FaceDatasetConfig {
  int subjects = 6;
  int nir_per_subject = 1;
  int vis_per_subject = 1;
  int image_size = 240;
  std::uint64_t seed = 11;
};

/// Writes P5 (NIR) and P6 (VIS) images plus a manifest into `dir`; returns the
/// manifest path. Subject ids start at 1.
inline std::string write_face_dataset(const std::string& dir, const FaceDatasetConfig& config) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::mt19937_64 rng(config.seed);
  std::vector<ManifestEntry> entries;
  for (int s = 0; s < config.subjects; ++s) {
    const SubjectId id = s + 1;
    const auto face = render_canonical_face(config.seed * 7919 + static_cast<std::uint64_t>(id));
    for (int k = 0; k < config.vis_per_subject; ++k) {
      auto sample = pose_face({face.vis.r, face.vis.g, face.vis.b}, rng, config.image_size);
      const std::string name = "s" + std::to_string(id) + "_vis" + std::to_string(k) + ".ppm";
      write_pnm((fs::path(dir) / name).string(), sample.planes);
      entries.push_back({(fs::path(dir) / name).string(), id, Spectrum::Vis, sample.landmarks});
    }
    for (int k = 0; k < config.nir_per_subject; ++k) {
      auto sample = pose_face({face.nir}, rng, config.image_size);
      const std::string name = "s" + std::to_string(id) + "_nir" + std::to_string(k) + ".pgm";
      write_pnm((fs::path(dir) / name).string(), sample.planes);
      entries.push_back({(fs::path(dir) / name).string(), id, Spectrum::Nir, sample.landmarks});
    }
  }
  const std::string manifest = (fs::path(dir) / "manifest.txt").string();
  write_manifest(manifest, entries);
  return manifest;
}

}  // namespace nirvis::synthetic
