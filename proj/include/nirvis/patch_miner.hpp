#pragma once

// Mining of registered NIR/VIS patch correspondences from landmark-aligned
// face pairs of the same subject.
//
// For every NIR x VIS image pair of a subject a window slides over both faces
// at the same location; the VIS window is affinely registered to the NIR
// window, the center crops are compared with a correlation gate, and accepted
// pairs are spatially pruned and augmented with horizontal flips.

#include "nirvis/color.hpp"
#include "nirvis/core.hpp"
#include "nirvis/image.hpp"
#include "nirvis/manifest.hpp"
#include "nirvis/matrix_io.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <atomic>
#include <cstring>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace nirvis {

inline constexpr int kFaceSize = 224;

/// Destination landmark positions in the aligned frame.
struct CanonicalLandmarks {
  Eigen::Vector2d left_eye{78.0, 90.0};
  Eigen::Vector2d right_eye{146.0, 90.0};
  Eigen::Vector2d mouth{112.0, 168.0};

  Landmarks points() const { return {left_eye, right_eye, mouth}; }
};

struct AlignedFace {
  Image luma;    // NIR intensity or VIS luminance, kFaceSize x kFaceSize
  Image cb, cr;  // VIS chroma; empty for NIR faces
  SubjectId subject = 0;
  Spectrum spectrum = Spectrum::Nir;
  std::string image_id;

  bool has_chroma() const { return cb.size() > 0 && cr.size() > 0; }
};

// ---------------------------------------------------------------------------
// Landmark alignment

inline double triangle_area2(const Landmarks& p) {
  const Eigen::Vector2d a = p[1] - p[0];
  const Eigen::Vector2d b = p[2] - p[0];
  return a.x() * b.y() - a.y() * b.x();
}

/// Affine map taking canonical (output) coordinates to source image coordinates.
inline Affine2 landmark_warp(const Landmarks& source, const CanonicalLandmarks& canonical = {}) {
  const Landmarks dst = canonical.points();
  if (std::abs(triangle_area2(source)) < 1e-3) throw InvalidInput("landmark_align: landmarks are collinear");
  if (std::abs(triangle_area2(dst)) < 1e-3) throw InvalidInput("landmark_align: canonical landmarks are collinear");
  Eigen::Matrix3d m;
  for (int i = 0; i < 3; ++i) m.row(i) << dst[static_cast<std::size_t>(i)].x(), dst[static_cast<std::size_t>(i)].y(), 1.0;
  Eigen::Vector3d sx, sy;
  for (int i = 0; i < 3; ++i) {
    sx(i) = source[static_cast<std::size_t>(i)].x();
    sy(i) = source[static_cast<std::size_t>(i)].y();
  }
  const Eigen::Matrix3d inv = m.inverse();
  Affine2 a;
  a.row(0) = (inv * sx).transpose();
  a.row(1) = (inv * sy).transpose();
  return a;
}

inline void check_landmarks_inside(const Landmarks& lm, Eigen::Index width, Eigen::Index height) {
  for (const auto& p : lm)
    if (!(p.x() >= 0 && p.y() >= 0 && p.x() <= static_cast<double>(width - 1) && p.y() <= static_cast<double>(height - 1)))
      throw InvalidInput("landmark_align: landmark outside the image");
}

/// Warps a single-plane image so the landmarks land on the canonical positions.
inline AlignedFace landmark_align(const Image& image, const Landmarks& landmarks, SubjectId subject = 0,
                                  Spectrum spectrum = Spectrum::Nir, std::string image_id = {},
                                  const CanonicalLandmarks& canonical = {}) {
  check_landmarks_inside(landmarks, image.cols(), image.rows());
  const Affine2 map = landmark_warp(landmarks, canonical);
  AlignedFace face;
  face.luma = warp_affine(image, map, kFaceSize, kFaceSize);
  face.subject = subject;
  face.spectrum = spectrum;
  face.image_id = std::move(image_id);
  return face;
}

/// Color variant: aligns Y, Cb and Cr planes with the same warp.
inline AlignedFace landmark_align(const Rgb& image, const Landmarks& landmarks, SubjectId subject = 0,
                                  std::string image_id = {}, const CanonicalLandmarks& canonical = {}) {
  const YCbCr ycc = rgb_to_ycbcr(image);
  check_landmarks_inside(landmarks, ycc.y.cols(), ycc.y.rows());
  const Affine2 map = landmark_warp(landmarks, canonical);
  AlignedFace face;
  face.luma = warp_affine(ycc.y, map, kFaceSize, kFaceSize);
  face.cb = warp_affine(ycc.cb, map, kFaceSize, kFaceSize);
  face.cr = warp_affine(ycc.cr, map, kFaceSize, kFaceSize);
  face.subject = subject;
  face.spectrum = Spectrum::Vis;
  face.image_id = std::move(image_id);
  return face;
}

/// Reads the image named by a manifest entry and aligns it.
inline AlignedFace load_aligned_face(const ManifestEntry& entry, const CanonicalLandmarks& canonical = {}) {
  auto planes = read_pnm(entry.path);
  if (entry.spectrum == Spectrum::Vis && planes.size() == 3)
    return landmark_align(Rgb{planes[0], planes[1], planes[2]}, entry.landmarks, entry.subject, entry.image_id(),
                          canonical);
  Image gray = planes.size() == 3 ? rgb_to_ycbcr(Rgb{planes[0], planes[1], planes[2]}).y : planes[0];
  return landmark_align(gray, entry.landmarks, entry.subject, entry.spectrum, entry.image_id(), canonical);
}

// ---------------------------------------------------------------------------
// Statistics normalization

inline Image normalize_plane(const Image& plane, double ref_mean, double ref_std) {
  const double m = image_mean(plane);
  const double s = image_std(plane);
  if (!(s > 1e-12)) throw InvalidInput("normalize_stats: constant image");
  return (plane - m) * (ref_std / s) + ref_mean;
}

/// Shifts and scales the luminance plane to the reference mean and standard deviation.
inline AlignedFace normalize_stats(AlignedFace face, double ref_mean, double ref_std) {
  require(ref_std > 0.0, "normalize_stats: reference std must be positive");
  face.luma = normalize_plane(face.luma, ref_mean, ref_std);
  return face;
}

struct PlaneStats {
  double mean = 0.0;
  double std = 1.0;
};

/// Per-channel statistics of the reference face.
struct ReferenceStats {
  PlaneStats luma, cb, cr;

  static ReferenceStats of(const AlignedFace& face) {
    ReferenceStats r;
    r.luma = {image_mean(face.luma), image_std(face.luma)};
    if (face.has_chroma()) {
      r.cb = {image_mean(face.cb), image_std(face.cb)};
      r.cr = {image_mean(face.cr), image_std(face.cr)};
    }
    return r;
  }
};

/// Normalizes every plane of `face` to the matching reference plane. NIR faces
/// use the luminance statistics. Constant chroma planes are only shifted.
inline AlignedFace normalize_face(AlignedFace face, const ReferenceStats& ref) {
  face = normalize_stats(std::move(face), ref.luma.mean, ref.luma.std);
  auto chroma = [](const Image& p, const PlaneStats& s) {
    return image_std(p) > 1e-12 ? normalize_plane(p, s.mean, s.std) : Image(p - image_mean(p) + s.mean);
  };
  if (face.has_chroma()) {
    face.cb = chroma(face.cb, ref.cb);
    face.cr = chroma(face.cr, ref.cr);
  }
  return face;
}

// ---------------------------------------------------------------------------
// Affine registration (inverse-compositional Gauss-Newton on SSD)

struct RegistrationConfig {
  int max_iterations = 50;
  double update_tolerance = 1e-4;
  int margin = 4;  // border pixels excluded from the residual
  int divergence_patience = 3;
};

struct RegistrationResult {
  Image registered;    // VIS patch resampled onto the NIR grid
  Affine2 warp;        // NIR pixel coordinates -> VIS pixel coordinates
  bool converged = false;
  bool registered_ok = true;  // false when the solver diverged and the identity was returned
  int iterations = 0;
  double ssd_identity = 0.0;
  double ssd_final = 0.0;
};

namespace detail {

// Warp parameters p act in coordinates centered on the patch:
//   W(u; p) = [(1 + p0) u + p2 v + p4, p1 u + (1 + p3) v + p5].
inline Eigen::Matrix3d params_to_matrix(const Eigen::Matrix<double, 6, 1>& p) {
  Eigen::Matrix3d m;
  m << 1 + p(0), p(2), p(4), p(1), 1 + p(3), p(5), 0, 0, 1;
  return m;
}

inline Eigen::Matrix<double, 6, 1> matrix_to_params(const Eigen::Matrix3d& m) {
  Eigen::Matrix<double, 6, 1> p;
  p << m(0, 0) - 1, m(1, 0), m(0, 1), m(1, 1) - 1, m(0, 2), m(1, 2);
  return p;
}

}  // namespace detail

/// Registers `vis` onto `nir`: finds W with vis(W(x)) ~ nir(x).
inline RegistrationResult affine_register(const Image& vis, const Image& nir, const RegistrationConfig& config = {}) {
  require(vis.rows() == nir.rows() && vis.cols() == nir.cols(), "affine_register: patch shapes differ");
  if (!(image_std(vis) > 1e-12) || !(image_std(nir) > 1e-12))
    throw InvalidInput("affine_register: constant patch");
  const Eigen::Index h = nir.rows();
  const Eigen::Index w = nir.cols();
  const double cx = 0.5 * static_cast<double>(w - 1);
  const double cy = 0.5 * static_cast<double>(h - 1);
  const int m = std::clamp(config.margin, 0, static_cast<int>(std::min(h, w) / 2 - 1));

  // Steepest-descent images and Gauss-Newton Hessian of the template.
  struct Sample {
    double u, v, t;
    Eigen::Matrix<double, 6, 1> sd;
  };
  std::vector<Sample> samples;
  Eigen::Matrix<double, 6, 6> hessian = Eigen::Matrix<double, 6, 6>::Zero();
  for (Eigen::Index y = m; y < h - m; ++y)
    for (Eigen::Index x = m; x < w - m; ++x) {
      const double gx = 0.5 * (nir(y, std::min(x + 1, w - 1)) - nir(y, std::max<Eigen::Index>(x - 1, 0)));
      const double gy = 0.5 * (nir(std::min(y + 1, h - 1), x) - nir(std::max<Eigen::Index>(y - 1, 0), x));
      Sample s;
      s.u = static_cast<double>(x) - cx;
      s.v = static_cast<double>(y) - cy;
      s.t = nir(y, x);
      s.sd << gx * s.u, gy * s.u, gx * s.v, gy * s.v, gx, gy;
      hessian.noalias() += s.sd * s.sd.transpose();
      samples.push_back(s);
    }

  auto residual = [&](const Eigen::Matrix3d& warp, Eigen::Matrix<double, 6, 1>* rhs) {
    double ssd = 0.0;
    if (rhs) rhs->setZero();
    for (const auto& s : samples) {
      const double wu = warp(0, 0) * s.u + warp(0, 1) * s.v + warp(0, 2);
      const double wv = warp(1, 0) * s.u + warp(1, 1) * s.v + warp(1, 2);
      const double e = sample_bilinear(vis, wu + cx, wv + cy) - s.t;
      ssd += e * e;
      if (rhs) rhs->noalias() += s.sd * e;
    }
    return ssd;
  };

  auto to_pixel_affine = [&](const Eigen::Matrix3d& centered) {
    Eigen::Matrix3d shift = Eigen::Matrix3d::Identity();
    shift(0, 2) = cx;
    shift(1, 2) = cy;
    Eigen::Matrix3d unshift = Eigen::Matrix3d::Identity();
    unshift(0, 2) = -cx;
    unshift(1, 2) = -cy;
    return affine_from_homogeneous(shift * centered * unshift);
  };

  RegistrationResult result;
  Eigen::Matrix3d warp = Eigen::Matrix3d::Identity();
  Eigen::Matrix<double, 6, 1> rhs;
  double ssd = residual(warp, &rhs);
  result.ssd_identity = ssd;
  Eigen::Matrix3d best = warp;
  double best_ssd = ssd;

  Eigen::LDLT<Eigen::Matrix<double, 6, 6>> solver(hessian);
  const bool solvable = solver.info() == Eigen::Success && hessian.trace() > 0.0 && solver.isPositive() &&
                        solver.vectorD().minCoeff() > 1e-12 * solver.vectorD().maxCoeff();
  int increases = 0;
  bool diverged = !solvable;
  for (int it = 0; solvable && it < config.max_iterations; ++it) {
    const Eigen::Matrix<double, 6, 1> dp = solver.solve(rhs);
    warp = warp * detail::params_to_matrix(dp).inverse();
    const double previous = ssd;
    ssd = residual(warp, &rhs);
    result.iterations = it + 1;
    if (!std::isfinite(ssd)) {
      diverged = true;
      break;
    }
    if (ssd < best_ssd) {
      best_ssd = ssd;
      best = warp;
    }
    increases = ssd > previous ? increases + 1 : 0;
    if (increases >= config.divergence_patience) {
      diverged = true;
      break;
    }
    if (dp.norm() < config.update_tolerance) {
      result.converged = true;
      break;
    }
  }

  if (diverged) {
    best = Eigen::Matrix3d::Identity();
    best_ssd = result.ssd_identity;
    result.registered_ok = false;
    result.converged = false;
  }
  result.warp = to_pixel_affine(best);
  result.ssd_final = best_ssd;
  result.registered = warp_affine(vis, result.warp, w, h);
  return result;
}

/// Crop of size `size` centered in `img`.
inline Image center_crop(const Image& img, Eigen::Index size) {
  require(size <= img.rows() && size <= img.cols(), "center_crop: crop larger than image");
  return img.block((img.rows() - size) / 2, (img.cols() - size) / 2, size, size);
}

// ---------------------------------------------------------------------------
// Gate, mining, pruning

struct MiningConfig {
  int window = 60;
  int stride = 12;
  int crop = 40;
  double sum_threshold = 1.0;
  double min_threshold = 0.4;
  int target_total = 0;  // pre-flip pair budget for spatial pruning; 0 disables pruning
  int grid_regions = 6;  // pruning grid is grid_regions x grid_regions over the face
  bool flip = true;
  int jobs = 1;
  RegistrationConfig registration{};

  void validate() const {
    require(window >= 3 && window <= kFaceSize, "mining: window must lie in [3, 224]");
    require(crop >= 1 && crop < window, "mining: crop must be smaller than the window");
    require(stride >= 1, "mining: stride must be positive");
    require(sum_threshold >= -2 && sum_threshold <= 2 && min_threshold >= -2 && min_threshold <= 2,
            "mining: thresholds must lie in [-2, 2]");
    require(target_total >= 0, "mining: target_total must be >= 0");
    require(grid_regions >= 1, "mining: grid_regions must be positive");
  }
};

struct GateResult {
  double corr = 0.0;
  double grad_corr = 0.0;
  bool accept = false;
};

/// Accept when the two correlations together reach the sum threshold and
/// neither falls below the minimum.
inline bool gate_accepts(double corr, double grad_corr, const MiningConfig& config = {}) {
  return corr + grad_corr >= config.sum_threshold && std::min(corr, grad_corr) >= config.min_threshold;
}

inline GateResult similarity_gate(const Image& p, const Image& q, const MiningConfig& config = {}) {
  require(p.rows() == q.rows() && p.cols() == q.cols(), "similarity_gate: patch shapes differ");
  GateResult r;
  if (!(image_std(p) > 1e-12) || !(image_std(q) > 1e-12)) return r;
  r.corr = pearson_correlation(p, q);
  r.grad_corr = pearson_correlation(gradient_magnitude(p), gradient_magnitude(q));
  r.accept = gate_accepts(r.corr, r.grad_corr, config);
  return r;
}

struct PatchPair {
  Image nir;
  Image vis;             // registered VIS luminance
  Image vis_cb, vis_cr;  // registered VIS chroma, empty when the source had none
  SubjectId subject = 0;
  int grid_x = 0;  // top-left corner of the mining window in the aligned face
  int grid_y = 0;
  bool flipped = false;
  std::uint32_t nir_index = 0;  // positions of the source faces in the mining input
  std::uint32_t vis_index = 0;

  bool has_chroma() const { return vis_cb.size() > 0 && vis_cr.size() > 0; }
};

inline PatchPair flip_pair(const PatchPair& p) {
  PatchPair f = p;
  f.nir = flip_horizontal(p.nir);
  f.vis = flip_horizontal(p.vis);
  if (p.has_chroma()) {
    f.vis_cb = flip_horizontal(p.vis_cb);
    f.vis_cr = flip_horizontal(p.vis_cr);
  }
  f.flipped = !p.flipped;
  return f;
}

struct MiningResult {
  std::vector<PatchPair> pairs;
  std::size_t windows_scanned = 0;
  std::size_t accepted = 0;  // before pruning
  std::size_t kept = 0;      // after pruning, before flipping
};

/// All window positions along one axis.
inline std::vector<int> window_positions(const MiningConfig& config) {
  std::vector<int> pos;
  for (int p = 0; p + config.window <= kFaceSize; p += config.stride) pos.push_back(p);
  return pos;
}

/// Scans one NIR/VIS face pair; returns accepted (unflipped) pairs in
/// row-major window order.
inline std::vector<PatchPair> mine_face_pair(const AlignedFace& nir, const AlignedFace& vis, const MiningConfig& config,
                                             std::uint32_t nir_index = 0, std::uint32_t vis_index = 0,
                                             std::size_t* scanned = nullptr) {
  require(nir.luma.rows() == kFaceSize && nir.luma.cols() == kFaceSize && vis.luma.rows() == kFaceSize &&
              vis.luma.cols() == kFaceSize,
          "mine_face_pair: faces must be 224x224");
  std::vector<PatchPair> out;
  const auto positions = window_positions(config);
  const int offset = (config.window - config.crop) / 2;
  for (int gy : positions)
    for (int gx : positions) {
      if (scanned) ++*scanned;
      const Image nir_win = nir.luma.block(gy, gx, config.window, config.window);
      const Image vis_win = vis.luma.block(gy, gx, config.window, config.window);
      if (!(image_std(nir_win) > 1e-12) || !(image_std(vis_win) > 1e-12)) continue;
      const auto reg = affine_register(vis_win, nir_win, config.registration);
      const Image nir_crop = nir_win.block(offset, offset, config.crop, config.crop);
      const Image vis_crop = reg.registered.block(offset, offset, config.crop, config.crop);
      if (!similarity_gate(nir_crop, vis_crop, config).accept) continue;
      PatchPair pair;
      pair.nir = nir_crop;
      pair.vis = vis_crop;
      if (vis.has_chroma()) {
        const Image cb = vis.cb.block(gy, gx, config.window, config.window);
        const Image cr = vis.cr.block(gy, gx, config.window, config.window);
        pair.vis_cb = warp_affine(cb, reg.warp, config.window, config.window).block(offset, offset, config.crop, config.crop);
        pair.vis_cr = warp_affine(cr, reg.warp, config.window, config.window).block(offset, offset, config.crop, config.crop);
      }
      pair.subject = nir.subject;
      pair.grid_x = gx;
      pair.grid_y = gy;
      pair.nir_index = nir_index;
      pair.vis_index = vis_index;
      out.push_back(std::move(pair));
    }
  return out;
}

/// Caps each cell of a grid_regions x grid_regions partition of the face at
/// ceil(target_total / cells) pairs, keeping evenly spaced members of each cell.
inline std::vector<PatchPair> prune_spatially(std::vector<PatchPair> pairs, const MiningConfig& config) {
  if (config.target_total <= 0) return pairs;
  const int cells = config.grid_regions * config.grid_regions;
  const std::size_t quota = static_cast<std::size_t>((config.target_total + cells - 1) / cells);
  std::map<int, std::vector<std::size_t>> by_cell;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double cx = pairs[i].grid_x + 0.5 * config.window;
    const double cy = pairs[i].grid_y + 0.5 * config.window;
    const int rx = std::min(config.grid_regions - 1, static_cast<int>(cx * config.grid_regions / kFaceSize));
    const int ry = std::min(config.grid_regions - 1, static_cast<int>(cy * config.grid_regions / kFaceSize));
    by_cell[ry * config.grid_regions + rx].push_back(i);
  }
  std::vector<std::size_t> keep;
  for (const auto& [cell, members] : by_cell) {
    if (members.size() <= quota) {
      keep.insert(keep.end(), members.begin(), members.end());
      continue;
    }
    for (std::size_t j = 0; j < quota; ++j) keep.push_back(members[j * members.size() / quota]);
  }
  std::sort(keep.begin(), keep.end());
  std::vector<PatchPair> out;
  out.reserve(keep.size());
  for (auto i : keep) out.push_back(std::move(pairs[i]));
  return out;
}

/// Mines every same-subject NIR x VIS face pair. Output order is by subject,
/// then NIR face, then VIS face (input order), then window row-major, and does
/// not depend on `jobs`.
inline MiningResult mine_pairs(const std::vector<AlignedFace>& nir_faces, const std::vector<AlignedFace>& vis_faces,
                               const MiningConfig& config = {}) {
  config.validate();
  struct Task {
    std::uint32_t nir, vis;
  };
  std::map<SubjectId, std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>>> groups;
  for (std::uint32_t i = 0; i < nir_faces.size(); ++i) groups[nir_faces[i].subject].first.push_back(i);
  for (std::uint32_t i = 0; i < vis_faces.size(); ++i) groups[vis_faces[i].subject].second.push_back(i);
  std::vector<Task> tasks;
  for (const auto& [subject, g] : groups)
    for (auto n : g.first)
      for (auto v : g.second) tasks.push_back({n, v});

  std::vector<std::vector<PatchPair>> per_task(tasks.size());
  std::vector<std::size_t> scanned(tasks.size(), 0);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks.size(); t = next++)
      per_task[t] = mine_face_pair(nir_faces[tasks[t].nir], vis_faces[tasks[t].vis], config, tasks[t].nir,
                                   tasks[t].vis, &scanned[t]);
  };
  const int jobs = std::max(1, std::min<int>(config.jobs, static_cast<int>(tasks.size())));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int j = 0; j < jobs; ++j) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }

  MiningResult result;
  std::vector<PatchPair> accepted;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    result.windows_scanned += scanned[t];
    for (auto& p : per_task[t]) accepted.push_back(std::move(p));
  }
  result.accepted = accepted.size();
  auto kept = prune_spatially(std::move(accepted), config);
  result.kept = kept.size();
  for (auto& p : kept) {
    if (config.flip) {
      PatchPair flipped = flip_pair(p);
      result.pairs.push_back(std::move(p));
      result.pairs.push_back(std::move(flipped));
    } else {
      result.pairs.push_back(std::move(p));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Patch dataset file
//
//   char[4] "NVPD", u32 version, u32 crop, u32 planes (2 = NIR + VIS luma,
//   4 = NIR + VIS Y/Cb/Cr), u64 count, then per record:
//   i32 subject, i32 grid_x, i32 grid_y, u8 flipped, u8[3] zero,
//   u32 nir_index, u32 vis_index, planes * crop * crop f32 (row-major planes).
// A companion "<path>.idx" text index lists one line per record.

inline constexpr char kPatchMagic[4] = {'N', 'V', 'P', 'D'};
inline constexpr std::uint32_t kPatchFormatVersion = 1;

inline void save_patch_dataset(const std::string& path, const std::vector<PatchPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  const std::uint32_t crop = pairs.empty() ? 0u : static_cast<std::uint32_t>(pairs.front().nir.rows());
  const bool chroma = !pairs.empty() && std::all_of(pairs.begin(), pairs.end(), [](const PatchPair& p) { return p.has_chroma(); });
  const std::uint32_t planes = chroma ? 4u : 2u;
  out.write(kPatchMagic, 4);
  io::write_pod(out, kPatchFormatVersion);
  io::write_pod(out, crop);
  io::write_pod(out, planes);
  io::write_pod<std::uint64_t>(out, pairs.size());
  auto write_plane = [&](const Image& img) {
    require(img.rows() == crop && img.cols() == crop, "save_patch_dataset: patch sizes differ");
    for (Eigen::Index y = 0; y < img.rows(); ++y)
      for (Eigen::Index x = 0; x < img.cols(); ++x) io::write_pod<float>(out, static_cast<float>(img(y, x)));
  };
  std::ofstream index(path + ".idx");
  index << "# record subject grid_x grid_y flipped nir_index vis_index\n";
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    io::write_pod<std::int32_t>(out, p.subject);
    io::write_pod<std::int32_t>(out, p.grid_x);
    io::write_pod<std::int32_t>(out, p.grid_y);
    const std::uint8_t flags[4] = {static_cast<std::uint8_t>(p.flipped ? 1 : 0), 0, 0, 0};
    out.write(reinterpret_cast<const char*>(flags), 4);
    io::write_pod(out, p.nir_index);
    io::write_pod(out, p.vis_index);
    write_plane(p.nir);
    write_plane(p.vis);
    if (chroma) {
      write_plane(p.vis_cb);
      write_plane(p.vis_cr);
    }
    index << i << ' ' << p.subject << ' ' << p.grid_x << ' ' << p.grid_y << ' ' << (p.flipped ? 1 : 0) << ' '
          << p.nir_index << ' ' << p.vis_index << '\n';
  }
  if (!out) throw Error("failed writing patch dataset '" + path + "'");
}

inline std::vector<PatchPair> load_patch_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kPatchMagic, 4) != 0) throw FormatError("'" + path + "' is not a patch dataset");
  const auto version = io::read_pod<std::uint32_t>(in);
  if (version != kPatchFormatVersion) throw FormatError("unsupported patch dataset version " + std::to_string(version));
  const auto crop = static_cast<Eigen::Index>(io::read_pod<std::uint32_t>(in));
  const auto planes = io::read_pod<std::uint32_t>(in);
  const auto count = io::read_pod<std::uint64_t>(in);
  if (planes != 2 && planes != 4) throw FormatError("patch dataset: unsupported plane count");
  if (crop > 4096) throw FormatError("patch dataset: crop size out of range");
  auto read_plane = [&] {
    Image img(crop, crop);
    for (Eigen::Index y = 0; y < crop; ++y)
      for (Eigen::Index x = 0; x < crop; ++x) img(y, x) = static_cast<double>(io::read_pod<float>(in));
    return img;
  };
  std::vector<PatchPair> pairs;
  pairs.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    PatchPair p;
    p.subject = io::read_pod<std::int32_t>(in);
    p.grid_x = io::read_pod<std::int32_t>(in);
    p.grid_y = io::read_pod<std::int32_t>(in);
    std::uint8_t flags[4];
    in.read(reinterpret_cast<char*>(flags), 4);
    p.flipped = flags[0] != 0;
    p.nir_index = io::read_pod<std::uint32_t>(in);
    p.vis_index = io::read_pod<std::uint32_t>(in);
    p.nir = read_plane();
    p.vis = read_plane();
    if (planes == 4) {
      p.vis_cb = read_plane();
      p.vis_cr = read_plane();
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace nirvis
