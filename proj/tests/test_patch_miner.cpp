#include "nirvis/patch_miner.hpp"
#include "nirvis/synthetic.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace nirvis;
using nirvis::test::random_image;

namespace {

AlignedFace face_from(const Image& luma, SubjectId subject, Spectrum s, const std::string& id) {
  AlignedFace f;
  f.luma = luma;
  f.subject = subject;
  f.spectrum = s;
  f.image_id = id;
  return f;
}

}  // namespace

TEST(LandmarkAlign, CanonicalLandmarksGiveCenterCrop) {
  std::mt19937_64 rng(1);
  const Image img = random_image(240, 240, rng);
  // Canonical landmarks offset by 8 px: alignment is a pure shift.
  const CanonicalLandmarks c;
  Landmarks lm = c.points();
  for (auto& p : lm) p += Eigen::Vector2d(8, 8);
  const auto face = landmark_align(img, lm, 3, Spectrum::Nir, "x");
  ASSERT_EQ(face.luma.rows(), kFaceSize);
  ASSERT_EQ(face.luma.cols(), kFaceSize);
  EXPECT_LT((face.luma - center_crop(img, kFaceSize)).abs().maxCoeff(), 1e-9);
  EXPECT_EQ(face.subject, 3);
  EXPECT_EQ(face.image_id, "x");
}

TEST(LandmarkAlign, WarpSendsLandmarksToCanonical) {
  Landmarks src{Eigen::Vector2d(60, 80), Eigen::Vector2d(130, 85), Eigen::Vector2d(100, 160)};
  const Affine2 map = landmark_warp(src);
  const auto dst = CanonicalLandmarks{}.points();
  for (int i = 0; i < 3; ++i) EXPECT_LT((apply_affine(map, dst[i].x(), dst[i].y()) - src[i]).norm(), 1e-9);
}

TEST(LandmarkAlign, TranslationInvariance) {
  const auto face = synthetic::render_canonical_face(5);
  const Image canon = face.nir;
  Image big = Image::Zero(260, 260), moved = Image::Zero(260, 260);
  big.block(18, 18, kFaceSize, kFaceSize) = canon;
  moved.block(18 - 7, 18 + 10, kFaceSize, kFaceSize) = canon;
  Landmarks lm = CanonicalLandmarks{}.points(), lm2 = lm;
  for (auto& p : lm) p += Eigen::Vector2d(18, 18);
  for (auto& p : lm2) p += Eigen::Vector2d(28, 11);
  const auto a = landmark_align(big, lm), b = landmark_align(moved, lm2);
  EXPECT_LE((a.luma - b.luma).abs().mean(), 1.0 / 255.0);
}

TEST(LandmarkAlign, Errors) {
  const Image img = Image::Zero(240, 240);
  Landmarks collinear{Eigen::Vector2d(10, 10), Eigen::Vector2d(20, 20), Eigen::Vector2d(30, 30)};
  EXPECT_THROW(landmark_align(img, collinear), InvalidInput);
  Landmarks outside{Eigen::Vector2d(10, 10), Eigen::Vector2d(300, 20), Eigen::Vector2d(30, 90)};
  EXPECT_THROW(landmark_align(img, outside), InvalidInput);
}

TEST(NormalizeStats, HitsReferenceStatistics) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 10; ++t) {
    auto face = face_from(random_image(30, 30, rng), 1, Spectrum::Nir, "a");
    const auto out = normalize_stats(face, 0.4, 0.15);
    EXPECT_NEAR(image_mean(out.luma), 0.4, 1e-6 * 0.4);
    EXPECT_NEAR(image_std(out.luma), 0.15, 1e-6 * 0.15);
  }
}

TEST(NormalizeStats, AffineCopyRecoversReference) {
  std::mt19937_64 rng(3);
  const Image ref = random_image(20, 20, rng);
  const auto out = normalize_stats(face_from(2.0 * ref + 5.0, 1, Spectrum::Vis, "a"), image_mean(ref), image_std(ref));
  EXPECT_LT((out.luma - ref).abs().maxCoeff(), 1e-9);
  const auto same = normalize_stats(face_from(ref, 1, Spectrum::Vis, "a"), image_mean(ref), image_std(ref));
  EXPECT_LT((same.luma - ref).abs().maxCoeff(), 1e-6);
}

TEST(NormalizeStats, ConstantImageIsError) {
  EXPECT_THROW(normalize_stats(face_from(Image::Constant(5, 5, 0.3), 1, Spectrum::Nir, "a"), 0.5, 0.1), InvalidInput);
}

TEST(NormalizeFace, ChromaUsesOwnReference) {
  std::mt19937_64 rng(4);
  auto ref = face_from(random_image(12, 12, rng), 1, Spectrum::Vis, "r");
  ref.cb = random_image(12, 12, rng, 0.4, 0.6);
  ref.cr = random_image(12, 12, rng, 0.3, 0.7);
  auto f = face_from(random_image(12, 12, rng), 2, Spectrum::Vis, "f");
  f.cb = random_image(12, 12, rng);
  f.cr = Image::Constant(12, 12, 0.9);
  const auto stats = ReferenceStats::of(ref);
  const auto out = normalize_face(f, stats);
  EXPECT_NEAR(image_mean(out.cb), stats.cb.mean, 1e-9);
  EXPECT_NEAR(image_std(out.cb), stats.cb.std, 1e-9);
  EXPECT_NEAR(image_mean(out.cr), stats.cr.mean, 1e-9);
  EXPECT_NEAR(image_std(out.cr), 0.0, 1e-12);
}

TEST(Registration, IdenticalPatchesGiveIdentity) {
  std::mt19937_64 rng(5);
  const auto trial = nirvis::test::registration_trial(rng);
  const auto r = affine_register(trial.nir, trial.nir);
  EXPECT_TRUE(r.registered_ok);
  EXPECT_LT((r.warp - affine_identity()).norm(), 1e-3);
}

TEST(Registration, RecoversTranslation) {
  std::mt19937_64 rng(6);
  const nirvis::test::Texture tex(rng);
  Affine2 shift = affine_identity();
  shift(0, 2) = -2.0;
  shift(1, 2) = -1.0;
  const Image nir = tex.render(60, affine_identity());
  const Image vis = tex.render(60, shift);  // vis(p) = nir(p - (2, 1))
  const auto r = affine_register(vis, nir);
  EXPECT_NEAR(r.warp(0, 2), 2.0, 0.5);
  EXPECT_NEAR(r.warp(1, 2), 1.0, 0.5);
  EXPECT_LE(r.ssd_final, r.ssd_identity);
}

TEST(Registration, RandomShiftShearWithinHalfPixel) {
  std::mt19937_64 rng(7);
  int good = 0;
  for (int t = 0; t < 20; ++t) {
    const auto trial = nirvis::test::registration_trial(rng);
    const auto r = affine_register(trial.vis, trial.nir);
    EXPECT_LE(r.ssd_final, r.ssd_identity);
    if (nirvis::test::corner_error(r.warp, trial.truth, 60) <= 0.5) ++good;
  }
  EXPECT_GE(good, 19);
}

TEST(Registration, NoiseIsRejectedDownstream) {
  std::mt19937_64 rng(8);
  const Image a = random_image(60, 60, rng), b = random_image(60, 60, rng);
  const auto r = affine_register(b, a);
  EXPECT_LE(r.ssd_final, r.ssd_identity);
  if (r.registered_ok) {
    EXPECT_LT((r.warp - affine_identity()).norm(), 1.0);
  }
  EXPECT_FALSE(similarity_gate(center_crop(a, 40), center_crop(r.registered, 40)).accept);
}

TEST(Registration, ConstantPatchIsError) {
  std::mt19937_64 rng(9);
  EXPECT_THROW(affine_register(Image::Constant(60, 60, 0.5), random_image(60, 60, rng)), InvalidInput);
}

TEST(Gate, ThresholdExamples) {
  EXPECT_TRUE(gate_accepts(0.45, 0.65));
  EXPECT_TRUE(gate_accepts(0.5, 0.5));
  EXPECT_FALSE(gate_accepts(0.39, 0.70));
  EXPECT_FALSE(gate_accepts(0.45, 0.50));
  EXPECT_FALSE(gate_accepts(-1.0, -1.0));
}

TEST(Gate, SymmetricInComponents) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    const double a = u(rng), b = u(rng);
    EXPECT_EQ(gate_accepts(a, b), gate_accepts(b, a));
  }
}

TEST(Gate, PatchCases) {
  std::mt19937_64 rng(11);
  const Image p = gaussian_filter(random_image(40, 40, rng), 2.0);
  const auto same = similarity_gate(p, p);
  EXPECT_NEAR(same.corr, 1.0, 1e-12);
  EXPECT_NEAR(same.grad_corr, 1.0, 1e-12);
  EXPECT_TRUE(same.accept);
  const auto neg = similarity_gate(p, Image(-p));
  EXPECT_NEAR(neg.corr, -1.0, 1e-12);
  EXPECT_FALSE(neg.accept);
  const auto flat = similarity_gate(p, Image::Constant(40, 40, 0.2));
  EXPECT_EQ(flat.corr, 0.0);
  EXPECT_FALSE(flat.accept);
}

TEST(Mining, SelfPairAcceptsEveryWindow) {
  const auto face = synthetic::render_canonical_face(12);
  const Image luma = rgb_to_ycbcr(face.vis).y;
  MiningConfig cfg;
  cfg.flip = false;
  const auto result = mine_pairs({face_from(luma, 1, Spectrum::Nir, "n")}, {face_from(luma, 1, Spectrum::Vis, "v")}, cfg);
  const auto positions = window_positions(cfg);
  EXPECT_EQ(result.windows_scanned, positions.size() * positions.size());
  EXPECT_EQ(result.accepted, result.windows_scanned);
  for (const auto& p : result.pairs) {
    EXPECT_EQ(p.nir.rows(), 40);
    EXPECT_EQ(p.vis.cols(), 40);
    EXPECT_EQ(p.grid_x % cfg.stride, 0);
    EXPECT_EQ(p.grid_y % cfg.stride, 0);
  }
}

TEST(Mining, UnrelatedContentRarelyPasses) {
  const auto a = synthetic::render_canonical_face(21);
  std::mt19937_64 rng(22);
  const Image unrelated = 0.5 + 0.1 * synthetic::smooth_noise(rng, 6.0).array();
  MiningConfig cfg;
  cfg.flip = false;
  const auto self = mine_pairs({face_from(a.nir, 1, Spectrum::Nir, "n")}, {face_from(rgb_to_ycbcr(a.vis).y, 1, Spectrum::Vis, "v")}, cfg);
  const auto cross = mine_pairs({face_from(a.nir, 1, Spectrum::Nir, "n")}, {face_from(unrelated, 1, Spectrum::Vis, "v")}, cfg);
  ASSERT_GT(self.accepted, 0u);
  EXPECT_LT(static_cast<double>(cross.accepted), 0.1 * static_cast<double>(self.accepted));
}

TEST(Mining, FlipDoublesAndIsInvolution) {
  const auto face = synthetic::render_canonical_face(13);
  const Image luma = rgb_to_ycbcr(face.vis).y;
  MiningConfig cfg;
  cfg.stride = 40;
  const auto result = mine_pairs({face_from(luma, 1, Spectrum::Nir, "n")}, {face_from(luma, 1, Spectrum::Vis, "v")}, cfg);
  EXPECT_EQ(result.pairs.size(), 2 * result.kept);
  for (std::size_t i = 0; i < result.pairs.size(); i += 2) {
    EXPECT_FALSE(result.pairs[i].flipped);
    EXPECT_TRUE(result.pairs[i + 1].flipped);
    const auto twice = flip_pair(result.pairs[i + 1]);
    EXPECT_EQ(twice.nir.matrix(), result.pairs[i].nir.matrix());
    EXPECT_EQ(twice.vis.matrix(), result.pairs[i].vis.matrix());
  }
}

TEST(Mining, OnlySameSubjectPairsAndDeterministicAcrossJobs) {
  std::vector<AlignedFace> nir, vis;
  for (int s = 0; s < 3; ++s) {
    const auto f = synthetic::render_canonical_face(100 + s);
    nir.push_back(face_from(f.nir, s + 1, Spectrum::Nir, "n" + std::to_string(s)));
    auto v = face_from(rgb_to_ycbcr(f.vis).y, s + 1, Spectrum::Vis, "v" + std::to_string(s));
    vis.push_back(v);
  }
  MiningConfig cfg;
  cfg.stride = 24;
  const auto one = mine_pairs(nir, vis, cfg);
  cfg.jobs = 3;
  const auto three = mine_pairs(nir, vis, cfg);
  ASSERT_EQ(one.pairs.size(), three.pairs.size());
  for (std::size_t i = 0; i < one.pairs.size(); ++i) {
    EXPECT_EQ(one.pairs[i].subject, three.pairs[i].subject);
    EXPECT_EQ(one.pairs[i].grid_x, three.pairs[i].grid_x);
    EXPECT_EQ(one.pairs[i].nir.matrix(), three.pairs[i].nir.matrix());
    EXPECT_EQ(nir[one.pairs[i].nir_index].subject, vis[one.pairs[i].vis_index].subject);
  }
  EXPECT_TRUE(mine_pairs({}, {}, cfg).pairs.empty());
}

TEST(Mining, ChromaFollowsRegistration) {
  const auto f = synthetic::render_canonical_face(31);
  auto v = face_from(rgb_to_ycbcr(f.vis).y, 1, Spectrum::Vis, "v");
  const auto ycc = rgb_to_ycbcr(f.vis);
  v.cb = ycc.cb;
  v.cr = ycc.cr;
  MiningConfig cfg;
  cfg.stride = 48;
  cfg.flip = false;
  const auto r = mine_pairs({face_from(ycc.y, 1, Spectrum::Nir, "n")}, {v}, cfg);
  ASSERT_FALSE(r.pairs.empty());
  for (const auto& p : r.pairs) {
    ASSERT_TRUE(p.has_chroma());
    const int off = (cfg.window - cfg.crop) / 2;
    EXPECT_LT((p.vis_cb - ycc.cb.block(p.grid_y + off, p.grid_x + off, 40, 40)).abs().maxCoeff(), 1e-3);
  }
}

TEST(Pruning, QuotaPerCell) {
  std::vector<PatchPair> pairs;
  for (int gy = 0; gy + 60 <= kFaceSize; gy += 12)
    for (int gx = 0; gx + 60 <= kFaceSize; gx += 12) {
      PatchPair p;
      p.grid_x = gx;
      p.grid_y = gy;
      pairs.push_back(p);
    }
  MiningConfig cfg;
  cfg.target_total = 36;
  const auto kept = prune_spatially(pairs, cfg);
  std::map<int, int> per_cell;
  for (const auto& p : kept) {
    const int rx = std::min(5, static_cast<int>((p.grid_x + 30.0) * 6 / kFaceSize));
    const int ry = std::min(5, static_cast<int>((p.grid_y + 30.0) * 6 / kFaceSize));
    ++per_cell[ry * 6 + rx];
  }
  for (const auto& [cell, n] : per_cell) EXPECT_LE(n, 1);
  EXPECT_LT(kept.size(), pairs.size());
  cfg.target_total = 0;
  EXPECT_EQ(prune_spatially(pairs, cfg).size(), pairs.size());
}

TEST(MiningConfig, Validation) {
  MiningConfig c;
  c.crop = 60;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.sum_threshold = 3;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.stride = 0;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(PatchDataset, RoundTripThroughFloat) {
  nirvis::test::TempDir dir("patches");
  std::mt19937_64 rng(14);
  std::vector<PatchPair> pairs(3);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto& p = pairs[i];
    p.nir = random_image(40, 40, rng);
    p.vis = random_image(40, 40, rng);
    p.vis_cb = random_image(40, 40, rng);
    p.vis_cr = random_image(40, 40, rng);
    p.subject = static_cast<SubjectId>(i + 4);
    p.grid_x = 12 * static_cast<int>(i);
    p.grid_y = 24;
    p.flipped = i == 1;
    p.nir_index = static_cast<std::uint32_t>(i);
    p.vis_index = 7;
  }
  save_patch_dataset(dir.file("p.nvpd"), pairs);
  EXPECT_TRUE(std::filesystem::exists(dir.file("p.nvpd.idx")));
  const auto back = load_patch_dataset(dir.file("p.nvpd"));
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].subject, pairs[i].subject);
    EXPECT_EQ(back[i].grid_x, pairs[i].grid_x);
    EXPECT_EQ(back[i].flipped, pairs[i].flipped);
    EXPECT_EQ(back[i].vis_index, 7u);
    EXPECT_LT((back[i].vis_cr - pairs[i].vis_cr).abs().maxCoeff(), 1e-7);
  }
}

TEST(PatchDataset, RejectsTruncatedFile) {
  nirvis::test::TempDir dir("patches_bad");
  std::vector<PatchPair> pairs(1);
  pairs[0].nir = Image::Zero(4, 4);
  pairs[0].vis = Image::Zero(4, 4);
  save_patch_dataset(dir.file("p.nvpd"), pairs);
  std::filesystem::resize_file(dir.file("p.nvpd"), std::filesystem::file_size(dir.file("p.nvpd")) - 8);
  EXPECT_THROW(load_patch_dataset(dir.file("p.nvpd")), FormatError);
  std::ofstream(dir.file("junk.nvpd")) << "JUNK";
  EXPECT_THROW(load_patch_dataset(dir.file("junk.nvpd")), FormatError);
}
