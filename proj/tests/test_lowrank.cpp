#include "nirvis/lowrank.hpp"
#include "nirvis/matcher.hpp"
#include "nirvis/synthetic.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <limits>

using namespace nirvis;
using nirvis::test::random_matrix;

namespace {

// Independent oracle: singular values are square roots of eig(M^T M).
double nuclear_norm_oracle(const Matrix& m) {
  const Matrix gram = m.transpose() * m;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  double s = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) s += std::sqrt(std::max(0.0, eig.eigenvalues()(i)));
  return s;
}

// Columns of A span a random subspace, columns of B its orthogonal complement slice.
std::pair<Matrix, Matrix> orthogonal_pair(std::mt19937_64& rng, int d, int ra, int rb, int na, int nb) {
  const Matrix q = synthetic::random_orthogonal(d, rng);
  const Matrix a = q.leftCols(ra) * random_matrix(ra, na, rng);
  const Matrix b = q.middleCols(ra, rb) * random_matrix(rb, nb, rng);
  return {a, b};
}

LabeledFeatureMatrix three_subspace_classes(std::uint64_t seed, double noise) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, noise);
  const int d = 20, per = 8;
  Matrix data(d, 3 * per);
  std::vector<SubjectId> labels;
  for (int c = 0; c < 3; ++c) {
    const Matrix basis = random_matrix(d, 2, rng);
    for (int j = 0; j < per; ++j) {
      Vector v = basis * random_matrix(2, 1, rng);
      for (int i = 0; i < d; ++i) v(i) += n(rng);
      data.col(c * per + j) = v;
      labels.push_back(c + 1);
    }
  }
  return LabeledFeatureMatrix(data, labels);
}

}  // namespace

TEST(NuclearNorm, IdentityIsTwo) { EXPECT_NEAR(nuclear_norm(Matrix::Identity(2, 2)), 2.0, 1e-12); }

TEST(NuclearNorm, UnitOuterProductIsOne) {
  std::mt19937_64 rng(3);
  Vector u = random_matrix(5, 1, rng).col(0).normalized();
  Vector v = random_matrix(4, 1, rng).col(0).normalized();
  EXPECT_NEAR(nuclear_norm(u * v.transpose()), 1.0, 1e-12);
}

TEST(NuclearNorm, MatchesEigenOracle) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const Matrix m = random_matrix(4, 3, rng);
    EXPECT_NEAR(nuclear_norm(m), nuclear_norm_oracle(m), 1e-9);
  }
}

TEST(NuclearNorm, RejectsNonFiniteAndEmpty) {
  Matrix m = Matrix::Identity(2, 2);
  m(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(nuclear_norm(m), InvalidInput);
  m(0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(nuclear_norm(m), InvalidInput);
  EXPECT_THROW(nuclear_norm(Matrix()), Error);
}

TEST(NuclearSubgradient, DiagonalGivesIdentity) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = 3;
  m(1, 1) = 2;
  EXPECT_TRUE(nuclear_subgradient(m).isApprox(Matrix::Identity(2, 2), 1e-12));
}

TEST(NuclearSubgradient, ScaleInvariant) {
  std::mt19937_64 rng(5);
  const Matrix m = random_matrix(4, 3, rng);
  EXPECT_TRUE(nuclear_subgradient(m).isApprox(nuclear_subgradient(5.0 * m), 1e-10));
}

TEST(NuclearSubgradient, DualityIdentity) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 20; ++t) {
    const Matrix m = random_matrix(3, 3, rng);
    const Matrix g = nuclear_subgradient(m);
    EXPECT_NEAR((g.array() * m.array()).sum(), nuclear_norm(m), 1e-8);
  }
}

TEST(NuclearSubgradient, RankDeficientTruncates) {
  std::mt19937_64 rng(7);
  const Matrix m = random_matrix(5, 1, rng) * random_matrix(1, 4, rng);
  const Matrix g = nuclear_subgradient(m);
  Eigen::JacobiSVD<Matrix> svd(g);
  EXPECT_NEAR(svd.singularValues()(0), 1.0, 1e-10);
  EXPECT_NEAR(svd.singularValues()(1), 0.0, 1e-10);
}

TEST(ConcatenatedNuclearNorm, ConcatenationInequalityRandom) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> dim(1, 12);
  for (int t = 0; t < 200; ++t) {
    const int rows = dim(rng);
    const Matrix a = random_matrix(rows, dim(rng), rng);
    const Matrix b = random_matrix(rows, dim(rng), rng);
    Matrix ab(rows, a.cols() + b.cols());
    ab << a, b;
    EXPECT_LE(nuclear_norm(ab), nuclear_norm(a) + nuclear_norm(b) + 1e-8);
  }
}

TEST(ConcatenatedNuclearNorm, EqualityForOrthogonalColumnSpaces) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 30; ++t) {
    auto [a, b] = orthogonal_pair(rng, 12, 3, 4, 5, 6);
    Matrix ab(a.rows(), a.cols() + b.cols());
    ab << a, b;
    EXPECT_NEAR(nuclear_norm(ab), nuclear_norm(a) + nuclear_norm(b), 1e-6);
  }
}

TEST(LowRankObjective, ZeroTransformGivesZero) {
  std::mt19937_64 rng(10);
  LabeledFeatureMatrix y(random_matrix(6, 8, rng), {1, 1, 2, 2, 3, 3, 4, 4});
  EXPECT_NEAR(lowrank_objective(LowRankTransform(Matrix::Zero(6, 6)), y), 0.0, 1e-15);
}

TEST(LowRankObjective, SingleClassIsZero) {
  std::mt19937_64 rng(11);
  LabeledFeatureMatrix y(random_matrix(6, 5, rng), {7, 7, 7, 7, 7});
  EXPECT_EQ(lowrank_objective(LowRankTransform(random_matrix(6, 6, rng)), y), 0.0);
}

TEST(LowRankObjective, OrthogonalClassesAtIdentityAreZero) {
  std::mt19937_64 rng(12);
  auto [a, b] = orthogonal_pair(rng, 10, 2, 3, 4, 4);
  Matrix data(10, 8);
  data << a, b;
  LabeledFeatureMatrix y(data, {1, 1, 1, 1, 2, 2, 2, 2});
  EXPECT_NEAR(lowrank_objective(LowRankTransform(10), y), 0.0, 1e-8);
}

TEST(LowRankObjective, DimensionMismatchThrows) {
  std::mt19937_64 rng(13);
  LabeledFeatureMatrix y(random_matrix(6, 4, rng), {1, 1, 2, 2});
  EXPECT_THROW(lowrank_objective(LowRankTransform(5), y), ContractError);
}

TEST(LowRankObjective, NonNegativeForRandomInputs) {
  std::mt19937_64 rng(14);
  std::uniform_int_distribution<int> cls(1, 4);
  for (int t = 0; t < 100; ++t) {
    std::vector<SubjectId> labels;
    for (int j = 0; j < 10; ++j) labels.push_back(cls(rng));
    LabeledFeatureMatrix y(random_matrix(7, 10, rng), labels);
    EXPECT_GE(lowrank_objective(LowRankTransform(random_matrix(7, 7, rng)), y), -1e-8);
  }
}

TEST(LowRankTransform, FreshIsIdentityAndValidates) {
  EXPECT_TRUE(LowRankTransform(4).matrix().isIdentity(0.0));
  EXPECT_EQ(LowRankTransform(4).trained_on_dim(), 4);
  EXPECT_THROW(LowRankTransform(Matrix::Zero(3, 4)), ContractError);
  Matrix bad = Matrix::Identity(2, 2);
  bad(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(LowRankTransform{bad}, InvalidInput);
}

TEST(LabeledFeatureMatrix, RejectsBadInput) {
  EXPECT_THROW(LabeledFeatureMatrix(Matrix::Zero(3, 2), {1}), ContractError);
  Matrix m = Matrix::Zero(3, 2);
  m(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(LabeledFeatureMatrix(m, {1, 2}), InvalidInput);
}

TEST(LearnLowRank, SingleClassReturnsIdentity) {
  std::mt19937_64 rng(15);
  LabeledFeatureMatrix y(random_matrix(5, 6, rng), {2, 2, 2, 2, 2, 2});
  const auto r = learn_lowrank_transform(y);
  EXPECT_TRUE(r.transform.matrix().isIdentity(0.0));
}

TEST(LearnLowRank, OrthogonalClassesStayAtMinimum) {
  std::mt19937_64 rng(16);
  auto [a, b] = orthogonal_pair(rng, 10, 2, 2, 5, 5);
  Matrix data(10, 10);
  data << a, b;
  LabeledFeatureMatrix y(data, {1, 1, 1, 1, 1, 2, 2, 2, 2, 2});
  const double initial = lowrank_objective(LowRankTransform(10), y);
  const auto r = learn_lowrank_transform(y);
  EXPECT_LE(lowrank_objective(r.transform, y), initial + 1e-9);
}

TEST(LearnLowRank, HalvesObjectiveOnThreeSubspaces) {
  const auto y = three_subspace_classes(17, 0.01);
  const auto r = learn_lowrank_transform(y);
  const double initial = lowrank_objective(LowRankTransform(y.dim()), y);
  EXPECT_LT(lowrank_objective(r.transform, y), 0.5 * initial);
  EXPECT_LE(r.outer_iterations, 50);
}

TEST(LearnLowRank, ObjectiveHistoryIsMonotone) {
  const auto y = three_subspace_classes(18, 0.01);
  const auto r = learn_lowrank_transform(y);
  ASSERT_GE(r.objective_history.size(), 2u);
  for (std::size_t i = 1; i < r.objective_history.size(); ++i)
    EXPECT_LE(r.objective_history[i], r.objective_history[i - 1] + 1e-9);
  EXPECT_NEAR(r.objective_history.back(), lowrank_objective(r.transform, y), 1e-9);
}

TEST(LearnLowRank, ConfigValidation) {
  CcpConfig c;
  c.max_outer_iters = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.inner_step = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.outer_tolerance = -1;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(Embed, IdentityLeavesInputUnchanged) {
  std::mt19937_64 rng(19);
  const Matrix x = random_matrix(6, 9, rng);
  EXPECT_EQ(embed(LowRankTransform(6), x), x);
}

TEST(Embed, ScalingDoesNotChangeMatches) {
  std::mt19937_64 rng(20);
  LabeledSet g{random_matrix(8, 10, rng), {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, {}, Spectrum::Vis};
  LabeledSet p{random_matrix(8, 15, rng), std::vector<SubjectId>(15, 3), {}, Spectrum::Nir};
  const auto base = identify(g, p, 1);
  LabeledSet g2 = g, p2 = p;
  const LowRankTransform t2(Matrix(2.0 * Matrix::Identity(8, 8)));
  g2.features = embed(t2, g.features);
  p2.features = embed(t2, p.features);
  const auto scaled = identify(g2, p2, 1);
  for (std::size_t i = 0; i < base.decisions.size(); ++i)
    EXPECT_EQ(base.decisions[i].predicted_label, scaled.decisions[i].predicted_label);
}

TEST(Embed, IsLinear) {
  std::mt19937_64 rng(21);
  const LowRankTransform t(random_matrix(5, 5, rng));
  const Matrix x = random_matrix(5, 4, rng), z = random_matrix(5, 4, rng);
  const double a = 1.7, b = -0.3;
  const Matrix lhs = embed(t, a * x + b * z);
  const Matrix rhs = a * embed(t, x) + b * embed(t, z);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Embed, DimensionMismatchThrows) {
  EXPECT_THROW(embed(LowRankTransform(3), Matrix::Zero(4, 2)), ContractError);
}

TEST(Embed, HeldOutCrossSpectralMatchingImproves) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    synthetic::CrossSpectralConfig cfg;
    cfg.subjects = 10;
    cfg.dim = 32;
    cfg.noise = 0.01;
    cfg.seed = seed;
    const auto set = synthetic::make_cross_spectral(cfg);
    std::vector<FeatureRecord> train, gallery, probes;
    for (const auto& r : set.records) {
      const int k = std::stoi(r.image_id.substr(r.image_id.find('_') + 1));
      if (k < cfg.samples_per_spectrum / 2)
        train.push_back(r);
      else
        (r.spectrum == Spectrum::Vis ? gallery : probes).push_back(r);
    }
    const auto res = learn_lowrank_transform(LabeledFeatureMatrix(feature_matrix(train), record_labels(train)));
    LabeledSet g{feature_matrix(gallery), record_labels(gallery), {}, Spectrum::Vis};
    LabeledSet p{feature_matrix(probes), record_labels(probes), {}, Spectrum::Nir};
    const double base = identify(g, p, 1).rank1();
    g.features = embed(res.transform, g.features);
    p.features = embed(res.transform, p.features);
    EXPECT_GT(identify(g, p, 1).rank1(), base + 0.1) << "seed " << seed;
  }
}

TEST(TransformFile, RoundTripIsBitExact) {
  nirvis::test::TempDir dir("transform");
  std::mt19937_64 rng(22);
  const LowRankTransform t(random_matrix(7, 7, rng));
  save_transform(dir.file("t.nvmx"), t);
  const auto back = load_transform(dir.file("t.nvmx"));
  EXPECT_EQ(back.matrix(), t.matrix());
}
