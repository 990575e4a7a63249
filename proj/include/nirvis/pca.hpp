#pragma once

// Principal component reduction of feature columns, and folding of a
// low-rank transform into the projection.

#include "nirvis/core.hpp"
#include "nirvis/lowrank.hpp"
#include "nirvis/matrix_io.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <string>

namespace nirvis {

struct PcaModel {
  Vector mean;        // input_dim
  Matrix projection;  // output_dim x input_dim, orthonormal rows
  Vector variances;   // eigenvalues of the sample covariance, descending

  Eigen::Index input_dim() const { return projection.cols(); }
  Eigen::Index output_dim() const { return projection.rows(); }
};

/// Default working dimension clamped to what the training data supports.
inline Eigen::Index pca_working_dim(Eigen::Index requested, Eigen::Index dim, Eigen::Index samples) {
  return std::max<Eigen::Index>(1, std::min({requested, dim, samples - 1}));
}

namespace detail {

// Flip each row so its largest-magnitude entry is positive; eigenvectors are
// only defined up to sign.
inline void canonicalize_signs(Matrix& rows) {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    Eigen::Index arg = 0;
    rows.row(i).cwiseAbs().maxCoeff(&arg);
    if (rows(i, arg) < 0) rows.row(i) *= -1.0;
  }
}

// Extends orthonormal rows of `basis` to `target` rows with directions from the
// standard basis, used when the data span is smaller than the requested rank.
inline Matrix complete_orthonormal_rows(Matrix basis, Eigen::Index target) {
  const Eigen::Index d = basis.cols();
  Eigen::Index have = basis.rows();
  basis.conservativeResize(target, d);
  for (Eigen::Index e = 0; e < d && have < target; ++e) {
    Vector v = Vector::Unit(d, e);
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index i = 0; i < have; ++i) v -= basis.row(i).dot(v) * basis.row(i).transpose();
    const double n = v.norm();
    if (n > 0.5) basis.row(have++) = v.transpose() / n;
  }
  return basis;
}

}  // namespace detail

inline PcaModel fit_pca(const Matrix& x, Eigen::Index k) {
  const Eigen::Index d = x.rows();
  const Eigen::Index n = x.cols();
  if (k < 1 || k > std::min(d, n))
    throw ContractError("fit_pca: k=" + std::to_string(k) + " outside [1, min(d, N)=" + std::to_string(std::min(d, n)) +
                        "]");
  require_finite(x, "fit_pca");

  PcaModel model;
  model.mean = x.rowwise().mean();
  const Matrix centered = x.colwise() - model.mean;
  const double scale = n > 1 ? 1.0 / static_cast<double>(n - 1) : 1.0;

  if (n >= d) {
    const Matrix cov = (centered * centered.transpose()) * scale;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    // Eigen returns ascending eigenvalues.
    model.projection = eig.eigenvectors().rowwise().reverse().leftCols(k).transpose();
    model.variances = eig.eigenvalues().reverse().head(k).cwiseMax(0.0);
  } else {
    // Centered Gram matrix: the same nonzero spectrum in N x N.
    const Matrix gram = (centered.transpose() * centered) * scale;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    const Vector values = eig.eigenvalues().reverse();
    const Matrix vectors = eig.eigenvectors().rowwise().reverse();
    const double top = std::max(values(0), 0.0);
    Matrix rows(0, d);
    Vector variances = Vector::Zero(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      if (values(i) <= 1e-12 * top || values(i) <= 0.0) break;
      Vector dir = centered * vectors.col(i);
      dir /= dir.norm();
      rows.conservativeResize(rows.rows() + 1, d);
      rows.row(rows.rows() - 1) = dir.transpose();
      variances(i) = values(i);
    }
    model.projection = detail::complete_orthonormal_rows(std::move(rows), k);
    model.variances = std::move(variances);
  }
  detail::canonicalize_signs(model.projection);
  return model;
}

inline Matrix apply_pca(const PcaModel& model, const Matrix& x) {
  if (x.rows() != model.input_dim())
    throw ContractError("apply_pca: input dim " + std::to_string(x.rows()) + " != model dim " +
                        std::to_string(model.input_dim()));
  return model.projection * (x.colwise() - model.mean);
}

/// Affine map x -> matrix * (x - mean), the one-step form of PCA followed by T.
struct MergedEmbedding {
  Matrix matrix;
  Vector mean;

  Matrix apply(const Matrix& x) const {
    if (x.rows() != matrix.cols()) throw ContractError("merged embedding: input dim mismatch");
    return matrix * (x.colwise() - mean);
  }
};

inline MergedEmbedding merge_pca_lowrank(const PcaModel& model, const LowRankTransform& t) {
  if (t.trained_on_dim() != model.output_dim())
    throw ContractError("merge_pca_lowrank: transform dim " + std::to_string(t.trained_on_dim()) +
                        " != PCA output dim " + std::to_string(model.output_dim()));
  return {t.matrix() * model.projection, model.mean};
}

inline void save_pca(const std::string& path, const PcaModel& model) {
  io::save_matrices(path, {{"mean", model.mean}, {"projection", model.projection}, {"variances", model.variances}});
}

inline PcaModel load_pca(const std::string& path) {
  const auto entries = io::load_matrices(path);
  PcaModel model;
  model.mean = io::require_entry(entries, "mean").col(0);
  model.projection = io::require_entry(entries, "projection");
  model.variances = io::require_entry(entries, "variances").col(0);
  if (model.mean.size() != model.projection.cols()) throw FormatError("PCA file: mean/projection size mismatch");
  return model;
}

}  // namespace nirvis
