#pragma once

// Low-rank embedding: learns a square linear map T that minimizes
//
//     sum_c ||T Y_c||_*  -  ||T Y||_*
//
// over labeled feature columns Y (Y_c = columns of class c). The objective is a
// difference of convex functions and is minimized with the concave-convex
// procedure: each outer step linearizes -||T Y||_* at the current iterate and
// the remaining convex surrogate is decreased by subgradient descent.

#include "nirvis/core.hpp"
#include "nirvis/matrix_io.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace nirvis {

/// Feature columns with per-column subject labels and spectrum tags.
class LabeledFeatureMatrix {
 public:
  LabeledFeatureMatrix(Matrix data, std::vector<SubjectId> labels, std::vector<Spectrum> spectrum)
      : data_(std::move(data)), labels_(std::move(labels)), spectrum_(std::move(spectrum)) {
    require(data_.rows() >= 1 && data_.cols() >= 1, "feature matrix must be non-empty");
    require(static_cast<Eigen::Index>(labels_.size()) == data_.cols(), "one label per column required");
    require(static_cast<Eigen::Index>(spectrum_.size()) == data_.cols(), "one spectrum tag per column required");
    require_finite(data_, "feature matrix");
    for (Eigen::Index j = 0; j < data_.cols(); ++j) class_columns_[labels_[static_cast<std::size_t>(j)]].push_back(j);
  }

  LabeledFeatureMatrix(Matrix data, std::vector<SubjectId> labels)
      : LabeledFeatureMatrix(std::move(data), labels, std::vector<Spectrum>(labels.size(), Spectrum::Vis)) {}

  const Matrix& data() const { return data_; }
  const std::vector<SubjectId>& labels() const { return labels_; }
  const std::vector<Spectrum>& spectrum() const { return spectrum_; }
  Eigen::Index dim() const { return data_.rows(); }
  Eigen::Index size() const { return data_.cols(); }
  std::size_t class_count() const { return class_columns_.size(); }

  /// Submatrices Y_c, ordered by ascending subject id.
  std::vector<Matrix> class_blocks() const {
    std::vector<Matrix> blocks;
    blocks.reserve(class_columns_.size());
    for (const auto& [label, cols] : class_columns_) {
      Matrix block(data_.rows(), static_cast<Eigen::Index>(cols.size()));
      for (std::size_t j = 0; j < cols.size(); ++j) block.col(static_cast<Eigen::Index>(j)) = data_.col(cols[j]);
      blocks.push_back(std::move(block));
    }
    return blocks;
  }

 private:
  Matrix data_;
  std::vector<SubjectId> labels_;
  std::vector<Spectrum> spectrum_;
  std::map<SubjectId, std::vector<Eigen::Index>> class_columns_;
};

/// Square linear embedding; default-constructed for dimension d it is the identity.
class LowRankTransform {
 public:
  explicit LowRankTransform(Eigen::Index dim) : matrix_(Matrix::Identity(dim, dim)) {
    require(dim >= 1, "transform dimension must be positive");
  }

  explicit LowRankTransform(Matrix m) : matrix_(std::move(m)) {
    require(matrix_.rows() == matrix_.cols() && matrix_.rows() >= 1, "transform must be square and non-empty");
    require_finite(matrix_, "transform");
  }

  const Matrix& matrix() const { return matrix_; }
  Eigen::Index trained_on_dim() const { return matrix_.rows(); }

 private:
  Matrix matrix_;
};

struct CcpConfig {
  int max_outer_iters = 50;
  double outer_tolerance = 1e-6;  // relative objective decrease
  int inner_max_iters = 100;
  double inner_step = 1e-3;
  double inner_tolerance = 0.0;  // stop inner loop when ||subgradient||_F falls to this
  double rank_tolerance = 1e-10;  // relative to sigma_max

  void validate() const {
    require(max_outer_iters >= 1 && inner_max_iters >= 1, "CCP iteration counts must be >= 1");
    require(outer_tolerance >= 0 && inner_tolerance >= 0, "CCP tolerances must be >= 0");
    require(inner_step > 0, "CCP inner step must be positive");
    require(rank_tolerance >= 0, "rank tolerance must be >= 0");
  }
};

struct CcpResult {
  LowRankTransform transform;
  std::vector<double> objective_history;  // true objective at each accepted outer iterate, starting at T = I
  int outer_iterations = 0;
  bool converged = false;
};

namespace detail {

// Nuclear norm and a subgradient from one thin SVD.
struct NuclearPart {
  double norm = 0.0;
  Matrix subgradient;
};

inline NuclearPart nuclear_part(const Matrix& m, double rank_tolerance, bool want_subgradient) {
  NuclearPart part;
  if (m.size() == 0) {
    part.subgradient = Matrix::Zero(m.rows(), m.cols());
    return part;
  }
  const unsigned opts = want_subgradient ? (Eigen::ComputeThinU | Eigen::ComputeThinV) : 0u;
  Eigen::BDCSVD<Matrix> svd(m, opts);
  const Vector& sigma = svd.singularValues();
  part.norm = sigma.sum();
  if (want_subgradient) {
    part.subgradient = Matrix::Zero(m.rows(), m.cols());
    const double sigma_max = sigma.size() > 0 ? sigma(0) : 0.0;
    if (sigma_max > 0.0) {
      Eigen::Index rank = 0;
      while (rank < sigma.size() && sigma(rank) > rank_tolerance * sigma_max) ++rank;
      part.subgradient.noalias() = svd.matrixU().leftCols(rank) * svd.matrixV().leftCols(rank).transpose();
    }
  }
  return part;
}

}  // namespace detail

/// Sum of singular values.
inline double nuclear_norm(const Matrix& m) {
  require(m.size() > 0, "nuclear_norm: empty matrix");
  require_finite(m, "nuclear_norm");
  return detail::nuclear_part(m, 0.0, false).norm;
}

/// U_r V_r^T from the thin SVD, keeping singular values above rank_tolerance * sigma_max.
inline Matrix nuclear_subgradient(const Matrix& m, double rank_tolerance = 1e-10) {
  require_finite(m, "nuclear_subgradient");
  return detail::nuclear_part(m, rank_tolerance, true).subgradient;
}

inline double lowrank_objective(const Matrix& t, const std::vector<Matrix>& blocks, const Matrix& all) {
  double within = 0.0;
  for (const auto& block : blocks) within += detail::nuclear_part(t * block, 0.0, false).norm;
  return within - detail::nuclear_part(t * all, 0.0, false).norm;
}

inline double lowrank_objective(const LowRankTransform& t, const LabeledFeatureMatrix& y) {
  if (t.trained_on_dim() != y.dim())
    throw ContractError("lowrank_objective: transform dim " + std::to_string(t.trained_on_dim()) +
                        " does not match feature dim " + std::to_string(y.dim()));
  if (y.class_count() == 1) return 0.0;
  return lowrank_objective(t.matrix(), y.class_blocks(), y.data());
}

inline CcpResult learn_lowrank_transform(const LabeledFeatureMatrix& y, const CcpConfig& config = {}) {
  config.validate();
  const Eigen::Index d = y.dim();
  CcpResult result{LowRankTransform(d), {}, 0, true};
  if (y.class_count() < 2) {
    result.objective_history.push_back(0.0);
    return result;
  }

  const std::vector<Matrix> blocks = y.class_blocks();
  const Matrix& all = y.data();

  Matrix t = Matrix::Identity(d, d);
  double objective = lowrank_objective(t, blocks, all);
  result.objective_history.push_back(objective);
  result.converged = false;

  for (int outer = 0; outer < config.max_outer_iters; ++outer) {
    // Linearize the concave term at the current iterate.
    const Matrix linear = detail::nuclear_part(t * all, config.rank_tolerance, true).subgradient * all.transpose();

    Matrix x = t;
    Matrix best = t;
    double best_surrogate = std::numeric_limits<double>::infinity();
    for (int inner = 0; inner <= config.inner_max_iters; ++inner) {
      double surrogate = -(linear.array() * x.array()).sum();
      Matrix grad = -linear;
      for (const auto& block : blocks) {
        auto part = detail::nuclear_part(x * block, config.rank_tolerance, true);
        surrogate += part.norm;
        grad.noalias() += part.subgradient * block.transpose();
      }
      if (surrogate < best_surrogate) {
        best_surrogate = surrogate;
        best = x;
      }
      if (inner == config.inner_max_iters || grad.norm() <= config.inner_tolerance) break;
      x -= config.inner_step * grad;
    }

    const double next = lowrank_objective(best, blocks, all);
    ++result.outer_iterations;
    // The surrogate majorizes the objective and equals it at t, so next <= objective
    // up to rounding; a rounding-level increase means no further progress is possible.
    if (next > objective) {
      result.converged = true;
      break;
    }
    const double decrease = objective - next;
    t = std::move(best);
    const double previous = objective;
    objective = next;
    result.objective_history.push_back(objective);
    if (decrease <= config.outer_tolerance * std::max(std::abs(previous), 1e-300)) {
      result.converged = true;
      break;
    }
  }
  result.transform = LowRankTransform(std::move(t));
  return result;
}

/// Applies T to feature columns.
inline Matrix embed(const LowRankTransform& t, const Matrix& features) {
  if (features.rows() != t.trained_on_dim())
    throw ContractError("embed: feature dim " + std::to_string(features.rows()) + " does not match transform dim " +
                        std::to_string(t.trained_on_dim()));
  return t.matrix() * features;
}

inline void save_transform(const std::string& path, const LowRankTransform& t) {
  io::save_matrices(path, {{"transform", t.matrix()}});
}

inline LowRankTransform load_transform(const std::string& path) {
  return LowRankTransform(io::require_entry(io::load_matrices(path), "transform"));
}

}  // namespace nirvis
