#pragma once

// Closed-set gallery/probe identification by cosine similarity.

#include "nirvis/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

namespace nirvis {

/// Feature columns with subject labels; used for both gallery and probe sides.
struct LabeledSet {
  Matrix features;  // k x count
  std::vector<SubjectId> labels;
  std::vector<std::string> ids;  // optional per-column identifiers
  Spectrum spectrum = Spectrum::Vis;

  Eigen::Index size() const { return features.cols(); }
  std::string id(Eigen::Index j) const {
    return ids.empty() ? std::to_string(j) : ids[static_cast<std::size_t>(j)];
  }

  void validate(std::string_view role) const {
    if (features.cols() < 1) throw ContractError(std::string(role) + " set is empty");
    if (static_cast<Eigen::Index>(labels.size()) != features.cols())
      throw ContractError(std::string(role) + " set: label count does not match columns");
    if (!ids.empty() && static_cast<Eigen::Index>(ids.size()) != features.cols())
      throw ContractError(std::string(role) + " set: id count does not match columns");
    require_finite(features, role);
  }
};

using GallerySet = LabeledSet;
using ProbeSet = LabeledSet;

struct ProbeDecision {
  std::string probe_id;
  SubjectId true_label = 0;
  SubjectId predicted_label = 0;
  double score = 0.0;
  // 1-based rank of the first correct gallery item; 0 if the subject is absent.
  Eigen::Index hit_rank = 0;
};

struct MatchReport {
  std::vector<double> cmc;  // cmc[r-1] = rank-r identification rate
  std::vector<ProbeDecision> decisions;

  double rank1() const { return cmc.empty() ? 0.0 : cmc.front(); }
  double rank(std::size_t r) const { return cmc.at(r - 1); }
  std::size_t max_rank() const { return cmc.size(); }
};

template <typename A, typename B>
double cosine_similarity(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  require(a.size() == b.size(), "cosine_similarity: size mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw InvalidInput("cosine_similarity: undefined for a zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

namespace detail {

inline Vector column_norms(const Matrix& m, std::string_view role) {
  Vector norms(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    norms(j) = m.col(j).norm();
    if (!(norms(j) > 0.0)) throw InvalidInput(std::string(role) + " column " + std::to_string(j) + " has zero norm");
  }
  return norms;
}

}  // namespace detail

/// Ranks every gallery column for each probe by descending cosine similarity,
/// ties going to the lower gallery index.
inline MatchReport identify(const GallerySet& gallery, const ProbeSet& probes, std::size_t max_rank) {
  gallery.validate("gallery");
  probes.validate("probe");
  if (gallery.features.rows() != probes.features.rows())
    throw ContractError("identify: gallery dim " + std::to_string(gallery.features.rows()) + " != probe dim " +
                        std::to_string(probes.features.rows()));
  const auto g = static_cast<std::size_t>(gallery.size());
  if (max_rank < 1 || max_rank > g)
    throw ContractError("identify: max_rank must lie in [1, gallery size=" + std::to_string(g) + "]");

  const Vector gallery_norms = detail::column_norms(gallery.features, "gallery");
  const Vector probe_norms = detail::column_norms(probes.features, "probe");

  MatchReport report;
  report.cmc.assign(max_rank, 0.0);
  std::vector<Eigen::Index> order(g);
  for (Eigen::Index p = 0; p < probes.size(); ++p) {
    // Same arithmetic as cosine_similarity so equal columns tie exactly.
    Vector col(static_cast<Eigen::Index>(g));
    for (Eigen::Index i = 0; i < col.size(); ++i)
      col(i) = std::clamp(gallery.features.col(i).dot(probes.features.col(p)) / (gallery_norms(i) * probe_norms(p)),
                          -1.0, 1.0);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return col(a) > col(b); });

    ProbeDecision decision;
    decision.probe_id = probes.id(p);
    decision.true_label = probes.labels[static_cast<std::size_t>(p)];
    decision.predicted_label = gallery.labels[static_cast<std::size_t>(order.front())];
    decision.score = col(order.front());
    for (std::size_t r = 0; r < g; ++r) {
      if (gallery.labels[static_cast<std::size_t>(order[r])] == decision.true_label) {
        decision.hit_rank = static_cast<Eigen::Index>(r + 1);
        break;
      }
    }
    if (decision.hit_rank > 0)
      for (std::size_t r = static_cast<std::size_t>(decision.hit_rank); r <= max_rank; ++r) report.cmc[r - 1] += 1.0;
    report.decisions.push_back(std::move(decision));
  }
  for (auto& rate : report.cmc) rate /= static_cast<double>(probes.size());
  return report;
}

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

inline void write_cmc_csv(std::ostream& out, const MatchReport& report) {
  out << "rank,rate\n";
  for (std::size_t r = 0; r < report.cmc.size(); ++r) out << (r + 1) << ',' << format_real(report.cmc[r]) << '\n';
}

inline void write_decisions_csv(std::ostream& out, const MatchReport& report) {
  out << "probe_id,true_label,pred_label,score\n";
  for (const auto& d : report.decisions)
    out << d.probe_id << ',' << d.true_label << ',' << d.predicted_label << ',' << format_real(d.score) << '\n';
}

}  // namespace nirvis
