#pragma once

// Externally computed face descriptors, the binary feature file, fold
// assignment, and a small built-in block-mean descriptor.
//
// Feature file layout (little-endian):
//
//   char[4] "NVFT", u32 version, u32 dim, u64 count, u32 input_channels,
//   string provider (u32 length + bytes), then `count` fixed-width records:
//   i32 subject, u8 spectrum, u8 kind, u8 provenance, u8 zero,
//   char[kImageIdWidth] image id (zero padded), u32 dim, dim x f64.

#include "nirvis/color.hpp"
#include "nirvis/core.hpp"
#include "nirvis/matrix_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace nirvis {

enum class InputKind : std::uint8_t { RawNir = 0, Hallucinated = 1, Vis = 2 };
enum class Provenance : std::uint8_t { Native = 0, Replicated = 1 };

inline std::string_view to_string(InputKind k) {
  switch (k) {
    case InputKind::RawNir: return "raw-NIR";
    case InputKind::Hallucinated: return "hallucinated";
    case InputKind::Vis: return "VIS";
  }
  return "?";
}

inline std::string_view to_string(Provenance p) { return p == Provenance::Native ? "native" : "replicated"; }

struct FeatureRecord {
  SubjectId subject = 0;
  std::string image_id;
  Spectrum spectrum = Spectrum::Vis;
  InputKind kind = InputKind::Vis;
  Provenance provenance = Provenance::Native;
  Vector vector;

  bool operator==(const FeatureRecord& o) const {
    return subject == o.subject && image_id == o.image_id && spectrum == o.spectrum && kind == o.kind &&
           provenance == o.provenance && vector.size() == o.vector.size() && vector == o.vector;
  }
};

struct FeatureFile {
  std::string provider = "external";
  std::uint32_t input_channels = 3;
  std::vector<FeatureRecord> records;

  Eigen::Index dim() const { return records.empty() ? 0 : records.front().vector.size(); }
};

inline constexpr char kFeatureMagic[4] = {'N', 'V', 'F', 'T'};
inline constexpr std::uint32_t kFeatureFormatVersion = 1;
inline constexpr std::size_t kImageIdWidth = 64;

/// Throws naming the first record whose dimension differs from the first
/// record's, or whose entries are not finite.
inline void validate_records(const std::vector<FeatureRecord>& records) {
  if (records.empty()) return;
  const auto d = records.front().vector.size();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.vector.size() != d)
      throw FormatError("feature record " + std::to_string(i) + " (image '" + r.image_id + "') has dimension " +
                        std::to_string(r.vector.size()) + ", expected " + std::to_string(d));
    if (!all_finite(r.vector))
      throw InvalidInput("feature record " + std::to_string(i) + " (image '" + r.image_id + "') is not finite");
  }
}

inline void store_features(const std::string& path, const FeatureFile& file) {
  validate_records(file.records);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(kFeatureMagic, 4);
  io::write_pod(out, kFeatureFormatVersion);
  io::write_pod(out, static_cast<std::uint32_t>(file.dim()));
  io::write_pod<std::uint64_t>(out, file.records.size());
  io::write_pod(out, file.input_channels);
  io::write_string(out, file.provider);
  for (const auto& r : file.records) {
    if (r.image_id.size() >= kImageIdWidth) throw InvalidInput("image id too long: '" + r.image_id + "'");
    io::write_pod<std::int32_t>(out, r.subject);
    const std::uint8_t tags[4] = {static_cast<std::uint8_t>(r.spectrum), static_cast<std::uint8_t>(r.kind),
                                  static_cast<std::uint8_t>(r.provenance), 0};
    out.write(reinterpret_cast<const char*>(tags), 4);
    char id[kImageIdWidth] = {};
    std::memcpy(id, r.image_id.data(), r.image_id.size());
    out.write(id, kImageIdWidth);
    io::write_pod(out, static_cast<std::uint32_t>(r.vector.size()));
    for (Eigen::Index i = 0; i < r.vector.size(); ++i) io::write_pod(out, r.vector(i));
  }
  if (!out) throw Error("failed writing feature file '" + path + "'");
}

inline FeatureFile load_feature_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open feature file '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0) throw FormatError("'" + path + "' is not a feature file");
  const auto version = io::read_pod<std::uint32_t>(in);
  if (version != kFeatureFormatVersion) throw FormatError("unknown feature file version " + std::to_string(version));
  const auto dim = io::read_pod<std::uint32_t>(in);
  const auto count = io::read_pod<std::uint64_t>(in);
  FeatureFile file;
  file.input_channels = io::read_pod<std::uint32_t>(in);
  file.provider = io::read_string(in, 4096);
  file.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureRecord r;
    r.subject = io::read_pod<std::int32_t>(in);
    std::uint8_t tags[4];
    in.read(reinterpret_cast<char*>(tags), 4);
    if (!in) throw FormatError("feature record " + std::to_string(i) + " is truncated");
    if (tags[0] > 1 || tags[1] > 2 || tags[2] > 1)
      throw FormatError("feature record " + std::to_string(i) + " has an invalid tag");
    r.spectrum = static_cast<Spectrum>(tags[0]);
    r.kind = static_cast<InputKind>(tags[1]);
    r.provenance = static_cast<Provenance>(tags[2]);
    char id[kImageIdWidth];
    in.read(id, kImageIdWidth);
    r.image_id.assign(id, strnlen(id, kImageIdWidth));
    const auto d = io::read_pod<std::uint32_t>(in);
    if (d != dim)
      throw FormatError("feature record " + std::to_string(i) + " (image '" + r.image_id + "') has dimension " +
                        std::to_string(d) + ", header says " + std::to_string(dim));
    r.vector.resize(d);
    for (std::uint32_t j = 0; j < d; ++j) r.vector(j) = io::read_pod<double>(in);
    file.records.push_back(std::move(r));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after feature records");
  validate_records(file.records);
  return file;
}

inline std::vector<FeatureRecord> load_features(const std::string& path) { return load_feature_file(path).records; }

inline std::vector<FeatureRecord> select_records(const std::vector<FeatureRecord>& records, InputKind kind) {
  std::vector<FeatureRecord> out;
  for (const auto& r : records)
    if (r.kind == kind) out.push_back(r);
  return out;
}

/// Stacks record vectors as columns.
inline Matrix feature_matrix(const std::vector<FeatureRecord>& records) {
  validate_records(records);
  if (records.empty()) return Matrix();
  Matrix m(records.front().vector.size(), static_cast<Eigen::Index>(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = records[i].vector;
  return m;
}

inline std::vector<SubjectId> record_labels(const std::vector<FeatureRecord>& records) {
  std::vector<SubjectId> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(r.subject);
  return labels;
}

// ---------------------------------------------------------------------------
// Folds

class FoldAssignment {
 public:
  FoldAssignment() = default;

  /// Explicit fold membership; a subject listed in two folds is an error.
  static FoldAssignment from_folds(const std::vector<std::vector<SubjectId>>& folds) {
    require(!folds.empty(), "fold assignment needs at least one fold");
    FoldAssignment a;
    a.fold_count_ = static_cast<int>(folds.size());
    for (std::size_t f = 0; f < folds.size(); ++f)
      for (auto s : folds[f])
        if (!a.fold_of_.emplace(s, static_cast<int>(f)).second)
          throw InvalidInput("subject " + std::to_string(s) + " is assigned to more than one fold");
    return a;
  }

  /// Sorts the distinct subject ids in their natural order and cuts them into
  /// `fold_count` contiguous chunks whose sizes differ by at most one.
  static FoldAssignment by_order(std::vector<SubjectId> subjects, int fold_count) {
    require(fold_count >= 1, "fold count must be positive");
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
    require(subjects.size() >= static_cast<std::size_t>(fold_count), "fewer subjects than folds");
    std::vector<std::vector<SubjectId>> folds(static_cast<std::size_t>(fold_count));
    const std::size_t n = subjects.size();
    for (std::size_t i = 0; i < n; ++i) folds[i * static_cast<std::size_t>(fold_count) / n].push_back(subjects[i]);
    return from_folds(folds);
  }

  int fold_count() const { return fold_count_; }
  const std::map<SubjectId, int>& map() const { return fold_of_; }

  int fold_of(SubjectId s) const {
    auto it = fold_of_.find(s);
    if (it == fold_of_.end()) throw InvalidInput("subject " + std::to_string(s) + " has no fold");
    return it->second;
  }

  std::vector<SubjectId> subjects_in(int fold) const {
    std::vector<SubjectId> out;
    for (const auto& [s, f] : fold_of_)
      if (f == fold) out.push_back(s);
    return out;
  }

 private:
  int fold_count_ = 0;
  std::map<SubjectId, int> fold_of_;
};

inline std::vector<SubjectId> distinct_subjects(const std::vector<FeatureRecord>& records) {
  std::set<SubjectId> s;
  for (const auto& r : records) s.insert(r.subject);
  return {s.begin(), s.end()};
}

template <typename Record>
struct Split {
  std::vector<Record> train;
  std::vector<Record> test;
};

/// Subject-disjoint split: test holds exactly the records of `test_fold`.
/// Works for any record type with a `subject` member.
template <typename Record>
Split<Record> split_folds(const std::vector<Record>& records, const FoldAssignment& assignment, int test_fold) {
  require(test_fold >= 0 && test_fold < assignment.fold_count(), "test fold out of range");
  Split<Record> split;
  for (const auto& r : records) (assignment.fold_of(r.subject) == test_fold ? split.test : split.train).push_back(r);
  std::set<SubjectId> train_subjects;
  for (const auto& r : split.train) train_subjects.insert(r.subject);
  for (const auto& r : split.test)
    if (train_subjects.count(r.subject)) throw ContractError("subject appears in both train and test splits");
  return split;
}

// ---------------------------------------------------------------------------
// Descriptor providers

/// Plug-in interface for an image descriptor.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual std::string name() const = 0;
  virtual std::uint32_t input_channels() const = 0;
  virtual Eigen::Index dim() const = 0;
  virtual Vector extract(const Rgb& image) const = 0;
};

/// Means over a grid x grid partition of each RGB plane.
class BlockMeanProvider final : public FeatureProvider {
 public:
  explicit BlockMeanProvider(int grid = 8) : grid_(grid) { require(grid >= 1, "block grid must be positive"); }

  std::string name() const override { return "block-mean-" + std::to_string(grid_) + "x" + std::to_string(grid_); }
  std::uint32_t input_channels() const override { return 3; }
  Eigen::Index dim() const override { return 3 * grid_ * grid_; }

  Vector extract(const Rgb& image) const override {
    const Eigen::Index h = image.r.rows();
    const Eigen::Index w = image.r.cols();
    require(h >= grid_ && w >= grid_, "image smaller than the descriptor grid");
    Vector v(dim());
    Eigen::Index k = 0;
    for (const Image* plane : {&image.r, &image.g, &image.b})
      for (int by = 0; by < grid_; ++by)
        for (int bx = 0; bx < grid_; ++bx) {
          const Eigen::Index y0 = by * h / grid_, y1 = (by + 1) * h / grid_;
          const Eigen::Index x0 = bx * w / grid_, x1 = (bx + 1) * w / grid_;
          v(k++) = plane->block(y0, x0, y1 - y0, x1 - x0).mean();
        }
    return v;
  }

 private:
  int grid_;
};

/// Extracts a record; single-plane inputs to a 3-channel provider are
/// replicated and tagged as such.
inline FeatureRecord extract_record(const FeatureProvider& provider, const std::vector<Image>& planes,
                                    SubjectId subject, std::string image_id, Spectrum spectrum, InputKind kind) {
  require(planes.size() == 1 || planes.size() == 3, "extract_record: expected 1 or 3 planes");
  FeatureRecord r;
  r.subject = subject;
  r.image_id = std::move(image_id);
  r.spectrum = spectrum;
  r.kind = kind;
  if (planes.size() == 1 && provider.input_channels() == 3) {
    r.provenance = Provenance::Replicated;
    r.vector = provider.extract(replicate_gray(planes[0]));
  } else {
    r.vector = provider.extract(Rgb{planes[0], planes.size() == 3 ? planes[1] : planes[0],
                                    planes.size() == 3 ? planes[2] : planes[0]});
  }
  return r;
}

}  // namespace nirvis
