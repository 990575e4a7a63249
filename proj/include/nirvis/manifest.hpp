#pragma once

// Image manifest: one record per line,
//
//     <path> <subject> <NIR|VIS> <x1> <y1> <x2> <y2> <x3> <y3>
//
// with landmarks left pupil, right pupil, mouth center. Blank lines and lines
// starting with '#' are ignored. Relative paths resolve against the manifest's
// directory.

#include "nirvis/core.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace nirvis {

using Landmarks = std::array<Eigen::Vector2d, 3>;

struct ManifestEntry {
  std::string path;
  SubjectId subject = 0;
  Spectrum spectrum = Spectrum::Vis;
  Landmarks landmarks{};

  std::string image_id() const { return std::filesystem::path(path).stem().string(); }
};

inline std::vector<ManifestEntry> read_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open manifest '" + manifest_path + "'");
  const auto base = std::filesystem::path(manifest_path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    ManifestEntry e;
    std::string spectrum;
    fields >> e.path >> e.subject >> spectrum;
    for (auto& p : e.landmarks) fields >> p.x() >> p.y();
    if (!fields) throw FormatError(manifest_path + ":" + std::to_string(line_no) + ": malformed manifest record");
    e.spectrum = parse_spectrum(spectrum);
    if (std::filesystem::path(e.path).is_relative()) e.path = (base / e.path).string();
    entries.push_back(std::move(e));
  }
  return entries;
}

inline void write_manifest(const std::string& manifest_path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(manifest_path);
  if (!out) throw Error("cannot open '" + manifest_path + "' for writing");
  const auto base = std::filesystem::path(manifest_path).parent_path();
  out << "# path subject spectrum left_eye_x left_eye_y right_eye_x right_eye_y mouth_x mouth_y\n";
  out.precision(17);
  for (const auto& e : entries) {
    auto p = std::filesystem::path(e.path);
    if (!base.empty() && p.is_absolute()) p = std::filesystem::relative(p, base);
    out << p.string() << ' ' << e.subject << ' ' << to_string(e.spectrum);
    for (const auto& l : e.landmarks) out << ' ' << l.x() << ' ' << l.y();
    out << '\n';
  }
}

}  // namespace nirvis
