#pragma once

// Shared types and error classes for the nirvis toolkit.

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nirvis {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Row-major so that image(y, x) matches the natural raster layout.
using Image = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using SubjectId = std::int32_t;

enum class Spectrum : std::uint8_t { Nir = 0, Vis = 1 };

inline std::string_view to_string(Spectrum s) { return s == Spectrum::Nir ? "NIR" : "VIS"; }

inline Spectrum parse_spectrum(std::string_view text);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or otherwise unusable numeric input.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A caller violated a precondition (shape mismatch, out-of-range argument).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unsupported file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

inline Spectrum parse_spectrum(std::string_view text) {
  if (text == "NIR" || text == "nir") return Spectrum::Nir;
  if (text == "VIS" || text == "vis") return Spectrum::Vis;
  throw FormatError("unknown spectrum tag '" + std::string(text) + "'");
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, std::string_view what) {
  if (!all_finite(m)) throw InvalidInput(std::string(what) + ": non-finite entries");
}

inline void require(bool condition, std::string_view message) {
  if (!condition) throw ContractError(std::string(message));
}

}  // namespace nirvis
