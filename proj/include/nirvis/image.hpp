#pragma once

// Raster helpers: sampling, warping, filtering, gradients, and 8-bit netpbm IO.
// Coordinates are (x, y) with pixel centers at integers; image(y, x).

#include "nirvis/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace nirvis {

/// 2x3 affine map [a b tx; c d ty] sending (x, y) to (a x + b y + tx, c x + d y + ty).
using Affine2 = Eigen::Matrix<double, 2, 3>;

inline Affine2 affine_identity() {
  Affine2 a;
  a << 1, 0, 0, 0, 1, 0;
  return a;
}

inline Eigen::Vector2d apply_affine(const Affine2& a, double x, double y) {
  return {a(0, 0) * x + a(0, 1) * y + a(0, 2), a(1, 0) * x + a(1, 1) * y + a(1, 2)};
}

inline Eigen::Matrix3d affine_to_homogeneous(const Affine2& a) {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  h.topRows<2>() = a;
  return h;
}

inline Affine2 affine_from_homogeneous(const Eigen::Matrix3d& h) { return h.topRows<2>(); }

/// Bilinear interpolation with replicated borders.
inline double sample_bilinear(const Image& img, double x, double y) {
  const double max_x = static_cast<double>(img.cols() - 1);
  const double max_y = static_cast<double>(img.rows() - 1);
  x = std::clamp(x, 0.0, max_x);
  y = std::clamp(y, 0.0, max_y);
  const auto x0 = static_cast<Eigen::Index>(std::floor(x));
  const auto y0 = static_cast<Eigen::Index>(std::floor(y));
  const Eigen::Index x1 = std::min<Eigen::Index>(x0 + 1, img.cols() - 1);
  const Eigen::Index y1 = std::min<Eigen::Index>(y0 + 1, img.rows() - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double top = (1 - fx) * img(y0, x0) + fx * img(y0, x1);
  const double bottom = (1 - fx) * img(y1, x0) + fx * img(y1, x1);
  return (1 - fy) * top + fy * bottom;
}

/// out(y, x) = src(map(x, y)); `map` takes output coordinates to source coordinates.
inline Image warp_affine(const Image& src, const Affine2& map, Eigen::Index width, Eigen::Index height) {
  Image out(height, width);
  for (Eigen::Index y = 0; y < height; ++y)
    for (Eigen::Index x = 0; x < width; ++x) {
      const auto p = apply_affine(map, static_cast<double>(x), static_cast<double>(y));
      out(y, x) = sample_bilinear(src, p.x(), p.y());
    }
  return out;
}

inline Image flip_horizontal(const Image& img) { return img.rowwise().reverse(); }

inline double image_mean(const Image& img) { return img.mean(); }

/// Population standard deviation.
inline double image_std(const Image& img) {
  const double m = img.mean();
  return std::sqrt((img - m).square().mean());
}

/// Central-difference gradient magnitude with replicated borders.
inline Image gradient_magnitude(const Image& img) {
  const Eigen::Index h = img.rows();
  const Eigen::Index w = img.cols();
  Image out(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      const double gx = 0.5 * (img(y, std::min(x + 1, w - 1)) - img(y, std::max<Eigen::Index>(x - 1, 0)));
      const double gy = 0.5 * (img(std::min(y + 1, h - 1), x) - img(std::max<Eigen::Index>(y - 1, 0), x));
      out(y, x) = std::sqrt(gx * gx + gy * gy);
    }
  return out;
}

/// Pearson correlation; 0 when either input is constant.
inline double pearson_correlation(const Image& a, const Image& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "pearson_correlation: shape mismatch");
  const Image da = a - a.mean();
  const Image db = b - b.mean();
  const double denom = std::sqrt(da.square().sum() * db.square().sum());
  if (!(denom > 0.0)) return 0.0;
  return std::clamp((da * db).sum() / denom, -1.0, 1.0);
}

/// Normalized 1-D Gaussian truncated at ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  require(sigma > 0.0, "gaussian_kernel: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

/// Separable convolution with replicated borders.
inline Image convolve_separable(const Image& img, const std::vector<double>& kernel) {
  const Eigen::Index h = img.rows();
  const Eigen::Index w = img.cols();
  const auto radius = static_cast<Eigen::Index>(kernel.size() / 2);
  Image tmp(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (Eigen::Index i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<std::size_t>(i + radius)] * img(y, std::clamp<Eigen::Index>(x + i, 0, w - 1));
      tmp(y, x) = acc;
    }
  Image out(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (Eigen::Index i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp(std::clamp<Eigen::Index>(y + i, 0, h - 1), x);
      out(y, x) = acc;
    }
  return out;
}

inline Image gaussian_filter(const Image& img, double sigma) { return convolve_separable(img, gaussian_kernel(sigma)); }

// ---------------------------------------------------------------------------
// Netpbm (P5 grayscale / P6 color, 8-bit). Values are scaled to [0, 1].

namespace detail {

inline std::string next_pnm_token(std::istream& in) {
  std::string token;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(c);
  }
  return token;
}

}  // namespace detail

/// Returns one plane for P5 and three (R, G, B) for P6.
inline std::vector<Image> read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image '" + path + "'");
  const std::string magic = detail::next_pnm_token(in);
  if (magic != "P5" && magic != "P6") throw FormatError("'" + path + "': only binary P5/P6 netpbm is supported");
  const int channels = magic == "P5" ? 1 : 3;
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(detail::next_pnm_token(in));
    h = std::stoi(detail::next_pnm_token(in));
    maxval = std::stoi(detail::next_pnm_token(in));
  } catch (const std::exception&) {
    throw FormatError("'" + path + "': malformed netpbm header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw FormatError("'" + path + "': unsupported netpbm header");
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw FormatError("'" + path + "': truncated pixel data");
  std::vector<Image> planes(static_cast<std::size_t>(channels), Image(h, w));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        planes[static_cast<std::size_t>(c)](y, x) =
            raw[(static_cast<std::size_t>(y) * w + x) * channels + c] / static_cast<double>(maxval);
  return planes;
}

inline void write_pnm(const std::string& path, const std::vector<Image>& planes) {
  require(planes.size() == 1 || planes.size() == 3, "write_pnm: need 1 or 3 planes");
  const Eigen::Index h = planes[0].rows();
  const Eigen::Index w = planes[0].cols();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << (planes.size() == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(w * h) * planes.size());
  std::size_t i = 0;
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x)
      for (const auto& p : planes)
        raw[i++] = static_cast<unsigned char>(std::lround(std::clamp(p(y, x), 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

}  // namespace nirvis
