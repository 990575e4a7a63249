#pragma once

// Full-range BT.601 RGB <-> YCbCr with chroma offset 0.5; all planes in [0, 1].

#include "nirvis/core.hpp"

#include <array>

namespace nirvis {

struct YCbCr {
  Image y, cb, cr;
};

struct Rgb {
  Image r, g, b;
};

inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;
inline constexpr double kCbScale = 1.772;  // 2 (1 - kLumaB)
inline constexpr double kCrScale = 1.402;  // 2 (1 - kLumaR)

inline YCbCr rgb_to_ycbcr(const Rgb& rgb) {
  require(rgb.r.rows() == rgb.g.rows() && rgb.r.rows() == rgb.b.rows() && rgb.r.cols() == rgb.g.cols() &&
              rgb.r.cols() == rgb.b.cols(),
          "rgb_to_ycbcr: plane shapes differ");
  YCbCr out;
  out.y = kLumaR * rgb.r + kLumaG * rgb.g + kLumaB * rgb.b;
  out.cb = 0.5 + (rgb.b - out.y) / kCbScale;
  out.cr = 0.5 + (rgb.r - out.y) / kCrScale;
  return out;
}

/// Exact inverse of rgb_to_ycbcr; set `clamp` to limit the result to [0, 1].
inline Rgb ycbcr_to_rgb(const YCbCr& ycc, bool clamp = false) {
  Rgb out;
  out.r = ycc.y + kCrScale * (ycc.cr - 0.5);
  out.b = ycc.y + kCbScale * (ycc.cb - 0.5);
  out.g = (ycc.y - kLumaR * out.r - kLumaB * out.b) / kLumaG;
  if (clamp) {
    out.r = out.r.cwiseMax(0.0).cwiseMin(1.0);
    out.g = out.g.cwiseMax(0.0).cwiseMin(1.0);
    out.b = out.b.cwiseMax(0.0).cwiseMin(1.0);
  }
  return out;
}

inline Rgb replicate_gray(const Image& gray) { return {gray, gray, gray}; }

}  // namespace nirvis
