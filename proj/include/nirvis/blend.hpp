#pragma once

// Luminance blending of a hallucinated image with the source NIR image:
//
//     Y = Yhat - alpha * G (N - Yhat)
//
// where G is Gaussian smoothing. By default G is the sigma-Gaussian applied
// twice; SinglePass applies it once.

#include "nirvis/core.hpp"
#include "nirvis/image.hpp"

namespace nirvis {

enum class BlendFilter : std::uint8_t { TwoPass = 0, SinglePass = 1 };

struct BlendConfig {
  double alpha = 0.6;
  double sigma = 1.0;
  BlendFilter filter = BlendFilter::TwoPass;
};

inline Image blend(const Image& y_hat, const Image& nir, const BlendConfig& config = {}) {
  require(y_hat.rows() == nir.rows() && y_hat.cols() == nir.cols(), "blend: shape mismatch");
  require(config.alpha >= 0.0 && config.alpha <= 1.0, "blend: alpha must lie in [0, 1]");
  if (config.alpha == 0.0) return y_hat;
  const auto kernel = gaussian_kernel(config.sigma);
  Image diff = nir - y_hat;
  diff = convolve_separable(diff, kernel);
  if (config.filter == BlendFilter::TwoPass) diff = convolve_separable(diff, kernel);
  return y_hat - config.alpha * diff;
}

inline Image blend(const Image& y_hat, const Image& nir, double alpha, double sigma = 1.0,
                   BlendFilter filter = BlendFilter::TwoPass) {
  return blend(y_hat, nir, BlendConfig{alpha, sigma, filter});
}

}  // namespace nirvis
