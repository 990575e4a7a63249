#pragma once

#include "nirvis/image.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace nirvis::test {

/// Smooth analytic texture: a sum of random plane waves and Gaussian blobs.
class Texture {
 public:
  explicit Texture(std::mt19937_64& rng, int waves = 6, int blobs = 8, double extent = 60.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < waves; ++i) {
      const double angle = 2.0 * std::numbers::pi * u(rng);
      const double wavelength = 14.0 + 20.0 * u(rng);
      waves_.push_back({std::cos(angle) * 2.0 * std::numbers::pi / wavelength, std::sin(angle) * 2.0 * std::numbers::pi / wavelength,
                        2.0 * std::numbers::pi * u(rng), 0.5 + 0.5 * u(rng)});
    }
    for (int i = 0; i < blobs; ++i)
      blobs_.push_back({extent * u(rng), extent * u(rng), 3.0 + 5.0 * u(rng), u(rng) < 0.5 ? -1.0 : 1.0});
  }

  double operator()(double x, double y) const {
    double v = 0.0;
    for (const auto& w : waves_) v += w[3] * std::sin(w[0] * x + w[1] * y + w[2]);
    for (const auto& b : blobs_) {
      const double dx = (x - b[0]) / b[2], dy = (y - b[1]) / b[2];
      v += b[3] * std::exp(-0.5 * (dx * dx + dy * dy));
    }
    return v;
  }

  /// Samples img(y, x) = f(map(x, y)).
  Image render(int size, const Affine2& map) const {
    Image img(size, size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const auto p = apply_affine(map, x, y);
        img(y, x) = (*this)(p.x(), p.y());
      }
    return img;
  }

 private:
  std::vector<std::array<double, 4>> waves_;
  std::vector<std::array<double, 4>> blobs_;
};

struct RegistrationTrial {
  Image nir, vis;
  Affine2 truth;  // NIR pixel -> VIS pixel
};

/// NIR samples the texture directly; VIS samples it through the inverse of a
/// random shift-and-shear about the patch center.
inline RegistrationTrial registration_trial(std::mt19937_64& rng, int size = 60, double max_shift = 3.0,
                                            double max_shear = 0.05) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Texture tex(rng, 6, 8, size);
  const double c = 0.5 * (size - 1);
  Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
  s(0, 1) = max_shear * u(rng);
  s(1, 0) = max_shear * u(rng);
  Eigen::Matrix3d shift = Eigen::Matrix3d::Identity(), to_c = Eigen::Matrix3d::Identity();
  shift(0, 2) = max_shift * u(rng);
  shift(1, 2) = max_shift * u(rng);
  to_c(0, 2) = -c;
  to_c(1, 2) = -c;
  const Eigen::Matrix3d g = shift * to_c.inverse() * s * to_c;
  RegistrationTrial t;
  t.truth = affine_from_homogeneous(g);
  t.nir = tex.render(size, affine_identity());
  t.vis = tex.render(size, affine_from_homogeneous(g.inverse()));
  return t;
}

/// Mean distance between the images of the patch corners under two maps.
inline double corner_error(const Affine2& a, const Affine2& b, int size) {
  const double e = size - 1;
  double sum = 0.0;
  for (auto [x, y] : {std::pair{0.0, 0.0}, std::pair{e, 0.0}, std::pair{0.0, e}, std::pair{e, e}})
    sum += (apply_affine(a, x, y) - apply_affine(b, x, y)).norm();
  return sum / 4.0;
}

}  // namespace nirvis::test
