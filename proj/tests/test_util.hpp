#pragma once

#include <random>

#include "iip/model.hpp"

namespace iip::testing {

/// Deterministic generator of plausible biped configurations and velocities.
class StateSampler {
 public:
  explicit StateSampler(unsigned seed = 7) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }

  VectorXd q() {
    VectorXd q(kNumCoords);
    q << uniform(-1.0, 1.0), uniform(0.5, 1.0), uniform(-0.4, 0.4), uniform(-0.9, 0.9), uniform(-1.2, -0.05),
        uniform(-0.9, 0.9), uniform(-1.2, -0.05);
    return q;
  }

  VectorXd v(double scale = 1.0) {
    VectorXd v(kNumCoords);
    for (int i = 0; i < kNumCoords; ++i) v(i) = scale * normal();
    return v;
  }

  VectorXd vec(Eigen::Index n, double scale = 1.0) {
    VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * normal();
    return v;
  }

  std::mt19937& engine() { return rng_; }

 private:
  std::mt19937 rng_;
};

}  // namespace iip::testing
