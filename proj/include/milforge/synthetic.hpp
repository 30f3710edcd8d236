#pragma once

// Synthetic MIL benchmark: Gaussian instances, positive bags carry a few
// mean-shifted witness instances.

#include <cstdint>
#include <vector>

#include "milforge/features.hpp"
#include "milforge/image.hpp"

namespace milforge::synthetic {

struct BenchmarkConfig {
  int n_bags = 300;
  int min_instances = 50;
  int max_instances = 200;
  int dim = 64;
  double witness_fraction = 0.05;
  double shift = 1.0;
  int shifted_coords = 8;
};

struct Benchmark {
  std::vector<FeatureBag> bags;              // slide ids "bag0000", ...
  std::vector<std::vector<bool>> witnesses;  // parallel to bags
};

// Even-indexed bags are negative (label 0), odd-indexed positive (label 1).
// A positive bag of size K has max(1, round(witness_fraction * K)) witnesses
// at random positions.
Benchmark make_benchmark(const BenchmarkConfig& cfg, std::uint64_t seed);

// Standard normal via Box-Muller on uniform01, so the stream is identical on
// every platform.
double standard_normal(Rng& rng);

// Toy H&E-like slide: white background, one pink tissue ellipse with pixel
// noise. Positive slides also carry dark purple nodules inside the tissue.
RgbImage make_slide(int width, int height, bool positive, std::uint64_t seed);

}  // namespace milforge::synthetic
