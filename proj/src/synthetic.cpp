#include "milforge/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "milforge/error.hpp"

namespace milforge::synthetic {

double standard_normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Benchmark make_benchmark(const BenchmarkConfig& cfg, std::uint64_t seed) {
  if (cfg.n_bags < 1 || cfg.min_instances < 1 || cfg.max_instances < cfg.min_instances ||
      cfg.dim < 1 || cfg.shifted_coords > cfg.dim || cfg.shifted_coords < 0) {
    throw ConfigError("invalid synthetic benchmark configuration");
  }
  Rng rng = make_rng(seed, "synthetic");
  Benchmark out;
  const int span = cfg.max_instances - cfg.min_instances + 1;
  for (int i = 0; i < cfg.n_bags; ++i) {
    FeatureBag bag;
    char id[32];
    std::snprintf(id, sizeof id, "bag%04d", i);
    bag.slide_id = id;
    bag.label = i % 2;
    const int k = cfg.min_instances +
                  std::min(span - 1, static_cast<int>(uniform01(rng) * static_cast<double>(span)));
    bag.features.resize(k, cfg.dim);
    for (int r = 0; r < k; ++r) {
      for (int c = 0; c < cfg.dim; ++c) bag.features(r, c) = standard_normal(rng);
    }
    std::vector<bool> mask(static_cast<std::size_t>(k), false);
    if (bag.label == 1) {
      const int n_wit = std::max(1, static_cast<int>(std::lround(cfg.witness_fraction * k)));
      // Partial Fisher-Yates over instance indices.
      std::vector<int> idx(static_cast<std::size_t>(k));
      for (int r = 0; r < k; ++r) idx[static_cast<std::size_t>(r)] = r;
      for (int w = 0; w < n_wit; ++w) {
        const int j = w + std::min(k - w - 1, static_cast<int>(uniform01(rng) * (k - w)));
        std::swap(idx[static_cast<std::size_t>(w)], idx[static_cast<std::size_t>(j)]);
        const int r = idx[static_cast<std::size_t>(w)];
        mask[static_cast<std::size_t>(r)] = true;
        for (int c = 0; c < cfg.shifted_coords; ++c) bag.features(r, c) += cfg.shift;
      }
    }
    out.bags.push_back(std::move(bag));
    out.witnesses.push_back(std::move(mask));
  }
  return out;
}

RgbImage make_slide(int width, int height, bool positive, std::uint64_t seed) {
  if (width < 1 || height < 1) throw ConfigError("slide dimensions must be positive");
  Rng rng = make_rng(seed, "slide");
  RgbImage img(width, height, 245);
  const double cx = width / 2.0, cy = height / 2.0;
  const double rx = width * 0.42, ry = height * 0.40;
  struct Nodule {
    double x, y, r;
  };
  std::vector<Nodule> nodules;
  if (positive) {
    for (int i = 0; i < 3; ++i) {
      const double a = 2.0 * std::numbers::pi * uniform01(rng);
      const double d = 0.5 * uniform01(rng);
      nodules.push_back({cx + d * rx * std::cos(a), cy + d * ry * std::sin(a),
                         0.08 * std::min(width, height) * (1.0 + uniform01(rng))});
    }
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
      if (dx * dx + dy * dy > 1.0) continue;
      int r = 225, g = 140, b = 185;
      for (const auto& n : nodules) {
        const double ex = x + 0.5 - n.x, ey = y + 0.5 - n.y;
        if (ex * ex + ey * ey < n.r * n.r) {
          r = 115;
          g = 55;
          b = 150;
        }
      }
      const int noise = static_cast<int>(uniform01(rng) * 21.0) - 10;
      img.set(x, y, static_cast<std::uint8_t>(std::clamp(r + noise, 0, 255)),
              static_cast<std::uint8_t>(std::clamp(g + noise, 0, 255)),
              static_cast<std::uint8_t>(std::clamp(b + noise, 0, 255)));
    }
  }
  return img;
}

}  // namespace milforge::synthetic
