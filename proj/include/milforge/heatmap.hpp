#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "milforge/image.hpp"
#include "milforge/tiling.hpp"

namespace milforge::heatmap {

enum class Normalization { kPercentRank, kMinMax };

struct HeatmapSpec {
  std::string slide_id;
  Magnification mag = Magnification::k40x;
  Normalization normalization = Normalization::kPercentRank;
  std::string colormap = "coolwarm";
  double opacity = 0.5;
  int downsample = 32;

  void validate() const;
};

// Percent ranks in [0, 1]: rank / (K - 1), ties share the mean of their rank
// range, K == 1 gives {1.0}.
std::vector<double> normalize_scores(const std::vector<double>& attention);
std::vector<double> minmax_scores(const std::vector<double>& attention);
std::vector<double> normalize(const std::vector<double>& attention, Normalization mode);

using Rgb = std::array<std::uint8_t, 3>;
// 256-entry diverging table (matplotlib "coolwarm"): 0 -> blue, 255 -> red.
const std::array<Rgb, 256>& coolwarm_table();
Rgb colormap(double score);

// Downsampled slide with each patch footprint filled by colormap(score),
// alpha-blended at spec.opacity. A raster pixel belongs to a footprint when its
// centre does.
RgbImage render_overlay(const tiling::PatchGrid& grid, const std::vector<double>& scores,
                        const tiling::SlidePyramid& slide, const HeatmapSpec& spec);

struct ExportedPatch {
  int rank = 0;  // 1 = most attended
  int x = 0;
  int y = 0;
  double score = 0.0;
  std::string filename;
  RgbImage pixels;
};

// The k highest-scoring patches at the grid magnification. Ties break by
// (x, y). k > K is clamped; `clamped` reports it.
std::vector<ExportedPatch> export_top_patches(const tiling::PatchGrid& grid,
                                              const std::vector<double>& scores,
                                              const tiling::SlidePyramid& slide, int k,
                                              bool* clamped = nullptr);

void write_exported(const std::vector<ExportedPatch>& patches, const std::filesystem::path& dir);

// JSON sidecar listing (x, y, raw attention, percent rank) per patch.
std::string sidecar_json(const tiling::PatchGrid& grid, const std::vector<double>& attention,
                         const std::vector<double>& scores, const HeatmapSpec& spec);

}  // namespace milforge::heatmap
