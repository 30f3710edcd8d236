#pragma once

// Tissue segmentation and non-overlapping patch grids over pyramidal slides.

#include <filesystem>
#include <string>
#include <vector>

#include "milforge/common.hpp"
#include "milforge/image.hpp"

namespace milforge::tiling {

struct PyramidLevel {
  int width = 0;
  int height = 0;
  int downsample = 1;  // relative to level 0
};

// In-memory multi-resolution slide. All coordinates passed in or out are
// level-0 pixels. Const member functions are safe to call concurrently.
class SlidePyramid {
 public:
  // Levels must shrink by integer factors; level 0 is the full resolution.
  static SlidePyramid from_levels(std::string slide_id, std::vector<RgbImage> levels,
                                  double microns_per_pixel = 0.25);
  static SlidePyramid from_image(std::string slide_id, RgbImage level0,
                                 double microns_per_pixel = 0.25);
  // PNG (single level) or TIFF (one page per level). The slide id is the file
  // stem. Throws IoError / FormatError.
  static SlidePyramid open(const std::filesystem::path& path, double microns_per_pixel = 0.25);

  const std::string& id() const { return id_; }
  int level_count() const { return static_cast<int>(levels_.size()); }
  PyramidLevel level(int i) const;
  int width() const { return images_.front().width; }
  int height() const { return images_.front().height; }
  double microns_per_pixel() const { return mpp_; }
  double native_magnification() const { return 10.0 / mpp_; }

  // Level-0 pixels per output pixel for a target magnification.
  int downsample_for(Magnification mag) const;

  // Whole slide reduced by `factor`, served from the coarsest level whose
  // downsample divides it.
  RgbImage render_downsampled(int factor) const;

  // w x h output pixels starting at level-0 (x, y), sampled at `factor`.
  RgbImage read_region(int x, int y, int w, int h, int factor) const;

 private:
  std::string id_;
  std::vector<PyramidLevel> levels_;
  std::vector<RgbImage> images_;
  double mpp_ = 0.25;
};

struct SegmentationConfig {
  int working_downsample = 64;
  int median_kernel = 7;
  int saturation_threshold = 8;
  bool use_otsu = false;
  int close_kernel = 4;
  int area_threshold = 100;  // working pixels
  int hole_threshold = 16;   // working pixels
  double min_tissue_fraction = 0.5;

  std::string to_json() const;
  std::string hash() const;
};

struct TissueRegion {
  long long area = 0;                  // working pixels, small holes filled
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // working-pixel bounding box, half-open
};

struct TissueMask {
  GrayImage mask;  // 1 = tissue, at working resolution
  int downsample = 1;
  int level0_width = 0;
  int level0_height = 0;
  std::vector<TissueRegion> regions;
  int threshold_used = 0;

  bool empty() const { return regions.empty(); }
  long long tissue_pixels() const;
};

TissueMask segment_tissue(const SlidePyramid& slide, const SegmentationConfig& cfg = {});

// Building blocks, exposed for testing.
GrayImage median_blur(const GrayImage& src, int kernel);
int otsu_threshold(const GrayImage& src);
GrayImage morphological_close(const GrayImage& binary, int kernel);

inline constexpr int kPatchPixels = 256;

struct PatchRecord {
  int x = 0;  // level-0 anchor
  int y = 0;
  double tissue_fraction = 0.0;
  bool operator==(const PatchRecord&) const = default;
};

struct PatchGrid {
  std::string slide_id;
  Magnification mag = Magnification::k40x;
  int patch_size = kPatchPixels;
  int downsample = 1;                // level-0 pixels per patch pixel
  std::vector<PatchRecord> patches;  // row-major (y, then x)

  int footprint() const { return patch_size * downsample; }
  bool operator==(const PatchGrid&) const = default;
};

PatchGrid build_patch_grid(const TissueMask& mask, const SlidePyramid& slide, Magnification mag,
                           double min_tissue_fraction);

// Exact 256x256 crop at the magnification's downsample. Throws BoundsError when
// the footprint leaves the slide.
RgbImage extract_patch_pixels(const SlidePyramid& slide, int x, int y, Magnification mag);

// JSON-lines manifest: one header line, then one record per patch.
std::string manifest_text(const PatchGrid& grid, const SegmentationConfig& cfg);
void write_manifest(const PatchGrid& grid, const SegmentationConfig& cfg,
                    const std::filesystem::path& path);
PatchGrid read_manifest(const std::filesystem::path& path);

inline constexpr int kManifestSchemaVersion = 1;

}  // namespace milforge::tiling
