#include "milforge/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "milforge/error.hpp"

namespace milforge::heatmap {

void HeatmapSpec::validate() const {
  if (!(opacity >= 0.0 && opacity <= 1.0)) throw ConfigError("overlay opacity must lie in [0, 1]");
  if (downsample < 1) throw ConfigError("overlay downsample must be >= 1");
  if (colormap != "coolwarm") throw ConfigError("unknown colormap '" + colormap + "'");
}

std::vector<double> normalize_scores(const std::vector<double>& attention) {
  const std::size_t k = attention.size();
  if (k == 0) return {};
  if (k == 1) return {1.0};
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return attention[a] < attention[b]; });
  std::vector<double> out(k);
  const double denom = static_cast<double>(k - 1);
  for (std::size_t i = 0; i < k;) {
    std::size_t j = i;
    while (j + 1 < k && attention[order[j + 1]] == attention[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j);
    for (std::size_t t = i; t <= j; ++t) out[order[t]] = mean_rank / denom;
    i = j + 1;
  }
  return out;
}

std::vector<double> minmax_scores(const std::vector<double>& attention) {
  if (attention.empty()) return {};
  const auto [lo, hi] = std::minmax_element(attention.begin(), attention.end());
  std::vector<double> out(attention.size(), 0.5);
  if (*hi > *lo) {
    for (std::size_t i = 0; i < attention.size(); ++i) {
      out[i] = (attention[i] - *lo) / (*hi - *lo);
    }
  } else if (attention.size() == 1) {
    out[0] = 1.0;
  }
  return out;
}

std::vector<double> normalize(const std::vector<double>& attention, Normalization mode) {
  return mode == Normalization::kPercentRank ? normalize_scores(attention)
                                             : minmax_scores(attention);
}

const std::array<Rgb, 256>& coolwarm_table() {
  static const std::array<Rgb, 256> kTable = {{
      {59, 76, 192},   {60, 78, 194},   {61, 80, 195},   {62, 81, 197},   {63, 83, 198},
      {64, 85, 200},   {66, 87, 201},   {67, 88, 203},   {68, 90, 204},   {69, 92, 206},
      {70, 94, 207},   {72, 95, 209},   {73, 97, 210},   {74, 99, 211},   {75, 100, 213},
      {76, 102, 214},  {78, 104, 216},  {79, 105, 217},  {80, 107, 218},  {81, 109, 219},
      {83, 110, 221},  {84, 112, 222},  {85, 114, 223},  {86, 115, 224},  {88, 117, 225},
      {89, 119, 227},  {90, 120, 228},  {91, 122, 229},  {93, 124, 230},  {94, 125, 231},
      {95, 127, 232},  {97, 128, 233},  {98, 130, 234},  {99, 132, 235},  {100, 133, 236},
      {102, 135, 237}, {103, 136, 238}, {104, 138, 239}, {106, 139, 239}, {107, 141, 240},
      {108, 143, 241}, {110, 144, 242}, {111, 146, 243}, {112, 147, 243}, {114, 149, 244},
      {115, 150, 245}, {117, 151, 246}, {118, 153, 246}, {119, 154, 247}, {121, 156, 248},
      {122, 157, 248}, {123, 159, 249}, {125, 160, 249}, {126, 161, 250}, {128, 163, 250},
      {129, 164, 251}, {130, 166, 251}, {132, 167, 252}, {133, 168, 252}, {134, 169, 252},
      {136, 171, 253}, {137, 172, 253}, {139, 173, 253}, {140, 175, 254}, {141, 176, 254},
      {143, 177, 254}, {144, 178, 254}, {146, 180, 254}, {147, 181, 254}, {148, 182, 255},
      {150, 183, 255}, {151, 184, 255}, {152, 185, 255}, {154, 187, 255}, {155, 188, 255},
      {157, 189, 255}, {158, 190, 255}, {159, 191, 255}, {161, 192, 255}, {162, 193, 255},
      {163, 194, 254}, {165, 195, 254}, {166, 196, 254}, {167, 197, 254}, {169, 198, 253},
      {170, 199, 253}, {171, 200, 253}, {173, 201, 253}, {174, 201, 252}, {175, 202, 252},
      {177, 203, 252}, {178, 204, 251}, {179, 205, 251}, {181, 205, 250}, {182, 206, 250},
      {183, 207, 249}, {185, 208, 249}, {186, 208, 248}, {187, 209, 248}, {188, 210, 247},
      {190, 210, 246}, {191, 211, 246}, {192, 212, 245}, {193, 212, 244}, {195, 213, 244},
      {196, 213, 243}, {197, 214, 242}, {198, 214, 241}, {199, 215, 240}, {201, 215, 240},
      {202, 216, 239}, {203, 216, 238}, {204, 217, 237}, {205, 217, 236}, {206, 218, 235},
      {207, 218, 234}, {209, 218, 233}, {210, 219, 232}, {211, 219, 231}, {212, 219, 230},
      {213, 219, 229}, {214, 220, 228}, {215, 220, 227}, {216, 220, 226}, {217, 220, 225},
      {218, 220, 224}, {219, 220, 222}, {220, 221, 221}, {221, 220, 220}, {222, 220, 219},
      {223, 219, 217}, {224, 219, 216}, {225, 218, 214}, {226, 218, 213}, {227, 217, 211},
      {228, 217, 210}, {229, 216, 209}, {230, 215, 207}, {231, 215, 206}, {232, 214, 204},
      {233, 213, 203}, {234, 213, 201}, {234, 212, 200}, {235, 211, 198}, {236, 211, 197},
      {237, 210, 195}, {237, 209, 194}, {238, 208, 192}, {239, 207, 191}, {239, 206, 189},
      {240, 205, 187}, {241, 205, 186}, {241, 204, 184}, {242, 203, 183}, {242, 202, 181},
      {242, 201, 180}, {243, 200, 178}, {243, 199, 177}, {244, 198, 175}, {244, 197, 173},
      {245, 196, 172}, {245, 194, 170}, {245, 193, 169}, {245, 192, 167}, {246, 191, 166},
      {246, 190, 164}, {246, 189, 162}, {247, 188, 161}, {247, 186, 159}, {247, 185, 158},
      {247, 184, 156}, {247, 183, 155}, {247, 181, 153}, {247, 180, 151}, {247, 179, 150},
      {247, 177, 148}, {247, 176, 147}, {247, 175, 145}, {247, 173, 144}, {247, 172, 142},
      {247, 170, 140}, {247, 169, 139}, {247, 168, 137}, {247, 166, 136}, {246, 165, 134},
      {246, 163, 133}, {246, 162, 131}, {245, 160, 129}, {245, 159, 128}, {245, 157, 126},
      {245, 156, 125}, {244, 154, 123}, {244, 152, 122}, {243, 151, 120}, {243, 149, 119},
      {243, 148, 117}, {242, 146, 116}, {242, 144, 114}, {241, 143, 113}, {241, 141, 111},
      {240, 139, 110}, {240, 138, 108}, {239, 136, 107}, {238, 134, 105}, {238, 132, 104},
      {237, 131, 102}, {236, 129, 101}, {236, 127, 99},  {235, 125, 98},  {234, 123, 96},
      {233, 122, 95},  {233, 120, 93},  {232, 118, 92},  {231, 116, 91},  {230, 114, 89},
      {229, 112, 88},  {228, 110, 86},  {227, 108, 85},  {227, 107, 84},  {226, 105, 82},
      {225, 103, 81},  {224, 101, 79},  {223, 99, 78},   {222, 97, 77},   {221, 95, 75},
      {220, 93, 74},   {218, 90, 73},   {217, 88, 71},   {216, 86, 70},   {215, 84, 69},
      {214, 82, 68},   {213, 80, 66},   {212, 78, 65},   {210, 75, 64},   {209, 73, 63},
      {208, 71, 61},   {207, 69, 60},   {205, 66, 59},   {204, 64, 58},   {203, 62, 56},
      {202, 59, 55},   {200, 56, 54},   {199, 54, 53},   {197, 51, 52},   {196, 48, 50},
      {195, 46, 49},   {193, 43, 48},   {192, 40, 47},   {190, 36, 46},   {189, 31, 45},
      {187, 27, 44},   {186, 22, 43},   {184, 18, 42},   {183, 13, 40},   {181, 9, 39},
      {180, 4, 38},
  }};
  return kTable;
}

Rgb colormap(double score) {
  const double s = std::clamp(std::isfinite(score) ? score : 0.0, 0.0, 1.0);
  return coolwarm_table()[static_cast<std::size_t>(std::lround(s * 255.0))];
}

RgbImage render_overlay(const tiling::PatchGrid& grid, const std::vector<double>& scores,
                        const tiling::SlidePyramid& slide, const HeatmapSpec& spec) {
  spec.validate();
  if (scores.size() != grid.patches.size()) {
    throw AlignmentError("heatmap: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(grid.patches.size()) + " patches");
  }
  RgbImage out = slide.render_downsampled(spec.downsample);
  const double ds = spec.downsample;
  const long long fp = grid.footprint();
  for (std::size_t i = 0; i < grid.patches.size(); ++i) {
    const auto& p = grid.patches[i];
    const Rgb c = colormap(scores[i]);
    // Raster pixel r covers level-0 [r * ds, (r + 1) * ds); its centre is inside
    // the footprint [x, x + fp) iff x <= (r + 0.5) * ds < x + fp.
    const int rx0 = static_cast<int>(std::ceil(p.x / ds - 0.5));
    const int rx1 = static_cast<int>(std::ceil((p.x + fp) / ds - 0.5));
    const int ry0 = static_cast<int>(std::ceil(p.y / ds - 0.5));
    const int ry1 = static_cast<int>(std::ceil((p.y + fp) / ds - 0.5));
    for (int ry = std::max(0, ry0); ry < std::min(out.height, ry1); ++ry) {
      for (int rx = std::max(0, rx0); rx < std::min(out.width, rx1); ++rx) {
        auto* px = out.at(rx, ry);
        for (int k = 0; k < 3; ++k) {
          const double blended =
              spec.opacity * c[static_cast<std::size_t>(k)] + (1.0 - spec.opacity) * px[k];
          px[k] = static_cast<std::uint8_t>(std::lround(blended));
        }
      }
    }
  }
  return out;
}

std::vector<ExportedPatch> export_top_patches(const tiling::PatchGrid& grid,
                                              const std::vector<double>& scores,
                                              const tiling::SlidePyramid& slide, int k,
                                              bool* clamped) {
  if (scores.size() != grid.patches.size()) {
    throw AlignmentError("export: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(grid.patches.size()) + " patches");
  }
  const int n = static_cast<int>(scores.size());
  if (clamped) *clamped = k > n;
  k = std::clamp(k, 0, n);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    const auto& pa = grid.patches[a];
    const auto& pb = grid.patches[b];
    return std::pair(pa.x, pa.y) < std::pair(pb.x, pb.y);
  });
  std::vector<ExportedPatch> out;
  for (int r = 0; r < k; ++r) {
    const auto& p = grid.patches[order[static_cast<std::size_t>(r)]];
    ExportedPatch e;
    e.rank = r + 1;
    e.x = p.x;
    e.y = p.y;
    e.score = scores[order[static_cast<std::size_t>(r)]];
    char name[512];
    std::snprintf(name, sizeof name, "%s_rank%02d_x%d_y%d_s%.4f.png", grid.slide_id.c_str(), e.rank,
                  e.x, e.y, e.score);
    e.filename = name;
    e.pixels = tiling::extract_patch_pixels(slide, p.x, p.y, grid.mag);
    out.push_back(std::move(e));
  }
  return out;
}

void write_exported(const std::vector<ExportedPatch>& patches, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& p : patches) write_png(p.pixels, dir / p.filename);
}

std::string sidecar_json(const tiling::PatchGrid& grid, const std::vector<double>& attention,
                         const std::vector<double>& scores, const HeatmapSpec& spec) {
  if (attention.size() != grid.patches.size() || scores.size() != grid.patches.size()) {
    throw AlignmentError("sidecar: attention / score / patch counts differ");
  }
  nlohmann::json j;
  j["slide_id"] = grid.slide_id;
  j["mag"] = std::string(magnification_name(grid.mag));
  j["patch_size"] = grid.patch_size;
  j["colormap"] = spec.colormap;
  j["opacity"] = spec.opacity;
  j["downsample"] = spec.downsample;
  j["normalization"] =
      spec.normalization == Normalization::kPercentRank ? "percent-rank" : "min-max";
  auto& arr = j["patches"] = nlohmann::json::array();
  for (std::size_t i = 0; i < grid.patches.size(); ++i) {
    arr.push_back({{"x", grid.patches[i].x},
                   {"y", grid.patches[i].y},
                   {"attention", attention[i]},
                   {"percent_rank", scores[i]}});
  }
  return j.dump(2) + "\n";
}

}  // namespace milforge::heatmap
