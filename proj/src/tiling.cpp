#include "milforge/tiling.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "milforge/error.hpp"

namespace milforge::tiling {

using nlohmann::json;

SlidePyramid SlidePyramid::from_levels(std::string slide_id, std::vector<RgbImage> levels,
                                       double microns_per_pixel) {
  if (levels.empty() || levels.front().empty()) {
    throw FormatError("slide '" + slide_id + "' has no image data");
  }
  if (!(microns_per_pixel > 0)) throw ConfigError("microns-per-pixel must be positive");
  SlidePyramid s;
  s.id_ = std::move(slide_id);
  s.mpp_ = microns_per_pixel;
  const int w0 = levels.front().width;
  int prev = 0;
  for (const auto& img : levels) {
    const double ratio = static_cast<double>(w0) / img.width;
    const int ds = static_cast<int>(std::lround(ratio));
    // Pyramid levels round their dimensions up or down; accept within one pixel.
    if (ds < 1 || std::abs(static_cast<double>(w0) / ds - img.width) > 1.0 ||
        std::abs(static_cast<double>(levels.front().height) / ds - img.height) > 1.0) {
      throw FormatError("slide '" + s.id_ + "': level of width " + std::to_string(img.width) +
                        " is not an integer reduction of " + std::to_string(w0));
    }
    if (ds <= prev) {
      throw FormatError("slide '" + s.id_ + "': downsample factors must strictly increase");
    }
    prev = ds;
    s.levels_.push_back({img.width, img.height, ds});
  }
  s.images_ = std::move(levels);
  return s;
}

SlidePyramid SlidePyramid::from_image(std::string slide_id, RgbImage level0,
                                      double microns_per_pixel) {
  std::vector<RgbImage> levels;
  levels.push_back(std::move(level0));
  return from_levels(std::move(slide_id), std::move(levels), microns_per_pixel);
}

SlidePyramid SlidePyramid::open(const std::filesystem::path& path, double microns_per_pixel) {
  if (!std::filesystem::exists(path)) throw IoError("cannot open '" + path.string() + "'");
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  const std::string id = path.stem().string();
  if (ext == ".png") return from_image(id, read_png(path), microns_per_pixel);
  if (ext == ".tif" || ext == ".tiff") {
    if (!tiff_supported()) throw IoError("TIFF support not compiled in: '" + path.string() + "'");
    return from_levels(id, read_tiff_pages(path), microns_per_pixel);
  }
  throw FormatError("unsupported slide format '" + ext + "' for '" + path.string() + "'");
}

PyramidLevel SlidePyramid::level(int i) const {
  if (i < 0 || i >= level_count())
    throw BoundsError("level " + std::to_string(i) + " out of range");
  return levels_[static_cast<std::size_t>(i)];
}

int SlidePyramid::downsample_for(Magnification mag) const {
  if (mag == Magnification::kUnknown) throw ConfigError("magnification not set");
  const double ratio = native_magnification() / objective_power(mag);
  const long r = std::lround(ratio);
  if (r < 1 || std::abs(ratio - static_cast<double>(r)) > 1e-6) {
    std::ostringstream os;
    os << "magnification " << magnification_name(mag) << " is not derivable from slide '" << id_
       << "' (native " << native_magnification() << "x)";
    throw ConfigError(os.str());
  }
  return static_cast<int>(r);
}

RgbImage SlidePyramid::render_downsampled(int factor) const {
  if (factor < 1) throw ParameterError("downsample factor must be >= 1");
  std::size_t best = 0;
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    if (levels_[i].downsample <= factor && factor % levels_[i].downsample == 0) best = i;
  }
  return box_downsample(images_[best], factor / levels_[best].downsample);
}

RgbImage SlidePyramid::read_region(int x, int y, int w, int h, int factor) const {
  if (factor < 1 || w < 0 || h < 0) throw ParameterError("read_region: invalid geometry");
  const long long x1 = static_cast<long long>(x) + static_cast<long long>(w) * factor;
  const long long y1 = static_cast<long long>(y) + static_cast<long long>(h) * factor;
  if (x < 0 || y < 0 || x1 > width() || y1 > height()) {
    throw BoundsError("region (" + std::to_string(x) + ", " + std::to_string(y) + ") size " +
                      std::to_string(w) + "x" + std::to_string(h) + " at downsample " +
                      std::to_string(factor) + " leaves slide '" + id_ + "' (" +
                      std::to_string(width()) + "x" + std::to_string(height()) + ")");
  }
  RgbImage out(w, h);
  // Exact level available and aligned: plain crop.
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    const int ds = levels_[i].downsample;
    if (ds == factor && x % ds == 0 && y % ds == 0) {
      const RgbImage& src = images_[i];
      const int lx = x / ds, ly = y / ds;
      if (lx + w <= src.width && ly + h <= src.height) {
        for (int r = 0; r < h; ++r) {
          std::copy_n(src.at(lx, ly + r), static_cast<std::size_t>(w) * 3, out.at(0, r));
        }
        return out;
      }
    }
  }
  // Otherwise average factor x factor blocks of level 0.
  const RgbImage& src = images_.front();
  const std::uint64_t n = static_cast<std::uint64_t>(factor) * factor;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      std::uint64_t acc[3] = {0, 0, 0};
      for (int dy = 0; dy < factor; ++dy) {
        const auto* p = src.at(x + c * factor, y + r * factor + dy);
        for (int dx = 0; dx < factor; ++dx, p += 3) {
          acc[0] += p[0];
          acc[1] += p[1];
          acc[2] += p[2];
        }
      }
      auto* q = out.at(c, r);
      for (int k = 0; k < 3; ++k) q[k] = static_cast<std::uint8_t>((acc[k] + n / 2) / n);
    }
  }
  return out;
}

std::string SegmentationConfig::to_json() const {
  json j = {{"working_downsample", working_downsample},
            {"median_kernel", median_kernel},
            {"saturation_threshold", saturation_threshold},
            {"use_otsu", use_otsu},
            {"close_kernel", close_kernel},
            {"area_threshold", area_threshold},
            {"hole_threshold", hole_threshold},
            {"min_tissue_fraction", min_tissue_fraction}};
  return j.dump();
}

std::string SegmentationConfig::hash() const { return fnv1a_hex(to_json()); }

long long TissueMask::tissue_pixels() const {
  long long n = 0;
  for (auto v : mask.pixels) n += v != 0;
  return n;
}

GrayImage median_blur(const GrayImage& src, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw ParameterError("median kernel must be odd and >= 1");
  if (kernel == 1 || src.pixels.empty()) return src;
  const int r = kernel / 2;
  const int half = kernel * kernel / 2;
  GrayImage out(src.width, src.height);
  auto clampx = [&](int x) { return std::clamp(x, 0, src.width - 1); };
  auto clampy = [&](int y) { return std::clamp(y, 0, src.height - 1); };
  for (int y = 0; y < src.height; ++y) {
    // Sliding histogram along the row, replicated borders.
    std::array<int, 256> hist{};
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) ++hist[src.at(clampx(dx), clampy(y + dy))];
    }
    for (int x = 0; x < src.width; ++x) {
      int acc = 0, v = 0;
      for (; v < 256; ++v) {
        acc += hist[static_cast<std::size_t>(v)];
        if (acc > half) break;
      }
      out.at(x, y) = static_cast<std::uint8_t>(v);
      if (x + 1 < src.width) {
        for (int dy = -r; dy <= r; ++dy) {
          --hist[src.at(clampx(x - r), clampy(y + dy))];
          ++hist[src.at(clampx(x + r + 1), clampy(y + dy))];
        }
      }
    }
  }
  return out;
}

int otsu_threshold(const GrayImage& src) {
  std::array<double, 256> hist{};
  for (auto v : src.pixels) hist[v] += 1.0;
  const double total = static_cast<double>(src.pixels.size());
  if (total == 0) return 0;
  double sum_all = 0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[static_cast<std::size_t>(i)];
  double w0 = 0, sum0 = 0, best = -1;
  int best_t = 0;
  for (int t = 0; t < 256; ++t) {
    w0 += hist[static_cast<std::size_t>(t)];
    sum0 += t * hist[static_cast<std::size_t>(t)];
    const double w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return best_t;
}

GrayImage morphological_close(const GrayImage& binary, int kernel) {
  if (kernel < 1) throw ParameterError("closing kernel must be >= 1");
  if (kernel == 1) return binary;
  // Square element anchored at kernel/2; erosion uses the reflected element so
  // the composition is a true closing (extensive, idempotent).
  const int lo = -(kernel / 2), hi = kernel - 1 - kernel / 2;
  const int w = binary.width, h = binary.height;
  GrayImage dil(w, h), out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 0;
      for (int dy = lo; dy <= hi && !v; ++dy) {
        for (int dx = lo; dx <= hi; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx >= 0 && yy >= 0 && xx < w && yy < h && binary.at(xx, yy)) {
            v = 1;
            break;
          }
        }
      }
      dil.at(x, y) = v;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 1;
      for (int dy = -hi; dy <= -lo && v; ++dy) {
        for (int dx = -hi; dx <= -lo; ++dx) {
          const int xx = x + dx, yy = y + dy;
          // Outside the raster counts as foreground so borders do not erode.
          if (xx >= 0 && yy >= 0 && xx < w && yy < h && !dil.at(xx, yy)) {
            v = 0;
            break;
          }
        }
      }
      out.at(x, y) = v;
    }
  }
  return out;
}

namespace {

struct Component {
  long long area = 0;
  int x0, y0, x1, y1;
  bool touches_border = false;
  std::vector<std::size_t> pixels;
};

// Components of pixels equal to `value`; 8-connected for foreground, 4 for
// background so the two topologies stay dual.
std::vector<Component> components(const GrayImage& img, std::uint8_t value, bool eight) {
  const int w = img.width, h = img.height;
  std::vector<std::uint8_t> seen(img.pixels.size(), 0);
  std::vector<Component> out;
  std::deque<std::size_t> queue;
  for (std::size_t start = 0; start < img.pixels.size(); ++start) {
    if (seen[start] || img.pixels[start] != value) continue;
    Component c{0, w, h, 0, 0, false, {}};
    seen[start] = 1;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t p = queue.front();
      queue.pop_front();
      const int x = static_cast<int>(p % static_cast<std::size_t>(w));
      const int y = static_cast<int>(p / static_cast<std::size_t>(w));
      c.pixels.push_back(p);
      ++c.area;
      c.x0 = std::min(c.x0, x);
      c.y0 = std::min(c.y0, y);
      c.x1 = std::max(c.x1, x + 1);
      c.y1 = std::max(c.y1, y + 1);
      if (x == 0 || y == 0 || x == w - 1 || y == h - 1) c.touches_border = true;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if ((dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0)) continue;
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
          const std::size_t q = static_cast<std::size_t>(yy) * w + xx;
          if (!seen[q] && img.pixels[q] == value) {
            seen[q] = 1;
            queue.push_back(q);
          }
        }
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

TissueMask segment_tissue(const SlidePyramid& slide, const SegmentationConfig& cfg) {
  if (cfg.working_downsample < 1) throw ConfigError("working downsample must be >= 1");
  TissueMask tm;
  tm.downsample = cfg.working_downsample;
  tm.level0_width = slide.width();
  tm.level0_height = slide.height();

  const RgbImage working = slide.render_downsampled(cfg.working_downsample);
  const GrayImage sat = median_blur(saturation_channel(working), cfg.median_kernel);
  tm.threshold_used = cfg.use_otsu ? otsu_threshold(sat) : cfg.saturation_threshold;
  GrayImage bin(sat.width, sat.height);
  for (std::size_t i = 0; i < sat.pixels.size(); ++i) {
    bin.pixels[i] = sat.pixels[i] > tm.threshold_used ? 1 : 0;
  }
  bin = morphological_close(bin, cfg.close_kernel);

  // Fill enclosed holes smaller than the hole threshold.
  for (const auto& hole : components(bin, 0, false)) {
    if (!hole.touches_border && hole.area < cfg.hole_threshold) {
      for (auto p : hole.pixels) bin.pixels[p] = 1;
    }
  }
  for (const auto& c : components(bin, 1, true)) {
    if (c.area < cfg.area_threshold) {
      for (auto p : c.pixels) bin.pixels[p] = 0;
      continue;
    }
    tm.regions.push_back({c.area, c.x0, c.y0, c.x1, c.y1});
  }
  tm.mask = std::move(bin);
  return tm;
}

namespace {

// Area-weighted fraction of the level-0 footprint covered by mask pixels.
double tissue_fraction(const TissueMask& tm, long long fx, long long fy, long long size) {
  const long long ds = tm.downsample;
  const int mx0 = static_cast<int>(fx / ds), my0 = static_cast<int>(fy / ds);
  const int mx1 = static_cast<int>(std::min<long long>((fx + size + ds - 1) / ds, tm.mask.width));
  const int my1 = static_cast<int>(std::min<long long>((fy + size + ds - 1) / ds, tm.mask.height));
  long long covered = 0;
  for (int my = my0; my < my1; ++my) {
    const long long oy =
        std::min<long long>(fy + size, (my + 1) * ds) - std::max<long long>(fy, my * ds);
    if (oy <= 0) continue;
    for (int mx = mx0; mx < mx1; ++mx) {
      if (!tm.mask.at(mx, my)) continue;
      const long long ox =
          std::min<long long>(fx + size, (mx + 1) * ds) - std::max<long long>(fx, mx * ds);
      if (ox > 0) covered += ox * oy;
    }
  }
  return static_cast<double>(covered) / static_cast<double>(size * size);
}

}  // namespace

PatchGrid build_patch_grid(const TissueMask& mask, const SlidePyramid& slide, Magnification mag,
                           double min_tissue_fraction) {
  PatchGrid grid;
  grid.slide_id = slide.id();
  grid.mag = mag;
  grid.downsample = slide.downsample_for(mag);
  const long long step = grid.footprint();
  const long long ds = mask.downsample;

  std::set<std::pair<long long, long long>> cells;  // (y, x) lattice indices
  for (const auto& r : mask.regions) {
    const long long bx0 = r.x0 * ds, by0 = r.y0 * ds;
    const long long bx1 = std::min<long long>(r.x1 * ds, slide.width());
    const long long by1 = std::min<long long>(r.y1 * ds, slide.height());
    for (long long cy = by0 / step; cy * step < by1; ++cy) {
      for (long long cx = bx0 / step; cx * step < bx1; ++cx) cells.insert({cy, cx});
    }
  }
  for (const auto& [cy, cx] : cells) {
    const long long x = cx * step, y = cy * step;
    if (x + step > slide.width() || y + step > slide.height()) continue;
    const double frac = tissue_fraction(mask, x, y, step);
    if (frac >= min_tissue_fraction && frac > 0.0) {
      grid.patches.push_back({static_cast<int>(x), static_cast<int>(y), frac});
    }
  }
  return grid;
}

RgbImage extract_patch_pixels(const SlidePyramid& slide, int x, int y, Magnification mag) {
  const int ds = slide.downsample_for(mag);
  return slide.read_region(x, y, kPatchPixels, kPatchPixels, ds);
}

std::string manifest_text(const PatchGrid& grid, const SegmentationConfig& cfg) {
  std::string out;
  json header = {{"schema", "milforge.patch-manifest"},
                 {"schema_version", kManifestSchemaVersion},
                 {"slide_id", grid.slide_id},
                 {"mag", std::string(magnification_name(grid.mag))},
                 {"downsample", grid.downsample},
                 {"patch_count", grid.patches.size()},
                 {"segmentation_config", json::parse(cfg.to_json())},
                 {"segmentation_config_hash", cfg.hash()}};
  out += header.dump() + "\n";
  for (const auto& p : grid.patches) {
    json rec = {{"slide_id", grid.slide_id},
                {"mag", std::string(magnification_name(grid.mag))},
                {"x", p.x},
                {"y", p.y},
                {"size", grid.patch_size},
                {"tissue_fraction", p.tissue_fraction}};
    out += rec.dump() + "\n";
  }
  return out;
}

void write_manifest(const PatchGrid& grid, const SegmentationConfig& cfg,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  out << manifest_text(grid, cfg);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

PatchGrid read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("manifest '" + path.string() + "' is empty");
  PatchGrid grid;
  try {
    const json header = json::parse(line);
    if (header.value("schema", "") != "milforge.patch-manifest") {
      throw FormatError("'" + path.string() + "' is not a patch manifest");
    }
    if (header.at("schema_version").get<int>() != kManifestSchemaVersion) {
      throw FormatError("unsupported manifest schema version in '" + path.string() + "'");
    }
    grid.slide_id = header.at("slide_id").get<std::string>();
    grid.mag = parse_magnification(header.at("mag").get<std::string>());
    grid.downsample = header.at("downsample").get<int>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json rec = json::parse(line);
      grid.patch_size = rec.at("size").get<int>();
      grid.patches.push_back({rec.at("x").get<int>(), rec.at("y").get<int>(),
                              rec.at("tissue_fraction").get<double>()});
    }
    if (header.contains("patch_count") &&
        header["patch_count"].get<std::size_t>() != grid.patches.size()) {
      throw TruncatedError("manifest '" + path.string() + "' declares " +
                           std::to_string(header["patch_count"].get<std::size_t>()) +
                           " patches but lists " + std::to_string(grid.patches.size()));
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + path.string() + "': " + e.what());
  }
  return grid;
}

}  // namespace milforge::tiling
