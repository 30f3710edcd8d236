#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "milforge/error.hpp"
#include "milforge/heatmap.hpp"
#include "test_util.hpp"

using namespace milforge;
using namespace milforge::heatmap;
using tiling::PatchGrid;
using tiling::PatchRecord;
using tiling::SlidePyramid;

namespace {

// matplotlib coolwarm endpoints, (0.2298, 0.2987, 0.7537) and
// (0.7057, 0.0156, 0.1502), scaled to 8 bits.
const Rgb kBlue = {59, 76, 192};
const Rgb kRed = {180, 4, 38};

// n x n lattice at 40x covering a white slide.
PatchGrid lattice(int n) {
  PatchGrid g;
  g.slide_id = "hm";
  g.mag = Magnification::k40x;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) g.patches.push_back({x * 256, y * 256, 1.0});
  }
  return g;
}

// Percent ranks by counting, as a reference: score = (#less + (#equal - 1) / 2) / (K - 1).
std::vector<double> rank_oracle(const std::vector<double>& a) {
  const std::size_t k = a.size();
  if (k == 1) return {1.0};
  std::vector<double> out;
  for (double v : a) {
    const auto less = std::count_if(a.begin(), a.end(), [&](double u) { return u < v; });
    const auto eq = std::count(a.begin(), a.end(), v);
    out.push_back((static_cast<double>(less) + (static_cast<double>(eq) - 1) / 2.0) /
                  static_cast<double>(k - 1));
  }
  return out;
}

}  // namespace

TEST_CASE("percent-rank normalization examples") {
  CHECK(normalize_scores({0.1, 0.4, 0.2}) == std::vector<double>{0.0, 1.0, 0.5});
  CHECK(normalize_scores({0.3, 0.3, 0.3, 0.3}) == std::vector<double>(4, 0.5));
  CHECK(normalize_scores({0.7}) == std::vector<double>{1.0});
  CHECK(normalize_scores({}).empty());
  CHECK(minmax_scores({2.0, 4.0, 3.0}) == std::vector<double>{0.0, 1.0, 0.5});
  CHECK(minmax_scores({2.0, 2.0}) == std::vector<double>{0.5, 0.5});
}

TEST_CASE("percent ranks match a counting oracle and ignore monotone transforms") {
  Rng rng = make_rng(1, "test");
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 1 + static_cast<int>(rng() % 40);
    std::vector<double> a;
    for (int i = 0; i < k; ++i) a.push_back(static_cast<double>(rng() % 10) / 10.0);
    const auto s = normalize_scores(a);
    const auto ref = rank_oracle(a);
    for (int i = 0; i < k; ++i)
      REQUIRE(s[static_cast<std::size_t>(i)] ==
              doctest::Approx(ref[static_cast<std::size_t>(i)]).epsilon(1e-14));
    std::vector<double> t;
    for (double v : a) t.push_back(std::exp(3.0 * v) - 7.0);
    REQUIRE(normalize_scores(t) == s);
  }
}

TEST_CASE("colormap endpoints and clamping") {
  CHECK(colormap(0.0) == kBlue);
  CHECK(colormap(1.0) == kRed);
  CHECK(colormap(-4.0) == kBlue);
  CHECK(colormap(7.0) == kRed);
  CHECK(coolwarm_table().front() == kBlue);
  CHECK(coolwarm_table().back() == kRed);
  // red channel rises from blue to the middle
  CHECK(colormap(0.5)[0] > kBlue[0]);
}

TEST_CASE("overlay blending") {
  const auto slide = SlidePyramid::from_image("hm", RgbImage(512, 512, 255));
  HeatmapSpec spec;
  spec.downsample = 8;
  PatchGrid one;
  one.slide_id = "hm";
  one.patches = {{0, 0, 1.0}};

  SUBCASE("score 1 at full opacity is the table's red") {
    spec.opacity = 1.0;
    const auto img = render_overlay(one, {1.0}, slide, spec);
    const auto* p = img.at(5, 5);
    CHECK(Rgb{p[0], p[1], p[2]} == kRed);
    CHECK(img.at(40, 40)[0] == 255);  // outside the footprint
  }
  SUBCASE("opacity 0 is the plain slide") {
    spec.opacity = 0.0;
    CHECK(render_overlay(one, {1.0}, slide, spec) == slide.render_downsampled(8));
  }
  SUBCASE("half opacity averages") {
    spec.opacity = 0.5;
    const auto img = render_overlay(one, {0.0}, slide, spec);
    CHECK(img.at(0, 0)[2] == static_cast<int>(std::lround(0.5 * 192 + 0.5 * 255)));
  }
  SUBCASE("misaligned scores") {
    CHECK_THROWS_AS(render_overlay(one, {0.1, 0.2}, slide, spec), AlignmentError);
  }
  SUBCASE("spec validation") {
    spec.opacity = 1.5;
    CHECK_THROWS_AS(render_overlay(one, {0.1}, slide, spec), ConfigError);
    spec.opacity = 0.5;
    spec.downsample = 0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.downsample = 4;
    spec.colormap = "jet";
    CHECK_THROWS_AS(spec.validate(), ConfigError);
  }
}

TEST_CASE("checkerboard has exact tile boundaries and no bleed") {
  const int n = 4;
  auto grid = lattice(n);
  grid.patches.erase(grid.patches.begin() + 5);  // one hole stays white
  const auto slide = SlidePyramid::from_image("hm", RgbImage(n * 256 + 100, n * 256, 255));
  std::vector<double> scores;
  for (const auto& p : grid.patches) scores.push_back(((p.x + p.y) / 256) % 2 ? 1.0 : 0.0);
  HeatmapSpec spec;
  spec.opacity = 1.0;
  spec.downsample = 16;
  const auto img = render_overlay(grid, scores, slide, spec);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const auto* p = img.at(x, y);
      const Rgb got{p[0], p[1], p[2]};
      const int tx = x / 16, ty = y / 16;
      Rgb want{255, 255, 255};
      if (tx < n && !(tx == 1 && ty == 1)) want = (tx + ty) % 2 ? kRed : kBlue;
      REQUIRE(got == want);
    }
  }
}

TEST_CASE("top-k export") {
  RgbImage img(1024, 1024);
  for (int y = 0; y < 1024; ++y) {
    for (int x = 0; x < 1024; ++x)
      img.set(x, y, static_cast<std::uint8_t>(x / 4), static_cast<std::uint8_t>(y / 4), 0);
  }
  const auto slide = SlidePyramid::from_image("hm", img);
  const auto grid = lattice(4);
  std::vector<double> scores(16, 0.2);
  scores[9] = 0.9;              // (256, 512)
  scores[6] = scores[3] = 0.5;  // (512, 256) and (768, 0) tie

  const auto top1 = export_top_patches(grid, scores, slide, 1);
  REQUIRE(top1.size() == 1);
  CHECK(top1[0].x == 256);
  CHECK(top1[0].y == 512);
  CHECK(top1[0].pixels == slide.read_region(256, 512, 256, 256, 1));
  CHECK(top1[0].filename == "hm_rank01_x256_y512_s0.9000.png");

  const auto top3 = export_top_patches(grid, scores, slide, 3);
  CHECK(top3[1].x == 512);
  CHECK(top3[2].x == 768);

  bool clamped = false;
  const auto all = export_top_patches(grid, scores, slide, 40, &clamped);
  CHECK(clamped);
  CHECK(all.size() == 16);
  std::set<std::pair<int, int>> anchors;
  for (const auto& p : grid.patches) anchors.insert({p.x, p.y});
  std::set<std::pair<int, int>> seen;
  for (const auto& e : all) {
    CHECK(anchors.count({e.x, e.y}) == 1);
    seen.insert({e.x, e.y});
  }
  CHECK(seen.size() == 16);
  // ties at 0.2 come out in (x, y) order
  CHECK(all[3].x == 0);
  CHECK(all[3].y == 0);
  CHECK(all[4].x == 0);
  CHECK(all[4].y == 256);
}

TEST_CASE("sidecar lists every patch") {
  const auto grid = lattice(2);
  const std::vector<double> att{0.1, 0.2, 0.3, 0.4};
  const auto j = nlohmann::json::parse(sidecar_json(grid, att, normalize_scores(att), {}));
  REQUIRE(j["patches"].size() == 4);
  CHECK(j["patches"][3]["percent_rank"] == 1.0);
  CHECK(j["patches"][1]["x"] == 256);
  CHECK(j["normalization"] == "percent-rank");
  CHECK_THROWS_AS(sidecar_json(grid, {0.1}, {0.1}, {}), AlignmentError);
}

TEST_CASE("rendering is byte-deterministic") {
  testutil::TempDir dir("hmdet");
  const auto slide = SlidePyramid::from_image("hm", RgbImage(512, 512, 200));
  const auto grid = lattice(2);
  const std::vector<double> s{0.0, 0.3, 0.6, 1.0};
  write_png(render_overlay(grid, s, slide, {}), dir / "a.png");
  write_png(render_overlay(grid, s, slide, {}), dir / "b.png");
  CHECK(testutil::read_file(dir / "a.png") == testutil::read_file(dir / "b.png"));
}
