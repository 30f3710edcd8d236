#include "milforge/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "milforge/checkpoint.hpp"
#include "milforge/error.hpp"
#include "milforge/log.hpp"
#include "milforge/synthetic.hpp"

namespace milforge::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Exceptions escape only
// through fn's own handling.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  const auto workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::string error_text(const std::exception& e) { return e.what(); }

fs::path out_or(const Context& ctx, const fs::path& fallback) {
  return ctx.out_dir ? *ctx.out_dir : ctx.config.resolve(fallback);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool is_slide_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".tif" || ext == ".tiff";
}

// slide id -> path, sorted by id.
std::map<std::string, fs::path> discover_slides(const ProjectConfig& cfg) {
  std::map<std::string, fs::path> out;
  const auto dir = cfg.resolve(cfg.slides_dir);
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_slide_file(entry.path())) {
      out.emplace(entry.path().stem().string(), entry.path());
    }
  }
  return out;
}

std::string id_list(const std::map<std::string, fs::path>& m) {
  std::string s;
  for (const auto& [id, p] : m) s += (s.empty() ? "" : ", ") + id;
  return s.empty() ? "(none)" : s;
}

// Resolves ids or paths; everything in slides_dir when `requested` is empty.
std::vector<std::pair<std::string, fs::path>> select_slides(
    const ProjectConfig& cfg, const std::vector<std::string>& requested) {
  const auto known = discover_slides(cfg);
  std::vector<std::pair<std::string, fs::path>> out;
  if (requested.empty()) {
    for (const auto& kv : known) out.push_back(kv);
    return out;
  }
  for (const auto& r : requested) {
    const fs::path p(r);
    if (is_slide_file(p) && (fs::exists(p) || p.has_parent_path())) {
      out.push_back({p.stem().string(), p});
    } else if (auto it = known.find(r); it != known.end()) {
      out.push_back(*it);
    } else {
      throw DataError("unknown slide '" + r + "'; available: " + id_list(known));
    }
  }
  return out;
}

std::optional<LabelTable> maybe_labels(const ProjectConfig& cfg) {
  const auto path = cfg.resolve(cfg.labels_path);
  if (!fs::exists(path)) return std::nullopt;
  return read_labels(path, cfg.labels());
}

LabelTable require_labels(const ProjectConfig& cfg) {
  const auto path = cfg.resolve(cfg.labels_path);
  if (!fs::exists(path)) throw DataError("label file '" + path.string() + "' does not exist");
  auto table = read_labels(path, cfg.labels());
  if (!table.skipped.empty()) {
    log::warn(std::to_string(table.skipped.size()) +
              " slide(s) have labels outside the configured classes and are ignored");
  }
  return table;
}

int report_failures(const Context& ctx, const std::vector<std::string>& ids,
                    const std::vector<std::string>& errors, const std::string& verb) {
  int failed = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (errors[i].empty()) continue;
    ++failed;
    *ctx.err << "error: " << ids[i] << ": " << errors[i] << "\n";
  }
  *ctx.out << verb << " " << (ids.size() - static_cast<std::size_t>(failed)) << " of " << ids.size()
           << " slide(s)\n";
  if (failed) {
    *ctx.err << failed << " slide(s) failed\n";
    return kExitData;
  }
  return kExitOk;
}

// Preloads bags when they fit comfortably in memory; otherwise reads on demand.
std::unique_ptr<train::BagStore> open_store(const ProjectConfig& cfg,
                                            const std::vector<std::string>& ids) {
  const auto dir = cfg.resolve(cfg.embeddings_dir);
  auto disk = std::make_unique<train::DirectoryBagStore>(dir, cfg.embedding_dim);
  std::vector<std::string> missing;
  std::uintmax_t bytes = 0;
  for (const auto& id : ids) {
    if (!disk->contains(id)) {
      missing.push_back(id);
    } else {
      bytes += fs::file_size(disk->path_of(id));
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing embeddings for " + std::to_string(missing.size()) +
                      " slide(s) in '" + dir.string() + "':";
    for (const auto& id : missing) msg += " " + id;
    throw DataError(msg);
  }
  constexpr std::uintmax_t kPreloadLimit = std::uintmax_t{1} << 30;  // f32 on disk, f64 in memory
  if (bytes > kPreloadLimit) return disk;
  auto mem = std::make_unique<train::InMemoryBagStore>();
  std::optional<Eigen::Index> dim;
  for (const auto& id : ids) {
    FeatureBag bag = *disk->get(id);
    if (dim && bag.dim() != *dim) {
      throw DimensionError("slide '" + id + "' has dimension " + std::to_string(bag.dim()) +
                           ", others have " + std::to_string(*dim));
    }
    dim = bag.dim();
    mem->add(std::move(bag));
  }
  return mem;
}

json split_json(const train::SplitSpec& s) {
  return json{
      {"fold", s.fold}, {"seed", s.seed}, {"train", s.train}, {"val", s.val}, {"test", s.test}};
}

std::string fold_stem(int fold) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fold_%02d", fold);
  return buf;
}

}  // namespace

int cmd_segment(const Context& ctx, const std::vector<std::string>& requested) {
  const auto slides = select_slides(ctx.config, requested);
  if (slides.empty()) {
    *ctx.out << "no slides to segment\n";
    return kExitOk;
  }
  const auto out_dir = out_or(ctx, "masks");
  fs::create_directories(out_dir);
  std::vector<std::string> ids, errors(slides.size());
  for (const auto& s : slides) ids.push_back(s.first);
  parallel_for(slides.size(), ctx.jobs, [&](std::size_t i) {
    try {
      const auto slide = tiling::SlidePyramid::open(slides[i].second, ctx.config.microns_per_pixel);
      auto mask = tiling::segment_tissue(slide, ctx.config.segmentation);
      for (auto& v : mask.mask.pixels) v = v ? 255 : 0;
      write_png(mask.mask, out_dir / (slides[i].first + "_mask.png"));
    } catch (const std::exception& e) {
      errors[i] = error_text(e);
    }
  });
  return report_failures(ctx, ids, errors, "segmented");
}

int cmd_segment_and_tile(const Context& ctx, const std::vector<std::string>& requested) {
  const auto slides = select_slides(ctx.config, requested);
  if (slides.empty()) {
    *ctx.out << "no slides to tile\n";
    return kExitOk;
  }
  const auto out_dir = out_or(ctx, ctx.config.manifests_dir);
  fs::create_directories(out_dir);
  std::vector<std::string> ids, errors(slides.size());
  std::vector<std::size_t> counts(slides.size(), 0);
  for (const auto& s : slides) ids.push_back(s.first);
  parallel_for(slides.size(), ctx.jobs, [&](std::size_t i) {
    try {
      const auto slide = tiling::SlidePyramid::open(slides[i].second, ctx.config.microns_per_pixel);
      const auto mask = tiling::segment_tissue(slide, ctx.config.segmentation);
      const auto grid = tiling::build_patch_grid(mask, slide, ctx.config.train.mag,
                                                 ctx.config.segmentation.min_tissue_fraction);
      tiling::write_manifest(grid, ctx.config.segmentation, out_dir / (slides[i].first + ".jsonl"));
      counts[i] = grid.patches.size();
    } catch (const std::exception& e) {
      errors[i] = error_text(e);
    }
  });
  for (std::size_t i = 0; i < slides.size(); ++i) {
    if (errors[i].empty()) {
      log::info(ids[i] + ": " + std::to_string(counts[i]) + " patches at " +
                std::string(magnification_name(ctx.config.train.mag)));
      if (counts[i] == 0) log::warn(ids[i] + ": no tissue patches");
    }
  }
  return report_failures(ctx, ids, errors, "tiled");
}

int cmd_featurize(const Context& ctx, const std::vector<std::string>& requested) {
  const auto manifest_dir = ctx.config.resolve(ctx.config.manifests_dir);
  std::vector<std::string> ids = requested;
  if (ids.empty()) {
    if (!fs::is_directory(manifest_dir)) {
      throw DataError("manifest directory '" + manifest_dir.string() + "' does not exist");
    }
    for (const auto& e : fs::directory_iterator(manifest_dir)) {
      if (e.path().extension() == ".jsonl") ids.push_back(e.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
  }
  if (ids.empty()) {
    *ctx.out << "no manifests to featurize\n";
    return kExitOk;
  }
  const auto known = discover_slides(ctx.config);
  const auto labels = maybe_labels(ctx.config);
  const auto out_dir = out_or(ctx, ctx.config.embeddings_dir);
  fs::create_directories(out_dir);
  std::vector<std::string> errors(ids.size());
  parallel_for(ids.size(), ctx.jobs, [&](std::size_t i) {
    try {
      const auto grid = tiling::read_manifest(manifest_dir / (ids[i] + ".jsonl"));
      const auto it = known.find(grid.slide_id);
      if (it == known.end()) throw DataError("slide file for '" + grid.slide_id + "' not found");
      if (grid.patches.empty()) throw EmptyBagError("manifest has no patches");
      const auto slide = tiling::SlidePyramid::open(it->second, ctx.config.microns_per_pixel);
      FeatureBag bag;
      bag.slide_id = grid.slide_id;
      bag.mag = grid.mag;
      bag.features.resize(static_cast<Eigen::Index>(grid.patches.size()), kBaselineDim);
      for (std::size_t p = 0; p < grid.patches.size(); ++p) {
        const auto px =
            tiling::extract_patch_pixels(slide, grid.patches[p].x, grid.patches[p].y, grid.mag);
        bag.features.row(static_cast<Eigen::Index>(p)) = baseline_extract(px);
      }
      if (labels) {
        if (auto l = labels->labels.find(bag.slide_id); l != labels->labels.end()) {
          bag.label = l->second;
        }
      }
      write_embeddings(bag, out_dir / (bag.slide_id + ".milf"));
    } catch (const std::exception& e) {
      errors[i] = error_text(e);
    }
  });
  return report_failures(ctx, ids, errors, "featurized");
}

int cmd_import_embeddings(const Context& ctx, const std::vector<fs::path>& descriptors) {
  if (descriptors.empty()) {
    *ctx.out << "no descriptors to import\n";
    return kExitOk;
  }
  const auto labels = maybe_labels(ctx.config);
  const auto out_dir = out_or(ctx, ctx.config.embeddings_dir);
  fs::create_directories(out_dir);
  std::vector<std::string> ids, errors(descriptors.size());
  for (const auto& d : descriptors) ids.push_back(d.string());
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    try {
      auto stream = descriptors[i];
      stream.replace_extension(".f32");
      FeatureBag bag = import_external(stream, descriptors[i], ctx.config.embedding_dim);
      if (!bag.labeled() && labels) {
        if (auto l = labels->labels.find(bag.slide_id); l != labels->labels.end()) {
          bag.label = l->second;
        }
      }
      write_embeddings(bag, out_dir / (bag.slide_id + ".milf"));
      ids[i] = bag.slide_id;
    } catch (const std::exception& e) {
      errors[i] = error_text(e);
    }
  }
  return report_failures(ctx, ids, errors, "imported");
}

int cmd_train(const Context& ctx, bool all) {
  const auto& cfg = ctx.config;
  cfg.train.validate();
  const auto table = require_labels(cfg);
  std::vector<std::string> ids;
  for (const auto& [id, l] : table.labels) ids.push_back(id);
  if (ids.empty()) throw DataError("no labeled slides");
  const auto store = open_store(cfg, ids);

  std::vector<std::string> warnings;
  const auto splits =
      train::make_splits(table.labels, cfg.train.n_classes(), cfg.train.seed, cfg.folds, &warnings);
  for (const auto& w : warnings) log::warn(w);

  const auto out_dir = out_or(ctx, "runs");
  fs::create_directories(out_dir);
  json sj = json::array();
  for (const auto& s : splits) sj.push_back(split_json(s));
  write_text(out_dir / "splits.json", sj.dump(2) + "\n");

  // The magnification column reports what the embeddings were cut at.
  train::TrainConfig base = cfg.train;
  std::set<Magnification> mags;
  for (const auto& id : ids) mags.insert(store->get(id)->mag);
  mags.erase(Magnification::kUnknown);
  if (mags.size() > 1) throw DataError("embeddings mix several magnifications");
  if (mags.size() == 1 && *mags.begin() != base.mag) {
    log::info("using the embeddings' magnification " +
              std::string(magnification_name(*mags.begin())));
    base.mag = *mags.begin();
  }

  std::vector<mil::Variant> variants =
      all ? mil::all_variants() : std::vector<mil::Variant>{cfg.train.variant};
  std::vector<train::AggregateRow> rows;
  for (const auto v : variants) {
    train::TrainConfig tc = base;
    tc.variant = v;
    const std::string name(mil::variant_name(v));
    log::info("training " + name + " on " + std::to_string(splits.size()) + " fold(s)");
    const auto results = train::cross_validate(splits, tc, *store, ctx.jobs);
    const auto vdir = out_dir / name;
    fs::create_directories(vdir);
    std::vector<train::FoldReport> reports;
    for (const auto& r : results) {
      const auto stem = fold_stem(r.report.fold);
      write_text(vdir / (stem + ".json"), r.report.to_json(false));
      mil::save_checkpoint(r.params, r.seed, vdir / (stem + ".milc"));
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "%s fold %d: auc %.4f, accuracy %.4f, epochs %d (best %d), %.1fs", name.c_str(),
                    r.report.fold, r.report.test_auc, r.report.test_accuracy,
                    r.report.stopping_epoch, r.report.best_epoch, r.report.wall_clock_seconds);
      log::info(buf);
      reports.push_back(r.report);
    }
    if (reports.size() >= 2) rows.push_back(train::aggregate(reports));
  }
  if (rows.empty()) {
    log::warn("fewer than two folds; no aggregate written");
    return kExitOk;
  }
  write_text(out_dir / "aggregate.csv", train::aggregate_csv(rows));
  *ctx.out << train::aggregate_table(rows);
  return kExitOk;
}

int cmd_evaluate(const Context& ctx, const fs::path& checkpoint,
                 const std::vector<std::string>& requested) {
  const auto ck = mil::load_checkpoint(checkpoint);
  const auto table = require_labels(ctx.config);
  std::vector<std::pair<std::string, int>> slides;
  if (requested.empty()) {
    for (const auto& kv : table.labels) slides.push_back(kv);
  } else {
    for (const auto& id : requested) {
      auto it = table.labels.find(id);
      if (it == table.labels.end()) throw DataError("slide '" + id + "' has no usable label");
      slides.push_back(*it);
    }
  }
  if (slides.empty()) throw DataError("no labeled slides to evaluate");
  if (ck.params.dims().n_classes != ctx.config.train.n_classes()) {
    throw ConfigError("checkpoint has " + std::to_string(ck.params.dims().n_classes) +
                      " classes, config has " + std::to_string(ctx.config.train.n_classes()));
  }
  std::vector<std::string> ids;
  for (const auto& s : slides) ids.push_back(s.first);
  const auto store = open_store(ctx.config, ids);
  const auto ev = train::evaluate(ck.params, slides, *store);
  json j;
  j["checkpoint"] = checkpoint.string();
  j["variant"] = std::string(mil::variant_name(ck.params.variant()));
  j["n_slides"] = slides.size();
  j["mean_cross_entropy"] = ev.mean_loss;
  j["accuracy"] = metrics::accuracy(ev.predicted, ev.labels);
  try {
    j["auc"] = metrics::macro_auc(ev.probs, ev.labels);
  } catch (const MetricError& e) {
    j["auc"] = nullptr;
    log::warn(std::string("auc undefined: ") + e.what());
  }
  j["confusion"] = metrics::confusion_matrix(ev.predicted, ev.labels, ck.params.dims().n_classes);
  json per = json::array();
  for (std::size_t i = 0; i < slides.size(); ++i) {
    const auto row = ev.probs.row(static_cast<Eigen::Index>(i));
    per.push_back({{"slide_id", slides[i].first},
                   {"label", slides[i].second},
                   {"predicted", ev.predicted[i]},
                   {"probs", std::vector<double>(row.data(), row.data() + row.size())}});
  }
  j["slides"] = per;
  const auto text = j.dump(2) + "\n";
  if (ctx.out_dir) write_text(*ctx.out_dir / "evaluation.json", text);
  *ctx.out << text;
  return kExitOk;
}

int cmd_heatmap(const Context& ctx, const std::string& slide_id, const fs::path& checkpoint,
                std::optional<int> class_id, std::optional<int> top_k) {
  const auto& cfg = ctx.config;
  const auto known = discover_slides(cfg);
  const auto it = known.find(slide_id);
  if (it == known.end()) {
    throw DataError("unknown slide '" + slide_id + "'; available: " + id_list(known));
  }
  const auto ck = mil::load_checkpoint(checkpoint);
  const auto grid = tiling::read_manifest(cfg.resolve(cfg.manifests_dir) / (slide_id + ".jsonl"));
  const auto bag = read_embeddings(cfg.resolve(cfg.embeddings_dir) / (slide_id + ".milf"),
                                   ck.params.dims().d_in);
  if (static_cast<std::size_t>(bag.size()) != grid.patches.size()) {
    throw DataError("slide '" + slide_id + "': " + std::to_string(bag.size()) + " embeddings but " +
                    std::to_string(grid.patches.size()) + " manifest patches");
  }
  const int k = top_k.value_or(cfg.top_k);
  const auto slide = tiling::SlidePyramid::open(it->second, cfg.microns_per_pixel);
  heatmap::HeatmapSpec spec = cfg.heatmap;
  spec.slide_id = slide_id;
  spec.mag = grid.mag;
  spec.validate();
  const int n_classes = ck.params.dims().n_classes;
  if (class_id && (*class_id < 0 || *class_id >= n_classes)) {
    throw ConfigError("class " + std::to_string(*class_id) + " outside [0, " +
                      std::to_string(n_classes) + ")");
  }

  std::vector<double> raw;
  int predicted = 0;
  int branch = 0;
  tiling::PatchGrid overlay_grid = grid;
  std::vector<double> overlay_scores;
  std::vector<double> scores;
  if (mil::has_attention(ck.params.variant())) {
    const auto out = mil::forward_attention(bag, ck.params);
    predicted = out.predicted;
    branch = class_id.value_or(predicted);
    const auto row = out.attention.row(branch);
    raw.assign(row.data(), row.data() + row.size());
    scores = heatmap::normalize(raw, spec.normalization);
    overlay_scores = scores;
  } else {
    // Max-pool has no attention: mark the single deciding instance.
    const auto out = mil::forward_maxpool(bag, ck.params);
    predicted = out.predicted;
    branch = class_id.value_or(predicted);
    const auto col = out.instance_probs.col(branch);
    raw.assign(col.data(), col.data() + col.size());
    scores = heatmap::normalize(raw, spec.normalization);
    overlay_grid.patches = {grid.patches[static_cast<std::size_t>(out.top_instance)]};
    overlay_scores = {1.0};
  }
  const auto overlay = heatmap::render_overlay(overlay_grid, overlay_scores, slide, spec);
  const auto out_dir = out_or(ctx, "heatmaps");
  fs::create_directories(out_dir);
  write_png(overlay, out_dir / (slide_id + "_heatmap.png"));
  auto sidecar = json::parse(heatmap::sidecar_json(grid, raw, scores, spec));
  sidecar["variant"] = std::string(mil::variant_name(ck.params.variant()));
  sidecar["predicted_class"] = predicted;
  sidecar["attention_class"] = branch;
  write_text(out_dir / (slide_id + "_heatmap.json"), sidecar.dump(2) + "\n");
  bool clamped = false;
  const auto top = mil::has_attention(ck.params.variant())
                       ? heatmap::export_top_patches(grid, scores, slide, k, &clamped)
                       : heatmap::export_top_patches(overlay_grid, {1.0}, slide, 1, &clamped);
  if (clamped) log::warn("top-k clamped to " + std::to_string(top.size()) + " patches");
  const auto patch_dir = out_dir / (slide_id + "_top");
  fs::create_directories(patch_dir);
  heatmap::write_exported(top, patch_dir);
  *ctx.out << "wrote " << (out_dir / (slide_id + "_heatmap.png")).string() << " and " << top.size()
           << " patch(es)\n";
  return kExitOk;
}

int cmd_report(const Context& ctx, const std::vector<fs::path>& dirs) {
  struct Key {
    int order;
    std::string source, mag;
    bool operator<(const Key& o) const {
      return std::tie(order, source, mag) < std::tie(o.order, o.source, o.mag);
    }
  };
  std::map<Key, std::vector<train::FoldReport>> groups;
  std::vector<fs::path> files;
  for (const auto& d : dirs) {
    if (!fs::is_directory(d)) throw DataError("'" + d.string() + "' is not a directory");
    for (const auto& e : fs::recursive_directory_iterator(d)) {
      const auto name = e.path().filename().string();
      if (e.is_regular_file() && name.rfind("fold_", 0) == 0 && e.path().extension() == ".json") {
        files.push_back(e.path());
      }
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no fold reports found");
  const auto& order = mil::all_variants();
  for (const auto& f : files) {
    auto r = train::FoldReport::from_json(read_text(f));
    const int idx =
        static_cast<int>(std::find(order.begin(), order.end(), r.variant) - order.begin());
    groups[{idx, r.embedding_source, std::string(magnification_name(r.mag))}].push_back(
        std::move(r));
  }
  std::vector<train::AggregateRow> rows;
  for (const auto& [key, reports] : groups) rows.push_back(train::aggregate(reports));
  const auto csv = train::aggregate_csv(rows);
  if (ctx.out_dir) {
    write_text(*ctx.out_dir / "aggregate.csv", csv);
    *ctx.out << train::aggregate_table(rows);
  } else {
    *ctx.out << csv;
  }
  return kExitOk;
}

int cmd_synth(const Context& ctx, const SynthOptions& opts) {
  if (!ctx.out_dir) {
    *ctx.err << "error: synth needs --out\n";
    return kExitUsage;
  }
  const fs::path dir = *ctx.out_dir;
  fs::create_directories(dir);
  ProjectConfig cfg = ctx.config;
  cfg.root = dir;
  const auto& names = cfg.train.classes;
  std::string labels = "slide_id,label\n";
  if (opts.slides > 0) {
    cfg.embedding_dim = kBaselineDim;
    cfg.train.embedding_source = "baseline64";
    fs::create_directories(dir / cfg.slides_dir);
    for (int i = 0; i < opts.slides; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "slide%03d", i);
      const bool positive = i % 2 == 1;
      const auto img = synthetic::make_slide(
          opts.slide_width, opts.slide_height, positive,
          derive_seed(cfg.train.seed, "synth-slide", static_cast<std::uint64_t>(i)));
      write_png(img, dir / cfg.slides_dir / (std::string(id) + ".png"));
      labels += std::string(id) + "," + names[positive ? names.size() - 1 : 0] + "\n";
    }
    *ctx.out << "wrote " << opts.slides << " synthetic slide(s) to " << dir.string() << "\n";
  } else {
    synthetic::BenchmarkConfig bc;
    bc.n_bags = opts.bags;
    bc.min_instances = opts.min_instances;
    bc.max_instances = opts.max_instances;
    cfg.embedding_dim = bc.dim;
    cfg.train.embedding_source = "synthetic";
    const auto bench = synthetic::make_benchmark(bc, cfg.train.seed);
    fs::create_directories(dir / cfg.embeddings_dir);
    for (auto bag : bench.bags) {
      const int label = bag.label;
      bag.label = label ? cfg.train.n_classes() - 1 : 0;
      bag.mag = cfg.train.mag;
      write_embeddings(bag, dir / cfg.embeddings_dir / (bag.slide_id + ".milf"));
      labels += bag.slide_id + "," + names[static_cast<std::size_t>(bag.label)] + "\n";
    }
    *ctx.out << "wrote " << bench.bags.size() << " synthetic bag(s) to " << dir.string() << "\n";
  }
  write_text(dir / cfg.labels_path, labels);
  write_text(dir / "config.ini", cfg.to_ini());
  return kExitOk;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention-based multiple instance learning for whole-slide images", "milforge"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_path, mag, variant, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> classes, folds;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "INI project configuration");
  app.add_option("--seed", seed, "Master seed");
  app.add_option("--jobs", jobs, "Worker threads (1 = serial)")->check(CLI::PositiveNumber);
  app.add_option("--mag", mag, "Patch magnification")->check(CLI::IsMember({"10x", "20x", "40x"}));
  app.add_option("--variant", variant, "Model variant")
      ->check(CLI::IsMember({"maxpool", "attn", "gated", "attn-cluster", "gated-cluster"}));
  app.add_option("--classes", classes, "Number of classes")->check(CLI::IsMember({2, 3}));
  app.add_option("--folds", folds, "Cross-validation resamples")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--set", overrides, "Config override section.key=value")->take_all();

  std::vector<std::string> slides;
  std::vector<std::string> descriptors;
  std::string checkpoint, slide_id;
  std::optional<int> class_id, top_k;
  SynthOptions synth;

  auto* seg = app.add_subcommand("segment", "Write tissue masks");
  seg->add_option("slides", slides, "Slide ids or paths (default: all)");
  auto* tile = app.add_subcommand("tile", "Segment and tile slides into patch manifests");
  tile->add_option("slides", slides, "Slide ids or paths (default: all)");
  auto* feat = app.add_subcommand("featurize", "Baseline descriptors for every manifest");
  feat->add_option("slides", slides, "Slide ids (default: all manifests)");
  auto* imp = app.add_subcommand("import-embeddings", "Import external embedding streams");
  imp->add_option("descriptors", descriptors, "JSON descriptors, each next to <name>.f32")
      ->required();
  auto* tr = app.add_subcommand("train", "Cross-validate MIL models");
  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on labeled slides");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("slides", slides, "Slide ids (default: all labeled)");
  auto* hm = app.add_subcommand("heatmap", "Attention heatmap and top patches for one slide");
  hm->add_option("slide", slide_id)->required();
  hm->add_option("--checkpoint", checkpoint)->required();
  hm->add_option("--class", class_id, "Attention branch (default: predicted class)");
  hm->add_option("--top-k", top_k, "Patches to export")->check(CLI::PositiveNumber);
  auto* rep = app.add_subcommand("report", "Aggregate fold reports into a CSV");
  rep->add_option("dirs", descriptors, "Run directories")->required();
  auto* syn = app.add_subcommand("synth", "Write a synthetic project");
  syn->add_option("--bags", synth.bags)->check(CLI::PositiveNumber);
  syn->add_option("--min-instances", synth.min_instances)->check(CLI::PositiveNumber);
  syn->add_option("--max-instances", synth.max_instances)->check(CLI::PositiveNumber);
  syn->add_option("--slides", synth.slides, "Write PNG slides instead of embeddings");
  syn->add_option("--slide-width", synth.slide_width)->check(CLI::PositiveNumber);
  syn->add_option("--slide-height", synth.slide_height)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  log::set_sink(&err);
  struct SinkReset {
    ~SinkReset() { log::set_sink(nullptr); }
  } reset;
  try {
    log::init_from_env();
    Context ctx;
    ctx.out = &out;
    ctx.err = &err;
    ctx.jobs = jobs;
    if (config_path) ctx.config = ProjectConfig::load(*config_path);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos)
        throw ConfigError("--set expects section.key=value, got '" + o + "'");
      ctx.config.set(o.substr(0, eq), o.substr(eq + 1));
    }
    auto& tc = ctx.config.train;
    if (seed) tc.seed = *seed;
    if (mag) tc.mag = parse_magnification(*mag);
    if (variant) tc.variant = mil::parse_variant(*variant);
    if (folds) ctx.config.folds = *folds;
    if (classes && *classes != tc.n_classes()) {
      tc.classes = *classes == 2 ? std::vector<std::string>{"low", "high"}
                                 : std::vector<std::string>{"low", "intermediate", "high"};
    }
    if (out_dir) ctx.out_dir = fs::path(*out_dir);

    if (seg->parsed()) return cmd_segment(ctx, slides);
    if (tile->parsed()) return cmd_segment_and_tile(ctx, slides);
    if (feat->parsed()) return cmd_featurize(ctx, slides);
    if (imp->parsed()) {
      return cmd_import_embeddings(ctx,
                                   std::vector<fs::path>(descriptors.begin(), descriptors.end()));
    }
    if (tr->parsed()) return cmd_train(ctx, !variant);
    if (ev->parsed()) return cmd_evaluate(ctx, checkpoint, slides);
    if (hm->parsed()) return cmd_heatmap(ctx, slide_id, checkpoint, class_id, top_k);
    if (rep->parsed()) {
      return cmd_report(ctx, std::vector<fs::path>(descriptors.begin(), descriptors.end()));
    }
    if (syn->parsed()) return cmd_synth(ctx, synth);
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.is_data_error() ? kExitData : kExitInternal;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace milforge::cli
