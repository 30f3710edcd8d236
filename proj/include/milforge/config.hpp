#pragma once

// INI project configuration. Sections [project], [train], [segmentation] and
// [heatmap]; every key can also be set as "section.key=value".

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "milforge/features.hpp"
#include "milforge/heatmap.hpp"
#include "milforge/tiling.hpp"
#include "milforge/trainer.hpp"

namespace milforge {

inline constexpr int kConfigSchemaVersion = 1;

struct ProjectConfig {
  int schema_version = kConfigSchemaVersion;
  std::filesystem::path root = ".";  // relative paths below resolve against it
  std::filesystem::path slides_dir = "slides";
  std::filesystem::path manifests_dir = "manifests";
  std::filesystem::path embeddings_dir = "embeddings";
  std::filesystem::path labels_path = "labels.csv";
  double microns_per_pixel = 0.25;
  int folds = 10;
  std::optional<int> embedding_dim;
  train::TrainConfig train;
  tiling::SegmentationConfig segmentation;
  heatmap::HeatmapSpec heatmap;
  int top_k = 5;

  // Throws ConfigError on unknown keys, bad values or a schema mismatch.
  static ProjectConfig load(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  std::string to_ini() const;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  LabelSpace labels() const { return LabelSpace(train.classes); }
};

struct LabelTable {
  std::map<std::string, int> labels;  // slide id -> class id
  std::vector<std::string> skipped;   // slides whose label is outside the label space
};

// CSV with a "slide_id,label" header; labels are class names.
LabelTable read_labels(const std::filesystem::path& path, const LabelSpace& space);

}  // namespace milforge
