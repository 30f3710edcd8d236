#include "milforge/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <sstream>

#include "milforge/error.hpp"

namespace milforge {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto s = trim(text);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const auto s = trim(text);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

std::string num(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

void ProjectConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  auto i = [&] { return parse_number<int>(key, value); };
  auto d = [&] { return parse_number<double>(key, value); };
  if (key == "project.schema_version") {
    schema_version = i();
    if (schema_version != kConfigSchemaVersion) {
      throw ConfigError("config schema version " + value + " is not supported (expected " +
                        std::to_string(kConfigSchemaVersion) + ")");
    }
  } else if (key == "project.root") {
    root = value;
  } else if (key == "project.slides_dir") {
    slides_dir = value;
  } else if (key == "project.manifests_dir") {
    manifests_dir = value;
  } else if (key == "project.embeddings_dir") {
    embeddings_dir = value;
  } else if (key == "project.labels") {
    labels_path = value;
  } else if (key == "project.microns_per_pixel") {
    microns_per_pixel = d();
    if (!(microns_per_pixel > 0)) throw ConfigError("microns_per_pixel must be positive");
  } else if (key == "project.folds") {
    folds = i();
    if (folds < 1) throw ConfigError("folds must be >= 1");
  } else if (key == "project.embedding_dim") {
    embedding_dim = i();
  } else if (key == "project.classes" || key == "train.classes") {
    train.classes = split_list(value);
    LabelSpace check(train.classes);
  } else if (key == "train.variant") {
    train.variant = mil::parse_variant(value);
  } else if (key == "train.lr") {
    train.lr = d();
  } else if (key == "train.weight_decay") {
    train.weight_decay = d();
  } else if (key == "train.dropout") {
    train.dropout = d();
  } else if (key == "train.min_epochs") {
    train.min_epochs = i();
  } else if (key == "train.patience") {
    train.patience = i();
  } else if (key == "train.max_epochs") {
    train.max_epochs = i();
  } else if (key == "train.b") {
    train.b = i();
  } else if (key == "train.c1") {
    train.c1 = d();
  } else if (key == "train.c2") {
    train.c2 = d();
  } else if (key == "train.seed") {
    train.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "train.mag") {
    train.mag = parse_magnification(value);
  } else if (key == "train.embedding_source") {
    train.embedding_source = value;
  } else if (key == "train.hidden") {
    train.hidden = i();
  } else if (key == "train.attn_width") {
    train.attn_width = i();
  } else if (key == "segmentation.working_downsample") {
    segmentation.working_downsample = i();
  } else if (key == "segmentation.median_kernel") {
    segmentation.median_kernel = i();
  } else if (key == "segmentation.saturation_threshold") {
    segmentation.saturation_threshold = i();
  } else if (key == "segmentation.use_otsu") {
    segmentation.use_otsu = parse_bool(key, value);
  } else if (key == "segmentation.close_kernel") {
    segmentation.close_kernel = i();
  } else if (key == "segmentation.area_threshold") {
    segmentation.area_threshold = i();
  } else if (key == "segmentation.hole_threshold") {
    segmentation.hole_threshold = i();
  } else if (key == "segmentation.min_tissue_fraction") {
    segmentation.min_tissue_fraction = d();
  } else if (key == "heatmap.normalization") {
    if (value == "percentile" || value == "rank") {
      heatmap.normalization = heatmap::Normalization::kPercentRank;
    } else if (value == "minmax") {
      heatmap.normalization = heatmap::Normalization::kMinMax;
    } else {
      throw ConfigError("heatmap.normalization must be 'percentile' or 'minmax'");
    }
  } else if (key == "heatmap.colormap") {
    heatmap.colormap = value;
  } else if (key == "heatmap.opacity") {
    heatmap.opacity = d();
  } else if (key == "heatmap.downsample") {
    heatmap.downsample = i();
  } else if (key == "heatmap.top_k") {
    top_k = i();
    if (top_k < 1) throw ConfigError("heatmap.top_k must be >= 1");
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

ProjectConfig ProjectConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.message() + " (line " +
                      std::to_string(e.line()) + ")");
  }
  ProjectConfig cfg;
  cfg.root = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' is outside a section");
    for (const auto& [key, node] : body) {
      const std::string full = section + "." + key;
      if (full == "project.root") {
        const std::filesystem::path r = node.data();
        cfg.root = r.is_absolute() ? r : cfg.root / r;
      } else {
        cfg.set(full, node.data());
      }
    }
  }
  cfg.train.validate();
  cfg.heatmap.validate();
  return cfg;
}

std::filesystem::path ProjectConfig::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : root / p;
}

std::string ProjectConfig::to_ini() const {
  std::ostringstream os;
  os << "[project]\n"
     << "schema_version = " << schema_version << "\n"
     << "slides_dir = " << slides_dir.string() << "\n"
     << "manifests_dir = " << manifests_dir.string() << "\n"
     << "embeddings_dir = " << embeddings_dir.string() << "\n"
     << "labels = " << labels_path.string() << "\n"
     << "microns_per_pixel = " << num(microns_per_pixel) << "\n"
     << "folds = " << folds << "\n";
  if (embedding_dim) os << "embedding_dim = " << *embedding_dim << "\n";
  os << "\n[train]\n"
     << "variant = " << mil::variant_name(train.variant) << "\n"
     << "classes = " << join(train.classes) << "\n"
     << "lr = " << num(train.lr) << "\n"
     << "weight_decay = " << num(train.weight_decay) << "\n"
     << "dropout = " << num(train.dropout) << "\n"
     << "min_epochs = " << train.min_epochs << "\n"
     << "patience = " << train.patience << "\n"
     << "max_epochs = " << train.max_epochs << "\n"
     << "b = " << train.b << "\n"
     << "c1 = " << num(train.c1) << "\n"
     << "c2 = " << num(train.c2) << "\n"
     << "seed = " << train.seed << "\n"
     << "mag = " << magnification_name(train.mag) << "\n"
     << "embedding_source = " << train.embedding_source << "\n"
     << "hidden = " << train.hidden << "\n"
     << "attn_width = " << train.attn_width << "\n";
  const auto& s = segmentation;
  os << "\n[segmentation]\n"
     << "working_downsample = " << s.working_downsample << "\n"
     << "median_kernel = " << s.median_kernel << "\n"
     << "saturation_threshold = " << s.saturation_threshold << "\n"
     << "use_otsu = " << (s.use_otsu ? "true" : "false") << "\n"
     << "close_kernel = " << s.close_kernel << "\n"
     << "area_threshold = " << s.area_threshold << "\n"
     << "hole_threshold = " << s.hole_threshold << "\n"
     << "min_tissue_fraction = " << num(s.min_tissue_fraction) << "\n";
  os << "\n[heatmap]\n"
     << "normalization = "
     << (heatmap.normalization == heatmap::Normalization::kMinMax ? "minmax" : "percentile") << "\n"
     << "colormap = " << heatmap.colormap << "\n"
     << "opacity = " << num(heatmap.opacity) << "\n"
     << "downsample = " << heatmap.downsample << "\n"
     << "top_k = " << top_k << "\n";
  return os.str();
}

LabelTable read_labels(const std::filesystem::path& path, const LabelSpace& space) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label file '" + path.string() + "'");
  LabelTable table;
  std::string line;
  int line_no = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected 'slide_id,label'");
    }
    const auto id = trim(line.substr(0, comma));
    const auto name = trim(line.substr(comma + 1));
    if (header) {
      header = false;
      if (id == "slide_id") continue;
    }
    if (table.labels.count(id)) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": duplicate slide '" + id +
                      "'");
    }
    const auto& names = space.names();
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) {
      table.skipped.push_back(id);
      continue;
    }
    table.labels[id] = static_cast<int>(it - names.begin());
  }
  return table;
}

}  // namespace milforge
