#include <fstream>

#include "doctest.h"
#include "milforge/config.hpp"
#include "milforge/error.hpp"
#include "test_util.hpp"

using namespace milforge;

TEST_CASE("loading an INI config") {
  testutil::TempDir dir("config");
  std::ofstream(dir / "project.ini") << "[project]\n"
                                        "schema_version = 1\n"
                                        "embeddings_dir = emb\n"
                                        "folds = 4\n"
                                        "classes = low, intermediate, high\n"
                                        "[train]\n"
                                        "variant = gated-cluster\n"
                                        "lr = 1e-3\n"
                                        "mag = 20x\n"
                                        "[segmentation]\n"
                                        "use_otsu = true\n"
                                        "[heatmap]\n"
                                        "normalization = minmax\n"
                                        "top_k = 3\n";
  const auto cfg = ProjectConfig::load(dir / "project.ini");
  CHECK(cfg.root == dir.path());
  CHECK(cfg.resolve(cfg.embeddings_dir) == dir.path() / "emb");
  CHECK(cfg.resolve("/abs/x") == "/abs/x");
  CHECK(cfg.folds == 4);
  CHECK(cfg.train.n_classes() == 3);
  CHECK(cfg.train.variant == mil::Variant::kGatedCluster);
  CHECK(cfg.train.lr == 1e-3);
  CHECK(cfg.train.mag == Magnification::k20x);
  CHECK(cfg.segmentation.use_otsu);
  CHECK(cfg.heatmap.normalization == heatmap::Normalization::kMinMax);
  CHECK(cfg.top_k == 3);
  CHECK(cfg.labels().id("intermediate") == 1);
  CHECK(cfg.train.dropout == 0.25);  // untouched default
}

TEST_CASE("to_ini round-trips through load") {
  testutil::TempDir dir("ini");
  ProjectConfig cfg;
  cfg.set("train.c2", "0.125");
  cfg.set("train.seed", "18446744073709551615");
  cfg.set("project.embedding_dim", "512");
  cfg.set("segmentation.min_tissue_fraction", "0.3");
  std::ofstream(dir / "c.ini") << cfg.to_ini();
  const auto back = ProjectConfig::load(dir / "c.ini");
  CHECK(back.train.c2 == 0.125);
  CHECK(back.train.seed == 18446744073709551615ULL);
  CHECK(back.embedding_dim == 512);
  CHECK(back.segmentation.min_tissue_fraction == 0.3);
  CHECK(back.to_ini() == ProjectConfig::load(dir / "c.ini").to_ini());
}

TEST_CASE("config errors") {
  testutil::TempDir dir("badcfg");
  ProjectConfig cfg;
  CHECK_THROWS_AS(cfg.set("train.learning_rate", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("train.lr", "fast"), ConfigError);
  CHECK_THROWS_AS(cfg.set("train.variant", "transformer"), ConfigError);
  CHECK_THROWS_AS(cfg.set("project.schema_version", "2"), ConfigError);
  CHECK_THROWS_AS(cfg.set("heatmap.normalization", "zscore"), ConfigError);
  CHECK_THROWS_AS(cfg.set("project.classes", "solo"), ConfigError);
  std::ofstream(dir / "u.ini") << "[train]\nbogus = 1\n";
  CHECK_THROWS_AS(ProjectConfig::load(dir / "u.ini"), ConfigError);
  std::ofstream(dir / "o.ini") << "[heatmap]\nopacity = 2\n";
  CHECK_THROWS_AS(ProjectConfig::load(dir / "o.ini"), ConfigError);
  CHECK_THROWS_AS(ProjectConfig::load(dir / "missing.ini"), ConfigError);
}

TEST_CASE("label files") {
  testutil::TempDir dir("labels");
  const LabelSpace space({"low", "high"});
  std::ofstream(dir / "l.csv") << "slide_id,label\ns1,low\ns2,high\ns3,intermediate\n\ns4, high \n";
  const auto t = read_labels(dir / "l.csv", space);
  CHECK(t.labels.size() == 3);
  CHECK(t.labels.at("s2") == 1);
  CHECK(t.labels.at("s4") == 1);
  CHECK(t.skipped == std::vector<std::string>{"s3"});

  std::ofstream(dir / "dup.csv") << "slide_id,label\ns1,low\ns1,high\n";
  CHECK_THROWS_AS(read_labels(dir / "dup.csv", space), DataError);
  std::ofstream(dir / "bad.csv") << "slide_id,label\ns1\n";
  CHECK_THROWS_AS(read_labels(dir / "bad.csv", space), DataError);
}
