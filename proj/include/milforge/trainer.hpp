#pragma once

// Stratified splits, inverse-frequency bag sampling, the early-stopped
// training loop, Monte Carlo cross-validation and report aggregation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "milforge/features.hpp"
#include "milforge/metrics.hpp"
#include "milforge/models.hpp"
#include "milforge/random.hpp"

namespace milforge::train {

struct TrainConfig {
  mil::Variant variant = mil::Variant::kAttention;
  double lr = 2e-4;
  double weight_decay = 1e-5;
  double dropout = 0.25;
  int min_epochs = 50;
  int patience = 2;
  int max_epochs = 200;
  int b = 8;
  double c1 = 0.7;
  double c2 = 0.3;
  std::uint64_t seed = 0;
  std::vector<std::string> classes = {"low", "high"};
  Magnification mag = Magnification::k40x;
  std::string embedding_source = "resnet50-imagenet";
  int hidden = 512;
  int attn_width = 256;

  void validate() const;
  int n_classes() const { return static_cast<int>(classes.size()); }
};

struct SplitSpec {
  std::uint64_t seed = 0;
  int fold = 0;
  // Indexed by class id.
  std::vector<std::vector<std::string>> train, val, test;

  std::size_t train_size() const;
  std::size_t val_size() const;
  std::size_t test_size() const;
  bool operator==(const SplitSpec&) const = default;
};

// `n_folds` seeded stratified 80/10/10 resamples. Per-partition totals are
// round(N / 10) and apportioned to classes by largest remainder. A class with
// fewer than three slides raises StratificationError; fewer than n_folds adds
// a warning.
std::vector<SplitSpec> make_splits(const std::map<std::string, int>& labels, int n_classes,
                                   std::uint64_t seed, int n_folds = 10,
                                   std::vector<std::string>* warnings = nullptr);

// Draws training slides with P(s) proportional to 1 / count(class(s)).
class BagSampler {
 public:
  explicit BagSampler(const SplitSpec& split);
  explicit BagSampler(std::vector<std::vector<std::string>> per_class);

  // (slide id, class id)
  std::pair<std::string, int> sample(Rng& rng) const;
  std::size_t size() const { return total_; }
  int class_count() const { return static_cast<int>(class_ids_.size()); }

 private:
  std::vector<std::vector<std::string>> per_class_;  // non-empty classes only
  std::vector<int> class_ids_;
  std::size_t total_ = 0;
};

// Stop once epoch >= min_epochs and the validation loss has failed to improve
// (strictly decrease) for `patience` consecutive epochs.
class EarlyStopping {
 public:
  EarlyStopping(int min_epochs, int patience);

  // Epochs are 1-based. Returns true when training should stop after `epoch`.
  bool update(int epoch, double val_loss);
  bool improved_last() const { return improved_last_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  int non_improving() const { return counter_; }

 private:
  int min_epochs_;
  int patience_;
  int counter_ = 0;
  int best_epoch_ = 0;
  double best_loss_ = 0.0;
  bool has_best_ = false;
  bool improved_last_ = false;
};

// Source of bags by slide id.
class BagStore {
 public:
  virtual ~BagStore() = default;
  virtual std::shared_ptr<const FeatureBag> get(const std::string& slide_id) const = 0;
  virtual bool contains(const std::string& slide_id) const = 0;
};

class InMemoryBagStore : public BagStore {
 public:
  InMemoryBagStore() = default;
  explicit InMemoryBagStore(std::vector<FeatureBag> bags);
  void add(FeatureBag bag);
  std::shared_ptr<const FeatureBag> get(const std::string& slide_id) const override;
  bool contains(const std::string& slide_id) const override;

 private:
  std::map<std::string, std::shared_ptr<const FeatureBag>> bags_;
};

// <dir>/<slide_id>.milf, read on demand.
class DirectoryBagStore : public BagStore {
 public:
  DirectoryBagStore(std::filesystem::path dir, std::optional<int> expected_dim);
  std::shared_ptr<const FeatureBag> get(const std::string& slide_id) const override;
  bool contains(const std::string& slide_id) const override;
  std::filesystem::path path_of(const std::string& slide_id) const;

 private:
  std::filesystem::path dir_;
  std::optional<int> expected_dim_;
};

struct FoldReport {
  int fold = 0;
  mil::Variant variant = mil::Variant::kAttention;
  std::string embedding_source;
  Magnification mag = Magnification::kUnknown;
  std::vector<double> train_loss;  // per epoch, mean total loss
  std::vector<double> val_loss;    // per epoch, mean slide cross-entropy
  double test_auc = 0.0;
  double test_accuracy = 0.0;
  std::vector<std::vector<int>> confusion;
  int stopping_epoch = 0;
  int best_epoch = 0;
  double wall_clock_seconds = 0.0;  // the only non-deterministic field
  std::vector<std::string> test_slides;
  std::vector<int> test_labels;
  std::vector<std::vector<double>> test_probs;

  // JSON, optionally without the wall-clock field.
  std::string to_json(bool include_wall_clock = true) const;
  static FoldReport from_json(const std::string& text);
};

struct FoldResult {
  FoldReport report;
  mil::MilModelParams params;  // best-validation checkpoint
  std::uint64_t seed = 0;      // seed the parameters were initialized from
};

// Optional per-epoch hook (epoch, train loss, val loss).
using EpochCallback = std::function<void(int, double, double)>;

// Throws DataError listing every split slide missing from the store.
FoldResult train_fold(const SplitSpec& split, const TrainConfig& config, const BagStore& store,
                      const EpochCallback& on_epoch = {});

// Runs folds on up to `jobs` threads; results are returned in fold order.
std::vector<FoldResult> cross_validate(const std::vector<SplitSpec>& splits,
                                       const TrainConfig& config, const BagStore& store,
                                       int jobs = 1);

struct AggregateRow {
  std::string method;
  std::string embedding_source;
  std::string magnification;
  metrics::Summary auc;
  metrics::Summary accuracy;
};

// Reports must share variant, embedding source and magnification.
AggregateRow aggregate(const std::vector<FoldReport>& reports);
std::string aggregate_csv(const std::vector<AggregateRow>& rows);
// Human-readable "mean (+- sd)" table.
std::string aggregate_table(const std::vector<AggregateRow>& rows);

// Evaluation helpers shared by the trainer and the CLI.
struct Evaluation {
  std::vector<int> labels;
  std::vector<int> predicted;
  ad::Matrix probs;  // N x n_classes
  double mean_loss = 0.0;
};
Evaluation evaluate(const mil::MilModelParams& params,
                    const std::vector<std::pair<std::string, int>>& slides, const BagStore& store);

}  // namespace milforge::train
