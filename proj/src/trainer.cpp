#include "milforge/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <future>
#include <sstream>

#include "json.hpp"
#include "milforge/error.hpp"
#include "milforge/optim.hpp"

namespace milforge::train {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (weight_decay < 0) throw ConfigError("weight decay must be non-negative");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must lie in [0, 1)");
  if (min_epochs < 1) throw ConfigError("min epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs < min_epochs) throw ConfigError("max epochs must be >= min epochs");
  if (b < 1) throw ConfigError("B must be >= 1");
  if (c1 < 0 || c2 < 0) throw ConfigError("loss weights must be non-negative");
  if (classes.size() < 2) throw ConfigError("at least two classes are required");
  if (hidden < 1 || attn_width < 1) throw ConfigError("hidden widths must be positive");
}

std::size_t SplitSpec::train_size() const {
  std::size_t n = 0;
  for (const auto& c : train) n += c.size();
  return n;
}
std::size_t SplitSpec::val_size() const {
  std::size_t n = 0;
  for (const auto& c : val) n += c.size();
  return n;
}
std::size_t SplitSpec::test_size() const {
  std::size_t n = 0;
  for (const auto& c : test) n += c.size();
  return n;
}

namespace {

// Largest-remainder apportionment of round(total * 0.1) across classes.
std::vector<std::size_t> apportion(const std::vector<std::size_t>& counts) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  const auto target = static_cast<std::size_t>(std::floor(static_cast<double>(total) / 10.0 + 0.5));
  std::vector<std::size_t> out(counts.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double ideal = static_cast<double>(counts[c]) / 10.0;
    out[c] = static_cast<std::size_t>(std::floor(ideal));
    assigned += out[c];
    remainders.push_back({ideal - std::floor(ideal), c});
  }
  // Larger remainder first, lower class id on ties.
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < target && i < remainders.size(); ++i, ++assigned) {
    ++out[remainders[i].second];
  }
  return out;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(v[i - 1], v[std::min(j, i - 1)]);
  }
}

}  // namespace

std::vector<SplitSpec> make_splits(const std::map<std::string, int>& labels, int n_classes,
                                   std::uint64_t seed, int n_folds,
                                   std::vector<std::string>* warnings) {
  if (n_folds < 1) throw ConfigError("fold count must be >= 1");
  std::vector<std::vector<std::string>> by_class(static_cast<std::size_t>(n_classes));
  for (const auto& [id, label] : labels) {  // std::map: sorted ids
    if (label < 0 || label >= n_classes) {
      throw ConfigError("slide '" + id + "' has label " + std::to_string(label) + " outside [0, " +
                        std::to_string(n_classes) + ")");
    }
    by_class[static_cast<std::size_t>(label)].push_back(id);
  }
  std::vector<std::size_t> counts;
  for (int c = 0; c < n_classes; ++c) {
    const auto n = by_class[static_cast<std::size_t>(c)].size();
    if (n < 3) {
      throw StratificationError("class " + std::to_string(c) + " has " + std::to_string(n) +
                                " slides; stratified splitting needs at least 3");
    }
    if (warnings && n < static_cast<std::size_t>(n_folds)) {
      warnings->push_back("class " + std::to_string(c) + " has only " + std::to_string(n) +
                          " slides for " + std::to_string(n_folds) + " folds");
    }
    counts.push_back(n);
  }
  const auto n_val = apportion(counts);
  const auto n_test = n_val;

  std::vector<SplitSpec> out;
  for (int fold = 0; fold < n_folds; ++fold) {
    SplitSpec s;
    s.seed = seed;
    s.fold = fold;
    s.train.resize(static_cast<std::size_t>(n_classes));
    s.val.resize(static_cast<std::size_t>(n_classes));
    s.test.resize(static_cast<std::size_t>(n_classes));
    Rng rng = make_rng(seed, "split", static_cast<std::uint64_t>(fold));
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      auto ids = by_class[c];
      shuffle(ids, rng);
      auto it = ids.begin();
      s.test[c].assign(it, it + static_cast<std::ptrdiff_t>(n_test[c]));
      it += static_cast<std::ptrdiff_t>(n_test[c]);
      s.val[c].assign(it, it + static_cast<std::ptrdiff_t>(n_val[c]));
      it += static_cast<std::ptrdiff_t>(n_val[c]);
      s.train[c].assign(it, ids.end());
      std::sort(s.train[c].begin(), s.train[c].end());
      std::sort(s.val[c].begin(), s.val[c].end());
      std::sort(s.test[c].begin(), s.test[c].end());
    }
    out.push_back(std::move(s));
  }
  return out;
}

BagSampler::BagSampler(const SplitSpec& split) : BagSampler(split.train) {}

BagSampler::BagSampler(std::vector<std::vector<std::string>> per_class) {
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (per_class[c].empty()) continue;
    total_ += per_class[c].size();
    class_ids_.push_back(static_cast<int>(c));
    per_class_.push_back(std::move(per_class[c]));
  }
  if (total_ == 0) throw ContractError("bag sampler needs a non-empty training set");
}

std::pair<std::string, int> BagSampler::sample(Rng& rng) const {
  // Uniform class, then uniform slide within it: P(s) = 1 / (n_classes * count(class(s))).
  const auto nc = per_class_.size();
  const auto c =
      std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(nc)), nc - 1);
  const auto& ids = per_class_[c];
  const auto i = std::min(
      static_cast<std::size_t>(uniform01(rng) * static_cast<double>(ids.size())), ids.size() - 1);
  return {ids[i], class_ids_[c]};
}

EarlyStopping::EarlyStopping(int min_epochs, int patience)
    : min_epochs_(min_epochs), patience_(patience) {
  if (min_epochs < 1 || patience < 1)
    throw ConfigError("early stopping needs min epochs and patience >= 1");
}

bool EarlyStopping::update(int epoch, double val_loss) {
  if (!has_best_ || val_loss < best_loss_) {
    has_best_ = true;
    best_loss_ = val_loss;
    best_epoch_ = epoch;
    counter_ = 0;
    improved_last_ = true;
  } else {
    ++counter_;
    improved_last_ = false;
  }
  return epoch >= min_epochs_ && counter_ >= patience_;
}

InMemoryBagStore::InMemoryBagStore(std::vector<FeatureBag> bags) {
  for (auto& b : bags) add(std::move(b));
}

void InMemoryBagStore::add(FeatureBag bag) {
  auto id = bag.slide_id;
  bags_[id] = std::make_shared<const FeatureBag>(std::move(bag));
}

std::shared_ptr<const FeatureBag> InMemoryBagStore::get(const std::string& slide_id) const {
  auto it = bags_.find(slide_id);
  if (it == bags_.end()) throw DataError("no embeddings for slide '" + slide_id + "'");
  return it->second;
}

bool InMemoryBagStore::contains(const std::string& slide_id) const {
  return bags_.count(slide_id) != 0;
}

DirectoryBagStore::DirectoryBagStore(std::filesystem::path dir, std::optional<int> expected_dim)
    : dir_(std::move(dir)), expected_dim_(expected_dim) {}

std::filesystem::path DirectoryBagStore::path_of(const std::string& slide_id) const {
  return dir_ / (slide_id + ".milf");
}

std::shared_ptr<const FeatureBag> DirectoryBagStore::get(const std::string& slide_id) const {
  return std::make_shared<const FeatureBag>(read_embeddings(path_of(slide_id), expected_dim_));
}

bool DirectoryBagStore::contains(const std::string& slide_id) const {
  return std::filesystem::exists(path_of(slide_id));
}

namespace {

void require_present(const SplitSpec& split, const BagStore& store) {
  std::vector<std::string> missing;
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    for (const auto& cls : *part) {
      for (const auto& id : cls) {
        if (!store.contains(id)) missing.push_back(id);
      }
    }
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    std::string msg = "missing embeddings for " + std::to_string(missing.size()) + " slide(s):";
    for (const auto& id : missing) msg += " " + id;
    throw DataError(msg);
  }
}

std::shared_ptr<const FeatureBag> labeled(std::shared_ptr<const FeatureBag> bag, int label) {
  if (bag->label == label) return bag;
  auto copy = std::make_shared<FeatureBag>(*bag);
  copy->label = label;
  return copy;
}

std::vector<std::pair<std::string, int>> flatten(
    const std::vector<std::vector<std::string>>& part) {
  std::vector<std::pair<std::string, int>> out;
  for (std::size_t c = 0; c < part.size(); ++c) {
    for (const auto& id : part[c]) out.push_back({id, static_cast<int>(c)});
  }
  return out;
}

}  // namespace

Evaluation evaluate(const mil::MilModelParams& params,
                    const std::vector<std::pair<std::string, int>>& slides, const BagStore& store) {
  Evaluation ev;
  ev.probs.resize(static_cast<Eigen::Index>(slides.size()), params.dims().n_classes);
  double loss = 0.0;
  for (std::size_t i = 0; i < slides.size(); ++i) {
    const auto bag = store.get(slides[i].first);
    const Eigen::RowVectorXd p = mil::predict_proba(*bag, params);
    ev.probs.row(static_cast<Eigen::Index>(i)) = p;
    Eigen::Index arg = 0;
    p.maxCoeff(&arg);
    ev.predicted.push_back(static_cast<int>(arg));
    ev.labels.push_back(slides[i].second);
    if (slides[i].second >= 0) {
      loss += -std::log(std::max(p(slides[i].second), std::numeric_limits<double>::min()));
    }
  }
  if (!slides.empty()) ev.mean_loss = loss / static_cast<double>(slides.size());
  return ev;
}

FoldResult train_fold(const SplitSpec& split, const TrainConfig& config, const BagStore& store,
                      const EpochCallback& on_epoch) {
  config.validate();
  require_present(split, store);
  if (split.val_size() == 0) throw DataError("validation partition is empty");
  if (split.test_size() == 0) throw DataError("test partition is empty");
  const auto start = std::chrono::steady_clock::now();

  const auto first = store.get(split.train_size() ? flatten(split.train).front().first
                                                  : flatten(split.val).front().first);
  mil::ModelDims dims{static_cast<int>(first->dim()), config.n_classes(), config.hidden,
                      config.attn_width};
  const std::uint64_t fold_seed =
      derive_seed(config.seed, "fold", static_cast<std::uint64_t>(split.fold));
  FoldResult result;
  result.seed = fold_seed;
  mil::MilModelParams params = mil::MilModelParams::init(config.variant, dims, fold_seed);
  mil::MilModelParams best = params;

  Rng dropout_rng = make_rng(fold_seed, "dropout");
  Rng sampling_rng = make_rng(fold_seed, "sampling");
  ad::Adam<double> adam({config.lr, config.weight_decay});
  const BagSampler sampler(split);
  const mil::LossConfig loss_cfg{config.c1, config.c2, config.b};
  const mil::ForwardOptions train_opts{true, config.dropout, &dropout_rng};
  const auto val_slides = flatten(split.val);
  EarlyStopping stopper(config.min_epochs, config.patience);

  FoldReport& rep = result.report;
  rep.fold = split.fold;
  rep.variant = config.variant;
  rep.embedding_source = config.embedding_source;
  rep.mag = config.mag;
  const auto ptrs = params.pointers();
  int epoch = 1;
  for (; epoch <= config.max_epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < sampler.size(); ++step) {
      const auto [id, cls] = sampler.sample(sampling_rng);
      const auto bag = labeled(store.get(id), cls);
      if (bag->dim() != dims.d_in) {
        throw DimensionError("slide '" + id + "' has dimension " + std::to_string(bag->dim()) +
                             ", expected " + std::to_string(dims.d_in));
      }
      const auto lg = mil::loss_and_grad(*bag, params, loss_cfg, train_opts);
      epoch_loss += lg.loss;
      std::vector<const ad::Matrix*> grads;
      grads.reserve(lg.grads.size());
      for (const auto& g : lg.grads) grads.push_back(&g);
      adam.step(ptrs, grads);
    }
    const double train_loss = epoch_loss / static_cast<double>(sampler.size());
    const double val_loss = evaluate(params, val_slides, store).mean_loss;
    rep.train_loss.push_back(train_loss);
    rep.val_loss.push_back(val_loss);
    if (on_epoch) on_epoch(epoch, train_loss, val_loss);
    const bool stop = stopper.update(epoch, val_loss);
    if (stopper.improved_last()) best = params;
    if (stop) break;
  }
  rep.stopping_epoch = std::min(epoch, config.max_epochs);
  rep.best_epoch = stopper.best_epoch();

  const auto test_slides = flatten(split.test);
  const Evaluation ev = evaluate(best, test_slides, store);
  try {
    rep.test_auc = metrics::macro_auc(ev.probs, ev.labels);
  } catch (const MetricError& e) {
    throw MetricError("fold " + std::to_string(split.fold) + " test set: " + e.what());
  }
  rep.test_accuracy = metrics::accuracy(ev.predicted, ev.labels);
  rep.confusion = metrics::confusion_matrix(ev.predicted, ev.labels, config.n_classes());
  for (std::size_t i = 0; i < test_slides.size(); ++i) {
    rep.test_slides.push_back(test_slides[i].first);
    rep.test_labels.push_back(test_slides[i].second);
    const auto row = ev.probs.row(static_cast<Eigen::Index>(i));
    rep.test_probs.emplace_back(row.data(), row.data() + row.size());
  }
  rep.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.params = std::move(best);
  return result;
}

std::vector<FoldResult> cross_validate(const std::vector<SplitSpec>& splits,
                                       const TrainConfig& config, const BagStore& store, int jobs) {
  std::vector<FoldResult> results(splits.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < splits.size(); ++i)
      results[i] = train_fold(splits[i], config, store);
    return results;
  }
  // Folds are independent; each worker owns its model, generators and report.
  for (std::size_t begin = 0; begin < splits.size(); begin += static_cast<std::size_t>(jobs)) {
    const std::size_t end = std::min(splits.size(), begin + static_cast<std::size_t>(jobs));
    std::vector<std::future<FoldResult>> running;
    for (std::size_t i = begin; i < end; ++i) {
      running.push_back(
          std::async(std::launch::async, [&, i] { return train_fold(splits[i], config, store); }));
    }
    for (std::size_t i = begin; i < end; ++i) results[i] = running[i - begin].get();
  }
  return results;
}

std::string FoldReport::to_json(bool include_wall_clock) const {
  json j;
  j["fold"] = fold;
  j["variant"] = std::string(mil::variant_name(variant));
  j["method"] = std::string(mil::variant_label(variant));
  j["embedding_source"] = embedding_source;
  j["magnification"] = std::string(magnification_name(mag));
  j["train_loss"] = train_loss;
  j["val_loss"] = val_loss;
  j["test_auc"] = test_auc;
  j["test_accuracy"] = test_accuracy;
  j["confusion"] = confusion;
  j["stopping_epoch"] = stopping_epoch;
  j["best_epoch"] = best_epoch;
  if (include_wall_clock) j["wall_clock_seconds"] = wall_clock_seconds;
  j["test_slides"] = test_slides;
  j["test_labels"] = test_labels;
  j["test_probs"] = test_probs;
  return j.dump(2) + "\n";
}

FoldReport FoldReport::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    FoldReport r;
    r.fold = j.at("fold").get<int>();
    r.variant = mil::parse_variant(j.at("variant").get<std::string>());
    r.embedding_source = j.value("embedding_source", "");
    const auto mag = j.value("magnification", "unknown");
    r.mag = mag == "unknown" ? Magnification::kUnknown : parse_magnification(mag);
    r.train_loss = j.at("train_loss").get<std::vector<double>>();
    r.val_loss = j.at("val_loss").get<std::vector<double>>();
    r.test_auc = j.at("test_auc").get<double>();
    r.test_accuracy = j.at("test_accuracy").get<double>();
    r.confusion = j.at("confusion").get<std::vector<std::vector<int>>>();
    r.stopping_epoch = j.at("stopping_epoch").get<int>();
    r.best_epoch = j.at("best_epoch").get<int>();
    r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    r.test_slides = j.value("test_slides", std::vector<std::string>{});
    r.test_labels = j.value("test_labels", std::vector<int>{});
    r.test_probs = j.value("test_probs", std::vector<std::vector<double>>{});
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("fold report: ") + e.what());
  }
}

AggregateRow aggregate(const std::vector<FoldReport>& reports) {
  if (reports.size() < 2) {
    throw AggregationError("aggregation needs at least 2 reports, got " +
                           std::to_string(reports.size()));
  }
  AggregateRow row;
  row.method = std::string(mil::variant_label(reports.front().variant));
  row.embedding_source = reports.front().embedding_source;
  row.magnification = std::string(magnification_name(reports.front().mag));
  std::vector<double> aucs, accs;
  for (const auto& r : reports) {
    if (r.variant != reports.front().variant || r.embedding_source != row.embedding_source ||
        r.mag != reports.front().mag) {
      throw AggregationError("reports from different configurations cannot be aggregated");
    }
    aucs.push_back(r.test_auc);
    accs.push_back(r.test_accuracy);
  }
  row.auc = metrics::summarize(aucs);
  row.accuracy = metrics::summarize(accs);
  return row;
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::string out =
      "method,embedding_source,magnification,n_folds,auc_mean,auc_sd,accuracy_mean,accuracy_sd\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%d,%.6f,%.6f,%.6f,%.6f\n", r.method.c_str(),
                  r.embedding_source.c_str(), r.magnification.c_str(), r.auc.n, r.auc.mean,
                  r.auc.sd, r.accuracy.mean, r.accuracy.sd);
    out += buf;
  }
  return out;
}

std::string aggregate_table(const std::vector<AggregateRow>& rows) {
  std::ostringstream os;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-34s %-20s %-5s %-16s %-16s\n", "Method", "Embeddings", "Mag",
                "AUC", "Accuracy");
  os << buf;
  for (const auto& r : rows) {
    char auc[64], acc[64];
    std::snprintf(auc, sizeof auc, "%.2f (+- %.2f)", r.auc.mean, r.auc.sd);
    std::snprintf(acc, sizeof acc, "%.2f (+- %.2f)", r.accuracy.mean, r.accuracy.sd);
    std::snprintf(buf, sizeof buf, "%-34s %-20s %-5s %-16s %-16s\n", r.method.c_str(),
                  r.embedding_source.c_str(), r.magnification.c_str(), auc, acc);
    os << buf;
  }
  return os.str();
}

}  // namespace milforge::train
