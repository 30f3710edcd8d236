#include "milforge/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "milforge/error.hpp"

namespace milforge::mil {

namespace {

using namespace milforge::ad;

const char* const kW1 = "compress.W";
const char* const kB1 = "compress.b";
const char* const kV = "attn.V";
const char* const kBV = "attn.bV";
const char* const kU = "attn.U";
const char* const kBU = "attn.bU";
const char* const kWAttn = "attn.w";
const char* const kWSlide = "slide.W";
const char* const kBSlide = "slide.b";
const char* const kWInst = "instance.W";  // max-pool instance classifier
const char* const kBInst = "instance.b";

std::string cluster_w(int c) { return "cluster.W." + std::to_string(c); }
std::string cluster_b(int c) { return "cluster.b." + std::to_string(c); }

bool is_bias(const std::string& name) { return name.find(".b") != std::string::npos; }

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kMaxPool:
      return "maxpool";
    case Variant::kAttention:
      return "attn";
    case Variant::kGated:
      return "gated";
    case Variant::kAttentionCluster:
      return "attn-cluster";
    case Variant::kGatedCluster:
      return "gated-cluster";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : all_variants()) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected maxpool|attn|gated|attn-cluster|gated-cluster)");
}

std::string_view variant_label(Variant v) {
  switch (v) {
    case Variant::kMaxPool:
      return "Max-pooling MIL";
    case Variant::kAttention:
      return "Attention";
    case Variant::kGated:
      return "Gated-Attention";
    case Variant::kAttentionCluster:
      return "Attention with clustering";
    case Variant::kGatedCluster:
      return "Gated-attention with clustering";
  }
  return "?";
}

bool is_gated(Variant v) { return v == Variant::kGated || v == Variant::kGatedCluster; }
bool has_attention(Variant v) { return v != Variant::kMaxPool; }
bool has_clustering(Variant v) {
  return v == Variant::kAttentionCluster || v == Variant::kGatedCluster;
}

const std::vector<Variant>& all_variants() {
  // Report row order.
  static const std::vector<Variant> kAll = {Variant::kGated, Variant::kAttention,
                                            Variant::kGatedCluster, Variant::kAttentionCluster,
                                            Variant::kMaxPool};
  return kAll;
}

std::vector<std::pair<std::string, std::pair<int, int>>> tensor_layout(Variant variant,
                                                                       const ModelDims& d) {
  if (d.d_in < 1 || d.n_classes < 1 || d.hidden < 1 || d.attn_width < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  std::vector<std::pair<std::string, std::pair<int, int>>> out;
  if (d.has_compressor()) {
    out.push_back({kW1, {d.d_in, d.hidden}});
    out.push_back({kB1, {1, d.hidden}});
  }
  if (!has_attention(variant)) {
    out.push_back({kWInst, {d.hidden, d.n_classes}});
    out.push_back({kBInst, {1, d.n_classes}});
    return out;
  }
  out.push_back({kV, {d.hidden, d.attn_width}});
  out.push_back({kBV, {1, d.attn_width}});
  if (is_gated(variant)) {
    out.push_back({kU, {d.hidden, d.attn_width}});
    out.push_back({kBU, {1, d.attn_width}});
  }
  out.push_back({kWAttn, {d.attn_width, d.n_classes}});
  out.push_back({kWSlide, {d.n_classes, d.hidden}});
  out.push_back({kBSlide, {1, d.n_classes}});
  if (has_clustering(variant)) {
    for (int c = 0; c < d.n_classes; ++c) {
      out.push_back({cluster_w(c), {d.hidden, 2}});
      out.push_back({cluster_b(c), {1, 2}});
    }
  }
  return out;
}

std::size_t parameter_count(Variant variant, const ModelDims& dims) {
  std::size_t n = 0;
  for (const auto& [name, shape] : tensor_layout(variant, dims)) {
    n += static_cast<std::size_t>(shape.first) * static_cast<std::size_t>(shape.second);
  }
  return n;
}

MilModelParams MilModelParams::zeros(Variant variant, const ModelDims& dims) {
  MilModelParams p;
  p.variant_ = variant;
  p.dims_ = dims;
  for (const auto& [name, shape] : tensor_layout(variant, dims)) {
    p.tensors_.push_back({name, Matrix::Zero(shape.first, shape.second)});
  }
  return p;
}

MilModelParams MilModelParams::init(Variant variant, const ModelDims& dims, std::uint64_t seed) {
  MilModelParams p = zeros(variant, dims);
  Rng rng = make_rng(seed, "init");
  for (auto& t : p.tensors_) {
    if (is_bias(t.name)) continue;
    // The slide classifier is stored class-major (n_classes x hidden); its
    // fan is that of each per-class hidden -> 1 map.
    double fan_in = static_cast<double>(t.value.rows());
    double fan_out = static_cast<double>(t.value.cols());
    if (t.name == kWSlide) {
      fan_in = static_cast<double>(t.value.cols());
      fan_out = 1.0;
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      t.value.data()[i] = (2.0 * uniform01(rng) - 1.0) * limit;
    }
  }
  return p;
}

Matrix& MilModelParams::at(std::string_view name) {
  for (auto& t : tensors_) {
    if (t.name == name) return t.value;
  }
  throw ContractError("model has no tensor '" + std::string(name) + "'");
}

const Matrix& MilModelParams::at(std::string_view name) const {
  return const_cast<MilModelParams*>(this)->at(name);
}

bool MilModelParams::contains(std::string_view name) const {
  return std::any_of(tensors_.begin(), tensors_.end(),
                     [&](const NamedTensor& t) { return t.name == name; });
}

std::size_t MilModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

std::vector<Matrix*> MilModelParams::pointers() {
  std::vector<Matrix*> out;
  out.reserve(tensors_.size());
  for (auto& t : tensors_) out.push_back(&t.value);
  return out;
}

bool MilModelParams::operator==(const MilModelParams& other) const {
  if (variant_ != other.variant_ || !(dims_ == other.dims_) ||
      tensors_.size() != other.tensors_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const auto& a = tensors_[i];
    const auto& b = other.tensors_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
      return false;
    if (std::memcmp(a.value.data(), b.value.data(),
                    static_cast<std::size_t>(a.value.size()) * sizeof(double)) != 0)
      return false;
  }
  return true;
}

ForwardGraph build_forward(Tape& tape, const Matrix& features, const MilModelParams& params,
                           const ForwardOptions& opts) {
  const ModelDims& d = params.dims();
  if (features.rows() == 0) throw EmptyBagError("bag has no instances");
  if (features.cols() != d.d_in) {
    throw ShapeError("bag dimension " + std::to_string(features.cols()) +
                     " does not match model input dimension " + std::to_string(d.d_in));
  }
  if (opts.training && opts.dropout > 0.0 && opts.rng == nullptr) {
    throw ContractError("training forward pass with dropout requires a generator");
  }
  Rng dummy(0);
  Rng& rng = opts.rng ? *opts.rng : dummy;

  ForwardGraph g;
  for (const auto& t : params.tensors()) g.params.push_back(tape.parameter(t.value));
  auto param = [&](std::string_view name) {
    const auto& ts = params.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (ts[i].name == name) return g.params[i];
    }
    throw ContractError("model has no tensor '" + std::string(name) + "'");
  };

  g.features = tape.constant(features);
  Var h = g.features;
  if (d.has_compressor()) {
    h = relu(tape, add_row_bias(tape, matmul(tape, h, param(kW1)), param(kB1)));
    h = dropout(tape, h, opts.dropout, opts.training, rng);
  }
  g.h = h;

  if (!has_attention(params.variant())) {
    g.instance_logits = add_row_bias(tape, matmul(tape, h, param(kWInst)), param(kBInst));
    const Matrix probs = softmax_rows_value(tape.value(g.instance_logits));
    Eigen::Index row = 0, col = 0;
    probs.maxCoeff(&row, &col);  // first maximum in row-major order
    g.top_instance = row;
    g.logits = gather_rows(tape, g.instance_logits, {row});
    return g;
  }

  Var a = tanh_elem(tape, add_row_bias(tape, matmul(tape, h, param(kV)), param(kBV)));
  a = dropout(tape, a, opts.dropout, opts.training, rng);
  if (is_gated(params.variant())) {
    Var gate = sigm_elem(tape, add_row_bias(tape, matmul(tape, h, param(kU)), param(kBU)));
    gate = dropout(tape, gate, opts.dropout, opts.training, rng);
    a = elem_mul(tape, a, gate);
  }
  Var scores = matmul(tape, a, param(kWAttn));                        // K x M
  g.attention = softmax_rows(tape, transpose(tape, scores));          // M x K
  Var z = matmul(tape, g.attention, h);                               // M x hidden
  Var per_class = row_sums(tape, elem_mul(tape, z, param(kWSlide)));  // M x 1
  g.logits = add(tape, transpose(tape, per_class), param(kBSlide));   // 1 x M
  return g;
}

AttentionOutput forward_attention(const FeatureBag& bag, const MilModelParams& params,
                                  const ForwardOptions& opts) {
  if (!has_attention(params.variant())) {
    throw ContractError("forward_attention called on a max-pooling model");
  }
  Tape tape;
  ForwardGraph g = build_forward(tape, bag.features, params, opts);
  AttentionOutput out;
  out.attention = tape.value(g.attention);
  out.bag_repr = out.attention * tape.value(g.h);
  out.probs = softmax_rows_value(tape.value(g.logits)).row(0);
  Eigen::Index c = 0;
  out.probs.maxCoeff(&c);
  out.predicted = static_cast<int>(c);
  return out;
}

MaxPoolOutput forward_maxpool(const FeatureBag& bag, const MilModelParams& params,
                              const ForwardOptions& opts) {
  if (has_attention(params.variant())) {
    throw ContractError("forward_maxpool called on an attention model");
  }
  Tape tape;
  ForwardGraph g = build_forward(tape, bag.features, params, opts);
  MaxPoolOutput out;
  out.instance_probs = softmax_rows_value(tape.value(g.instance_logits));
  out.top_instance = g.top_instance;
  out.probs = out.instance_probs.row(g.top_instance);
  Eigen::Index c = 0;
  out.probs.maxCoeff(&c);
  out.predicted = static_cast<int>(c);
  return out;
}

Eigen::RowVectorXd predict_proba(const FeatureBag& bag, const MilModelParams& params) {
  Tape tape;
  ForwardGraph g = build_forward(tape, bag.features, params, {});
  return softmax_rows_value(tape.value(g.logits)).row(0);
}

InstancePseudoBatch select_pseudo_batch(const Eigen::Ref<const Eigen::RowVectorXd>& attention,
                                        int b) {
  const Eigen::Index k = attention.size();
  InstancePseudoBatch batch;
  batch.clamped_b = static_cast<int>(std::min<Eigen::Index>(std::max(b, 0), k / 2));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return attention(i) > attention(j); });
  batch.top.assign(order.begin(), order.begin() + batch.clamped_b);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return attention(i) < attention(j); });
  batch.bottom.assign(order.begin(), order.begin() + batch.clamped_b);
  return batch;
}

ClusterTerm clustering_loss(Tape& tape, const ForwardGraph& graph, const MilModelParams& params,
                            int true_class, int b) {
  if (!has_clustering(params.variant())) {
    throw ContractError("clustering_loss requires a clustering variant");
  }
  ClusterTerm term;
  const Matrix& attention = tape.value(graph.attention);
  if (true_class < 0 || true_class >= attention.rows()) {
    throw ContractError("true class " + std::to_string(true_class) + " out of range");
  }
  if (attention.cols() < 2) {
    term.skipped = true;
    return term;
  }
  term.batch = select_pseudo_batch(attention.row(true_class), b);
  std::vector<Eigen::Index> rows = term.batch.top;
  rows.insert(rows.end(), term.batch.bottom.begin(), term.batch.bottom.end());
  const auto n = static_cast<Eigen::Index>(rows.size());

  auto param = [&](const std::string& name) {
    const auto& ts = params.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (ts[i].name == name) return graph.params[i];
    }
    throw ContractError("model has no tensor '" + name + "'");
  };
  Var hs = gather_rows(tape, graph.h, std::move(rows));
  Var logits = add_row_bias(tape, matmul(tape, hs, param(cluster_w(true_class))),
                            param(cluster_b(true_class)));
  term.batch.logits = tape.value(logits);

  Matrix diff_proj(2, 1);
  diff_proj << -1.0, 1.0;
  Var diff = matmul(tape, logits, tape.constant(diff_proj));  // logit1 - logit0
  Matrix signs(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) signs(i, 0) = i < term.batch.clamped_b ? 1.0 : -1.0;
  Var margins = elem_mul(tape, diff, tape.constant(signs));
  term.loss = mean(tape, smooth_hinge(tape, margins, 1.0, 1.0));
  return term;
}

LossResult total_loss(Tape& tape, const FeatureBag& bag, const MilModelParams& params,
                      const LossConfig& loss_cfg, const ForwardOptions& opts) {
  if (!bag.labeled()) throw ContractError("total_loss: bag '" + bag.slide_id + "' is unlabeled");
  if (bag.label >= params.dims().n_classes) {
    throw ContractError("total_loss: label " + std::to_string(bag.label) + " out of range");
  }
  LossResult r;
  r.graph = build_forward(tape, bag.features, params, opts);
  Var ce = cross_entropy(tape, r.graph.logits, bag.label);
  r.cross_entropy = tape.value(ce)(0, 0);
  r.total = ce;
  if (!has_clustering(params.variant()) || loss_cfg.c2 == 0.0) return r;

  ClusterTerm term = clustering_loss(tape, r.graph, params, bag.label, loss_cfg.b);
  r.pseudo_batch = term.batch;
  if (term.skipped) {
    r.cluster_skipped = true;
    r.total = scale(tape, ce, loss_cfg.c1);
    return r;
  }
  r.cluster = tape.value(term.loss)(0, 0);
  r.total = add(tape, scale(tape, ce, loss_cfg.c1), scale(tape, term.loss, loss_cfg.c2));
  return r;
}

LossAndGrad loss_and_grad(const FeatureBag& bag, const MilModelParams& params,
                          const LossConfig& loss_cfg, const ForwardOptions& opts) {
  Tape tape;
  LossResult r = total_loss(tape, bag, params, loss_cfg, opts);
  const auto grads = tape.backward(r.total);
  LossAndGrad out;
  out.loss = tape.value(r.total)(0, 0);
  out.cross_entropy = r.cross_entropy;
  out.cluster = r.cluster;
  out.pseudo_batch = std::move(r.pseudo_batch);
  out.grads.reserve(r.graph.params.size());
  for (Var p : r.graph.params) out.grads.push_back(grads[p]);
  return out;
}

}  // namespace milforge::mil
