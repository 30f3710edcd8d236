#pragma once

// Attention-based MIL heads: max-pooling, attention, gated attention, and the
// instance-clustering variants of the two attention heads.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "milforge/autodiff.hpp"
#include "milforge/features.hpp"
#include "milforge/random.hpp"

namespace milforge::mil {

using ad::Matrix;
using ad::Var;
using Tape = ad::Tape<double>;

enum class Variant : std::uint8_t {
  kMaxPool = 0,
  kAttention = 1,
  kGated = 2,
  kAttentionCluster = 3,
  kGatedCluster = 4,
};

// CLI spelling: maxpool | attn | gated | attn-cluster | gated-cluster.
std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
// Row label used in aggregate reports ("Gated-Attention", "Max-pooling MIL", ...).
std::string_view variant_label(Variant v);
bool is_gated(Variant v);
bool has_attention(Variant v);
bool has_clustering(Variant v);
const std::vector<Variant>& all_variants();

struct ModelDims {
  int d_in = 1024;
  int n_classes = 2;
  int hidden = 512;      // width of h_k
  int attn_width = 256;  // width of the tanh / sigmoid attention branches

  bool has_compressor() const { return d_in != hidden; }
  bool operator==(const ModelDims&) const = default;
};

struct NamedTensor {
  std::string name;
  Matrix value;
};

// All trainable tensors of one head. Tensor order is fixed by (variant, dims)
// and is the order used by the optimizer and checkpoints.
class MilModelParams {
 public:
  MilModelParams() = default;
  // Glorot-uniform weights, zero biases. Instance classifiers are drawn last so
  // the shared tensors of a clustering variant match its plain counterpart.
  static MilModelParams init(Variant variant, const ModelDims& dims, std::uint64_t seed);
  // Same layout, every tensor zero.
  static MilModelParams zeros(Variant variant, const ModelDims& dims);

  Variant variant() const { return variant_; }
  const ModelDims& dims() const { return dims_; }
  std::vector<NamedTensor>& tensors() { return tensors_; }
  const std::vector<NamedTensor>& tensors() const { return tensors_; }

  Matrix& at(std::string_view name);
  const Matrix& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t parameter_count() const;

  std::vector<Matrix*> pointers();

  bool operator==(const MilModelParams& other) const;

 private:
  Variant variant_ = Variant::kAttention;
  ModelDims dims_;
  std::vector<NamedTensor> tensors_;
};

// Expected tensor names and shapes for a (variant, dims) pair.
std::vector<std::pair<std::string, std::pair<int, int>>> tensor_layout(Variant variant,
                                                                       const ModelDims& dims);
std::size_t parameter_count(Variant variant, const ModelDims& dims);

struct ForwardOptions {
  bool training = false;
  double dropout = 0.25;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

struct AttentionOutput {
  Matrix attention;          // n_classes x K, each row sums to 1
  Matrix bag_repr;           // n_classes x hidden
  Eigen::RowVectorXd probs;  // n_classes
  int predicted = 0;
};

struct MaxPoolOutput {
  Eigen::RowVectorXd probs;
  int predicted = 0;
  Eigen::Index top_instance = 0;
  Matrix instance_probs;  // K x n_classes
};

// Tape-level view of one forward pass. `attention` is invalid for max-pool.
struct ForwardGraph {
  std::vector<Var> params;  // parallel to MilModelParams::tensors()
  Var features;
  Var h;       // K x hidden instance embeddings (after compression / dropout)
  Var logits;  // 1 x n_classes slide logits
  Var attention{};
  Var instance_logits{};  // max-pool only: K x n_classes
  Eigen::Index top_instance = 0;
};

ForwardGraph build_forward(Tape& tape, const Matrix& features, const MilModelParams& params,
                           const ForwardOptions& opts);

AttentionOutput forward_attention(const FeatureBag& bag, const MilModelParams& params,
                                  const ForwardOptions& opts = {});
MaxPoolOutput forward_maxpool(const FeatureBag& bag, const MilModelParams& params,
                              const ForwardOptions& opts = {});

struct InstancePseudoBatch {
  std::vector<Eigen::Index> top;     // highest true-class attention, pseudolabel 1
  std::vector<Eigen::Index> bottom;  // lowest true-class attention, pseudolabel 0
  Matrix logits;                     // 2B x 2, rows ordered top then bottom
  int clamped_b = 0;
};

// Top-B / bottom-B selection with B clamped to floor(K/2). Ties resolve to the
// lower instance index.
InstancePseudoBatch select_pseudo_batch(const Eigen::Ref<const Eigen::RowVectorXd>& attention,
                                        int b);

struct ClusterTerm {
  Var loss{};
  InstancePseudoBatch batch;
  bool skipped = false;  // K < 2
};

// Smooth-SVM instance loss on the true class's branch.
ClusterTerm clustering_loss(Tape& tape, const ForwardGraph& graph, const MilModelParams& params,
                            int true_class, int b);

struct LossConfig {
  double c1 = 0.7;
  double c2 = 0.3;
  int b = 8;
};

struct LossResult {
  Var total{};
  double cross_entropy = 0.0;
  double cluster = 0.0;
  bool cluster_skipped = false;
  ForwardGraph graph;
  std::optional<InstancePseudoBatch> pseudo_batch;
};

// Cross-entropy for plain variants; c1 * CE + c2 * clustering for clustering
// variants. With c2 == 0 the clustering branch is not built and the total is
// exactly the plain cross-entropy.
LossResult total_loss(Tape& tape, const FeatureBag& bag, const MilModelParams& params,
                      const LossConfig& loss_cfg, const ForwardOptions& opts);

// Convenience: loss value and gradients (parallel to params.tensors()).
struct LossAndGrad {
  double loss = 0.0;
  double cross_entropy = 0.0;
  double cluster = 0.0;
  std::vector<Matrix> grads;
  std::optional<InstancePseudoBatch> pseudo_batch;
};
LossAndGrad loss_and_grad(const FeatureBag& bag, const MilModelParams& params,
                          const LossConfig& loss_cfg, const ForwardOptions& opts);

// Slide-level class probabilities for any variant (eval helper).
Eigen::RowVectorXd predict_proba(const FeatureBag& bag, const MilModelParams& params);

}  // namespace milforge::mil
