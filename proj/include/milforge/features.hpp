#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "milforge/autodiff.hpp"
#include "milforge/common.hpp"
#include "milforge/image.hpp"

namespace milforge {

// One slide's instance embeddings (K x d, row order == manifest order).
struct FeatureBag {
  std::string slide_id;
  Magnification mag = Magnification::kUnknown;
  ad::Matrix features;
  int label = -1;  // -1 = unlabeled

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
  bool labeled() const { return label >= 0; }
};

// Bitwise equality, so +0/-0 and NaN payloads are distinguished.
bool bitwise_equal(const FeatureBag& a, const FeatureBag& b);

class LabelSpace {
 public:
  LabelSpace() = default;
  explicit LabelSpace(std::vector<std::string> names);

  int id(const std::string& name) const;  // throws ConfigError if unknown
  const std::string& name(int id) const;
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> ids_;
};

inline constexpr int kBaselineDim = 64;
inline constexpr int kPatchSize = 256;

// Hand-crafted 64-d descriptor of a 256x256 RGB patch, every entry in [0, 1]:
//   [0..6)   per-channel mean and variance (R, G, B; variance scaled by 4)
//   [6..54)  16-bin normalized histograms, R then G then B
//   [54..56) grayscale gradient-magnitude mean and variance
//   [56..58) HSV saturation mean and variance
//   [58]     fraction of pixels with saturation above the tissue threshold
//   [59..64) zero
Eigen::RowVectorXd baseline_extract(const RgbImage& patch);

// MILF embedding file:
//   "MILF" | version u16 | flags u16 | d u32 | K u32 | id_len u16 | id bytes
//   | label i16 | mag u8 | payload K*d little-endian row-major | CRC32(payload) u32
// flags bit 0 selects f64 payload (checkpoints); embeddings use f32.
inline constexpr std::uint16_t kMilfVersion = 1;
inline constexpr std::uint16_t kMilfFlagF64 = 0x1;

// Values are rounded to f32 unless `f64_payload` is set.
void write_embeddings(const FeatureBag& bag, const std::filesystem::path& path,
                      bool f64_payload = false);
std::vector<std::uint8_t> encode_embeddings(const FeatureBag& bag, bool f64_payload = false);

// Validates magic, version, dimensions, length and checksum. With
// `expected_dim` set, a mismatching d raises DimensionError.
FeatureBag read_embeddings(const std::filesystem::path& path,
                           std::optional<int> expected_dim = std::nullopt);
FeatureBag decode_embeddings(const std::vector<std::uint8_t>& bytes,
                             std::optional<int> expected_dim = std::nullopt);

// External embeddings: a raw little-endian float32 row-major stream plus a
// JSON sidecar {"slide_id", "dim", "count" (optional), "mag" (optional),
// "label" (optional, class id)}.
FeatureBag import_external(const std::filesystem::path& stream,
                           const std::filesystem::path& descriptor,
                           std::optional<int> expected_dim = std::nullopt);

}  // namespace milforge
