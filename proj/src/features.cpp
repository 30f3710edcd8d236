#include "milforge/features.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "milforge/error.hpp"

namespace milforge {

static_assert(std::endian::native == std::endian::little, "MILF I/O assumes a little-endian host");

bool bitwise_equal(const FeatureBag& a, const FeatureBag& b) {
  if (a.slide_id != b.slide_id || a.mag != b.mag || a.label != b.label ||
      a.features.rows() != b.features.rows() || a.features.cols() != b.features.cols()) {
    return false;
  }
  return std::memcmp(a.features.data(), b.features.data(),
                     static_cast<std::size_t>(a.features.size()) * sizeof(double)) == 0;
}

LabelSpace::LabelSpace(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() < 2) throw ConfigError("a label space needs at least two classes");
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!ids_.emplace(names_[i], static_cast<int>(i)).second) {
      throw ConfigError("duplicate class name '" + names_[i] + "'");
    }
  }
}

int LabelSpace::id(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) throw ConfigError("unknown class '" + name + "'");
  return it->second;
}

const std::string& LabelSpace::name(int id) const {
  if (id < 0 || id >= size()) throw ConfigError("class id " + std::to_string(id) + " out of range");
  return names_[static_cast<std::size_t>(id)];
}

Eigen::RowVectorXd baseline_extract(const RgbImage& patch) {
  if (patch.width != kPatchSize || patch.height != kPatchSize ||
      patch.pixels.size() != static_cast<std::size_t>(kPatchSize) * kPatchSize * 3) {
    throw ShapeError("baseline_extract: expected a 256x256 RGB patch, got " +
                     std::to_string(patch.width) + "x" + std::to_string(patch.height));
  }
  constexpr int n = kPatchSize * kPatchSize;
  Eigen::RowVectorXd f = Eigen::RowVectorXd::Zero(kBaselineDim);

  double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
  std::array<std::array<int, 16>, 3> hist{};
  std::vector<double> gray(n);
  double sat_sum = 0, sat_sq = 0;
  int foreground = 0;
  for (int y = 0; y < kPatchSize; ++y) {
    for (int x = 0; x < kPatchSize; ++x) {
      const auto* p = patch.at(x, y);
      for (int c = 0; c < 3; ++c) {
        const double v = p[c] / 255.0;
        sum[c] += v;
        sq[c] += v * v;
        ++hist[c][p[c] >> 4];
      }
      gray[static_cast<std::size_t>(y) * kPatchSize + x] =
          (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
      const int mx = std::max({p[0], p[1], p[2]});
      const int mn = std::min({p[0], p[1], p[2]});
      const double s = mx == 0 ? 0.0 : static_cast<double>(mx - mn) / mx;
      sat_sum += s;
      sat_sq += s * s;
      if (s * 255.0 > 8.0) ++foreground;
    }
  }
  for (int c = 0; c < 3; ++c) {
    const double mean = sum[c] / n;
    f(2 * c) = mean;
    f(2 * c + 1) = std::clamp(4.0 * (sq[c] / n - mean * mean), 0.0, 1.0);
    for (int b = 0; b < 16; ++b) f(6 + 16 * c + b) = static_cast<double>(hist[c][b]) / n;
  }

  // Forward differences, replicated at the last row / column.
  double g_sum = 0, g_sq = 0;
  for (int y = 0; y < kPatchSize; ++y) {
    for (int x = 0; x < kPatchSize; ++x) {
      const double v = gray[static_cast<std::size_t>(y) * kPatchSize + x];
      const double gx =
          x + 1 < kPatchSize ? gray[static_cast<std::size_t>(y) * kPatchSize + x + 1] - v : 0.0;
      const double gy =
          y + 1 < kPatchSize ? gray[static_cast<std::size_t>(y + 1) * kPatchSize + x] - v : 0.0;
      const double m = std::sqrt(gx * gx + gy * gy) / std::sqrt(2.0);
      g_sum += m;
      g_sq += m * m;
    }
  }
  const double g_mean = g_sum / n;
  f(54) = g_mean;
  f(55) = std::clamp(4.0 * (g_sq / n - g_mean * g_mean), 0.0, 1.0);
  const double s_mean = sat_sum / n;
  f(56) = s_mean;
  f(57) = std::clamp(4.0 * (sat_sq / n - s_mean * s_mean), 0.0, 1.0);
  f(58) = static_cast<double>(foreground) / n;
  return f;
}

namespace {

constexpr char kMagic[4] = {'M', 'I', 'L', 'F'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    need(n, what);
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw TruncatedError(std::string("embedding file truncated while reading ") + what);
    }
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large payloads in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_embeddings(const FeatureBag& bag, bool f64_payload) {
  if (bag.features.rows() < 1) throw EmptyBagError("cannot write an empty bag");
  if (bag.slide_id.size() > 0xFFFF) throw ContractError("slide id too long");
  if (bag.label < -1 || bag.label > 0x7FFF) throw ContractError("label out of range");
  std::vector<std::uint8_t> out;
  const std::size_t elem = f64_payload ? 8 : 4;
  out.reserve(32 + bag.slide_id.size() + static_cast<std::size_t>(bag.features.size()) * elem);
  out.insert(out.end(), kMagic, kMagic + 4);
  put<std::uint16_t>(out, kMilfVersion);
  put<std::uint16_t>(out, f64_payload ? kMilfFlagF64 : 0);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bag.features.cols()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bag.features.rows()));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(bag.slide_id.size()));
  out.insert(out.end(), bag.slide_id.begin(), bag.slide_id.end());
  put<std::int16_t>(out, static_cast<std::int16_t>(bag.label));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(bag.mag));
  const std::size_t payload_start = out.size();
  const double* src = bag.features.data();  // row-major
  for (Eigen::Index i = 0; i < bag.features.size(); ++i) {
    if (f64_payload) {
      put<double>(out, src[i]);
    } else {
      put<float>(out, static_cast<float>(src[i]));
    }
  }
  put<std::uint32_t>(out, crc32_of(out.data() + payload_start, out.size() - payload_start));
  return out;
}

void write_embeddings(const FeatureBag& bag, const std::filesystem::path& path, bool f64_payload) {
  const auto bytes = encode_embeddings(bag, f64_payload);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

FeatureBag decode_embeddings(const std::vector<std::uint8_t>& bytes,
                             std::optional<int> expected_dim) {
  Reader r(bytes);
  const auto* magic = r.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic: not a MILF file");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kMilfVersion) {
    throw FormatError("unsupported MILF version " + std::to_string(version));
  }
  const auto flags = r.get<std::uint16_t>("flags");
  if ((flags & ~kMilfFlagF64) != 0) throw FormatError("unknown MILF flags");
  const auto d = r.get<std::uint32_t>("dimension");
  const auto k = r.get<std::uint32_t>("instance count");
  if (d == 0 || k == 0) throw FormatError("MILF file declares an empty bag");
  if (expected_dim && static_cast<int>(d) != *expected_dim) {
    throw DimensionError("embedding dimension " + std::to_string(d) + " does not match expected " +
                         std::to_string(*expected_dim));
  }
  FeatureBag bag;
  const auto id_len = r.get<std::uint16_t>("slide id length");
  const auto* id = r.take(id_len, "slide id");
  bag.slide_id.assign(reinterpret_cast<const char*>(id), id_len);
  bag.label = r.get<std::int16_t>("label");
  if (bag.label < -1) throw FormatError("invalid label id " + std::to_string(bag.label));
  bag.mag = magnification_from_byte(r.get<std::uint8_t>("magnification"));

  const std::size_t elem = (flags & kMilfFlagF64) ? 8 : 4;
  const std::size_t count = static_cast<std::size_t>(d) * k;
  if (r.remaining() < count * elem + 4) {
    throw TruncatedError("embedding payload truncated: expected " +
                         std::to_string(count * elem + 4) + " bytes, found " +
                         std::to_string(r.remaining()));
  }
  if (r.remaining() > count * elem + 4) throw FormatError("trailing bytes after MILF payload");
  const auto* payload = r.take(count * elem, "payload");
  const auto stored_crc = r.get<std::uint32_t>("checksum");
  if (crc32_of(payload, count * elem) != stored_crc) {
    throw ChecksumError("embedding payload checksum mismatch");
  }
  bag.features.resize(k, d);
  double* dst = bag.features.data();
  for (std::size_t i = 0; i < count; ++i) {
    if (elem == 8) {
      std::memcpy(&dst[i], payload + 8 * i, 8);
    } else {
      float v;
      std::memcpy(&v, payload + 4 * i, 4);
      dst[i] = static_cast<double>(v);
    }
  }
  return bag;
}

FeatureBag read_embeddings(const std::filesystem::path& path, std::optional<int> expected_dim) {
  try {
    return decode_embeddings(slurp(path), expected_dim);
  } catch (const FormatError& e) {
    // Re-throw with the file name, preserving the error class.
    const std::string msg = "'" + path.string() + "': " + e.what();
    if (dynamic_cast<const ChecksumError*>(&e)) throw ChecksumError(msg);
    if (dynamic_cast<const TruncatedError*>(&e)) throw TruncatedError(msg);
    throw FormatError(msg);
  }
}

FeatureBag import_external(const std::filesystem::path& stream,
                           const std::filesystem::path& descriptor,
                           std::optional<int> expected_dim) {
  nlohmann::json desc;
  {
    std::ifstream in(descriptor);
    if (!in) throw IoError("cannot open descriptor '" + descriptor.string() + "'");
    try {
      in >> desc;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("descriptor '" + descriptor.string() + "': " + e.what());
    }
  }
  if (!desc.contains("slide_id") || !desc.contains("dim")) {
    throw FormatError("descriptor must contain slide_id and dim");
  }
  if (desc.contains("dtype") && desc["dtype"] != "float32") {
    throw FormatError("only float32 external streams are supported");
  }
  const int d = desc["dim"].get<int>();
  if (d <= 0) throw FormatError("descriptor dim must be positive");
  if (expected_dim && d != *expected_dim) {
    throw DimensionError("external embedding dimension " + std::to_string(d) +
                         " does not match expected " + std::to_string(*expected_dim));
  }
  const auto bytes = slurp(stream);
  const std::size_t row_bytes = static_cast<std::size_t>(d) * 4;
  if (bytes.empty() || bytes.size() % row_bytes != 0) {
    throw FormatError("stream size " + std::to_string(bytes.size()) +
                      " is not a positive multiple of " + std::to_string(row_bytes));
  }
  const std::size_t k = bytes.size() / row_bytes;
  if (desc.contains("count") && desc["count"].get<std::size_t>() != k) {
    throw TruncatedError("descriptor declares " + std::to_string(desc["count"].get<std::size_t>()) +
                         " records but stream holds " + std::to_string(k));
  }
  FeatureBag bag;
  bag.slide_id = desc["slide_id"].get<std::string>();
  if (desc.contains("mag")) bag.mag = parse_magnification(desc["mag"].get<std::string>());
  if (desc.contains("label")) bag.label = desc["label"].get<int>();
  bag.features.resize(static_cast<Eigen::Index>(k), d);
  for (std::size_t i = 0; i < k * static_cast<std::size_t>(d); ++i) {
    float v;
    std::memcpy(&v, bytes.data() + 4 * i, 4);
    bag.features.data()[i] = static_cast<double>(v);
  }
  return bag;
}

}  // namespace milforge
