#include "milforge/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "milforge/error.hpp"

namespace milforge::mil {

namespace {

constexpr char kMagic[4] = {'M', 'I', 'L', 'C'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

struct Cursor {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (bytes.size() - pos < n) {
      throw TruncatedError(std::string("checkpoint truncated while reading ") + what);
    }
    const auto* p = bytes.data() + pos;
    pos += n;
    return p;
  }
  template <typename T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what), sizeof(T));
    return v;
  }
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const MilModelParams& params, std::uint64_t seed) {
  const ModelDims& d = params.dims();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint16_t>(out, kCheckpointVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(params.variant()));
  put<std::uint8_t>(out, 0);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.d_in));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.n_classes));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.hidden));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.attn_width));
  put<std::uint64_t>(out, seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.tensors().size()));
  for (const auto& t : params.tensors()) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.cols()));
    const std::size_t start = out.size();
    const auto* raw = reinterpret_cast<const std::uint8_t*>(t.value.data());
    out.insert(out.end(), raw, raw + static_cast<std::size_t>(t.value.size()) * sizeof(double));
    put<std::uint32_t>(out, crc_of(out.data() + start, out.size() - start));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Cursor c{bytes};
  if (std::memcmp(c.take(4, "magic"), kMagic, 4) != 0) {
    throw FormatError("bad magic: not a checkpoint file");
  }
  const auto version = c.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto tag = c.get<std::uint8_t>("variant");
  if (tag > static_cast<std::uint8_t>(Variant::kGatedCluster)) {
    throw FormatError("unknown variant tag " + std::to_string(tag));
  }
  c.get<std::uint8_t>("reserved");
  ModelDims dims;
  dims.d_in = static_cast<int>(c.get<std::uint32_t>("d_in"));
  dims.n_classes = static_cast<int>(c.get<std::uint32_t>("n_classes"));
  dims.hidden = static_cast<int>(c.get<std::uint32_t>("hidden"));
  dims.attn_width = static_cast<int>(c.get<std::uint32_t>("attn_width"));
  Checkpoint ck;
  ck.seed = c.get<std::uint64_t>("seed");
  const auto variant = static_cast<Variant>(tag);
  std::vector<std::pair<std::string, std::pair<int, int>>> layout;
  try {
    layout = tensor_layout(variant, dims);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  const auto count = c.get<std::uint32_t>("tensor count");
  if (count != layout.size()) {
    throw FormatError("checkpoint has " + std::to_string(count) + " tensors, layout expects " +
                      std::to_string(layout.size()));
  }
  ck.params = MilModelParams::zeros(variant, dims);
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = c.get<std::uint16_t>("tensor name length");
    const auto* name = c.take(len, "tensor name");
    const std::string n(reinterpret_cast<const char*>(name), len);
    const auto rows = c.get<std::uint32_t>("rows");
    const auto cols = c.get<std::uint32_t>("cols");
    auto& t = ck.params.tensors()[i];
    if (n != t.name || static_cast<Eigen::Index>(rows) != t.value.rows() ||
        static_cast<Eigen::Index>(cols) != t.value.cols()) {
      throw FormatError("checkpoint tensor '" + n + "' does not match expected '" + t.name + "'");
    }
    const std::size_t nbytes = static_cast<std::size_t>(rows) * cols * sizeof(double);
    const auto* payload = c.take(nbytes, "tensor payload");
    const auto crc = c.get<std::uint32_t>("tensor checksum");
    if (crc != crc_of(payload, nbytes)) {
      throw ChecksumError("checkpoint tensor '" + n + "' checksum mismatch");
    }
    std::memcpy(t.value.data(), payload, nbytes);
  }
  if (c.pos != bytes.size()) throw FormatError("trailing bytes after checkpoint");
  return ck;
}

void save_checkpoint(const MilModelParams& params, std::uint64_t seed,
                     const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params, seed);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace milforge::mil
