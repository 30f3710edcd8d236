#pragma once

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include "milforge/autodiff.hpp"
#include "milforge/gradcheck.hpp"
#include "milforge/random.hpp"

namespace testutil {

using milforge::Rng;
using milforge::ad::Matrix;
using milforge::ad::Var;
using Tape = milforge::ad::Tape<double>;

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = scale * (2.0 * milforge::uniform01(rng) - 1.0);
  }
  return m;
}

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Reduces the builder's output to a scalar with a fixed random projection and
// compares tape gradients against central differences.
inline milforge::ad::GradCheckResult check_op(const Builder& build, std::vector<Matrix> inputs,
                                              std::uint64_t seed = 7) {
  auto scalar = [&](Tape& t, const std::vector<Var>& vs) {
    const Var out = build(t, vs);
    const auto& ov = t.value(out);
    Rng prng = milforge::make_rng(seed, "projection");
    const Var w = t.constant(random_matrix(ov.rows(), ov.cols(), prng));
    return milforge::ad::sum(t, milforge::ad::elem_mul(t, out, w));
  };
  auto eval = [&] {
    Tape t;
    std::vector<Var> vs;
    for (const auto& m : inputs) vs.push_back(t.parameter(m));
    return t.value(scalar(t, vs))(0, 0);
  };
  Tape t;
  std::vector<Var> vs;
  for (const auto& m : inputs) vs.push_back(t.parameter(m));
  const auto g = t.backward(scalar(t, vs));
  std::vector<Matrix> analytic;
  std::vector<Matrix*> ptrs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    analytic.push_back(g[vs[i]]);
    ptrs.push_back(&inputs[i]);
  }
  return milforge::ad::check_gradients(eval, ptrs, analytic);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ =
        std::filesystem::temp_directory_path() /
        ("milforge_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testutil
