#ifndef WILDLAB_TESTS_TEST_UTIL_H_
#define WILDLAB_TESTS_TEST_UTIL_H_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <unistd.h>

#include "wildlab/dataset.h"
#include "wildlab/nnet.h"

namespace wildlab::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("wildlab_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

inline std::vector<float> random_input(std::mt19937_64& rng, size_t d, double scale = 1.5) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<float> x(d);
  for (float& v : x) v = static_cast<float>(n(rng));
  return x;
}

inline ParamVector random_params(const Network& net, std::mt19937_64& rng, double scale = 0.5) {
  std::normal_distribution<double> n(0.0, scale);
  ParamVector p(net.num_params());
  for (double& v : p) v = n(rng);
  return p;
}

// Small labeled ID set: C Gaussian blobs on the axes.
inline Dataset blobs(size_t n, size_t d, int classes, uint64_t seed, double sep = 3.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Dataset ds(d, classes);
  std::vector<double> x(d);
  for (size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % static_cast<size_t>(classes));
    for (size_t j = 0; j < d; ++j) x[j] = nd(rng) + (j == static_cast<size_t>(y) % d ? sep : 0.0);
    ds.append(std::span<const double>(x), y, Membership::kId);
  }
  return ds;
}

}  // namespace wildlab::testing

#endif  // WILDLAB_TESTS_TEST_UTIL_H_
