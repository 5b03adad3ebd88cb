#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <unistd.h>
#include <string>

#include "atlaspl/volume.hpp"

namespace testing_support {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("atlaspl_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline atlaspl::Volume noise_volume(atlaspl::Dims d, unsigned seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  atlaspl::Volume v(d, {});
  for (std::size_t n = 0; n < v.size(); ++n) v[n] = static_cast<float>(u(gen));
  return v;
}

inline atlaspl::LabelMap cube_labels(atlaspl::Dims d, atlaspl::Index3 lo, int edge, std::uint16_t value = 1) {
  atlaspl::LabelMap m(d, {});
  for (int k = lo[2]; k < lo[2] + edge; ++k)
    for (int j = lo[1]; j < lo[1] + edge; ++j)
      for (int i = lo[0]; i < lo[0] + edge; ++i) m.at(i, j, k) = value;
  return m;
}

}  // namespace testing_support
