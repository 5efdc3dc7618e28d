#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace cxr_test {

// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("cxr_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Test-side randomness is std::mt19937 so it shares nothing with the
// library's own generator.
template <class T = float>
cxr::BasicTensor<T> random_tensor(cxr::Shape shape, std::uint32_t seed, double lo = -1.0,
                                  double hi = 1.0) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  cxr::BasicTensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(gen));
  return t;
}

template <class T>
double max_abs_diff(const cxr::BasicTensor<T>& a, const cxr::BasicTensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

template <class T>
double max_abs(const cxr::BasicTensor<T>& a) {
  double m = 0;
  for (auto v : a.data()) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

}  // namespace cxr_test
