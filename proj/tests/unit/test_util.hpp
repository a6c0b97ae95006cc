#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include <Eigen/Core>

#include "rayemb/geometry.hpp"

namespace rayemb::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("rayemb_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Vector3d v(n(rng), n(rng), n(rng));
  return v.normalized();
}

inline PoseSE3 random_rigid(std::mt19937_64& rng, double max_angle = 3.0, double max_t = 100.0) {
  std::uniform_real_distribution<double> a(0.0, max_angle), t(-max_t, max_t);
  return PoseSE3::unchecked(so3_exp(random_unit(rng) * a(rng)), Eigen::Vector3d(t(rng), t(rng), t(rng)))
      .reorthonormalized();
}

}  // namespace rayemb::testing
