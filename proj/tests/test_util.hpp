#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "amsrc/video.hpp"

namespace testutil {

namespace fs = std::filesystem;

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("amsrc_" + tag + "_" + std::to_string(rd()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline amsrc::GrayImage constant_image(int h, int w, float v) { return amsrc::GrayImage(h, w, v); }

}  // namespace testutil
