#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace amsrc {

namespace fs = std::filesystem;

// Single-channel float image, values in [0,1], row-major.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(int h, int w, float fill = 0.0f) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int y, int x) noexcept { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const noexcept { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool same_size(const GrayImage& o) const noexcept { return height == o.height && width == o.width; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

struct VideoSequence {
  std::string video_id;
  std::vector<GrayImage> frames;

  int height() const { return frames.empty() ? 0 : frames.front().height; }
  int width() const { return frames.empty() ? 0 : frames.front().width; }
  int size() const { return static_cast<int>(frames.size()); }

  // Throws when frames differ in size or a pixel is outside [0,1].
  void validate() const;

  friend bool operator==(const VideoSequence&, const VideoSequence&) = default;
};

struct RoiBox {
  std::string video_id;
  int frame_index = 0;
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;
  std::string object_id;

  friend bool operator==(const RoiBox&, const RoiBox&) = default;
};

// Per-video 0/1 frame labels.
using FrameLabels = std::map<std::string, std::vector<int>>;

// RoI file: one `video_id frame_index x y w h object_id` per line.
std::vector<RoiBox> load_rois(const fs::path& path);
void save_rois(const fs::path& path, std::span<const RoiBox> boxes);

FrameLabels load_labels(const fs::path& path);
void save_labels(const fs::path& path, const FrameLabels& labels);

GrayImage load_png(const fs::path& path);
void save_png(const fs::path& path, const GrayImage& image);

// `<root>/<video_id>/%06d.png`
VideoSequence load_video(const fs::path& root, const std::string& video_id);
std::vector<VideoSequence> load_videos(const fs::path& root);
void save_video(const fs::path& root, const VideoSequence& video);

std::string frame_file_name(int index, const std::string& extension);

}  // namespace amsrc
