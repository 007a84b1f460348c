#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "amsrc/video.hpp"

namespace amsrc {

// Dense displacement field [2, H, W]: plane 0 is dx, plane 1 is dy, in pixels.
// A pixel at (x, y) in frame a is found at (x + dx, y + dy) in frame b.
struct FlowMap {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  FlowMap() = default;
  FlowMap(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(2) * h * w, 0.0f) {}

  float& dx(int y, int x) noexcept { return data[static_cast<std::size_t>(y) * width + x]; }
  float dx(int y, int x) const noexcept { return data[static_cast<std::size_t>(y) * width + x]; }
  float& dy(int y, int x) noexcept { return data[(static_cast<std::size_t>(height) + y) * width + x]; }
  float dy(int y, int x) const noexcept { return data[(static_cast<std::size_t>(height) + y) * width + x]; }

  friend bool operator==(const FlowMap&, const FlowMap&) = default;
};

struct ClassicalFlowParams {
  int window = 7;        // block side, odd
  int search_radius = 2; // integer search per pyramid level
  int max_levels = 3;
  int min_level_size = 8;
  bool half_pixel = true;
};

// Coarse-to-fine integer block matching (SSD) with a final half-pixel
// refinement. Ties prefer the smaller displacement, so identical frames give
// exactly zero flow.
FlowMap compute_flow(const GrayImage& a, const GrayImage& b, const ClassicalFlowParams& params = {});

// `<root>/<video_id>/%06d.flo`: u32 height, u32 width, then H*W*(dx,dy) f32,
// little-endian. File k holds the flow from frame k to k+1.
FlowMap read_flow(const fs::path& path);
void write_flow(const fs::path& path, const FlowMap& flow);
fs::path flow_path(const fs::path& root, const std::string& video_id, int k);

class FlowBackend {
 public:
  enum class Kind { precomputed, classical };

  static FlowBackend classical(ClassicalFlowParams params = {});
  static FlowBackend precomputed(fs::path source_path);

  Kind kind() const noexcept { return kind_; }
  const fs::path& source_path() const noexcept { return source_; }

  // Flow from frame k to k+1. Stateless, safe to call concurrently.
  FlowMap flow(const VideoSequence& video, int k) const;
  // All consecutive pairs of the video.
  std::vector<FlowMap> flows(const VideoSequence& video) const;

 private:
  Kind kind_ = Kind::classical;
  fs::path source_;
  ClassicalFlowParams params_;
};

}  // namespace amsrc
