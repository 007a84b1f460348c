#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amsrc/flow.hpp"
#include "amsrc/tensor.hpp"
#include "amsrc/video.hpp"

namespace amsrc {

inline constexpr int kClipSize = 32;

// Object-centric spatio-temporal cube. input_flows[k] is the flow from input
// frame k to k+1; the last one runs from the last input frame to the target.
struct StClip {
  Tensorf input_frames;  // [t,32,32]
  Tensorf target_frame;  // [1,32,32]
  Tensorf input_flows;   // [t,2,32,32], pixels at the 32x32 scale
  std::string video_id;
  int frame_index = 0;
  std::string object_id;

  int depth() const { return input_frames.empty() ? 0 : input_frames.dim(0); }
  // Throws unless the shapes are exactly [t,32,32]/[1,32,32]/[t,2,32,32].
  void validate(int t) const;
};

struct CropWindow {
  int x = 0;
  int y = 0;
  int side = 1;
};

// Squares the box around its centre (side = max(w, h)) and shifts/shrinks it
// to lie inside a height x width frame.
CropWindow square_and_clamp(const RoiBox& box, int height, int width);

// Bilinear resize of a square crop to out x out (pixel-centre aligned).
std::vector<float> resize_crop(const GrayImage& image, const CropWindow& win, int out);
// Same for both flow planes; displacements are multiplied by out / side.
std::vector<float> resize_flow_crop(const FlowMap& flow, const CropWindow& win, int out);

// flows[k] is the flow from frame k to k+1 of `video`. Returns nullopt when the
// box has fewer than t frames of history.
std::optional<StClip> build_stc(const VideoSequence& video, std::span<const FlowMap> flows, const RoiBox& box, int t);

// Grows a box by `margin` pixels on each side (before squaring/clamping).
RoiBox pad_box(const RoiBox& box, int margin);

}  // namespace amsrc

namespace amsrc {

// Binary clip cache used between the extract and train/score commands.
void save_clips(const fs::path& path, std::span<const StClip> clips);
std::vector<StClip> load_clips(const fs::path& path);

}  // namespace amsrc
