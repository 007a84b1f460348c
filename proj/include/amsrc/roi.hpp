#pragma once

#include <vector>

#include "amsrc/video.hpp"

namespace amsrc {

struct ForegroundParams {
  float threshold = 0.1f;   // |frame - median background| above this is foreground
  int min_area = 4;         // components with fewer pixels are dropped
  int merge_distance = 1;   // boxes closer than this (pixels) are merged
};

// Background subtraction against the per-video median frame, 8-connected
// components, then box merging. Boxes within a frame are ordered by (y, x).
std::vector<RoiBox> extract_rois(const VideoSequence& video, const ForegroundParams& params = {});

GrayImage median_background(const VideoSequence& video);

}  // namespace amsrc
