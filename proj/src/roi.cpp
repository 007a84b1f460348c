#include "amsrc/roi.hpp"

#include <algorithm>
#include <tuple>

#include "amsrc/error.hpp"

namespace amsrc {

GrayImage median_background(const VideoSequence& video) {
  GrayImage bg(video.height(), video.width());
  std::vector<float> column(static_cast<std::size_t>(video.size()));
  const std::size_t mid = column.size() / 2;
  for (std::size_t p = 0; p < bg.pixels.size(); ++p) {
    for (int f = 0; f < video.size(); ++f) column[f] = video.frames[f].pixels[p];
    std::nth_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(mid), column.end());
    bg.pixels[p] = column[mid];
  }
  return bg;
}

namespace {

struct Box {
  int x0, y0, x1, y1;  // inclusive
  int area;
};

bool near(const Box& a, const Box& b, int d) {
  return a.x0 <= b.x1 + d && b.x0 <= a.x1 + d && a.y0 <= b.y1 + d && b.y0 <= a.y1 + d;
}

std::vector<Box> components(const std::vector<unsigned char>& mask, int h, int w) {
  std::vector<int> label(mask.size(), -1);
  std::vector<Box> boxes;
  std::vector<int> stack;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int start = y * w + x;
      if (!mask[start] || label[start] >= 0) continue;
      Box b{x, y, x, y, 0};
      const int id = static_cast<int>(boxes.size());
      stack.push_back(start);
      label[start] = id;
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int py = p / w, px = p % w;
        b.x0 = std::min(b.x0, px);
        b.x1 = std::max(b.x1, px);
        b.y0 = std::min(b.y0, py);
        b.y1 = std::max(b.y1, py);
        ++b.area;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = py + dy, nx = px + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            const int q = ny * w + nx;
            if (mask[q] && label[q] < 0) {
              label[q] = id;
              stack.push_back(q);
            }
          }
      }
      boxes.push_back(b);
    }
  return boxes;
}

}  // namespace

std::vector<RoiBox> extract_rois(const VideoSequence& video, const ForegroundParams& params) {
  if (video.frames.empty()) fail(ErrorKind::data, "extract_rois: empty input");
  video.validate();
  const GrayImage bg = median_background(video);
  const int h = video.height(), w = video.width();
  std::vector<RoiBox> out;
  std::vector<unsigned char> mask(static_cast<std::size_t>(h) * w);
  for (int f = 0; f < video.size(); ++f) {
    const auto& frame = video.frames[f];
    for (std::size_t p = 0; p < mask.size(); ++p)
      mask[p] = std::abs(frame.pixels[p] - bg.pixels[p]) > params.threshold;
    std::vector<Box> boxes;
    for (const Box& b : components(mask, h, w))
      if (b.area >= params.min_area) boxes.push_back(b);
    for (bool merged = true; merged;) {
      merged = false;
      for (std::size_t i = 0; i < boxes.size() && !merged; ++i)
        for (std::size_t j = i + 1; j < boxes.size(); ++j)
          if (near(boxes[i], boxes[j], params.merge_distance)) {
            boxes[i] = {std::min(boxes[i].x0, boxes[j].x0), std::min(boxes[i].y0, boxes[j].y0),
                        std::max(boxes[i].x1, boxes[j].x1), std::max(boxes[i].y1, boxes[j].y1),
                        boxes[i].area + boxes[j].area};
            boxes.erase(boxes.begin() + static_cast<std::ptrdiff_t>(j));
            merged = true;
            break;
          }
    }
    std::sort(boxes.begin(), boxes.end(), [](const Box& a, const Box& b) { return std::tie(a.y0, a.x0) < std::tie(b.y0, b.x0); });
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      const Box& b = boxes[k];
      out.push_back({video.video_id, f, b.x0, b.y0, b.x1 - b.x0 + 1, b.y1 - b.y0 + 1,
                     "f" + std::to_string(f) + "_o" + std::to_string(k)});
    }
  }
  return out;
}

}  // namespace amsrc
