#include "amsrc/flow.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>

#include "amsrc/error.hpp"

namespace amsrc {

namespace {

GrayImage downsample(const GrayImage& img) {
  GrayImage out(img.height / 2, img.width / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(y, x) = 0.25f * (img.at(2 * y, 2 * x) + img.at(2 * y, 2 * x + 1) + img.at(2 * y + 1, 2 * x) +
                              img.at(2 * y + 1, 2 * x + 1));
  return out;
}

// Edge-replicated copy of an image, so window lookups need no clamping.
struct Padded {
  int margin = 0, height = 0, width = 0, stride = 0;
  std::vector<float> v;

  Padded(const GrayImage& img, int m) : margin(m), height(img.height), width(img.width), stride(img.width + 2 * m) {
    v.resize(static_cast<std::size_t>(img.height + 2 * m) * stride);
    for (int y = -m; y < img.height + m; ++y)
      for (int x = -m; x < img.width + m; ++x)
        v[static_cast<std::size_t>(y + m) * stride + (x + m)] =
            img.at(std::clamp(y, 0, img.height - 1), std::clamp(x, 0, img.width - 1));
  }
  const float* row(int y) const { return v.data() + static_cast<std::size_t>(y + margin) * stride + margin; }
};

// b sampled on a half-pixel grid: sample (2y + ry, 2x + rx) is b at (y + ry/2, x + rx/2).
struct HalfGrid {
  int margin = 0, stride = 0;
  std::vector<float> v;

  HalfGrid(const Padded& b, int m) : margin(m), stride(2 * (b.width + 2 * m)) {
    v.resize(static_cast<std::size_t>(2 * (b.height + 2 * m)) * stride);
    for (int y = -m; y < b.height + m; ++y)
      for (int x = -m; x < b.width + m; ++x)
        for (int ry = 0; ry < 2; ++ry)
          for (int rx = 0; rx < 2; ++rx) {
            const float fy = 0.5f * ry, fx = 0.5f * rx;
            const float* r0 = b.row(y);
            const float* r1 = b.row(y + 1);
            const float val = (1 - fy) * ((1 - fx) * r0[x] + fx * r0[x + 1]) + fy * ((1 - fx) * r1[x] + fx * r1[x + 1]);
            v[static_cast<std::size_t>(2 * (y + m) + ry) * stride + 2 * (x + m) + rx] = val;
          }
  }
  // Sample at (y2 / 2, x2 / 2).
  float at2(int y2, int x2) const {
    return v[static_cast<std::size_t>(y2 + 2 * margin) * stride + (x2 + 2 * margin)];
  }
};

// Windowed SSD between a around (y, x) and b around (y + dy, x + dx).
double block_ssd(const Padded& a, const Padded& b, int y, int x, int dy, int dx, int half) {
  double s = 0.0;
  for (int wy = -half; wy <= half; ++wy) {
    const float* ra = a.row(y + wy) + x;
    const float* rb = b.row(y + wy + dy) + x + dx;
    for (int wx = -half; wx <= half; ++wx) {
      const double d = static_cast<double>(ra[wx]) - rb[wx];
      s += d * d;
    }
  }
  return s;
}

// Same with a displacement given in half pixels.
double block_ssd_half(const Padded& a, const HalfGrid& b2, int y, int x, int dy2, int dx2, int half) {
  double s = 0.0;
  for (int wy = -half; wy <= half; ++wy) {
    const float* ra = a.row(y + wy) + x;
    for (int wx = -half; wx <= half; ++wx) {
      const double d = static_cast<double>(ra[wx]) - b2.at2(2 * (y + wy) + dy2, 2 * (x + wx) + dx2);
      s += d * d;
    }
  }
  return s;
}

// Strictly better cost wins; equal cost goes to the shorter displacement.
bool better(double cost, double len2, double best_cost, double best_len2) {
  constexpr double tol = 1e-12;
  if (cost < best_cost - tol) return true;
  return cost <= best_cost + tol && len2 < best_len2;
}

}  // namespace

FlowMap compute_flow(const GrayImage& a, const GrayImage& b, const ClassicalFlowParams& params) {
  if (!a.same_size(b)) fail(ErrorKind::data, "compute_flow: frames differ in size");
  if (params.window < 1 || params.window % 2 == 0) fail(ErrorKind::usage, "flow window must be odd and positive");
  const int half = params.window / 2;

  std::vector<GrayImage> pyr_a{a}, pyr_b{b};
  while (static_cast<int>(pyr_a.size()) < params.max_levels && pyr_a.back().height / 2 >= params.min_level_size &&
         pyr_a.back().width / 2 >= params.min_level_size) {
    pyr_a.push_back(downsample(pyr_a.back()));
    pyr_b.push_back(downsample(pyr_b.back()));
  }

  // Integer displacement per pixel at the current level.
  // Largest displacement the coarse-to-fine search can reach.
  int reach = 0;
  for (std::size_t l = 0; l < pyr_a.size(); ++l) reach = 2 * reach + params.search_radius;
  const int margin = reach + half + 2;

  std::vector<int> ix, iy;
  int cur_h = 0, cur_w = 0;
  for (int level = static_cast<int>(pyr_a.size()) - 1; level >= 0; --level) {
    const Padded la(pyr_a[level], margin);
    const Padded lb(pyr_b[level], margin);
    std::vector<int> nx(static_cast<std::size_t>(la.height) * la.width), ny(nx.size());
    for (int y = 0; y < la.height; ++y)
      for (int x = 0; x < la.width; ++x) {
        int cx = 0, cy = 0;
        if (!ix.empty()) {
          const int py = std::min(y / 2, cur_h - 1), px = std::min(x / 2, cur_w - 1);
          cx = 2 * ix[static_cast<std::size_t>(py) * cur_w + px];
          cy = 2 * iy[static_cast<std::size_t>(py) * cur_w + px];
        }
        double best = std::numeric_limits<double>::infinity(), best_len = 0;
        int bx = cx, by = cy;
        for (int sy = -params.search_radius; sy <= params.search_radius; ++sy)
          for (int sx = -params.search_radius; sx <= params.search_radius; ++sx) {
            const int dx = cx + sx, dy = cy + sy;
            const double cost = block_ssd(la, lb, y, x, dy, dx, half);
            const double len2 = static_cast<double>(dx) * dx + static_cast<double>(dy) * dy;
            if (better(cost, len2, best, best_len)) {
              best = cost;
              best_len = len2;
              bx = dx;
              by = dy;
            }
          }
        nx[static_cast<std::size_t>(y) * la.width + x] = bx;
        ny[static_cast<std::size_t>(y) * la.width + x] = by;
      }
    ix = std::move(nx);
    iy = std::move(ny);
    cur_h = la.height;
    cur_w = la.width;
  }

  const Padded pa(a, margin);
  const HalfGrid b2(Padded(b, margin + 1), margin);
  FlowMap flow(a.height, a.width);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      float fx = static_cast<float>(ix[static_cast<std::size_t>(y) * a.width + x]);
      float fy = static_cast<float>(iy[static_cast<std::size_t>(y) * a.width + x]);
      if (params.half_pixel) {
        const int iy2 = 2 * static_cast<int>(fy), ix2 = 2 * static_cast<int>(fx);
        double best = block_ssd_half(pa, b2, y, x, iy2, ix2, half);
        double best_len = 0.0;  // relative to the integer optimum
        float bx = fx, by = fy;
        for (int sy = -1; sy <= 1; ++sy)
          for (int sx = -1; sx <= 1; ++sx) {
            if (sx == 0 && sy == 0) continue;
            const float dx = fx + 0.5f * sx, dy = fy + 0.5f * sy;
            const double cost = block_ssd_half(pa, b2, y, x, iy2 + sy, ix2 + sx, half);
            if (better(cost, 0.25 * (sx * sx + sy * sy), best, best_len)) {
              best = cost;
              best_len = 0.25 * (sx * sx + sy * sy);
              bx = dx;
              by = dy;
            }
          }
        fx = bx;
        fy = by;
      }
      flow.dx(y, x) = fx;
      flow.dy(y, x) = fy;
    }
  return flow;
}

static_assert(std::endian::native == std::endian::little, "flow file format assumes a little-endian host");

FlowMap read_flow(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open flow file " + path.string());
  std::uint32_t h = 0, w = 0;
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  if (!in || h == 0 || w == 0) fail(ErrorKind::data, "bad flow header in " + path.string());
  std::vector<float> interleaved(static_cast<std::size_t>(h) * w * 2);
  in.read(reinterpret_cast<char*>(interleaved.data()), static_cast<std::streamsize>(interleaved.size() * sizeof(float)));
  if (!in) fail(ErrorKind::data, "truncated flow file " + path.string());
  FlowMap f(static_cast<int>(h), static_cast<int>(w));
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * f.width + x) * 2;
      f.dx(y, x) = interleaved[i];
      f.dy(y, x) = interleaved[i + 1];
    }
  return f;
}

void write_flow(const fs::path& path, const FlowMap& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::data, "cannot write flow file " + path.string());
  const std::uint32_t h = static_cast<std::uint32_t>(f.height), w = static_cast<std::uint32_t>(f.width);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  std::vector<float> interleaved(static_cast<std::size_t>(h) * w * 2);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * f.width + x) * 2;
      interleaved[i] = f.dx(y, x);
      interleaved[i + 1] = f.dy(y, x);
    }
  out.write(reinterpret_cast<const char*>(interleaved.data()), static_cast<std::streamsize>(interleaved.size() * sizeof(float)));
}

fs::path flow_path(const fs::path& root, const std::string& video_id, int k) {
  return root / video_id / frame_file_name(k, ".flo");
}

FlowBackend FlowBackend::classical(ClassicalFlowParams params) {
  FlowBackend b;
  b.kind_ = Kind::classical;
  b.params_ = params;
  return b;
}

FlowBackend FlowBackend::precomputed(fs::path source_path) {
  FlowBackend b;
  b.kind_ = Kind::precomputed;
  b.source_ = std::move(source_path);
  return b;
}

FlowMap FlowBackend::flow(const VideoSequence& video, int k) const {
  if (k < 0 || k + 1 >= video.size())
    fail(ErrorKind::data, "flow pair (" + std::to_string(k) + ", " + std::to_string(k + 1) + ") is outside video " +
                              video.video_id);
  if (kind_ == Kind::classical) return compute_flow(video.frames[k], video.frames[k + 1], params_);
  const fs::path p = flow_path(source_, video.video_id, k);
  if (!fs::exists(p))
    fail(ErrorKind::data, "precomputed flow missing for video " + video.video_id + " pair (" + std::to_string(k) + ", " +
                              std::to_string(k + 1) + "): " + p.string());
  FlowMap f = read_flow(p);
  if (f.height != video.height() || f.width != video.width())
    fail(ErrorKind::data, "precomputed flow " + p.string() + " does not match the frame size");
  return f;
}

std::vector<FlowMap> FlowBackend::flows(const VideoSequence& video) const {
  std::vector<FlowMap> out;
  for (int k = 0; k + 1 < video.size(); ++k) out.push_back(flow(video, k));
  return out;
}

}  // namespace amsrc
