#include "amsrc/synth.hpp"

#include <algorithm>
#include <cmath>

#include "amsrc/error.hpp"
#include "amsrc/rng.hpp"

namespace amsrc {

namespace {

enum class SpriteShape { square, disk, cross, triangle, bar };

struct ShapeInfo {
  float half_w, half_h, intensity;
};

ShapeInfo info(SpriteShape s) {
  switch (s) {
    case SpriteShape::square: return {4.0f, 4.0f, 0.9f};
    case SpriteShape::disk: return {4.5f, 4.5f, 0.75f};
    case SpriteShape::cross: return {6.0f, 6.0f, 0.85f};
    case SpriteShape::triangle: return {5.0f, 5.0f, 0.6f};
    case SpriteShape::bar: return {7.0f, 2.5f, 0.95f};
  }
  return {4.0f, 4.0f, 1.0f};
}

bool inside(SpriteShape s, float u, float v) {
  switch (s) {
    case SpriteShape::square: return std::abs(u) <= 4.0f && std::abs(v) <= 4.0f;
    case SpriteShape::disk: return u * u + v * v <= 4.5f * 4.5f;
    case SpriteShape::cross:
      return (std::abs(u) <= 1.5f && std::abs(v) <= 6.0f) || (std::abs(v) <= 1.5f && std::abs(u) <= 6.0f);
    case SpriteShape::triangle: return v >= -5.0f && v <= 5.0f && std::abs(u) <= (v + 5.0f) * 0.5f;
    case SpriteShape::bar: return std::abs(u) <= 7.0f && std::abs(v) <= 2.5f;
  }
  return false;
}

struct Sprite {
  std::string id;
  SpriteShape shape;
  SpriteKind kind;
  double cx, cy, vx, vy;
  int first_frame, last_frame;  // inclusive
};

void advance(Sprite& s, int height, int width) {
  const ShapeInfo si = info(s.shape);
  s.cx += s.vx;
  s.cy += s.vy;
  const double lo_x = si.half_w, hi_x = width - si.half_w, lo_y = si.half_h, hi_y = height - si.half_h;
  if (s.cx < lo_x) { s.cx = 2 * lo_x - s.cx; s.vx = -s.vx; }
  if (s.cx > hi_x) { s.cx = 2 * hi_x - s.cx; s.vx = -s.vx; }
  if (s.cy < lo_y) { s.cy = 2 * lo_y - s.cy; s.vy = -s.vy; }
  if (s.cy > hi_y) { s.cy = 2 * hi_y - s.cy; s.vy = -s.vy; }
}

// 4x4 supersampled coverage, alpha-composited over the frame.
void render(GrayImage& img, const Sprite& s) {
  const ShapeInfo si = info(s.shape);
  const int x0 = std::max(0, static_cast<int>(std::floor(s.cx - si.half_w)) - 1);
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(s.cx + si.half_w)) + 1);
  const int y0 = std::max(0, static_cast<int>(std::floor(s.cy - si.half_h)) - 1);
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(s.cy + si.half_h)) + 1);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) {
          const float u = static_cast<float>(x + (sx + 0.5) / 4.0 - s.cx);
          const float v = static_cast<float>(y + (sy + 0.5) / 4.0 - s.cy);
          hits += inside(s.shape, u, v);
        }
      const float cov = hits / 16.0f;
      float value = si.intensity;
      if (s.kind == SpriteKind::appearance_anomaly) {
        // 2 px checkerboard in sprite coordinates.
        const int cu = static_cast<int>(std::floor((x + 0.5 - s.cx) / 2.0));
        const int cv = static_cast<int>(std::floor((y + 0.5 - s.cy) / 2.0));
        if ((cu + cv) % 2 != 0) value = 0.35f;
      }
      img.at(y, x) = img.at(y, x) * (1.0f - cov) + value * cov;
    }
}

GrayImage background(Rng& rng, int height, int width) {
  const double fx = rng.uniform(0.5, 2.0), fy = rng.uniform(0.5, 2.0), phase = rng.uniform(0.0, 2.0 * M_PI);
  GrayImage bg(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      bg.at(y, x) = static_cast<float>(0.1 + 0.05 * std::sin(2.0 * M_PI * (fx * x / width + fy * y / height) + phase));
  return bg;
}

Sprite spawn(Rng& rng, const std::string& id, SpriteShape shape, SpriteKind kind, double speed_min, double speed_max,
             int height, int width, int first, int last) {
  const ShapeInfo si = info(shape);
  const double speed = rng.uniform(speed_min, speed_max);
  const double angle = rng.uniform(0.0, 2.0 * M_PI);
  return {id,
          shape,
          kind,
          rng.uniform(si.half_w, width - si.half_w),
          rng.uniform(si.half_h, height - si.half_h),
          speed * std::cos(angle),
          speed * std::sin(angle),
          first,
          last};
}

struct Generated {
  VideoSequence video;
  std::vector<SpriteTruth> truth;
};

Generated make_video(Rng& rng, const std::string& id, const SynthConfig& c, std::vector<Sprite> sprites) {
  Generated g;
  g.video.video_id = id;
  const GrayImage bg = background(rng, c.height, c.width);
  for (int f = 0; f < c.frames_per_video; ++f) {
    GrayImage frame = bg;
    for (auto& s : sprites) {
      if (f < s.first_frame || f > s.last_frame) continue;
      render(frame, s);
      const ShapeInfo si = info(s.shape);
      g.truth.push_back({f, s.id, s.kind, static_cast<float>(s.cx - si.half_w), static_cast<float>(s.cy - si.half_h),
                         static_cast<float>(s.cx + si.half_w), static_cast<float>(s.cy + si.half_h)});
    }
    g.video.frames.push_back(std::move(frame));
    for (auto& s : sprites)
      if (f >= s.first_frame && f < s.last_frame) advance(s, c.height, c.width);
  }
  return g;
}

std::vector<Sprite> normal_sprites(Rng& rng, const SynthConfig& c) {
  std::vector<Sprite> out;
  for (int k = 0; k < c.normal_sprites; ++k) {
    const SpriteShape shape = (k % 2 == 0) ? SpriteShape::square : SpriteShape::disk;
    out.push_back(spawn(rng, "s" + std::to_string(k), shape, SpriteKind::normal, c.normal_speed_min,
                        c.normal_speed_max, c.height, c.width, 0, c.frames_per_video - 1));
  }
  return out;
}

std::string video_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%02d", prefix, i);
  return buf;
}

}  // namespace

const char* to_string(SpriteKind kind) {
  switch (kind) {
    case SpriteKind::normal: return "normal";
    case SpriteKind::appearance_anomaly: return "appearance";
    case SpriteKind::motion_anomaly: return "motion";
  }
  return "?";
}

void SynthConfig::validate() const {
  if (train_videos < 0 || test_videos < 0) fail(ErrorKind::usage, "synth video counts must be >= 0");
  if (frames_per_video < 1) fail(ErrorKind::usage, "synth.frames must be >= 1");
  if (height < 16 || width < 16) fail(ErrorKind::usage, "synth frame size must be at least 16x16");
  if (normal_sprites < 0) fail(ErrorKind::usage, "synth.normal_sprites must be >= 0");
  if (anomaly_rate < 0.0 || anomaly_rate > 1.0) fail(ErrorKind::usage, "synth.anomaly_rate must lie in [0,1]");
  if (anomaly_start < 0) fail(ErrorKind::usage, "synth.anomaly_start must be >= 0");
  if (normal_speed_min > normal_speed_max || anomalous_speed_min > anomalous_speed_max)
    fail(ErrorKind::usage, "synth speed ranges must be ordered");
}

SynthDataset generate_synthetic_dataset(std::uint64_t seed, const SynthConfig& c) {
  c.validate();
  SynthDataset ds;
  Rng rng(derive_seed(seed, "synth"));
  for (int i = 0; i < c.train_videos; ++i)
    ds.train.push_back(make_video(rng, video_name("train", i), c, normal_sprites(rng, c)).video);

  const int n_anomalous = static_cast<int>(std::lround(c.anomaly_rate * c.frames_per_video));
  for (int i = 0; i < c.test_videos; ++i) {
    const std::string id = video_name("test", i);
    std::vector<Sprite> sprites = normal_sprites(rng, c);
    if (n_anomalous > 0) {
      const int earliest = std::min(c.anomaly_start, c.frames_per_video - n_anomalous);
      const int first = rng.uniform_int(earliest, c.frames_per_video - n_anomalous);
      const int last = first + n_anomalous - 1;
      if (i % 2 == 0) {
        const SpriteShape shape = rng.uniform() < 0.5 ? SpriteShape::square : SpriteShape::disk;
        sprites.push_back(spawn(rng, "anomaly", shape, SpriteKind::motion_anomaly, c.anomalous_speed_min,
                                c.anomalous_speed_max, c.height, c.width, first, last));
      } else {
        const SpriteShape shapes[] = {SpriteShape::cross, SpriteShape::triangle, SpriteShape::bar};
        sprites.push_back(spawn(rng, "anomaly", shapes[rng.uniform_int(0, 2)], SpriteKind::appearance_anomaly,
                                c.normal_speed_min, c.normal_speed_max, c.height, c.width, first, last));
      }
    }
    Generated g = make_video(rng, id, c, std::move(sprites));
    std::vector<int> labels(static_cast<std::size_t>(c.frames_per_video), 0);
    for (const auto& tr : g.truth)
      if (tr.kind != SpriteKind::normal) labels[tr.frame_index] = 1;
    ds.labels[id] = std::move(labels);
    ds.truth[id] = std::move(g.truth);
    ds.test.push_back(std::move(g.video));
  }
  return ds;
}

}  // namespace amsrc
