#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "amsrc/video.hpp"

namespace amsrc {

// Desk-scale stand-in for a surveillance benchmark: sprites moving over a
// static textured background. Normal sprites are squares and disks moving
// slowly; anomalies are either an unseen checkered shape at normal speed or a
// normal shape moving too fast.
struct SynthConfig {
  int train_videos = 8;
  int test_videos = 6;
  int frames_per_video = 40;
  int height = 64;
  int width = 64;
  int normal_sprites = 2;
  double anomaly_rate = 0.3;  // fraction of each test video's frames showing an anomaly
  int anomaly_start = 4;      // anomalies never appear before this frame
  double normal_speed_min = 0.5;
  double normal_speed_max = 1.5;
  double anomalous_speed_min = 3.5;
  double anomalous_speed_max = 5.0;

  void validate() const;
};

enum class SpriteKind { normal, appearance_anomaly, motion_anomaly };

const char* to_string(SpriteKind kind);

struct SpriteTruth {
  int frame_index = 0;
  std::string sprite_id;
  SpriteKind kind = SpriteKind::normal;
  float x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // extent in pixels
};

struct SynthDataset {
  std::vector<VideoSequence> train;
  std::vector<VideoSequence> test;
  FrameLabels labels;                                        // test videos only
  std::map<std::string, std::vector<SpriteTruth>> truth;     // test videos only
};

SynthDataset generate_synthetic_dataset(std::uint64_t seed, const SynthConfig& config);

}  // namespace amsrc
