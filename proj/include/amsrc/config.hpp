#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "amsrc/model.hpp"
#include "amsrc/objectives.hpp"
#include "amsrc/roi.hpp"
#include "amsrc/scoring.hpp"
#include "amsrc/synth.hpp"

namespace amsrc {

// Everything a run needs. Serialized as flat `key = value` text; unknown keys
// are rejected.
struct TrainConfig {
  std::uint64_t seed = 0;

  double learning_rate = 2e-4;
  double decay_factor = 0.8;
  int decay_every_epochs = 10;
  int batch_size = 64;
  int epochs = 40;
  bool use_consistency = true;
  // Adam moments; not tuned per dataset.
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double bn_momentum = 0.1;

  LossWeights loss;
  ScoreWeights score;
  ModelConfig model;

  // Data sources. Empty paths mean "use the synth command's output".
  std::string train_dir;
  std::string test_dir;
  std::string train_rois;
  std::string test_rois;
  std::string labels;

  std::string flow_backend = "classical";  // classical | precomputed
  std::string flow_train_dir;
  std::string flow_test_dir;

  ForegroundParams roi;
  int box_margin = 4;

  SynthConfig synth;

  void validate() const;
};

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
TrainConfig config_from_key_values(const KeyValues& kv, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path);
// Canonical text form (every key, sorted); also the input to config_hash.
std::string config_to_text(const TrainConfig& c);
std::string config_hash(const TrainConfig& c);

// Built-in presets: "ped2", "avenue", "shanghaitech", "synth".
TrainConfig preset_config(std::string_view name);

}  // namespace amsrc
