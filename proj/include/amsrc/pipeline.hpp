#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "amsrc/config.hpp"
#include "amsrc/trainer.hpp"

namespace amsrc {

enum class Command { synth, extract, train, score, eval, ablate };

Command parse_command(const std::string& name);
const char* to_string(Command c);

// Artifact locations under an output root.
struct PipelinePaths {
  explicit PipelinePaths(std::filesystem::path root);

  std::filesystem::path root;
  std::filesystem::path synth_train, synth_test, synth_labels, synth_truth;
  std::filesystem::path extract_dir;
  std::filesystem::path checkpoint, stats, train_scores;
  std::filesystem::path frame_scores, object_scores;
  std::filesystem::path eval_report, curves_dir;
  std::filesystem::path runs_dir;

  std::filesystem::path clips(const std::string& split) const;
  std::filesystem::path rois(const std::string& split) const;
  std::filesystem::path frames_index(const std::string& split) const;
  std::filesystem::path flow_cache(const std::string& split) const;
};

struct AblationRow {
  std::string name;
  bool use_flow = true;
  bool use_consistency = true;
  bool use_fgfm = true;
  std::optional<double> auroc;
  std::string error;
};

// The five component toggles A..E (flow, consistency, FGFM).
std::vector<AblationRow> ablation_rows();
TrainConfig apply_row(TrainConfig config, const AblationRow& row);

struct CommandResult {
  std::optional<double> auroc;
  std::vector<AblationRow> ablation;
  std::filesystem::path manifest;
};

// Runs one command against `out`. `log` receives progress lines (may be null).
CommandResult run_pipeline(Command command, const TrainConfig& config, const std::filesystem::path& out,
                           std::ostream* log = nullptr);

// Trains and evaluates each row on the already-extracted clips under
// `<out>/ablation/<row>`. Row failures are recorded and the rest continue.
std::vector<AblationRow> run_ablation_matrix(const TrainConfig& config, const std::filesystem::path& out,
                                             std::ostream* log = nullptr,
                                             const std::vector<std::string>& only = {});

// Per-split frame counts written by extract: video_id -> number of frames.
std::map<std::string, int> load_frames_index(const std::filesystem::path& path);
std::vector<FrameKey> frame_universe(const std::map<std::string, int>& index);

// FNV-1a over every file under `dir` (relative name and bytes, sorted by path).
std::string tree_hash(const std::filesystem::path& dir);

struct Manifest {
  std::string command;
  std::map<std::string, std::string> entries;  // run metadata, metrics
  std::string config_text;
  std::vector<EpochRecord> history;
  double wall_clock_seconds = 0.0;
};

// Writes `<runs_dir>/<timestamp>-<hash>/manifest`; never overwrites.
std::filesystem::path write_manifest(const std::filesystem::path& runs_dir, const Manifest& m, const std::string& hash);
// Manifest text without the wall-clock line, for reproducibility checks.
std::string manifest_text(const Manifest& m, bool with_wall_clock);

}  // namespace amsrc
