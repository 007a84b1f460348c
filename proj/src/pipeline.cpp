#include "amsrc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <ostream>
#include <sstream>

#include "amsrc/evaluation.hpp"
#include "amsrc/roi.hpp"
#include "amsrc/synth.hpp"

namespace amsrc {

namespace fs = std::filesystem;

Command parse_command(const std::string& name) {
  if (name == "synth") return Command::synth;
  if (name == "extract") return Command::extract;
  if (name == "train") return Command::train;
  if (name == "score") return Command::score;
  if (name == "eval") return Command::eval;
  if (name == "ablate") return Command::ablate;
  fail(ErrorKind::usage, "unknown command: " + name);
}

const char* to_string(Command c) {
  switch (c) {
    case Command::synth: return "synth";
    case Command::extract: return "extract";
    case Command::train: return "train";
    case Command::score: return "score";
    case Command::eval: return "eval";
    case Command::ablate: return "ablate";
  }
  return "?";
}

PipelinePaths::PipelinePaths(fs::path r) : root(std::move(r)) {
  synth_train = root / "synth" / "train";
  synth_test = root / "synth" / "test";
  synth_labels = root / "synth" / "labels.txt";
  synth_truth = root / "synth" / "truth.txt";
  extract_dir = root / "extract";
  checkpoint = root / "train" / "checkpoint.bin";
  stats = root / "train" / "stats.txt";
  train_scores = root / "train" / "object_scores.csv";
  frame_scores = root / "score" / "frame_scores.csv";
  object_scores = root / "score" / "object_scores.csv";
  eval_report = root / "eval" / "report.txt";
  curves_dir = root / "eval" / "curves";
  runs_dir = root / "runs";
}

fs::path PipelinePaths::clips(const std::string& split) const { return extract_dir / split / "clips.bin"; }
fs::path PipelinePaths::rois(const std::string& split) const { return extract_dir / split / "rois.txt"; }
fs::path PipelinePaths::frames_index(const std::string& split) const { return extract_dir / split / "frames.txt"; }
fs::path PipelinePaths::flow_cache(const std::string& split) const { return extract_dir / split / "flows"; }

std::vector<AblationRow> ablation_rows() {
  return {{"A", false, false, false, {}, {}},
          {"B", true, false, false, {}, {}},
          {"C", true, false, true, {}, {}},
          {"D", true, true, false, {}, {}},
          {"E", true, true, true, {}, {}}};
}

TrainConfig apply_row(TrainConfig config, const AblationRow& row) {
  config.model.ablation.use_flow = row.use_flow;
  config.model.ablation.use_fgfm = row.use_fgfm;
  config.use_consistency = row.use_consistency;
  return config;
}

std::map<std::string, int> load_frames_index(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open frame index " + path.string());
  std::map<std::string, int> out;
  std::string id;
  int n = 0;
  while (in >> id >> n) out[id] = n;
  return out;
}

std::vector<FrameKey> frame_universe(const std::map<std::string, int>& index) {
  std::vector<FrameKey> keys;
  for (const auto& [id, n] : index)
    for (int f = 0; f < n; ++f) keys.push_back({id, f});
  return keys;
}

std::string tree_hash(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](unsigned char ch) { h = (h ^ ch) * 0x100000001b3ULL; };
  for (const auto& f : files) {
    for (unsigned char ch : f.lexically_relative(dir).generic_string()) mix(ch);
    mix(0);
    std::ifstream in(f, std::ios::binary);
    for (std::istreambuf_iterator<char> it(in), end; it != end; ++it) mix(static_cast<unsigned char>(*it));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string manifest_text(const Manifest& m, bool with_wall_clock) {
  std::ostringstream o;
  o << std::setprecision(17);
  o << "[run]\ncommand = " << m.command << "\n";
  for (const auto& [k, v] : m.entries) o << k << " = " << v << "\n";
  if (with_wall_clock) o << "wall_clock_seconds = " << m.wall_clock_seconds << "\n";
  o << "\n[history]\n";
  for (const auto& h : m.history)
    o << "epoch=" << h.epoch << " lr=" << h.learning_rate << " total=" << h.mean_loss.total << " l_int=" << h.mean_loss.l_int
      << " l_gd=" << h.mean_loss.l_gd << " l_sim=" << h.mean_loss.l_sim << " l_reg=" << h.mean_loss.l_reg << "\n";
  o << "\n[config]\n" << m.config_text;
  return o.str();
}

fs::path write_manifest(const fs::path& runs_dir, const Manifest& m, const std::string& hash) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  fs::path dir = runs_dir / (std::string(stamp) + "-" + hash);
  for (int k = 1; fs::exists(dir); ++k) dir = runs_dir / (std::string(stamp) + "-" + hash + "-" + std::to_string(k));
  fs::create_directories(dir);
  std::ofstream o(dir / "manifest");
  if (!o) fail(ErrorKind::data, "cannot write manifest in " + dir.string());
  o << manifest_text(m, true);
  return dir / "manifest";
}

namespace {

using Clock = std::chrono::steady_clock;

void say(std::ostream* log, const std::string& s) {
  if (log) *log << s << std::endl;
}

void require(const fs::path& p, const char* earlier) {
  if (!fs::exists(p))
    fail(ErrorKind::usage, "missing " + p.string() + ": run the '" + std::string(earlier) + "' command first");
}

std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

void write_truth(const fs::path& path, const std::map<std::string, std::vector<SpriteTruth>>& truth) {
  std::ofstream o(path);
  o << std::setprecision(9);
  for (const auto& [id, rows] : truth)
    for (const auto& r : rows)
      o << id << ' ' << r.frame_index << ' ' << r.sprite_id << ' ' << to_string(r.kind) << ' ' << r.x0 << ' ' << r.y0
        << ' ' << r.x1 << ' ' << r.y1 << '\n';
}

fs::path video_source(const TrainConfig& c, const PipelinePaths& paths, const std::string& split) {
  const std::string& configured = split == "train" ? c.train_dir : c.test_dir;
  if (!configured.empty()) return configured;
  const fs::path p = split == "train" ? paths.synth_train : paths.synth_test;
  require(p, "synth");
  return p;
}

fs::path labels_source(const TrainConfig& c, const PipelinePaths& paths) {
  if (!c.labels.empty()) return c.labels;
  require(paths.synth_labels, "synth");
  return paths.synth_labels;
}

fs::path run_synth(const TrainConfig& c, const PipelinePaths& paths, std::ostream* log) {
  const auto start = Clock::now();
  const SynthDataset ds = generate_synthetic_dataset(c.seed, c.synth);
  fs::remove_all(paths.root / "synth");
  for (const auto& v : ds.train) save_video(paths.synth_train, v);
  for (const auto& v : ds.test) save_video(paths.synth_test, v);
  save_labels(paths.synth_labels, ds.labels);
  write_truth(paths.synth_truth, ds.truth);
  const std::string hash = tree_hash(paths.root / "synth");
  say(log, "synth: " + std::to_string(ds.train.size()) + " train / " + std::to_string(ds.test.size()) +
               " test videos, dataset hash " + hash);
  Manifest m;
  m.command = "synth";
  m.config_text = config_to_text(c);
  m.entries["seed"] = std::to_string(c.seed);
  m.entries["config_hash"] = config_hash(c);
  m.entries["dataset_hash"] = hash;
  m.wall_clock_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return write_manifest(paths.runs_dir, m, config_hash(c));
}

void extract_split(const TrainConfig& c, const PipelinePaths& paths, const std::string& split, std::ostream* log) {
  const auto videos = load_videos(video_source(c, paths, split));
  const std::string& roi_file = split == "train" ? c.train_rois : c.test_rois;
  std::vector<RoiBox> file_boxes;
  if (!roi_file.empty()) file_boxes = load_rois(roi_file);

  FlowBackend backend = FlowBackend::classical();
  if (c.flow_backend == "precomputed") {
    const std::string& dir = split == "train" ? c.flow_train_dir : c.flow_test_dir;
    if (dir.empty()) fail(ErrorKind::usage, "flow.backend = precomputed needs flow." + split + "_dir");
    backend = FlowBackend::precomputed(dir);
  }

  const fs::path dir = paths.extract_dir / split;
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<StClip> clips;
  std::vector<RoiBox> used;
  std::ofstream index(paths.frames_index(split));
  for (const auto& video : videos) {
    index << video.video_id << ' ' << video.size() << '\n';
    std::vector<RoiBox> boxes;
    if (roi_file.empty()) {
      boxes = extract_rois(video, c.roi);
    } else {
      for (const auto& b : file_boxes)
        if (b.video_id == video.video_id) boxes.push_back(b);
    }
    const std::vector<FlowMap> flows = backend.flows(video);
    if (backend.kind() == FlowBackend::Kind::classical) {
      fs::create_directories(paths.flow_cache(split) / video.video_id);
      for (std::size_t k = 0; k < flows.size(); ++k)
        write_flow(flow_path(paths.flow_cache(split), video.video_id, static_cast<int>(k)), flows[k]);
    }
    for (const auto& b : boxes) {
      auto clip = build_stc(video, flows, pad_box(b, c.box_margin), c.model.t);
      if (!clip) continue;
      clips.push_back(std::move(*clip));
      used.push_back(b);
    }
  }
  save_clips(paths.clips(split), clips);
  save_rois(paths.rois(split), used);
  say(log, "extract[" + split + "]: " + std::to_string(videos.size()) + " videos, " + std::to_string(clips.size()) + " clips");
}

void write_object_scores(const fs::path& path, const std::vector<ObjectScore>& scores) {
  std::ofstream o(path);
  if (!o) fail(ErrorKind::data, "cannot write " + path.string());
  o << "video_id,frame_index,object_id,s_f,s_p\n" << std::setprecision(17);
  for (const auto& s : scores) o << s.video_id << ',' << s.frame_index << ',' << s.object_id << ',' << s.s_f << ',' << s.s_p << '\n';
}

struct TrainOutcome {
  fs::path manifest;
  double final_loss = 0.0;
};

TrainOutcome run_train(const TrainConfig& c, const PipelinePaths& paths, std::ostream* log) {
  require(paths.clips("train"), "extract");
  const auto start = Clock::now();
  const auto clips = load_clips(paths.clips("train"));
  const TrainResult r = train(c, clips, [&](const EpochRecord& e) {
    std::ostringstream s;
    s << "train: epoch " << e.epoch << " lr " << e.learning_rate << " loss " << e.mean_loss.total;
    say(log, s.str());
  });
  fs::create_directories(paths.checkpoint.parent_path());
  save_checkpoint(paths.checkpoint, r.params);
  const std::string hash = config_hash(c);
  save_stats(paths.stats, r.stats, hash);
  write_object_scores(paths.train_scores, r.train_scores);

  Manifest m;
  m.command = "train";
  m.config_text = config_to_text(c);
  m.history = r.history;
  m.entries["seed"] = std::to_string(c.seed);
  m.entries["config_hash"] = hash;
  m.entries["checkpoint"] = paths.checkpoint.lexically_relative(paths.root).string();
  m.entries["stats"] = paths.stats.lexically_relative(paths.root).string();
  m.entries["train_clips"] = std::to_string(clips.size());
  m.entries["u_f"] = fmt(r.stats.u_f);
  m.entries["delta_f"] = fmt(r.stats.delta_f);
  m.entries["u_p"] = fmt(r.stats.u_p);
  m.entries["delta_p"] = fmt(r.stats.delta_p);
  TrainOutcome out;
  out.final_loss = r.history.empty() ? 0.0 : r.history.back().mean_loss.total;
  m.entries["final_loss"] = fmt(out.final_loss);
  m.wall_clock_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  out.manifest = write_manifest(paths.runs_dir, m, hash);
  return out;
}

void run_score(const TrainConfig& c, const PipelinePaths& paths, std::ostream* log) {
  require(paths.checkpoint, "train");
  require(paths.stats, "train");
  require(paths.clips("test"), "extract");
  const auto params = load_checkpoint(paths.checkpoint);
  const NormStats stats = load_stats(paths.stats);
  const auto clips = load_clips(paths.clips("test"));
  const auto objects = object_scores(clips, params, params.config.ablation);
  const auto universe = frame_universe(load_frames_index(paths.frames_index("test")));
  const auto frames = frame_scores(objects, stats, c.score, universe);
  fs::create_directories(paths.frame_scores.parent_path());
  write_frame_scores(paths.frame_scores, frames);
  write_object_scores(paths.object_scores, objects);
  say(log, "score: " + std::to_string(objects.size()) + " objects over " + std::to_string(frames.size()) + " frames");
}

double run_eval(const TrainConfig& c, const PipelinePaths& paths, std::ostream* log) {
  require(paths.frame_scores, "score");
  const auto frames = read_frame_scores(paths.frame_scores);
  const FrameLabels labels = load_labels(labels_source(c, paths));
  const LabeledScores ls = align_scores(frames, labels);
  const double a = auroc(ls.scores, ls.labels);
  fs::create_directories(paths.eval_report.parent_path());
  export_curves(frames, labels, paths.curves_dir);
  std::ofstream o(paths.eval_report);
  o << std::setprecision(17) << "frames = " << ls.scores.size() << "\nauroc = " << a << "\n";
  std::ostringstream s;
  s << "eval: frame-level AUROC " << std::setprecision(6) << a << " over " << ls.scores.size() << " frames";
  say(log, s.str());
  return a;
}

}  // namespace

std::vector<AblationRow> run_ablation_matrix(const TrainConfig& config, const fs::path& out, std::ostream* log,
                                             const std::vector<std::string>& only) {
  const PipelinePaths base(out);
  require(base.clips("train"), "extract");
  require(base.clips("test"), "extract");
  std::vector<AblationRow> rows;
  for (AblationRow row : ablation_rows()) {
    if (!only.empty() && std::find(only.begin(), only.end(), row.name) == only.end()) continue;
    const TrainConfig rc = apply_row(config, row);
    const fs::path row_root = out / "ablation" / row.name;
    try {
      fs::create_directories(row_root);
      fs::create_directories(row_root / "extract");
      // Rows share the extracted clips of the parent root.
      for (const char* split : {"train", "test"}) {
        const fs::path dst = row_root / "extract" / split;
        fs::remove_all(dst);
        fs::create_directories(dst);
        fs::copy_file(base.clips(split), dst / "clips.bin");
        fs::copy_file(base.frames_index(split), dst / "frames.txt");
      }
      const PipelinePaths rp(row_root);
      say(log, "ablate: row " + row.name);
      run_train(rc, rp, log);
      run_score(rc, rp, log);
      TrainConfig ec = rc;
      if (ec.labels.empty()) ec.labels = labels_source(config, base).string();
      row.auroc = run_eval(ec, rp, log);
    } catch (const std::exception& e) {
      row.error = e.what();
      say(log, "ablate: row " + row.name + " failed: " + row.error);
    }
    rows.push_back(row);
  }
  std::ofstream table(out / "ablation" / "table.csv");
  table << "row,use_flow,use_consistency,use_fgfm,auroc\n" << std::setprecision(17);
  for (const auto& r : rows) {
    table << r.name << ',' << r.use_flow << ',' << r.use_consistency << ',' << r.use_fgfm << ',';
    if (r.auroc) table << *r.auroc;
    else table << "error";
    table << '\n';
  }
  return rows;
}

CommandResult run_pipeline(Command command, const TrainConfig& config, const fs::path& out, std::ostream* log) {
  config.validate();
  const PipelinePaths paths(out);
  fs::create_directories(out);
  CommandResult result;
  switch (command) {
    case Command::synth: result.manifest = run_synth(config, paths, log); break;
    case Command::extract:
      extract_split(config, paths, "train", log);
      extract_split(config, paths, "test", log);
      break;
    case Command::train: result.manifest = run_train(config, paths, log).manifest; break;
    case Command::score: run_score(config, paths, log); break;
    case Command::eval: {
      const auto start = Clock::now();
      result.auroc = run_eval(config, paths, log);
      Manifest m;
      m.command = "eval";
      m.config_text = config_to_text(config);
      m.entries["seed"] = std::to_string(config.seed);
      m.entries["config_hash"] = config_hash(config);
      m.entries["frame_scores"] = paths.frame_scores.lexically_relative(paths.root).string();
      m.entries["auroc"] = fmt(*result.auroc);
      m.wall_clock_seconds = std::chrono::duration<double>(Clock::now() - start).count();
      result.manifest = write_manifest(paths.runs_dir, m, config_hash(config));
      break;
    }
    case Command::ablate: result.ablation = run_ablation_matrix(config, out, log); break;
  }
  return result;
}

}  // namespace amsrc
