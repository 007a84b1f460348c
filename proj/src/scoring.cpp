#include "amsrc/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "amsrc/objectives.hpp"

namespace amsrc {

void ScoreWeights::validate() const {
  if (w_f < 0 || w_p < 0) fail(ErrorKind::usage, "score weights must be non-negative");
  if (w_f == 0 && w_p == 0) fail(ErrorKind::usage, "score weights cannot both be zero");
}

ObjectScore object_score(const StClip& clip, const ModelParameters<float>& params, const Ablation& ablation) {
  const ForwardResult r = forward(clip, params, ablation);
  ObjectScore s{clip.video_id, clip.frame_index, clip.object_id, 0.0, 0.0};
  if (r.latents.fea_flow) s.s_f = consistency_loss(r.latents.fea_frame, *r.latents.fea_flow);
  s.s_p = intensity_loss(r.xhat, clip.target_frame);
  return s;
}

std::vector<ObjectScore> object_scores(std::span<const StClip> clips, const ModelParameters<float>& params,
                                       const Ablation& ablation, int batch_size) {
  std::vector<ObjectScore> out;
  out.reserve(clips.size());
  const std::size_t plane = static_cast<std::size_t>(kClipSize) * kClipSize;
  for (std::size_t start = 0; start < clips.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(clips.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const ClipBatch b = make_batch(clips, idx, ablation.use_flow);
    const BatchOutput<float> o = forward_batch(params, b.frames, b.flows, ablation, Mode::eval);
    const std::size_t latent = o.fea_frame.size() / idx.size();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const StClip& c = clips[idx[k]];
      ObjectScore s{c.video_id, c.frame_index, c.object_id, 0.0, 0.0};
      if (ablation.use_flow)
        s.s_f = consistency_loss<float>(std::span<const float>(o.fea_frame.data() + k * latent, latent),
                                        std::span<const float>(o.fea_flow.data() + k * latent, latent));
      const Tensorf xhat({1, kClipSize, kClipSize},
                         std::vector<float>(o.xhat.data() + k * plane, o.xhat.data() + (k + 1) * plane));
      s.s_p = intensity_loss(xhat, c.target_frame);
      out.push_back(std::move(s));
    }
  }
  return out;
}

NormStats fit_norm_stats(std::span<const ObjectScore> scores) {
  if (scores.size() < 2) fail(ErrorKind::data, "fit_norm_stats: need at least 2 training scores");
  const double n = static_cast<double>(scores.size());
  double sf = 0, sp = 0;
  for (const auto& s : scores) {
    sf += s.s_f;
    sp += s.s_p;
  }
  NormStats st;
  st.u_f = sf / n;
  st.u_p = sp / n;
  double vf = 0, vp = 0;
  for (const auto& s : scores) {
    vf += (s.s_f - st.u_f) * (s.s_f - st.u_f);
    vp += (s.s_p - st.u_p) * (s.s_p - st.u_p);
  }
  st.delta_f = std::max(std::sqrt(vf / n), kStdFloor);
  st.delta_p = std::max(std::sqrt(vp / n), kStdFloor);
  return st;
}

double fuse_scores(const ObjectScore& obj, const NormStats& st, const ScoreWeights& w) {
  return w.w_f * (obj.s_f - st.u_f) / st.delta_f + w.w_p * (obj.s_p - st.u_p) / st.delta_p;
}

std::vector<FrameScore> frame_scores(std::span<const ObjectScore> objects, const NormStats& stats,
                                     const ScoreWeights& weights, std::span<const FrameKey> universe) {
  if (universe.empty()) fail(ErrorKind::data, "frame_scores: empty frame universe");
  struct Acc {
    double s = -std::numeric_limits<double>::infinity();
    int n = 0;
    double s_f_max = 0.0, s_p_max = 0.0;
  };
  std::map<std::pair<std::string, int>, Acc> per_frame;
  std::map<std::string, double> video_min;
  double global_min = std::numeric_limits<double>::infinity();
  for (const auto& o : objects) {
    const double s = fuse_scores(o, stats, weights);
    Acc& a = per_frame[{o.video_id, o.frame_index}];
    if (a.n == 0) {
      a.s_f_max = o.s_f;
      a.s_p_max = o.s_p;
    }
    a.s = std::max(a.s, s);
    a.s_f_max = std::max(a.s_f_max, o.s_f);
    a.s_p_max = std::max(a.s_p_max, o.s_p);
    ++a.n;
    auto [it, inserted] = video_min.emplace(o.video_id, s);
    if (!inserted) it->second = std::min(it->second, s);
    global_min = std::min(global_min, s);
  }
  if (objects.empty()) global_min = 0.0;
  std::vector<FrameScore> out;
  out.reserve(universe.size());
  for (const auto& key : universe) {
    FrameScore fs{key.video_id, key.frame_index, 0.0, 0, 0.0, 0.0};
    auto it = per_frame.find({key.video_id, key.frame_index});
    if (it != per_frame.end()) {
      fs.s = it->second.s;
      fs.n_objects = it->second.n;
      fs.s_f_max = it->second.s_f_max;
      fs.s_p_max = it->second.s_p_max;
    } else {
      auto vm = video_min.find(key.video_id);
      fs.s = vm != video_min.end() ? vm->second : global_min;
    }
    out.push_back(std::move(fs));
  }
  return out;
}

void save_stats(const std::filesystem::path& path, const NormStats& st, const std::string& config_hash) {
  std::ofstream o(path);
  if (!o) fail(ErrorKind::data, "cannot write stats file " + path.string());
  o << std::setprecision(17);
  o << "u_f=" << st.u_f << "\ndelta_f=" << st.delta_f << "\nu_p=" << st.u_p << "\ndelta_p=" << st.delta_p
    << "\nconfig_hash=" << config_hash << "\n";
}

NormStats load_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open stats file " + path.string());
  NormStats st;
  int seen = 0;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    double* dst = k == "u_f" ? &st.u_f : k == "delta_f" ? &st.delta_f : k == "u_p" ? &st.u_p : k == "delta_p" ? &st.delta_p : nullptr;
    if (!dst) continue;
    *dst = std::stod(v);
    ++seen;
  }
  if (seen != 4) fail(ErrorKind::data, "stats file " + path.string() + " is incomplete");
  return st;
}

void write_frame_scores(const std::filesystem::path& path, std::span<const FrameScore> scores) {
  std::ofstream o(path);
  if (!o) fail(ErrorKind::data, "cannot write score file " + path.string());
  o << "video_id,frame_index,score,n_objects,s_f_max,s_p_max\n" << std::setprecision(17);
  for (const auto& s : scores)
    o << s.video_id << ',' << s.frame_index << ',' << s.s << ',' << s.n_objects << ',' << s.s_f_max << ',' << s.s_p_max
      << '\n';
}

std::vector<FrameScore> read_frame_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open score file " + path.string());
  std::vector<FrameScore> out;
  std::string line;
  std::getline(in, line);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    FrameScore s;
    std::string f[6];
    for (auto& x : f)
      if (!std::getline(ss, x, ',')) fail(ErrorKind::data, path.string() + ":" + std::to_string(line_no) + ": malformed score row");
    s.video_id = f[0];
    s.frame_index = std::stoi(f[1]);
    s.s = std::stod(f[2]);
    s.n_objects = std::stoi(f[3]);
    s.s_f_max = std::stod(f[4]);
    s.s_p_max = std::stod(f[5]);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace amsrc
