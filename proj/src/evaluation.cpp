#include "amsrc/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "amsrc/error.hpp"

namespace amsrc {

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(ErrorKind::data, "auroc: scores and labels differ in length");
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += (l != 0);
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) fail(ErrorKind::data, "AUROC undefined: labels contain a single class");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of mid-ranks of the positives; ranks are doubled to stay integral.
  long double rank2_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const std::size_t mid2 = i + j + 1;  // 2 * mean of 1-based ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank2_sum += static_cast<long double>(mid2);
    i = j;
  }
  const long double u = rank2_sum / 2 - static_cast<long double>(n_pos) * (n_pos + 1) / 2;
  return static_cast<double>(u / (static_cast<long double>(n_pos) * n_neg));
}

LabeledScores align_scores(std::span<const FrameScore> frames, const FrameLabels& labels) {
  LabeledScores out;
  for (const auto& f : frames) {
    auto it = labels.find(f.video_id);
    if (it == labels.end()) fail(ErrorKind::data, "no labels for video " + f.video_id);
    if (f.frame_index < 0 || f.frame_index >= static_cast<int>(it->second.size()))
      fail(ErrorKind::data, "frame " + std::to_string(f.frame_index) + " of video " + f.video_id + " has no label");
    out.scores.push_back(f.s);
    out.labels.push_back(it->second[f.frame_index]);
  }
  return out;
}

void export_curves(std::span<const FrameScore> frames, const FrameLabels& labels, const std::filesystem::path& dir) {
  std::map<std::string, std::vector<const FrameScore*>> per_video;
  for (const auto& f : frames) per_video[f.video_id].push_back(&f);
  std::filesystem::create_directories(dir);
  for (const auto& [id, rows] : per_video) {
    auto it = labels.find(id);
    if (it == labels.end() || it->second.size() != rows.size())
      fail(ErrorKind::data, "export_curves: " + std::to_string(rows.size()) + " scores but " +
                                std::to_string(it == labels.end() ? 0 : it->second.size()) + " labels for video " + id);
    std::ofstream o(dir / (id + ".csv"));
    if (!o) fail(ErrorKind::data, "cannot write curve for video " + id);
    o << "frame_index,score,label\n" << std::setprecision(17);
    for (const FrameScore* r : rows) {
      if (r->frame_index < 0 || r->frame_index >= static_cast<int>(it->second.size()))
        fail(ErrorKind::data, "export_curves: frame index out of range in video " + id);
      o << r->frame_index << ',' << r->s << ',' << it->second[r->frame_index] << '\n';
    }
  }
}

std::vector<CurveRow> read_curve(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open curve " + path.string());
  std::vector<CurveRow> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    rows.push_back({std::stoi(a), std::stod(b), std::stoi(c)});
  }
  return rows;
}

}  // namespace amsrc
