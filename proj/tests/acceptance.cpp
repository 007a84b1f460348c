// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 125).

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "amsrc/config.hpp"
#include "amsrc/evaluation.hpp"
#include "amsrc/model.hpp"
#include "amsrc/objectives.hpp"
#include "amsrc/pipeline.hpp"
#include "amsrc/scoring.hpp"
#include "amsrc/trainer.hpp"

using namespace amsrc;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;
using Td = Tensor<double>;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto start = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << name << "  [" << o.detail << "; "
            << std::fixed << std::setprecision(2) << seconds_since(start) << " s]" << std::defaultfloat << std::endl;
}

std::string num(double v, int precision = 6) {
  std::ostringstream o;
  o << std::setprecision(precision) << v;
  return o.str();
}

template <class T>
Tensor<T> random_tensor(std::mt19937_64& rng, Shape s, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(s));
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

// ---- independent oracles -------------------------------------------------

double oracle_mse(const Td& a, const Td& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double oracle_gradient_loss(const Td& xh, const Td& x) {
  const int h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t planes = x.size() / static_cast<std::size_t>(h * w);
  double total = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    auto at = [&](const Td& t, int i, int j) { return t[p * h * w + i * w + j]; };
    double s = 0;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        if (i > 0) s += std::abs(std::abs(at(xh, i, j) - at(xh, i - 1, j)) - std::abs(at(x, i, j) - at(x, i - 1, j)));
        if (j > 0) s += std::abs(std::abs(at(xh, i, j) - at(xh, i, j - 1)) - std::abs(at(x, i, j) - at(x, i, j - 1)));
      }
    total += s / (h * w);
  }
  return total / static_cast<double>(planes);
}

double oracle_cosine_loss(const Td& a, const Td& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return 1.0 - dot / ((std::sqrt(na) + 1e-8) * (std::sqrt(nb) + 1e-8));
}

double brute_force_auroc(const std::vector<double>& s, const std::vector<int>& l) {
  double wins = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!l[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j]) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

// ---- criteria ------------------------------------------------------------

Outcome fgfm_identity() {
  std::mt19937_64 rng(101);
  const auto start = Clock::now();
  int exact = 0, halved = 0;
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Shape s{1 + static_cast<int>(rng() % 128), 4, 4};
    const Tensorf f = random_tensor<float>(rng, s, 0, 4);
    const Tensorf v = random_tensor<float>(rng, s, 0, 4);
    exact += fgfm_fuse(f, Tensorf(s)) == f;
    const Tensorf h = fgfm_fuse(Tensorf(s), v);
    double err = 0;
    for (std::size_t i = 0; i < v.size(); ++i) err = std::max(err, std::abs(double(h[i]) - 0.5 * v[i]));
    worst = std::max(worst, err);
    halved += err <= 1e-6;
  }
  const double elapsed = seconds_since(start);
  return {exact == 1000 && halved == 1000 && elapsed < 1.0,
          "fuse(f,0)==f " + std::to_string(exact) + "/1000, |fuse(0,v)-v/2| max " + num(worst) + ", " +
              num(elapsed, 3) + " s (< 1 s)"};
}

Outcome objectives_examples() {
  std::vector<std::string> bad;
  auto expect = [&bad](const std::string& what, double got, double want) {
    if (!(std::abs(got - want) <= 1e-6)) bad.push_back(what + "=" + num(got, 10) + " want " + num(want, 10));
  };
  std::mt19937_64 rng(202);

  const Td x({1, 32, 32}, 0.3);
  expect("int(x,x)", intensity_loss(x, x), 0.0);
  expect("int(0.8,0.3)", intensity_loss(Td({1, 32, 32}, 0.8), x), oracle_mse(Td({1, 32, 32}, 0.8), x));
  Td y = x;
  y[100] += 1.0;
  expect("int(one pixel)", intensity_loss(y, x), 1.0 / 1024.0);

  expect("gd(const)", gradient_loss(Td({1, 32, 32}, 0.7), Td({1, 32, 32}, 0.1)), 0.0);
  const Td tx({1, 2, 2}, std::vector<double>{0, 1, 0, 1});
  const Td txh({1, 2, 2}, 0.0);
  expect("gd(2x2)", gradient_loss(txh, tx), oracle_gradient_loss(txh, tx));
  expect("gd(2x2) value", oracle_gradient_loss(txh, tx), 0.5);
  const Td r1 = random_tensor<double>(rng, {3, 7, 9}, 0, 1), r2 = random_tensor<double>(rng, {3, 7, 9}, 0, 1);
  expect("gd(random)", gradient_loss(r1, r2), oracle_gradient_loss(r1, r2));

  const Td f = random_tensor<double>(rng, {8, 4, 4}, 0.1, 1);
  Td neg = f;
  for (auto& v : neg.values()) v = -v;
  expect("sim(f,f)", consistency_loss(f, f), 0.0);
  expect("sim(orthogonal)", consistency_loss(Td({4}, std::vector<double>{1, 0, 0, 0}), Td({4}, std::vector<double>{0, 3, 0, 0})), 1.0);
  expect("sim(f,-f)", consistency_loss(f, neg), 2.0);
  expect("sim(0,0)", consistency_loss(Td({8, 4, 4}), Td({8, 4, 4})), 1.0);
  expect("sim(random)", consistency_loss(r1, r2), oracle_cosine_loss(r1, r2));

  ModelParameters<double> p;
  p.tensors.emplace("a.conv.weight", Td({2}, std::vector<double>{3, 4}));
  p.tensors.emplace("a.conv.bias", Td({1}, std::vector<double>{9}));
  expect("reg(3,4)", regularization_loss(p), 25.0);

  expect("total(.2,.1,.3,.05)", total_loss(0.2, 0.1, 0.3, 0.05, LossWeights{1, 1, 1, 1}).total, 0.65);
  expect("total(shanghaitech)", total_loss(0, 0, 0.1, 0, LossWeights{1, 1, 10, 1}).total, 1.0);

  int invariant = 0;
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  for (int trial = 0; trial < 1000; ++trial) {
    const Td a = random_tensor<double>(rng, {16, 4, 4}, 0, 1), b = random_tensor<double>(rng, {16, 4, 4}, 0, 1);
    const double alpha = scale(rng), beta = scale(rng);
    Td as = a, bs = b;
    for (auto& v : as.values()) v *= alpha;
    for (auto& v : bs.values()) v *= beta;
    invariant += std::abs(consistency_loss(as, bs) - consistency_loss(a, b)) <= 1e-6;
  }
  if (invariant != 1000) bad.push_back("scale invariance " + std::to_string(invariant) + "/1000");
  std::string detail = bad.empty() ? "all examples within 1e-6, scale invariance 1000/1000" : "";
  for (const auto& b : bad) detail += (detail.empty() ? "" : "; ") + b;
  return {bad.empty(), detail};
}

Outcome gradient_check() {
  ModelConfig m;
  m.widths = {4, 8, 16};
  auto params = init_parameters<double>(m, 303);
  std::mt19937_64 rng(304);
  for (auto& [k, v] : params.tensors)
    if (k.find(".bn.") != std::string::npos || k.find("bias") != std::string::npos)
      for (auto& x : v.values()) x += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
  const int n = 3;
  const auto frames = random_tensor<double>(rng, {n, 4, 32, 32}, 0, 1);
  const auto flows = random_tensor<double>(rng, {n, 8, 32, 32}, -2, 2);
  const auto targets = random_tensor<double>(rng, {n, 1, 32, 32}, 0, 1);
  const LossWeights w = preset_config("synth").loss;
  const Ablation full;
  auto loss = [&](const ModelParameters<double>& p) {
    return batch_objective<double>(p, frames, flows, targets, w, full, true, Mode::train, nullptr).total;
  };
  auto grads = zero_gradients(params);
  batch_objective<double>(params, frames, flows, targets, w, full, true, Mode::train, &grads);

  // Uniform over the flattened parameter vector.
  std::size_t total = 0;
  for (const auto& [k, v] : params.tensors) total += v.size();
  const auto start = Clock::now();
  int ok = 0;
  double worst = 0;
  std::string worst_name;
  const double h = 1e-6;
  for (int pick = 0; pick < 200; ++pick) {
    std::size_t flat = rng() % total;
    std::string name;
    for (const auto& [k, v] : params.tensors) {
      if (flat < v.size()) {
        name = k;
        break;
      }
      flat -= v.size();
    }
    auto& t = params.tensors.at(name);
    const double orig = t[flat];
    t[flat] = orig + h;
    const double lp = loss(params);
    t[flat] = orig - h;
    const double lm = loss(params);
    t[flat] = orig;
    const double numeric = (lp - lm) / (2 * h);
    const double analytic = grads.at(name)[flat];
    const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    ok += rel < 1e-3;
    if (rel > worst) {
      worst = rel;
      worst_name = name + "[" + std::to_string(flat) + "]";
    }
  }
  const double elapsed = seconds_since(start);
  return {ok == 200 && elapsed < 120.0, std::to_string(ok) + "/200 within rel 1e-3 (" + std::to_string(total) +
                                            " params, worst " + num(worst, 3) + " at " + worst_name + "), " +
                                            num(elapsed, 3) + " s (< 120 s)"};
}

Outcome auroc_vs_brute_force() {
  std::mt19937_64 rng(404);
  int ok = 0;
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 999);
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (int i = 0; i < n; ++i) {
      s[i] = trial % 3 == 0 ? static_cast<double>(rng() % 10) : std::normal_distribution<double>(0, 1)(rng);
      l[i] = static_cast<int>(rng() % 2);
    }
    l[0] = 0;
    l[1] = 1;
    const double err = std::abs(auroc(s, l) - brute_force_auroc(s, l));
    worst = std::max(worst, err);
    ok += err <= 1e-12;
  }
  return {ok == 100, std::to_string(ok) + "/100 instances within 1e-12, max error " + num(worst, 3)};
}

Outcome fusion() {
  const NormStats st{0.3, 0.05, 0.02, 0.004};
  auto o = [](double sf, double sp) { return ObjectScore{"v", 0, "o", sf, sp}; };
  auto oracle = [&](double sf, double sp, ScoreWeights w) {
    return w.w_f * (sf - st.u_f) / st.delta_f + w.w_p * (sp - st.u_p) / st.delta_p;
  };
  const double e1 = fuse_scores(o(st.u_f, st.u_p), st, {0.5, 0.5});
  const double e2 = fuse_scores(o(st.u_f + st.delta_f, st.u_p), st, {1, 0});
  const double e3 = fuse_scores(o(st.u_f + 2 * st.delta_f, st.u_p + 5 * st.delta_p), st, {1, 0.01});
  const bool examples = std::abs(e1 - 0.0) <= 1e-9 && std::abs(e2 - 1.0) <= 1e-9 && std::abs(e3 - 2.05) <= 1e-9 &&
                        std::abs(e3 - oracle(st.u_f + 2 * st.delta_f, st.u_p + 5 * st.delta_p, {1, 0.01})) <= 1e-12;

  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> u(0, 1), k(0.01, 100);
  int ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ObjectScore> objs;
    std::vector<FrameKey> universe;
    FrameLabels labels;
    for (int v = 0; v < 4; ++v) {
      const std::string id = "v" + std::to_string(v);
      for (int f = 0; f < 25; ++f) {
        universe.push_back({id, f});
        labels[id].push_back(static_cast<int>(rng() % 4 == 0) | (f == 0));
        if (f == 1) labels[id].back() = 0;
        for (int j = static_cast<int>(rng() % 3); j > 0; --j) objs.push_back({id, f, "o", u(rng), u(rng)});
      }
    }
    const NormStats s{u(rng), 0.05 + u(rng), u(rng), 0.05 + u(rng)};
    const ScoreWeights w{u(rng), u(rng)};
    const double c = k(rng);
    const auto a = align_scores(frame_scores(objs, s, w, universe), labels);
    const auto b = align_scores(frame_scores(objs, s, {c * w.w_f, c * w.w_p}, universe), labels);
    ok += std::abs(auroc(a.scores, a.labels) - auroc(b.scores, b.labels)) <= 1e-12;
  }
  return {examples && ok == 100, "examples 0 / 1 / 2.05 " + std::string(examples ? "ok" : "WRONG") +
                                     " (got " + num(e1) + ", " + num(e2) + ", " + num(e3) + "), rescaling " +
                                     std::to_string(ok) + "/100 within 1e-12"};
}

Outcome schedule() {
  const TrainConfig c = preset_config("ped2");
  int ok = 0;
  double worst = 0;
  for (int e = 0; e < 60; ++e) {
    double expected = 2e-4;
    for (int k = 0; k < e / 10; ++k) expected *= 0.8;
    const double err = std::abs(learning_rate_at(c, e) - expected) / expected;
    worst = std::max(worst, err);
    ok += err <= 1e-12;
  }
  return {ok == 60, std::to_string(ok) + "/60 epochs match 2e-4 * 0.8^floor(e/10), max rel error " + num(worst, 3)};
}

// ---- synthetic benchmark ----------------------------------------------------

struct SynthRun {
  fs::path root;
  TrainConfig config;
  double e = 0, d = 0, a = 0;
  double seconds = 0;
  bool done = false;
};

double full_pipeline(const TrainConfig& c, const fs::path& root) {
  for (Command cmd : {Command::synth, Command::extract, Command::train, Command::score}) run_pipeline(cmd, c, root, &std::cerr);
  return *run_pipeline(Command::eval, c, root, &std::cerr).auroc;
}

Outcome synthetic_benchmark(SynthRun& run) {
  const auto start = Clock::now();
  run.e = full_pipeline(run.config, run.root);
  const auto rows = run_ablation_matrix(run.config, run.root, &std::cerr, {"A", "D"});
  for (const auto& r : rows) {
    if (!r.auroc) return {false, "row " + r.name + " failed: " + r.error};
    (r.name == "A" ? run.a : run.d) = *r.auroc;
  }
  run.seconds = seconds_since(start);
  run.done = true;
  const bool pass = run.e >= 0.90 && run.e >= run.d && run.d >= run.a - 0.02 && run.seconds <= 900.0;
  return {pass, "AUROC(E) " + num(run.e) + " (>= 0.90), AUROC(D) " + num(run.d) + ", AUROC(A) " + num(run.a) +
                    ", E >= D >= A - 0.02, " + num(run.seconds, 4) + " s (<= 900 s)"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const SynthRun& first, const fs::path& second_root) {
  if (!first.done) return {false, "first run did not complete"};
  const double again = full_pipeline(first.config, second_root);
  const PipelinePaths a(first.root), b(second_root);
  const bool same_scores = slurp(a.frame_scores) == slurp(b.frame_scores) && !slurp(a.frame_scores).empty();
  const bool same_auroc = again == first.e;
  return {same_scores && same_auroc, std::string("frame_scores.csv ") + (same_scores ? "identical" : "DIFFER") +
                                         ", AUROC " + num(first.e, 17) + " vs " + num(again, 17)};
}

struct TruthBox {
  std::string kind;
  double x0, y0, x1, y1;
};

Outcome motion_semantics(const SynthRun& run) {
  if (!run.done) return {false, "synthetic run did not complete"};
  const PipelinePaths paths(run.root);
  std::map<std::pair<std::string, int>, std::vector<TruthBox>> truth;
  {
    std::ifstream in(paths.synth_truth);
    std::string vid, sprite, kind;
    int frame = 0;
    TruthBox b{};
    while (in >> vid >> frame >> sprite >> kind >> b.x0 >> b.y0 >> b.x1 >> b.y1) {
      b.kind = kind;
      truth[{vid, frame}].push_back(b);
    }
  }
  // Each RoI takes the kind of the sprite it overlaps most.
  std::map<std::tuple<std::string, int, std::string>, std::string> kind_of;
  for (const RoiBox& r : load_rois(paths.rois("test"))) {
    double best = 0;
    std::string kind;
    for (const TruthBox& t : truth[{r.video_id, r.frame_index}]) {
      const double ix = std::min<double>(r.x + r.w, t.x1) - std::max<double>(r.x, t.x0);
      const double iy = std::min<double>(r.y + r.h, t.y1) - std::max<double>(r.y, t.y0);
      const double area = std::max(0.0, ix) * std::max(0.0, iy);
      if (area > best) {
        best = area;
        kind = t.kind;
      }
    }
    if (!kind.empty()) kind_of[{r.video_id, r.frame_index, r.object_id}] = kind;
  }
  std::ifstream in(paths.object_scores);
  std::string line;
  std::getline(in, line);
  double sum_motion = 0, sum_normal = 0;
  int n_motion = 0, n_normal = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string vid, frame, obj, sf;
    std::getline(ss, vid, ',');
    std::getline(ss, frame, ',');
    std::getline(ss, obj, ',');
    std::getline(ss, sf, ',');
    const auto it = kind_of.find({vid, std::stoi(frame), obj});
    if (it == kind_of.end()) continue;
    if (it->second == "motion") {
      sum_motion += std::stod(sf);
      ++n_motion;
    } else if (it->second == "normal") {
      sum_normal += std::stod(sf);
      ++n_normal;
    }
  }
  if (n_motion == 0 || n_normal == 0) return {false, "no motion-anomaly or normal clips found"};
  const double mm = sum_motion / n_motion, mn = sum_normal / n_normal;
  return {mm > mn, "mean S_f motion " + num(mm) + " (" + std::to_string(n_motion) + " clips) > normal " + num(mn) +
                       " (" + std::to_string(n_normal) + " clips)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AMSRC acceptance suite"};
  std::string work = (fs::temp_directory_path() / "amsrc_acceptance").string();
  std::uint64_t seed = 0;
  app.add_option("--work", work, "Scratch directory for the synthetic runs");
  app.add_option("--seed", seed, "Master seed for the synthetic benchmark");
  CLI11_PARSE(app, argc, argv);

  fs::remove_all(work);
  fs::create_directories(work);

  report(1, "FGFM identities", fgfm_identity);
  report(2, "objective examples and consistency scale invariance", objectives_examples);
  report(3, "analytic gradients vs central differences (tiny model)", gradient_check);
  report(4, "AUROC vs brute-force pair counting", auroc_vs_brute_force);
  report(5, "score fusion examples and ranking invariance", fusion);
  report(6, "learning-rate schedule", schedule);

  SynthRun run;
  run.root = fs::path(work) / "run1";
  run.config = preset_config("synth");
  run.config.seed = seed;
  report(7, "synthetic benchmark AUROC and ablation ordering", [&] { return synthetic_benchmark(run); });
  report(8, "determinism of the full pipeline", [&] { return determinism(run, fs::path(work) / "run2"); });
  report(9, "motion anomalies raise S_f", [&] { return motion_semantics(run); });

  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return std::min(failures, 125);
}
