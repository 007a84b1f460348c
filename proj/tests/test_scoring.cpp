#include <doctest.h>

#include <cmath>
#include <random>

#include "amsrc/evaluation.hpp"
#include "amsrc/objectives.hpp"
#include "amsrc/scoring.hpp"
#include "test_util.hpp"

using namespace amsrc;

namespace {

ObjectScore obj(const std::string& vid, int frame, double s_f, double s_p) { return {vid, frame, "o", s_f, s_p}; }

StClip random_clip(std::mt19937_64& rng, int t, int frame_index) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f), fl(-2.0f, 2.0f);
  StClip c;
  c.input_frames = Tensorf({t, kClipSize, kClipSize});
  c.target_frame = Tensorf({1, kClipSize, kClipSize});
  c.input_flows = Tensorf({t, 2, kClipSize, kClipSize});
  for (auto& v : c.input_frames.values()) v = u(rng);
  for (auto& v : c.target_frame.values()) v = u(rng);
  for (auto& v : c.input_flows.values()) v = fl(rng);
  c.video_id = "v";
  c.frame_index = frame_index;
  c.object_id = "f" + std::to_string(frame_index) + "_o0";
  return c;
}

ModelConfig tiny_config() {
  ModelConfig m;
  m.widths = {4, 8, 16};
  return m;
}

}  // namespace

TEST_CASE("fit_norm_stats examples") {
  const std::vector<ObjectScore> sp{obj("v", 0, 0.5, 0.0), obj("v", 1, 0.5, 2.0)};
  const NormStats a = fit_norm_stats(sp);
  CHECK(a.u_p == 1.0);
  CHECK(a.delta_p == 1.0);
  CHECK(a.delta_f == kStdFloor);

  const std::vector<double> f{0.1, 0.2, 0.3};
  std::vector<ObjectScore> sf;
  for (double v : f) sf.push_back(obj("v", 0, v, 0.0));
  double mean = 0;
  for (double v : f) mean += v;
  mean /= 3;
  double var = 0;
  for (double v : f) var += (v - mean) * (v - mean);
  const double oracle_std = std::sqrt(var / 3);
  const NormStats b = fit_norm_stats(sf);
  CHECK(std::abs(b.u_f - 0.2) < 1e-12);
  CHECK(std::abs(b.delta_f - oracle_std) < 1e-12);
  CHECK(std::abs(b.delta_f - std::sqrt(1.0 / 150.0)) < 1e-12);

  CHECK_THROWS_AS(fit_norm_stats(std::vector<ObjectScore>{obj("v", 0, 1, 1)}), Error);
}

TEST_CASE("fuse_scores examples") {
  const NormStats st{0.3, 0.05, 0.02, 0.004};
  CHECK(fuse_scores(obj("v", 0, st.u_f, st.u_p), st, ScoreWeights{0.5, 0.5}) == 0.0);
  CHECK(std::abs(fuse_scores(obj("v", 0, st.u_f + st.delta_f, st.u_p), st, ScoreWeights{1, 0}) - 1.0) < 1e-12);
  const double ped2 =
      fuse_scores(obj("v", 0, st.u_f + 2 * st.delta_f, st.u_p + 5 * st.delta_p), st, ScoreWeights{1, 0.01});
  CHECK(std::abs(ped2 - 2.05) < 1e-9);
}

TEST_CASE("fuse_scores: affine equivariance and frame-only reduction") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const NormStats st{u(rng), 0.01 + u(rng), u(rng), 0.01 + u(rng)};
    const ScoreWeights w{u(rng), 0.1 + u(rng)};
    ObjectScore o = obj("v", 0, u(rng), u(rng));
    const double base = fuse_scores(o, st, w);
    o.s_f += st.delta_f;
    CHECK(fuse_scores(o, st, w) - base == doctest::Approx(w.w_f).epsilon(1e-9));

    // Without the flow stream s_f is 0 and fitted stats give u_f = 0.
    const std::vector<ObjectScore> train{obj("v", 0, 0, u(rng)), obj("v", 1, 0, u(rng)), obj("v", 2, 0, u(rng))};
    const NormStats fs = fit_norm_stats(train);
    const ObjectScore test = obj("v", 3, 0, u(rng));
    CHECK(fuse_scores(test, fs, w) == doctest::Approx(w.w_p * (test.s_p - fs.u_p) / fs.delta_p).epsilon(1e-12));
  }
}

TEST_CASE("frame_scores: max aggregation and objectless frames") {
  const NormStats unit{0, 1, 0, 1};
  const ScoreWeights w{1, 0};
  const std::vector<ObjectScore> objs{obj("a", 0, -0.2, 0), obj("a", 0, 1.7, 0), obj("a", 0, 0.3, 0),
                                      obj("a", 1, 0.9, 0),  obj("a", 2, -0.5, 0), obj("b", 0, 0.4, 0)};
  const std::vector<FrameKey> universe{{"a", 0}, {"a", 1}, {"a", 2}, {"a", 3}, {"b", 0}, {"c", 0}};
  const auto fs = frame_scores(objs, unit, w, universe);
  REQUIRE(fs.size() == universe.size());
  CHECK(fs[0].s == 1.7);
  CHECK(fs[0].n_objects == 3);
  CHECK(fs[1].s == 0.9);
  CHECK(fs[3].s == -0.5);
  CHECK(fs[3].n_objects == 0);
  CHECK(fs[5].s == -0.5);  // video without objects: global minimum
  CHECK_THROWS_AS(frame_scores(objs, unit, w, std::vector<FrameKey>{}), Error);

  const auto none = frame_scores(std::vector<ObjectScore>{}, unit, w, universe);
  CHECK(none.size() == universe.size());
}

TEST_CASE("frame_scores: ranking invariance under weight rescaling") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0), c(0.01, 100.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ObjectScore> objs;
    std::vector<FrameKey> universe;
    FrameLabels labels;
    for (int v = 0; v < 3; ++v) {
      const std::string id = "v" + std::to_string(v);
      for (int f = 0; f < 20; ++f) {
        universe.push_back({id, f});
        labels[id].push_back(f % 4 == 0 ? 1 : 0);
        const int n = static_cast<int>(rng() % 3);
        for (int k = 0; k < n; ++k) objs.push_back(obj(id, f, u(rng), u(rng)));
      }
    }
    const NormStats st{0.5, 0.2, 0.4, 0.3};
    const ScoreWeights w{u(rng), u(rng) + 0.01};
    const double k = c(rng);
    const ScoreWeights wk{k * w.w_f, k * w.w_p};
    const auto a = align_scores(frame_scores(objs, st, w, universe), labels);
    const auto b = align_scores(frame_scores(objs, st, wk, universe), labels);
    CHECK(std::abs(auroc(a.scores, a.labels) - auroc(b.scores, b.labels)) <= 1e-12);
  }
}

TEST_CASE("object_score shares the loss code path") {
  std::mt19937_64 rng(3);
  const auto params = init_parameters<float>(tiny_config(), 9);
  std::vector<StClip> clips;
  for (int i = 0; i < 5; ++i) clips.push_back(random_clip(rng, 4, 4 + i));
  const Ablation full;
  for (const auto& c : clips) {
    const ObjectScore s = object_score(c, params, full);
    const ForwardResult r = forward(c, params, full);
    REQUIRE(r.latents.fea_flow.has_value());
    CHECK(s.s_f == static_cast<double>(consistency_loss(r.latents.fea_frame, *r.latents.fea_flow)));
    CHECK(s.s_p == static_cast<double>(intensity_loss(r.xhat, c.target_frame)));
    CHECK(s.s_f >= 0.0);
    CHECK(s.s_f <= 1.0);
    CHECK(s.s_p >= 0.0);
  }
  const auto batched = object_scores(clips, params, full, 2);
  REQUIRE(batched.size() == clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const ObjectScore s = object_score(clips[i], params, full);
    CHECK(batched[i].s_f == doctest::Approx(s.s_f).epsilon(1e-4));
    CHECK(batched[i].s_p == doctest::Approx(s.s_p).epsilon(1e-4));
    CHECK(batched[i].object_id == clips[i].object_id);
  }

  const Ablation frame_only{false, false};
  for (const auto& s : object_scores(clips, params, frame_only)) CHECK(s.s_f == 0.0);
}

TEST_CASE("object_score: parallel latents give s_f near zero, perfect prediction gives s_p zero") {
  // With the two encoders holding identical weights and the flow input built
  // so the first layer sees the same activations, the latents coincide.
  ModelConfig m = tiny_config();
  m.t = 1;
  auto params = init_parameters<float>(m, 4);
  for (auto& [name, t] : params.tensors) {
    if (name.rfind("flow_enc.", 0) != 0) continue;
    const std::string twin = "frame_enc." + name.substr(9);
    if (name == "flow_enc.l0.a.conv.weight") {
      // Flow layer 0 has 2 input channels; put the frame kernel on dx, zero on dy.
      const Tensorf& fw = params.tensors.at(twin);
      t.fill(0.0f);
      for (int o = 0; o < t.dim(0); ++o)
        for (int k = 0; k < 9; ++k) t[(o * 2 + 0) * 9 + k] = fw[o * 9 + k];
    } else {
      t = params.tensors.at(twin);
    }
  }
  std::mt19937_64 rng(5);
  StClip c = random_clip(rng, 1, 1);
  const std::size_t plane = kClipSize * kClipSize;
  for (std::size_t i = 0; i < plane; ++i) {
    c.input_flows[i] = c.input_frames[i];
    c.input_flows[plane + i] = 0.0f;
  }
  const ObjectScore s = object_score(c, params, Ablation{});
  CHECK(s.s_f < 1e-6);

  const ForwardResult r = forward(c, params, Ablation{});
  StClip exact = c;
  exact.target_frame = r.xhat;
  CHECK(object_score(exact, params, Ablation{}).s_p == 0.0);
}

TEST_CASE("stats and frame score files round-trip") {
  testutil::TempDir dir("scores");
  const NormStats st{0.123456789012345, 0.2, 1e-12, 3.5};
  save_stats(dir.path() / "stats.txt", st, "abc");
  const NormStats back = load_stats(dir.path() / "stats.txt");
  CHECK(back.u_f == st.u_f);
  CHECK(back.delta_f == st.delta_f);
  CHECK(back.u_p == st.u_p);
  CHECK(back.delta_p == st.delta_p);

  const std::vector<FrameScore> fs{{"a", 0, -0.1234567890123, 2, 0.5, 0.25}, {"b", 7, 3.0, 0, 0.0, 0.0}};
  write_frame_scores(dir.path() / "fs.csv", fs);
  const auto rb = read_frame_scores(dir.path() / "fs.csv");
  REQUIRE(rb.size() == 2);
  CHECK(rb[0].s == fs[0].s);
  CHECK(rb[0].n_objects == 2);
  CHECK(rb[1].video_id == "b");
  CHECK(rb[1].frame_index == 7);
}
