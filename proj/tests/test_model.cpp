#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "amsrc/model.hpp"
#include "amsrc/trainer.hpp"
#include "test_util.hpp"

using namespace amsrc;

namespace {

template <class T>
Tensor<T> random_tensor(std::mt19937_64& rng, Shape s, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(s));
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

StClip random_clip(std::mt19937_64& rng, int t) {
  StClip c;
  c.input_frames = random_tensor<float>(rng, {t, kClipSize, kClipSize}, 0, 1);
  c.target_frame = random_tensor<float>(rng, {1, kClipSize, kClipSize}, 0, 1);
  c.input_flows = random_tensor<float>(rng, {t, 2, kClipSize, kClipSize}, -2, 2);
  c.video_id = "v";
  c.frame_index = t;
  c.object_id = "o";
  return c;
}

ModelConfig tiny_config() {
  ModelConfig m;
  m.widths = {4, 8, 16};
  return m;
}

template <class T>
void zero_all(ModelParameters<T>& p) {
  for (auto& [k, v] : p.tensors) v.fill(T{0});
}

// Silences the flow stream: the last flow block's affine output is 0, so ReLU gives 0.
void silence_flow(ModelParameters<float>& p) {
  const int last = p.config.levels - 1;
  const std::string name = "flow_enc.l" + std::to_string(last) + ".b.bn.";
  p.tensors.at(name + "gamma").fill(0.0f);
  p.tensors.at(name + "beta").fill(0.0f);
}

}  // namespace

TEST_CASE("default config shapes") {
  const ModelConfig m;
  const auto params = init_parameters<float>(m, 1);
  std::mt19937_64 rng(1);
  const StClip c = random_clip(rng, 4);
  const EncodedFrames enc = encode_frames(c.input_frames, params);
  CHECK(enc.fea_frame.shape() == Shape{128, 4, 4});
  REQUIRE(enc.skips.levels.size() == 3);
  CHECK(enc.skips.levels[0].shape() == Shape{32, 32, 32});
  CHECK(enc.skips.levels[1].shape() == Shape{64, 16, 16});
  CHECK(enc.skips.levels[2].shape() == Shape{128, 8, 8});
  const Tensorf flow = encode_flows(c.input_flows, params);
  CHECK(flow.shape() == Shape{128, 4, 4});
  const Tensorf xhat = decode(fgfm_fuse(enc.fea_frame, flow), enc.skips, params);
  CHECK(xhat.shape() == Shape{1, 32, 32});
  for (float v : xhat.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("shape round-trip for other depths and level counts") {
  std::mt19937_64 rng(2);
  for (int t : {1, 2, 4, 6})
    for (int levels : {1, 2, 3}) {
      ModelConfig m;
      m.t = t;
      m.levels = levels;
      m.widths.assign(static_cast<std::size_t>(levels), 4);
      const auto params = init_parameters<float>(m, 3);
      const StClip c = random_clip(rng, t);
      const ForwardResult r = forward(c, params);
      CHECK(r.xhat.shape() == c.target_frame.shape());
      CHECK(r.latents.fea_frame.shape() == m.latent_shape());
      REQUIRE(r.latents.fea_flow.has_value());
      CHECK(r.latents.fea_flow->shape() == r.latents.fea_frame.shape());
    }
}

TEST_CASE("shape errors name expected and actual shapes") {
  const auto params = init_parameters<float>(tiny_config(), 1);
  CHECK_THROWS_WITH_AS(encode_frames(Tensorf({3, 32, 32}), params), doctest::Contains("[4,32,32]"), Error);
  CHECK_THROWS_WITH_AS(encode_frames(Tensorf({3, 32, 32}), params), doctest::Contains("[3,32,32]"), Error);
  CHECK_THROWS_AS(encode_flows(Tensorf({4, 32, 32}), params), Error);
  const EncodedFrames enc = encode_frames(Tensorf({4, 32, 32}), params);
  SkipStack short_stack = enc.skips;
  short_stack.levels.pop_back();
  CHECK_THROWS_AS(decode(enc.fea_frame, short_stack, params), Error);
  CHECK_THROWS_AS(fgfm_fuse(Tensorf({2, 2}), Tensorf({2, 3})), Error);
}

TEST_CASE("zero parameters give zero latents and a 0.5 prediction") {
  auto params = init_parameters<float>(tiny_config(), 1);
  zero_all(params);
  std::mt19937_64 rng(4);
  const StClip c = random_clip(rng, 4);
  const EncodedFrames enc = encode_frames(c.input_frames, params);
  for (float v : enc.fea_frame.values()) CHECK(v == 0.0f);
  const Tensorf flow = encode_flows(Tensorf({4, 2, 32, 32}), params);
  for (float v : flow.values()) CHECK(v == 0.0f);
  SkipStack zero_skips = enc.skips;
  for (auto& s : zero_skips.levels) s.fill(0.0f);
  const Tensorf xhat = decode(Tensorf(params.config.latent_shape()), zero_skips, params);
  for (float v : xhat.values()) CHECK(v == 0.5f);
}

TEST_CASE("forward is deterministic and latents are nonnegative") {
  std::mt19937_64 rng(5);
  for (int seed = 0; seed < 4; ++seed) {
    const auto params = init_parameters<float>(tiny_config(), static_cast<std::uint64_t>(seed));
    const StClip c = random_clip(rng, 4);
    const ForwardResult a = forward(c, params);
    const ForwardResult b = forward(c, params);
    CHECK(a.xhat == b.xhat);
    CHECK(a.latents.fea_frame == b.latents.fea_frame);
    CHECK(*a.latents.fea_flow == *b.latents.fea_flow);
    for (float v : a.latents.fea_frame.values()) CHECK(v >= 0.0f);
    for (float v : a.latents.fea_flow->values()) CHECK(v >= 0.0f);
  }
  const auto p1 = init_parameters<float>(tiny_config(), 7);
  const auto p2 = init_parameters<float>(tiny_config(), 7);
  CHECK(p1.tensors == p2.tensors);
}

TEST_CASE("fgfm_fuse examples and properties") {
  const Tensorf one({1}, std::vector<float>{1.0f});
  const Tensorf two({1}, std::vector<float>{2.0f});
  const double oracle = 1.0 + 2.0 / (1.0 + std::exp(-1.0));
  CHECK(std::abs(fgfm_fuse(one, two)[0] - oracle) < 1e-6);
  CHECK(std::abs(oracle - 2.46212) < 1e-5);

  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensorf f = random_tensor<float>(rng, {3, 4, 4}, 0, 5);
    const Tensorf v = random_tensor<float>(rng, {3, 4, 4}, 0, 5);
    CHECK(fgfm_fuse(f, Tensorf(f.shape())) == f);
    const Tensorf half = fgfm_fuse(Tensorf(f.shape()), v);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(half[i] - 0.5f * v[i]) <= 1e-6f);
    Tensorf v2 = v;
    for (auto& x : v2.values()) x += 0.25f;
    const Tensorf a = fgfm_fuse(f, v), b = fgfm_fuse(f, v2);
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(b[i] > a[i]);
      CHECK((b[i] - a[i]) / 0.25f == doctest::Approx(nn::sigmoid(f[i])).epsilon(1e-4));
    }
  }
}

TEST_CASE("ablation identities with a silent flow stream") {
  auto params = init_parameters<float>(tiny_config(), 11);
  silence_flow(params);
  std::mt19937_64 rng(7);
  const StClip c = random_clip(rng, 4);
  const ForwardResult frame_only = forward(c, params, Ablation{false, false});
  const ForwardResult additive = forward(c, params, Ablation{true, false});
  const ForwardResult full = forward(c, params, Ablation{true, true});
  CHECK_FALSE(frame_only.latents.fea_flow.has_value());
  for (float v : additive.latents.fea_flow->values()) CHECK(v == 0.0f);
  CHECK(additive.xhat == frame_only.xhat);
  CHECK(full.xhat == frame_only.xhat);
}

TEST_CASE("frame-only models carry no flow encoder") {
  ModelConfig m = tiny_config();
  m.ablation.use_flow = false;
  const auto params = init_parameters<float>(m, 1);
  for (const auto& [k, v] : params.tensors) CHECK(k.rfind("flow_enc", 0) != 0);
  std::mt19937_64 rng(8);
  const StClip c = random_clip(rng, 4);
  CHECK_NOTHROW(forward(c, params));
  CHECK_THROWS_AS(forward(c, params, Ablation{true, true}), Error);
}

TEST_CASE("analytic gradients match central differences (double, tiny model)") {
  auto params = init_parameters<double>(tiny_config(), 21);
  std::mt19937_64 rng(9);
  // Non-trivial batch-norm affine terms so every parameter family matters.
  for (auto& [k, v] : params.tensors)
    if (k.find(".bn.") != std::string::npos || k.find("bias") != std::string::npos)
      for (auto& x : v.values()) x += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
  const int n = 3;
  const auto frames = random_tensor<double>(rng, {n, 4, 32, 32}, 0, 1);
  const auto flows = random_tensor<double>(rng, {n, 8, 32, 32}, -2, 2);
  const auto targets = random_tensor<double>(rng, {n, 1, 32, 32}, 0, 1);
  const LossWeights w{1, 1, 1, 1e-3};
  const Ablation full;
  auto loss = [&](const ModelParameters<double>& p) {
    return batch_objective<double>(p, frames, flows, targets, w, full, true, Mode::train, nullptr).total;
  };
  auto grads = zero_gradients(params);
  batch_objective<double>(params, frames, flows, targets, w, full, true, Mode::train, &grads);

  std::vector<std::pair<std::string, std::size_t>> picks;
  for (const auto& [k, v] : params.tensors) picks.push_back({k, rng() % v.size()});
  const double h = 1e-6;
  for (const auto& [name, idx] : picks) {
    CAPTURE(name);
    auto p = params, m = params;
    p.tensors.at(name)[idx] += h;
    m.tensors.at(name)[idx] -= h;
    const double numeric = (loss(p) - loss(m)) / (2 * h);
    const double analytic = grads.at(name)[idx];
    const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("checkpoint round-trip") {
  testutil::TempDir dir("ckpt");
  ModelConfig m = tiny_config();
  m.ablation.use_fgfm = false;
  auto params = init_parameters<float>(m, 5);
  params.buffers.begin()->second.fill(0.75f);
  save_checkpoint(dir.path() / "c.bin", params);
  const auto back = load_checkpoint(dir.path() / "c.bin");
  CHECK(back.tensors == params.tensors);
  CHECK(back.buffers == params.buffers);
  CHECK(config_to_string(back.config) == config_to_string(params.config));
  CHECK_FALSE(back.config.ablation.use_fgfm);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.bin"), Error);
}
