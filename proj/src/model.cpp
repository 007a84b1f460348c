#include "amsrc/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <type_traits>

#include "amsrc/rng.hpp"

namespace amsrc {

namespace {

constexpr double kBnEps = 1e-5;

template <class T>
const Tensor<T>& lookup(const std::map<std::string, Tensor<T>>& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) fail(ErrorKind::data, "model parameter missing: " + key);
  return it->second;
}

template <class T>
Tensor<T>& lookup(std::map<std::string, Tensor<T>>& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) fail(ErrorKind::data, "model parameter missing: " + key);
  return it->second;
}

std::string block_name(const std::string& prefix, int level, char which) {
  return prefix + ".l" + std::to_string(level) + "." + which;
}

std::string dec_name(int level) { return "dec.l" + std::to_string(level); }

int decoder_out_channels(const ModelConfig& c, int level) { return c.widths[level > 0 ? level - 1 : 0]; }

template <class T>
void add_block(ModelParameters<T>& p, const std::string& name, int in, int out, Rng& rng) {
  Tensor<T> w({out, in, 3, 3});
  const double std_dev = std::sqrt(2.0 / (in * 9.0));
  for (auto& v : w.values()) v = static_cast<T>(rng.normal() * std_dev);
  p.tensors.emplace(name + ".conv.weight", std::move(w));
  p.tensors.emplace(name + ".conv.bias", Tensor<T>({out}));
  p.tensors.emplace(name + ".bn.gamma", Tensor<T>({out}, T{1}));
  p.tensors.emplace(name + ".bn.beta", Tensor<T>({out}));
  p.buffers.emplace(name + ".bn.running_mean", Tensor<T>({out}));
  p.buffers.emplace(name + ".bn.running_var", Tensor<T>({out}, T{1}));
}

template <class T>
Tensor<T> block_forward(const ModelParameters<T>& p, const std::string& name, const Tensor<T>& x, int stride,
                        Mode mode, BlockTrace<T>* trace) {
  Tensor<T> z = nn::conv2d(x, lookup(p.tensors, name + ".conv.weight"), lookup(p.tensors, name + ".conv.bias"), stride);
  Tensor<T> y = nn::batchnorm(z, lookup(p.tensors, name + ".bn.gamma"), lookup(p.tensors, name + ".bn.beta"),
                              lookup(p.buffers, name + ".bn.running_mean"), lookup(p.buffers, name + ".bn.running_var"),
                              mode == Mode::train, static_cast<T>(kBnEps), trace ? &trace->bn : nullptr);
  nn::relu_inplace(y);
  if (trace) {
    trace->input = x;
    trace->output = y;
  }
  return y;
}

template <class T>
Tensor<T> block_backward(const ModelParameters<T>& p, const std::string& name, int stride, const BlockTrace<T>& tr,
                         const Tensor<T>& dy, Gradients<T>& g) {
  Tensor<T> d = nn::relu_backward(tr.output, dy);
  d = nn::batchnorm_backward(tr.bn, lookup(p.tensors, name + ".bn.gamma"), d, lookup(g, name + ".bn.gamma"),
                             lookup(g, name + ".bn.beta"));
  return nn::conv2d_backward(tr.input, lookup(p.tensors, name + ".conv.weight"), stride, d,
                             lookup(g, name + ".conv.weight"), lookup(g, name + ".conv.bias"));
}

template <class T>
Tensor<T> encoder_forward(const ModelParameters<T>& p, const std::string& prefix, Tensor<T> x, Mode mode,
                          std::type_identity_t<EncoderTrace<T>>* trace,
                          std::type_identity_t<std::vector<Tensor<T>>>* skips) {
  const int levels = p.config.levels;
  if (trace) trace->blocks.assign(static_cast<std::size_t>(2 * levels), {});
  for (int l = 0; l < levels; ++l) {
    Tensor<T> a = block_forward(p, block_name(prefix, l, 'a'), x, 1, mode, trace ? &trace->blocks[2 * l] : nullptr);
    if (skips) skips->push_back(a);
    x = block_forward(p, block_name(prefix, l, 'b'), a, 2, mode, trace ? &trace->blocks[2 * l + 1] : nullptr);
  }
  return x;
}

template <class T>
void encoder_backward(const ModelParameters<T>& p, const std::string& prefix, const EncoderTrace<T>& trace,
                      Tensor<T> dlatent, const std::vector<Tensor<T>>& dskips, Gradients<T>& g) {
  for (int l = p.config.levels - 1; l >= 0; --l) {
    Tensor<T> d = block_backward(p, block_name(prefix, l, 'b'), 2, trace.blocks[2 * l + 1], dlatent, g);
    if (!dskips.empty()) nn::add_inplace(d, dskips[l]);
    dlatent = block_backward(p, block_name(prefix, l, 'a'), 1, trace.blocks[2 * l], d, g);
  }
}

template <class T>
Tensor<T> decoder_forward(const ModelParameters<T>& p, Tensor<T> x, const std::vector<Tensor<T>>& skips, Mode mode,
                          std::type_identity_t<ForwardTrace<T>>* trace) {
  const int levels = p.config.levels;
  if (static_cast<int>(skips.size()) != levels)
    fail(ErrorKind::data, "decode: expected " + std::to_string(levels) + " skip levels, got " +
                              std::to_string(skips.size()));
  if (trace) {
    trace->dec_blocks.assign(static_cast<std::size_t>(levels), {});
    trace->dec_upsampled_channels.assign(static_cast<std::size_t>(levels), 0);
  }
  for (int l = levels - 1, k = 0; l >= 0; --l, ++k) {
    Tensor<T> up = nn::upsample2x(x);
    if (trace) trace->dec_upsampled_channels[k] = up.dim(1);
    x = block_forward(p, dec_name(l), nn::concat_channels(up, skips[l]), 1, mode, trace ? &trace->dec_blocks[k] : nullptr);
  }
  Tensor<T> z = nn::conv2d(x, lookup(p.tensors, std::string("head.weight")), lookup(p.tensors, std::string("head.bias")), 1);
  for (auto& v : z.values()) v = nn::sigmoid(v);
  if (trace) {
    trace->head_input = std::move(x);
    trace->xhat = z;
  }
  return z;
}

// Returns dL/dfused; fills dskips (finest first).
template <class T>
Tensor<T> decoder_backward(const ModelParameters<T>& p, const ForwardTrace<T>& trace, const Tensor<T>& dxhat,
                           std::vector<Tensor<T>>& dskips, Gradients<T>& g) {
  const int levels = p.config.levels;
  Tensor<T> dz(dxhat.shape());
  for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = dxhat[i] * trace.xhat[i] * (T{1} - trace.xhat[i]);
  Tensor<T> dx = nn::conv2d_backward(trace.head_input, lookup(p.tensors, std::string("head.weight")), 1, dz,
                                     lookup(g, std::string("head.weight")), lookup(g, std::string("head.bias")));
  dskips.assign(static_cast<std::size_t>(levels), {});
  for (int k = levels - 1; k >= 0; --k) {
    const int l = levels - 1 - k;
    Tensor<T> dc = block_backward(p, dec_name(l), 1, trace.dec_blocks[k], dx, g);
    Tensor<T> dup;
    nn::split_channels(dc, trace.dec_upsampled_channels[k], dup, dskips[l]);
    dx = nn::upsample2x_backward(dup);
  }
  return dx;
}

template <class T>
bool has_flow_stream(const ModelParameters<T>& p) {
  return p.tensors.count(block_name("flow_enc", 0, 'a') + ".conv.weight") > 0;
}

}  // namespace

void ModelConfig::validate() const {
  if (t < 1) fail(ErrorKind::usage, "model.t must be >= 1");
  if (levels < 1 || (kClipSize >> levels) < 1 || (kClipSize % (1 << levels)) != 0)
    fail(ErrorKind::usage, "model.levels must divide the 32-pixel clip size");
  if (static_cast<int>(widths.size()) != levels)
    fail(ErrorKind::usage, "model.widths needs one width per level (" + std::to_string(levels) + ")");
  for (int w : widths)
    if (w < 1) fail(ErrorKind::usage, "model.widths entries must be >= 1");
}

template <class T>
bool ModelParameters<T>::all_finite() const {
  for (const auto& [k, v] : tensors)
    for (T x : v.values())
      if (!std::isfinite(x)) return false;
  return true;
}

bool is_decayed_weight(const std::string& name) {
  constexpr std::string_view suffix = ".weight";
  return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <class T>
ModelParameters<T> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParameters<T> p;
  p.config = config;
  Rng rng(derive_seed(seed, "init"));
  auto add_encoder = [&](const std::string& prefix, int in) {
    for (int l = 0; l < config.levels; ++l) {
      add_block(p, block_name(prefix, l, 'a'), in, config.widths[l], rng);
      add_block(p, block_name(prefix, l, 'b'), config.widths[l], config.widths[l], rng);
      in = config.widths[l];
    }
  };
  add_encoder("frame_enc", config.t);
  if (config.ablation.use_flow) add_encoder("flow_enc", 2 * config.t);
  int in = config.latent_channels();
  for (int l = config.levels - 1; l >= 0; --l) {
    const int out = decoder_out_channels(config, l);
    add_block(p, dec_name(l), in + config.widths[l], out, rng);
    in = out;
  }
  Tensor<T> hw({1, in, 3, 3});
  const double std_dev = std::sqrt(2.0 / (in * 9.0));
  for (auto& v : hw.values()) v = static_cast<T>(rng.normal() * std_dev);
  p.tensors.emplace("head.weight", std::move(hw));
  p.tensors.emplace("head.bias", Tensor<T>({1}));
  return p;
}

template <class T>
BatchOutput<T> forward_batch(const ModelParameters<T>& params, const Tensor<T>& frames, const Tensor<T>& flows,
                             const Ablation& ablation, Mode mode, ForwardTrace<T>* trace) {
  const auto& c = params.config;
  if (frames.rank() != 4 || frames.dim(1) != c.t || frames.dim(2) != kClipSize || frames.dim(3) != kClipSize)
    fail(ErrorKind::data, "frame batch: expected [N," + std::to_string(c.t) + ",32,32], got " + shape_str(frames.shape()));
  const int n = frames.dim(0);
  if (ablation.use_flow) {
    if (!has_flow_stream(params)) fail(ErrorKind::usage, "forward: use_flow requested but the model has no flow stream");
    require_shape(flows, {n, 2 * c.t, kClipSize, kClipSize}, "flow batch");
  }
  if (trace) {
    trace->mode = mode;
    trace->ablation = ablation;
  }
  BatchOutput<T> out;
  std::vector<Tensor<T>> skips;
  out.fea_frame = encoder_forward(params, "frame_enc", frames, mode, trace ? &trace->frame_enc : nullptr, &skips);
  if (ablation.use_flow) {
    out.fea_flow = encoder_forward(params, "flow_enc", flows, mode, trace ? &trace->flow_enc : nullptr, nullptr);
    if (ablation.use_fgfm) {
      out.fused = fgfm_fuse(out.fea_frame, out.fea_flow);
    } else {
      out.fused = out.fea_frame;
      nn::add_inplace(out.fused, out.fea_flow);
    }
  } else {
    out.fused = out.fea_frame;
  }
  out.xhat = decoder_forward(params, out.fused, skips, mode, trace);
  return out;
}

template <class T>
void backward_batch(const ModelParameters<T>& params, const ForwardTrace<T>& trace, const Tensor<T>& dxhat,
                    const Tensor<T>& dfea_frame, const Tensor<T>& dfea_flow, Gradients<T>& grads) {
  std::vector<Tensor<T>> dskips;
  Tensor<T> dfused = decoder_backward(params, trace, dxhat, dskips, grads);
  Tensor<T> dframe = dfused;
  if (!dfea_frame.empty()) nn::add_inplace(dframe, dfea_frame);
  if (trace.ablation.use_flow) {
    const Tensor<T>& f = trace.frame_enc.blocks.back().output;
    const Tensor<T>& g = trace.flow_enc.blocks.back().output;
    Tensor<T> dflow(dfused.shape());
    for (std::size_t i = 0; i < dfused.size(); ++i) {
      if (trace.ablation.use_fgfm) {
        const T s = nn::sigmoid(f[i]);
        dframe[i] += dfused[i] * s * (T{1} - s) * g[i];
        dflow[i] = dfused[i] * s;
      } else {
        dflow[i] = dfused[i];
      }
    }
    if (!dfea_flow.empty()) nn::add_inplace(dflow, dfea_flow);
    encoder_backward(params, "flow_enc", trace.flow_enc, std::move(dflow), {}, grads);
  }
  encoder_backward(params, "frame_enc", trace.frame_enc, std::move(dframe), dskips, grads);
}

template <class T>
void update_running_stats(ModelParameters<T>& params, const ForwardTrace<T>& trace, T momentum) {
  auto update = [&](const std::string& name, const BlockTrace<T>& b) {
    auto& rm = lookup(params.buffers, name + ".bn.running_mean");
    auto& rv = lookup(params.buffers, name + ".bn.running_var");
    const double count = static_cast<double>(b.input.dim(0)) * b.output.dim(2) * b.output.dim(3);
    const double unbias = count > 1 ? count / (count - 1) : 1.0;
    for (std::size_t c = 0; c < rm.size(); ++c) {
      rm[c] = (T{1} - momentum) * rm[c] + momentum * b.bn.batch_mean[c];
      rv[c] = (T{1} - momentum) * rv[c] + momentum * static_cast<T>(b.bn.batch_var[c] * unbias);
    }
  };
  const int levels = params.config.levels;
  for (int l = 0; l < levels; ++l) {
    update(block_name("frame_enc", l, 'a'), trace.frame_enc.blocks[2 * l]);
    update(block_name("frame_enc", l, 'b'), trace.frame_enc.blocks[2 * l + 1]);
    if (trace.ablation.use_flow) {
      update(block_name("flow_enc", l, 'a'), trace.flow_enc.blocks[2 * l]);
      update(block_name("flow_enc", l, 'b'), trace.flow_enc.blocks[2 * l + 1]);
    }
  }
  for (int k = 0; k < levels; ++k) update(dec_name(levels - 1 - k), trace.dec_blocks[k]);
}

// ---- single clip -----------------------------------------------------------

namespace {

Tensorf unbatch(const Tensorf& x) {
  Shape s(x.shape().begin() + 1, x.shape().end());
  return x.reshaped(s);
}

}  // namespace

EncodedFrames encode_frames(const Tensorf& input_frames, const ModelParameters<float>& params) {
  const int t = params.config.t;
  require_shape(input_frames, {t, kClipSize, kClipSize}, "encode_frames");
  std::vector<Tensorf> skips;
  Tensorf latent = encoder_forward(params, "frame_enc", input_frames.reshaped({1, t, kClipSize, kClipSize}), Mode::eval,
                                   nullptr, &skips);
  EncodedFrames out;
  out.fea_frame = unbatch(latent);
  for (const auto& s : skips) out.skips.levels.push_back(unbatch(s));
  return out;
}

Tensorf encode_flows(const Tensorf& input_flows, const ModelParameters<float>& params) {
  const int t = params.config.t;
  require_shape(input_flows, {t, 2, kClipSize, kClipSize}, "encode_flows");
  if (!has_flow_stream(params)) fail(ErrorKind::usage, "encode_flows: the model has no flow stream");
  return unbatch(encoder_forward(params, "flow_enc", input_flows.reshaped({1, 2 * t, kClipSize, kClipSize}),
                                 Mode::eval, nullptr, nullptr));
}

Tensorf decode(const Tensorf& fused, const SkipStack& skips, const ModelParameters<float>& params) {
  const auto& c = params.config;
  require_shape(fused, c.latent_shape(), "decode");
  if (static_cast<int>(skips.levels.size()) != c.levels)
    fail(ErrorKind::data, "decode: expected " + std::to_string(c.levels) + " skip levels, got " +
                              std::to_string(skips.levels.size()));
  std::vector<Tensorf> batched;
  for (const auto& s : skips.levels) {
    Shape sh = s.shape();
    sh.insert(sh.begin(), 1);
    batched.push_back(s.reshaped(sh));
  }
  Shape fs = fused.shape();
  fs.insert(fs.begin(), 1);
  return unbatch(decoder_forward(params, fused.reshaped(fs), batched, Mode::eval, nullptr));
}

ForwardResult forward(const StClip& clip, const ModelParameters<float>& params, const Ablation& ablation) {
  clip.validate(params.config.t);
  const std::size_t idx = 0;
  ClipBatch b = make_batch(std::span<const StClip>(&clip, 1), std::span<const std::size_t>(&idx, 1), ablation.use_flow);
  BatchOutput<float> out = forward_batch(params, b.frames, b.flows, ablation, Mode::eval);
  ForwardResult r;
  r.xhat = unbatch(out.xhat);
  r.latents.fea_frame = unbatch(out.fea_frame);
  if (ablation.use_flow) r.latents.fea_flow = unbatch(out.fea_flow);
  return r;
}

ClipBatch make_batch(std::span<const StClip> clips, std::span<const std::size_t> indices, bool with_flow) {
  ClipBatch b;
  if (indices.empty()) fail(ErrorKind::data, "make_batch: empty batch");
  const int n = static_cast<int>(indices.size());
  const int t = clips[indices[0]].depth();
  const std::size_t plane = static_cast<std::size_t>(kClipSize) * kClipSize;
  b.frames = Tensorf({n, t, kClipSize, kClipSize});
  b.targets = Tensorf({n, 1, kClipSize, kClipSize});
  if (with_flow) b.flows = Tensorf({n, 2 * t, kClipSize, kClipSize});
  for (int i = 0; i < n; ++i) {
    const StClip& c = clips[indices[i]];
    c.validate(t);
    std::copy_n(c.input_frames.data(), t * plane, b.frames.data() + i * t * plane);
    std::copy_n(c.target_frame.data(), plane, b.targets.data() + i * plane);
    if (with_flow) std::copy_n(c.input_flows.data(), 2 * t * plane, b.flows.data() + i * 2 * t * plane);
  }
  return b;
}

// ---- checkpoints -------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'M', 'S', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

void put_u32(std::ostream& o, std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) fail(ErrorKind::data, "checkpoint truncated");
  return v;
}
void put_str(std::ostream& o, const std::string& s) {
  put_u32(o, static_cast<std::uint32_t>(s.size()));
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string get_str(std::istream& in) {
  std::string s(get_u32(in), '\0');
  in.read(s.data(), static_cast<std::streamsize>(s.size()));
  if (!in) fail(ErrorKind::data, "checkpoint truncated");
  return s;
}

ModelConfig config_from_string(const std::string& text) {
  ModelConfig c;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "t") c.t = std::stoi(v);
    else if (k == "levels") c.levels = std::stoi(v);
    else if (k == "use_flow") c.ablation.use_flow = v == "1";
    else if (k == "use_fgfm") c.ablation.use_fgfm = v == "1";
    else if (k == "widths") {
      c.widths.clear();
      std::istringstream ws(v);
      std::string tok;
      while (std::getline(ws, tok, ',')) c.widths.push_back(std::stoi(tok));
    }
  }
  c.validate();
  return c;
}

}  // namespace

std::string config_to_string(const ModelConfig& c) {
  std::ostringstream o;
  o << "t=" << c.t << "\nlevels=" << c.levels << "\nwidths=";
  for (std::size_t i = 0; i < c.widths.size(); ++i) o << (i ? "," : "") << c.widths[i];
  o << "\nuse_flow=" << c.ablation.use_flow << "\nuse_fgfm=" << c.ablation.use_fgfm << "\n";
  return o.str();
}

void save_checkpoint(const std::filesystem::path& path, const ModelParameters<float>& params) {
  std::ofstream o(path, std::ios::binary);
  if (!o) fail(ErrorKind::data, "cannot write checkpoint " + path.string());
  o.write(kMagic, sizeof kMagic);
  put_u32(o, kCheckpointVersion);
  put_str(o, config_to_string(params.config));
  put_u32(o, static_cast<std::uint32_t>(params.tensors.size() + params.buffers.size()));
  auto write_all = [&](const auto& m, std::uint32_t kind) {
    for (const auto& [name, t] : m) {
      put_str(o, name);
      put_u32(o, kind);
      put_u32(o, static_cast<std::uint32_t>(t.rank()));
      for (int d : t.shape()) put_u32(o, static_cast<std::uint32_t>(d));
      o.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
  };
  write_all(params.tensors, 0);
  write_all(params.buffers, 1);
}

ModelParameters<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) fail(ErrorKind::data, path.string() + " is not a checkpoint");
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion)
    fail(ErrorKind::data, "unsupported checkpoint version " + std::to_string(version));
  ModelParameters<float> p;
  p.config = config_from_string(get_str(in));
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_str(in);
    const std::uint32_t kind = get_u32(in);
    Shape shape(get_u32(in));
    for (auto& d : shape) d = static_cast<int>(get_u32(in));
    Tensorf t(shape);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) fail(ErrorKind::data, "checkpoint truncated");
    (kind == 0 ? p.tensors : p.buffers).emplace(std::move(name), std::move(t));
  }
  return p;
}

#define AMSRC_INSTANTIATE(T)                                                                                       \
  template struct ModelParameters<T>;                                                                              \
  template ModelParameters<T> init_parameters<T>(const ModelConfig&, std::uint64_t);                               \
  template BatchOutput<T> forward_batch<T>(const ModelParameters<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                           const Ablation&, Mode, ForwardTrace<T>*);                               \
  template void backward_batch<T>(const ModelParameters<T>&, const ForwardTrace<T>&, const Tensor<T>&,             \
                                  const Tensor<T>&, const Tensor<T>&, Gradients<T>&);                              \
  template void update_running_stats<T>(ModelParameters<T>&, const ForwardTrace<T>&, T);

AMSRC_INSTANTIATE(float)
AMSRC_INSTANTIATE(double)

#undef AMSRC_INSTANTIATE

}  // namespace amsrc
