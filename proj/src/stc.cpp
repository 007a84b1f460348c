#include "amsrc/stc.hpp"

#include <algorithm>
#include <cmath>

#include "amsrc/error.hpp"

namespace amsrc {

void StClip::validate(int t) const {
  require_shape(input_frames, {t, kClipSize, kClipSize}, "StClip.input_frames");
  require_shape(target_frame, {1, kClipSize, kClipSize}, "StClip.target_frame");
  require_shape(input_flows, {t, 2, kClipSize, kClipSize}, "StClip.input_flows");
}

CropWindow square_and_clamp(const RoiBox& box, int height, int width) {
  CropWindow win;
  win.side = std::min({std::max(box.w, box.h), height, width});
  const int cx2 = 2 * box.x + box.w;  // doubled centre keeps the arithmetic integral
  const int cy2 = 2 * box.y + box.h;
  win.x = std::clamp((cx2 - win.side) / 2, 0, width - win.side);
  win.y = std::clamp((cy2 - win.side) / 2, 0, height - win.side);
  return win;
}

RoiBox pad_box(const RoiBox& box, int margin) {
  RoiBox b = box;
  b.x -= margin;
  b.y -= margin;
  b.w += 2 * margin;
  b.h += 2 * margin;
  return b;
}

namespace {

struct Tap {
  int i0, i1;
  float f;
};

// Pixel-centre aligned source taps for resizing `side` samples to `out`.
std::vector<Tap> resize_taps(int side, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(side) / out;
  for (int o = 0; o < out; ++o) {
    const double src = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(side - 1));
    const int i0 = static_cast<int>(std::floor(src));
    taps[o] = {i0, std::min(i0 + 1, side - 1), static_cast<float>(src - i0)};
  }
  return taps;
}

template <class Sample>
std::vector<float> resize_with(const CropWindow& win, int out, Sample sample) {
  const auto taps = resize_taps(win.side, out);
  std::vector<float> dst(static_cast<std::size_t>(out) * out);
  for (int oy = 0; oy < out; ++oy)
    for (int ox = 0; ox < out; ++ox) {
      const Tap& ty = taps[oy];
      const Tap& tx = taps[ox];
      const float top = (1 - tx.f) * sample(win.y + ty.i0, win.x + tx.i0) + tx.f * sample(win.y + ty.i0, win.x + tx.i1);
      const float bot = (1 - tx.f) * sample(win.y + ty.i1, win.x + tx.i0) + tx.f * sample(win.y + ty.i1, win.x + tx.i1);
      dst[static_cast<std::size_t>(oy) * out + ox] = (1 - ty.f) * top + ty.f * bot;
    }
  return dst;
}

}  // namespace

std::vector<float> resize_crop(const GrayImage& image, const CropWindow& win, int out) {
  return resize_with(win, out, [&](int y, int x) { return image.at(y, x); });
}

std::vector<float> resize_flow_crop(const FlowMap& flow, const CropWindow& win, int out) {
  const float ratio = static_cast<float>(out) / static_cast<float>(win.side);
  std::vector<float> dx = resize_with(win, out, [&](int y, int x) { return flow.dx(y, x); });
  std::vector<float> dy = resize_with(win, out, [&](int y, int x) { return flow.dy(y, x); });
  for (auto& v : dx) v *= ratio;
  for (auto& v : dy) v *= ratio;
  dx.insert(dx.end(), dy.begin(), dy.end());
  return dx;
}

std::optional<StClip> build_stc(const VideoSequence& video, std::span<const FlowMap> flows, const RoiBox& box, int t) {
  if (t < 1) fail(ErrorKind::usage, "build_stc: t must be >= 1");
  if (box.frame_index < t) return std::nullopt;
  if (box.frame_index >= video.size())
    fail(ErrorKind::data, "build_stc: frame " + std::to_string(box.frame_index) + " is outside video " + video.video_id);
  if (static_cast<int>(flows.size()) < box.frame_index)
    fail(ErrorKind::data, "build_stc: missing flow maps for video " + video.video_id);
  const CropWindow win = square_and_clamp(box, video.height(), video.width());
  const std::size_t plane = static_cast<std::size_t>(kClipSize) * kClipSize;
  StClip clip;
  clip.video_id = video.video_id;
  clip.frame_index = box.frame_index;
  clip.object_id = box.object_id;
  clip.input_frames = Tensorf({t, kClipSize, kClipSize});
  clip.input_flows = Tensorf({t, 2, kClipSize, kClipSize});
  const int first = box.frame_index - t;
  for (int k = 0; k < t; ++k) {
    const auto f = resize_crop(video.frames[first + k], win, kClipSize);
    std::copy(f.begin(), f.end(), clip.input_frames.data() + k * plane);
    const FlowMap& fm = flows[first + k];
    if (fm.height != video.height() || fm.width != video.width())
      fail(ErrorKind::data, "build_stc: flow map size does not match video " + video.video_id);
    const auto fl = resize_flow_crop(fm, win, kClipSize);
    std::copy(fl.begin(), fl.end(), clip.input_flows.data() + k * 2 * plane);
  }
  clip.target_frame = Tensorf({1, kClipSize, kClipSize}, resize_crop(video.frames[box.frame_index], win, kClipSize));
  return clip;
}

}  // namespace amsrc

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace amsrc {

namespace {

constexpr char kClipMagic[8] = {'A', 'M', 'S', 'R', 'C', 'S', 'T', 'C'};
static_assert(std::endian::native == std::endian::little, "clip cache assumes a little-endian host");

void write_u32(std::ostream& o, std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) fail(ErrorKind::data, "clip cache truncated");
  return v;
}
void write_string(std::ostream& o, const std::string& s) {
  write_u32(o, static_cast<std::uint32_t>(s.size()));
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_string(std::istream& in) {
  std::string s(read_u32(in), '\0');
  in.read(s.data(), static_cast<std::streamsize>(s.size()));
  if (!in) fail(ErrorKind::data, "clip cache truncated");
  return s;
}
void write_floats(std::ostream& o, const Tensorf& t) {
  o.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
}
void read_floats(std::istream& in, Tensorf& t) {
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!in) fail(ErrorKind::data, "clip cache truncated");
}

}  // namespace

void save_clips(const fs::path& path, std::span<const StClip> clips) {
  std::ofstream o(path, std::ios::binary);
  if (!o) fail(ErrorKind::data, "cannot write clip cache " + path.string());
  o.write(kClipMagic, sizeof kClipMagic);
  write_u32(o, static_cast<std::uint32_t>(clips.size()));
  for (const auto& c : clips) {
    write_string(o, c.video_id);
    write_u32(o, static_cast<std::uint32_t>(c.frame_index));
    write_string(o, c.object_id);
    write_u32(o, static_cast<std::uint32_t>(c.depth()));
    write_floats(o, c.input_frames);
    write_floats(o, c.target_frame);
    write_floats(o, c.input_flows);
  }
}

std::vector<StClip> load_clips(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open clip cache " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kClipMagic, sizeof magic) != 0) fail(ErrorKind::data, path.string() + " is not a clip cache");
  std::vector<StClip> clips(read_u32(in));
  for (auto& c : clips) {
    c.video_id = read_string(in);
    c.frame_index = static_cast<int>(read_u32(in));
    c.object_id = read_string(in);
    const int t = static_cast<int>(read_u32(in));
    c.input_frames = Tensorf({t, kClipSize, kClipSize});
    c.target_frame = Tensorf({1, kClipSize, kClipSize});
    c.input_flows = Tensorf({t, 2, kClipSize, kClipSize});
    read_floats(in, c.input_frames);
    read_floats(in, c.target_frame);
    read_floats(in, c.input_flows);
  }
  return clips;
}

}  // namespace amsrc
