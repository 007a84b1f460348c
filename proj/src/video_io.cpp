#include "amsrc/video.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "amsrc/error.hpp"

namespace amsrc {

void VideoSequence::validate() const {
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (!f.same_size(frames.front()))
      fail(ErrorKind::data, "video " + video_id + ": frame " + std::to_string(i) + " has a different size");
    if (f.pixels.size() != static_cast<std::size_t>(f.height) * f.width)
      fail(ErrorKind::data, "video " + video_id + ": frame " + std::to_string(i) + " has a bad pixel buffer");
    for (float v : f.pixels)
      if (!(v >= 0.0f && v <= 1.0f))
        fail(ErrorKind::data, "video " + video_id + ": frame " + std::to_string(i) + " has pixels outside [0,1]");
  }
}

std::string frame_file_name(int index, const std::string& extension) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d", index);
  return std::string(buf) + extension;
}

std::vector<RoiBox> load_rois(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open RoI file " + path.string());
  std::vector<RoiBox> boxes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    RoiBox b;
    std::string extra;
    if (!(ss >> b.video_id >> b.frame_index >> b.x >> b.y >> b.w >> b.h >> b.object_id) || (ss >> extra))
      fail(ErrorKind::data, path.string() + ":" + std::to_string(line_no) + ": malformed RoI line");
    if (b.frame_index < 0 || b.w < 1 || b.h < 1)
      fail(ErrorKind::data, path.string() + ":" + std::to_string(line_no) +
                                ": RoI needs frame_index >= 0, w >= 1 and h >= 1");
    boxes.push_back(std::move(b));
  }
  return boxes;
}

void save_rois(const fs::path& path, std::span<const RoiBox> boxes) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::data, "cannot write RoI file " + path.string());
  for (const auto& b : boxes)
    out << b.video_id << ' ' << b.frame_index << ' ' << b.x << ' ' << b.y << ' ' << b.w << ' ' << b.h << ' '
        << b.object_id << '\n';
}

FrameLabels load_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open label file " + path.string());
  FrameLabels labels;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string id;
    if (!(ss >> id)) continue;
    std::vector<int> v;
    std::string tok;
    while (ss >> tok) {
      if (tok != "0" && tok != "1")
        fail(ErrorKind::data, path.string() + ":" + std::to_string(line_no) + ": labels must be 0 or 1");
      v.push_back(tok == "1");
    }
    labels[id] = std::move(v);
  }
  return labels;
}

void save_labels(const fs::path& path, const FrameLabels& labels) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::data, "cannot write label file " + path.string());
  for (const auto& [id, v] : labels) {
    out << id;
    for (int l : v) out << ' ' << l;
    out << '\n';
  }
}

GrayImage load_png(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    fail(ErrorKind::data, "cannot read PNG " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorKind::data, "cannot decode PNG " + path.string() + ": " + image.message);
  }
  GrayImage out(static_cast<int>(image.height), static_cast<int>(image.width));
  std::transform(buf.begin(), buf.end(), out.pixels.begin(), [](png_byte b) { return b / 255.0f; });
  return out;
}

void save_png(const fs::path& path, const GrayImage& img) {
  std::vector<png_byte> buf(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), buf.begin(), [](float v) {
    return static_cast<png_byte>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  });
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
    fail(ErrorKind::data, "cannot write PNG " + path.string() + ": " + image.message);
}

VideoSequence load_video(const fs::path& root, const std::string& video_id) {
  const fs::path dir = root / video_id;
  if (!fs::is_directory(dir)) fail(ErrorKind::data, "missing video directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  VideoSequence v;
  v.video_id = video_id;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (files[i].filename() != frame_file_name(static_cast<int>(i), ".png"))
      fail(ErrorKind::data, "video " + video_id + ": expected frame " + frame_file_name(static_cast<int>(i), ".png") +
                                ", found " + files[i].filename().string());
    v.frames.push_back(load_png(files[i]));
  }
  v.validate();
  return v;
}

std::vector<VideoSequence> load_videos(const fs::path& root) {
  if (!fs::is_directory(root)) fail(ErrorKind::data, "missing video root " + root.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) ids.push_back(e.path().filename().string());
  std::sort(ids.begin(), ids.end());
  std::vector<VideoSequence> out;
  for (const auto& id : ids) out.push_back(load_video(root, id));
  return out;
}

void save_video(const fs::path& root, const VideoSequence& video) {
  const fs::path dir = root / video.video_id;
  fs::create_directories(dir);
  for (int i = 0; i < video.size(); ++i) save_png(dir / frame_file_name(i, ".png"), video.frames[i]);
}

}  // namespace amsrc
