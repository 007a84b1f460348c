#include "amsrc/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <vector>

namespace amsrc {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos == v.size()) return d;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::usage, "config key " + key + ": expected a number, got '" + v + "'");
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    fail(ErrorKind::usage, "config key " + key + ": expected an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorKind::usage, "config key " + key + ": expected true/false, got '" + v + "'");
}

std::string num(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

// Key table shared by parsing and printing so the two never drift apart.
struct Field {
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <class M>
Field real(M TrainConfig::*m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = to_double(k, v); },
          [m](const TrainConfig& c) { return num(c.*m); }};
}
template <class M>
Field integer(M TrainConfig::*m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = static_cast<M>(to_int(k, v)); },
          [m](const TrainConfig& c) { return std::to_string(c.*m); }};
}
Field boolean(bool TrainConfig::*m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = to_bool(k, v); },
          [m](const TrainConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}
Field text(std::string TrainConfig::*m) {
  return {[m](TrainConfig& c, const std::string&, const std::string& v) { c.*m = v; },
          [m](const TrainConfig& c) { return c.*m; }};
}
template <class Get>
Field nested_real(Get get) {
  return {[get](TrainConfig& c, const std::string& k, const std::string& v) { get(c) = to_double(k, v); },
          [get](const TrainConfig& c) { return num(get(const_cast<TrainConfig&>(c))); }};
}
template <class Get>
Field nested_int(Get get) {
  return {[get](TrainConfig& c, const std::string& k, const std::string& v) {
            get(c) = static_cast<std::remove_reference_t<decltype(get(c))>>(to_int(k, v));
          },
          [get](const TrainConfig& c) { return std::to_string(get(const_cast<TrainConfig&>(c))); }};
}
template <class Get>
Field nested_bool(Get get) {
  return {[get](TrainConfig& c, const std::string& k, const std::string& v) { get(c) = to_bool(k, v); },
          [get](const TrainConfig& c) { return std::string(get(const_cast<TrainConfig&>(c)) ? "true" : "false"); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    f["seed"] = {[](TrainConfig& c, const std::string& k, const std::string& v) {
                   c.seed = static_cast<std::uint64_t>(to_int(k, v));
                 },
                 [](const TrainConfig& c) { return std::to_string(c.seed); }};
    f["train.learning_rate"] = real(&TrainConfig::learning_rate);
    f["train.decay_factor"] = real(&TrainConfig::decay_factor);
    f["train.decay_every_epochs"] = integer(&TrainConfig::decay_every_epochs);
    f["train.batch_size"] = integer(&TrainConfig::batch_size);
    f["train.epochs"] = integer(&TrainConfig::epochs);
    f["train.use_consistency"] = boolean(&TrainConfig::use_consistency);
    f["train.adam_beta1"] = real(&TrainConfig::adam_beta1);
    f["train.adam_beta2"] = real(&TrainConfig::adam_beta2);
    f["train.adam_eps"] = real(&TrainConfig::adam_eps);
    f["train.bn_momentum"] = real(&TrainConfig::bn_momentum);
    f["loss.lambda_int"] = nested_real([](TrainConfig& c) -> double& { return c.loss.lambda_int; });
    f["loss.lambda_gd"] = nested_real([](TrainConfig& c) -> double& { return c.loss.lambda_gd; });
    f["loss.lambda_sim"] = nested_real([](TrainConfig& c) -> double& { return c.loss.lambda_sim; });
    f["loss.lambda_model"] = nested_real([](TrainConfig& c) -> double& { return c.loss.lambda_model; });
    f["loss.reduction"] = {[](TrainConfig&, const std::string&, const std::string& v) {
                             if (v != "mean") fail(ErrorKind::usage, "loss.reduction only supports 'mean'");
                           },
                           [](const TrainConfig&) { return std::string("mean"); }};
    f["score.w_f"] = nested_real([](TrainConfig& c) -> double& { return c.score.w_f; });
    f["score.w_p"] = nested_real([](TrainConfig& c) -> double& { return c.score.w_p; });
    f["model.t"] = nested_int([](TrainConfig& c) -> int& { return c.model.t; });
    f["model.levels"] = nested_int([](TrainConfig& c) -> int& { return c.model.levels; });
    f["model.widths"] = {[](TrainConfig& c, const std::string& k, const std::string& v) {
                           c.model.widths.clear();
                           std::istringstream ss(v);
                           std::string tok;
                           while (std::getline(ss, tok, ',')) c.model.widths.push_back(static_cast<int>(to_int(k, trim(tok))));
                         },
                         [](const TrainConfig& c) {
                           std::string s;
                           for (std::size_t i = 0; i < c.model.widths.size(); ++i)
                             s += (i ? "," : "") + std::to_string(c.model.widths[i]);
                           return s;
                         }};
    f["model.use_flow"] = nested_bool([](TrainConfig& c) -> bool& { return c.model.ablation.use_flow; });
    f["model.use_fgfm"] = nested_bool([](TrainConfig& c) -> bool& { return c.model.ablation.use_fgfm; });
    f["data.train_dir"] = text(&TrainConfig::train_dir);
    f["data.test_dir"] = text(&TrainConfig::test_dir);
    f["data.train_rois"] = text(&TrainConfig::train_rois);
    f["data.test_rois"] = text(&TrainConfig::test_rois);
    f["data.labels"] = text(&TrainConfig::labels);
    f["flow.backend"] = text(&TrainConfig::flow_backend);
    f["flow.train_dir"] = text(&TrainConfig::flow_train_dir);
    f["flow.test_dir"] = text(&TrainConfig::flow_test_dir);
    f["roi.threshold"] = nested_real([](TrainConfig& c) -> float& { return c.roi.threshold; });
    f["roi.min_area"] = nested_int([](TrainConfig& c) -> int& { return c.roi.min_area; });
    f["roi.merge_distance"] = nested_int([](TrainConfig& c) -> int& { return c.roi.merge_distance; });
    f["stc.box_margin"] = integer(&TrainConfig::box_margin);
    f["synth.train_videos"] = nested_int([](TrainConfig& c) -> int& { return c.synth.train_videos; });
    f["synth.test_videos"] = nested_int([](TrainConfig& c) -> int& { return c.synth.test_videos; });
    f["synth.frames"] = nested_int([](TrainConfig& c) -> int& { return c.synth.frames_per_video; });
    f["synth.height"] = nested_int([](TrainConfig& c) -> int& { return c.synth.height; });
    f["synth.width"] = nested_int([](TrainConfig& c) -> int& { return c.synth.width; });
    f["synth.normal_sprites"] = nested_int([](TrainConfig& c) -> int& { return c.synth.normal_sprites; });
    f["synth.anomaly_rate"] = nested_real([](TrainConfig& c) -> double& { return c.synth.anomaly_rate; });
    f["synth.anomaly_start"] = nested_int([](TrainConfig& c) -> int& { return c.synth.anomaly_start; });
    f["synth.normal_speed_min"] = nested_real([](TrainConfig& c) -> double& { return c.synth.normal_speed_min; });
    f["synth.normal_speed_max"] = nested_real([](TrainConfig& c) -> double& { return c.synth.normal_speed_max; });
    f["synth.anomalous_speed_min"] = nested_real([](TrainConfig& c) -> double& { return c.synth.anomalous_speed_min; });
    f["synth.anomalous_speed_max"] = nested_real([](TrainConfig& c) -> double& { return c.synth.anomalous_speed_max; });
    return f;
  }();
  return table;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) fail(ErrorKind::usage, "train.learning_rate must be > 0");
  if (!(decay_factor > 0 && decay_factor <= 1)) fail(ErrorKind::usage, "train.decay_factor must lie in (0, 1]");
  if (decay_every_epochs < 1) fail(ErrorKind::usage, "train.decay_every_epochs must be >= 1");
  if (batch_size < 1) fail(ErrorKind::usage, "train.batch_size must be >= 1");
  if (epochs < 0) fail(ErrorKind::usage, "train.epochs must be >= 0");
  if (flow_backend != "classical" && flow_backend != "precomputed")
    fail(ErrorKind::usage, "flow.backend must be 'classical' or 'precomputed'");
  if (box_margin < 0) fail(ErrorKind::usage, "stc.box_margin must be >= 0");
  loss.validate();
  score.validate();
  model.validate();
  synth.validate();
}

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail(ErrorKind::usage, "config line " + std::to_string(line_no) + ": expected key = value");
    kv[trim(std::string_view(t).substr(0, eq))] = trim(std::string_view(t).substr(eq + 1));
  }
  return kv;
}

TrainConfig config_from_key_values(const KeyValues& kv, TrainConfig base) {
  const auto& table = fields();
  auto it = kv.find("preset");
  if (it != kv.end()) base = preset_config(it->second);
  for (const auto& [k, v] : kv) {
    if (k == "preset") continue;
    auto f = table.find(k);
    if (f == table.end()) fail(ErrorKind::usage, "unknown config key: " + k);
    f->second.set(base, k, v);
  }
  base.validate();
  return base;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::usage, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_key_values(parse_key_values(ss.str()));
}

std::string config_to_text(const TrainConfig& c) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(c) + "\n";
  return out;
}

std::string config_hash(const TrainConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_to_text(c)) h = (h ^ ch) * 0x100000001b3ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TrainConfig preset_config(std::string_view name) {
  TrainConfig c;
  if (name == "ped2") {
    c.batch_size = 128;
    c.epochs = 60;
    c.loss = {1, 1, 1, 1};
    c.score = {1, 0.01};
  } else if (name == "avenue") {
    c.batch_size = 128;
    c.epochs = 40;
    c.loss = {1, 1, 1, 1};
    c.score = {0.2, 0.8};
  } else if (name == "shanghaitech") {
    c.batch_size = 256;
    c.epochs = 40;
    c.loss = {1, 1, 10, 1};
    c.score = {0.4, 0.6};
  } else if (name == "synth") {
    c.batch_size = 64;
    c.epochs = 40;
    // Sum-of-squares weight decay at weight 1 swamps the per-pixel mean losses
    // at this scale and stalls training.
    c.loss = {1, 1, 1, 1e-3};
    c.score = {0.5, 0.5};
    c.model.widths = {8, 16, 32};
    c.synth.train_videos = 16;
    c.synth.test_videos = 8;
  } else {
    fail(ErrorKind::usage, "unknown preset: " + std::string(name));
  }
  return c;
}

}  // namespace amsrc
