#include "dan/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

#include "dan/evaluation.hpp"
#include "dan/video_data.hpp"

namespace dan {
namespace {

template <typename T>
T parse_integer(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected an integer, got '" + value + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size() || !std::isfinite(v)) throw std::invalid_argument(value);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + value + "'");
}

std::string show(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::string show(bool v) { return v ? "true" : "false"; }

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define DAN_INT(KEY, EXPR, TYPE)                                                                       \
  Field {                                                                                              \
    KEY, [](RunConfig& c, const std::string& k, const std::string& v) { EXPR = parse_integer<TYPE>(k, v); }, \
        [](const RunConfig& c) { return std::to_string(EXPR); }                                        \
  }
#define DAN_REAL(KEY, EXPR)                                                                        \
  Field {                                                                                          \
    KEY, [](RunConfig& c, const std::string& k, const std::string& v) { EXPR = parse_real(k, v); }, \
        [](const RunConfig& c) { return show(EXPR); }                                              \
  }
#define DAN_FLAG(KEY, EXPR)                                                                        \
  Field {                                                                                          \
    KEY, [](RunConfig& c, const std::string& k, const std::string& v) { EXPR = parse_flag(k, v); }, \
        [](const RunConfig& c) { return show(EXPR); }                                              \
  }
#define DAN_TEXT(KEY, EXPR)                                                                  \
  Field {                                                                                    \
    KEY, [](RunConfig& c, const std::string&, const std::string& v) { EXPR = v; },          \
        [](const RunConfig& c) { return std::string(EXPR); }                                 \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      DAN_INT("run.seed", c.seed, uint64_t),
      DAN_FLAG("run.deterministic", c.deterministic),
      DAN_TEXT("run.device", c.device),

      DAN_TEXT("data.root", c.data.root),
      DAN_INT("data.videos", c.data.videos, int),
      DAN_INT("data.frames", c.data.frames, int),
      DAN_INT("data.height", c.data.height, int64_t),
      DAN_INT("data.width", c.data.width, int64_t),
      DAN_INT("data.accumulate", c.data.accumulate, int),
      DAN_TEXT("data.motion", c.data.motion),

      DAN_INT("model.ppn_width", c.model.ppn_width, int64_t),
      DAN_INT("model.nlb_blocks", c.model.nlb_blocks, int),
      DAN_INT("model.nlb_subsample_above", c.model.nlb_subsample_above, int64_t),
      DAN_TEXT("model.abdn_preset", c.model.abdn_preset),
      Field{"model.abdn_width",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.model.abdn_width = v.empty() ? std::nullopt : std::optional(parse_integer<int64_t>(k, v));
            },
            [](const RunConfig& c) { return c.model.abdn_width ? std::to_string(*c.model.abdn_width) : ""; }},
      Field{"model.abdn_depth",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.model.abdn_depth = v.empty() ? std::nullopt : std::optional(parse_integer<int>(k, v));
            },
            [](const RunConfig& c) { return c.model.abdn_depth ? std::to_string(*c.model.abdn_depth) : ""; }},
      DAN_INT("model.fan_width", c.model.fan_width, int64_t),
      DAN_INT("model.fan_flow_width", c.model.fan_flow_width, int64_t),
      DAN_REAL("model.fan_flow_scale", c.model.fan_flow_scale),
      DAN_TEXT("model.flow_backend", c.model.flow_backend),
      DAN_REAL("model.occ_alpha1", c.model.occ_alpha1),
      DAN_REAL("model.occ_alpha2", c.model.occ_alpha2),

      DAN_REAL("train.lr", c.train.params.lr),
      DAN_REAL("train.lr_decay", c.train.params.lr_decay),
      Field{"train.lr_decay_every",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.train.params.lr_decay_every = v == "auto" ? 0 : parse_integer<int64_t>(k, v);
            },
            [](const RunConfig& c) {
              return c.train.params.lr_decay_every == 0 ? std::string("auto")
                                                        : std::to_string(c.train.params.lr_decay_every);
            }},
      DAN_INT("train.batch", c.train.params.batch, int),
      DAN_INT("train.patch", c.train.params.patch, int64_t),
      DAN_INT("train.seq_len", c.train.params.seq_len, int),
      DAN_REAL("train.beta1", c.train.params.beta1),
      DAN_REAL("train.beta2", c.train.params.beta2),
      DAN_REAL("train.epsilon", c.train.params.epsilon),
      DAN_INT("train.max_iters", c.train.params.max_iters, int64_t),
      DAN_INT("train.bptt", c.train.params.bptt_window, int),
      DAN_REAL("train.noise_variance", c.train.params.noise_variance),
      DAN_FLAG("train.flips", c.train.params.flips),
      DAN_FLAG("train.color_jitter", c.train.params.color_jitter),
      DAN_TEXT("train.dataset", c.train.dataset),
      DAN_TEXT("train.out_dir", c.train.out_dir),
      DAN_TEXT("train.init", c.train.init),
      DAN_INT("train.checkpoint_every", c.train.checkpoint_every, int64_t),
      DAN_INT("train.val_every", c.train.val_every, int64_t),

      DAN_TEXT("eval.dataset", c.eval.dataset),
      DAN_TEXT("eval.modes", c.eval.modes),
      DAN_REAL("eval.psnr_cap", c.eval.psnr_cap),
      DAN_FLAG("eval.quantized", c.eval.quantized),
      DAN_TEXT("eval.out_dir", c.eval.out_dir),
  };
  return table;
}

#undef DAN_INT
#undef DAN_REAL
#undef DAN_FLAG
#undef DAN_TEXT

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

DanConfig ModelSection::dan() const {
  DanConfig c;
  c.ppn.width = ppn_width;
  c.ppn.nlb_blocks = nlb_blocks;
  c.ppn.subsample_above = nlb_subsample_above;
  c.abdn = AbdnConfig::from_preset(parse_abdn_preset(abdn_preset));
  if (abdn_width) c.abdn.width = *abdn_width;
  if (abdn_depth) c.abdn.depth = *abdn_depth;
  c.fan.width = fan_width;
  c.fan.flow_width = fan_flow_width;
  c.fan.flow_scale = fan_flow_scale;
  c.occlusion = {occ_alpha1, occ_alpha2};
  return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config file " + path.string() + ": key '" + section + "' is outside a section");
    for (const auto& [key, value] : body) config.set(section + "." + key, trim(value.get_value<std::string>()));
  }
  return config;
}

RunConfig RunConfig::from_snapshot(const std::vector<std::pair<std::string, std::string>>& entries) {
  RunConfig config;
  for (const auto& [key, value] : entries) config.set(key, value);
  return config;
}

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, key, value); }

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not section.key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

std::vector<std::pair<std::string, std::string>> RunConfig::snapshot() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

std::string RunConfig::to_ini() const {
  std::ostringstream out;
  std::string current;
  for (const auto& [key, value] : snapshot()) {
    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    if (section != current) {
      if (!current.empty()) out << '\n';
      out << '[' << section << "]\n";
      current = section;
    }
    out << key.substr(dot + 1) << " = " << value << '\n';
  }
  return out.str();
}

std::string RunConfig::fingerprint() const { return dan::fingerprint(to_ini()); }

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (device != "cpu") fail("run.device: only 'cpu' is supported, got '" + device + "'");
  if (data.videos < 1) fail("data.videos must be >= 1");
  if (data.frames < 3) fail("data.frames must be >= 3");
  if (data.height < 8 || data.width < 8) fail("data.height and data.width must be >= 8");
  if (data.accumulate < 1) fail("data.accumulate must be >= 1");
  try {
    MotionSpec::parse(data.motion);
  } catch (const Error& e) {
    fail(std::string("data.motion: ") + e.what());
  }
  if (model.ppn_width < 1 || model.nlb_blocks < 0 || model.nlb_subsample_above < 1) {
    fail("model: PPN width and subsample threshold must be positive, nlb_blocks >= 0");
  }
  DanConfig dan_config;
  try {
    dan_config = model.dan();
  } catch (const Error& e) {
    fail(std::string("model.abdn_preset: ") + e.what());
  }
  if (dan_config.abdn.width < 1 || dan_config.abdn.depth < 1) fail("model: ABDN width and depth must be positive");
  if (model.fan_width < 1 || model.fan_flow_width < 1) fail("model: FAN widths must be positive");
  if (model.occ_alpha1 < 0 || model.occ_alpha2 < 0) fail("model: occlusion constants must be >= 0");
  try {
    make_flow_backend(model.flow_backend);
  } catch (const Error& e) {
    fail(std::string("model.flow_backend: ") + e.what());
  }
  train.params.validate();
  const int64_t stride = std::max<int64_t>(PpnImpl::kStride, int64_t{1} << dan_config.abdn.depth);
  if (train.params.patch % stride != 0) {
    fail("train.patch " + std::to_string(train.params.patch) + " is not divisible by the network stride " +
         std::to_string(stride));
  }
  if (train.init != "default" && train.init != "identity") fail("train.init must be 'default' or 'identity'");
  if (train.checkpoint_every < 0 || train.val_every < 0) fail("train: checkpoint_every and val_every must be >= 0");
  if (!(eval.psnr_cap > 0)) fail("eval.psnr_cap must be positive");
  try {
    for (const auto& m : ablation_modes()) parse_ablation_mode(m);
  } catch (const Error& e) {
    fail(std::string("eval.modes: ") + e.what());
  }
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train.params;
  t.seed = seed;
  return t;
}

std::vector<std::string> RunConfig::ablation_modes() const {
  std::vector<std::string> out;
  std::istringstream in(eval.modes);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace dan
