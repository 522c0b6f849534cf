#include "orefeed/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <variant>

#include "orefeed/common.hpp"

namespace orefeed {

namespace {

using List = std::vector<double>;
using Value = std::variant<bool, long long, double, std::string, List>;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::optional<double> as_number(const std::string& s, bool* integral) {
  long long i = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), i);
  if (ec == std::errc{} && p == s.data() + s.size()) {
    *integral = true;
    return static_cast<double>(i);
  }
  double d = 0;
  auto [p2, ec2] = std::from_chars(s.data(), s.data() + s.size(), d);
  if (ec2 == std::errc{} && p2 == s.data() + s.size()) {
    *integral = false;
    return d;
  }
  return std::nullopt;
}

Value parse_value(const std::string& raw, const std::string& where) {
  if (raw.empty()) throw ConfigError(where + ": missing value");
  if (raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"') throw ConfigError(where + ": unterminated string");
    return raw.substr(1, raw.size() - 2);
  }
  if (raw == "true") return true;
  if (raw == "false") return false;
  const bool bracketed = raw.front() == '[';
  if (bracketed && raw.back() != ']') throw ConfigError(where + ": unterminated list");
  if (bracketed || raw.find(',') != std::string::npos) {
    List items;
    std::stringstream ss(bracketed ? raw.substr(1, raw.size() - 2) : raw);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (bracketed && trim(part).empty() && items.empty() && ss.eof()) break;  // "[]"
      bool integral = false;
      const auto v = as_number(trim(part), &integral);
      if (!v) throw ConfigError(where + ": list items must be numbers");
      items.push_back(*v);
    }
    return items;
  }
  bool integral = false;
  if (const auto v = as_number(raw, &integral)) {
    if (integral) {
      long long i = 0;
      std::from_chars(raw.data(), raw.data() + raw.size(), i);
      return i;
    }
    return *v;
  }
  return raw;
}

const char* type_name(const Value& v) {
  switch (v.index()) {
    case 0: return "boolean";
    case 1: return "integer";
    case 2: return "number";
    case 3: return "string";
    default: return "list";
  }
}

[[noreturn]] void type_error(const std::string& where, const char* want, const Value& got) {
  throw ConfigError(where + ": expected " + want + ", got " + type_name(got));
}

long long get_int(const Value& v, const std::string& where) {
  if (const auto* i = std::get_if<long long>(&v)) return *i;
  type_error(where, "an integer", v);
}
int get_i32(const Value& v, const std::string& where) {
  const long long i = get_int(v, where);
  if (i < INT32_MIN || i > INT32_MAX) throw ConfigError(where + ": integer out of range");
  return static_cast<int>(i);
}
double get_num(const Value& v, const std::string& where) {
  if (const auto* i = std::get_if<long long>(&v)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&v)) return *d;
  type_error(where, "a number", v);
}
bool get_bool(const Value& v, const std::string& where) {
  if (const auto* b = std::get_if<bool>(&v)) return *b;
  type_error(where, "true or false", v);
}
std::string get_str(const Value& v, const std::string& where) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  type_error(where, "a string", v);
}
List get_list(const Value& v, const std::string& where) {
  if (const auto* l = std::get_if<List>(&v)) return *l;
  if (std::holds_alternative<long long>(v) || std::holds_alternative<double>(v)) return {get_num(v, where)};
  type_error(where, "a list of numbers", v);
}
std::uint64_t get_u64(const Value& v, const std::string& where) {
  const long long i = get_int(v, where);
  if (i < 0) throw ConfigError(where + ": must be non-negative");
  return static_cast<std::uint64_t>(i);
}

using Setter = std::function<void(RunConfig&, const Value&, const std::string&)>;

void add_train_keys(std::map<std::string, Setter>& t, const std::string& section,
                    optim::TrainConfig RunConfig::*member) {
  auto& m = t;
  m[section + ".lr_init"] = [member](RunConfig& c, const Value& v, const std::string& w) { (c.*member).lr_init = get_num(v, w); };
  m[section + ".momentum"] = [member](RunConfig& c, const Value& v, const std::string& w) { (c.*member).momentum = get_num(v, w); };
  m[section + ".lr_factor"] = [member](RunConfig& c, const Value& v, const std::string& w) { (c.*member).lr_factor = get_num(v, w); };
  m[section + ".plateau_patience"] = [member](RunConfig& c, const Value& v, const std::string& w) { (c.*member).plateau_patience = get_i32(v, w); };
  m[section + ".lr_min"] = [member](RunConfig& c, const Value& v, const std::string& w) { (c.*member).lr_min = get_num(v, w); };
  m[section + ".batch_size"] = [member](RunConfig& c, const Value& v, const std::string& w) { (c.*member).batch_size = get_i32(v, w); };
  m[section + ".max_epochs"] = [member](RunConfig& c, const Value& v, const std::string& w) { (c.*member).max_epochs = get_i32(v, w); };
  m[section + ".early_stop_patience"] = [member](RunConfig& c, const Value& v, const std::string& w) { (c.*member).early_stop_patience = get_i32(v, w); };
  m[section + ".augment"] = [member](RunConfig& c, const Value& v, const std::string& w) { (c.*member).augment = get_bool(v, w); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["paths.data_dir"] = [](RunConfig& c, const Value& v, const std::string& w) { c.data_dir = get_str(v, w); };
    t["paths.run_dir"] = [](RunConfig& c, const Value& v, const std::string& w) { c.run_dir = get_str(v, w); };

    t["ingest.n_latency"] = [](RunConfig& c, const Value& v, const std::string& w) { c.ingest.n_latency = get_int(v, w); };
    t["ingest.window_w"] = [](RunConfig& c, const Value& v, const std::string& w) { c.ingest.window_w = get_int(v, w); };
    t["ingest.q_m"] = [](RunConfig& c, const Value& v, const std::string& w) { c.ingest.q_m = get_num(v, w); };
    t["ingest.window_offset"] = [](RunConfig& c, const Value& v, const std::string& w) { c.ingest.window_offset = get_int(v, w); };
    t["ingest.dominance"] = [](RunConfig& c, const Value& v, const std::string& w) { c.ingest.dominance = get_num(v, w); };
    t["ingest.split_ratio"] = [](RunConfig& c, const Value& v, const std::string& w) { c.split_ratio = get_num(v, w); };
    t["ingest.eval_offset"] = [](RunConfig& c, const Value& v, const std::string& w) { c.eval_offset = get_int(v, w); };

    t["geometry.preset"] = [](RunConfig& c, const Value& v, const std::string& w) {
      const auto p = get_str(v, w);
      if (p == "full") c.geometry = imaging::SegmentGeometry{};
      else if (p == "desk") c.geometry = imaging::SegmentGeometry::desk();
      else throw ConfigError(w + ": expected full or desk");
    };
    t["geometry.raw_width"] = [](RunConfig& c, const Value& v, const std::string& w) { c.geometry.raw_width = get_i32(v, w); };
    t["geometry.raw_height"] = [](RunConfig& c, const Value& v, const std::string& w) { c.geometry.raw_height = get_i32(v, w); };
    t["geometry.patch_width"] = [](RunConfig& c, const Value& v, const std::string& w) { c.geometry.patch_width = get_i32(v, w); };
    t["geometry.patch_height"] = [](RunConfig& c, const Value& v, const std::string& w) { c.geometry.patch_height = get_i32(v, w); };
    t["geometry.segment_size"] = [](RunConfig& c, const Value& v, const std::string& w) { c.geometry.segment_size = get_i32(v, w); };
    t["geometry.stride"] = [](RunConfig& c, const Value& v, const std::string& w) { c.geometry.stride = get_i32(v, w); };
    t["geometry.count"] = [](RunConfig& c, const Value& v, const std::string& w) { c.geometry.count = get_i32(v, w); };
    t["geometry.center_remainder"] = [](RunConfig& c, const Value& v, const std::string& w) { c.geometry.center_remainder = get_bool(v, w); };

    t["patch_net.per_class_channels"] = [](RunConfig& c, const Value& v, const std::string& w) { c.patch_net.per_class_channels = get_i32(v, w); };
    t["patch_net.blocks"] = [](RunConfig& c, const Value& v, const std::string& w) { c.patch_net.encoder.blocks = get_i32(v, w); };
    t["patch_net.layers_per_block"] = [](RunConfig& c, const Value& v, const std::string& w) { c.patch_net.encoder.layers_per_block = get_i32(v, w); };
    t["patch_net.growth"] = [](RunConfig& c, const Value& v, const std::string& w) { c.patch_net.encoder.growth = get_i32(v, w); };
    t["patch_net.stem_channels"] = [](RunConfig& c, const Value& v, const std::string& w) { c.patch_net.encoder.stem_channels = get_i32(v, w); };
    t["patch_net.aggregation"] = [](RunConfig& c, const Value& v, const std::string& w) {
      const auto a = get_str(v, w);
      if (a == "mean") c.patch_net.aggregation = patchnet::Aggregation::Mean;
      else if (a == "sum") c.patch_net.aggregation = patchnet::Aggregation::Sum;
      else throw ConfigError(w + ": expected mean or sum");
    };

    t["bag_net.reduced_dim"] = [](RunConfig& c, const Value& v, const std::string& w) { c.bag_net.reduced_dim = get_i32(v, w); };
    t["bag_net.hidden_dim"] = [](RunConfig& c, const Value& v, const std::string& w) { c.bag_net.hidden_dim = get_i32(v, w); };
    t["bag_net.reduce_activation"] = [](RunConfig& c, const Value& v, const std::string& w) { c.bag_net.reduce_activation = get_bool(v, w); };

    add_train_keys(t, "train", &RunConfig::train);
    add_train_keys(t, "bag_train", &RunConfig::bag_train);

    t["relabel.k_min"] = [](RunConfig& c, const Value& v, const std::string& w) { c.relabel.k_min = get_i32(v, w); };
    t["relabel.k_max"] = [](RunConfig& c, const Value& v, const std::string& w) { c.relabel.k_max = get_i32(v, w); };
    t["relabel.max_iterations"] = [](RunConfig& c, const Value& v, const std::string& w) { c.relabel.max_iterations = get_i32(v, w); };
    t["relabel.epsilon"] = [](RunConfig& c, const Value& v, const std::string& w) { c.relabel.epsilon = get_num(v, w); };
    t["relabel.mode"] = [](RunConfig& c, const Value& v, const std::string& w) {
      try {
        c.relabel.mode = relabel::relabel_mode_from_string(get_str(v, w));
      } catch (const ConfigError& e) {
        throw ConfigError(w + ": " + e.what());
      }
    };
    t["relabel.purity_threshold"] = [](RunConfig& c, const Value& v, const std::string& w) { c.relabel.purity_threshold = get_num(v, w); };
    t["relabel.variance_target"] = [](RunConfig& c, const Value& v, const std::string& w) { c.relabel.variance_target = get_num(v, w); };

    t["run.seed"] = [](RunConfig& c, const Value& v, const std::string& w) { c.seed = get_u64(v, w); };
    t["run.sweep_windows"] = [](RunConfig& c, const Value& v, const std::string& w) {
      c.sweep_windows.clear();
      for (const double x : get_list(v, w)) {
        if (x != static_cast<int>(x) || x < 1) throw ConfigError(w + ": windows must be positive whole minutes");
        c.sweep_windows.push_back(static_cast<int>(x));
      }
    };

    auto& s = t;
    s["synth.n_latent"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.n_latent = get_i32(v, w); };
    s["synth.setpoint_map"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.setpoint_map = get_list(v, w); };
    s["synth.image_width"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.image_width = get_i32(v, w); };
    s["synth.image_height"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.image_height = get_i32(v, w); };
    s["synth.pellets_min"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.pellets_min = get_i32(v, w); };
    s["synth.pellets_max"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.pellets_max = get_i32(v, w); };
    s["synth.radius_mean"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.radius_mean = get_list(v, w); };
    s["synth.radius_sigma"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.radius_sigma = get_num(v, w); };
    s["synth.hue"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.hue = get_list(v, w); };
    s["synth.hue_jitter"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.hue_jitter = get_num(v, w); };
    s["synth.pixel_noise"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.pixel_noise = get_num(v, w); };
    s["synth.instance_noise"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.instance_noise = get_num(v, w); };
    s["synth.bags"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.bags = get_i32(v, w); };
    s["synth.patches_per_bag"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.patches_per_bag = get_i32(v, w); };
    s["synth.image_interval"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.image_interval = get_i32(v, w); };
    s["synth.period"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.period = get_i32(v, w); };
    s["synth.latency"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.latency = get_i32(v, w); };
    s["synth.quality_base"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.quality_base = get_num(v, w); };
    s["synth.quality_slope"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.quality_slope = get_num(v, w); };
    s["synth.quality_step"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.quality_step = get_num(v, w); };
    s["synth.quality_sigma"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.quality_sigma = get_num(v, w); };
    s["synth.overfeed_rate"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.overfeed_rate = get_num(v, w); };
    s["synth.start"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.start = get_str(v, w); };
    s["synth.seed"] = [](RunConfig& c, const Value& v, const std::string& w) { c.synth.seed = get_u64(v, w); };
    return t;
  }();
  return table;
}

struct Entry {
  std::string key;
  std::string raw;
  std::string where;
};

void apply_entries(RunConfig& cfg, const std::vector<Entry>& entries) {
  const auto& table = setters();
  // A geometry preset resets every geometry field, so it goes first.
  std::vector<const Entry*> ordered;
  for (const auto& e : entries) if (e.key == "geometry.preset") ordered.push_back(&e);
  for (const auto& e : entries) if (e.key != "geometry.preset") ordered.push_back(&e);
  for (const Entry* e : ordered) {
    const auto it = table.find(e->key);
    if (it == table.end()) throw ConfigError(e->where + ": unknown key '" + e->key + "'");
    it->second(cfg, parse_value(e->raw, e->where + " (" + e->key + ")"), e->where + " (" + e->key + ")");
  }
}

void finish(RunConfig& cfg) {
  cfg.geometry.validate();
  cfg.patch_net.segment_count = cfg.geometry.count;
  cfg.patch_net.segment_size = cfg.geometry.segment_size;
  cfg.train.seed = cfg.seed;
  cfg.bag_train.seed = cfg.seed;
  cfg.train.validate();
  cfg.bag_train.validate();
  cfg.stage_one().validate();
  if (!(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0)) throw ConfigError("ingest.split_ratio must lie in (0, 1)");
  if (cfg.ingest.n_latency < 0 || cfg.ingest.window_w < 1) throw ConfigError("ingest: need n_latency >= 0 and window_w >= 1");
  if (!(cfg.ingest.dominance > 0.0 && cfg.ingest.dominance <= 1.0)) throw ConfigError("ingest.dominance must lie in (0, 1]");
  if (cfg.sweep_windows.empty()) throw ConfigError("run.sweep_windows must not be empty");
}

}  // namespace

relabel::StageOneConfig RunConfig::stage_one() const {
  relabel::StageOneConfig s;
  s.net = patch_net;
  s.train = train;
  s.k_min = relabel.k_min;
  s.k_max = relabel.k_max;
  s.max_iterations = relabel.max_iterations;
  s.epsilon = relabel.epsilon;
  s.mode = relabel.mode;
  s.purity_threshold = relabel.purity_threshold;
  s.variance_target = relabel.variance_target;
  s.seed = seed;
  return s;
}

relabel::StageTwoConfig RunConfig::stage_two() const {
  relabel::StageTwoConfig s;
  s.net = bag_net;
  s.train = bag_train;
  s.seed = seed;
  return s;
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  std::vector<Entry> entries;
  std::istringstream in(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    // Strip comments outside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    entries.push_back({section.empty() ? key : section + "." + key, trim(line.substr(eq + 1)), where});
  }
  RunConfig cfg;
  apply_entries(cfg, entries);
  finish(cfg);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.filename().string());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "': expected section.key=value");
  apply_entries(cfg, {{trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), "--set"}});
  finish(cfg);
}

nlohmann::json to_json(const RunConfig& c) {
  const auto& g = c.geometry;
  return {
      {"ingest",
       {{"n_latency", c.ingest.n_latency},
        {"window_w", c.ingest.window_w},
        {"q_m", c.ingest.q_m},
        {"window_offset", c.ingest.window_offset},
        {"dominance", c.ingest.dominance},
        {"split_ratio", c.split_ratio},
        {"eval_offset", c.eval_offset}}},
      {"geometry",
       {{"raw_width", g.raw_width},
        {"raw_height", g.raw_height},
        {"patch_width", g.patch_width},
        {"patch_height", g.patch_height},
        {"segment_size", g.segment_size},
        {"stride", g.stride},
        {"count", g.count},
        {"center_remainder", g.center_remainder}}},
      {"patch_net", patchnet::to_json(c.patch_net)},
      {"bag_net", bagnet::to_json(c.bag_net)},
      {"train", optim::to_json(c.train)},
      {"bag_train", optim::to_json(c.bag_train)},
      {"relabel",
       {{"k_min", c.relabel.k_min},
        {"k_max", c.relabel.k_max},
        {"max_iterations", c.relabel.max_iterations},
        {"epsilon", c.relabel.epsilon},
        {"mode", relabel::to_string(c.relabel.mode)},
        {"purity_threshold", c.relabel.purity_threshold},
        {"variance_target", c.relabel.variance_target}}},
      {"sweep_windows", c.sweep_windows},
      {"seed", c.seed}};
}

}  // namespace orefeed
