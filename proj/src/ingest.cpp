#include "orefeed/ingest.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "orefeed/random.hpp"

namespace orefeed::ingest {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_decimal(const std::string& text, const std::string& file, std::size_t line,
                     const char* field) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ParseError(file, line, std::string("field '") + field + "' is not a number: '" + text + "'");
  }
  return v;
}

Minutes parse_time_field(const std::string& text, const std::string& file, std::size_t line) {
  try {
    return parse_timestamp(text);
  } catch (const Error& e) {
    throw ParseError(file, line, e.what());
  }
}

// Reads a two-column csv with the given header; fn(t, value_text, line_no) per row.
template <class Fn>
void read_two_column_csv(const fs::path& path, const std::string& expected_header, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  const std::string file = path.string();
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (!header_seen) {
      if (trim(line) != expected_header) {
        throw ParseError(file, line_no, "expected header '" + expected_header + "'");
      }
      header_seen = true;
      continue;
    }
    const auto cols = split_csv(line);
    if (cols.size() != 2) throw ParseError(file, line_no, "expected 2 columns");
    fn(parse_time_field(cols[0], file, line_no), cols[1], line_no);
  }
  if (!header_seen) throw ParseError(file, line_no, "missing header");
}

template <class Rec>
void check_strictly_increasing(const std::vector<Rec>& recs, const std::string& what) {
  for (std::size_t i = 1; i < recs.size(); ++i) {
    if (recs[i].t == recs[i - 1].t) {
      throw OrderingError(what + ": duplicate timestamp " + format_timestamp(recs[i].t) +
                          " at record " + std::to_string(i + 1));
    }
    if (recs[i].t < recs[i - 1].t) {
      throw OrderingError(what + ": timestamps not sorted at record " + std::to_string(i + 1) +
                          " (" + format_timestamp(recs[i].t) + ")");
    }
  }
}

}  // namespace

ClassVocab ClassVocab::from_setpoints(std::vector<double> setpoints) {
  std::sort(setpoints.begin(), setpoints.end());
  setpoints.erase(std::unique(setpoints.begin(), setpoints.end()), setpoints.end());
  ClassVocab v;
  v.setpoints_ = std::move(setpoints);
  return v;
}

std::optional<ClassId> ClassVocab::find_setpoint(double tons) const {
  auto it = std::lower_bound(setpoints_.begin(), setpoints_.end(), tons);
  if (it == setpoints_.end() || *it != tons) return std::nullopt;
  return static_cast<ClassId>(it - setpoints_.begin());
}

ClassId ClassVocab::setpoint_class(double tons) const {
  auto id = find_setpoint(tons);
  if (!id) throw Error("setpoint " + std::to_string(tons) + " is not in the class vocabulary");
  return *id;
}

double ClassVocab::setpoint_of(ClassId id) const {
  if (!is_setpoint(id)) throw Error("class " + std::to_string(id) + " is not a setpoint class");
  return setpoints_[static_cast<std::size_t>(id)];
}

ClassId ClassVocab::mint() {
  const auto id = static_cast<ClassId>(size());
  cluster_classes_.push_back(id);
  return id;
}

std::string ClassVocab::name(ClassId id) const {
  if (is_setpoint(id)) {
    std::ostringstream os;
    os << setpoints_[static_cast<std::size_t>(id)];
    return os.str();
  }
  if (!contains(id)) throw Error("unknown class id " + std::to_string(id));
  return "C" + std::to_string(static_cast<std::size_t>(id) - setpoints_.size() + 1);
}

std::vector<LabSample> load_labs(const fs::path& path) {
  std::vector<LabSample> out;
  read_two_column_csv(path, "t,quality", [&](Minutes t, const std::string& v, std::size_t line) {
    const double q = parse_decimal(v, path.string(), line, "quality");
    if (q < 0) throw ParseError(path.string(), line, "quality must be >= 0");
    out.push_back({t, q});
  });
  check_strictly_increasing(out, path.string());
  return out;
}

std::vector<FeedReading> load_feed(const fs::path& path) {
  std::vector<FeedReading> out;
  read_two_column_csv(path, "t,setpoint_tons",
                      [&](Minutes t, const std::string& v, std::size_t line) {
                        const double s = parse_decimal(v, path.string(), line, "setpoint_tons");
                        if (s != 0.0 && (s < 120.0 || s > 146.0)) {
                          throw ParseError(path.string(), line,
                                           "setpoint must be 0 or within [120, 146]");
                        }
                        out.push_back({t, s});
                      });
  check_strictly_increasing(out, path.string());
  return out;
}

std::vector<ImageRecord> load_image_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<ImageRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      ImageRecord rec;
      rec.t = parse_timestamp(j.at("t").get<std::string>());
      rec.path = j.at("path").get<std::string>();
      rec.width = j.at("w").get<int>();
      rec.height = j.at("h").get<int>();
      if (rec.width <= 0 || rec.height <= 0) throw Error("image dims must be positive");
      out.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  check_strictly_increasing(out, path.string());
  return out;
}

ProductionLog load_production_logs(const fs::path& lab_csv, const fs::path& feed_csv,
                                   const fs::path& image_manifest) {
  ProductionLog log;
  log.labs = load_labs(lab_csv);
  log.feed = load_feed(feed_csv);
  log.images = load_image_manifest(image_manifest);
  log.image_root = image_manifest.parent_path();
  return log;
}

ProductionLog load_production_dir(const fs::path& dir) {
  return load_production_logs(dir / "labs.csv", dir / "feed.csv", dir / "images.jsonl");
}

fs::path resolve_image_path(const ProductionLog& log, const ImageRecord& rec) {
  const fs::path p(rec.path);
  return p.is_absolute() ? p : log.image_root / p;
}

std::optional<double> aggregate_setpoint(std::span<const FeedReading> readings, double dominance) {
  require(!readings.empty(), "aggregate_setpoint: no readings in window");
  std::map<double, std::size_t> counts;
  for (const auto& r : readings) ++counts[r.setpoint];
  // Ascending map order: ties resolve toward the lower setpoint.
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  const double share = static_cast<double>(best->second) / static_cast<double>(readings.size());
  if (share + 1e-12 < dominance) return std::nullopt;
  return best->first;
}

BagSet assemble_bags(const ProductionLog& log, const AssembleParams& params) {
  require(params.n_latency > 0, "assemble_bags: n_latency must be > 0");
  require(params.window_w > 0, "assemble_bags: window_w must be > 0");

  struct Pending {
    Minutes t_start, t_end;
    double setpoint;
    LabSample lab;
    std::vector<std::size_t> instances;
  };
  std::vector<Pending> pending;
  BagSet out;

  const std::span<const FeedReading> feed(log.feed);
  const std::span<const ImageRecord> images(log.images);
  for (const auto& lab : log.labs) {
    if (lab.quality < params.q_m) {
      ++out.report.below_qm;
      continue;
    }
    const Minutes t_end = lab.t - params.n_latency - params.window_offset;
    const Minutes t_start = t_end - params.window_w;
    const auto [ib, ie] = time_range(images, t_start, t_end);
    if (ib == ie) {
      ++out.report.empty_window;
      continue;
    }
    const auto [fb, fe] = time_range(feed, t_start, t_end);
    std::optional<double> sp;
    if (fb != fe) sp = aggregate_setpoint(feed.subspan(fb, fe - fb), params.dominance);
    if (!sp) {
      ++out.report.ambiguous_label;
      continue;
    }
    Pending p{t_start, t_end, *sp, lab, {}};
    p.instances.resize(ie - ib);
    std::iota(p.instances.begin(), p.instances.end(), ib);
    pending.push_back(std::move(p));
  }

  std::vector<double> labels;
  labels.reserve(pending.size());
  for (const auto& p : pending) labels.push_back(p.setpoint);
  out.vocab = ClassVocab::from_setpoints(labels);

  out.bags.reserve(pending.size());
  for (auto& p : pending) {
    Bag b;
    b.bag_id = out.bags.size();
    b.t_start = p.t_start;
    b.t_end = p.t_end;
    b.setpoint = p.setpoint;
    b.label = out.vocab.setpoint_class(p.setpoint);
    b.lab = p.lab;
    b.latency = p.lab.t - p.t_end;
    b.instance_ids = std::move(p.instances);
    out.bags.push_back(std::move(b));
  }
  return out;
}

std::pair<std::vector<Bag>, std::vector<Bag>> split_bags(const std::vector<Bag>& bags,
                                                         double ratio, std::uint64_t seed) {
  require(ratio > 0.0 && ratio < 1.0, "split_bags: ratio must be in (0, 1)");
  if (bags.size() < 2) throw PreconditionError("split_bags: need at least 2 bags");
  const std::size_t n = bags.size();
  auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<char> is_train(n, 0);
  for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = 1;

  std::vector<Bag> train, test;
  for (std::size_t i = 0; i < n; ++i) (is_train[i] ? train : test).push_back(bags[i]);
  return {std::move(train), std::move(test)};
}

void write_bags_jsonl(const fs::path& path, const std::vector<Bag>& bags) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& b : bags) {
    json j;
    j["bag_id"] = b.bag_id;
    j["t_start"] = format_timestamp(b.t_start);
    j["t_end"] = format_timestamp(b.t_end);
    j["label"] = b.setpoint;
    j["lab_t"] = format_timestamp(b.lab.t);
    j["lab_q"] = b.lab.quality;
    j["instances"] = b.instance_ids;
    out << j.dump() << '\n';
  }
}

BagSet read_bags_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  BagSet out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      Bag b;
      b.bag_id = j.at("bag_id").get<std::size_t>();
      b.t_start = parse_timestamp(j.at("t_start").get<std::string>());
      b.t_end = parse_timestamp(j.at("t_end").get<std::string>());
      b.setpoint = j.at("label").get<double>();
      b.lab.t = parse_timestamp(j.at("lab_t").get<std::string>());
      b.lab.quality = j.at("lab_q").get<double>();
      b.latency = b.lab.t - b.t_end;
      b.instance_ids = j.at("instances").get<std::vector<std::size_t>>();
      out.bags.push_back(std::move(b));
    } catch (const json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    } catch (const Error& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  std::vector<double> labels;
  for (const auto& b : out.bags) labels.push_back(b.setpoint);
  out.vocab = ClassVocab::from_setpoints(labels);
  for (auto& b : out.bags) b.label = out.vocab.setpoint_class(b.setpoint);
  return out;
}

}  // namespace orefeed::ingest
