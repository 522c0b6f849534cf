#include "orefeed/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "json.hpp"
#include "orefeed/parallel.hpp"
#include "orefeed/random.hpp"

namespace orefeed::synth {

namespace fs = std::filesystem;

void SynthScenario::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("synth scenario: " + m); };
  if (n_latent < 2) fail("need at least 2 latent classes");
  const auto L = static_cast<std::size_t>(n_latent);
  if (setpoint_map.size() != L || radius_mean.size() != L || hue.size() != L) {
    fail("setpoint_map, radius_mean and hue need one entry per latent class");
  }
  for (std::size_t i = 1; i < L; ++i) {
    if (setpoint_map[i] <= setpoint_map[i - 1]) fail("setpoint_map must be strictly increasing");
  }
  if (image_width < 8 || image_height < 8) fail("image too small");
  if (pellets_min < 0 || pellets_max < pellets_min) fail("bad pellets_per_image range");
  if (!(instance_noise >= 0.0 && instance_noise <= 1.0)) fail("instance_noise must lie in [0, 1]");
  if (bags < 1 || patches_per_bag < 1) fail("bags and patches_per_bag must be >= 1");
  if (image_interval < 1 || period % image_interval != 0) fail("period must be a multiple of image_interval");
  if (window_minutes() > period) fail("a bag window must fit inside one period");
  if (latency < 0) fail("latency must be >= 0");
  if (!(overfeed_rate >= 0.0 && overfeed_rate <= 1.0)) fail("overfeed_rate must lie in [0, 1]");
  if (!(quality_step > 0.0)) fail("quality_step must be positive");
  parse_timestamp(start);
}

namespace {

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double x = h * 6.0;
  const int sector = static_cast<int>(x) % 6;
  const double f = x - std::floor(x);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

std::string fixed4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

std::string setpoint_text(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

double quality_mean(const SynthScenario& sc, double setpoint, int dominant) {
  const double over = std::max(0.0, setpoint - sc.setpoint_map.at(static_cast<std::size_t>(dominant)));
  return sc.quality_base - sc.quality_slope * over / sc.quality_step;
}

imaging::Image8 gen_image(int latent, const SynthScenario& sc, std::uint64_t seed) {
  require(latent >= 0 && latent < sc.n_latent, "gen_image: latent class out of range");
  const auto l = static_cast<std::size_t>(latent);
  Rng rng(seed);
  const int w = sc.image_width, h = sc.image_height;
  std::vector<double> canvas(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < canvas.size(); i += 3) {
    canvas[i] = 18.0;
    canvas[i + 1] = 18.0;
    canvas[i + 2] = 22.0;
  }
  const int pellets =
      latent == 0 ? 0
                  : sc.pellets_min + static_cast<int>(rng.below(
                                         static_cast<std::uint64_t>(sc.pellets_max - sc.pellets_min + 1)));
  for (int k = 0; k < pellets; ++k) {
    const double r = std::max(1.0, rng.normal(sc.radius_mean[l], sc.radius_sigma));
    const double cx = rng.uniform(0.0, w), cy = rng.uniform(0.0, h);
    const double hue = sc.hue[l] + rng.uniform(-sc.hue_jitter, sc.hue_jitter);
    const auto rgb = hsv_to_rgb(hue, 0.75, rng.uniform(0.7, 0.95));
    const int y0 = std::max(0, static_cast<int>(cy - r)), y1 = std::min(h - 1, static_cast<int>(cy + r));
    const int x0 = std::max(0, static_cast<int>(cx - r)), x1 = std::min(w - 1, static_cast<int>(cx + r));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double rr = (dx * dx + dy * dy) / (r * r);
        if (rr > 1.0) continue;
        const double shade = 1.0 - 0.3 * rr;
        for (int c = 0; c < 3; ++c) {
          canvas[(static_cast<std::size_t>(y) * w + x) * 3 + c] = 255.0 * rgb[static_cast<std::size_t>(c)] * shade;
        }
      }
    }
  }
  imaging::Image8 img(w, h);
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    const double v = canvas[i] + (sc.pixel_noise > 0.0 ? rng.normal(0.0, sc.pixel_noise) : 0.0);
    img.rgb[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
  }
  return img;
}

GroundTruth plan_dataset(const SynthScenario& sc) {
  sc.validate();
  GroundTruth truth;
  Rng rng(derive_seed(sc.seed, 0x91a7ULL));
  const Minutes t0 = parse_timestamp(sc.start);
  const int frames = sc.period / sc.image_interval;
  for (int p = 0; p < sc.bags; ++p) {
    PeriodTruth pt;
    pt.t_start = t0 + static_cast<Minutes>(p) * sc.period;
    pt.dominant = static_cast<int>(rng.below(static_cast<std::uint64_t>(sc.n_latent)));
    auto level = static_cast<std::size_t>(pt.dominant);
    if (rng.uniform() < sc.overfeed_rate && level + 1 < sc.setpoint_map.size()) ++level;
    pt.setpoint = sc.setpoint_map[level];
    pt.optimal = sc.setpoint_map[static_cast<std::size_t>(pt.dominant)];
    pt.lab_t = pt.t_start + sc.period + sc.latency;
    const double q = quality_mean(sc, pt.setpoint, pt.dominant) - rng.normal(0.0, sc.quality_sigma);
    pt.quality = std::stod(fixed4(std::max(0.0, q)));
    truth.periods.push_back(pt);
    for (int f = 0; f < frames; ++f) {
      int latent = pt.dominant;
      if (rng.uniform() < sc.instance_noise) {
        latent = static_cast<int>(rng.below(static_cast<std::uint64_t>(sc.n_latent - 1)));
        if (latent >= pt.dominant) ++latent;
      }
      truth.images.push_back({pt.t_start + static_cast<Minutes>(f) * sc.image_interval, latent, p});
    }
  }
  return truth;
}

GroundTruth gen_dataset(const SynthScenario& sc, const fs::path& out_dir) {
  GroundTruth truth = plan_dataset(sc);
  fs::create_directories(out_dir / "images");
  auto image_name = [](std::size_t i) {
    std::ostringstream os;
    os << "images/" << std::setw(6) << std::setfill('0') << i << ".png";
    return os.str();
  };
  parallel_for(truth.images.size(), [&](std::size_t i) {
    imaging::write_png(out_dir / image_name(i),
                       gen_image(truth.images[i].latent, sc, derive_seed(sc.seed, 0x1a6eULL, i)));
  });

  std::ofstream labs(out_dir / "labs.csv"), feed(out_dir / "feed.csv"),
      manifest(out_dir / "images.jsonl"), tr(out_dir / "truth.jsonl");
  if (!labs || !feed || !manifest || !tr) throw Error("cannot write dataset into " + out_dir.string());
  labs << "t,quality\n";
  feed << "t,setpoint_tons\n";
  for (const auto& p : truth.periods) {
    labs << format_timestamp(p.lab_t) << ',' << fixed4(p.quality) << '\n';
    for (int m = 0; m < sc.period; ++m) {
      feed << format_timestamp(p.t_start + m) << ',' << setpoint_text(p.setpoint) << '\n';
    }
    tr << nlohmann::json{{"kind", "period"},
                         {"t_start", format_timestamp(p.t_start)},
                         {"lab_t", format_timestamp(p.lab_t)},
                         {"dominant", p.dominant},
                         {"setpoint", p.setpoint},
                         {"optimal", p.optimal},
                         {"quality", p.quality}}
              .dump()
       << '\n';
  }
  for (std::size_t i = 0; i < truth.images.size(); ++i) {
    const auto& im = truth.images[i];
    manifest << nlohmann::json{{"t", format_timestamp(im.t)},
                               {"path", image_name(i)},
                               {"w", sc.image_width},
                               {"h", sc.image_height}}
                    .dump()
             << '\n';
    tr << nlohmann::json{{"kind", "image"},
                         {"id", i},
                         {"t", format_timestamp(im.t)},
                         {"latent", im.latent},
                         {"period", im.period}}
              .dump()
       << '\n';
  }
  return truth;
}

GroundTruth read_truth(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  GroundTruth truth;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "period") {
        truth.periods.push_back({parse_timestamp(j.at("t_start").get<std::string>()),
                                 parse_timestamp(j.at("lab_t").get<std::string>()),
                                 j.at("dominant").get<int>(), j.at("setpoint").get<double>(),
                                 j.at("optimal").get<double>(), j.at("quality").get<double>()});
      } else if (kind == "image") {
        if (j.at("id").get<std::size_t>() != truth.images.size()) {
          throw ParseError(path.string(), line_no, "image ids must be dense and ascending");
        }
        truth.images.push_back({parse_timestamp(j.at("t").get<std::string>()),
                                j.at("latent").get<int>(), j.at("period").get<int>()});
      } else {
        throw ParseError(path.string(), line_no, "unknown record kind '" + kind + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  return truth;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  require(a.size() == b.size(), "adjusted_rand_index: length mismatch");
  const auto n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++joint[{a[i], b[i]}];
    ++ra[a[i]];
    ++rb[b[i]];
  }
  auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [k, v] : joint) index += pairs(v);
  for (const auto& [k, v] : ra) sa += pairs(v);
  for (const auto& [k, v] : rb) sb += pairs(v);
  const double expected = sa * sb / pairs(n);
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return index == max_index ? 1.0 : 0.0;
  return (index - expected) / (max_index - expected);
}

OracleScores oracle_scores(std::span<const int> labels, std::span<const int> truth) {
  if (labels.size() != truth.size()) throw PreconditionError("oracle_scores: length mismatch");
  require(!labels.empty(), "oracle_scores: empty input");
  std::map<int, std::map<int, std::size_t>> overlap;
  for (std::size_t i = 0; i < labels.size(); ++i) ++overlap[labels[i]][truth[i]];
  std::size_t matched = 0;
  for (const auto& [label, counts] : overlap) {
    std::size_t best = 0;
    for (const auto& [t, c] : counts) best = std::max(best, c);
    matched += best;
  }
  OracleScores s;
  s.purity = static_cast<double>(matched) / static_cast<double>(labels.size());
  s.adjusted_rand_index = adjusted_rand_index(labels, truth);
  return s;
}

}  // namespace orefeed::synth
