#include "orefeed/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "orefeed/bag_net.hpp"
#include "orefeed/common.hpp"
#include "orefeed/config.hpp"
#include "orefeed/content_hash.hpp"
#include "orefeed/evalsuite.hpp"
#include "orefeed/ingest.hpp"
#include "orefeed/optimizer.hpp"
#include "orefeed/patch_net.hpp"
#include "orefeed/patch_store.hpp"
#include "orefeed/synthgen.hpp"
#include "orefeed/weak_relabel.hpp"

namespace orefeed::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::string data_dir;
  std::string run_dir;
  bool quiet = false;
};

class StaleArtifact : public Error {
 public:
  using Error::Error;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config_path.empty() ? parse_config("") : load_config(o.config_path);
  for (const auto& s : o.sets) apply_override(cfg, s);
  if (!o.data_dir.empty()) cfg.data_dir = o.data_dir;
  if (!o.run_dir.empty()) cfg.run_dir = o.run_dir;
  return cfg;
}

std::string window_key(int w) { return std::to_string(w) + "min"; }

json vocab_json(const ingest::ClassVocab& v) {
  return {{"setpoints", v.setpoints()}, {"minted", v.cluster_classes().size()}};
}

ingest::ClassVocab vocab_from_json(const json& j) {
  auto v = ingest::ClassVocab::from_setpoints(j.at("setpoints").get<std::vector<double>>());
  const auto minted = j.at("minted").get<std::size_t>();
  for (std::size_t i = 0; i < minted; ++i) v.mint();
  return v;
}

json geometry_json(const imaging::SegmentGeometry& g) {
  return {{"raw_width", g.raw_width},     {"raw_height", g.raw_height},
          {"patch_width", g.patch_width}, {"patch_height", g.patch_height},
          {"segment_size", g.segment_size}, {"stride", g.stride},
          {"count", g.count},             {"center_remainder", g.center_remainder}};
}

imaging::SegmentGeometry geometry_from_json(const json& j) {
  imaging::SegmentGeometry g;
  g.raw_width = j.at("raw_width").get<int>();
  g.raw_height = j.at("raw_height").get<int>();
  g.patch_width = j.at("patch_width").get<int>();
  g.patch_height = j.at("patch_height").get<int>();
  g.segment_size = j.at("segment_size").get<int>();
  g.stride = j.at("stride").get<int>();
  g.count = j.at("count").get<int>();
  g.center_remainder = j.at("center_remainder").get<bool>();
  g.validate();
  return g;
}

json synth_json(const synth::SynthScenario& s) {
  return {{"n_latent", s.n_latent},
          {"setpoint_map", s.setpoint_map},
          {"image_width", s.image_width},
          {"image_height", s.image_height},
          {"pellets_min", s.pellets_min},
          {"pellets_max", s.pellets_max},
          {"radius_mean", s.radius_mean},
          {"radius_sigma", s.radius_sigma},
          {"hue", s.hue},
          {"hue_jitter", s.hue_jitter},
          {"pixel_noise", s.pixel_noise},
          {"instance_noise", s.instance_noise},
          {"bags", s.bags},
          {"patches_per_bag", s.patches_per_bag},
          {"image_interval", s.image_interval},
          {"period", s.period},
          {"latency", s.latency},
          {"quality_base", s.quality_base},
          {"quality_slope", s.quality_slope},
          {"quality_step", s.quality_step},
          {"quality_sigma", s.quality_sigma},
          {"overfeed_rate", s.overfeed_rate},
          {"start", s.start},
          {"seed", s.seed}};
}

// Content hashes of the production logs and every referenced frame.
struct DataFingerprint {
  json inputs;
  std::string hash;
};

DataFingerprint fingerprint(const fs::path& dir, const ingest::ProductionLog& log) {
  DataFingerprint fp;
  std::vector<std::pair<std::string, std::string>> parts;
  for (const char* name : {"labs.csv", "feed.csv", "images.jsonl"}) {
    const auto h = git_blob_hash_file(dir / name);
    fp.inputs[name] = h;
    parts.emplace_back(name, h);
  }
  std::vector<std::pair<std::string, std::string>> frames(log.images.size());
  for (std::size_t i = 0; i < log.images.size(); ++i) {
    frames[i] = {log.images[i].path, git_blob_hash_file(ingest::resolve_image_path(log, log.images[i]))};
  }
  const auto frames_hash = combined_hash(frames);
  fp.inputs["images"] = frames_hash;
  parts.emplace_back("images", frames_hash);
  fp.hash = combined_hash(parts);
  return fp;
}

std::string stage_one_config_hash(const RunConfig& cfg) {
  const json all = to_json(cfg);
  const json relevant = {{"ingest", all.at("ingest")},     {"geometry", all.at("geometry")},
                         {"patch_net", all.at("patch_net")}, {"train", all.at("train")},
                         {"relabel", all.at("relabel")},   {"seed", all.at("seed")}};
  return git_blob_hash(relevant.dump());
}

void write_manifest(const fs::path& path, const std::string& command, const RunConfig& cfg,
                    const json& inputs, const json& outputs, const json& extra = json::object()) {
  json m = {{"command", command}, {"config", to_json(cfg)}, {"seed", cfg.seed},
            {"inputs", inputs},   {"outputs", outputs}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_json(path, m);
}

json output_hashes(const fs::path& dir, const std::vector<std::string>& names) {
  json out = json::object();
  for (const auto& n : names) out[n] = git_blob_hash_file(dir / n);
  return out;
}

struct Progress {
  std::ostream& err;
  bool quiet;
  void operator()(const std::string& msg) const {
    if (!quiet) err << msg << '\n';
  }
};

struct LoadedTau {
  patchnet::PatchNet tau;
  optim::CheckpointMeta meta;
  ingest::ClassVocab vocab;
  imaging::SegmentGeometry geometry;
  std::set<Minutes> val_labs;
  std::string file_hash;
};

LoadedTau load_tau(const fs::path& run_dir) {
  const fs::path path = run_dir / "tau.ckpt";
  auto [params, meta] = optim::load_checkpoint(path);
  if (meta.model != "patch_net") throw IntegrityError(path.string() + " does not hold a patch model");
  const auto cfg = patchnet::patch_net_config_from_json(meta.config);
  LoadedTau out{patchnet::PatchNet(cfg, std::move(params)), meta, vocab_from_json(meta.class_vocab),
                geometry_from_json(meta.extra.at("geometry")), {}, git_blob_hash_file(path)};
  for (const auto& t : meta.extra.at("val_labs")) out.val_labs.insert(parse_timestamp(t.get<std::string>()));
  return out;
}

void check_fresh(const LoadedTau& t, const DataFingerprint& fp, const RunConfig& cfg) {
  if (t.meta.extra.at("data_hash").get<std::string>() != fp.hash) {
    throw StaleArtifact("tau.ckpt was trained on different data; rerun stage1");
  }
  if (t.meta.extra.at("config_hash").get<std::string>() != stage_one_config_hash(cfg)) {
    throw StaleArtifact("tau.ckpt was trained under a different stage-one config; rerun stage1");
  }
}

bagnet::BagNet load_omega(const fs::path& run_dir, int window, const LoadedTau& tau) {
  const fs::path path = run_dir / ("omega_" + window_key(window) + ".ckpt");
  auto [params, meta] = optim::load_checkpoint(path);
  if (meta.model != "bag_net") throw IntegrityError(path.string() + " does not hold a bag model");
  if (meta.extra.at("tau_hash").get<std::string>() != tau.file_hash) {
    throw StaleArtifact(path.string() + " was trained on another tau.ckpt; rerun stage2");
  }
  return bagnet::BagNet(bagnet::bag_net_config_from_json(meta.config),
                        meta.class_vocab.at("setpoints").get<std::vector<double>>(), std::move(params));
}

// Bags at a given window, split by the validation labs fixed in stage one.
std::pair<std::vector<ingest::Bag>, std::vector<ingest::Bag>> split_by_labs(
    const std::vector<ingest::Bag>& bags, const std::set<Minutes>& val_labs) {
  std::vector<ingest::Bag> train, val;
  for (const auto& b : bags) (val_labs.count(b.lab.t) ? val : train).push_back(b);
  return {std::move(train), std::move(val)};
}

ingest::BagSet bags_at(const ingest::ProductionLog& log, const RunConfig& cfg, int window) {
  ingest::AssembleParams p = cfg.ingest;
  p.window_w = window;
  return ingest::assemble_bags(log, p);
}

int cmd_synth(const std::string& scenario_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed, std::ostream& out) {
  RunConfig cfg = load_config(scenario_path);
  if (seed) cfg.synth.seed = *seed;
  const auto truth = synth::gen_dataset(cfg.synth, out_dir);
  write_json(fs::path(out_dir) / "manifest_synth.json",
             {{"command", "synth"},
              {"scenario", synth_json(cfg.synth)},
              {"seed", cfg.synth.seed},
              {"inputs", {{"scenario", git_blob_hash_file(scenario_path)}}},
              {"outputs", output_hashes(out_dir, {"labs.csv", "feed.csv", "images.jsonl", "truth.jsonl"})}});
  out << "wrote " << truth.periods.size() << " periods, " << truth.images.size() << " frames\n";
  return kOk;
}

int cmd_ingest(const Options& o, const std::string& out_path, std::optional<int> window, std::ostream& out) {
  RunConfig cfg = resolve_config(o);
  if (window) cfg.ingest.window_w = *window;
  const auto log = ingest::load_production_dir(cfg.data_dir);
  const auto set = ingest::assemble_bags(log, cfg.ingest);
  ingest::write_bags_jsonl(out_path, set.bags);
  const auto fp = fingerprint(cfg.data_dir, log);
  const fs::path out_file(out_path);
  write_manifest(fs::path(out_path + ".manifest.json"), "ingest", cfg, fp.inputs,
                 {{out_file.filename().string(), git_blob_hash_file(out_file)}},
                 {{"dropped",
                   {{"below_qm", set.report.below_qm},
                    {"empty_window", set.report.empty_window},
                    {"ambiguous_label", set.report.ambiguous_label}}}});
  out << "bags " << set.bags.size() << ", dropped " << set.report.total() << " (below q_m "
      << set.report.below_qm << ", empty " << set.report.empty_window << ", ambiguous "
      << set.report.ambiguous_label << ")\n";
  return kOk;
}

int cmd_stage1(const Options& o, const std::string& bags_path, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(o);
  const Progress progress{err, o.quiet};
  const auto log = ingest::load_production_dir(cfg.data_dir);
  const auto fp = fingerprint(cfg.data_dir, log);
  ingest::BagSet set = bags_path.empty() ? ingest::assemble_bags(log, cfg.ingest)
                                         : ingest::read_bags_jsonl(bags_path);
  auto [train, val] = ingest::split_bags(set.bags, cfg.split_ratio, cfg.seed);
  const auto ids = bag_image_ids(set.bags);
  const auto store = PatchStore::load(log, ids, cfg.geometry);
  progress("stage1: " + std::to_string(train.size()) + " training bags, " +
           std::to_string(val.size()) + " validation bags, " + std::to_string(ids.size()) + " frames");

  auto result = relabel::stage_one(store, train, val, set.vocab, cfg.stage_one(), progress);

  fs::create_directories(cfg.run_dir);
  json val_labs = json::array();
  for (const auto& b : val) val_labs.push_back(format_timestamp(b.lab.t));
  optim::CheckpointMeta meta;
  meta.model = "patch_net";
  meta.config = patchnet::to_json(result.tau.config());
  meta.class_vocab = vocab_json(set.vocab);
  meta.rng_seed = cfg.seed;
  meta.extra = {{"head_classes", result.head_classes},
                {"geometry", geometry_json(cfg.geometry)},
                {"data_hash", fp.hash},
                {"config_hash", stage_one_config_hash(cfg)},
                {"val_labs", val_labs}};
  optim::save_checkpoint(result.tau.params(), meta, cfg.run_dir / "tau.ckpt");

  json head_names = json::array();
  for (const ClassId c : result.head_classes) head_names.push_back(set.vocab.name(c));
  json report = {{"stage_one", relabel::to_json(result.report, set.vocab)},
                 {"head_classes", head_names},
                 {"n_instances", result.instance_ids.size()},
                 {"n_train_bags", train.size()},
                 {"n_val_bags", val.size()}};
  const fs::path truth_path = cfg.data_dir / "truth.jsonl";
  if (fs::exists(truth_path)) {
    const auto truth = synth::read_truth(truth_path);
    std::vector<int> latent;
    for (const auto id : result.instance_ids) latent.push_back(truth.images.at(id).latent);
    const auto s0 = synth::oracle_scores(result.initial_labels, latent);
    const auto s1 = synth::oracle_scores(result.labels, latent);
    report["oracle"] = {{"initial", {{"purity", s0.purity}, {"ari", s0.adjusted_rand_index}}},
                        {"final", {{"purity", s1.purity}, {"ari", s1.adjusted_rand_index}}}};
    progress("stage1 oracle purity " + std::to_string(s0.purity) + " -> " + std::to_string(s1.purity));
  }
  write_json(cfg.run_dir / "stage1_report.json", report);
  relabel::write_audit_jsonl(result.audit, set.vocab, cfg.run_dir / "relabel_audit.jsonl");
  {
    std::ofstream log_out(cfg.run_dir / "stage1_train_log.jsonl");
    for (std::size_t i = 0; i < result.histories.size(); ++i) {
      for (const auto& rec : result.histories[i].epochs) {
        json j = optim::to_json(rec);
        j["pass"] = i + 1;
        log_out << j.dump() << '\n';
      }
    }
  }
  json inputs = fp.inputs;
  if (!bags_path.empty()) inputs["bags"] = git_blob_hash_file(bags_path);
  write_manifest(cfg.run_dir / "manifest_stage1.json", "stage1", cfg, inputs,
                 output_hashes(cfg.run_dir, {"tau.ckpt", "stage1_report.json", "relabel_audit.jsonl",
                                             "stage1_train_log.jsonl"}));
  out << report.dump(2) << '\n';
  return kOk;
}

int cmd_stage2(const Options& o, std::optional<int> window, bool sweep, std::ostream& out,
               std::ostream& err) {
  const RunConfig cfg = resolve_config(o);
  const Progress progress{err, o.quiet};
  const auto log = ingest::load_production_dir(cfg.data_dir);
  const auto fp = fingerprint(cfg.data_dir, log);
  const LoadedTau tau = load_tau(cfg.run_dir);
  check_fresh(tau, fp, cfg);

  std::vector<int> windows = sweep ? cfg.sweep_windows : std::vector<int>{window.value_or(static_cast<int>(cfg.ingest.window_w))};
  json report = json::object();
  std::vector<std::string> outputs;
  for (const int w : windows) {
    const auto set = bags_at(log, cfg, w);
    auto [train, val] = split_by_labs(set.bags, tau.val_labs);
    if (train.empty() || val.empty()) throw PreconditionError("stage2: window " + window_key(w) + " leaves an empty split");
    const auto ids = bag_image_ids(set.bags);
    const auto store = PatchStore::load(log, ids, tau.geometry);
    const relabel::FeatureCache cache(tau.tau, store, ids);
    progress("stage2 " + window_key(w) + ": " + std::to_string(train.size()) + " training bags");
    // Bag labels index the setpoint classes of the stage-one vocabulary.
    ingest::ClassVocab vocab = ingest::ClassVocab::from_setpoints(tau.vocab.setpoints());
    for (auto* side : {&train, &val}) {
      for (auto& b : *side) b.label = vocab.setpoint_class(b.setpoint);
    }
    auto res = relabel::stage_two(cache, train, val, vocab, cfg.stage_two());
    optim::CheckpointMeta meta;
    meta.model = "bag_net";
    meta.config = bagnet::to_json(res.omega.config());
    meta.class_vocab = {{"setpoints", res.omega.setpoints()}};
    meta.rng_seed = cfg.seed;
    meta.extra = {{"tau_hash", tau.file_hash}, {"window", w}};
    const std::string ckpt = "omega_" + window_key(w) + ".ckpt";
    optim::save_checkpoint(res.omega.params(), meta, cfg.run_dir / ckpt);
    outputs.push_back(ckpt);
    report[window_key(w)] = {{"val_accuracy", res.val_accuracy},
                             {"epochs", res.history.epochs.size()},
                             {"best_epoch", res.history.best_epoch},
                             {"n_train_bags", train.size()},
                             {"n_val_bags", val.size()}};
    progress("stage2 " + window_key(w) + " val accuracy " + std::to_string(res.val_accuracy));
  }
  write_json(cfg.run_dir / "stage2_report.json", report);
  outputs.push_back("stage2_report.json");
  json inputs = fp.inputs;
  inputs["tau.ckpt"] = tau.file_hash;
  write_manifest(cfg.run_dir / "manifest_stage2.json", "stage2", cfg, inputs,
                 output_hashes(cfg.run_dir, outputs));
  out << report.dump(2) << '\n';
  return kOk;
}

int cmd_eval(const Options& o, const std::string& mode, std::optional<int> window, bool oracle,
             std::ostream& out) {
  const RunConfig cfg = resolve_config(o);
  const auto log = ingest::load_production_dir(cfg.data_dir);
  const auto fp = fingerprint(cfg.data_dir, log);
  const LoadedTau tau = load_tau(cfg.run_dir);
  check_fresh(tau, fp, cfg);
  const int w = window.value_or(static_cast<int>(cfg.ingest.window_w));
  json inputs = fp.inputs;
  inputs["tau.ckpt"] = tau.file_hash;

  std::optional<synth::GroundTruth> truth;
  if (oracle) {
    if (mode != "deploy") throw ConfigError("--oracle-truth applies to --mode deploy only");
    truth = synth::read_truth(cfg.data_dir / "truth.jsonl");
    inputs["truth.jsonl"] = git_blob_hash_file(cfg.data_dir / "truth.jsonl");
  }
  std::optional<bagnet::BagNet> omega;
  if (!oracle) {
    omega.emplace(load_omega(cfg.run_dir, w, tau));
    inputs["omega"] = git_blob_hash_file(cfg.run_dir / ("omega_" + window_key(w) + ".ckpt"));
  }

  if (mode == "table2") {
    const auto set = bags_at(log, cfg, w);
    const auto val = split_by_labs(set.bags, tau.val_labs).second;
    if (val.empty()) throw PreconditionError("eval: no validation bags at window " + window_key(w));
    const auto ids = bag_image_ids(val);
    const auto store = PatchStore::load(log, ids, tau.geometry);
    const relabel::FeatureCache cache(tau.tau, store, ids);
    const auto preds = relabel::predict_bags(*omega, cache, val);
    const auto vocab = ingest::ClassVocab::from_setpoints(omega->setpoints());
    std::vector<ClassId> p, l;
    for (std::size_t i = 0; i < val.size(); ++i) {
      p.push_back(vocab.setpoint_class(preds[i]));
      l.push_back(vocab.setpoint_class(val[i].setpoint));
    }
    const auto rep = eval::classification_report(p, l, vocab);
    json j = eval::to_json(rep, vocab);
    j["window"] = window_key(w);
    write_json(cfg.run_dir / "eval_table2.json", j);
    const auto table = eval::render_table(rep, vocab);
    std::ofstream(cfg.run_dir / "eval_table2.txt") << table;
    write_manifest(cfg.run_dir / "manifest_eval_table2.json", "eval table2", cfg, inputs,
                   output_hashes(cfg.run_dir, {"eval_table2.json", "eval_table2.txt"}));
    out << table;
    return kOk;
  }
  if (mode != "deploy") throw ConfigError("unknown eval mode '" + mode + "' (expected table2 or deploy)");

  // Both the model input window and the reference setpoint sit eval_offset before each lab.
  struct Pending {
    ingest::LabSample lab;
    Minutes ref = 0;
    double s_actual = 0.0;
    std::vector<std::size_t> frames;
  };
  std::vector<Pending> pending;
  std::size_t skipped = 0;
  const std::span<const ingest::ImageRecord> images(log.images);
  const std::span<const ingest::FeedReading> feed(log.feed);
  for (const auto& lab : log.labs) {
    const Minutes ref = lab.t - cfg.eval_offset;
    const auto it = std::upper_bound(feed.begin(), feed.end(), ref,
                                     [](Minutes t, const ingest::FeedReading& r) { return t < r.t; });
    const auto [first, last] = ingest::time_range(images, ref - w, ref);
    if (it == feed.begin() || first == last) {
      ++skipped;
      continue;
    }
    Pending p{lab, ref, std::prev(it)->setpoint, {}};
    for (std::size_t i = first; i < last; ++i) p.frames.push_back(i);
    pending.push_back(std::move(p));
  }
  if (pending.empty()) throw PreconditionError("eval: no lab result has frames in its evaluation window");

  std::vector<eval::DeployRecord> records;
  if (oracle) {
    for (const auto& p : pending) {
      // Last planted period starting at or before the final minute of the window.
      const auto period = std::upper_bound(truth->periods.begin(), truth->periods.end(), p.ref - 1,
                                           [](Minutes t, const synth::PeriodTruth& pt) { return t < pt.t_start; });
      if (period == truth->periods.begin()) throw PreconditionError("eval: truth has no period for a lab window");
      records.push_back({p.lab.t, p.lab.quality, p.s_actual, std::prev(period)->optimal});
    }
  } else {
    std::vector<std::size_t> all;
    for (const auto& p : pending) all.insert(all.end(), p.frames.begin(), p.frames.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    const auto store = PatchStore::load(log, all, tau.geometry);
    const relabel::FeatureCache cache(tau.tau, store, all);
    std::vector<ingest::Bag> windows;
    for (const auto& p : pending) {
      ingest::Bag b;
      b.instance_ids = p.frames;
      windows.push_back(std::move(b));
    }
    const auto preds = relabel::predict_bags(*omega, cache, windows);
    for (std::size_t i = 0; i < pending.size(); ++i) {
      records.push_back({pending[i].lab.t, pending[i].lab.quality, pending[i].s_actual, preds[i]});
    }
  }
  std::vector<double> pred_seq, actual_seq;
  for (const auto& r : records) {
    pred_seq.push_back(r.s_pred);
    actual_seq.push_back(r.s_actual);
  }
  const auto rep = eval::deploy_eval(records, pred_seq, actual_seq, cfg.ingest.q_m);
  json j = eval::to_json(rep);
  j["window"] = window_key(w);
  j["predictor"] = oracle ? "oracle" : "model";
  j["skipped_labs"] = skipped;
  const std::string stem = oracle ? "eval_deploy_oracle" : "eval_deploy";
  write_json(cfg.run_dir / (stem + ".json"), j);
  eval::write_deploy_csv(records, rep, cfg.run_dir / (stem + "_records.csv"));
  write_manifest(cfg.run_dir / ("manifest_" + stem + ".json"), "eval deploy", cfg, inputs,
                 output_hashes(cfg.run_dir, {stem + ".json", stem + "_records.csv"}));
  out << j.dump(2) << '\n';
  return kOk;
}

int cmd_predict(const Options& o, const std::string& window_dir, std::optional<int> window,
                std::ostream& out) {
  const RunConfig cfg = resolve_config(o);
  const LoadedTau tau = load_tau(cfg.run_dir);
  const int w = window.value_or(static_cast<int>(cfg.ingest.window_w));
  const auto omega = load_omega(cfg.run_dir, w, tau);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(window_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw PreconditionError("predict: no .png frames in " + window_dir);
  std::vector<imaging::PatchImage> patches;
  for (const auto& f : files) patches.push_back(imaging::downscale(imaging::read_png(f), tau.geometry));
  out << bagnet::predict_window(tau.tau, omega, patches, tau.geometry) << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weakly supervised feed-load recommendation from conveyor images", "orefeed"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub, bool data, bool run_dir) {
    sub->add_option("--config", o.config_path, "key = value config file");
    sub->add_option("--set", o.sets, "override, e.g. --set train.max_epochs=30");
    if (data) sub->add_option("--data", o.data_dir, "dataset directory");
    if (run_dir) sub->add_option("--run", o.run_dir, "run directory for checkpoints and reports");
    sub->add_flag("--quiet", o.quiet, "suppress progress on standard error");
  };

  std::string scenario, out_dir, out_path, bags_path, mode, window_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> window;
  bool sweep = false, oracle = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--scenario", scenario, "scenario config")->required();
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--seed", seed, "override the scenario seed");

  auto* ingest_cmd = app.add_subcommand("ingest", "assemble bags from production logs");
  common(ingest_cmd, true, false);
  ingest_cmd->add_option("--out", out_path, "bags.jsonl to write")->required();
  ingest_cmd->add_option("--window", window, "window length in minutes");

  auto* stage1 = app.add_subcommand("stage1", "train the patch model with iterative relabeling");
  common(stage1, true, true);
  stage1->add_option("--bags", bags_path, "bags.jsonl from ingest (default: assemble from --data)");

  auto* stage2 = app.add_subcommand("stage2", "train the bag model on patch features");
  common(stage2, true, true);
  auto* wopt = stage2->add_option("--window", window, "window length in minutes");
  stage2->add_flag("--sweep", sweep, "train one bag model per configured window")->excludes(wopt);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate trained models");
  common(eval_cmd, true, true);
  eval_cmd->add_option("--mode", mode, "table2 or deploy")->required();
  eval_cmd->add_option("--window", window, "window length in minutes");
  eval_cmd->add_flag("--oracle-truth", oracle, "deploy mode: predict the planted optimal setpoint");

  auto* predict = app.add_subcommand("predict", "recommend a setpoint for a directory of frames");
  common(predict, false, true);
  predict->add_option("--window-dir", window_dir, "directory of .png frames")->required();
  predict->add_option("--window", window, "bag model window in minutes");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(scenario, out_dir, seed, out);
    if (ingest_cmd->parsed()) return cmd_ingest(o, out_path, window, out);
    if (stage1->parsed()) return cmd_stage1(o, bags_path, out, err);
    if (stage2->parsed()) return cmd_stage2(o, window, sweep, out, err);
    if (eval_cmd->parsed()) return cmd_eval(o, mode, window, oracle, out);
    if (predict->parsed()) return cmd_predict(o, window_dir, window, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const TrainingAbort& e) {
    err << "training aborted: " << e.what() << '\n';
    return kTrainingAbort;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  err << app.help();
  return kUsage;
}

}  // namespace orefeed::cli
