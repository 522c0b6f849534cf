#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "orefeed/bag_net.hpp"
#include "orefeed/imaging.hpp"
#include "orefeed/ingest.hpp"
#include "orefeed/optimizer.hpp"
#include "orefeed/patch_net.hpp"
#include "orefeed/synthgen.hpp"
#include "orefeed/weak_relabel.hpp"

namespace orefeed {

struct RelabelSettings {
  int k_min = 10;
  int k_max = 31;
  int max_iterations = 4;
  double epsilon = 0.01;
  relabel::RelabelMode mode = relabel::RelabelMode::ClusterId;
  double purity_threshold = 0.5;
  double variance_target = 0.95;
};

struct RunConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path run_dir = "run";

  ingest::AssembleParams ingest;
  double split_ratio = 0.8;
  Minutes eval_offset = 120;  // deployment eval looks this far before each lab result

  imaging::SegmentGeometry geometry;
  patchnet::PatchNetConfig patch_net;  // segment count/size follow the geometry
  bagnet::BagNetConfig bag_net;
  optim::TrainConfig train;      // patch model
  optim::TrainConfig bag_train;  // bag model
  RelabelSettings relabel;
  std::vector<int> sweep_windows = {15, 20, 25, 30, 35};
  std::uint64_t seed = 0;

  synth::SynthScenario synth;

  relabel::StageOneConfig stage_one() const;
  relabel::StageTwoConfig stage_two() const;
};

// Plain "key = value" text with [section] headers and '#' comments. Missing keys
// keep their defaults; unknown keys and ill-typed values raise ConfigError.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);
// Applies one "section.key=value" override on top of an existing config.
void apply_override(RunConfig& cfg, const std::string& assignment);

nlohmann::json to_json(const RunConfig& cfg);

}  // namespace orefeed
