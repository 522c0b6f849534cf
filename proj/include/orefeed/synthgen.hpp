#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "orefeed/common.hpp"
#include "orefeed/imaging.hpp"

namespace orefeed::synth {

struct SynthScenario {
  int n_latent = 6;
  // Latent class -> feed setpoint (tons); 0 is the empty belt.
  std::vector<double> setpoint_map = {0, 120, 125, 130, 135, 140};
  int image_width = 64;
  int image_height = 64;
  int pellets_min = 6;
  int pellets_max = 12;
  std::vector<double> radius_mean = {0.0, 3.0, 4.5, 6.0, 7.5, 9.0};
  double radius_sigma = 0.5;
  std::vector<double> hue = {0.0, 0.02, 0.12, 0.3, 0.55, 0.75};  // in [0, 1)
  double hue_jitter = 0.02;
  double pixel_noise = 6.0;  // std dev, 8-bit units
  double instance_noise = 0.4;
  int bags = 300;
  int patches_per_bag = 10;
  int image_interval = 2;  // minutes between frames
  int period = 60;         // minutes of constant setpoint per bag
  int latency = 90;        // lab result delay after the period ends
  double quality_base = 70.0;
  double quality_slope = 4.0;
  double quality_step = 5.0;
  double quality_sigma = 1.0;
  // Share of periods where the operator runs one setpoint above the optimum.
  double overfeed_rate = 0.0;
  std::string start = "2021-06-01T00:00";
  std::uint64_t seed = 1;

  void validate() const;
  int window_minutes() const { return patches_per_bag * image_interval; }
};

struct ImageTruth {
  Minutes t = 0;
  int latent = 0;
  int period = 0;
};

struct PeriodTruth {
  Minutes t_start = 0;
  Minutes lab_t = 0;
  int dominant = 0;
  double setpoint = 0.0;  // what the operator ran
  double optimal = 0.0;   // setpoint of the dominant class
  double quality = 0.0;
};

struct GroundTruth {
  std::vector<ImageTruth> images;  // index = image id in images.jsonl
  std::vector<PeriodTruth> periods;
};

// Expected lab quality: base - slope * max(0, setpoint - optimum(dominant)) / step.
double quality_mean(const SynthScenario& scenario, double setpoint, int dominant);

// Disks of the latent's radius and hue on a dark background. Latent 0 renders no disks.
imaging::Image8 gen_image(int latent, const SynthScenario& scenario, std::uint64_t seed);

GroundTruth plan_dataset(const SynthScenario& scenario);
// Writes labs.csv, feed.csv, images.jsonl, images/*.png and truth.jsonl.
GroundTruth gen_dataset(const SynthScenario& scenario, const std::filesystem::path& out_dir);
GroundTruth read_truth(const std::filesystem::path& path);

struct OracleScores {
  double purity = 0.0;
  double adjusted_rand_index = 0.0;
};

// Purity maps every predicted label to its most frequent true class.
OracleScores oracle_scores(std::span<const int> labels, std::span<const int> truth);
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

}  // namespace orefeed::synth
