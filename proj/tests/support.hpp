#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "orefeed/bag_net.hpp"
#include "orefeed/common.hpp"
#include "orefeed/imaging.hpp"
#include "orefeed/optimizer.hpp"
#include "orefeed/patch_net.hpp"
#include "orefeed/random.hpp"

namespace testing_support {

using namespace orefeed;

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("orefeed_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<imaging::Segment> random_segments(int count, int size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<imaging::Segment> out;
  for (int s = 0; s < count; ++s) {
    imaging::Segment seg{imaging::PlanarImage(3, size, size), s * size / 2};
    for (auto& v : seg.pixels.px) v = rng.uniform();
    out.push_back(std::move(seg));
  }
  return out;
}

inline ops::FeatureMap random_map(int channels, int spatial, Rng& rng) {
  ops::FeatureMap m(channels, spatial);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

inline patchnet::PatchNetConfig tiny_patch_config(int classes = 3, int d = 4, int segments = 2,
                                                  int size = 32) {
  patchnet::PatchNetConfig cfg;
  cfg.num_classes = classes;
  cfg.per_class_channels = d;
  cfg.encoder = {2, 2, 4, 6};
  cfg.segment_count = segments;
  cfg.segment_size = size;
  return cfg;
}

// Patch model bound to fixed samples.
class PatchTrainable : public optim::Trainable {
 public:
  PatchTrainable(patchnet::PatchNet& net,
                 std::vector<std::pair<std::vector<imaging::Segment>, int>> samples)
      : net_(net), samples_(std::move(samples)) {}
  ParamSet& params() override { return net_.params(); }
  double loss_grad(std::size_t i, std::optional<std::uint64_t>, ParamSet& grad) const override {
    return net_.loss_grad(samples_[i].first, samples_[i].second, grad);
  }
  int predict(std::size_t i) const override {
    Eigen::Index k;
    net_.forward(samples_[i].first).probs.maxCoeff(&k);
    return static_cast<int>(k);
  }
  int label(std::size_t i) const override { return samples_[i].second; }

 private:
  patchnet::PatchNet& net_;
  std::vector<std::pair<std::vector<imaging::Segment>, int>> samples_;
};

// Bag model bound to fixed patch maps.
class BagTrainable : public optim::Trainable {
 public:
  BagTrainable(bagnet::BagNet& net, std::vector<std::pair<std::vector<ops::FeatureMap>, int>> bags)
      : net_(net), bags_(std::move(bags)) {}
  ParamSet& params() override { return net_.params(); }
  double loss_grad(std::size_t i, std::optional<std::uint64_t>, ParamSet& grad) const override {
    return net_.loss_grad(bags_[i].first, bags_[i].second, grad);
  }
  int predict(std::size_t i) const override { return net_.predict(bags_[i].first).class_index; }
  int label(std::size_t i) const override { return bags_[i].second; }

 private:
  bagnet::BagNet& net_;
  std::vector<std::pair<std::vector<ops::FeatureMap>, int>> bags_;
};

}  // namespace testing_support
