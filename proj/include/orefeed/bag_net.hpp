#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "orefeed/imaging.hpp"
#include "orefeed/params.hpp"
#include "orefeed/patch_net.hpp"
#include "orefeed/tensor_ops.hpp"

namespace orefeed::bagnet {

struct BagNetConfig {
  int input_channels = 1020;  // G of the patch model
  int reduced_dim = 64;
  int hidden_dim = 128;
  int num_setpoint_classes = 17;
  bool reduce_activation = true;  // relu between the 1x1 reduction and the pool

  void validate() const;
  bool operator==(const BagNetConfig&) const = default;
};

nlohmann::json to_json(const BagNetConfig& cfg);
BagNetConfig bag_net_config_from_json(const nlohmann::json& j);

struct BagPrediction {
  Eigen::VectorXd probs;
  int class_index = 0;  // index into the setpoint table
  double setpoint = 0.0;
};

// Patch-set fusion model. Patch features enter only as reduced feature vectors;
// patch-level labels are never an input.
class BagNet {
 public:
  // setpoints: ascending setpoint value for each output class.
  BagNet(const BagNetConfig& cfg, std::vector<double> setpoints, std::uint64_t seed);
  BagNet(const BagNetConfig& cfg, std::vector<double> setpoints, ParamSet params);

  const BagNetConfig& config() const { return cfg_; }
  const std::vector<double>& setpoints() const { return setpoints_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // 1x1 conv G -> r, activation, spatial average pool.
  Eigen::VectorXd reduce(const ops::FeatureMap& gfm2) const;
  // mean (+) max over patches -> hidden -> softmax over setpoint classes.
  // Ties in the argmax go to the lower setpoint.
  BagPrediction fuse_predict(std::span<const Eigen::VectorXd> patch_features) const;
  BagPrediction predict(std::span<const ops::FeatureMap> gfm2s) const;

  // Cross-entropy for one bag of patch maps; adds parameter gradients into grad.
  double loss_grad(std::span<const ops::FeatureMap> gfm2s, int label, ParamSet& grad) const;
  // Same, but starting from already reduced patch features; only the classifier
  // tensors receive gradient.
  double fuse_loss_grad(std::span<const Eigen::VectorXd> patch_features, int label,
                        ParamSet& grad) const;

 private:
  struct FuseTape;
  void init_params(std::uint64_t seed);
  void fuse_forward(std::span<const Eigen::VectorXd> feats, FuseTape& tape) const;
  // Returns d loss / d patch feature for every patch.
  std::vector<Eigen::VectorXd> fuse_backward(const FuseTape& tape, std::span<const Eigen::VectorXd> feats,
                                             const Eigen::VectorXd& d_logits, ParamSet& grad) const;

  BagNetConfig cfg_;
  std::vector<double> setpoints_;
  ParamSet params_;
  std::size_t red_w_ = 0, red_b_ = 0, fc1_w_ = 0, fc1_b_ = 0, fc2_w_ = 0, fc2_b_ = 0;
};

// Full composition: patch images -> patch features -> reduced -> fused setpoint.
double predict_window(const patchnet::PatchNet& tau, const BagNet& omega,
                      std::span<const imaging::PatchImage> patches,
                      const imaging::SegmentGeometry& geom);

}  // namespace orefeed::bagnet
