#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "orefeed/imaging.hpp"
#include "orefeed/params.hpp"
#include "orefeed/tensor_ops.hpp"

namespace orefeed::patchnet {

// Dense-connectivity encoder. Each layer is relu -> 3x3 conv adding `growth`
// channels; transitions are relu -> 1x1 conv halving channels -> 2x2 avg pool.
// The stem is a 3x3 conv followed by a 2x2 avg pool.
struct EncoderConfig {
  int blocks = 3;
  int layers_per_block = 4;
  int growth = 12;
  int stem_channels = 24;

  bool operator==(const EncoderConfig&) const = default;
};

enum class Aggregation { Mean, Sum };

struct PatchNetConfig {
  int num_classes = 17;
  int per_class_channels = 60;
  EncoderConfig encoder;
  int segment_count = 7;
  int segment_size = 224;
  Aggregation aggregation = Aggregation::Mean;

  int fused_channels() const { return num_classes * per_class_channels; }
  int encoder_channels() const;
  int feature_side() const;  // spatial side of the encoder output
  void validate() const;

  bool operator==(const PatchNetConfig&) const = default;
};

nlohmann::json to_json(const PatchNetConfig& cfg);
PatchNetConfig patch_net_config_from_json(const nlohmann::json& j);

struct PatchNetOutput {
  ops::FeatureMap gfm2;  // fused_channels x side*side, post-activation
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
};

// Cross-entropy of a probability vector against a label index.
double loss(const Eigen::VectorXd& probs, int label);

class PatchNet {
 public:
  PatchNet(const PatchNetConfig& cfg, std::uint64_t seed);
  // Adopts existing parameters (e.g. from a checkpoint); layout must match cfg.
  PatchNet(const PatchNetConfig& cfg, ParamSet params);

  const PatchNetConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  PatchNetOutput forward(std::span<const imaging::Segment> segments) const;
  // Spatially pooled gfm2: the concatenation of every head's pooled input.
  Eigen::VectorXd extract_features(std::span<const imaging::Segment> segments) const;

  // Cross-entropy for one sample; adds d loss / d params into grad.
  double loss_grad(std::span<const imaging::Segment> segments, int label, ParamSet& grad) const;

  // |d logits[cls] / d pixel| for every segment pixel and channel.
  std::vector<imaging::PlanarImage> saliency(std::span<const imaging::Segment> segments,
                                             int cls) const;

  // Gradient of logits[cls] w.r.t. the segment pixels (signed).
  std::vector<imaging::PlanarImage> input_gradient(std::span<const imaging::Segment> segments,
                                                   int cls) const;

  // Encoder output for one segment (encoder_channels x side*side).
  ops::FeatureMap encode(const imaging::PlanarImage& segment) const;

 private:
  struct SegmentTape;
  struct Tape;

  void init_params(std::uint64_t seed);
  void run_forward(std::span<const imaging::Segment> segments, Tape& tape) const;
  void encode_segment(const imaging::PlanarImage& seg, SegmentTape& tape) const;
  void backward(const Tape& tape, const Eigen::VectorXd& d_logits, ParamSet* grad,
                std::vector<imaging::PlanarImage>* d_inputs) const;
  void backward_segment(const SegmentTape& tape, const ops::FeatureMap& d_enc, ParamSet* grad,
                        imaging::PlanarImage* d_input) const;

  PatchNetConfig cfg_;
  ParamSet params_;
  struct LayerIdx {
    std::size_t w, b;
  };
  LayerIdx stem_{};
  std::vector<std::vector<LayerIdx>> dense_;  // [block][layer]
  std::vector<LayerIdx> transitions_;         // blocks - 1
  LayerIdx fuse_{};
  LayerIdx head_{};
};

}  // namespace orefeed::patchnet
