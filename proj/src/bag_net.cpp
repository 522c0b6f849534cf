#include "orefeed/bag_net.hpp"

#include <cmath>
#include <string>

#include "orefeed/common.hpp"
#include "orefeed/random.hpp"

namespace orefeed::bagnet {

using ops::FeatureMap;

void BagNetConfig::validate() const {
  if (input_channels < 1) throw ShapeError("bag_net: input_channels must be >= 1");
  if (reduced_dim < 1) throw ShapeError("bag_net: reduced_dim must be >= 1");
  if (hidden_dim < 1) throw ShapeError("bag_net: hidden_dim must be >= 1");
  if (num_setpoint_classes < 1) throw ShapeError("bag_net: need at least one setpoint class");
}

nlohmann::json to_json(const BagNetConfig& cfg) {
  return {{"input_channels", cfg.input_channels},
          {"reduced_dim", cfg.reduced_dim},
          {"hidden_dim", cfg.hidden_dim},
          {"num_setpoint_classes", cfg.num_setpoint_classes},
          {"reduce_activation", cfg.reduce_activation}};
}

BagNetConfig bag_net_config_from_json(const nlohmann::json& j) {
  BagNetConfig cfg;
  cfg.input_channels = j.at("input_channels").get<int>();
  cfg.reduced_dim = j.at("reduced_dim").get<int>();
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  cfg.num_setpoint_classes = j.at("num_setpoint_classes").get<int>();
  cfg.reduce_activation = j.at("reduce_activation").get<bool>();
  cfg.validate();
  return cfg;
}

struct BagNet::FuseTape {
  Eigen::VectorXd fused;                 // [mean; max], length 2r
  std::vector<Eigen::Index> argmax;      // winning patch per max component
  Eigen::VectorXd hidden_pre, hidden, logits, probs;
};

BagNet::BagNet(const BagNetConfig& cfg, std::vector<double> setpoints, std::uint64_t seed)
    : cfg_(cfg), setpoints_(std::move(setpoints)) {
  cfg_.validate();
  if (static_cast<int>(setpoints_.size()) != cfg_.num_setpoint_classes) {
    throw ShapeError("bag_net: setpoint table size does not match num_setpoint_classes");
  }
  init_params(seed);
}

BagNet::BagNet(const BagNetConfig& cfg, std::vector<double> setpoints, ParamSet params)
    : BagNet(cfg, std::move(setpoints), std::uint64_t{0}) {
  if (!params_.same_layout(params)) {
    throw ShapeError("bag_net: parameter layout does not match config");
  }
  params_ = std::move(params);
}

void BagNet::init_params(std::uint64_t seed) {
  auto sz = [](int v) { return static_cast<std::size_t>(v); };
  params_ = ParamSet{};
  red_w_ = params_.add("reduce.w", {sz(cfg_.reduced_dim), sz(cfg_.input_channels), 1, 1});
  red_b_ = params_.add("reduce.b", {sz(cfg_.reduced_dim)});
  fc1_w_ = params_.add("fuse.fc1.w", {sz(cfg_.hidden_dim), sz(2 * cfg_.reduced_dim)});
  fc1_b_ = params_.add("fuse.fc1.b", {sz(cfg_.hidden_dim)});
  fc2_w_ = params_.add("fuse.fc2.w", {sz(cfg_.num_setpoint_classes), sz(cfg_.hidden_dim)});
  fc2_b_ = params_.add("fuse.fc2.b", {sz(cfg_.num_setpoint_classes)});
  Rng rng(seed);
  for (auto& t : params_) {
    if (t.shape.size() < 2) continue;
    ops::he_uniform(t, t.size() / t.shape[0], rng);
  }
}

Eigen::VectorXd BagNet::reduce(const FeatureMap& gfm2) const {
  if (gfm2.rows() != cfg_.input_channels) {
    throw ShapeError("bag_net: expected " + std::to_string(cfg_.input_channels) +
                     " input channels, got " + std::to_string(gfm2.rows()));
  }
  FeatureMap y = ops::as_matrix(params_[red_w_], cfg_.reduced_dim, cfg_.input_channels) * gfm2;
  y.colwise() += ops::as_vector(params_[red_b_]);
  if (cfg_.reduce_activation) y = ops::relu(y);
  return y.rowwise().mean();
}

void BagNet::fuse_forward(std::span<const Eigen::VectorXd> feats, FuseTape& tape) const {
  require(!feats.empty(), "bag_net: a bag needs at least one patch");
  const int r = cfg_.reduced_dim;
  for (const auto& f : feats) {
    if (f.size() != r) throw ShapeError("bag_net: patch feature length must equal reduced_dim");
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(r);
  Eigen::VectorXd mx = feats[0];
  tape.argmax.assign(static_cast<std::size_t>(r), 0);
  for (std::size_t p = 0; p < feats.size(); ++p) {
    mean += feats[p];
    if (p == 0) continue;
    for (int k = 0; k < r; ++k) {
      if (feats[p][k] > mx[k]) {
        mx[k] = feats[p][k];
        tape.argmax[static_cast<std::size_t>(k)] = static_cast<Eigen::Index>(p);
      }
    }
  }
  mean /= static_cast<double>(feats.size());
  tape.fused.resize(2 * r);
  tape.fused << mean, mx;

  const auto w1 = ops::as_matrix(params_[fc1_w_], cfg_.hidden_dim, 2 * r);
  tape.hidden_pre = w1 * tape.fused + ops::as_vector(params_[fc1_b_]);
  tape.hidden = tape.hidden_pre.cwiseMax(0.0);
  const auto w2 = ops::as_matrix(params_[fc2_w_], cfg_.num_setpoint_classes, cfg_.hidden_dim);
  tape.logits = w2 * tape.hidden + ops::as_vector(params_[fc2_b_]);
  tape.probs = ops::softmax(tape.logits);
}

BagPrediction BagNet::fuse_predict(std::span<const Eigen::VectorXd> patch_features) const {
  FuseTape tape;
  fuse_forward(patch_features, tape);
  BagPrediction out;
  out.probs = tape.probs;
  // Setpoints ascend, so the first maximum is the lowest tied setpoint.
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < out.probs.size(); ++i) {
    if (out.probs[i] > out.probs[best]) best = i;
  }
  out.class_index = static_cast<int>(best);
  out.setpoint = setpoints_[static_cast<std::size_t>(best)];
  return out;
}

BagPrediction BagNet::predict(std::span<const FeatureMap> gfm2s) const {
  std::vector<Eigen::VectorXd> feats;
  feats.reserve(gfm2s.size());
  for (const auto& m : gfm2s) feats.push_back(reduce(m));
  return fuse_predict(feats);
}

std::vector<Eigen::VectorXd> BagNet::fuse_backward(const FuseTape& tape,
                                                   std::span<const Eigen::VectorXd> feats,
                                                   const Eigen::VectorXd& d_logits,
                                                   ParamSet& grad) const {
  const int r = cfg_.reduced_dim;
  const auto w1 = ops::as_matrix(params_[fc1_w_], cfg_.hidden_dim, 2 * r);
  const auto w2 = ops::as_matrix(params_[fc2_w_], cfg_.num_setpoint_classes, cfg_.hidden_dim);

  ops::as_matrix(grad[fc2_w_], cfg_.num_setpoint_classes, cfg_.hidden_dim).noalias() +=
      d_logits * tape.hidden.transpose();
  ops::as_vector(grad[fc2_b_]) += d_logits;
  Eigen::VectorXd d_hidden = w2.transpose() * d_logits;
  d_hidden.array() *= (tape.hidden_pre.array() > 0.0).cast<double>();
  ops::as_matrix(grad[fc1_w_], cfg_.hidden_dim, 2 * r).noalias() +=
      d_hidden * tape.fused.transpose();
  ops::as_vector(grad[fc1_b_]) += d_hidden;
  const Eigen::VectorXd d_fused = w1.transpose() * d_hidden;

  const double inv_m = 1.0 / static_cast<double>(feats.size());
  std::vector<Eigen::VectorXd> d_feats(feats.size(), d_fused.head(r) * inv_m);
  for (int k = 0; k < r; ++k) {
    d_feats[static_cast<std::size_t>(tape.argmax[static_cast<std::size_t>(k)])][k] +=
        d_fused[r + k];
  }
  return d_feats;
}

double BagNet::fuse_loss_grad(std::span<const Eigen::VectorXd> patch_features, int label,
                              ParamSet& grad) const {
  if (label < 0 || label >= cfg_.num_setpoint_classes) {
    throw PreconditionError("bag_net: label " + std::to_string(label) + " out of range");
  }
  FuseTape tape;
  fuse_forward(patch_features, tape);
  Eigen::VectorXd d_logits = tape.probs;
  d_logits[label] -= 1.0;
  fuse_backward(tape, patch_features, d_logits, grad);
  const double m = tape.logits.maxCoeff();
  return m + std::log((tape.logits.array() - m).exp().sum()) - tape.logits[label];
}

double BagNet::loss_grad(std::span<const FeatureMap> gfm2s, int label, ParamSet& grad) const {
  if (label < 0 || label >= cfg_.num_setpoint_classes) {
    throw PreconditionError("bag_net: label " + std::to_string(label) + " out of range");
  }
  const auto wr = ops::as_matrix(params_[red_w_], cfg_.reduced_dim, cfg_.input_channels);
  std::vector<FeatureMap> pre;
  std::vector<Eigen::VectorXd> feats;
  pre.reserve(gfm2s.size());
  feats.reserve(gfm2s.size());
  for (const auto& m : gfm2s) {
    if (m.rows() != cfg_.input_channels) throw ShapeError("bag_net: input channel mismatch");
    FeatureMap y = wr * m;
    y.colwise() += ops::as_vector(params_[red_b_]);
    feats.push_back((cfg_.reduce_activation ? ops::relu(y) : y).rowwise().mean());
    pre.push_back(std::move(y));
  }
  FuseTape tape;
  fuse_forward(feats, tape);
  Eigen::VectorXd d_logits = tape.probs;
  d_logits[label] -= 1.0;
  const auto d_feats = fuse_backward(tape, feats, d_logits, grad);

  auto gw = ops::as_matrix(grad[red_w_], cfg_.reduced_dim, cfg_.input_channels);
  auto gb = ops::as_vector(grad[red_b_]);
  for (std::size_t p = 0; p < gfm2s.size(); ++p) {
    const double inv_hw = 1.0 / static_cast<double>(pre[p].cols());
    FeatureMap d_y = (d_feats[p] * inv_hw).replicate(1, pre[p].cols());
    if (cfg_.reduce_activation) d_y.array() *= (pre[p].array() > 0.0).cast<double>();
    gw.noalias() += d_y * gfm2s[p].transpose();
    gb += d_y.rowwise().sum();
  }
  const double m = tape.logits.maxCoeff();
  return m + std::log((tape.logits.array() - m).exp().sum()) - tape.logits[label];
}

double predict_window(const patchnet::PatchNet& tau, const BagNet& omega,
                      std::span<const imaging::PatchImage> patches,
                      const imaging::SegmentGeometry& geom) {
  require(!patches.empty(), "predict_window: need at least one patch");
  std::vector<Eigen::VectorXd> feats;
  feats.reserve(patches.size());
  for (const auto& p : patches) {
    const auto segs = imaging::extract_segments(p, geom);
    feats.push_back(omega.reduce(tau.forward(segs).gfm2));
  }
  return omega.fuse_predict(feats).setpoint;
}

}  // namespace orefeed::bagnet
