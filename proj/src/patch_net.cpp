#include "orefeed/patch_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "orefeed/common.hpp"
#include "orefeed/random.hpp"

namespace orefeed::patchnet {

using ops::FeatureMap;
using imaging::PlanarImage;
using imaging::Segment;

int PatchNetConfig::encoder_channels() const {
  int c = encoder.stem_channels;
  for (int b = 0; b < encoder.blocks; ++b) {
    c += encoder.layers_per_block * encoder.growth;
    if (b + 1 < encoder.blocks) c /= 2;
  }
  return c;
}

int PatchNetConfig::feature_side() const { return segment_size >> encoder.blocks; }

void PatchNetConfig::validate() const {
  if (num_classes < 2) throw ShapeError("patch_net: num_classes must be >= 2");
  if (per_class_channels < 1) throw ShapeError("patch_net: per_class_channels must be >= 1");
  if (segment_count < 1) throw ShapeError("patch_net: segment_count must be >= 1");
  if (encoder.blocks < 1 || encoder.layers_per_block < 1 || encoder.growth < 1 ||
      encoder.stem_channels < 1) {
    throw ShapeError("patch_net: encoder sizes must be >= 1");
  }
  if (segment_size <= 0 || segment_size % (1 << encoder.blocks) != 0) {
    throw ShapeError("patch_net: segment_size must be divisible by 2^blocks");
  }
}

nlohmann::json to_json(const PatchNetConfig& cfg) {
  return {{"num_classes", cfg.num_classes},
          {"per_class_channels", cfg.per_class_channels},
          {"blocks", cfg.encoder.blocks},
          {"layers_per_block", cfg.encoder.layers_per_block},
          {"growth", cfg.encoder.growth},
          {"stem_channels", cfg.encoder.stem_channels},
          {"segment_count", cfg.segment_count},
          {"segment_size", cfg.segment_size},
          {"aggregation", cfg.aggregation == Aggregation::Mean ? "mean" : "sum"}};
}

PatchNetConfig patch_net_config_from_json(const nlohmann::json& j) {
  PatchNetConfig cfg;
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.per_class_channels = j.at("per_class_channels").get<int>();
  cfg.encoder.blocks = j.at("blocks").get<int>();
  cfg.encoder.layers_per_block = j.at("layers_per_block").get<int>();
  cfg.encoder.growth = j.at("growth").get<int>();
  cfg.encoder.stem_channels = j.at("stem_channels").get<int>();
  cfg.segment_count = j.at("segment_count").get<int>();
  cfg.segment_size = j.at("segment_size").get<int>();
  cfg.aggregation = j.at("aggregation").get<std::string>() == "sum" ? Aggregation::Sum
                                                                    : Aggregation::Mean;
  cfg.validate();
  return cfg;
}

double loss(const Eigen::VectorXd& probs, int label) {
  if (label < 0 || label >= probs.size()) {
    throw PreconditionError("loss: label " + std::to_string(label) + " out of range");
  }
  return -std::log(probs[label]);
}

struct PatchNet::SegmentTape {
  struct Block {
    int side = 0;
    std::vector<FeatureMap> chunks;  // pre-activation; chunk 0 is the block input
    std::vector<FeatureMap> cols;    // im2col(relu(chunk)) for chunks feeding 3x3 convs
  };
  FeatureMap input_col;
  std::vector<Block> blocks;
  FeatureMap enc_out;
};

struct PatchNet::Tape {
  std::vector<SegmentTape> segs;
  FeatureMap gfm1, z, gfm2;
  Eigen::VectorXd pooled, logits, probs;
};

namespace {

FeatureMap concat_relu(const std::vector<FeatureMap>& chunks) {
  Eigen::Index rows = 0;
  for (const auto& c : chunks) rows += c.rows();
  FeatureMap out(rows, chunks.front().cols());
  Eigen::Index r = 0;
  for (const auto& c : chunks) {
    out.middleRows(r, c.rows()) = ops::relu(c);
    r += c.rows();
  }
  return out;
}

FeatureMap to_feature_map(const PlanarImage& img) {
  FeatureMap x(img.channels, static_cast<Eigen::Index>(img.plane()));
  for (int c = 0; c < img.channels; ++c) {
    for (std::size_t i = 0; i < img.plane(); ++i) {
      x(c, static_cast<Eigen::Index>(i)) = img.px[static_cast<std::size_t>(c) * img.plane() + i];
    }
  }
  return x;
}

void add_bias(FeatureMap& m, const Tensor& b) { m.colwise() += ops::as_vector(b); }

}  // namespace

PatchNet::PatchNet(const PatchNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  init_params(seed);
}

PatchNet::PatchNet(const PatchNetConfig& cfg, ParamSet params) : cfg_(cfg) {
  cfg_.validate();
  init_params(0);
  if (!params_.same_layout(params)) {
    throw ShapeError("patch_net: parameter layout does not match config");
  }
  params_ = std::move(params);
}

void PatchNet::init_params(std::uint64_t seed) {
  params_ = ParamSet{};
  dense_.clear();
  transitions_.clear();
  const auto& e = cfg_.encoder;
  auto sz = [](int v) { return static_cast<std::size_t>(v); };

  stem_.w = params_.add("enc.stem.w", {sz(e.stem_channels), 3, 3, 3});
  stem_.b = params_.add("enc.stem.b", {sz(e.stem_channels)});
  int c = e.stem_channels;
  for (int b = 0; b < e.blocks; ++b) {
    std::vector<LayerIdx> layers;
    for (int l = 0; l < e.layers_per_block; ++l) {
      const std::string p = "enc.b" + std::to_string(b) + ".l" + std::to_string(l);
      const int cin = c + l * e.growth;
      layers.push_back({params_.add(p + ".w", {sz(e.growth), sz(cin), 3, 3}),
                        params_.add(p + ".b", {sz(e.growth)})});
    }
    dense_.push_back(std::move(layers));
    c += e.layers_per_block * e.growth;
    if (b + 1 < e.blocks) {
      const std::string p = "enc.t" + std::to_string(b);
      transitions_.push_back({params_.add(p + ".w", {sz(c / 2), sz(c), 1, 1}),
                              params_.add(p + ".b", {sz(c / 2)})});
      c /= 2;
    }
  }
  const int g = cfg_.fused_channels();
  fuse_.w = params_.add("fuse.w", {sz(g), sz(c), 1, 1});
  fuse_.b = params_.add("fuse.b", {sz(g)});
  head_.w = params_.add("head.w", {sz(cfg_.num_classes), sz(cfg_.per_class_channels)});
  head_.b = params_.add("head.b", {sz(cfg_.num_classes)});

  Rng rng(seed);
  for (auto& t : params_) {
    if (t.shape.size() < 2) continue;  // biases stay zero
    const std::size_t fan_in = t.size() / t.shape[0];
    ops::he_uniform(t, fan_in, rng);
  }
}

void PatchNet::encode_segment(const PlanarImage& seg, SegmentTape& tape) const {
  const auto& e = cfg_.encoder;
  int side = cfg_.segment_size;
  tape.input_col = ops::im2col3x3(to_feature_map(seg), side, side);
  const Tensor& ws = params_[stem_.w];
  FeatureMap stem = ops::as_matrix(ws, e.stem_channels, 27) * tape.input_col;
  add_bias(stem, params_[stem_.b]);
  FeatureMap h = ops::avgpool2(stem, side, side);
  side /= 2;

  tape.blocks.assign(static_cast<std::size_t>(e.blocks), {});
  for (int b = 0; b < e.blocks; ++b) {
    auto& blk = tape.blocks[static_cast<std::size_t>(b)];
    blk.side = side;
    blk.chunks.clear();
    blk.cols.clear();
    blk.chunks.push_back(std::move(h));
    for (int l = 0; l < e.layers_per_block; ++l) {
      blk.cols.push_back(ops::im2col3x3(ops::relu(blk.chunks.back()), side, side));
      const LayerIdx& li = dense_[static_cast<std::size_t>(b)][static_cast<std::size_t>(l)];
      const Tensor& w = params_[li.w];
      const auto wm = ops::as_matrix(w, e.growth, static_cast<Eigen::Index>(w.size() / e.growth));
      FeatureMap out = FeatureMap::Zero(e.growth, static_cast<Eigen::Index>(side) * side);
      Eigen::Index off = 0;
      for (int j = 0; j <= l; ++j) {
        const auto& col = blk.cols[static_cast<std::size_t>(j)];
        out.noalias() += wm.middleCols(off, col.rows()) * col;
        off += col.rows();
      }
      add_bias(out, params_[li.b]);
      blk.chunks.push_back(std::move(out));
    }
    FeatureMap cat = concat_relu(blk.chunks);
    if (b + 1 < e.blocks) {
      const LayerIdx& ti = transitions_[static_cast<std::size_t>(b)];
      const Tensor& w = params_[ti.w];
      FeatureMap t = ops::as_matrix(w, static_cast<Eigen::Index>(w.shape[0]), cat.rows()) * cat;
      add_bias(t, params_[ti.b]);
      h = ops::avgpool2(t, side, side);
      side /= 2;
    } else {
      tape.enc_out = std::move(cat);
    }
  }
}

FeatureMap PatchNet::encode(const PlanarImage& segment) const {
  if (segment.channels != 3 || segment.height != cfg_.segment_size ||
      segment.width != cfg_.segment_size) {
    throw ShapeError("patch_net: segment shape mismatch");
  }
  SegmentTape tape;
  encode_segment(segment, tape);
  return std::move(tape.enc_out);
}

void PatchNet::run_forward(std::span<const Segment> segments, Tape& tape) const {
  if (static_cast<int>(segments.size()) != cfg_.segment_count) {
    throw ShapeError("patch_net: expected " + std::to_string(cfg_.segment_count) +
                     " segments, got " + std::to_string(segments.size()));
  }
  for (const auto& s : segments) {
    if (s.pixels.channels != 3 || s.pixels.height != cfg_.segment_size ||
        s.pixels.width != cfg_.segment_size) {
      throw ShapeError("patch_net: segment shape mismatch, expected 3x" +
                       std::to_string(cfg_.segment_size) + "x" +
                       std::to_string(cfg_.segment_size));
    }
  }
  const std::size_t n = segments.size();
  tape.segs.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) encode_segment(segments[i].pixels, tape.segs[i]);

  // Sum in a canonical (lexicographic) order of the segment maps so the result is
  // bit-identical under any permutation of the inputs.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ma = tape.segs[a].enc_out;
    const auto& mb = tape.segs[b].enc_out;
    return std::lexicographical_compare(ma.data(), ma.data() + ma.size(), mb.data(),
                                        mb.data() + mb.size());
  });
  tape.gfm1 = FeatureMap::Zero(tape.segs[0].enc_out.rows(), tape.segs[0].enc_out.cols());
  for (const std::size_t i : order) tape.gfm1 += tape.segs[i].enc_out;
  if (cfg_.aggregation == Aggregation::Mean) tape.gfm1 /= static_cast<double>(n);

  const Tensor& wf = params_[fuse_.w];
  tape.z = ops::as_matrix(wf, cfg_.fused_channels(), tape.gfm1.rows()) * tape.gfm1;
  add_bias(tape.z, params_[fuse_.b]);
  tape.gfm2 = ops::relu(tape.z);
  tape.pooled = tape.gfm2.rowwise().mean();

  const int d = cfg_.per_class_channels;
  const auto hw = ops::as_matrix(params_[head_.w], cfg_.num_classes, d);
  const auto hb = ops::as_vector(params_[head_.b]);
  tape.logits.resize(cfg_.num_classes);
  for (int c = 0; c < cfg_.num_classes; ++c) {
    tape.logits[c] = hw.row(c).dot(tape.pooled.segment(c * d, d)) + hb[c];
  }
  tape.probs = ops::softmax(tape.logits);
}

PatchNetOutput PatchNet::forward(std::span<const Segment> segments) const {
  Tape tape;
  run_forward(segments, tape);
  return {std::move(tape.gfm2), std::move(tape.logits), std::move(tape.probs)};
}

Eigen::VectorXd PatchNet::extract_features(std::span<const Segment> segments) const {
  Tape tape;
  run_forward(segments, tape);
  return tape.pooled;
}

void PatchNet::backward(const Tape& tape, const Eigen::VectorXd& d_logits, ParamSet* grad,
                        std::vector<PlanarImage>* d_inputs) const {
  const int d = cfg_.per_class_channels;
  const int g = cfg_.fused_channels();
  const auto hw = ops::as_matrix(params_[head_.w], cfg_.num_classes, d);

  Eigen::VectorXd d_pooled(g);
  for (int c = 0; c < cfg_.num_classes; ++c) {
    d_pooled.segment(c * d, d) = d_logits[c] * hw.row(c).transpose();
  }
  if (grad) {
    auto ghw = ops::as_matrix((*grad)[head_.w], cfg_.num_classes, d);
    auto ghb = ops::as_vector((*grad)[head_.b]);
    for (int c = 0; c < cfg_.num_classes; ++c) {
      ghw.row(c) += d_logits[c] * tape.pooled.segment(c * d, d).transpose();
    }
    ghb += d_logits;
  }

  const double inv_hw = 1.0 / static_cast<double>(tape.gfm2.cols());
  FeatureMap d_z = (d_pooled * inv_hw).replicate(1, tape.gfm2.cols());
  d_z.array() *= (tape.z.array() > 0.0).cast<double>();
  const Tensor& wf = params_[fuse_.w];
  const auto wfm = ops::as_matrix(wf, g, tape.gfm1.rows());
  if (grad) {
    ops::as_matrix((*grad)[fuse_.w], g, tape.gfm1.rows()).noalias() += d_z * tape.gfm1.transpose();
    ops::as_vector((*grad)[fuse_.b]) += d_z.rowwise().sum();
  }
  FeatureMap d_enc = wfm.transpose() * d_z;
  if (cfg_.aggregation == Aggregation::Mean) d_enc /= static_cast<double>(tape.segs.size());

  if (d_inputs) d_inputs->assign(tape.segs.size(), PlanarImage{});
  for (std::size_t i = 0; i < tape.segs.size(); ++i) {
    backward_segment(tape.segs[i], d_enc, grad, d_inputs ? &(*d_inputs)[i] : nullptr);
  }
}

void PatchNet::backward_segment(const SegmentTape& tape, const FeatureMap& d_enc, ParamSet* grad,
                                PlanarImage* d_input) const {
  const auto& e = cfg_.encoder;
  const int blocks = e.blocks;

  // Gradient w.r.t. relu(chunk) for every chunk of the current block.
  std::vector<FeatureMap> d_relu;
  {
    const auto& last = tape.blocks.back();
    Eigen::Index r = 0;
    for (const auto& c : last.chunks) {
      d_relu.push_back(d_enc.middleRows(r, c.rows()));
      r += c.rows();
    }
  }

  for (int b = blocks - 1; b >= 0; --b) {
    const auto& blk = tape.blocks[static_cast<std::size_t>(b)];
    const int side = blk.side;
    for (int l = e.layers_per_block - 1; l >= 0; --l) {
      const auto out_idx = static_cast<std::size_t>(l + 1);
      FeatureMap d_out = d_relu[out_idx].cwiseProduct(ops::relu_mask(blk.chunks[out_idx]));
      const LayerIdx& li = dense_[static_cast<std::size_t>(b)][static_cast<std::size_t>(l)];
      const Tensor& w = params_[li.w];
      const auto cols_total = static_cast<Eigen::Index>(w.size() / e.growth);
      const auto wm = ops::as_matrix(w, e.growth, cols_total);
      if (grad) ops::as_vector((*grad)[li.b]) += d_out.rowwise().sum();
      Eigen::Index off = 0;
      for (int j = 0; j <= l; ++j) {
        const auto& col = blk.cols[static_cast<std::size_t>(j)];
        if (grad) {
          ops::as_matrix((*grad)[li.w], e.growth, cols_total).middleCols(off, col.rows()).noalias() +=
              d_out * col.transpose();
        }
        FeatureMap dcol = wm.middleCols(off, col.rows()).transpose() * d_out;
        ops::col2im3x3_add(dcol, side, side, d_relu[static_cast<std::size_t>(j)]);
        off += col.rows();
      }
    }
    FeatureMap d_h = d_relu[0].cwiseProduct(ops::relu_mask(blk.chunks[0]));

    if (b > 0) {
      const auto& prev = tape.blocks[static_cast<std::size_t>(b - 1)];
      const LayerIdx& ti = transitions_[static_cast<std::size_t>(b - 1)];
      FeatureMap d_t = ops::avgpool2_backward(d_h, prev.side, prev.side);
      const Tensor& w = params_[ti.w];
      const auto rows = static_cast<Eigen::Index>(w.shape[0]);
      const auto cols = static_cast<Eigen::Index>(w.shape[1]);
      if (grad) {
        const FeatureMap cat = concat_relu(prev.chunks);
        ops::as_matrix((*grad)[ti.w], rows, cols).noalias() += d_t * cat.transpose();
        ops::as_vector((*grad)[ti.b]) += d_t.rowwise().sum();
      }
      const FeatureMap d_cat = ops::as_matrix(w, rows, cols).transpose() * d_t;
      d_relu.clear();
      Eigen::Index r = 0;
      for (const auto& c : prev.chunks) {
        d_relu.push_back(d_cat.middleRows(r, c.rows()));
        r += c.rows();
      }
    } else {
      const int s = cfg_.segment_size;
      FeatureMap d_stem = ops::avgpool2_backward(d_h, s, s);
      const Tensor& ws = params_[stem_.w];
      if (grad) {
        ops::as_matrix((*grad)[stem_.w], e.stem_channels, 27).noalias() +=
            d_stem * tape.input_col.transpose();
        ops::as_vector((*grad)[stem_.b]) += d_stem.rowwise().sum();
      }
      if (d_input) {
        const FeatureMap dcol = ops::as_matrix(ws, e.stem_channels, 27).transpose() * d_stem;
        FeatureMap dx = FeatureMap::Zero(3, static_cast<Eigen::Index>(s) * s);
        ops::col2im3x3_add(dcol, s, s, dx);
        *d_input = PlanarImage(3, s, s);
        for (int c = 0; c < 3; ++c)
          for (Eigen::Index i = 0; i < dx.cols(); ++i)
            d_input->px[static_cast<std::size_t>(c * dx.cols() + i)] = dx(c, i);
      }
    }
  }
}

double PatchNet::loss_grad(std::span<const Segment> segments, int label, ParamSet& grad) const {
  if (label < 0 || label >= cfg_.num_classes) {
    throw PreconditionError("patch_net: label " + std::to_string(label) + " out of range");
  }
  Tape tape;
  run_forward(segments, tape);
  const double m = tape.logits.maxCoeff();
  const double lse = m + std::log((tape.logits.array() - m).exp().sum());
  Eigen::VectorXd d_logits = tape.probs;
  d_logits[label] -= 1.0;
  backward(tape, d_logits, &grad, nullptr);
  return lse - tape.logits[label];
}

std::vector<PlanarImage> PatchNet::input_gradient(std::span<const Segment> segments,
                                                  int cls) const {
  if (cls < 0 || cls >= cfg_.num_classes) {
    throw PreconditionError("patch_net: class " + std::to_string(cls) + " out of range");
  }
  Tape tape;
  run_forward(segments, tape);
  Eigen::VectorXd d_logits = Eigen::VectorXd::Zero(cfg_.num_classes);
  d_logits[cls] = 1.0;
  std::vector<PlanarImage> d_inputs;
  backward(tape, d_logits, nullptr, &d_inputs);
  return d_inputs;
}

std::vector<PlanarImage> PatchNet::saliency(std::span<const Segment> segments, int cls) const {
  auto maps = input_gradient(segments, cls);
  for (auto& m : maps)
    for (auto& v : m.px) v = std::abs(v);
  return maps;
}

}  // namespace orefeed::patchnet
