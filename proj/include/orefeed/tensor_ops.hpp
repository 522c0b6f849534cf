#pragma once

#include <Eigen/Dense>

#include "orefeed/params.hpp"
#include "orefeed/random.hpp"

namespace orefeed::ops {

using orefeed::Rng;

// Feature maps are (channels x height*width), each channel plane contiguous.
using FeatureMap = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using WeightMap = Eigen::Map<const FeatureMap>;
using GradMap = Eigen::Map<FeatureMap>;

inline WeightMap as_matrix(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  return WeightMap(t.values.data(), rows, cols);
}
inline GradMap as_matrix(Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  return GradMap(t.values.data(), rows, cols);
}
inline Eigen::Map<const Eigen::VectorXd> as_vector(const Tensor& t) {
  return Eigen::Map<const Eigen::VectorXd>(t.values.data(), static_cast<Eigen::Index>(t.size()));
}
inline Eigen::Map<Eigen::VectorXd> as_vector(Tensor& t) {
  return Eigen::Map<Eigen::VectorXd>(t.values.data(), static_cast<Eigen::Index>(t.size()));
}

// 3x3, stride 1, zero padding 1. Output rows are ordered (channel, ky, kx).
FeatureMap im2col3x3(const FeatureMap& x, int height, int width);
// Adjoint of im2col3x3, accumulated into dx.
void col2im3x3_add(const FeatureMap& dcol, int height, int width, FeatureMap& dx);

// 2x2 average pool, stride 2. Height and width must be even.
FeatureMap avgpool2(const FeatureMap& x, int height, int width);
FeatureMap avgpool2_backward(const FeatureMap& dy, int height, int width);

inline FeatureMap relu(const FeatureMap& x) { return x.cwiseMax(0.0); }
inline FeatureMap relu_mask(const FeatureMap& x) {
  return (x.array() > 0.0).cast<double>().matrix();
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

// He-uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
void he_uniform(Tensor& t, std::size_t fan_in, Rng& rng);

}  // namespace orefeed::ops
