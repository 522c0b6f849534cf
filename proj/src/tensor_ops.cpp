#include "orefeed/tensor_ops.hpp"

#include <cmath>

namespace orefeed::ops {

FeatureMap im2col3x3(const FeatureMap& x, int height, int width) {
  const Eigen::Index channels = x.rows();
  const Eigen::Index hw = static_cast<Eigen::Index>(height) * width;
  FeatureMap col = FeatureMap::Zero(channels * 9, hw);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const double* src = x.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = col.row(c * 9 + ky * 3 + kx).data();
        const int dy = ky - 1;
        const int dx = kx - 1;
        const int x_lo = dx < 0 ? 1 : 0;
        const int x_hi = dx > 0 ? width - 1 : width;
        for (int y = 0; y < height; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= height) continue;
          const double* srow = src + static_cast<std::ptrdiff_t>(sy) * width + dx;
          double* drow = dst + static_cast<std::ptrdiff_t>(y) * width;
          for (int xx = x_lo; xx < x_hi; ++xx) drow[xx] = srow[xx];
        }
      }
    }
  }
  return col;
}

void col2im3x3_add(const FeatureMap& dcol, int height, int width, FeatureMap& dx) {
  const Eigen::Index channels = dx.rows();
  for (Eigen::Index c = 0; c < channels; ++c) {
    double* dst = dx.row(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = dcol.row(c * 9 + ky * 3 + kx).data();
        const int dy = ky - 1;
        const int ddx = kx - 1;
        const int x_lo = ddx < 0 ? 1 : 0;
        const int x_hi = ddx > 0 ? width - 1 : width;
        for (int y = 0; y < height; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= height) continue;
          double* drow = dst + static_cast<std::ptrdiff_t>(sy) * width + ddx;
          const double* srow = src + static_cast<std::ptrdiff_t>(y) * width;
          for (int xx = x_lo; xx < x_hi; ++xx) drow[xx] += srow[xx];
        }
      }
    }
  }
}

FeatureMap avgpool2(const FeatureMap& x, int height, int width) {
  const int oh = height / 2;
  const int ow = width / 2;
  FeatureMap y(x.rows(), static_cast<Eigen::Index>(oh) * ow);
  for (Eigen::Index c = 0; c < x.rows(); ++c) {
    const double* src = x.row(c).data();
    double* dst = y.row(c).data();
    for (int i = 0; i < oh; ++i) {
      const double* r0 = src + static_cast<std::ptrdiff_t>(2 * i) * width;
      const double* r1 = r0 + width;
      for (int j = 0; j < ow; ++j) {
        dst[i * ow + j] = 0.25 * (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]);
      }
    }
  }
  return y;
}

FeatureMap avgpool2_backward(const FeatureMap& dy, int height, int width) {
  const int oh = height / 2;
  const int ow = width / 2;
  FeatureMap dx = FeatureMap::Zero(dy.rows(), static_cast<Eigen::Index>(height) * width);
  for (Eigen::Index c = 0; c < dy.rows(); ++c) {
    const double* src = dy.row(c).data();
    double* dst = dx.row(c).data();
    for (int i = 0; i < oh; ++i) {
      double* r0 = dst + static_cast<std::ptrdiff_t>(2 * i) * width;
      double* r1 = r0 + width;
      for (int j = 0; j < ow; ++j) {
        const double g = 0.25 * src[i * ow + j];
        r0[2 * j] = g;
        r0[2 * j + 1] = g;
        r1[2 * j] = g;
        r1[2 * j + 1] = g;
      }
    }
  }
  return dx;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

void he_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.values) v = rng.uniform(-bound, bound);
}

}  // namespace orefeed::ops
