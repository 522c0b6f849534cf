#include "orefeed/params.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "orefeed/common.hpp"

namespace orefeed {

std::size_t ParamSet::add(std::string name, std::vector<std::size_t> shape) {
  if (find(name)) throw Error("duplicate tensor name '" + name + "'");
  const std::size_t n =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  tensors_.push_back(Tensor{std::move(name), std::move(shape), std::vector<double>(n, 0.0)});
  return tensors_.size() - 1;
}

const Tensor* ParamSet::find(std::string_view name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return &t;
  return nullptr;
}

std::size_t ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return i;
  throw Error("no tensor named '" + std::string(name) + "'");
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out = *this;
  out.set_zero();
  return out;
}

void ParamSet::set_zero() {
  for (auto& t : tensors_) std::fill(t.values.begin(), t.values.end(), 0.0);
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name != other.tensors_[i].name ||
        tensors_[i].shape != other.tensors_[i].shape) {
      return false;
    }
  }
  return true;
}

void ParamSet::add_scaled(const ParamSet& other, double scale) {
  if (!same_layout(other)) throw ShapeError("add_scaled: parameter layouts differ");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto& dst = tensors_[i].values;
    const auto& src = other.tensors_[i].values;
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += scale * src[k];
  }
}

void ParamSet::scale(double factor) {
  for (auto& t : tensors_)
    for (auto& v : t.values) v *= factor;
}

}  // namespace orefeed
