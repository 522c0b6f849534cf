#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace orefeed {

// Named row-major float64 tensor.
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  bool operator==(const Tensor&) const = default;
};

// Ordered collection of named tensors: model parameters, their gradients, or
// optimizer state. Gradients and state mirror the parameter layout exactly.
class ParamSet {
 public:
  std::size_t add(std::string name, std::vector<std::size_t> shape);

  std::size_t size() const { return tensors_.size(); }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  const Tensor* find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;  // throws if absent

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  std::size_t scalar_count() const;
  ParamSet zeros_like() const;
  void set_zero();
  bool same_layout(const ParamSet& other) const;
  // this += scale * other
  void add_scaled(const ParamSet& other, double scale);
  void scale(double factor);

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<Tensor> tensors_;
};

}  // namespace orefeed
