#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "mgn/rng.hpp"
#include "mgn/tensor.hpp"

namespace mgn {

/// Ordered, named set of parameter tensors.
template <class T>
class ParameterStore {
 public:
  void add(std::string name, BasicTensor<T> t) {
    if (index_.count(name)) throw std::logic_error("parameter '" + name + "' registered twice");
    index_.emplace(name, tensors_.size());
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(t));
  }

  const BasicTensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return tensors_[it->second];
  }
  BasicTensor<T>& get(const std::string& name) {
    return const_cast<BasicTensor<T>&>(static_cast<const ParameterStore&>(*this).get(name));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<BasicTensor<T>>& tensors() const { return tensors_; }
  std::vector<BasicTensor<T>>& tensors() { return tensors_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

 private:
  std::vector<std::string> names_;
  std::vector<BasicTensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace init {

/// U(-b, b) with b = sqrt(6 / fan_in).
inline Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor::from(shape, std::move(v));
}

inline Tensor normal(const Shape& shape, double stddev, Rng rng) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal(0.0, stddev));
  return Tensor::from(shape, std::move(v));
}

}  // namespace init

}  // namespace mgn
