#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stacklab/tensor.hpp"

namespace stacklab {

// Named parameter collection with a stable, deterministic iteration order
// (insertion order). Optimizer state, checkpoints and gradient vectors are
// all aligned to this order.
class ParamStore {
 public:
  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  Tensor& at(size_t i) { return items_[i].second; }
  const Tensor& at(size_t i) const { return items_[i].second; }
  const std::string& name(size_t i) const { return items_[i].first; }
  size_t index_of(const std::string& name) const;

  size_t size() const { return items_.size(); }
  int64_t total_params() const;

  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace stacklab
