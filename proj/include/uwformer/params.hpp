#pragma once
// Ordered name -> tensor registry. Registration order is the canonical
// traversal order for optimizer updates, EMA and checkpoints, so walking the
// store is deterministic. The stored handles are the authoritative ones:
// forward passes fetch them by name, so watching or updating a stored tensor
// is visible to every consumer.

#include <map>
#include <string>
#include <vector>

#include "uwformer/tensor.hpp"

namespace uwf {

template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    check(map_.find(name) == map_.end(), "params: duplicate name " + name);
    order_.push_back(name);
    auto [it, ok] = map_.emplace(name, std::move(t));
    (void)ok;
    return it->second;
  }

  bool contains(const std::string& name) const { return map_.find(name) != map_.end(); }

  Tensor<T>& at(const std::string& name) {
    auto it = map_.find(name);
    check(it != map_.end(), "params: unknown name " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = map_.find(name);
    check(it != map_.end(), "params: unknown name " + name);
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

  i64 total_elems() const {
    i64 n = 0;
    for (const auto& name : order_) n += at(name).numel();
    return n;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor<T>> map_;
};

}  // namespace uwf
