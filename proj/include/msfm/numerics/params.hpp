#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "msfm/numerics/autograd.hpp"
#include "msfm/numerics/error.hpp"
#include "msfm/numerics/tensor.hpp"

namespace msfm {

// Named parameter tensors in registration order. The order is part of the
// checkpoint layout and of every deterministic iteration over parameters.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Tensor& add(const std::string& name, Tensor init) {
    require(!map_.count(name), "duplicate parameter '" + name + "'");
    order_.push_back(name);
    auto p = std::make_shared<Tensor>(std::move(init));
    Tensor& ref = *p;
    map_.emplace(name, std::move(p));
    return ref;
  }

  bool contains(const std::string& name) const { return map_.count(name) != 0; }

  Tensor& get(const std::string& name) { return *ptr(name); }
  const Tensor& get(const std::string& name) const { return *ptr(name); }

  const std::shared_ptr<Tensor>& ptr(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw ContractViolation("unknown parameter '" + name + "'");
    return it->second;
  }

  const std::vector<std::string>& names() const noexcept { return order_; }
  std::size_t size() const noexcept { return order_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : map_) n += t->numel();
    return n;
  }

  // Scalars in parameters whose name starts with `prefix`.
  std::size_t scalar_count(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& name : order_)
      if (name.rfind(prefix, 0) == 0) n += map_.at(name)->numel();
    return n;
  }

  ParamStore clone() const {
    ParamStore c;
    for (const auto& name : order_) c.add(name, *map_.at(name));
    return c;
  }

  bool same_layout(const ParamStore& other) const {
    if (order_ != other.order_) return false;
    for (const auto& name : order_)
      if (map_.at(name)->shape() != other.get(name).shape()) return false;
    return true;
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, std::shared_ptr<Tensor>> map_;
};

// Lazily turns parameters into graph leaves, one leaf per parameter per
// binding, so every use of a parameter in a forward pass shares one node.
class Binding {
 public:
  Binding(const ParamStore& store, bool requires_grad) : store_(&store), requires_grad_(requires_grad) {}

  Var operator()(const std::string& name) const {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    Var v = Var::leaf(store_->ptr(name), requires_grad_);
    cache_.emplace(name, v);
    return v;
  }

  bool requires_grad() const noexcept { return requires_grad_; }
  const ParamStore& store() const noexcept { return *store_; }
  const std::unordered_map<std::string, Var>& bound() const noexcept { return cache_; }

 private:
  const ParamStore* store_;
  bool requires_grad_;
  mutable std::unordered_map<std::string, Var> cache_;
};

}  // namespace msfm
