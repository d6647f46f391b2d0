#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pwtp/autodiff.hpp"
#include "pwtp/tensor.hpp"

namespace pwtp {

/// Named tensors in lexicographic name order. Iteration order (and therefore
/// flatten()) is a function of the names alone.
class ParamSet {
 public:
  using Map = std::map<std::string, Tensor>;

  void set(const std::string& name, Tensor value) { tensors_[name] = std::move(value); }
  /// Inserts a new tensor; throws if the name already exists.
  void insert(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  void erase(const std::string& name) { tensors_.erase(name); }

  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }
  /// Total scalar count.
  std::size_t numel() const;

  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }
  Map::iterator begin() { return tensors_.begin(); }
  Map::iterator end() { return tensors_.end(); }

  std::vector<double> flatten() const;
  /// Overwrites every tensor from a flat vector laid out as flatten() produces.
  void assign_flat(const std::vector<double>& flat);
  /// Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  /// Entries whose name starts with prefix.
  ParamSet with_prefix(const std::string& prefix) const;
  /// Copies every entry of other into this set, replacing existing names.
  void merge(const ParamSet& other);

  bool all_finite() const;

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  Map tensors_;
};

/// Parameters bound as leaves on a tape.
using VarMap = std::map<std::string, ad::Var>;

VarMap bind(ad::Tape& tape, const ParamSet& params, bool requires_grad = true);
const ad::Var& var(const VarMap& vars, const std::string& name);
/// Collects the gradient of every bound parameter after a backward pass.
ParamSet gradients(const VarMap& vars);

double dot(const std::vector<double>& a, const std::vector<double>& b);
double squared_norm(const std::vector<double>& a);

}  // namespace pwtp
