#include "pwtp/param_set.hpp"

namespace pwtp {

void ParamSet::insert(const std::string& name, Tensor value) {
  if (!tensors_.emplace(name, std::move(value)).second) throw Error("duplicate parameter name '" + name + "'");
}

const Tensor& ParamSet::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error("missing parameter '" + name + "'");
  return it->second;
}

Tensor& ParamSet::get(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error("missing parameter '" + name + "'");
  return it->second;
}

std::size_t ParamSet::numel() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.size();
  return n;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(numel());
  for (const auto& [name, t] : tensors_) flat.insert(flat.end(), t.data().begin(), t.data().end());
  return flat;
}

void ParamSet::assign_flat(const std::vector<double>& flat) {
  if (flat.size() != numel()) throw Error("assign_flat: length mismatch");
  std::size_t off = 0;
  for (auto& [name, t] : tensors_) {
    for (auto& v : t.data()) v = flat[off++];
  }
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& [name, t] : tensors_) out.tensors_.emplace(name, Tensor(t.shape(), 0.0));
  return out;
}

ParamSet ParamSet::with_prefix(const std::string& prefix) const {
  ParamSet out;
  for (const auto& [name, t] : tensors_)
    if (name.rfind(prefix, 0) == 0) out.tensors_.emplace(name, t);
  return out;
}

void ParamSet::merge(const ParamSet& other) {
  for (const auto& [name, t] : other.tensors_) tensors_[name] = t;
}

bool ParamSet::all_finite() const {
  for (const auto& [name, t] : tensors_)
    if (!t.all_finite()) return false;
  return true;
}

VarMap bind(ad::Tape& tape, const ParamSet& params, bool requires_grad) {
  VarMap vars;
  for (const auto& [name, t] : params) vars.emplace(name, tape.leaf(t, requires_grad));
  return vars;
}

const ad::Var& var(const VarMap& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw Error("missing parameter '" + name + "'");
  return it->second;
}

ParamSet gradients(const VarMap& vars) {
  ParamSet out;
  for (const auto& [name, v] : vars) out.insert(name, v.grad());
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(const std::vector<double>& a) { return dot(a, a); }

}  // namespace pwtp
