#include "pspg/params.hpp"

#include <unordered_map>

namespace pspg {

void load_params(const ParamList& target, const ParamList& source) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& p : source) by_name[p.name] = &p.tensor;
  for (const auto& p : target) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw DimensionError("missing parameter '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape())
      throw DimensionError("parameter '" + p.name + "' has shape " +
                           shape_str(it->second->shape()) + ", expected " +
                           shape_str(p.tensor.shape()));
    Tensor dst = p.tensor;
    dst.assign(it->second->data());
  }
}

const Tensor* find_param(const ParamList& params, const std::string& name) {
  for (const auto& p : params)
    if (p.name == name) return &p.tensor;
  return nullptr;
}

std::size_t param_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

ParamList snapshot(const ParamList& params) {
  ParamList out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.tensor.detach()});
  return out;
}

void set_requires_grad(const ParamList& params, bool on) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(on);
  }
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  return b.defined() ? add(y, b) : y;
}

}  // namespace pspg
