#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "pspg/tensor.hpp"

namespace pspg {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Handles to live parameters; updating a tensor here updates the module.
using ParamList = std::vector<NamedTensor>;

// Copies values from `source` into same-named tensors of `target`. Every
// target name must be present with an identical shape.
void load_params(const ParamList& target, const ParamList& source);

const Tensor* find_param(const ParamList& params, const std::string& name);

std::size_t param_count(const ParamList& params);

// Deep copy of the current values (no graph, independent storage).
ParamList snapshot(const ParamList& params);

void set_requires_grad(const ParamList& params, bool on);
void zero_grads(const ParamList& params);

// x @ w (+ b when defined).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor());

}  // namespace pspg
