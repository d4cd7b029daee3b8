#pragma once

// Dense row-major tensors with tape-free reverse-mode autodiff.
//
// Every op eagerly computes its output and, when grad recording is enabled
// and any input requires grad, attaches a node that knows how to push the
// output gradient back into its inputs. Tensor is a shared handle: copies
// alias the same storage, which is what optimizers rely on to update
// parameters in place.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pspg/rng.hpp"

namespace pspg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class Dtype : std::uint8_t { kF32 = 0, kF64 = 1 };

// Precision used for values produced from now on. Storage is always double;
// in f32 mode every stored value is rounded to the nearest float.
Dtype default_dtype();
void set_default_dtype(Dtype dtype);

class DtypeGuard {
 public:
  explicit DtypeGuard(Dtype dtype);
  ~DtypeGuard();
  DtypeGuard(const DtypeGuard&) = delete;
  DtypeGuard& operator=(const DtypeGuard&) = delete;

 private:
  Dtype previous_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Tensor;
struct TensorImpl;

struct GradNode {
  std::vector<Tensor> inputs;
  // Receives the finished output (value and grad) and accumulates into inputs.
  std::function<void(const TensorImpl& out)> backward;
  const char* op = "";
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  Dtype dtype = Dtype::kF32;
  bool requires_grad = false;
  std::shared_ptr<GradNode> node;

  void accumulate_grad(std::size_t i, double g);
  void ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(const Shape& shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::ptrdiff_t axis) const;
  std::size_t numel() const;
  Dtype dtype() const;

  std::span<const double> data() const;
  double operator[](std::size_t flat) const { return data()[flat]; }
  double item() const;

  // Overwrites the values of a leaf in place (rounding per dtype).
  void assign(std::span<const double> values);
  void set(std::size_t flat, double value);

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Copy of the values with no graph attached.
  Tensor detach() const;

  // Reverse-mode sweep from this scalar. Populates grads of every tensor in
  // the graph that requires grad.
  void backward() const;

  TensorImpl* impl() const { return impl_.get(); }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_result(Shape shape, std::vector<double> data,
                            std::vector<Tensor> inputs,
                            std::function<void(const TensorImpl&)> backward,
                            const char* op);
};

// Builds an op output. Rounds per the default dtype, rejects non-finite
// values, and records the backward closure when grad is needed.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl&)> backward,
                   const char* op);

// ---- linear algebra ------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,p]
Tensor bmm(const Tensor& a, const Tensor& b);     // [g,m,k] x [g,k,p]

// ---- elementwise ---------------------------------------------------------
// `b` may match `a` exactly, match a suffix of `a`'s shape, or hold a single
// element; it is repeated across the leading axes of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// `scale` matches a prefix of `x`'s shape and is repeated over trailing axes.
Tensor mul_prefix(const Tensor& x, const Tensor& scale);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);  // x >= 0 expected
// Gradient passes only where lo <= x <= hi. `clamped`, when given, receives
// the number of entries that were moved.
Tensor clamp(const Tensor& x, double lo, double hi, std::size_t* clamped = nullptr);

// ---- reductions ----------------------------------------------------------
Tensor sum(const Tensor& x);   // all elements -> scalar (rank 0)
Tensor mean(const Tensor& x);  // all elements -> scalar (rank 0)
Tensor sum(const Tensor& x, std::ptrdiff_t axis);
Tensor mean(const Tensor& x, std::ptrdiff_t axis);
Tensor max(const Tensor& x, std::ptrdiff_t axis);  // grad to first argmax

Tensor softmax(const Tensor& x, std::ptrdiff_t axis);
Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis);
// x / ||x|| along `axis`; zero-norm slices are an error.
Tensor normalize(const Tensor& x, std::ptrdiff_t axis);

// ---- shape ---------------------------------------------------------------
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor transpose(const Tensor& x, std::ptrdiff_t axis0, std::ptrdiff_t axis1);
Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t start,
             std::size_t length);
Tensor select(const Tensor& x, std::ptrdiff_t axis, std::size_t index);
Tensor index_select(const Tensor& x, std::span<const std::size_t> rows);  // axis 0
Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis);
Tensor stack(const std::vector<Tensor>& parts, std::ptrdiff_t axis);
// Prepends an axis of extent `count`, repeating `x`.
Tensor expand(const Tensor& x, std::size_t count);

// Same-length cross-correlation along the last axis with a 3-tap kernel and
// zero padding: out[k] = w0*x[k-1] + w1*x[k] + w2*x[k+1].
Tensor conv1d3(const Tensor& x, const Tensor& kernel);

}  // namespace pspg
