#include "pspg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace pspg {

namespace {

Dtype g_default_dtype = Dtype::kF32;
bool g_grad_enabled = true;

double round_to(Dtype dtype, double v) {
  return dtype == Dtype::kF32 ? static_cast<double>(static_cast<float>(v)) : v;
}

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank, const char* op) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < -r || axis >= r) {
    std::ostringstream msg;
    msg << op << ": axis " << axis << " out of range for rank " << rank;
    throw DimensionError(msg.str());
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// View of a tensor as [outer, len, inner] around one axis.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out.push_back(shape[i]);
  return out;
}

TensorImpl* grad_target(const Tensor& t) {
  return t.requires_grad() ? t.impl() : nullptr;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    std::ostringstream msg;
    msg << op << ": expected rank " << rank << ", got shape " << shape_str(t.shape());
    throw DimensionError(msg.str());
  }
}

// `b` must equal a suffix of `a`'s shape or hold a single element.
void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (b.numel() == 1 && bs.size() <= 1) return;
  if (bs.size() <= as.size() && std::equal(bs.begin(), bs.end(), as.end() - bs.size()))
    return;
  std::ostringstream msg;
  msg << op << ": cannot broadcast " << shape_str(bs) << " into " << shape_str(as);
  throw DimensionError(msg.str());
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  return make_result(x.shape(), std::move(out), {x},
                     [x, deriv](const TensorImpl& o) {
                       TensorImpl* gx = grad_target(x);
                       if (!gx) return;
                       const auto xd2 = x.data();
                       for (std::size_t i = 0; i < xd2.size(); ++i)
                         gx->accumulate_grad(i, o.grad[i] * deriv(xd2[i], o.data[i]));
                     },
                     op);
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Dtype default_dtype() { return g_default_dtype; }
void set_default_dtype(Dtype dtype) { g_default_dtype = dtype; }

DtypeGuard::DtypeGuard(Dtype dtype) : previous_(g_default_dtype) {
  g_default_dtype = dtype;
}
DtypeGuard::~DtypeGuard() { g_default_dtype = previous_; }

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
}

void TensorImpl::accumulate_grad(std::size_t i, double g) {
  ensure_grad();
  grad[i] += g;
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return from(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    std::ostringstream msg;
    msg << "Tensor::from: shape " << shape_str(shape) << " needs "
        << shape_numel(shape) << " values, got " << values.size();
    throw DimensionError(msg.str());
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->dtype = g_default_dtype;
  for (double& v : values) v = round_to(impl->dtype, v);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from(Shape{}, {value}, requires_grad);
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.normal() * stddev;
  return from(shape, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw GraphError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::ptrdiff_t axis) const {
  return shape()[normalize_axis(axis, rank(), "dim")];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }
Dtype Tensor::dtype() const { return impl_->dtype; }
std::span<const double> Tensor::data() const { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1)
    throw DimensionError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

void Tensor::assign(std::span<const double> values) {
  if (values.size() != impl_->data.size())
    throw DimensionError("assign: size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i)
    impl_->data[i] = round_to(impl_->dtype, values[i]);
}

void Tensor::set(std::size_t flat, double value) {
  impl_->data.at(flat) = round_to(impl_->dtype, value);
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }
bool Tensor::is_leaf() const { return impl_->node == nullptr; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->dtype = impl_->dtype;
  return Tensor(std::move(impl));
}

void Tensor::backward() const {
  if (!impl_) throw GraphError("backward on undefined tensor");
  if (numel() != 1)
    throw DimensionError("backward: loss must be a scalar, got " + shape_str(shape()));
  if (!impl_->node && !impl_->requires_grad)
    throw GraphError("backward: loss is not attached to any graph");

  // Post-order DFS gives inputs before outputs; walk it in reverse.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{impl_.get(), 0}};
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    const auto* gn = node->node.get();
    if (gn && next_child < gn->inputs.size()) {
      TensorImpl* child = gn->inputs[next_child++].impl();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (TensorImpl* t : order)
    if (t->node) t->grad.clear();
  impl_->ensure_grad();
  impl_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (t->node && !t->grad.empty()) t->node->backward(*t);
  }
}

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl&)> backward, const char* op) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = g_default_dtype;
  for (double& v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output");
    v = round_to(impl->dtype, v);
  }
  impl->data = std::move(data);
  const bool needs_grad =
      g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                    [](const Tensor& t) { return t.requires_grad(); });
  if (needs_grad) {
    impl->requires_grad = true;
    auto node = std::make_shared<GradNode>();
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    node->op = op;
    impl->node = std::move(node);
  }
  return Tensor(std::move(impl));
}

// ---- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = ad[i * k + kk];
      const double* brow = &bd[kk * p];
      double* orow = &out[i * p];
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  return make_result({m, p}, std::move(out), {a, b},
                     [a, b, m, k, p](const TensorImpl& o) {
                       const auto ad2 = a.data();
                       const auto bd2 = b.data();
                       if (TensorImpl* ga = grad_target(a)) {
                         ga->ensure_grad();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t kk = 0; kk < k; ++kk) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < p; ++j)
                               acc += o.grad[i * p + j] * bd2[kk * p + j];
                             ga->grad[i * k + kk] += acc;
                           }
                       }
                       if (TensorImpl* gb = grad_target(b)) {
                         gb->ensure_grad();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t kk = 0; kk < k; ++kk) {
                             const double av = ad2[i * k + kk];
                             for (std::size_t j = 0; j < p; ++j)
                               gb->grad[kk * p + j] += av * o.grad[i * p + j];
                           }
                       }
                     },
                     "matmul");
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2), p = b.dim(2);
  if (b.dim(0) != g || b.dim(1) != k)
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(g * m * p, 0.0);
  for (std::size_t gg = 0; gg < g; ++gg)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = ad[(gg * m + i) * k + kk];
        for (std::size_t j = 0; j < p; ++j)
          out[(gg * m + i) * p + j] += av * bd[(gg * k + kk) * p + j];
      }
  return make_result({g, m, p}, std::move(out), {a, b},
                     [a, b, g, m, k, p](const TensorImpl& o) {
                       const auto ad2 = a.data();
                       const auto bd2 = b.data();
                       TensorImpl* ga = grad_target(a);
                       TensorImpl* gb = grad_target(b);
                       if (ga) ga->ensure_grad();
                       if (gb) gb->ensure_grad();
                       for (std::size_t gg = 0; gg < g; ++gg)
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t kk = 0; kk < k; ++kk) {
                             const std::size_t ai = (gg * m + i) * k + kk;
                             double acc = 0.0;
                             for (std::size_t j = 0; j < p; ++j) {
                               const double go = o.grad[(gg * m + i) * p + j];
                               acc += go * bd2[(gg * k + kk) * p + j];
                               if (gb) gb->grad[(gg * k + kk) * p + j] += ad2[ai] * go;
                             }
                             if (ga) ga->grad[ai] += acc;
                           }
                     },
                     "bmm");
}

// ---- elementwise binary ----------------------------------------------------

namespace {

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op) {
  check_broadcast(a, b, op);
  const std::size_t bn = b.numel();
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const double bv = bd[bn == 1 ? 0 : i % bn];
    switch (kind) {
      case BinaryKind::kAdd: out[i] = ad[i] + bv; break;
      case BinaryKind::kSub: out[i] = ad[i] - bv; break;
      case BinaryKind::kMul: out[i] = ad[i] * bv; break;
    }
  }
  return make_result(a.shape(), std::move(out), {a, b},
                     [a, b, kind, bn](const TensorImpl& o) {
                       const auto ad2 = a.data();
                       const auto bd2 = b.data();
                       TensorImpl* ga = grad_target(a);
                       TensorImpl* gb = grad_target(b);
                       if (ga) ga->ensure_grad();
                       if (gb) gb->ensure_grad();
                       for (std::size_t i = 0; i < o.grad.size(); ++i) {
                         const std::size_t bi = bn == 1 ? 0 : i % bn;
                         const double g = o.grad[i];
                         switch (kind) {
                           case BinaryKind::kAdd:
                             if (ga) ga->grad[i] += g;
                             if (gb) gb->grad[bi] += g;
                             break;
                           case BinaryKind::kSub:
                             if (ga) ga->grad[i] += g;
                             if (gb) gb->grad[bi] -= g;
                             break;
                           case BinaryKind::kMul:
                             if (ga) ga->grad[i] += g * bd2[bi];
                             if (gb) gb->grad[bi] += g * ad2[i];
                             break;
                         }
                       }
                     },
                     op);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Tensor mul_prefix(const Tensor& x, const Tensor& s) {
  const Shape& xs = x.shape();
  const Shape& ss = s.shape();
  if (ss.size() > xs.size() || !std::equal(ss.begin(), ss.end(), xs.begin()))
    throw DimensionError("mul_prefix: " + shape_str(ss) + " is not a prefix of " +
                         shape_str(xs));
  const std::size_t inner = s.numel() == 0 ? 0 : x.numel() / s.numel();
  const auto xd = x.data();
  const auto sd = s.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] * sd[i / inner];
  return make_result(xs, std::move(out), {x, s},
                     [x, s, inner](const TensorImpl& o) {
                       const auto xd2 = x.data();
                       const auto sd2 = s.data();
                       TensorImpl* gx = grad_target(x);
                       TensorImpl* gs = grad_target(s);
                       if (gx) gx->ensure_grad();
                       if (gs) gs->ensure_grad();
                       for (std::size_t i = 0; i < o.grad.size(); ++i) {
                         if (gx) gx->grad[i] += o.grad[i] * sd2[i / inner];
                         if (gs) gs->grad[i / inner] += o.grad[i] * xd2[i];
                       }
                     },
                     "mul_prefix");
}

// ---- elementwise unary -----------------------------------------------------

Tensor scale(const Tensor& x, double factor) {
  return unary(x, "scale", [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, "add_scalar", [value](double v) { return v + value; },
               [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid,
               [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, "tanh", [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); },
               [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, "log", [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor pow(const Tensor& x, double exponent) {
  if (exponent == 0.0)
    return unary(x, "pow", [](double) { return 1.0; }, [](double, double) { return 0.0; });
  return unary(x, "pow", [exponent](double v) { return std::pow(v, exponent); },
               [exponent](double v, double) {
                 // Subgradient 0 at the origin for fractional exponents.
                 if (v == 0.0) return exponent == 1.0 ? 1.0 : 0.0;
                 return exponent * std::pow(v, exponent - 1.0);
               });
}

Tensor clamp(const Tensor& x, double lo, double hi, std::size_t* clamped) {
  if (clamped) {
    for (double v : x.data())
      if (v < lo || v > hi) ++*clamped;
  }
  return unary(x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_result({}, {acc}, {x},
                     [x](const TensorImpl& o) {
                       if (TensorImpl* gx = grad_target(x)) {
                         gx->ensure_grad();
                         for (double& g : gx->grad) g += o.grad[0];
                       }
                     },
                     "sum");
}

Tensor mean(const Tensor& x) {
  const std::size_t n = x.numel();
  if (n == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Tensor sum(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "sum");
  const AxisSplit s = split_at(x.shape(), ax);
  const auto xd = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xd[(o * s.len + l) * s.inner + i];
  return make_result(drop_axis(x.shape(), ax), std::move(out), {x},
                     [x, s](const TensorImpl& og) {
                       TensorImpl* gx = grad_target(x);
                       if (!gx) return;
                       gx->ensure_grad();
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t l = 0; l < s.len; ++l)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             gx->grad[(o * s.len + l) * s.inner + i] +=
                                 og.grad[o * s.inner + i];
                     },
                     "sum_axis");
}

Tensor mean(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "mean");
  if (x.shape()[ax] == 0) throw DimensionError("mean: empty axis");
  return scale(sum(x, axis), 1.0 / static_cast<double>(x.shape()[ax]));
}

Tensor max(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "max");
  const AxisSplit s = split_at(x.shape(), ax);
  if (s.len == 0) throw DimensionError("max: empty axis");
  const auto xd = x.data();
  std::vector<double> out(s.outer * s.inner);
  std::vector<std::size_t> arg(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = 0;
      double bv = xd[o * s.len * s.inner + i];
      for (std::size_t l = 1; l < s.len; ++l) {
        const double v = xd[(o * s.len + l) * s.inner + i];
        if (v > bv) {
          bv = v;
          best = l;
        }
      }
      out[o * s.inner + i] = bv;
      arg[o * s.inner + i] = (o * s.len + best) * s.inner + i;
    }
  return make_result(drop_axis(x.shape(), ax), std::move(out), {x},
                     [x, arg](const TensorImpl& og) {
                       TensorImpl* gx = grad_target(x);
                       if (!gx) return;
                       gx->ensure_grad();
                       for (std::size_t j = 0; j < arg.size(); ++j)
                         gx->grad[arg[j]] += og.grad[j];
                     },
                     "max_axis");
}

Tensor softmax(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit s = split_at(x.shape(), ax);
  if (s.len == 0) throw DimensionError("softmax: empty axis");
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t l) { return (o * s.len + l) * s.inner + i; };
      double mx = xd[at(0)];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, xd[at(l)]);
      double total = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        out[at(l)] = std::exp(xd[at(l)] - mx);
        total += out[at(l)];
      }
      for (std::size_t l = 0; l < s.len; ++l) out[at(l)] /= total;
    }
  return make_result(x.shape(), std::move(out), {x},
                     [x, s](const TensorImpl& og) {
                       TensorImpl* gx = grad_target(x);
                       if (!gx) return;
                       gx->ensure_grad();
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           auto at = [&](std::size_t l) {
                             return (o * s.len + l) * s.inner + i;
                           };
                           double dot = 0.0;
                           for (std::size_t l = 0; l < s.len; ++l)
                             dot += og.grad[at(l)] * og.data[at(l)];
                           for (std::size_t l = 0; l < s.len; ++l)
                             gx->grad[at(l)] += og.data[at(l)] * (og.grad[at(l)] - dot);
                         }
                     },
                     "softmax");
}

Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "log_softmax");
  const AxisSplit s = split_at(x.shape(), ax);
  if (s.len == 0) throw DimensionError("log_softmax: empty axis");
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t l) { return (o * s.len + l) * s.inner + i; };
      double mx = xd[at(0)];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, xd[at(l)]);
      double total = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) total += std::exp(xd[at(l)] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t l = 0; l < s.len; ++l) out[at(l)] = xd[at(l)] - lse;
    }
  return make_result(x.shape(), std::move(out), {x},
                     [x, s](const TensorImpl& og) {
                       TensorImpl* gx = grad_target(x);
                       if (!gx) return;
                       gx->ensure_grad();
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           auto at = [&](std::size_t l) {
                             return (o * s.len + l) * s.inner + i;
                           };
                           double gsum = 0.0;
                           for (std::size_t l = 0; l < s.len; ++l) gsum += og.grad[at(l)];
                           for (std::size_t l = 0; l < s.len; ++l)
                             gx->grad[at(l)] +=
                                 og.grad[at(l)] - std::exp(og.data[at(l)]) * gsum;
                         }
                     },
                     "log_softmax");
}

Tensor normalize(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "normalize");
  const AxisSplit s = split_at(x.shape(), ax);
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  std::vector<double> norms(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t l) { return (o * s.len + l) * s.inner + i; };
      double sq = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) sq += xd[at(l)] * xd[at(l)];
      const double n = std::sqrt(sq);
      if (!(n > 0.0)) throw NumericError("normalize: zero-norm vector (degenerate feature)");
      norms[o * s.inner + i] = n;
      for (std::size_t l = 0; l < s.len; ++l) out[at(l)] = xd[at(l)] / n;
    }
  return make_result(x.shape(), std::move(out), {x},
                     [x, s, norms](const TensorImpl& og) {
                       TensorImpl* gx = grad_target(x);
                       if (!gx) return;
                       gx->ensure_grad();
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           auto at = [&](std::size_t l) {
                             return (o * s.len + l) * s.inner + i;
                           };
                           double dot = 0.0;
                           for (std::size_t l = 0; l < s.len; ++l)
                             dot += og.grad[at(l)] * og.data[at(l)];
                           const double n = norms[o * s.inner + i];
                           for (std::size_t l = 0; l < s.len; ++l)
                             gx->grad[at(l)] += (og.grad[at(l)] - og.data[at(l)] * dot) / n;
                         }
                     },
                     "normalize");
}

// ---- shape -----------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(shape, std::move(out), {x},
                     [x](const TensorImpl& o) {
                       TensorImpl* gx = grad_target(x);
                       if (!gx) return;
                       gx->ensure_grad();
                       for (std::size_t i = 0; i < o.grad.size(); ++i) gx->grad[i] += o.grad[i];
                     },
                     "reshape");
}

Tensor transpose(const Tensor& x, std::ptrdiff_t axis0, std::ptrdiff_t axis1) {
  const std::size_t a0 = normalize_axis(axis0, x.rank(), "transpose");
  const std::size_t a1 = normalize_axis(axis1, x.rank(), "transpose");
  const Shape& in = x.shape();
  Shape outs = in;
  std::swap(outs[a0], outs[a1]);
  const std::size_t r = in.size();
  std::vector<std::size_t> in_strides(r, 1), out_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) {
    in_strides[i - 1] = in_strides[i] * in[i];
    out_strides[i - 1] = out_strides[i] * outs[i];
  }
  // map[out_flat] = in_flat
  const std::size_t n = x.numel();
  std::vector<std::size_t> map(n);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat, src = 0;
    for (std::size_t d = 0; d < r; ++d) {
      const std::size_t idx = rem / out_strides[d];
      rem %= out_strides[d];
      std::size_t src_axis = d == a0 ? a1 : (d == a1 ? a0 : d);
      src += idx * in_strides[src_axis];
    }
    map[flat] = src;
  }
  const auto xd = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[map[i]];
  return make_result(outs, std::move(out), {x},
                     [x, map](const TensorImpl& o) {
                       TensorImpl* gx = grad_target(x);
                       if (!gx) return;
                       gx->ensure_grad();
                       for (std::size_t i = 0; i < map.size(); ++i) gx->grad[map[i]] += o.grad[i];
                     },
                     "transpose");
}

Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "slice");
  const AxisSplit s = split_at(x.shape(), ax);
  if (start + length > s.len)
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") exceeds extent " +
                         std::to_string(s.len));
  Shape outs = x.shape();
  outs[ax] = length;
  const auto xd = x.data();
  std::vector<double> out;
  out.reserve(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < length; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        out.push_back(xd[(o * s.len + start + l) * s.inner + i]);
  return make_result(outs, std::move(out), {x},
                     [x, s, start, length](const TensorImpl& og) {
                       TensorImpl* gx = grad_target(x);
                       if (!gx) return;
                       gx->ensure_grad();
                       std::size_t k = 0;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t l = 0; l < length; ++l)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             gx->grad[(o * s.len + start + l) * s.inner + i] += og.grad[k++];
                     },
                     "slice");
}

Tensor select(const Tensor& x, std::ptrdiff_t axis, std::size_t index) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "select");
  return reshape(slice(x, static_cast<std::ptrdiff_t>(ax), index, 1),
                 drop_axis(x.shape(), ax));
}

Tensor index_select(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() == 0) throw DimensionError("index_select: scalar input");
  const std::size_t n = x.dim(0);
  const std::size_t inner = n == 0 ? 0 : x.numel() / n;
  for (std::size_t r : rows)
    if (r >= n)
      throw DimensionError("index_select: index " + std::to_string(r) +
                           " out of range for extent " + std::to_string(n));
  Shape outs = x.shape();
  outs[0] = rows.size();
  const auto xd = x.data();
  std::vector<double> out;
  out.reserve(rows.size() * inner);
  for (std::size_t r : rows)
    out.insert(out.end(), xd.begin() + static_cast<std::ptrdiff_t>(r * inner),
               xd.begin() + static_cast<std::ptrdiff_t>((r + 1) * inner));
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result(outs, std::move(out), {x},
                     [x, idx, inner](const TensorImpl& o) {
                       TensorImpl* gx = grad_target(x);
                       if (!gx) return;
                       gx->ensure_grad();
                       for (std::size_t k = 0; k < idx.size(); ++k)
                         for (std::size_t i = 0; i < inner; ++i)
                           gx->grad[idx[k] * inner + i] += o.grad[k * inner + i];
                     },
                     "index_select");
}

Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t ax = normalize_axis(axis, parts[0].rank(), "concat");
  Shape outs = parts[0].shape();
  outs[ax] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != outs.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < outs.size(); ++d)
      if (d != ax && p.shape()[d] != parts[0].shape()[d])
        throw DimensionError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(parts[0].shape()));
    outs[ax] += p.shape()[ax];
  }
  const AxisSplit so = split_at(outs, ax);
  std::vector<double> out(shape_numel(outs));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = p.shape()[ax];
    const auto pd = p.data();
    for (std::size_t o = 0; o < so.outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < so.inner; ++i)
          out[(o * so.len + offset + l) * so.inner + i] = pd[(o * len + l) * so.inner + i];
    offset += len;
  }
  return make_result(outs, std::move(out), parts,
                     [parts, offsets, so, ax](const TensorImpl& og) {
                       for (std::size_t k = 0; k < parts.size(); ++k) {
                         TensorImpl* gp = grad_target(parts[k]);
                         if (!gp) continue;
                         gp->ensure_grad();
                         const std::size_t len = parts[k].shape()[ax];
                         for (std::size_t o = 0; o < so.outer; ++o)
                           for (std::size_t l = 0; l < len; ++l)
                             for (std::size_t i = 0; i < so.inner; ++i)
                               gp->grad[(o * len + l) * so.inner + i] +=
                                   og.grad[(o * so.len + offsets[k] + l) * so.inner + i];
                       }
                     },
                     "concat");
}

Tensor stack(const std::vector<Tensor>& parts, std::ptrdiff_t axis) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  const std::size_t ax = normalize_axis(axis, parts[0].rank() + 1, "stack");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(ax), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, static_cast<std::ptrdiff_t>(ax));
}

Tensor expand(const Tensor& x, std::size_t count) {
  Shape outs = x.shape();
  outs.insert(outs.begin(), count);
  const auto xd = x.data();
  std::vector<double> out;
  out.reserve(count * xd.size());
  for (std::size_t c = 0; c < count; ++c) out.insert(out.end(), xd.begin(), xd.end());
  const std::size_t n = xd.size();
  return make_result(outs, std::move(out), {x},
                     [x, n, count](const TensorImpl& o) {
                       TensorImpl* gx = grad_target(x);
                       if (!gx) return;
                       gx->ensure_grad();
                       for (std::size_t c = 0; c < count; ++c)
                         for (std::size_t i = 0; i < n; ++i) gx->grad[i] += o.grad[c * n + i];
                     },
                     "expand");
}

Tensor conv1d3(const Tensor& x, const Tensor& kernel) {
  if (kernel.numel() != 3) throw DimensionError("conv1d3: kernel must have 3 taps");
  if (x.rank() == 0) throw DimensionError("conv1d3: scalar input");
  const std::size_t len = x.dim(-1);
  const std::size_t rows = len == 0 ? 0 : x.numel() / len;
  const auto xd = x.data();
  const auto w = kernel.data();
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &xd[r * len];
    for (std::size_t k = 0; k < len; ++k) {
      double acc = w[1] * in[k];
      if (k > 0) acc += w[0] * in[k - 1];
      if (k + 1 < len) acc += w[2] * in[k + 1];
      out[r * len + k] = acc;
    }
  }
  return make_result(x.shape(), std::move(out), {x, kernel},
                     [x, kernel, rows, len](const TensorImpl& o) {
                       const auto xd2 = x.data();
                       const auto w2 = kernel.data();
                       TensorImpl* gx = grad_target(x);
                       TensorImpl* gw = grad_target(kernel);
                       if (gx) gx->ensure_grad();
                       if (gw) gw->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t k = 0; k < len; ++k) {
                           const double g = o.grad[r * len + k];
                           const std::size_t at = r * len + k;
                           if (gx) gx->grad[at] += w2[1] * g;
                           if (gw) gw->grad[1] += xd2[at] * g;
                           if (k > 0) {
                             if (gx) gx->grad[at - 1] += w2[0] * g;
                             if (gw) gw->grad[0] += xd2[at - 1] * g;
                           }
                           if (k + 1 < len) {
                             if (gx) gx->grad[at + 1] += w2[2] * g;
                             if (gw) gw->grad[2] += xd2[at + 1] * g;
                           }
                         }
                     },
                     "conv1d3");
}

}  // namespace pspg
