#include "hipdreamer/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace hipdreamer {

namespace {

std::atomic<uint64_t> g_next_id{1};

using MatMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                   Eigen::Dynamic,
                                                   Eigen::RowMajor>>;

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

void check(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

}  // namespace

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

namespace detail {

void Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

}  // namespace detail

// --- construction -------------------------------------------------------

Tensor make_op_result(Shape shape, std::vector<double> values,
                      std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backward) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  bool needs = false;
  for (const auto& p : parents) {
    if (p.defined() && p.requires_grad()) needs = true;
  }
  if (needs) {
    n->requires_grad = true;
    n->backward = std::move(backward);
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node_ptr());
  }
  Tensor t;
  t = Tensor(std::move(n));
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  check(numel(shape) == static_cast<int64_t>(values.size()),
        "tensor: shape " + shape_str(shape) + " does not match data length " +
            std::to_string(values.size()));
  return make_op_result(std::move(shape), std::move(values), {}, nullptr);
}

Tensor Tensor::zeros(Shape shape) {
  std::vector<double> v(static_cast<size_t>(numel(shape)), 0.0);
  return from(std::move(shape), std::move(v));
}

Tensor Tensor::full(Shape shape, double x) {
  std::vector<double> v(static_cast<size_t>(numel(shape)), x);
  return from(std::move(shape), std::move(v));
}

Tensor Tensor::scalar(double v) { return from({}, {v}); }

Tensor Tensor::param(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
int64_t Tensor::size() const { return static_cast<int64_t>(node_->value.size()); }
int64_t Tensor::dim() const { return static_cast<int64_t>(node_->shape.size()); }
const std::vector<double>& Tensor::values() const { return node_->value; }
std::vector<double>& Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  check(size() == 1, "item: tensor has " + std::to_string(size()) + " values");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool b) {
  node_->requires_grad = b;
  if (b) node_->ensure_grad();
}

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->value.size(), 0.0);
}

Tensor Tensor::detach() const {
  return from(node_->shape, node_->value);
}

// --- broadcasting helpers ----------------------------------------------

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t n = std::max(a.size(), b.size());
  Shape out(n, 1);
  for (size_t i = 0; i < n; ++i) {
    int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da == db || da == 1 || db == 1) {
      out[n - 1 - i] = std::max(da, db);
    } else {
      fail(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
           shape_str(b));
    }
  }
  return out;
}

// Row-major strides with 0 on broadcast axes, right-aligned to `out`.
std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  int64_t acc = 1;
  for (size_t i = 0; i < s.size(); ++i) {
    size_t si = s.size() - 1 - i;
    size_t oi = out.size() - 1 - i;
    st[oi] = (s[si] == 1 && out[oi] != 1) ? 0 : acc;
    acc *= s[si];
  }
  return st;
}

// Accumulate `g` (shaped `from`) into `out` (shaped `to`, broadcastable to
// `from`): sums over broadcast axes.
void reduce_into(const std::vector<double>& g, const Shape& from,
                 std::vector<double>& out, const Shape& to) {
  if (from == to) {
    for (size_t i = 0; i < g.size(); ++i) out[i] += g[i];
    return;
  }
  auto st = broadcast_strides(to, from);
  std::vector<int64_t> idx(from.size(), 0);
  int64_t off = 0;
  for (size_t lin = 0; lin < g.size(); ++lin) {
    out[static_cast<size_t>(off)] += g[lin];
    for (int ax = static_cast<int>(from.size()) - 1; ax >= 0; --ax) {
      idx[ax]++;
      off += st[ax];
      if (idx[ax] < from[ax]) break;
      off -= st[ax] * from[ax];
      idx[ax] = 0;
    }
  }
}

template <class F>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F&& f,
                 std::function<void(detail::Node&)> backward) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  size_t n = static_cast<size_t>(numel(out_shape));
  std::vector<double> out(n);
  const auto& av = a.values();
  const auto& bv = b.values();
  if (a.shape() == b.shape()) {
    for (size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  } else if (b.size() == 1) {
    for (size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[0]);
  } else if (a.size() == 1) {
    for (size_t i = 0; i < n; ++i) out[i] = f(av[0], bv[i]);
  } else {
    auto sa = broadcast_strides(a.shape(), out_shape);
    auto sb = broadcast_strides(b.shape(), out_shape);
    std::vector<int64_t> idx(out_shape.size(), 0);
    int64_t oa = 0, ob = 0;
    for (size_t lin = 0; lin < n; ++lin) {
      out[lin] = f(av[static_cast<size_t>(oa)], bv[static_cast<size_t>(ob)]);
      for (int ax = static_cast<int>(out_shape.size()) - 1; ax >= 0; --ax) {
        idx[ax]++;
        oa += sa[ax];
        ob += sb[ax];
        if (idx[ax] < out_shape[ax]) break;
        oa -= sa[ax] * out_shape[ax];
        ob -= sb[ax] * out_shape[ax];
        idx[ax] = 0;
      }
    }
  }
  return make_op_result(std::move(out_shape), std::move(out), {a, b},
                        std::move(backward));
}

// d(out)/d(a) contribution for broadcast binary ops: weight each output
// gradient by `w(a_i, b_i)` and reduce onto a's shape.
void backprop_binary(detail::Node& self,
                     const std::function<double(double, double)>& wa,
                     const std::function<double(double, double)>& wb) {
  auto& pa = *self.parents[0];
  auto& pb = *self.parents[1];
  const Shape& os = self.shape;
  auto accumulate = [&](detail::Node& p, const std::function<double(double, double)>& w) {
    if (!p.requires_grad) return;
    p.ensure_grad();
    std::vector<double> weighted(self.grad.size());
    auto sa = broadcast_strides(pa.shape, os);
    auto sb = broadcast_strides(pb.shape, os);
    std::vector<int64_t> idx(os.size(), 0);
    int64_t oa = 0, ob = 0;
    for (size_t lin = 0; lin < weighted.size(); ++lin) {
      weighted[lin] = self.grad[lin] * w(pa.value[static_cast<size_t>(oa)],
                                         pb.value[static_cast<size_t>(ob)]);
      for (int ax = static_cast<int>(os.size()) - 1; ax >= 0; --ax) {
        idx[ax]++;
        oa += sa[ax];
        ob += sb[ax];
        if (idx[ax] < os[ax]) break;
        oa -= sa[ax] * os[ax];
        ob -= sb[ax] * os[ax];
        idx[ax] = 0;
      }
    }
    reduce_into(weighted, os, p.grad, p.shape);
  };
  accumulate(pa, wa);
  accumulate(pb, wb);
}

}  // namespace

// --- elementwise binary -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](detail::Node& self) {
        backprop_binary(
            self, [](double, double) { return 1.0; },
            [](double, double) { return 1.0; });
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](detail::Node& self) {
        backprop_binary(
            self, [](double, double) { return 1.0; },
            [](double, double) { return -1.0; });
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](detail::Node& self) {
        backprop_binary(
            self, [](double, double y) { return y; },
            [](double x, double) { return x; });
      });
}

// --- scalar convenience --------------------------------------------------

namespace {

template <class F, class G>
Tensor unary_op(const Tensor& a, F&& f, G&& dfdx_from_xy) {
  size_t n = a.values().size();
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = f(a.values()[i]);
  auto d = std::forward<G>(dfdx_from_xy);
  return make_op_result(a.shape(), std::move(out), {a},
                        [d](detail::Node& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (size_t i = 0; i < self.grad.size(); ++i) {
                            p.grad[i] += self.grad[i] * d(p.value[i], self.value[i]);
                          }
                        });
}

}  // namespace

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(
      a, [c](double x) { return x + c; },
      [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double c) {
  return unary_op(
      a, [c](double x) { return x * c; },
      [c](double, double) { return c; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// --- matmul ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.dim() == 2 && b.dim() == 2,
        "matmul: expects 2-D operands, got " + shape_str(a.shape()) + " and " +
            shape_str(b.shape()));
  check(a.shape()[1] == b.shape()[0],
        "matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
            shape_str(b.shape()));
  int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(static_cast<size_t>(m * n));
  {
    ConstMatMap A(a.values().data(), m, k);
    ConstMatMap B(b.values().data(), k, n);
    MatMap C(out.data(), m, n);
    C.noalias() = A * B;
  }
  return make_op_result(
      {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        ConstMatMap G(self.grad.data(), m, n);
        if (pa.requires_grad) {
          pa.ensure_grad();
          ConstMatMap B(pb.value.data(), k, n);
          MatMap GA(pa.grad.data(), m, k);
          GA.noalias() += G * B.transpose();
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          ConstMatMap A(pa.value.data(), m, k);
          MatMap GB(pb.grad.data(), k, n);
          GB.noalias() += A.transpose() * G;
        }
      });
}

// --- concat / slice -------------------------------------------------------

namespace {

int normalize_axis(int axis, int64_t rank, const char* op) {
  int ax = axis < 0 ? axis + static_cast<int>(rank) : axis;
  check(ax >= 0 && ax < rank,
        std::string(op) + ": axis " + std::to_string(axis) +
            " out of range for rank " + std::to_string(rank));
  return ax;
}

// Treat the tensor as (outer, axis_len, inner) around `axis`.
void outer_inner(const Shape& s, int ax, int64_t& outer, int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s[i];
  for (size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace

Tensor concat(std::span<const Tensor> parts, int axis) {
  check(!parts.empty(), "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  int ax = normalize_axis(axis, static_cast<int64_t>(s0.size()), "concat");
  Shape out_shape = s0;
  int64_t total_axis = 0;
  for (const Tensor& p : parts) {
    check(p.dim() == parts[0].dim(), "concat: rank mismatch");
    for (int64_t i = 0; i < p.dim(); ++i) {
      if (i != ax)
        check(p.shape()[i] == s0[i],
              "concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                  shape_str(s0));
    }
    total_axis += p.shape()[ax];
  }
  out_shape[ax] = total_axis;

  int64_t outer, inner;
  outer_inner(out_shape, ax, outer, inner);
  std::vector<double> out(static_cast<size_t>(numel(out_shape)));
  std::vector<int64_t> offsets;  // start of each part along the axis
  {
    int64_t pos = 0;
    for (const Tensor& p : parts) {
      offsets.push_back(pos);
      int64_t alen = p.shape()[ax];
      const auto& pv = p.values();
      for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(out.data() + (o * total_axis + pos) * inner,
                    pv.data() + o * alen * inner,
                    static_cast<size_t>(alen * inner) * sizeof(double));
      }
      pos += alen;
    }
  }
  std::vector<Tensor> parent_vec(parts.begin(), parts.end());
  return make_op_result(
      out_shape, std::move(out), parent_vec,
      [ax, outer, inner, total_axis, offsets](detail::Node& self) {
        for (size_t pi = 0; pi < self.parents.size(); ++pi) {
          auto& p = *self.parents[pi];
          if (!p.requires_grad) continue;
          p.ensure_grad();
          int64_t alen = p.shape[ax];
          for (int64_t o = 0; o < outer; ++o) {
            const double* g =
                self.grad.data() + (o * total_axis + offsets[pi]) * inner;
            double* dst = p.grad.data() + o * alen * inner;
            for (int64_t i = 0; i < alen * inner; ++i) dst[i] += g[i];
          }
        }
      });
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  std::vector<Tensor> v(parts);
  return concat(std::span<const Tensor>(v), axis);
}

Tensor slice(const Tensor& t, int axis, int64_t start, int64_t len) {
  int ax = normalize_axis(axis, t.dim(), "slice");
  check(start >= 0 && len >= 0 && start + len <= t.shape()[ax],
        "slice: range [" + std::to_string(start) + "," +
            std::to_string(start + len) + ") out of bounds for axis size " +
            std::to_string(t.shape()[ax]));
  Shape out_shape = t.shape();
  out_shape[ax] = len;
  int64_t outer, inner;
  outer_inner(t.shape(), ax, outer, inner);
  int64_t alen = t.shape()[ax];
  std::vector<double> out(static_cast<size_t>(numel(out_shape)));
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * len * inner,
                t.values().data() + (o * alen + start) * inner,
                static_cast<size_t>(len * inner) * sizeof(double));
  }
  return make_op_result(out_shape, std::move(out), {t},
                        [outer, inner, alen, start, len](detail::Node& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (int64_t o = 0; o < outer; ++o) {
                            const double* g = self.grad.data() + o * len * inner;
                            double* dst = p.grad.data() + (o * alen + start) * inner;
                            for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                          }
                        });
}

// --- reductions ------------------------------------------------------------

Tensor sum(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.values()) acc += v;
  return make_op_result({}, {acc}, {t}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    double g = self.grad[0];
    for (double& d : p.grad) d += g;
  });
}

Tensor sum(const Tensor& t, int axis) {
  int ax = normalize_axis(axis, t.dim(), "sum");
  int64_t outer, inner;
  outer_inner(t.shape(), ax, outer, inner);
  int64_t alen = t.shape()[ax];
  Shape out_shape;
  for (int64_t i = 0; i < t.dim(); ++i)
    if (i != ax) out_shape.push_back(t.shape()[i]);
  std::vector<double> out(static_cast<size_t>(outer * inner), 0.0);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t a = 0; a < alen; ++a)
      for (int64_t i = 0; i < inner; ++i)
        out[o * inner + i] += t.values()[(o * alen + a) * inner + i];
  return make_op_result(out_shape, std::move(out), {t},
                        [outer, inner, alen](detail::Node& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (int64_t o = 0; o < outer; ++o)
                            for (int64_t a = 0; a < alen; ++a)
                              for (int64_t i = 0; i < inner; ++i)
                                p.grad[(o * alen + a) * inner + i] +=
                                    self.grad[o * inner + i];
                        });
}

Tensor mean(const Tensor& t) {
  return scale(sum(t), 1.0 / static_cast<double>(t.size()));
}

Tensor mean(const Tensor& t, int axis) {
  int ax = normalize_axis(axis, t.dim(), "mean");
  return scale(sum(t, ax), 1.0 / static_cast<double>(t.shape()[ax]));
}

// --- elementwise unary -------------------------------------------------------

Tensor tanh_op(const Tensor& t) {
  return unary_op(
      t, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& t) {
  return unary_op(
      t,
      [](double x) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor elu(const Tensor& t) {
  return unary_op(
      t, [](double x) { return x > 0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0 ? 1.0 : y + 1.0; });
}

Tensor softplus(const Tensor& t) {
  return unary_op(
      t,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
      });
}

Tensor exp_op(const Tensor& t) {
  return unary_op(
      t, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log_op(const Tensor& t) {
  return unary_op(
      t, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor clamp_min(const Tensor& t, double lo) {
  return unary_op(
      t, [lo](double x) { return x < lo ? lo : x; },
      [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}

Tensor clamp_max(const Tensor& t, double hi) {
  return unary_op(
      t, [hi](double x) { return x > hi ? hi : x; },
      [hi](double x, double) { return x > hi ? 0.0 : 1.0; });
}

// --- softmax -------------------------------------------------------------

Tensor softmax(const Tensor& t) {
  check(t.dim() >= 1, "softmax: needs rank >= 1");
  int64_t c = t.shape().back();
  int64_t rows = t.size() / c;
  std::vector<double> out(t.values().size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = t.values().data() + r * c;
    double* y = out.data() + r * c;
    double mx = x[0];
    for (int64_t i = 1; i < c; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (int64_t i = 0; i < c; ++i) {
      y[i] = std::exp(x[i] - mx);
      z += y[i];
    }
    for (int64_t i = 0; i < c; ++i) y[i] /= z;
  }
  return make_op_result(t.shape(), std::move(out), {t},
                        [c, rows](detail::Node& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (int64_t r = 0; r < rows; ++r) {
                            const double* y = self.value.data() + r * c;
                            const double* g = self.grad.data() + r * c;
                            double dot = 0.0;
                            for (int64_t i = 0; i < c; ++i) dot += g[i] * y[i];
                            double* d = p.grad.data() + r * c;
                            for (int64_t i = 0; i < c; ++i)
                              d[i] += y[i] * (g[i] - dot);
                          }
                        });
}

// --- broadcast / reshape ----------------------------------------------------

Tensor broadcast_to(const Tensor& t, const Shape& target) {
  Shape merged = broadcast_shape(t.shape(), target, "broadcast");
  check(merged == target, "broadcast: cannot expand " + shape_str(t.shape()) +
                              " to " + shape_str(target));
  size_t n = static_cast<size_t>(numel(target));
  std::vector<double> out(n);
  auto st = broadcast_strides(t.shape(), target);
  std::vector<int64_t> idx(target.size(), 0);
  int64_t off = 0;
  for (size_t lin = 0; lin < n; ++lin) {
    out[lin] = t.values()[static_cast<size_t>(off)];
    for (int ax = static_cast<int>(target.size()) - 1; ax >= 0; --ax) {
      idx[ax]++;
      off += st[ax];
      if (idx[ax] < target[ax]) break;
      off -= st[ax] * target[ax];
      idx[ax] = 0;
    }
  }
  Shape target_copy = target;
  return make_op_result(target, std::move(out), {t},
                        [target_copy](detail::Node& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          reduce_into(self.grad, target_copy, p.grad, p.shape);
                        });
}

Tensor reshape(const Tensor& t, Shape target) {
  // One -1 entry is inferred.
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < target.size(); ++i) {
    if (target[i] == -1) {
      check(infer == -1, "reshape: more than one -1 in " + shape_str(target));
      infer = static_cast<int>(i);
    } else {
      known *= target[i];
    }
  }
  if (infer >= 0) target[infer] = t.size() / known;
  check(numel(target) == t.size(), "reshape: cannot view " +
                                       shape_str(t.shape()) + " as " +
                                       shape_str(target));
  return make_op_result(std::move(target), t.values(), {t},
                        [](detail::Node& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (size_t i = 0; i < self.grad.size(); ++i)
                            p.grad[i] += self.grad[i];
                        });
}

// --- categorical sampling -----------------------------------------------

Tensor straight_through_onehot(const Tensor& probs, std::mt19937_64& rng) {
  check(probs.dim() >= 1, "straight_through_onehot: needs rank >= 1");
  int64_t c = probs.shape().back();
  int64_t rows = probs.size() / c;
  std::vector<double> out(probs.values().size(), 0.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int64_t r = 0; r < rows; ++r) {
    const double* p = probs.values().data() + r * c;
    double u = uni(rng);
    double acc = 0.0;
    int64_t pick = c - 1;
    for (int64_t i = 0; i < c; ++i) {
      acc += p[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    out[r * c + pick] = 1.0;
  }
  // Pass-through: d(sample)/d(probs) treated as identity.
  return make_op_result(probs.shape(), std::move(out), {probs},
                        [](detail::Node& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          p.ensure_grad();
                          for (size_t i = 0; i < self.grad.size(); ++i)
                            p.grad[i] += self.grad[i];
                        });
}

Tensor argmax_onehot(const Tensor& probs) {
  int64_t c = probs.shape().back();
  int64_t rows = probs.size() / c;
  std::vector<double> out(probs.values().size(), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    const double* p = probs.values().data() + r * c;
    int64_t best = 0;
    for (int64_t i = 1; i < c; ++i)
      if (p[i] > p[best]) best = i;
    out[r * c + best] = 1.0;
  }
  return Tensor::from(probs.shape(), std::move(out));
}

// --- backward -----------------------------------------------------------

namespace {

// The replay record: reachable nodes in descending creation order, so each
// node is visited after everything that consumes it.
struct Tape {
  std::vector<detail::Node*> order;

  static Tape record(detail::Node* root) {
    Tape tape;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{root};
    seen.insert(root);
    while (!stack.empty()) {
      detail::Node* n = stack.back();
      stack.pop_back();
      tape.order.push_back(n);
      for (auto& p : n->parents) {
        if (p->requires_grad && seen.insert(p.get()).second)
          stack.push_back(p.get());
      }
    }
    std::sort(tape.order.begin(), tape.order.end(),
              [](const detail::Node* a, const detail::Node* b) {
                return a->id > b->id;
              });
    return tape;
  }
};

}  // namespace

void backward(const Tensor& root, GradMode mode) {
  check(root.defined(), "backward: undefined tensor");
  check(root.size() == 1,
        "backward: root must be scalar, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;
  Tape tape = Tape::record(root.node());
  if (mode == GradMode::zero_first) {
    for (auto* n : tape.order) n->grad.assign(n->value.size(), 0.0);
  } else {
    for (auto* n : tape.order) n->ensure_grad();
  }
  root.node()->grad[0] += 1.0;
  for (auto* n : tape.order) {
    if (n->backward) n->backward(*n);
  }
}

// --- finite differences -----------------------------------------------------

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         Tensor x, double eps) {
  std::vector<Tensor> params{x};
  return finite_diff_check_params([&] { return f(x); },
                                  std::span<Tensor>(params), eps);
}

double finite_diff_check_params(const std::function<Tensor()>& f,
                                std::span<Tensor> params, double eps) {
  for (Tensor& p : params) p.set_requires_grad(true);
  Tensor out = f();
  check(out.size() == 1, "finite_diff_check: f must return a scalar");
  for (Tensor& p : params) p.zero_grad();
  backward(out, GradMode::accumulate);

  double worst = 0.0;
  for (Tensor& p : params) {
    std::vector<double> analytic = p.grad();
    auto& v = p.mutable_values();
    for (size_t i = 0; i < v.size(); ++i) {
      double keep = v[i];
      v[i] = keep + eps;
      double fp = f().item();
      v[i] = keep - eps;
      double fm = f().item();
      v[i] = keep;
      double central = (fp - fm) / (2.0 * eps);
      double err = std::abs(analytic[i] - central) /
                   std::max(1.0, std::abs(central));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace hipdreamer
