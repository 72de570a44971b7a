#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

// Dense double-precision tensors with reverse-mode autodiff.
//
// Every op builds a define-by-run graph: nodes are created in program order
// and carry a monotonically increasing id, so visiting reachable nodes by
// descending id is a valid reverse topological order (a consumer is always
// created after its inputs). backward() replays that order. Gradients
// accumulate additively, so fan-out sums contributions.
//
// Single-threaded per graph. Tensors without grad history are plain values
// and may be shared read-only across threads.

namespace hipdreamer {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Pulls this node's grad into the parents' grads. Null for leaves.
  std::function<void(Node&)> backward;

  void ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);
  // Leaf with requires_grad set; the usual way to make a trainable weight.
  static Tensor param(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t size() const;
  int64_t dim() const;
  const std::vector<double>& values() const;
  std::vector<double>& mutable_values();  // in-place edit; only for leaves
  double item() const;                    // scalar only

  bool requires_grad() const;
  void set_requires_grad(bool b);
  const std::vector<double>& grad() const;
  void zero_grad();

  // Constant copy of the value, cut off from the graph.
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  std::shared_ptr<detail::Node> node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
  friend Tensor make_op_result(Shape, std::vector<double>,
                               std::vector<Tensor>,
                               std::function<void(detail::Node&)>);
};

// --- primitive ops -----------------------------------------------------

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D only

Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
Tensor slice(const Tensor& t, int axis, int64_t start, int64_t len);

Tensor sum(const Tensor& t);             // full reduction to scalar
Tensor sum(const Tensor& t, int axis);   // drops the axis
Tensor mean(const Tensor& t);
Tensor mean(const Tensor& t, int axis);

Tensor tanh_op(const Tensor& t);
Tensor sigmoid(const Tensor& t);
Tensor elu(const Tensor& t);
Tensor softplus(const Tensor& t);
Tensor exp_op(const Tensor& t);
Tensor log_op(const Tensor& t);
Tensor clamp_min(const Tensor& t, double lo);
Tensor clamp_max(const Tensor& t, double hi);

Tensor softmax(const Tensor& t);  // over the last axis

Tensor broadcast_to(const Tensor& t, const Shape& target);
Tensor reshape(const Tensor& t, Shape target);

// One-hot sample per row of the last axis; forward is the exact one-hot,
// backward passes gradients through as if the output were `probs`.
Tensor straight_through_onehot(const Tensor& probs, std::mt19937_64& rng);
// Deterministic argmax one-hot per row (forward only, detached).
Tensor argmax_onehot(const Tensor& probs);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// --- backward ----------------------------------------------------------

enum class GradMode { zero_first, accumulate };

// Populates grads of everything reachable from `root` (scalar). With
// zero_first, grads of reachable nodes are cleared before the sweep;
// leaves not on this graph keep whatever they had.
void backward(const Tensor& root, GradMode mode = GradMode::zero_first);

// --- finite differences (the gradient oracle) ---------------------------

// Max over coordinates of |analytic - central| / max(1, |central|).
// `f` must be deterministic: it is re-evaluated with perturbed inputs.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         Tensor x, double eps = 1e-5);

// Same, but checks every coordinate of every tensor in `params`. `f`
// re-reads the params (closure), so values are perturbed in place.
double finite_diff_check_params(const std::function<Tensor()>& f,
                                std::span<Tensor> params, double eps = 1e-5);

}  // namespace hipdreamer
