#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hipdreamer/tensor.hpp"

// Network building blocks used by the world model and the agent. All cells
// operate on batched 2-D tensors (rows = batch). Parameters are registered
// by name so optimizers, checkpoints and the variant-diff checks can walk
// them uniformly.

namespace hipdreamer {

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

void zero_grad(ParamList& params);
std::vector<Tensor> tensors_of(const ParamList& params);

// Glorot-uniform weight, zero bias.
Tensor glorot_uniform(int64_t fan_in, int64_t fan_out, std::mt19937_64& rng);

enum class Activation { identity, elu, tanh };

struct Linear {
  Tensor W;  // (in, out)
  Tensor b;  // (out)

  Linear() = default;
  Linear(int64_t in, int64_t out, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;  // (B, in) -> (B, out)
  void collect(ParamList& out, const std::string& prefix) const;
  int64_t in_dim() const { return W.shape()[0]; }
  int64_t out_dim() const { return W.shape()[1]; }
};

// Linear layer with an optional extra input block carrying a conditioning
// vector. Kept as a separate weight matrix so that (a) disabling it is a
// structural change visible in the parameter list and (b) a zero-weight
// block reproduces the unconditioned output exactly.
struct CondLinear {
  Linear main;
  std::optional<Linear> cond;  // no bias used from this block

  CondLinear() = default;
  CondLinear(int64_t in, int64_t cond_in, int64_t out, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, const Tensor* c) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

// Fully connected stack, ELU hidden activations, identity output.
struct Mlp {
  std::vector<Linear> layers;
  Activation hidden_act = Activation::elu;
  Activation output_act = Activation::identity;

  Mlp() = default;
  Mlp(const std::vector<int64_t>& widths, std::mt19937_64& rng,
      Activation hidden = Activation::elu,
      Activation output = Activation::identity);
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

// GRU, gates ordered [r, u, n] along the weight columns:
//   r = sigmoid(x Wx_r + bx_r + h Wh_r + bh_r)
//   u = sigmoid(x Wx_u + bx_u + h Wh_u + bh_u)
//   n = tanh  (x Wx_n + bx_n + r * (h Wh_n + bh_n))
//   h' = (1 - u) * n + u * h
// Zero weights and biases give u = 0.5, n = 0, h' = 0.5 h.
struct GruCell {
  int64_t input_size = 0;
  int64_t hidden_size = 0;
  Tensor Wx, Wh;  // (in, 3H), (H, 3H)
  Tensor bx, bh;  // (3H)

  GruCell() = default;
  GruCell(int64_t input, int64_t hidden, std::mt19937_64& rng);
  Tensor step(const Tensor& h, const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

// LSTM, gates ordered [i, f, g, o]:
//   i, f, o = sigmoid(...), g = tanh(...)
//   c' = f * c + i * g;  h' = o * tanh(c')
// One shared bias vector (on the input side); the hidden path is bias-free.
struct LstmCell {
  int64_t input_size = 0;
  int64_t hidden_size = 0;
  Tensor Wx, Wh;  // (in, 4H), (H, 4H)
  Tensor b;       // (4H)

  LstmCell() = default;
  LstmCell(int64_t input, int64_t hidden, std::mt19937_64& rng);
  struct State {
    Tensor h, c;
  };
  State step(const State& s, const Tensor& x) const;
  State initial(int64_t batch) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

// --- distributions -------------------------------------------------------

// Batched categorical over (B, G, C) logits: G independent groups of C
// classes. Samples are one-hot per group; straight_through_sample routes
// gradients through the softmax probabilities.
Tensor categorical_probs(const Tensor& logits);  // softmax over last axis
Tensor straight_through_sample(const Tensor& logits, std::mt19937_64& rng);
Tensor mode_sample(const Tensor& logits);

// Sum over all groups (and batch rows, if present) of
// sum_c p_c (ln p_c - ln q_c), probabilities floored at 1e-8 before log.
Tensor kl_categorical(const Tensor& p_logits, const Tensor& q_logits);

// tanh-squashed diagonal Gaussian over actions; log_std clamped to
// [log_std_min, log_std_max] before use.
struct SquashedGaussian {
  Tensor mean;     // (B, A)
  Tensor log_std;  // (B, A), already clamped by make()

  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 2.0;

  static SquashedGaussian make(const Tensor& mean, const Tensor& log_std_raw);

  struct Sample {
    Tensor action;    // (B, A), in (-1, 1)
    Tensor log_prob;  // (B,), includes the tanh change-of-variables term
  };
  Sample sample(std::mt19937_64& rng) const;  // reparameterized
  Tensor mode() const;                        // tanh(mean)
  // log density of an externally given action (forward use only).
  Tensor log_prob_of(const Tensor& action) const;
};

// Unit-variance Gaussian likelihood: sum over all rows of
// 0.5 ||mean - target||^2 + 0.5 d ln(2 pi), d = columns per row.
Tensor unit_gaussian_nll_sum(const Tensor& mean, const Tensor& target);

// --- optimizer -------------------------------------------------------------

// Adam with bias correction and global-norm gradient clipping. A non-finite
// gradient skips the whole update and counts as an incident.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, double lr, double clip_norm = 100.0,
       double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Applies one update from the grads currently on the params.
  // Returns false when skipped (non-finite gradient).
  bool step();
  void zero_grad();

  int64_t step_count() const { return step_count_; }
  int64_t skipped_count() const { return skipped_; }
  double lr() const { return lr_; }

  // Checkpoint access: moments flattened per parameter.
  const std::vector<std::vector<double>>& m() const { return m_; }
  const std::vector<std::vector<double>>& v() const { return v_; }
  void restore(int64_t step_count, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_ = 1e-3, clip_ = 100.0, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t step_count_ = 0;
  int64_t skipped_ = 0;
};

}  // namespace hipdreamer
