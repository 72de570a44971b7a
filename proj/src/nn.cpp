#include "hipdreamer/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace hipdreamer {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kProbFloor = 1e-8;
}  // namespace

void zero_grad(ParamList& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

Tensor glorot_uniform(int64_t fan_in, int64_t fan_out, std::mt19937_64& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> uni(-limit, limit);
  std::vector<double> w(static_cast<size_t>(fan_in * fan_out));
  for (double& x : w) x = uni(rng);
  return Tensor::param({fan_in, fan_out}, std::move(w));
}

// --- Linear / CondLinear / Mlp -------------------------------------------

Linear::Linear(int64_t in, int64_t out, std::mt19937_64& rng)
    : W(glorot_uniform(in, out, rng)),
      b(Tensor::param({out}, std::vector<double>(static_cast<size_t>(out), 0.0))) {}

Tensor Linear::forward(const Tensor& x) const { return add(matmul(x, W), b); }

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".W", W});
  out.push_back({prefix + ".b", b});
}

CondLinear::CondLinear(int64_t in, int64_t cond_in, int64_t out,
                       std::mt19937_64& rng)
    : main(in, out, rng) {
  if (cond_in > 0) {
    Linear side;
    side.W = glorot_uniform(cond_in, out, rng);
    cond = side;  // bias comes from `main` only
  }
}

Tensor CondLinear::forward(const Tensor& x, const Tensor* c) const {
  Tensor y = main.forward(x);
  if (cond.has_value()) {
    if (c == nullptr)
      throw std::invalid_argument("CondLinear: conditioning input missing");
    y = add(y, matmul(*c, cond->W));
  }
  return y;
}

void CondLinear::collect(ParamList& out, const std::string& prefix) const {
  main.collect(out, prefix);
  if (cond.has_value()) out.push_back({prefix + ".Wc", cond->W});
}

Mlp::Mlp(const std::vector<int64_t>& widths, std::mt19937_64& rng,
         Activation hidden, Activation output)
    : hidden_act(hidden), output_act(output) {
  if (widths.size() < 2)
    throw std::invalid_argument("Mlp: needs at least input and output width");
  for (size_t i = 0; i + 1 < widths.size(); ++i)
    layers.emplace_back(widths[i], widths[i + 1], rng);
}

namespace {
Tensor apply_act(const Tensor& x, Activation a) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::elu: return elu(x);
    case Activation::tanh: return tanh_op(x);
  }
  return x;
}
}  // namespace

Tensor Mlp::forward(const Tensor& x) const {
  Tensor y = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    y = layers[i].forward(y);
    y = apply_act(y, i + 1 < layers.size() ? hidden_act : output_act);
  }
  return y;
}

void Mlp::collect(ParamList& out, const std::string& prefix) const {
  for (size_t i = 0; i < layers.size(); ++i)
    layers[i].collect(out, prefix + "." + std::to_string(i));
}

// --- GRU ---------------------------------------------------------------

GruCell::GruCell(int64_t input, int64_t hidden, std::mt19937_64& rng)
    : input_size(input),
      hidden_size(hidden),
      Wx(glorot_uniform(input, 3 * hidden, rng)),
      Wh(glorot_uniform(hidden, 3 * hidden, rng)),
      bx(Tensor::param({3 * hidden},
                       std::vector<double>(static_cast<size_t>(3 * hidden), 0.0))),
      bh(Tensor::param({3 * hidden},
                       std::vector<double>(static_cast<size_t>(3 * hidden), 0.0))) {}

Tensor GruCell::step(const Tensor& h, const Tensor& x) const {
  if (x.shape().back() != input_size || h.shape().back() != hidden_size)
    throw std::invalid_argument(
        "gru_step: got x " + shape_str(x.shape()) + ", h " +
        shape_str(h.shape()) + " for cell (" + std::to_string(input_size) +
        " -> " + std::to_string(hidden_size) + ")");
  Tensor gx = add(matmul(x, Wx), bx);
  Tensor gh = add(matmul(h, Wh), bh);
  int64_t H = hidden_size;
  Tensor r = sigmoid(add(slice(gx, 1, 0, H), slice(gh, 1, 0, H)));
  Tensor u = sigmoid(add(slice(gx, 1, H, H), slice(gh, 1, H, H)));
  Tensor n = tanh_op(add(slice(gx, 1, 2 * H, H), mul(r, slice(gh, 1, 2 * H, H))));
  Tensor one_minus_u = add_scalar(neg(u), 1.0);
  return add(mul(one_minus_u, n), mul(u, h));
}

void GruCell::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".Wx", Wx});
  out.push_back({prefix + ".Wh", Wh});
  out.push_back({prefix + ".bx", bx});
  out.push_back({prefix + ".bh", bh});
}

// --- LSTM -----------------------------------------------------------------

LstmCell::LstmCell(int64_t input, int64_t hidden, std::mt19937_64& rng)
    : input_size(input),
      hidden_size(hidden),
      Wx(glorot_uniform(input, 4 * hidden, rng)),
      Wh(glorot_uniform(hidden, 4 * hidden, rng)),
      b(Tensor::param({4 * hidden},
                      std::vector<double>(static_cast<size_t>(4 * hidden), 0.0))) {}

LstmCell::State LstmCell::step(const State& s, const Tensor& x) const {
  if (x.shape().back() != input_size || s.h.shape().back() != hidden_size)
    throw std::invalid_argument(
        "lstm_step: got x " + shape_str(x.shape()) + ", h " +
        shape_str(s.h.shape()) + " for cell (" + std::to_string(input_size) +
        " -> " + std::to_string(hidden_size) + ")");
  Tensor g = add(add(matmul(x, Wx), matmul(s.h, Wh)), b);
  int64_t H = hidden_size;
  Tensor i = sigmoid(slice(g, 1, 0, H));
  Tensor f = sigmoid(slice(g, 1, H, H));
  Tensor cand = tanh_op(slice(g, 1, 2 * H, H));
  Tensor o = sigmoid(slice(g, 1, 3 * H, H));
  Tensor c = add(mul(f, s.c), mul(i, cand));
  Tensor h = mul(o, tanh_op(c));
  return {h, c};
}

LstmCell::State LstmCell::initial(int64_t batch) const {
  return {Tensor::zeros({batch, hidden_size}), Tensor::zeros({batch, hidden_size})};
}

void LstmCell::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".Wx", Wx});
  out.push_back({prefix + ".Wh", Wh});
  out.push_back({prefix + ".b", b});
}

// --- categorical latents ----------------------------------------------------

Tensor categorical_probs(const Tensor& logits) { return softmax(logits); }

Tensor straight_through_sample(const Tensor& logits, std::mt19937_64& rng) {
  return straight_through_onehot(softmax(logits), rng);
}

Tensor mode_sample(const Tensor& logits) {
  return argmax_onehot(softmax(logits));
}

Tensor kl_categorical(const Tensor& p_logits, const Tensor& q_logits) {
  if (p_logits.shape() != q_logits.shape())
    throw std::invalid_argument("kl_categorical: shape mismatch " +
                                shape_str(p_logits.shape()) + " vs " +
                                shape_str(q_logits.shape()));
  Tensor p = clamp_min(softmax(p_logits), kProbFloor);
  Tensor q = clamp_min(softmax(q_logits), kProbFloor);
  return sum(mul(p, sub(log_op(p), log_op(q))));
}

// --- squashed Gaussian ------------------------------------------------------

SquashedGaussian SquashedGaussian::make(const Tensor& mean,
                                        const Tensor& log_std_raw) {
  return {mean, clamp_max(clamp_min(log_std_raw, kLogStdMin), kLogStdMax)};
}

namespace {

// log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|.
Tensor log_one_minus_tanh_sq(const Tensor& u) {
  return scale(add_scalar(add(neg(u), neg(softplus(scale(u, -2.0)))),
                          std::log(2.0)),
               2.0);
}

}  // namespace

SquashedGaussian::Sample SquashedGaussian::sample(std::mt19937_64& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> eps(static_cast<size_t>(mean.size()));
  for (double& e : eps) e = normal(rng);
  Tensor epsilon = Tensor::from(mean.shape(), std::move(eps));
  Tensor std_dev = exp_op(log_std);
  Tensor u = add(mean, mul(std_dev, epsilon));
  Tensor action = tanh_op(u);
  // Normal log-density at u = mean + std*eps, in terms of eps:
  //   -0.5 eps^2 - log_std - 0.5 log(2 pi)
  Tensor base = sub(scale(mul(epsilon, epsilon), -0.5),
                    add_scalar(log_std, 0.5 * kLog2Pi));
  Tensor log_prob = sum(sub(base, log_one_minus_tanh_sq(u)), 1);
  return {action, log_prob};
}

Tensor SquashedGaussian::mode() const { return tanh_op(mean); }

Tensor SquashedGaussian::log_prob_of(const Tensor& action) const {
  // atanh with clamping away from +-1; forward evaluation only.
  std::vector<double> u(static_cast<size_t>(action.size()));
  for (int64_t i = 0; i < action.size(); ++i) {
    double a = std::clamp(action.values()[static_cast<size_t>(i)], -1.0 + 1e-12,
                          1.0 - 1e-12);
    u[static_cast<size_t>(i)] = std::atanh(a);
  }
  Tensor ut = Tensor::from(action.shape(), std::move(u));
  Tensor z = mul(sub(ut, mean), exp_op(neg(log_std)));
  Tensor base = sub(scale(mul(z, z), -0.5), add_scalar(log_std, 0.5 * kLog2Pi));
  return sum(sub(base, log_one_minus_tanh_sq(ut)), 1);
}

Tensor unit_gaussian_nll_sum(const Tensor& mean, const Tensor& target) {
  if (mean.shape() != target.shape())
    throw std::invalid_argument("unit_gaussian_nll: shape mismatch " +
                                shape_str(mean.shape()) + " vs " +
                                shape_str(target.shape()));
  Tensor err = sub(mean, target);
  Tensor sq = scale(sum(mul(err, err)), 0.5);
  return add_scalar(sq, 0.5 * kLog2Pi * static_cast<double>(mean.size()));
}

// --- Adam -------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, double lr, double clip_norm,
           double beta1, double beta2, double eps)
    : params_(std::move(params)),
      lr_(lr),
      clip_(clip_norm),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  for (auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

bool Adam::step() {
  double sq_norm = 0.0;
  for (auto& p : params_) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) {
        ++skipped_;
        return false;
      }
      sq_norm += g * g;
    }
  }
  double norm = std::sqrt(sq_norm);
  double scale_g = norm > clip_ ? clip_ / norm : 1.0;
  ++step_count_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& vals = params_[pi].mutable_values();
    const auto& grads = params_[pi].grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (size_t i = 0; i < vals.size(); ++i) {
      double g = grads[i] * scale_g;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      vals[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
  return true;
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::restore(int64_t step_count, std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v) {
  if (m.size() != params_.size() || v.size() != params_.size())
    throw std::invalid_argument("Adam::restore: moment count mismatch");
  for (size_t i = 0; i < params_.size(); ++i) {
    if (m[i].size() != params_[i].values().size() ||
        v[i].size() != params_[i].values().size())
      throw std::invalid_argument("Adam::restore: moment shape mismatch");
  }
  step_count_ = step_count;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace hipdreamer
