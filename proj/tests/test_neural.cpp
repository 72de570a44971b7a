#include <cmath>
#include <random>

#include "doctest.h"
#include "hipdreamer/nn.hpp"

using namespace hipdreamer;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> uni(lo, hi);
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (double& x : v) x = uni(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

void fill(Tensor& t, double v) {
  for (double& x : t.mutable_values()) x = v;
}

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace

TEST_CASE("gru_step gate conventions") {
  std::mt19937_64 rng(1);

  SUBCASE("zero weights: u=0.5, n=0, h' = 0.5 h") {
    GruCell cell(3, 4, rng);
    fill(cell.Wx, 0.0);
    fill(cell.Wh, 0.0);
    Tensor h = random_tensor({2, 4}, rng);
    Tensor x = random_tensor({2, 3}, rng);
    Tensor h2 = cell.step(h, x);
    for (int64_t i = 0; i < h2.size(); ++i)
      CHECK(h2.values()[i] == doctest::Approx(0.5 * h.values()[i]));
  }

  SUBCASE("zeros are a fixed point of the zero cell") {
    GruCell cell(3, 4, rng);
    fill(cell.Wx, 0.0);
    fill(cell.Wh, 0.0);
    Tensor h2 = cell.step(Tensor::zeros({1, 4}), Tensor::zeros({1, 3}));
    for (double v : h2.values()) CHECK(v == 0.0);
  }

  SUBCASE("dimension mismatch rejected") {
    GruCell cell(3, 4, rng);
    CHECK_THROWS_AS(cell.step(Tensor::zeros({1, 4}), Tensor::zeros({1, 5})),
                    std::invalid_argument);
  }

  SUBCASE("gradients pass finite differences on random cells") {
    for (int k = 0; k < 20; ++k) {
      GruCell cell(3, 4, rng);
      Tensor h = random_tensor({2, 4}, rng);
      Tensor x = random_tensor({2, 3}, rng);
      ParamList ps;
      cell.collect(ps, "gru");
      auto tensors = tensors_of(ps);
      double err = finite_diff_check_params(
          [&] {
            Tensor out = cell.step(h, x);
            return sum(mul(out, out));
          },
          tensors);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("lstm_step gate conventions") {
  std::mt19937_64 rng(2);

  SUBCASE("zero everything maps to zero state") {
    LstmCell cell(3, 4, rng);
    fill(cell.Wx, 0.0);
    fill(cell.Wh, 0.0);
    auto s = cell.step(cell.initial(1), Tensor::zeros({1, 3}));
    for (double v : s.c.values()) CHECK(v == 0.0);
    for (double v : s.h.values()) CHECK(v == 0.0);
  }

  SUBCASE("saturated forget gate preserves the cell state") {
    LstmCell cell(3, 4, rng);
    fill(cell.Wx, 0.0);
    fill(cell.Wh, 0.0);
    // forget-gate block of the bias (order [i, f, g, o])
    for (int64_t i = 4; i < 8; ++i) cell.b.mutable_values()[i] = 50.0;
    LstmCell::State s{random_tensor({1, 4}, rng), random_tensor({1, 4}, rng)};
    auto s2 = cell.step(s, Tensor::zeros({1, 3}));
    for (int64_t i = 0; i < 4; ++i)
      CHECK(s2.c.values()[i] == doctest::Approx(s.c.values()[i]).epsilon(1e-9));
  }

  SUBCASE("gradients pass finite differences on random cells") {
    for (int k = 0; k < 20; ++k) {
      LstmCell cell(3, 4, rng);
      LstmCell::State s{random_tensor({2, 4}, rng), random_tensor({2, 4}, rng)};
      Tensor x = random_tensor({2, 3}, rng);
      ParamList ps;
      cell.collect(ps, "lstm");
      auto tensors = tensors_of(ps);
      double err = finite_diff_check_params(
          [&] {
            auto out = cell.step(s, x);
            return add(sum(mul(out.h, out.h)), sum(mul(out.c, out.c)));
          },
          tensors);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("straight-through categorical sampling") {
  SUBCASE("saturated logits give the argmax one-hot") {
    std::mt19937_64 rng(3);
    Tensor logits = Tensor::from({1, 2, 3}, {50, 0, 0, 0, 50, 0});
    for (int k = 0; k < 10; ++k) {
      Tensor s = straight_through_sample(logits, rng);
      CHECK(s.values() == std::vector<double>{1, 0, 0, 0, 1, 0});
    }
  }

  SUBCASE("uniform logits: empirical frequencies within 3 sigma of 1/C") {
    std::mt19937_64 rng(4);
    const int n = 100000, C = 4;
    Tensor logits = Tensor::zeros({1, C});
    std::vector<int> counts(C, 0);
    for (int k = 0; k < n; ++k) {
      Tensor s = straight_through_sample(logits, rng);
      for (int i = 0; i < C; ++i)
        if (s.values()[i] == 1.0) counts[i]++;
    }
    double p = 1.0 / C;
    double sigma = std::sqrt(p * (1 - p) / n);
    for (int i = 0; i < C; ++i)
      CHECK(std::abs(counts[i] / double(n) - p) < 3 * sigma);
  }

  SUBCASE("gradient equals the analytic softmax-path gradient exactly") {
    std::mt19937_64 rng(5);
    Tensor logits = Tensor::param({2, 4}, {0.3, -1.0, 0.5, 2.0,
                                           -0.2, 0.1, 0.0, 1.5});
    Tensor w = random_tensor({2, 4}, rng);

    std::mt19937_64 sample_rng(11);
    backward(sum(mul(straight_through_sample(logits, sample_rng), w)));
    std::vector<double> st_grad = logits.grad();

    backward(sum(mul(softmax(logits), w)));
    std::vector<double> analytic = logits.grad();

    for (size_t i = 0; i < st_grad.size(); ++i)
      CHECK(st_grad[i] == analytic[i]);
  }
}

TEST_CASE("kl_categorical") {
  std::mt19937_64 rng(6);

  SUBCASE("identical logits give zero") {
    for (int k = 0; k < 5; ++k) {
      Tensor p = random_tensor({3, 4}, rng, -3, 3);
      CHECK(std::abs(kl_categorical(p, p).item()) < 1e-12);
    }
  }

  SUBCASE("point mass vs uniform is ln 2 for C=2") {
    Tensor p = Tensor::from({1, 2}, {50.0, -50.0});
    Tensor q = Tensor::zeros({1, 2});
    CHECK(kl_categorical(p, q).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }

  SUBCASE("matches a brute-force summation oracle") {
    for (int k = 0; k < 20; ++k) {
      Tensor p = random_tensor({2, 3}, rng, -3, 3);
      Tensor q = random_tensor({2, 3}, rng, -3, 3);
      // independent direct computation
      double expected = 0.0;
      for (int g = 0; g < 2; ++g) {
        double zp = 0, zq = 0;
        for (int c = 0; c < 3; ++c) {
          zp += std::exp(p.values()[g * 3 + c]);
          zq += std::exp(q.values()[g * 3 + c]);
        }
        for (int c = 0; c < 3; ++c) {
          double pp = std::max(std::exp(p.values()[g * 3 + c]) / zp, 1e-8);
          double qq = std::max(std::exp(q.values()[g * 3 + c]) / zq, 1e-8);
          expected += pp * (std::log(pp) - std::log(qq));
        }
      }
      CHECK(kl_categorical(p, q).item() == doctest::Approx(expected).epsilon(1e-10));
      CHECK(kl_categorical(p, q).item() >= 0.0);
    }
  }
}

TEST_CASE("squashed Gaussian action head") {
  std::mt19937_64 rng(7);

  SUBCASE("samples stay inside (-1, 1)") {
    auto dist = SquashedGaussian::make(Tensor::from({1, 2}, {3.0, -4.0}),
                                       Tensor::from({1, 2}, {1.0, 1.0}));
    for (int k = 0; k < 200; ++k) {
      auto s = dist.sample(rng);
      for (double a : s.action.values()) {
        CHECK(a > -1.0);
        CHECK(a < 1.0);
      }
    }
  }

  SUBCASE("density integrates to one on a 1-D grid") {
    auto dist = SquashedGaussian::make(Tensor::from({1, 1}, {0.4}),
                                       Tensor::from({1, 1}, {-0.6}));
    const int n = 20000;
    double h = 2.0 / n, integral = 0.0;
    for (int i = 0; i < n; ++i) {
      double a = -1.0 + (i + 0.5) * h;
      Tensor lp = dist.log_prob_of(Tensor::from({1, 1}, {a}));
      integral += std::exp(lp.values()[0]) * h;
    }
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));
  }

  SUBCASE("log_std is clamped to the configured interval") {
    auto dist = SquashedGaussian::make(Tensor::zeros({1, 2}),
                                       Tensor::from({1, 2}, {-20.0, 20.0}));
    CHECK(dist.log_std.values()[0] == SquashedGaussian::kLogStdMin);
    CHECK(dist.log_std.values()[1] == SquashedGaussian::kLogStdMax);
  }

  SUBCASE("sample log_prob matches log_prob_of at the sampled point") {
    auto dist = SquashedGaussian::make(Tensor::from({1, 2}, {0.2, -0.3}),
                                       Tensor::from({1, 2}, {-0.5, -1.0}));
    auto s = dist.sample(rng);
    Tensor again = dist.log_prob_of(s.action);
    CHECK(s.log_prob.values()[0] ==
          doctest::Approx(again.values()[0]).epsilon(1e-6));
  }
}

TEST_CASE("unit-variance Gaussian NLL floor") {
  Tensor mu = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor nll = unit_gaussian_nll_sum(mu, mu);
  // zero error: exactly 0.5 * d * ln(2 pi) summed over both rows
  CHECK(nll.item() == 0.5 * 6 * kLog2Pi);
}

TEST_CASE("adam_step") {
  std::mt19937_64 rng(8);

  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::param({3}, {1.0, -2.0, 0.5});
    Adam opt({p}, 1e-2);
    opt.zero_grad();
    CHECK(opt.step());
    CHECK(p.values() == std::vector<double>{1.0, -2.0, 0.5});
  }

  SUBCASE("one step against a constant gradient moves by about -lr*sign(g)") {
    Tensor p = Tensor::param({1}, {0.0});
    Adam opt({p}, 1e-2);
    Tensor loss = scale(sum(p), 0.37);  // constant gradient 0.37
    opt.zero_grad();
    backward(loss, GradMode::accumulate);
    CHECK(opt.step());
    CHECK(p.values()[0] == doctest::Approx(-1e-2).epsilon(1e-6));
  }

  SUBCASE("non-finite gradient skips the update") {
    Tensor q = Tensor::param({1}, {0.0});
    Adam opt({q}, 1e-2);
    backward(sum(log_op(q)));  // d/dq log(q) at 0 -> inf
    CHECK_FALSE(opt.step());
    CHECK(q.values()[0] == 0.0);
    CHECK(opt.skipped_count() == 1);
    CHECK(opt.step_count() == 0);
  }

  SUBCASE("drives a quadratic bowl to the origin") {
    std::vector<double> init(8);
    std::uniform_real_distribution<double> uni(-1, 1);
    for (double& x : init) x = uni(rng);
    Tensor x = Tensor::param({8}, init);
    Adam opt({x}, 1e-2);
    for (int k = 0; k < 500; ++k) {
      opt.zero_grad();
      backward(sum(mul(x, x)), GradMode::accumulate);
      opt.step();
    }
    double norm = 0;
    for (double v : x.values()) norm += v * v;
    CHECK(std::sqrt(norm) < 1e-3);
  }
}

TEST_CASE("mlp gradient check, three layers") {
  std::mt19937_64 rng(9);
  Mlp mlp({3, 5, 4, 2}, rng);
  Tensor x = random_tensor({2, 3}, rng);
  ParamList ps;
  mlp.collect(ps, "mlp");
  auto tensors = tensors_of(ps);
  double err = finite_diff_check_params(
      [&] {
        Tensor y = mlp.forward(x);
        return sum(mul(y, y));
      },
      tensors);
  CHECK(err < 1e-4);
}

TEST_CASE("cond linear: zero conditioning block reproduces the plain output") {
  std::mt19937_64 rng(10);
  CondLinear with(4, 2, 3, rng);
  Tensor x = random_tensor({5, 4}, rng);
  Tensor c = random_tensor({5, 2}, rng);
  Tensor base = with.main.forward(x);
  fill(with.cond->W, 0.0);
  Tensor conditioned = with.forward(x, &c);
  for (int64_t i = 0; i < base.size(); ++i)
    CHECK(conditioned.values()[i] == base.values()[i]);
}
