#include <doctest.h>

#include <cmath>
#include <vector>

#include "eve/numerics/gradcheck.hpp"
#include "eve/numerics/kernels.hpp"
#include "eve/numerics/layers.hpp"
#include "eve/numerics/ops.hpp"
#include "eve/numerics/rng.hpp"

using namespace eve::num;

namespace {

template <class T>
Tensor<T> randn(Shape shape, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.span()) v = static_cast<T>(rng.normal(0.0, sd));
  return t;
}

Var<double> leaf(Shape shape, std::uint64_t seed, double sd = 1.0) {
  return Var<double>(randn<double>(std::move(shape), seed, sd), true);
}

// Scalar probe: sum of x * fixed random weights, so every output entry matters.
Var<double> probe(const Var<double>& x, std::uint64_t seed) {
  return sum(mul(x, constant(randn<double>(x.shape(), seed))));
}

double check(const std::function<Var<double>()>& f, const std::vector<NamedTensor>& ps) {
  return grad_check(f, ps).max_rel_error;
}

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("rng is reproducible and state round-trips") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  const std::string st = a.state();
  const double x = a.normal();
  b.set_state(st);
  CHECK(b.normal() == x);
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
}

TEST_CASE("rng distributions have the right moments") {
  Rng rng(7);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
  std::vector<int> hist(5, 0);
  for (int i = 0; i < 50000; ++i) ++hist[rng.below(5)];
  for (int h : hist) CHECK(std::abs(h - 10000) < 400);
}

TEST_CASE("tensor rejects bad shapes") {
  CHECK_THROWS_AS(Tensor<float>({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({2, 3}).reshaped({4}), ShapeError);
}

TEST_CASE("avx2 kernels match scalar kernels") {
  if (!kernels::backend_available(kernels::Backend::kAvx2)) return;
#if EVE_HAVE_AVX2_KERNELS
  Rng rng(5);
  for (std::size_t n = 0; n < 70; ++n) {
    std::vector<float> xf(n), yf(n);
    std::vector<double> xd(n), yd(n);
    for (std::size_t i = 0; i < n; ++i) {
      xd[i] = rng.normal();
      yd[i] = rng.normal();
      xf[i] = static_cast<float>(xd[i]);
      yf[i] = static_cast<float>(yd[i]);
    }
    CAPTURE(n);
    const float sf = kernels::scalar::dot(xf.data(), yf.data(), n);
    const float vf = kernels::avx2::dot(xf.data(), yf.data(), n);
    CHECK(std::abs(sf - vf) <= 1e-5f * (1.0f + std::abs(sf)));
    const double sd = kernels::scalar::dot(xd.data(), yd.data(), n);
    const double vd = kernels::avx2::dot(xd.data(), yd.data(), n);
    CHECK(std::abs(sd - vd) <= 1e-12 * (1.0 + std::abs(sd)));

    std::vector<float> af = yf, bf = yf;
    kernels::scalar::axpy(0.7f, xf.data(), af.data(), n);
    kernels::avx2::axpy(0.7f, xf.data(), bf.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(af[i] - bf[i]) <= 1e-6f * (1 + std::abs(af[i])));
    std::vector<double> ad = yd, bd = yd;
    kernels::scalar::axpy(-1.3, xd.data(), ad.data(), n);
    kernels::avx2::axpy(-1.3, xd.data(), bd.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(ad[i] - bd[i]) <= 1e-14 * (1 + std::abs(ad[i])));
  }
#endif
}

TEST_CASE("ops agree across backends") {
  if (!kernels::backend_available(kernels::Backend::kAvx2)) return;
  const auto a = constant(randn<float>({7, 19}, 1));
  const auto b = constant(randn<float>({19, 5}, 2));
  Tensor<float> s, v;
  {
    kernels::ScopedBackend sb(kernels::Backend::kScalar);
    s = matmul(a, b).value();
  }
  {
    kernels::ScopedBackend sb(kernels::Backend::kAvx2);
    v = matmul(a, b).value();
  }
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s[i] - v[i]) < 1e-5f);
}

TEST_CASE("matmul and linear match triple loops") {
  const auto a = randn<double>({4, 6}, 3);
  const auto b = randn<double>({6, 5}, 4);
  const auto c = matmul(constant(a), constant(b)).value();
  const auto w = randn<double>({5, 6}, 5);
  const auto bias = randn<double>({5}, 6);
  const auto l = linear(constant(a), constant(w), constant(bias)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double m = 0, li = bias[j];
      for (std::size_t k = 0; k < 6; ++k) {
        m += a.at(i, k) * b.at(k, j);
        li += a.at(i, k) * w.at(j, k);
      }
      CHECK(c.at(i, j) == doctest::Approx(m).epsilon(1e-12));
      CHECK(l.at(i, j) == doctest::Approx(li).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax, norms and activations match closed forms") {
  const auto x = randn<double>({3, 8}, 7);
  const auto w = randn<double>({8}, 8);
  const auto bias = randn<double>({8}, 9);
  const auto sm = softmax_rows(constant(x)).value();
  const auto rn = rms_norm(constant(x), constant(w)).value();
  const auto ln = layer_norm(constant(x), constant(w), constant(bias)).value();
  const auto l2 = l2_normalize_rows(constant(x)).value();
  const auto si = silu(constant(x)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double mx = -1e300, z = 0, ms = 0, mu = 0, var = 0, nn = 0;
    for (std::size_t c = 0; c < 8; ++c) mx = std::max(mx, x.at(r, c));
    for (std::size_t c = 0; c < 8; ++c) {
      z += std::exp(x.at(r, c) - mx);
      ms += x.at(r, c) * x.at(r, c) / 8;
      mu += x.at(r, c) / 8;
      nn += x.at(r, c) * x.at(r, c);
    }
    for (std::size_t c = 0; c < 8; ++c) var += (x.at(r, c) - mu) * (x.at(r, c) - mu) / 8;
    for (std::size_t c = 0; c < 8; ++c) {
      const double v = x.at(r, c);
      CHECK(sm.at(r, c) == doctest::Approx(std::exp(v - mx) / z).epsilon(1e-12));
      CHECK(rn.at(r, c) == doctest::Approx(v / std::sqrt(ms + 1e-6) * w[c]).epsilon(1e-12));
      CHECK(ln.at(r, c) == doctest::Approx((v - mu) / std::sqrt(var + 1e-5) * w[c] + bias[c]).epsilon(1e-12));
      CHECK(l2.at(r, c) == doctest::Approx(v / std::sqrt(nn)).epsilon(1e-12));
      CHECK(si.at(r, c) == doctest::Approx(v / (1 + std::exp(-v))).epsilon(1e-12));
    }
  }
  const auto zero = l2_normalize_rows(constant(Tensor<double>({1, 4}))).value();
  for (double v : zero.values()) CHECK(v == 0.0);
}

TEST_CASE("cross entropy matches log-sum-exp and uniform logits give ln V") {
  const auto logits = randn<double>({4, 6}, 10);
  const std::vector<int> labels{1, 5, 0, 3};
  const std::vector<std::uint8_t> mask{1, 0, 1, 1};
  double expect = 0;
  for (std::size_t r : {0u, 2u, 3u}) {
    double z = 0;
    for (std::size_t c = 0; c < 6; ++c) z += std::exp(logits.at(r, c));
    expect += std::log(z) - logits.at(r, labels[r]);
  }
  CHECK(item(cross_entropy_sum(constant(logits), labels, mask)) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(item(cross_entropy(constant(logits), labels, mask)) == doctest::Approx(expect / 3).epsilon(1e-12));
  const std::vector<std::uint8_t> none{0, 0, 0, 0};
  CHECK_THROWS_AS(cross_entropy(constant(logits), labels, none), std::invalid_argument);
  const auto flat = cross_entropy(constant(Tensor<double>({4, 6}, 0.25)), labels, mask);
  CHECK(item(flat) == doctest::Approx(std::log(6.0)).epsilon(1e-12));
}

TEST_CASE("rope rotates head pairs by position-dependent angles") {
  const std::size_t heads = 2, d = 8, hd = 4;
  const auto x = randn<double>({3, d}, 11);
  const auto y = rope(constant(x), heads, 100.0, 5).value();
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < hd / 2; ++i) {
        const double th = static_cast<double>(r + 5) * std::pow(100.0, -2.0 * i / hd);
        const std::size_t c = h * hd + 2 * i;
        const double a = x.at(r, c), b = x.at(r, c + 1);
        CHECK(y.at(r, c) == doctest::Approx(a * std::cos(th) - b * std::sin(th)).epsilon(1e-12));
        CHECK(y.at(r, c + 1) == doctest::Approx(a * std::sin(th) + b * std::cos(th)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("attention matches a naive masked loop") {
  const std::size_t nq = 4, nk = 5, d = 6, heads = 2, hd = 3;
  const auto q = randn<double>({nq, d}, 12);
  const auto k = randn<double>({nk, d}, 13);
  const auto v = randn<double>({nk, d}, 14);
  const KeySets keys = KeySets::from_lists({{0}, {1, 3}, {0, 1, 2, 3, 4}, {4, 2}}, nk);
  const auto out = attention(constant(q), constant(k), constant(v), heads, keys).value();
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<double> s;
      for (std::size_t j : keys.keys(i)) {
        double dot = 0;
        for (std::size_t c = 0; c < hd; ++c) dot += q.at(i, h * hd + c) * k.at(j, h * hd + c);
        s.push_back(dot / std::sqrt(static_cast<double>(hd)));
      }
      double mx = -1e300, z = 0;
      for (double e : s) mx = std::max(mx, e);
      for (double& e : s) z += (e = std::exp(e - mx));
      for (std::size_t c = 0; c < hd; ++c) {
        double acc = 0;
        std::size_t t = 0;
        for (std::size_t j : keys.keys(i)) acc += s[t++] / z * v.at(j, h * hd + c);
        CHECK(out.at(i, h * hd + c) == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
  CHECK_THROWS_AS(KeySets::from_mask({{true, false}, {false, false}}), ShapeError);
}

TEST_CASE("adaptive pooling covers every touched input cell") {
  // 3 x 5 grid -> 2 x 2: row windows [0,2) and [1,3), column windows [0,3) and [2,5).
  Tensor<double> x({15, 1});
  for (std::size_t i = 0; i < 15; ++i) x[i] = static_cast<double>(i);
  const auto y = adaptive_avg_pool2d(constant(x), 3, 5, 2, 2).value();
  auto avg = [&](std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
    double s = 0;
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = c0; c < c1; ++c) s += x[r * 5 + c];
    return s / static_cast<double>((r1 - r0) * (c1 - c0));
  };
  CHECK(y[0] == doctest::Approx(avg(0, 2, 0, 3)));
  CHECK(y[1] == doctest::Approx(avg(0, 2, 2, 5)));
  CHECK(y[2] == doctest::Approx(avg(1, 3, 0, 3)));
  CHECK(y[3] == doctest::Approx(avg(1, 3, 2, 5)));
  const auto p = avg_pool2d(constant(x.reshaped({15, 1})), 3, 5, 1).value();
  CHECK(p == x);
}

TEST_CASE("patchify orders vectors as channel, ky, kx") {
  Tensor<double> img({2, 4, 4});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i);
  const auto p = patchify(img, 2);
  CHECK(p.shape() == Shape{4, 8});
  // patch (1, 0): rows 2-3, cols 0-1
  const std::vector<double> expect{8, 9, 12, 13, 24, 25, 28, 29};
  for (std::size_t j = 0; j < 8; ++j) CHECK(p.at(2, j) == expect[j]);
}

TEST_CASE("gradients of every primitive pass finite differences") {
  const double tol = 1e-6;
  auto a = leaf({3, 4}, 20), b = leaf({3, 4}, 21), w4 = leaf({4}, 22), b4 = leaf({4}, 23);
  auto m = leaf({4, 5}, 24), w = leaf({5, 4}, 25), bias = leaf({5}, 26);
  CHECK(check([&] { return probe(add(a, b), 1); }, {{"a", a}, {"b", b}}) < tol);
  CHECK(check([&] { return probe(mul(a, b), 2); }, {{"a", a}, {"b", b}}) < tol);
  CHECK(check([&] { return probe(sub(scale(a, 0.3), b), 3); }, {{"a", a}, {"b", b}}) < tol);
  CHECK(check([&] { return probe(add_row(a, w4), 4); }, {{"a", a}, {"w", w4}}) < tol);
  CHECK(check([&] { return probe(matmul(a, m), 5); }, {{"a", a}, {"m", m}}) < tol);
  CHECK(check([&] { return probe(linear(a, w, bias), 6); }, {{"a", a}, {"w", w}, {"b", bias}}) < tol);
  CHECK(check([&] { return probe(silu(a), 7); }, {{"a", a}}) < tol);
  CHECK(check([&] { return probe(gelu(a), 8); }, {{"a", a}}) < tol);
  CHECK(check([&] { return probe(softmax_rows(a), 9); }, {{"a", a}}) < tol);
  CHECK(check([&] { return probe(rms_norm(a, w4), 10); }, {{"a", a}, {"w", w4}}) < tol);
  CHECK(check([&] { return probe(layer_norm(a, w4, b4), 11); }, {{"a", a}, {"w", w4}, {"b", b4}}) < tol);
  CHECK(check([&] { return probe(l2_normalize_rows(a), 12); }, {{"a", a}}) < tol);
  CHECK(check([&] { return mse(a, b); }, {{"a", a}, {"b", b}}) < tol);
  CHECK(check([&] { return probe(rope(a, 2, 10.0, 3), 13); }, {{"a", a}}) < tol);
  CHECK(check([&] { return mean(reshape(a, {12})); }, {{"a", a}}) < tol);

  const std::vector<int> labels{0, 3, 1};
  const std::vector<std::uint8_t> mask{1, 1, 0};
  CHECK(check([&] { return cross_entropy(a, labels, mask); }, {{"a", a}}) < tol);

  auto q = leaf({3, 4}, 30), k = leaf({5, 4}, 31), v = leaf({5, 4}, 32);
  const KeySets keys = KeySets::from_lists({{0, 2}, {1}, {0, 1, 2, 3, 4}}, 5);
  CHECK(check([&] { return probe(attention(q, k, v, 2, keys), 14); }, {{"q", q}, {"k", k}, {"v", v}}) < tol);

  auto g = leaf({12, 3}, 33);
  CHECK(check([&] { return probe(adaptive_avg_pool2d(g, 3, 4, 2, 3), 15); }, {{"g", g}}) < tol);
  CHECK(check([&] { return probe(avg_pool2d(g, 2, 6, 2), 16); }, {{"g", g}}) < tol);
  const std::vector<std::size_t> rows{5, 0, 5, 11};
  CHECK(check([&] { return probe(gather_rows(g, rows), 17); }, {{"g", g}}) < tol);
  CHECK(check([&] {
          std::vector<Var<double>> parts{a, b};
          return probe(concat_rows<double>(parts), 18);
        },
        {{"a", a}, {"b", b}}) < tol);

  const auto img = randn<double>({3, 4, 4}, 34);
  auto cw = leaf({5, 3, 2, 2}, 35), cb = leaf({5}, 36);
  CHECK(check([&] { return probe(conv2d_patchify(img, cw, cb, 2), 19); }, {{"w", cw}, {"b", cb}}) < tol);
}

TEST_CASE("frozen leaves receive no gradient and no-grad mode builds no graph") {
  auto a = leaf({2, 3}, 40);
  Var<double> frozen(randn<double>({2, 3}, 41), true);
  frozen.set_requires_grad(false);
  backward(sum(mul(a, frozen)));
  CHECK(a.has_grad());
  CHECK_FALSE(frozen.has_grad());
  {
    NoGradGuard guard;
    const auto y = mul(a, a);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(grad_mode_enabled());
}

TEST_CASE("parameter init does not depend on creation order") {
  ParamStore<float> s1, s2;
  add_normal(s1, "x", {3, 3}, 0.02, 9);
  add_normal(s1, "y", {4}, 0.02, 9);
  add_normal(s2, "y", {4}, 0.02, 9);
  add_normal(s2, "x", {3, 3}, 0.02, 9);
  CHECK(s1.get("x").value() == s2.get("x").value());
  CHECK(s1.get("y").value() == s2.get("y").value());
}

}  // TEST_SUITE
