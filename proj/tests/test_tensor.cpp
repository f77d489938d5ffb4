#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <type_traits>
#include <vector>

#include "lpr/tensor.hpp"

using namespace lpr;

namespace {

template <typename S>
constexpr double kFdStep = std::is_same_v<S, double> ? 1e-5 : 3e-3;
template <typename S>
constexpr double kFdTol = std::is_same_v<S, double> ? 1e-6 : 1e-4;

template <typename S>
Tensor<S> rand_leaf(Shape shape, std::mt19937& rng, double lo, double hi,
                    bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<S> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<S>(dist(rng));
  return Tensor<S>::leaf(std::move(shape), std::move(data), requires_grad);
}

/// Values in +-[0.3, 1.2]: an fd step never crosses the relu kink.
template <typename S>
Tensor<S> rand_leaf_off_zero(Shape shape, std::mt19937& rng) {
  std::uniform_real_distribution<double> mag(0.3, 1.2);
  std::bernoulli_distribution sign(0.5);
  std::vector<S> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<S>(sign(rng) ? mag(rng) : -mag(rng));
  return Tensor<S>::leaf(std::move(shape), std::move(data), true);
}

/// Asymmetric weighted reduction so index mix-ups change the loss.
template <typename S>
Tensor<S> weighted_sum(const Tensor<S>& y) {
  const int n = static_cast<int>(y.numel());
  std::vector<S> w(n);
  for (int i = 0; i < n; ++i) w[i] = static_cast<S>(0.4 + 0.6 * std::sin(1.0 + i));
  auto wt = Tensor<S>::constant({n}, std::move(w));
  return sum_all(mul(reshape(y, {n}), wt));
}

/// Central finite differences on every element of every leaf; returns the
/// worst relative error, with |a-n| / max(|a|, |n|, 1) as the metric.
template <typename S, typename Build>
double fd_check(const std::vector<Tensor<S>>& leaves, Build&& build) {
  const double h = kFdStep<S>;
  Tensor<S> loss = build();
  backward(loss);
  std::vector<std::vector<S>> analytic;
  for (const auto& leaf : leaves) analytic.push_back(leaf.grad());

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& data = const_cast<Tensor<S>&>(leaves[li]).mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const S orig = data[i];
      data[i] = static_cast<S>(orig + h);
      const double xp = static_cast<double>(data[i]);
      const double fp = static_cast<double>(build().item());
      data[i] = static_cast<S>(orig - h);
      const double xm = static_cast<double>(data[i]);
      const double fm = static_cast<double>(build().item());
      data[i] = orig;
      const double numeric = (fp - fm) / (xp - xm);
      const double a = static_cast<double>(analytic[li][i]);
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

template <typename S>
std::vector<S> column_shifted(const std::vector<S>& data, int C, int H, int W, int s) {
  std::vector<S> out(data.size());
  for (int c = 0; c < C; ++c) {
    for (int h = 0; h < H; ++h) {
      for (int w = 0; w < W; ++w) {
        const int src = (w - s % W + W) % W;
        out[(static_cast<std::size_t>(c) * H + h) * W + w] =
            data[(static_cast<std::size_t>(c) * H + h) * W + src];
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE_TEMPLATE("elementwise ops match finite differences", S, float, double) {
  std::mt19937 rng(11);
  auto a = rand_leaf<S>({3, 4}, rng, -1.0, 1.0);
  auto b = rand_leaf<S>({3, 4}, rng, -1.0, 1.0);

  CHECK(fd_check<S>({a, b}, [&] { return weighted_sum(add(a, b)); }) < kFdTol<S>);
  CHECK(fd_check<S>({a, b}, [&] { return weighted_sum(sub(a, b)); }) < kFdTol<S>);
  CHECK(fd_check<S>({a, b}, [&] { return weighted_sum(mul(a, b)); }) < kFdTol<S>);
  CHECK(fd_check<S>({a}, [&] { return weighted_sum(add_scalar(a, S(0.7))); }) < kFdTol<S>);
  CHECK(fd_check<S>({a}, [&] { return weighted_sum(mul_scalar(a, S(-1.3))); }) < kFdTol<S>);
}

TEST_CASE_TEMPLATE("relu matches finite differences away from the kink", S, float, double) {
  std::mt19937 rng(12);
  auto a = rand_leaf_off_zero<S>({4, 5}, rng);
  CHECK(fd_check<S>({a}, [&] { return weighted_sum(relu(a)); }) < kFdTol<S>);
}

TEST_CASE_TEMPLATE("broadcast ops match finite differences", S, float, double) {
  std::mt19937 rng(13);
  auto m = rand_leaf<S>({4, 3}, rng, -1.0, 1.0);
  auto row = rand_leaf<S>({3}, rng, -1.0, 1.0);
  auto col = rand_leaf<S>({4}, rng, 0.2, 1.0);

  CHECK(fd_check<S>({m, row}, [&] { return weighted_sum(add_rowvec(m, row)); }) < kFdTol<S>);
  CHECK(fd_check<S>({m, row}, [&] { return weighted_sum(mul_rowvec(m, row)); }) < kFdTol<S>);
  CHECK(fd_check<S>({m, col}, [&] { return weighted_sum(mul_colvec(m, col)); }) < kFdTol<S>);
}

TEST_CASE_TEMPLATE("matrix products match finite differences", S, float, double) {
  std::mt19937 rng(14);
  auto a = rand_leaf<S>({3, 4}, rng, -1.0, 1.0);
  auto b = rand_leaf<S>({4, 2}, rng, -1.0, 1.0);
  auto bt = rand_leaf<S>({2, 4}, rng, -1.0, 1.0);
  auto at = rand_leaf<S>({4, 3}, rng, -1.0, 1.0);

  CHECK(fd_check<S>({a, b}, [&] { return weighted_sum(matmul(a, b)); }) < kFdTol<S>);
  CHECK(fd_check<S>({a, bt}, [&] { return weighted_sum(matmul_nt(a, bt)); }) < kFdTol<S>);
  CHECK(fd_check<S>({at, b}, [&] { return weighted_sum(matmul_tn(at, b)); }) < kFdTol<S>);
}

TEST_CASE_TEMPLATE("structural ops match finite differences", S, float, double) {
  std::mt19937 rng(15);
  auto a = rand_leaf<S>({3, 4}, rng, -1.0, 1.0);
  auto b = rand_leaf<S>({3, 2}, rng, -1.0, 1.0);
  auto c = rand_leaf<S>({2, 4}, rng, -1.0, 1.0);
  auto v1 = rand_leaf<S>({3}, rng, -1.0, 1.0);
  auto v2 = rand_leaf<S>({2}, rng, -1.0, 1.0);

  CHECK(fd_check<S>({a}, [&] { return weighted_sum(transpose2d(a)); }) < kFdTol<S>);
  CHECK(fd_check<S>({a}, [&] { return weighted_sum(reshape(a, {2, 6})); }) < kFdTol<S>);
  CHECK(fd_check<S>({a, b}, [&] {
          return weighted_sum(concat<S>({a, b}, 1));
        }) < kFdTol<S>);
  CHECK(fd_check<S>({a, c}, [&] {
          return weighted_sum(concat<S>({a, c}, 0));
        }) < kFdTol<S>);
  CHECK(fd_check<S>({v1, v2}, [&] {
          return weighted_sum(concat<S>({v1, v2}, 0));
        }) < kFdTol<S>);
  CHECK(fd_check<S>({a}, [&] {
          auto parts = split_cols(a, 2);
          return add(weighted_sum(parts[0]), mul_scalar(weighted_sum(parts[1]), S(2)));
        }) < kFdTol<S>);
}

TEST_CASE_TEMPLATE("normalizations match finite differences", S, float, double) {
  std::mt19937 rng(16);
  auto a = rand_leaf<S>({3, 5}, rng, -1.5, 1.5);
  CHECK(fd_check<S>({a}, [&] { return weighted_sum(softmax_rows(a)); }) < kFdTol<S>);
  CHECK(fd_check<S>({a}, [&] { return weighted_sum(layer_norm_rows(a)); }) < kFdTol<S>);
  CHECK(fd_check<S>({a}, [&] { return weighted_sum(l2_normalize_rows(a)); }) < kFdTol<S>);
}

TEST_CASE_TEMPLATE("reductions match finite differences", S, float, double) {
  std::mt19937 rng(17);
  auto a = rand_leaf<S>({4, 3}, rng, -1.0, 1.0);
  CHECK(fd_check<S>({a}, [&] { return sum_all(a); }) < kFdTol<S>);
  CHECK(fd_check<S>({a}, [&] { return mean_all(a); }) < kFdTol<S>);
  // Unique max with a gap wider than the fd step.
  auto& data = a.mutable_data();
  data[5] = S(3.0);
  CHECK(fd_check<S>({a}, [&] { return max_all(a); }) < kFdTol<S>);
}

TEST_CASE_TEMPLATE("conv2d_valid matches finite differences", S, float, double) {
  std::mt19937 rng(18);
  auto input = rand_leaf<S>({2, 6, 5}, rng, -1.0, 1.0);
  auto k11 = rand_leaf<S>({3, 2, 2, 1}, rng, -1.0, 1.0);
  auto k21 = rand_leaf<S>({2, 2, 3, 1}, rng, -1.0, 1.0);
  auto k22 = rand_leaf<S>({2, 2, 2, 2}, rng, -1.0, 1.0);
  auto bias = rand_leaf<S>({3}, rng, -0.5, 0.5);

  CHECK(fd_check<S>({input, k11}, [&] {
          return weighted_sum(conv2d_valid(input, k11, 1, 1));
        }) < kFdTol<S>);
  CHECK(fd_check<S>({input, k21}, [&] {
          return weighted_sum(conv2d_valid(input, k21, 2, 1));
        }) < kFdTol<S>);
  CHECK(fd_check<S>({input, k22}, [&] {
          return weighted_sum(conv2d_valid(input, k22, 2, 2));
        }) < kFdTol<S>);
  CHECK(fd_check<S>({input, k11, bias}, [&] {
          return weighted_sum(add_channel_bias(conv2d_valid(input, k11, 1, 1), bias));
        }) < kFdTol<S>);
}

TEST_CASE_TEMPLATE("vlad_aggregate matches finite differences", S, float, double) {
  std::mt19937 rng(28);
  auto assign = rand_leaf<S>({6, 3}, rng, 0.05, 1.0);
  auto s = rand_leaf<S>({6, 4}, rng, -1.0, 1.0);
  auto centers = rand_leaf<S>({3, 4}, rng, -1.0, 1.0);
  CHECK(fd_check<S>({assign, s, centers}, [&] {
          return weighted_sum(vlad_aggregate(assign, s, centers));
        }) < kFdTol<S>);
}

TEST_CASE("vlad_aggregate matches the naive residual sum") {
  std::mt19937 rng(29);
  const int w = 7, K = 3, c = 5;
  auto assign = rand_leaf<float>({w, K}, rng, 0.0, 1.0, false);
  auto s = rand_leaf<float>({w, c}, rng, -2.0, 2.0, false);
  auto centers = rand_leaf<float>({K, c}, rng, -2.0, 2.0, false);
  auto out = vlad_aggregate(assign, s, centers);
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < c; ++j) {
      double acc = 0.0;
      for (int i = 0; i < w; ++i) {
        acc += static_cast<double>(assign.data()[i * K + k]) *
               (static_cast<double>(s.data()[i * c + j]) - centers.data()[k * c + j]);
      }
      CHECK(std::abs(static_cast<double>(out.data()[k * c + j]) - acc) < 1e-6);
    }
  }
}

TEST_CASE("vlad_aggregate of columns sitting on a center is exactly zero") {
  const int w = 5, K = 2, c = 3;
  std::vector<float> center_data = {0.3f, -1.7f, 0.9f, 2.0f, 0.1f, -0.4f};
  auto centers = Tensor<float>::constant({K, c}, center_data);
  std::vector<float> sdata;
  for (int i = 0; i < w; ++i) sdata.insert(sdata.end(), center_data.begin(), center_data.begin() + c);
  auto s = Tensor<float>::constant({w, c}, sdata);
  auto assign = Tensor<float>::constant({w, K}, std::vector<float>(w * K, 0.5f));
  auto out = vlad_aggregate(assign, s, centers);
  // Cluster 0 residuals vanish identically; cluster 1's do not.
  for (int j = 0; j < c; ++j) CHECK(out.data()[j] == 0.0f);
  bool nonzero = false;
  for (int j = 0; j < c; ++j) nonzero |= out.data()[c + j] != 0.0f;
  CHECK(nonzero);
}

TEST_CASE("matmul matches the naive triple-loop oracle") {
  std::mt19937 rng(19);
  auto a = rand_leaf<float>({3, 4}, rng, -2.0, 2.0, false);
  auto b = rand_leaf<float>({4, 2}, rng, -2.0, 2.0, false);
  auto c = matmul(a, b);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) {
        acc += static_cast<double>(a.data()[i * 4 + k]) * b.data()[k * 2 + j];
      }
      CHECK(std::abs(static_cast<double>(c.data()[i * 2 + j]) - acc) < 1e-6);
    }
  }
}

TEST_CASE("matmul variants agree with the transpose composition") {
  std::mt19937 rng(20);
  auto a = rand_leaf<float>({5, 3}, rng, -1.0, 1.0, false);
  auto b = rand_leaf<float>({4, 3}, rng, -1.0, 1.0, false);
  auto nt = matmul_nt(a, b);
  auto ref = matmul(a, transpose2d(b));
  for (std::size_t i = 0; i < nt.numel(); ++i) {
    CHECK(std::abs(nt.data()[i] - ref.data()[i]) < 1e-5f);
  }
  auto c = rand_leaf<float>({5, 4}, rng, -1.0, 1.0, false);
  auto tn = matmul_tn(a, c);
  auto ref2 = matmul(transpose2d(a), c);
  for (std::size_t i = 0; i < tn.numel(); ++i) {
    CHECK(std::abs(tn.data()[i] - ref2.data()[i]) < 1e-5f);
  }
}

TEST_CASE("conv2d_valid matches a naive direct sum") {
  std::mt19937 rng(21);
  auto input = rand_leaf<float>({3, 7, 6}, rng, -1.0, 1.0, false);
  auto kernel = rand_leaf<float>({4, 3, 3, 2}, rng, -1.0, 1.0, false);
  const int sh = 2, sw = 1;
  auto out = conv2d_valid(input, kernel, sh, sw);
  REQUIRE(out.shape() == Shape{4, 3, 5});
  for (int co = 0; co < 4; ++co) {
    for (int ho = 0; ho < 3; ++ho) {
      for (int wo = 0; wo < 5; ++wo) {
        double acc = 0.0;
        for (int ci = 0; ci < 3; ++ci) {
          for (int dh = 0; dh < 3; ++dh) {
            for (int dw = 0; dw < 2; ++dw) {
              acc += static_cast<double>(
                         kernel.data()[((co * 3 + ci) * 3 + dh) * 2 + dw]) *
                     input.data()[(ci * 7 + ho * sh + dh) * 6 + wo * sw + dw];
            }
          }
        }
        CHECK(std::abs(static_cast<double>(out.data()[(co * 3 + ho) * 5 + wo]) - acc) <
              1e-5);
      }
    }
  }
}

TEST_CASE("conv2d_valid with a width-1 kernel commutes with column shifts bit-exactly") {
  std::mt19937 rng(22);
  const int C = 2, H = 8, W = 36;
  auto input = rand_leaf<float>({C, H, W}, rng, -1.0, 1.0, false);
  auto kernel = rand_leaf<float>({3, C, 3, 1}, rng, -1.0, 1.0, false);
  auto bias = rand_leaf<float>({3}, rng, -0.5, 0.5, false);

  auto base = add_channel_bias(conv2d_valid(input, kernel, 2, 1), bias);
  const int Ho = base.dim(1);
  for (int s : {1, 7, 18, 35}) {
    auto shifted_in = Tensor<float>::constant(
        {C, H, W}, column_shifted(input.data(), C, H, W, s));
    auto shifted_out = add_channel_bias(conv2d_valid(shifted_in, kernel, 2, 1), bias);
    auto expect = column_shifted(base.data(), 3, Ho, W, s);
    REQUIRE(shifted_out.numel() == expect.size());
    CHECK(std::memcmp(shifted_out.data().data(), expect.data(),
                      expect.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("conv2d_valid with an all-zeros kernel yields all-zeros output") {
  std::mt19937 rng(23);
  auto input = rand_leaf<float>({2, 5, 4}, rng, -1.0, 1.0, false);
  auto kernel = Tensor<float>::zeros({3, 2, 2, 1});
  auto out = conv2d_valid(input, kernel, 1, 1);
  for (float v : out.data()) CHECK(v == 0.0f);
}

TEST_CASE("softmax of a single-element axis is exactly one") {
  auto a = Tensor<float>::constant({3, 1}, {-7.5f, 0.0f, 123.0f});
  auto p = softmax_rows(a);
  for (float v : p.data()) CHECK(v == 1.0f);
}

TEST_CASE("softmax rows sum to one and ignore constant shifts") {
  std::mt19937 rng(24);
  auto a = rand_leaf<float>({4, 7}, rng, -3.0, 3.0, false);
  auto p = softmax_rows(a);
  for (int r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 7; ++c) sum += static_cast<double>(p.data()[r * 7 + c]);
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
  auto shifted = softmax_rows(add_scalar(a, 5.25f));
  for (std::size_t i = 0; i < p.numel(); ++i) {
    CHECK(std::abs(p.data()[i] - shifted.data()[i]) < 1e-6f);
  }
}

TEST_CASE("softmax stays finite on extreme inputs") {
  auto a = Tensor<float>::constant({1, 3}, {1e30f, -1e30f, 0.0f});
  auto p = softmax_rows(a);
  double sum = 0.0;
  for (float v : p.data()) {
    CHECK(std::isfinite(v));
    sum += v;
  }
  CHECK(std::abs(sum - 1.0) < 1e-6);
}

TEST_CASE("layer_norm of a constant vector is all zeros before the affine") {
  auto a = Tensor<float>::constant({2, 6}, std::vector<float>(12, 3.7f));
  auto y = layer_norm_rows(a);
  for (float v : y.data()) CHECK(v == 0.0f);
}

TEST_CASE("l2_normalize handles the zero vector via eps") {
  auto a = Tensor<float>::zeros({1, 4});
  auto y = l2_normalize_rows(a);
  for (float v : y.data()) {
    CHECK(std::isfinite(v));
    CHECK(v == 0.0f);
  }
  auto b = Tensor<float>::constant({1, 2}, {3.0f, 4.0f});
  auto yb = l2_normalize_rows(b);
  CHECK(yb.data()[0] == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(yb.data()[1] == doctest::Approx(0.8).epsilon(1e-6));
}

TEST_CASE("concat then split_cols is the identity") {
  std::mt19937 rng(25);
  auto a = rand_leaf<float>({3, 2}, rng, -1.0, 1.0, false);
  auto b = rand_leaf<float>({3, 2}, rng, -1.0, 1.0, false);
  auto joined = concat<float>({a, b}, 1);
  auto parts = split_cols(joined, 2);
  CHECK(std::memcmp(parts[0].data().data(), a.data().data(), a.numel() * 4) == 0);
  CHECK(std::memcmp(parts[1].data().data(), b.data().data(), b.numel() * 4) == 0);
}

TEST_CASE("sum gradients are the textbook ones") {
  std::mt19937 rng(26);
  auto x = rand_leaf<float>({5}, rng, -2.0, 2.0);
  auto loss = sum_all(x);
  backward(loss);
  for (float g : x.grad()) CHECK(g == 1.0f);

  auto loss2 = sum_all(mul(x, x));
  backward(loss2);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(std::abs(x.grad()[i] - 2.0f * x.data()[i]) < 1e-6f);
  }
}

TEST_CASE("gradients accumulate across reuse of the same tensor") {
  auto x = Tensor<float>::leaf({2}, {1.5f, -0.5f}, true);
  auto y = add(x, x);
  auto loss = sum_all(add(y, x));
  backward(loss);
  for (float g : x.grad()) CHECK(g == 3.0f);
}

TEST_CASE("repeated backward passes do not accumulate stale gradients") {
  auto x = Tensor<float>::leaf({3}, {1.0f, 2.0f, 3.0f}, true);
  auto loss = sum_all(mul(x, x));
  backward(loss);
  const auto first = x.grad();
  backward(loss);
  CHECK(x.grad() == first);
}

TEST_CASE("shape mismatches name the op and both shapes") {
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({4, 5});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[4,5]"), std::invalid_argument);
  CHECK_THROWS_AS(reshape(a, {7}), std::invalid_argument);
  CHECK_THROWS_AS(split_cols(a, 2), std::invalid_argument);
  CHECK_THROWS_AS(conv2d_valid(a, b, 1, 1), std::invalid_argument);
}

TEST_CASE("backward rejects detached and non-scalar tensors") {
  auto c = Tensor<float>::constant({1}, {2.0f});
  auto y = mul_scalar(c, 3.0f);
  CHECK_THROWS_AS(backward(y), std::invalid_argument);

  auto x = Tensor<float>::leaf({2, 2}, {1, 2, 3, 4}, true);
  auto z = mul(x, x);
  CHECK_THROWS_AS(backward(z), std::invalid_argument);
}

TEST_CASE("forward passes are deterministic across runs") {
  auto run = [] {
    std::mt19937 rng(27);
    auto a = rand_leaf<float>({8, 9}, rng, -1.0, 1.0, false);
    auto b = rand_leaf<float>({9, 7}, rng, -1.0, 1.0, false);
    auto y = l2_normalize_rows(softmax_rows(matmul(a, b)));
    return y.data();
  };
  CHECK(run() == run());
}
