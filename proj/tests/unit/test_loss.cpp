#include <doctest.h>

#include <cmath>

#include "../oracles/oracles.hpp"
#include "helpers.hpp"
#include "rivlpr/loss.hpp"

using namespace rivlpr;

namespace {

Mat random_mat(Rng& rng, int r, int c) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1, 1);
  return m;
}

PatchPairSet random_pairs(Rng& rng, int n1, int n2) {
  PatchPairSet p;
  const int k = static_cast<int>(rng.integer(1, 3));
  for (int i = 0; i < k; ++i) {
    p.positives.push_back({static_cast<int>(rng.integer(0, n1 - 1)), static_cast<int>(rng.integer(0, n2 - 1))});
    std::vector<int> na, nb;
    for (int j = 0; j < 3; ++j) {
      na.push_back(static_cast<int>(rng.integer(0, n1 - 1)));
      nb.push_back(static_cast<int>(rng.integer(0, n2 - 1)));
    }
    p.negatives_a.push_back(na);
    p.negatives_b.push_back(nb);
  }
  return p;
}

template <typename F>
double max_rel_error(Mat& x, const Mat& analytic, F&& f) {
  double worst = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + 1e-5;
    const double up = f();
    x.data()[i] = keep - 1e-5;
    const double down = f();
    x.data()[i] = keep;
    const double fd = (up - down) / 2e-5;
    const double a = analytic.data()[i];
    worst = std::max(worst, std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-3}));
  }
  return worst;
}

}  // namespace

TEST_CASE("infonce closed forms") {
  Mat f1(1, 2), f2(2, 2);
  f1 << 1, 0;
  f2 << 0, 1, 0, -1;  // s_p = s_n = 0
  PatchPairSet p;
  p.positives = {{0, 0}};
  p.negatives_a = {{}};
  p.negatives_b = {{1}};
  CHECK(std::abs(patch_infonce(f1, f2, p, 0.2).value - std::log(2.0)) < 1e-9);

  f2 << 1, 0, -1, 0;  // s_p = 1, s_n = -1
  CHECK(std::abs(patch_infonce(f1, f2, p, 0.2).value - std::log1p(std::exp(-10.0))) < 1e-9);

  // two positives: mean of the per-pair values
  Mat g1(2, 2), g2(3, 2);
  g1 << 1, 0, 0, 1;
  g2 << 1, 0, 0.6, 0.8, -1, 0;
  PatchPairSet two;
  two.positives = {{0, 0}, {1, 1}};
  two.negatives_a = {{}, {}};
  two.negatives_b = {{2}, {2}};
  PatchPairSet first = two, second = two;
  first.positives = {{0, 0}};
  first.negatives_a = {{}};
  first.negatives_b = {{2}};
  second.positives = {{1, 1}};
  second.negatives_a = {{}};
  second.negatives_b = {{2}};
  const double mean = 0.5 * (patch_infonce(g1, g2, first, 0.2).value + patch_infonce(g1, g2, second, 0.2).value);
  CHECK(patch_infonce(g1, g2, two, 0.2).value == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("infonce matches the oracle and is scale invariant") {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    Mat f1 = random_mat(rng, 6, 4), f2 = random_mat(rng, 5, 4);
    auto pairs = random_pairs(rng, 6, 5);
    const double v = patch_infonce(f1, f2, pairs, 0.2).value;
    CHECK(v == doctest::Approx(oracle::infonce(f1, f2, pairs, 0.2)).epsilon(1e-10));
    CHECK(v >= 0);
    Mat scaled = f1;
    scaled.row(static_cast<int>(rng.integer(0, 5))) *= rng.uniform(0.1, 10);
    CHECK(std::abs(patch_infonce(scaled, f2, pairs, 0.2).value - v) < 1e-9);
  }
}

TEST_CASE("infonce falls as the positive similarity rises") {
  Mat f1(1, 2), f2(2, 2);
  PatchPairSet p;
  p.positives = {{0, 0}};
  p.negatives_a = {{}};
  p.negatives_b = {{1}};
  f1 << 1, 0;
  double last = INFINITY;
  for (double angle = 3.0; angle >= 0; angle -= 0.25) {
    f2 << std::cos(angle), std::sin(angle), 0, 1;
    const double v = patch_infonce(f1, f2, p, 0.2).value;
    CHECK(v < last);
    last = v;
  }
}

TEST_CASE("infonce gradient") {
  Rng rng(2);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    Mat f1 = random_mat(rng, 5, 3), f2 = random_mat(rng, 4, 3);
    auto pairs = random_pairs(rng, 5, 4);
    auto lv = patch_infonce(f1, f2, pairs, 0.2);
    auto f = [&] { return patch_infonce(f1, f2, pairs, 0.2).value; };
    worst = std::max(worst, max_rel_error(f1, lv.gradients[0], f));
    worst = std::max(worst, max_rel_error(f2, lv.gradients[1], f));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("infonce input errors") {
  Mat f1 = Mat::Zero(2, 2), f2 = Mat::Ones(2, 2);
  PatchPairSet p;
  p.positives = {{0, 0}};
  p.negatives_a = {{1}};
  p.negatives_b = {{1}};
  CHECK_THROWS_AS(patch_infonce(f1, f2, p, 0.2), Error);
  p.negatives_a = {{}};
  p.negatives_b = {{}};
  CHECK_THROWS_AS(patch_infonce(Mat::Ones(2, 2), f2, p, 0.2), Error);
}

TEST_CASE("tsap point values") {
  Mat d(2, 3);
  d << 1, 0, 0, 0, 1, 0;
  auto v = tsap(d, {{1}, {}}, {}, 0.01, 4);
  CHECK(std::abs(v.value) < 1e-12);
  CHECK(v.excluded == 1);

  // query at origin, positive at 0.1, negative at 0.9
  Mat e(3, 1);
  e << 0, 0.1, 0.9;
  auto w = tsap(e, {{1}, {}, {}}, {}, 0.01, 4);
  const double h = 1.0 / (1.0 + std::exp(80.0));
  CHECK(w.value == doctest::Approx(1.0 - 1.0 / (1.0 + h)).epsilon(1e-12));
  CHECK(w.value == doctest::Approx(oracle::tsap(e, {{1}, {}, {}}, {}, 0.01, 4)).epsilon(1e-12));
}

TEST_CASE("tsap matches the oracle") {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const int b = static_cast<int>(rng.integer(2, 8));
    Mat d = random_mat(rng, b, 4);
    std::vector<std::vector<int>> pos(b), ign(b);
    for (int q = 0; q < b; ++q)
      for (int j = 0; j < b; ++j) {
        if (j == q) continue;
        const double r = rng.uniform();
        if (r < 0.3) pos[q].push_back(j);
        else if (r < 0.45) ign[q].push_back(j);
      }
    const int trunc = static_cast<int>(rng.integer(1, 5));
    const double tau = rng.uniform(0.05, 0.5);
    auto v = tsap(d, pos, ign, tau, trunc);
    CHECK(v.value == doctest::Approx(oracle::tsap(d, pos, ign, tau, trunc)).epsilon(1e-12));
    CHECK(v.value >= 0);
    CHECK(v.value <= 1);
  }
}

TEST_CASE("tsap gradient") {
  Rng rng(4);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const int b = static_cast<int>(rng.integer(3, 6));
    Mat d = random_mat(rng, b, 3);
    std::vector<std::vector<int>> pos(b), ign(b);
    for (int q = 0; q < b; ++q) {
      pos[q].push_back((q + 1) % b);
      if (rng.uniform() < 0.5) ign[q].push_back((q + 2) % b);
    }
    auto v = tsap(d, pos, ign, 0.2, 2);
    worst = std::max(worst, max_rel_error(d, v.gradients[0], [&] { return tsap(d, pos, ign, 0.2, 2).value; }));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("tsap ignores order beyond the truncation") {
  Mat d(6, 1);
  d << 0, 0.1, 0.2, 0.3, 5.0, 6.0;
  std::vector<std::vector<int>> pos = {{1}, {}, {}, {}, {}, {}};
  Mat swapped = d;
  swapped(4, 0) = 6.0;
  swapped(5, 0) = 5.0;
  CHECK(tsap(d, pos, {}, 0.1, 3).value == tsap(swapped, pos, {}, 0.1, 3).value);
}

TEST_CASE("tsap saturates near zero with a clear margin") {
  Mat d(4, 1);
  d << 0, 0.01, 3, 4;
  auto v = tsap(d, {{1}, {0}, {3}, {2}}, {}, 0.01, 4);
  CHECK(v.value <= 1e-6);
}

TEST_CASE("combined loss") {
  LossValue lp{0.5, {Mat::Ones(2, 2)}, 0};
  LossValue lt{0.25, {Mat::Constant(2, 2, 3.0)}, 0};
  auto c = combined_loss(lp, lt, 2.0);
  CHECK(c.value == 1.0);
  CHECK(c.gradients[0] == Mat::Constant(2, 2, 7.0));
  CHECK(combined_loss(lp, lt, 0.0).value == 0.5);
}
