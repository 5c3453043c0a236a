#include "rivlpr/loss.hpp"

#include <algorithm>
#include <cmath>

namespace rivlpr {

void LossConfig::validate() const {
  require(tau_l > 0.0 && tau_g > 0.0, "loss: temperatures must be positive");
  require(truncation >= 1, "loss: truncation must be >= 1");
  require(lambda_mix >= 0.0, "loss: lambda_mix must be >= 0");
}

namespace {

struct Normalized {
  Mat unit;
  Vec norm;
};

Normalized normalize_rows(const Mat& f) {
  Normalized out{f, f.rowwise().norm()};
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    if (out.norm[i] > 0.0) out.unit.row(i) /= out.norm[i];
  }
  return out;
}

void check_row(const Normalized& n, int i, const char* side) {
  require(i >= 0 && i < n.unit.rows(), std::string("patch_infonce: index out of range in ") + side);
  require(n.norm[i] > 0.0 && std::isfinite(n.norm[i]),
          std::string("patch_infonce: zero or non-finite feature vector in ") + side);
}

// dL/da from dL/d(a/|a|).
Mat unnormalize_grad(const Mat& grad_unit, const Normalized& n) {
  Mat g = Mat::Zero(grad_unit.rows(), grad_unit.cols());
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    if (n.norm[i] == 0.0) continue;
    const double proj = grad_unit.row(i).dot(n.unit.row(i));
    g.row(i) = (grad_unit.row(i) - proj * n.unit.row(i)) / n.norm[i];
  }
  return g;
}

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

LossValue patch_infonce(const Mat& f1, const Mat& f2, const PatchPairSet& pairs, double tau_l) {
  require(tau_l > 0.0, "patch_infonce: tau_l must be positive");
  require(!pairs.positives.empty(), "patch_infonce: no positive pairs");
  require(f1.cols() == f2.cols(), "patch_infonce: feature widths differ");
  require(f1.allFinite() && f2.allFinite(), "patch_infonce: non-finite features");
  const std::size_t np = pairs.positives.size();
  require(pairs.negatives_a.size() == np && pairs.negatives_b.size() == np,
          "patch_infonce: negative lists do not match positives");

  const Normalized n1 = normalize_rows(f1);
  const Normalized n2 = normalize_rows(f2);
  Mat g1 = Mat::Zero(f1.rows(), f1.cols());
  Mat g2 = Mat::Zero(f2.rows(), f2.cols());
  const double scale = 1.0 / (static_cast<double>(np) * tau_l);

  double total = 0.0;
  std::vector<double> logits;
  for (std::size_t k = 0; k < np; ++k) {
    const int p1 = pairs.positives[k].a;
    const int p2 = pairs.positives[k].b;
    const auto& neg_b = pairs.negatives_b[k];  // rows of F2, compared with F1[p1]
    const auto& neg_a = pairs.negatives_a[k];  // rows of F1, compared with F2[p2]
    require(!neg_a.empty() || !neg_b.empty(), "patch_infonce: positive without negatives");
    check_row(n1, p1, "F1");
    check_row(n2, p2, "F2");

    logits.clear();
    logits.push_back(n1.unit.row(p1).dot(n2.unit.row(p2)) / tau_l);
    for (int n : neg_b) {
      check_row(n2, n, "F2");
      logits.push_back(n1.unit.row(p1).dot(n2.unit.row(n)) / tau_l);
    }
    for (int n : neg_a) {
      check_row(n1, n, "F1");
      logits.push_back(n2.unit.row(p2).dot(n1.unit.row(n)) / tau_l);
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - top);
    const double lse = top + std::log(z);
    total += lse - logits[0];

    // softmax - onehot, scaled by d(logit)/d(cos) and the 1/|P| mean
    auto weight = [&](std::size_t j) { return (std::exp(logits[j] - lse) - (j == 0 ? 1.0 : 0.0)) * scale; };
    double w = weight(0);
    g1.row(p1) += w * n2.unit.row(p2);
    g2.row(p2) += w * n1.unit.row(p1);
    std::size_t j = 1;
    for (int n : neg_b) {
      w = weight(j++);
      g1.row(p1) += w * n2.unit.row(n);
      g2.row(n) += w * n1.unit.row(p1);
    }
    for (int n : neg_a) {
      w = weight(j++);
      g2.row(p2) += w * n1.unit.row(n);
      g1.row(n) += w * n2.unit.row(p2);
    }
  }

  LossValue out;
  out.value = total / static_cast<double>(np);
  out.gradients = {unnormalize_grad(g1, n1), unnormalize_grad(g2, n2)};
  return out;
}

LossValue tsap(const Mat& descriptors, const std::vector<std::vector<int>>& positives_of,
               const std::vector<std::vector<int>>& ignored_of, double tau_g, int truncation) {
  const int b = static_cast<int>(descriptors.rows());
  require(tau_g > 0.0, "tsap: tau_g must be positive");
  require(truncation >= 1, "tsap: truncation must be >= 1");
  require(b >= 2, "tsap: batch needs at least two descriptors");
  require(static_cast<int>(positives_of.size()) == b, "tsap: positives_of must have one entry per descriptor");
  require(ignored_of.empty() || static_cast<int>(ignored_of.size()) == b,
          "tsap: ignored_of must be empty or have one entry per descriptor");
  require(descriptors.allFinite(), "tsap: non-finite descriptors");

  Mat grad = Mat::Zero(descriptors.rows(), descriptors.cols());
  LossValue out;
  double total = 0.0;
  int used = 0;
  std::vector<double> dist(b);
  std::vector<double> ddist(b);  // dL/d(d_qj)
  std::vector<char> positive(b), in_top(b), skip(b);
  std::vector<int> order;

  for (int q = 0; q < b; ++q) {
    std::fill(positive.begin(), positive.end(), 0);
    std::fill(in_top.begin(), in_top.end(), 0);
    std::fill(skip.begin(), skip.end(), 0);
    skip[q] = 1;
    if (!ignored_of.empty()) {
      for (int j : ignored_of[q]) {
        require(j >= 0 && j < b, "tsap: ignored index out of range");
        skip[j] = 1;
      }
    }
    std::vector<int> pos;
    for (int j : positives_of[q]) {
      require(j >= 0 && j < b, "tsap: positive index out of range");
      if (j == q || positive[j]) continue;
      positive[j] = 1;
      skip[j] = 0;
      pos.push_back(j);
    }
    if (pos.empty()) {
      ++out.excluded;
      continue;
    }
    ++used;

    order.clear();
    for (int j = 0; j < b; ++j) {
      dist[j] = (descriptors.row(q) - descriptors.row(j)).norm();
      ddist[j] = 0.0;
      if (!skip[j]) order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return dist[x] < dist[y]; });
    for (std::size_t t = 0; t < order.size() && t < static_cast<std::size_t>(truncation); ++t) in_top[order[t]] = 1;

    double ap = 0.0;
    const double inv = 1.0 / static_cast<double>(pos.size());
    for (int i : pos) {
      double num = 1.0, den = 1.0;
      for (int j = 0; j < b; ++j) {
        if (j == i || !in_top[j]) continue;
        const double h = sigmoid((dist[i] - dist[j]) / tau_g);
        den += h;
        if (positive[j]) num += h;
      }
      ap += inv * num / den;
      const double a = inv / den;
      const double c = -inv * num / (den * den);
      for (int j = 0; j < b; ++j) {
        if (j == i || !in_top[j]) continue;
        const double h = sigmoid((dist[i] - dist[j]) / tau_g);
        const double dh = h * (1.0 - h) / tau_g;
        const double coef = (positive[j] ? a : 0.0) + c;
        // d(AP)/d(dist_i) += coef*dh, d(AP)/d(dist_j) -= coef*dh; loss is 1 - AP
        ddist[i] -= coef * dh;
        ddist[j] += coef * dh;
      }
    }
    total += 1.0 - ap;
    for (int j = 0; j < b; ++j) {
      if (ddist[j] == 0.0 || dist[j] == 0.0) continue;
      const Eigen::RowVectorXd dir = (descriptors.row(q) - descriptors.row(j)) / dist[j];
      grad.row(q) += ddist[j] * dir;
      grad.row(j) -= ddist[j] * dir;
    }
  }
  if (used > 0) {
    out.value = total / used;
    grad /= used;
  }
  out.gradients = {std::move(grad)};
  return out;
}

LossValue combined_loss(const LossValue& lp, const LossValue& lt, double lambda_mix) {
  require(std::isfinite(lp.value) && std::isfinite(lt.value), "combined_loss: non-finite input");
  require(lambda_mix >= 0.0, "combined_loss: lambda_mix must be >= 0");
  LossValue out;
  out.value = lp.value + lambda_mix * lt.value;
  out.excluded = lt.excluded;
  if (lt.gradients.empty()) {
    out.gradients = lp.gradients;
  } else if (lp.gradients.empty()) {
    for (const Mat& g : lt.gradients) out.gradients.push_back(lambda_mix * g);
  } else {
    require(lp.gradients.size() == lt.gradients.size(), "combined_loss: gradient lists differ in length");
    for (std::size_t i = 0; i < lp.gradients.size(); ++i) {
      require(lp.gradients[i].rows() == lt.gradients[i].rows() && lp.gradients[i].cols() == lt.gradients[i].cols(),
              "combined_loss: gradient shapes differ");
      out.gradients.push_back(lp.gradients[i] + lambda_mix * lt.gradients[i]);
    }
  }
  return out;
}

}  // namespace rivlpr
