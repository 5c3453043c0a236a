#pragma once

#include <vector>

#include "rivlpr/common.hpp"
#include "rivlpr/mining.hpp"

namespace rivlpr {

struct LossConfig {
  double tau_l = 0.2;
  double tau_g = 0.01;
  int truncation = 4;
  double lambda_mix = 2.0;

  void validate() const;
};

struct LossValue {
  double value = 0.0;
  std::vector<Mat> gradients;  // one per differentiable input, same shape
  int excluded = 0;            // tsap: queries skipped for lack of positives
};

/// Contrastive loss over mined patch pairs. For positive (p1, p2) the negatives are
/// cos(F1[p1], F2[n]) for n in negatives_b and cos(F2[p2], F1[n]) for n in negatives_a.
/// Gradients: {dL/dF1, dL/dF2}.
LossValue patch_infonce(const Mat& f1, const Mat& f2, const PatchPairSet& pairs, double tau_l);

/// Truncated smooth average precision over a batch of descriptors (one per row).
/// positives_of[q] lists the batch rows matching q; ignored_of[q] lists rows that
/// are neither positive nor negative (may be empty). Gradient: {dL/dD}.
LossValue tsap(const Mat& descriptors, const std::vector<std::vector<int>>& positives_of,
               const std::vector<std::vector<int>>& ignored_of, double tau_g, int truncation);

/// lp + lambda * lt; gradient lists are summed elementwise when both are present.
LossValue combined_loss(const LossValue& lp, const LossValue& lt, double lambda_mix);

}  // namespace rivlpr
