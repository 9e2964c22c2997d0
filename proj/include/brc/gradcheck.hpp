// Finite-difference check of the analytic BPTT gradient.
#pragma once

#include "brc/training.hpp"

#include <string>

namespace brc {

struct GradCheckOptions {
  double eps = 1e-5;         // central-difference step
  double abs_floor = 1e-8;   // discrepancies at or below this count as exact
};

struct GradCheckResult {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::string worst;  // "<tensor>(i,j)" of the largest relative error
  Index checked = 0;
};

/// Relative discrepancy |a - n| / max(|a|, |n|), or 0 when |a - n| <= floor.
inline double gradient_discrepancy(double analytic, double numeric, double abs_floor) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= abs_floor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

/// Compares batch_gradient against central differences of the batch loss
/// for every scalar parameter.
template <typename Scalar>
GradCheckResult grad_check(const Network<Scalar>& net, const SequenceBatch<Scalar>& batch, LossKind kind,
                           const GradCheckOptions& opt = {}) {
  const auto analytic = batch_gradient(net, batch, kind).grads;
  const auto grad_views = tensor_views(analytic);
  Network<Scalar> probe = net;
  auto views = tensor_views(probe);
  auto loss_at = [&] { return double(batch_loss(predict_batch(probe, batch.inputs), batch, kind).value); };

  GradCheckResult result;
  for (std::size_t k = 0; k < views.size(); ++k) {
    auto p = views[k].map();
    const auto g = grad_views[k].map();
    for (Index i = 0; i < p.rows(); ++i)
      for (Index j = 0; j < p.cols(); ++j) {
        const Scalar saved = p(i, j);
        p(i, j) = saved + Scalar(opt.eps);
        const double up = loss_at();
        p(i, j) = saved - Scalar(opt.eps);
        const double down = loss_at();
        p(i, j) = saved;
        const double numeric = (up - down) / (2 * opt.eps);
        const double a = double(g(i, j));
        const double rel = gradient_discrepancy(a, numeric, opt.abs_floor);
        result.max_abs_error = std::max(result.max_abs_error, std::abs(a - numeric));
        if (rel > result.max_rel_error || result.worst.empty()) {
          if (rel >= result.max_rel_error)
            result.worst = views[k].name + "(" + std::to_string(i) + "," + std::to_string(j) + ")";
          result.max_rel_error = std::max(result.max_rel_error, rel);
        }
        ++result.checked;
      }
  }
  return result;
}

}  // namespace brc
