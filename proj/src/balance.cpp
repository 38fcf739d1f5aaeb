#include "itfr/balance.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace itfr {

GroupWeights GroupWeights::uniform(int cell_count, double eta) {
  GroupWeights gw;
  gw.w.assign(static_cast<std::size_t>(cell_count), 1.0 / static_cast<double>(cell_count));
  gw.eta = eta;
  return gw;
}

double GroupWeights::sum() const {
  double s = 0.0;
  for (double x : w) s += x;
  return s;
}

double pairwise_contribution(const SparseGradient& grad_pq, double grad_norm, double lhat_pq,
                             std::span<const double> accum_ab, double accum_norm, double lbar_ab,
                             double alpha) {
  if (grad_norm <= 1e-12 || accum_norm <= 1e-12) return 0.0;
  double cosine = grad_pq.dot_dense(accum_ab) / (grad_norm * accum_norm);
  cosine = std::clamp(cosine, -1.0, 1.0);
  return alpha * std::sqrt(lhat_pq) * std::sqrt(lbar_ab) * cosine;
}

double pairwise_contribution(const SparseGradient& grad_pq, double lhat_pq,
                             std::span<const double> accum_ab, double lbar_ab, double alpha) {
  double accum_sq = 0.0;
  for (double v : accum_ab) accum_sq += v * v;
  return pairwise_contribution(grad_pq, grad_pq.norm(), lhat_pq, accum_ab, std::sqrt(accum_sq),
                               lbar_ab, alpha);
}

std::vector<double> beta_weights(std::span<const double> losses, double gamma) {
  std::vector<double> beta(losses.size(), 0.0);
  int defined = 0;
  double denom = 0.0;
  for (std::size_t g = 0; g < losses.size(); ++g) {
    if (is_absent(losses[g])) continue;
    ++defined;
    beta[g] = std::pow(losses[g], gamma);  // pow(0, 0) = 1 keeps gamma=0 uniform
    denom += beta[g];
  }
  if (defined == 0) throw UsageError("beta_weights: no defined losses");
  if (denom <= 0.0) {
    std::cerr << "[itfr] all group losses zero; falling back to uniform beta\n";
    const double u = 1.0 / defined;
    for (std::size_t g = 0; g < losses.size(); ++g) beta[g] = is_absent(losses[g]) ? 0.0 : u;
    return beta;
  }
  for (double& b : beta) b /= denom;
  return beta;
}

ContributionVector total_contributions(const BatchGroupResults& batch,
                                       const EpochGradientAccumulator& acc,
                                       const BalanceConfig& cfg) {
  if (!acc.has_last_epoch()) throw UsageError("total_contributions requires a completed epoch");
  const int cells = batch.cell_count();

  std::vector<double> target_losses(cells);
  for (int g = 0; g < cells; ++g) {
    target_losses[g] = cfg.beta_from_plain_losses ? acc.last_mean_plain_loss(g)
                                                  : acc.last_mean_sharp_loss(g);
  }
  const std::vector<double> beta = beta_weights(target_losses, cfg.gamma);

  ContributionVector out;
  out.total.assign(cells, 0.0);
  for (int g = 0; g < cells; ++g) {
    const GroupLossResult& cell = batch.cells[g];
    if (!cell.present) continue;
    const double grad_norm = cell.grad.norm();
    double total = 0.0;
    for (int ab = 0; ab < cells; ++ab) {
      if (beta[ab] == 0.0 || is_absent(target_losses[ab])) continue;
      total += beta[ab] * pairwise_contribution(cell.grad, grad_norm, cell.sharp_loss,
                                                acc.last_grad(ab), acc.last_grad_norm(ab),
                                                target_losses[ab], cfg.alpha);
    }
    out.total[g] = total;
  }
  return out;
}

namespace {

// w_g <- w_g * exp(e_g - max e) / Z for cells with an exponent; absent cells
// use exponent 0 (their raw mass is kept). When every shifted exponent is
// exactly zero the update is the identity and the weights are left untouched.
void exponentiated_update(std::vector<double>& w, const std::vector<double>& exponents) {
  double max_e = -std::numeric_limits<double>::infinity();
  for (double e : exponents) max_e = std::max(max_e, e);

  bool all_equal = true;
  for (double e : exponents) {
    if (e != max_e) {
      all_equal = false;
      break;
    }
  }
  if (all_equal) return;  // all multipliers would be exactly 1

  double z = 0.0;
  for (std::size_t g = 0; g < w.size(); ++g) {
    w[g] *= std::exp(exponents[g] - max_e);
    z += w[g];
  }
  if (z <= 0.0) throw NumericalError("weight update collapsed to zero mass");
  for (double& x : w) x /= z;
}

}  // namespace

void update_weights(GroupWeights& weights, const ContributionVector& contributions,
                    const std::vector<bool>& present) {
  std::vector<double> exponents(weights.w.size(), 0.0);
  for (std::size_t g = 0; g < weights.w.size(); ++g) {
    if (present[g]) exponents[g] = weights.eta * contributions.total[g];
  }
  exponentiated_update(weights.w, exponents);
}

void groupdro_update(GroupWeights& weights, std::span<const double> losses) {
  std::vector<double> exponents(weights.w.size(), 0.0);
  for (std::size_t g = 0; g < weights.w.size(); ++g) {
    if (!is_absent(losses[g])) exponents[g] = weights.eta * losses[g];
  }
  exponentiated_update(weights.w, exponents);
}

double combine_losses(const GroupWeights& weights, std::span<const double> losses,
                      const std::vector<bool>& present) {
  double mass = 0.0;
  for (std::size_t g = 0; g < weights.w.size(); ++g)
    if (present[g]) mass += weights.w[g];
  if (mass <= 0.0) throw UsageError("empty batch");
  double total = 0.0;
  for (std::size_t g = 0; g < weights.w.size(); ++g)
    if (present[g]) total += (weights.w[g] / mass) * losses[g];
  return total;
}

}  // namespace itfr
