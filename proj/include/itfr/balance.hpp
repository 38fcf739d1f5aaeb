#pragma once

#include <span>
#include <vector>

#include "itfr/group_loss.hpp"

namespace itfr {

// Simplex-constrained per-cell training weights.
struct GroupWeights {
  std::vector<double> w;
  double eta = 0.0;

  static GroupWeights uniform(int cell_count, double eta);
  double sum() const;
};

struct BalanceConfig {
  double gamma = 1.0;
  double alpha = 1.0;  // redundant with eta; kept fixed
  double eta = 0.03;
  double rho = 0.04;
  bool beta_from_plain_losses = false;  // beta on plain-loss means instead of sharpness-aware
};

struct ContributionVector {
  std::vector<double> total;  // zero for cells absent from the batch
};

// Scaled gradient alignment between a batch cell's sparse gradient and a
// frozen per-cell accumulator: alpha * sqrt(lhat) * sqrt(lbar) * cos(g, accum).
// Zero when either vector has norm <= 1e-12.
double pairwise_contribution(const SparseGradient& grad_pq, double lhat_pq,
                             std::span<const double> accum_ab, double lbar_ab, double alpha);
// Variant with precomputed norms so per-epoch constants are not recomputed.
double pairwise_contribution(const SparseGradient& grad_pq, double grad_norm, double lhat_pq,
                             std::span<const double> accum_ab, double accum_norm, double lbar_ab,
                             double alpha);

// Loss-skewed mixture weights (losses^gamma, normalized). NaN entries mark
// absent groups and get beta = 0; gamma = 0 is uniform over defined groups.
std::vector<double> beta_weights(std::span<const double> losses, double gamma);

// Total contribution per present cell: sum over target cells of
// beta_ab * pairwise(grad_pq -> accum_ab), with beta and the target losses
// taken from the previous epoch's running means.
ContributionVector total_contributions(const BatchGroupResults& batch,
                                       const EpochGradientAccumulator& acc,
                                       const BalanceConfig& cfg);

// Multiplicative exponentiated update over present cells; absent cells keep
// their raw mass, then everything is renormalized. Shift-invariant in the
// exponents (max is subtracted), and an exact no-op when all effective
// exponents coincide.
void update_weights(GroupWeights& weights, const ContributionVector& contributions,
                    const std::vector<bool>& present);

// Same update driven directly by per-group losses (NaN = absent).
void groupdro_update(GroupWeights& weights, std::span<const double> losses);

// Weighted batch loss with the weights renormalized over present groups.
double combine_losses(const GroupWeights& weights, std::span<const double> losses,
                      const std::vector<bool>& present);

}  // namespace itfr
