#pragma once

#include <vector>

#include "itfr/dataset.hpp"
#include "itfr/model.hpp"

namespace itfr {

// P x Q table of group utilities. Cells with no eligible user are NaN and
// excluded from every aggregate.
struct UtilityMatrix {
  int user_group_count = 0;
  int item_group_count = 0;
  int k = 0;
  std::vector<double> values;            // row-major P x Q, NaN = undefined
  std::vector<int> eligible_user_counts; // row-major P x Q

  double value(int p, int q) const { return values[p * item_group_count + q]; }
  int eligible(int p, int q) const { return eligible_user_counts[p * item_group_count + q]; }
  int defined_cell_count() const;
};

struct AccuracyReport {
  double precision = 0.0;
  double recall = 0.0;
  double ndcg = 0.0;
  int evaluated_users = 0;
};

struct FairnessReport {
  double cv = 0.0;
  double min_frac = 0.0;  // mean utility of the worst ceil(25%) cells
  double ucv = 0.0;       // mean per-item-group CV across user groups
  double icv = 0.0;       // mean per-user-group CV across item groups
  AccuracyReport accuracy;
  UtilityMatrix utility;
};

// Top-K unmasked items by score, descending; ties broken by ascending item
// index. Returns fewer than K items when the unmasked catalog is smaller.
std::vector<int> recommend_topk(const EmbeddingTable& table, int user, int k,
                                const std::vector<int>& masked_items);

// Group-restricted recall aggregated per cell over eligible users. A user is
// eligible for (p, q) when they have at least one eval positive in item
// group q; others contribute to neither numerator nor denominator.
UtilityMatrix itg_utility(const std::vector<std::vector<int>>& lists,
                          const UserItems& eval_positives, const InteractionDataset& ds, int k);

// CV / MIN / UCV / ICV over the defined cells (population standard deviation).
FairnessReport fairness_report(const UtilityMatrix& util);

// Precision/recall/NDCG@K averaged over users with at least one eval positive.
AccuracyReport accuracy_report(const std::vector<std::vector<int>>& lists,
                               const UserItems& eval_positives, int k);

// Full evaluation: per-user masked top-K lists (parallel over users),
// utilities, fairness and accuracy in one pass.
FairnessReport evaluate(const EmbeddingTable& table, const InteractionDataset& ds,
                        const std::vector<Interaction>& eval_set,
                        const std::vector<Interaction>& mask_set, int k);

}  // namespace itfr
