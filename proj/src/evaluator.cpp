#include "itfr/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <thread>

namespace itfr {

namespace {

struct PerUserStats {
  bool evaluated = false;
  double precision = 0.0;
  double recall = 0.0;
  double ndcg = 0.0;
  // Per item group: hits within the list and eval-positive counts.
  std::vector<int> group_hits;
  std::vector<int> group_positives;
};

double population_cv(const std::vector<double>& xs) {
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  if (mean == 0.0) return absent();
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= xs.size();
  return std::sqrt(var) / mean;
}

std::vector<int> topk_from_scores(const std::vector<double>& scores,
                                  const std::vector<char>& masked, int k) {
  std::vector<int> candidates;
  candidates.reserve(scores.size());
  for (int i = 0; i < static_cast<int>(scores.size()); ++i)
    if (!masked[i]) candidates.push_back(i);
  const auto cmp = [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  if (static_cast<int>(candidates.size()) > k) {
    std::partial_sort(candidates.begin(), candidates.begin() + k, candidates.end(), cmp);
    candidates.resize(k);
  } else {
    std::sort(candidates.begin(), candidates.end(), cmp);
  }
  return candidates;
}

}  // namespace

int UtilityMatrix::defined_cell_count() const {
  int n = 0;
  for (double v : values)
    if (!is_absent(v)) ++n;
  return n;
}

std::vector<int> recommend_topk(const EmbeddingTable& table, int user, int k,
                                const std::vector<int>& masked_items) {
  if (k < 1) throw UsageError("k must be >= 1");
  std::vector<char> masked(table.item_count, 0);
  for (int i : masked_items) masked[i] = 1;
  std::vector<double> scores(table.item_count);
  for (int i = 0; i < table.item_count; ++i) {
    if (!masked[i]) scores[i] = score(table, user, i);
  }
  return topk_from_scores(scores, masked, k);
}

UtilityMatrix itg_utility(const std::vector<std::vector<int>>& lists,
                          const UserItems& eval_positives, const InteractionDataset& ds, int k) {
  const int P = ds.user_group_count;
  const int Q = ds.item_group_count;
  UtilityMatrix util;
  util.user_group_count = P;
  util.item_group_count = Q;
  util.k = k;
  util.values.assign(static_cast<std::size_t>(P) * Q, 0.0);
  util.eligible_user_counts.assign(static_cast<std::size_t>(P) * Q, 0);

  std::vector<char> in_list(ds.item_count, 0);
  std::vector<int> hits(Q), positives(Q);
  for (int u = 0; u < ds.user_count; ++u) {
    const auto& pos = eval_positives.items[u];
    if (pos.empty()) continue;
    std::fill(hits.begin(), hits.end(), 0);
    std::fill(positives.begin(), positives.end(), 0);
    for (int i : lists[u]) in_list[i] = 1;
    for (int i : pos) {
      const int q = ds.item_group_of[i];
      positives[q] += 1;
      if (in_list[i]) hits[q] += 1;
    }
    for (int i : lists[u]) in_list[i] = 0;

    const int p = ds.user_group_of[u];
    for (int q = 0; q < Q; ++q) {
      if (positives[q] == 0) continue;  // not interested in this item group
      util.values[p * Q + q] += static_cast<double>(hits[q]) / positives[q];
      util.eligible_user_counts[p * Q + q] += 1;
    }
  }
  for (int g = 0; g < P * Q; ++g) {
    if (util.eligible_user_counts[g] > 0) {
      util.values[g] /= util.eligible_user_counts[g];
    } else {
      util.values[g] = absent();
    }
  }
  return util;
}

FairnessReport fairness_report(const UtilityMatrix& util) {
  const int P = util.user_group_count;
  const int Q = util.item_group_count;

  std::vector<double> defined;
  for (double v : util.values)
    if (!is_absent(v)) defined.push_back(v);
  if (defined.empty()) throw DataError("fairness_report: no defined utility cells");

  FairnessReport report;
  report.utility = util;

  report.cv = population_cv(defined);
  if (is_absent(report.cv)) {
    std::cerr << "[itfr] overall utility mean is zero; CV undefined\n";
  }

  std::vector<double> sorted = defined;
  std::sort(sorted.begin(), sorted.end());
  const int worst = std::max(1, static_cast<int>(std::ceil(0.25 * defined.size())));
  report.min_frac =
      std::accumulate(sorted.begin(), sorted.begin() + worst, 0.0) / worst;

  // UCV: dispersion across user groups inside each item group's column.
  double ucv_sum = 0.0;
  int ucv_slices = 0;
  for (int q = 0; q < Q; ++q) {
    std::vector<double> column;
    for (int p = 0; p < P; ++p)
      if (!is_absent(util.value(p, q))) column.push_back(util.value(p, q));
    if (column.empty()) continue;
    const double cv = population_cv(column);
    if (is_absent(cv)) {
      std::cerr << "[itfr] item-group column " << q << " has zero mean; slice skipped\n";
      continue;
    }
    ucv_sum += cv;
    ++ucv_slices;
  }
  report.ucv = ucv_slices > 0 ? ucv_sum / ucv_slices : absent();

  // ICV: dispersion across item groups inside each user group's row.
  double icv_sum = 0.0;
  int icv_slices = 0;
  for (int p = 0; p < P; ++p) {
    std::vector<double> row;
    for (int q = 0; q < Q; ++q)
      if (!is_absent(util.value(p, q))) row.push_back(util.value(p, q));
    if (row.empty()) continue;
    const double cv = population_cv(row);
    if (is_absent(cv)) {
      std::cerr << "[itfr] user-group row " << p << " has zero mean; slice skipped\n";
      continue;
    }
    icv_sum += cv;
    ++icv_slices;
  }
  report.icv = icv_slices > 0 ? icv_sum / icv_slices : absent();
  return report;
}

AccuracyReport accuracy_report(const std::vector<std::vector<int>>& lists,
                               const UserItems& eval_positives, int k) {
  AccuracyReport report;
  double psum = 0.0, rsum = 0.0, nsum = 0.0;
  int users = 0;
  for (std::size_t u = 0; u < lists.size(); ++u) {
    const auto& pos = eval_positives.items[u];
    if (pos.empty()) continue;
    int hits = 0;
    double dcg = 0.0;
    for (std::size_t rank = 0; rank < lists[u].size(); ++rank) {
      if (std::binary_search(pos.begin(), pos.end(), lists[u][rank])) {
        ++hits;
        dcg += 1.0 / std::log2(static_cast<double>(rank) + 2.0);
      }
    }
    double idcg = 0.0;
    const int ideal = std::min<int>(k, static_cast<int>(pos.size()));
    for (int rank = 0; rank < ideal; ++rank) {
      idcg += 1.0 / std::log2(static_cast<double>(rank) + 2.0);
    }
    psum += static_cast<double>(hits) / k;
    rsum += static_cast<double>(hits) / static_cast<double>(pos.size());
    nsum += idcg > 0.0 ? dcg / idcg : 0.0;
    ++users;
  }
  if (users > 0) {
    report.precision = psum / users;
    report.recall = rsum / users;
    report.ndcg = nsum / users;
  }
  report.evaluated_users = users;
  return report;
}

FairnessReport evaluate(const EmbeddingTable& table, const InteractionDataset& ds,
                        const std::vector<Interaction>& eval_set,
                        const std::vector<Interaction>& mask_set, int k) {
  const UserItems eval_positives = build_user_items(ds.user_count, eval_set);
  const UserItems mask = build_user_items(ds.user_count, mask_set);

  std::vector<std::vector<int>> lists(ds.user_count);

  // Per-user work is independent; chunk it across threads and reduce in
  // user order afterwards so results do not depend on the thread count.
  const int n_threads = std::max(1u, std::thread::hardware_concurrency());
  auto worker = [&](int begin, int end) {
    std::vector<char> masked(ds.item_count, 0);
    std::vector<double> scores(ds.item_count);
    std::vector<double> item_norms;
    const int d = table.dim;
    if (table.scorer_mode == ScorerMode::kNormalized) {
      item_norms.resize(ds.item_count);
      for (int i = 0; i < ds.item_count; ++i) {
        double sq = 0.0;
        const double* v = table.item_row(i);
        for (int c = 0; c < d; ++c) sq += v[c] * v[c];
        item_norms[i] = std::sqrt(sq);
      }
    }
    for (int u = begin; u < end; ++u) {
      if (eval_positives.items[u].empty()) continue;  // nothing to evaluate
      for (int i : mask.items[u]) masked[i] = 1;

      const double* urow = table.user_row(u);
      if (table.scorer_mode == ScorerMode::kDot) {
        for (int i = 0; i < ds.item_count; ++i) {
          if (masked[i]) continue;
          double s = 0.0;
          const double* v = table.item_row(i);
          for (int c = 0; c < d; ++c) s += urow[c] * v[c];
          scores[i] = s;
        }
      } else {
        double usq = 0.0;
        for (int c = 0; c < d; ++c) usq += urow[c] * urow[c];
        const double unorm = std::sqrt(usq);
        if (unorm <= 1e-12) throw NumericalError("degenerate embedding");
        for (int i = 0; i < ds.item_count; ++i) {
          if (masked[i]) continue;
          if (item_norms[i] <= 1e-12) throw NumericalError("degenerate embedding");
          double s = 0.0;
          const double* v = table.item_row(i);
          for (int c = 0; c < d; ++c) s += urow[c] * v[c];
          scores[i] = table.tau * s / (unorm * item_norms[i]);
        }
      }
      lists[u] = topk_from_scores(scores, masked, k);
      for (int i : mask.items[u]) masked[i] = 0;
    }
  };

  if (n_threads == 1 || ds.user_count < 256) {
    worker(0, ds.user_count);
  } else {
    std::vector<std::thread> threads;
    const int chunk = (ds.user_count + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      const int begin = t * chunk;
      const int end = std::min(ds.user_count, begin + chunk);
      if (begin >= end) break;
      threads.emplace_back(worker, begin, end);
    }
    for (auto& th : threads) th.join();
  }

  FairnessReport report = fairness_report(itg_utility(lists, eval_positives, ds, k));
  report.accuracy = accuracy_report(lists, eval_positives, k);
  return report;
}

}  // namespace itfr
