// Brute-force reference implementations used to cross-check the library.
// Everything here recomputes results from first principles (full sorts,
// direct formula evaluation, double loops) and deliberately shares no code
// with the implementation under test.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "itfr/dataset.hpp"
#include "itfr/model.hpp"

namespace oracle {

// Full-sort top-k by (score desc, index asc) over the unmasked items.
inline std::vector<int> topk(const std::vector<double>& scores, const std::set<int>& mask,
                             int k) {
  std::vector<int> ids;
  for (int i = 0; i < static_cast<int>(scores.size()); ++i)
    if (!mask.count(i)) ids.push_back(i);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  if (static_cast<int>(ids.size()) > k) ids.resize(k);
  return ids;
}

inline double score_of(const itfr::EmbeddingTable& t, int u, int i) {
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (int c = 0; c < t.dim; ++c) {
    dot += t.user_row(u)[c] * t.item_row(i)[c];
    nu += t.user_row(u)[c] * t.user_row(u)[c];
    nv += t.item_row(i)[c] * t.item_row(i)[c];
  }
  if (t.scorer_mode == itfr::ScorerMode::kDot) return dot;
  return t.tau * dot / (std::sqrt(nu) * std::sqrt(nv));
}

struct Metrics {
  double precision = 0.0, recall = 0.0, ndcg = 0.0;
  double cv = 0.0, min = 0.0, ucv = 0.0, icv = 0.0;
  std::vector<std::vector<double>> utility;  // P x Q, NaN when undefined
};

// End-to-end metric evaluation: lists from full sorts, Eq.-style utilities,
// then direct CV / MIN (worst ceil-25%) / UCV / ICV and P/R/NDCG formulas.
inline Metrics evaluate(const itfr::EmbeddingTable& table, const itfr::InteractionDataset& ds,
                        const std::vector<itfr::Interaction>& eval_set,
                        const std::vector<itfr::Interaction>& mask_set, int k) {
  const int P = ds.user_group_count, Q = ds.item_group_count;
  std::vector<std::set<int>> eval_pos(ds.user_count), mask(ds.user_count);
  for (auto [u, i] : eval_set) eval_pos[u].insert(i);
  for (auto [u, i] : mask_set) mask[u].insert(i);

  Metrics m;
  // Accuracy over users that have eval positives.
  int users = 0;
  for (int u = 0; u < ds.user_count; ++u) {
    if (eval_pos[u].empty()) continue;
    std::vector<double> scores(ds.item_count);
    for (int i = 0; i < ds.item_count; ++i) scores[i] = score_of(table, u, i);
    const std::vector<int> list = topk(scores, mask[u], k);

    int hits = 0;
    double dcg = 0.0;
    for (std::size_t r = 0; r < list.size(); ++r) {
      if (eval_pos[u].count(list[r])) {
        ++hits;
        dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
      }
    }
    double idcg = 0.0;
    for (int r = 0; r < std::min<int>(k, static_cast<int>(eval_pos[u].size())); ++r)
      idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    m.precision += static_cast<double>(hits) / k;
    m.recall += static_cast<double>(hits) / static_cast<double>(eval_pos[u].size());
    m.ndcg += idcg > 0 ? dcg / idcg : 0.0;
    ++users;
  }
  if (users > 0) {
    m.precision /= users;
    m.recall /= users;
    m.ndcg /= users;
  }

  // Utility matrix: per-user group-restricted recall averaged over the users
  // interested in each item group.
  m.utility.assign(P, std::vector<double>(Q, std::nan("")));
  for (int p = 0; p < P; ++p) {
    for (int q = 0; q < Q; ++q) {
      double sum = 0.0;
      int eligible = 0;
      for (int u = 0; u < ds.user_count; ++u) {
        if (ds.user_group_of[u] != p || eval_pos[u].empty()) continue;
        int pos_in_group = 0, hit_in_group = 0;
        std::vector<double> scores(ds.item_count);
        for (int i = 0; i < ds.item_count; ++i) scores[i] = score_of(table, u, i);
        const std::vector<int> list = topk(scores, mask[u], k);
        for (int i : eval_pos[u]) {
          if (ds.item_group_of[i] != q) continue;
          ++pos_in_group;
          if (std::find(list.begin(), list.end(), i) != list.end()) ++hit_in_group;
        }
        if (pos_in_group == 0) continue;
        sum += static_cast<double>(hit_in_group) / pos_in_group;
        ++eligible;
      }
      if (eligible > 0) m.utility[p][q] = sum / eligible;
    }
  }

  const auto cv_of = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= xs.size();
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= xs.size();
    return std::sqrt(var) / mean;
  };

  std::vector<double> defined;
  for (int p = 0; p < P; ++p)
    for (int q = 0; q < Q; ++q)
      if (!std::isnan(m.utility[p][q])) defined.push_back(m.utility[p][q]);
  m.cv = cv_of(defined);

  std::vector<double> sorted = defined;
  std::sort(sorted.begin(), sorted.end());
  const int worst = std::max(1, static_cast<int>(std::ceil(0.25 * sorted.size())));
  m.min = 0.0;
  for (int i = 0; i < worst; ++i) m.min += sorted[i];
  m.min /= worst;

  double ucv = 0.0;
  int ucv_n = 0;
  for (int q = 0; q < Q; ++q) {
    std::vector<double> col;
    for (int p = 0; p < P; ++p)
      if (!std::isnan(m.utility[p][q])) col.push_back(m.utility[p][q]);
    if (col.empty()) continue;
    double mean = 0.0;
    for (double x : col) mean += x;
    if (mean == 0.0) continue;
    ucv += cv_of(col);
    ++ucv_n;
  }
  m.ucv = ucv_n ? ucv / ucv_n : std::nan("");

  double icv = 0.0;
  int icv_n = 0;
  for (int p = 0; p < P; ++p) {
    std::vector<double> row;
    for (int q = 0; q < Q; ++q)
      if (!std::isnan(m.utility[p][q])) row.push_back(m.utility[p][q]);
    if (row.empty()) continue;
    double mean = 0.0;
    for (double x : row) mean += x;
    if (mean == 0.0) continue;
    icv += cv_of(row);
    ++icv_n;
  }
  m.icv = icv_n ? icv / icv_n : std::nan("");
  return m;
}

// Random micro dataset (n, m <= 10) with a disjoint eval/mask split; small
// enough that the oracle above stays trivially checkable by hand.
struct MicroCase {
  itfr::InteractionDataset ds;
  std::vector<itfr::Interaction> eval_set;
  std::vector<itfr::Interaction> mask_set;
  itfr::EmbeddingTable table;
};

inline MicroCase make_micro_case(itfr::Rng& rng, bool normalized) {
  using namespace itfr;
  MicroCase mc;
  auto rnd = [&](int lo, int hi) {
    return lo + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(hi - lo + 1)));
  };
  const int n = rnd(3, 10), m = rnd(3, 10);
  const int P = rnd(1, 3), Q = rnd(1, 3);
  mc.ds.user_count = n;
  mc.ds.item_count = m;
  mc.ds.user_group_count = P;
  mc.ds.item_group_count = Q;
  for (int p = 0; p < P; ++p) mc.ds.user_group_labels.push_back("u" + std::to_string(p));
  for (int q = 0; q < Q; ++q) mc.ds.item_group_labels.push_back("i" + std::to_string(q));
  for (int u = 0; u < n; ++u) {
    mc.ds.user_group_of.push_back(u % P);  // every group observed
    mc.ds.user_ids.push_back("user" + std::to_string(u));
  }
  for (int i = 0; i < m; ++i) {
    mc.ds.item_group_of.push_back(i % Q);
    mc.ds.item_ids.push_back("item" + std::to_string(i));
  }
  std::set<Interaction> mask, eval;
  while (eval.empty()) {
    for (int u = 0; u < n; ++u) {
      for (int i = 0; i < m; ++i) {
        const auto roll = uniform_below(rng, 10);
        if (roll < 3) mask.emplace(u, i);
        else if (roll < 6) eval.emplace(u, i);
      }
    }
  }
  mc.eval_set.assign(eval.begin(), eval.end());
  mc.mask_set.assign(mask.begin(), mask.end());
  std::set<Interaction> all;
  all.insert(eval.begin(), eval.end());
  all.insert(mask.begin(), mask.end());
  mc.ds.positives.assign(all.begin(), all.end());

  mc.table = init_embeddings(n, m, rnd(2, 6), rng(), 0.5);
  if (normalized) {
    mc.table.scorer_mode = ScorerMode::kNormalized;
    mc.table.tau = 1.0 + uniform_unit(rng) * 3.0;
  }
  return mc;
}

}  // namespace oracle
