#include "itfr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace itfr {

std::string to_string(Method method) {
  switch (method) {
    case Method::kBpr: return "bpr";
    case Method::kGroupDro: return "groupdro";
    case Method::kGroupDroTwoSided: return "groupdro-two-sided";
    case Method::kItfr: return "itfr";
  }
  throw UsageError("unknown method");
}

Method method_from_string(const std::string& s) {
  if (s == "bpr") return Method::kBpr;
  if (s == "groupdro") return Method::kGroupDro;
  if (s == "groupdro-two-sided") return Method::kGroupDroTwoSided;
  if (s == "itfr") return Method::kItfr;
  throw UsageError("unknown method: " + s);
}

void TrainConfig::validate() const {
  if ((no_sa || no_cb || no_pn) && method != Method::kItfr) {
    throw UsageError("ablation flags --no-sa/--no-cb/--no-pn apply only to --method itfr");
  }
  if (pn_only && method != Method::kBpr) {
    throw UsageError("--pn-only applies only to --method bpr");
  }
  if (lr <= 0.0) throw UsageError("lr must be positive");
  if (batch_size < 1) throw UsageError("batch size must be >= 1");
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  if (negatives_per_positive < 1) throw UsageError("negatives per positive must be >= 1");
  if (l2 < 0.0) throw UsageError("l2 must be non-negative");
  if (dim < 1) throw UsageError("embedding dimension must be >= 1");
  if (eta < 0.0) throw UsageError("eta must be non-negative");
  if (gamma < 0.0) throw UsageError("gamma must be non-negative");
  if (rho < 0.0) throw UsageError("rho must be non-negative");
  if (tau <= 0.0) throw UsageError("tau must be positive");
  if (eval_every < 1) throw UsageError("eval_every must be >= 1");
  if (patience < 0) throw UsageError("patience must be non-negative");
  if (k < 1) throw UsageError("k must be >= 1");
  if (log_every < 1) throw UsageError("log_every must be >= 1");
}

ScorerMode TrainConfig::scorer() const {
  if (method == Method::kItfr && !no_pn) return ScorerMode::kNormalized;
  if (method == Method::kBpr && pn_only) return ScorerMode::kNormalized;
  return ScorerMode::kDot;
}

double TrainConfig::effective_rho() const {
  return (method == Method::kItfr && !no_sa) ? rho : 0.0;
}

void adam_step(AdamState& state, EmbeddingTable& table, const SparseGradient& grad, double lr) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const int d = table.dim;
  const auto& rows = grad.touched_rows();
  for (std::size_t slot = 0; slot < rows.size(); ++slot) {
    const double* g = grad.row_at(slot);
    double* prow = table.param_row(rows[slot]);
    const std::size_t base = static_cast<std::size_t>(rows[slot]) * d;
    for (int c = 0; c < d; ++c) {
      double& m = state.first_moment[base + c];
      double& v = state.second_moment[base + c];
      m = state.beta1 * m + (1.0 - state.beta1) * g[c];
      v = state.beta2 * v + (1.0 - state.beta2) * g[c] * g[c];
      prow[c] -= lr * (m / bc1) / (std::sqrt(v / bc2) + state.eps);
    }
  }
}

namespace {

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// Per-side partition used by the two-sided weight variant.
struct SideSlices {
  std::vector<std::vector<Triple>> by_user_group;
  std::vector<std::vector<Triple>> by_item_group;
};

SideSlices partition_sides(const std::vector<Triple>& triples, const InteractionDataset& ds) {
  SideSlices s;
  s.by_user_group.resize(ds.user_group_count);
  s.by_item_group.resize(ds.item_group_count);
  for (const Triple& t : triples) {
    s.by_user_group[ds.user_group_of[t.user]].push_back(t);
    s.by_item_group[ds.item_group_of[t.pos_item]].push_back(t);
  }
  return s;
}

struct SliceResult {
  std::vector<double> losses;          // NaN for empty slices
  std::vector<SparseGradient> grads;   // mean gradient per slice
  std::vector<bool> present;
};

SliceResult slice_losses_and_grads(const std::vector<std::vector<Triple>>& slices,
                                   const EmbeddingTable& table) {
  SliceResult res;
  res.losses.assign(slices.size(), absent());
  res.grads.resize(slices.size());
  res.present.assign(slices.size(), false);
  const int n = table.user_count;
  for (std::size_t s = 0; s < slices.size(); ++s) {
    if (slices[s].empty()) continue;
    res.present[s] = true;
    res.grads[s] = SparseGradient(table.dim);
    const double inv = 1.0 / static_cast<double>(slices[s].size());
    double sum = 0.0;
    for (const Triple& t : slices[s]) {
      auto [loss, g] = bpr_loss_and_grad(table, t.user, t.pos_item, t.neg_item);
      sum += loss;
      res.grads[s].add_scaled(g.user.data(), t.user, inv);
      res.grads[s].add_scaled(g.pos.data(), n + t.pos_item, inv);
      res.grads[s].add_scaled(g.neg.data(), n + t.neg_item, inv);
    }
    res.losses[s] = sum * inv;
  }
  return res;
}

void add_weighted(SparseGradient& combined, const SparseGradient& grad, double weight) {
  const auto& rows = grad.touched_rows();
  for (std::size_t slot = 0; slot < rows.size(); ++slot) {
    combined.add_scaled(grad.row_at(slot), rows[slot], weight);
  }
}

double present_mass(const GroupWeights& w, const std::vector<bool>& present) {
  double mass = 0.0;
  for (std::size_t g = 0; g < w.w.size(); ++g)
    if (present[g]) mass += w.w[g];
  return mass;
}

}  // namespace

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write training log: " + path.string());
  out << "epoch,batch,method";
  const int P = user_group_count, Q = item_group_count;
  for (const char* prefix : {"L", "Lhat", "w"}) {
    for (int p = 0; p < P; ++p)
      for (int q = 0; q < Q; ++q) out << ',' << prefix << '_' << p << '_' << q;
  }
  out << ",val_precision,val_recall,val_ndcg,checkpoint\n";

  const std::size_t cells = static_cast<std::size_t>(P) * Q;
  auto emit = [&](const std::vector<double>& v) {
    for (std::size_t g = 0; g < cells; ++g) {
      out << ',';
      if (g < v.size() && !is_absent(v[g])) out << fmt17(v[g]);
    }
  };
  for (const TrainLogRow& row : rows) {
    out << row.epoch << ',' << row.batch << ',' << method;
    emit(row.plain_losses);
    emit(row.sharp_losses);
    emit(row.weights);
    out << ',';
    if (!is_absent(row.val_precision)) out << fmt17(row.val_precision);
    out << ',';
    if (!is_absent(row.val_recall)) out << fmt17(row.val_recall);
    out << ',';
    if (!is_absent(row.val_ndcg)) out << fmt17(row.val_ndcg);
    out << ',' << (row.checkpointed ? 1 : 0) << '\n';
  }
}

TrainResult train(const TrainConfig& cfg, const SplitDataset& split, const InteractionDataset& ds,
                  const BatchObserver& observer) {
  cfg.validate();
  if (split.train.empty()) throw DataError("training split is empty");

  const int cells = ds.cell_count();
  {
    const IntersectionalIndex index = build_index(ds, split.train);
    for (int p = 0; p < ds.user_group_count; ++p) {
      for (int q = 0; q < ds.item_group_count; ++q) {
        if (index.cell(p, q).empty()) {
          std::cerr << "[itfr] warning: intersectional cell (" << p << "," << q
                    << ") has no training interactions\n";
        }
      }
    }
  }

  EmbeddingTable table =
      init_embeddings(ds.user_count, ds.item_count, cfg.dim, cfg.seed, cfg.init_scale);
  table.scorer_mode = cfg.scorer();
  table.tau = cfg.tau;
  table.l2 = cfg.l2;

  AdamState adam(table.param_row_count(), cfg.dim);
  const UserItems train_view = build_user_items(ds.user_count, split.train);

  GroupWeights weights = GroupWeights::uniform(cells, cfg.eta);
  GroupWeights user_side = GroupWeights::uniform(ds.user_group_count, cfg.eta);
  GroupWeights item_side = GroupWeights::uniform(ds.item_group_count, cfg.eta);

  const bool collaborative = cfg.method == Method::kItfr && !cfg.no_cb;
  std::optional<EpochGradientAccumulator> acc;
  if (collaborative) {
    acc.emplace(ds.user_group_count, ds.item_group_count, table.param_row_count(), cfg.dim);
  }
  BalanceConfig balance_cfg;
  balance_cfg.gamma = cfg.gamma;
  balance_cfg.eta = cfg.eta;
  balance_cfg.rho = cfg.effective_rho();
  balance_cfg.beta_from_plain_losses = cfg.beta_from_plain_losses;

  Rng shuffle_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
  Rng negative_rng(cfg.seed ^ 0xD1B54A32D192ED03ull);

  TrainResult result;
  result.log.method = to_string(cfg.method);
  result.log.user_group_count = ds.user_group_count;
  result.log.item_group_count = ds.item_group_count;

  std::vector<Interaction> order = split.train;
  std::vector<Triple> triples;
  triples.reserve(static_cast<std::size_t>(cfg.batch_size) * cfg.negatives_per_positive);

  int evals_since_improvement = 0;
  bool stop = false;
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    seeded_shuffle(order, shuffle_rng);
    const int batches =
        static_cast<int>((order.size() + cfg.batch_size - 1) / cfg.batch_size);

    for (int batch = 0; batch < batches; ++batch) {
      const std::size_t begin = static_cast<std::size_t>(batch) * cfg.batch_size;
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      triples.clear();
      for (std::size_t idx = begin; idx < end; ++idx) {
        const auto& [u, i] = order[idx];
        for (int rep = 0; rep < cfg.negatives_per_positive; ++rep) {
          triples.push_back({u, i, sample_negative(u, ds.item_count, train_view, negative_rng)});
        }
      }

      double batch_loss;
      SparseGradient combined(cfg.dim);
      TrainLogRow row;
      row.epoch = epoch;
      row.batch = batch;

      if (cfg.method == Method::kGroupDroTwoSided) {
        const SideSlices sides = partition_sides(triples, ds);
        const SliceResult by_user = slice_losses_and_grads(sides.by_user_group, table);
        const SliceResult by_item = slice_losses_and_grads(sides.by_item_group, table);
        groupdro_update(user_side, by_user.losses);
        groupdro_update(item_side, by_item.losses);

        const double user_mass = present_mass(user_side, by_user.present);
        const double item_mass = present_mass(item_side, by_item.present);
        if (user_mass <= 0.0 || item_mass <= 0.0) throw DataError("empty batch");
        double loss_u = 0.0, loss_v = 0.0;
        for (std::size_t p = 0; p < user_side.w.size(); ++p) {
          if (!by_user.present[p]) continue;
          const double wp = user_side.w[p] / user_mass;
          loss_u += wp * by_user.losses[p];
          add_weighted(combined, by_user.grads[p], 0.5 * wp);
        }
        for (std::size_t q = 0; q < item_side.w.size(); ++q) {
          if (!by_item.present[q]) continue;
          const double wq = item_side.w[q] / item_mass;
          loss_v += wq * by_item.losses[q];
          add_weighted(combined, by_item.grads[q], 0.5 * wq);
        }
        batch_loss = 0.5 * (loss_u + loss_v);
      } else {
        const GroupBatch gb = partition_batch(triples, ds);
        const BatchGroupResults results =
            sharpness_aware_loss_and_grad(gb, table, cfg.effective_rho());
        const std::vector<double> plain = results.plain_losses();
        const std::vector<double> sharp = results.sharp_losses();
        const std::vector<bool> present = results.present_mask();

        switch (cfg.method) {
          case Method::kBpr:
            break;  // weights stay pinned uniform
          case Method::kGroupDro:
            groupdro_update(weights, plain);
            break;
          case Method::kItfr:
            if (cfg.no_cb) {
              groupdro_update(weights, sharp);
            } else if (acc->has_last_epoch()) {
              const ContributionVector contributions =
                  total_contributions(results, *acc, balance_cfg);
              update_weights(weights, contributions, present);
            }
            // epoch 0 is the warm-up: uniform weights while gradients
            // accumulate for the first time.
            break;
          default:
            break;
        }

        batch_loss = combine_losses(weights, sharp, present);
        const double mass = present_mass(weights, present);
        for (int g = 0; g < cells; ++g) {
          if (!present[g]) continue;
          add_weighted(combined, results.cells[g].grad, weights.w[g] / mass);
        }
        if (collaborative) {
          for (int g = 0; g < cells; ++g) {
            if (present[g]) acc->accumulate(g, results.cells[g].grad, sharp[g], plain[g]);
          }
        }
        row.plain_losses = plain;
        row.sharp_losses = sharp;
        row.weights = weights.w;
      }

      if (!std::isfinite(batch_loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                             std::to_string(batch));
      }
      adam_step(adam, table, combined, cfg.lr);

      if (observer) {
        if (cfg.method == Method::kGroupDroTwoSided) {
          observer(epoch, batch, {user_side.w, item_side.w});
        } else {
          observer(epoch, batch, {weights.w});
        }
      }
      if (batch % cfg.log_every == 0) result.log.rows.push_back(std::move(row));
    }

    if (collaborative) acc->roll_epoch();

    const bool last_epoch = epoch == cfg.epochs - 1;
    if (!split.validation.empty() && ((epoch + 1) % cfg.eval_every == 0 || last_epoch)) {
      const FairnessReport val = evaluate(table, ds, split.validation, split.train, cfg.k);
      TrainLogRow eval_row;
      eval_row.epoch = epoch;
      eval_row.batch = -1;
      eval_row.val_precision = val.accuracy.precision;
      eval_row.val_recall = val.accuracy.recall;
      eval_row.val_ndcg = val.accuracy.ndcg;
      if (val.accuracy.recall > result.best_recall) {
        result.best_recall = val.accuracy.recall;
        result.best_epoch = epoch;
        result.table = table;
        eval_row.checkpointed = true;
        evals_since_improvement = 0;
      } else {
        ++evals_since_improvement;
        if (cfg.patience > 0 && evals_since_improvement >= cfg.patience) stop = true;
      }
      result.log.rows.push_back(std::move(eval_row));
    }
  }
  if (collaborative) acc->close();

  if (result.best_epoch < 0) {
    // No validation data: the final parameters are the model.
    result.table = std::move(table);
    result.best_epoch = cfg.epochs - 1;
  }
  result.final_weights =
      cfg.method == Method::kGroupDroTwoSided ? user_side : weights;
  return result;
}

}  // namespace itfr
