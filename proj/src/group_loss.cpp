#include "itfr/group_loss.hpp"

#include <cmath>
#include <cstring>

namespace itfr {

double* SparseGradient::row(int row_id) {
  if (auto it = slot_of_.find(row_id); it != slot_of_.end()) {
    return values_.data() + it->second * dim_;
  }
  const std::size_t slot = rows_.size();
  slot_of_.emplace(row_id, slot);
  rows_.push_back(row_id);
  values_.resize(values_.size() + dim_, 0.0);
  return values_.data() + slot * dim_;
}

void SparseGradient::add_scaled(const double* block, int row_id, double scale) {
  double* dst = row(row_id);
  for (int k = 0; k < dim_; ++k) dst[k] += scale * block[k];
}

double SparseGradient::squared_norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return s;
}

double SparseGradient::norm() const { return std::sqrt(squared_norm()); }

double SparseGradient::dot_dense(std::span<const double> dense) const {
  double s = 0.0;
  for (std::size_t slot = 0; slot < rows_.size(); ++slot) {
    const double* block = values_.data() + slot * dim_;
    const double* d = dense.data() + static_cast<std::size_t>(rows_[slot]) * dim_;
    for (int k = 0; k < dim_; ++k) s += block[k] * d[k];
  }
  return s;
}

std::vector<double> BatchGroupResults::sharp_losses() const {
  std::vector<double> out(cells.size(), absent());
  for (std::size_t g = 0; g < cells.size(); ++g)
    if (cells[g].present) out[g] = cells[g].sharp_loss;
  return out;
}

std::vector<double> BatchGroupResults::plain_losses() const {
  std::vector<double> out(cells.size(), absent());
  for (std::size_t g = 0; g < cells.size(); ++g)
    if (cells[g].present) out[g] = cells[g].plain_loss;
  return out;
}

std::vector<bool> BatchGroupResults::present_mask() const {
  std::vector<bool> out(cells.size(), false);
  for (std::size_t g = 0; g < cells.size(); ++g) out[g] = cells[g].present;
  return out;
}

GroupBatch partition_batch(std::span<const Triple> batch, const InteractionDataset& ds) {
  GroupBatch gb;
  gb.user_group_count = ds.user_group_count;
  gb.item_group_count = ds.item_group_count;
  gb.cells.resize(static_cast<std::size_t>(gb.cell_count()));
  for (const Triple& t : batch) gb.cells[ds.cell_of(t.user, t.pos_item)].push_back(t);
  return gb;
}

namespace {

// Mean loss and mean gradient over one cell's triples.
GroupLossResult cell_plain(const std::vector<Triple>& triples, const EmbeddingTable& table) {
  GroupLossResult res;
  if (triples.empty()) return res;
  res.present = true;
  res.grad = SparseGradient(table.dim);

  const int n = table.user_count;
  const double inv = 1.0 / static_cast<double>(triples.size());
  double loss_sum = 0.0;
  for (const Triple& t : triples) {
    auto [loss, g] = bpr_loss_and_grad(table, t.user, t.pos_item, t.neg_item);
    loss_sum += loss;
    res.grad.add_scaled(g.user.data(), t.user, inv);
    res.grad.add_scaled(g.pos.data(), n + t.pos_item, inv);
    res.grad.add_scaled(g.neg.data(), n + t.neg_item, inv);
  }
  res.plain_loss = loss_sum * inv;
  res.sharp_loss = res.plain_loss;
  return res;
}

}  // namespace

std::vector<double> group_plain_losses(const GroupBatch& gb, const EmbeddingTable& table) {
  std::vector<double> out(static_cast<std::size_t>(gb.cell_count()), absent());
  for (int g = 0; g < gb.cell_count(); ++g) {
    const auto& triples = gb.cells[g];
    if (triples.empty()) continue;
    double sum = 0.0;
    for (const Triple& t : triples)
      sum += bpr_loss_and_grad(table, t.user, t.pos_item, t.neg_item).first;
    out[g] = sum / static_cast<double>(triples.size());
  }
  return out;
}

BatchGroupResults group_plain_losses_and_grads(const GroupBatch& gb, const EmbeddingTable& table) {
  BatchGroupResults out;
  out.user_group_count = gb.user_group_count;
  out.item_group_count = gb.item_group_count;
  out.rho = 0.0;
  out.cells.resize(gb.cells.size());
  for (int g = 0; g < gb.cell_count(); ++g) out.cells[g] = cell_plain(gb.cells[g], table);
  return out;
}

BatchGroupResults sharpness_aware_loss_and_grad(const GroupBatch& gb, EmbeddingTable& table,
                                                double rho) {
  if (rho < 0.0) throw UsageError("rho must be non-negative");
  BatchGroupResults out;
  out.user_group_count = gb.user_group_count;
  out.item_group_count = gb.item_group_count;
  out.rho = rho;
  out.cells.resize(gb.cells.size());

  const int d = table.dim;
  std::vector<double> saved;  // original values of perturbed rows
  for (int g = 0; g < gb.cell_count(); ++g) {
    GroupLossResult res = cell_plain(gb.cells[g], table);
    if (!res.present) {
      out.cells[g] = std::move(res);
      continue;
    }
    const double gnorm = res.grad.norm();
    if (rho == 0.0 || gnorm <= 1e-12) {
      out.cells[g] = std::move(res);
      continue;
    }

    // Ascend along the cell's full sparse gradient, normalized jointly.
    const auto& rows = res.grad.touched_rows();
    saved.assign(rows.size() * static_cast<std::size_t>(d), 0.0);
    const double step = rho / gnorm;
    for (std::size_t slot = 0; slot < rows.size(); ++slot) {
      double* prow = table.param_row(rows[slot]);
      std::memcpy(saved.data() + slot * d, prow, sizeof(double) * d);
      const double* gblock = res.grad.row_at(slot);
      for (int k = 0; k < d; ++k) prow[k] += step * gblock[k];
    }

    GroupLossResult perturbed = cell_plain(gb.cells[g], table);

    // Bit-exact restore from the saved copies.
    for (std::size_t slot = 0; slot < rows.size(); ++slot) {
      std::memcpy(table.param_row(rows[slot]), saved.data() + slot * d, sizeof(double) * d);
    }

    GroupLossResult final_res;
    final_res.present = true;
    final_res.plain_loss = res.plain_loss;
    final_res.sharp_loss = perturbed.plain_loss;
    final_res.grad = std::move(perturbed.grad);
    out.cells[g] = std::move(final_res);
  }
  return out;
}

EpochGradientAccumulator::EpochGradientAccumulator(int user_group_count, int item_group_count,
                                                   int param_row_count, int dim)
    : user_group_count_(user_group_count),
      item_group_count_(item_group_count),
      params_(static_cast<std::size_t>(param_row_count) * dim),
      dim_(dim) {
  const int cells = cell_count();
  grads_.assign(cells, std::vector<double>(params_, 0.0));
  sharp_sums_.assign(cells, 0.0);
  plain_sums_.assign(cells, 0.0);
  batch_counts_.assign(cells, 0);
  last_grads_.assign(cells, std::vector<double>(params_, 0.0));
  last_grad_norms_.assign(cells, 0.0);
  last_mean_sharp_.assign(cells, absent());
  last_mean_plain_.assign(cells, absent());
}

void EpochGradientAccumulator::accumulate(int cell, const SparseGradient& grad, double sharp_loss,
                                          double plain_loss) {
  if (closed_) throw UsageError("accumulating after epoch close");
  auto& dense = grads_[cell];
  const auto& rows = grad.touched_rows();
  for (std::size_t slot = 0; slot < rows.size(); ++slot) {
    double* dst = dense.data() + static_cast<std::size_t>(rows[slot]) * dim_;
    const double* src = grad.row_at(slot);
    for (int k = 0; k < dim_; ++k) dst[k] += src[k];
  }
  sharp_sums_[cell] += sharp_loss;
  plain_sums_[cell] += plain_loss;
  batch_counts_[cell] += 1;
}

void EpochGradientAccumulator::roll_epoch() {
  const int cells = cell_count();
  for (int g = 0; g < cells; ++g) {
    std::swap(last_grads_[g], grads_[g]);
    double sq = 0.0;
    for (double v : last_grads_[g]) sq += v * v;
    last_grad_norms_[g] = std::sqrt(sq);
    if (batch_counts_[g] > 0) {
      last_mean_sharp_[g] = sharp_sums_[g] / batch_counts_[g];
      last_mean_plain_[g] = plain_sums_[g] / batch_counts_[g];
    } else {
      last_mean_sharp_[g] = absent();
      last_mean_plain_[g] = absent();
    }
    std::fill(grads_[g].begin(), grads_[g].end(), 0.0);
    sharp_sums_[g] = 0.0;
    plain_sums_[g] = 0.0;
    batch_counts_[g] = 0;
  }
  ++epoch_;
}

void EpochGradientAccumulator::close() { closed_ = true; }

}  // namespace itfr
