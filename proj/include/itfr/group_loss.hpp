#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include "itfr/dataset.hpp"
#include "itfr/model.hpp"

namespace itfr {

struct Triple {
  int user;
  int pos_item;
  int neg_item;
};

// Batch triples partitioned by (user group, positive-item group). The
// negative item plays no part in cell membership.
struct GroupBatch {
  int user_group_count = 0;
  int item_group_count = 0;
  std::vector<std::vector<Triple>> cells;  // row-major P x Q

  int cell_count() const { return user_group_count * item_group_count; }
};

// Sparse parameter gradient: a set of touched rows (insertion-ordered, which
// keeps accumulation deterministic) each carrying a dim-sized block.
class SparseGradient {
public:
  SparseGradient() = default;
  explicit SparseGradient(int dim) : dim_(dim) {}

  int dim() const { return dim_; }
  const std::vector<int>& touched_rows() const { return rows_; }
  std::size_t row_count() const { return rows_.size(); }

  double* row(int row_id);              // get-or-insert, zero-initialized
  const double* row_at(std::size_t slot) const { return values_.data() + slot * dim_; }
  double* row_at(std::size_t slot) { return values_.data() + slot * dim_; }

  void add_scaled(const double* block, int row_id, double scale);
  double squared_norm() const;
  double norm() const;
  // Dot product against a dense vector laid out as row-major rows x dim.
  double dot_dense(std::span<const double> dense) const;

private:
  int dim_ = 0;
  std::vector<int> rows_;
  std::vector<double> values_;
  std::unordered_map<int, std::size_t> slot_of_;
};

// One cell's loss/gradient for the current batch. Losses are NaN ("absent")
// for cells with no triples in the batch, never zero.
struct GroupLossResult {
  bool present = false;
  double plain_loss = absent();
  double sharp_loss = absent();  // equals plain_loss when rho = 0
  SparseGradient grad;           // gradient at the (possibly perturbed) point
};

struct BatchGroupResults {
  int user_group_count = 0;
  int item_group_count = 0;
  double rho = 0.0;
  std::vector<GroupLossResult> cells;

  int cell_count() const { return user_group_count * item_group_count; }
  std::vector<double> sharp_losses() const;  // NaN for absent cells
  std::vector<double> plain_losses() const;
  std::vector<bool> present_mask() const;
};

GroupBatch partition_batch(std::span<const Triple> batch, const InteractionDataset& ds);

// Mean per-triple loss per non-empty cell; absent cells are NaN.
std::vector<double> group_plain_losses(const GroupBatch& gb, const EmbeddingTable& table);

// Per-cell mean loss and mean gradient at the current parameters.
BatchGroupResults group_plain_losses_and_grads(const GroupBatch& gb, const EmbeddingTable& table);

// Single-step gradient-ascent approximation of each cell's worst loss in the
// rho-ball: perturb the touched rows by rho * g/|g|, re-evaluate loss and
// gradient there, then restore the table bit-for-bit. rho = 0 (or a vanishing
// gradient) falls back to the plain result on the same code path.
BatchGroupResults sharpness_aware_loss_and_grad(const GroupBatch& gb, EmbeddingTable& table,
                                                double rho);

// Dense per-cell gradient sums over the epoch plus running loss means; the
// previous epoch's state stays frozen until the next rollover.
class EpochGradientAccumulator {
public:
  EpochGradientAccumulator(int user_group_count, int item_group_count, int param_row_count,
                           int dim);

  void accumulate(int cell, const SparseGradient& grad, double sharp_loss, double plain_loss);
  void roll_epoch();  // freeze current sums as "last epoch", reset, epoch++
  void close();       // seal at end of training; accumulate() afterwards throws

  int cell_count() const { return user_group_count_ * item_group_count_; }
  int epoch() const { return epoch_; }
  bool has_last_epoch() const { return epoch_ > 0; }

  std::span<const double> current_grad(int cell) const { return grads_[cell]; }
  std::span<const double> last_grad(int cell) const { return last_grads_[cell]; }
  double last_grad_norm(int cell) const { return last_grad_norms_[cell]; }
  // NaN when the cell never appeared in the last epoch.
  double last_mean_sharp_loss(int cell) const { return last_mean_sharp_[cell]; }
  double last_mean_plain_loss(int cell) const { return last_mean_plain_[cell]; }

private:
  int user_group_count_;
  int item_group_count_;
  std::size_t params_;
  int dim_;
  int epoch_ = 0;
  bool closed_ = false;

  std::vector<std::vector<double>> grads_;  // per cell, dense params_ * dim_
  std::vector<double> sharp_sums_;
  std::vector<double> plain_sums_;
  std::vector<int> batch_counts_;

  std::vector<std::vector<double>> last_grads_;
  std::vector<double> last_grad_norms_;
  std::vector<double> last_mean_sharp_;
  std::vector<double> last_mean_plain_;
};

}  // namespace itfr
