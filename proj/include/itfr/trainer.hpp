#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "itfr/balance.hpp"
#include "itfr/dataset.hpp"
#include "itfr/evaluator.hpp"
#include "itfr/group_loss.hpp"
#include "itfr/model.hpp"

namespace itfr {

enum class Method { kBpr, kGroupDro, kGroupDroTwoSided, kItfr };

std::string to_string(Method method);
Method method_from_string(const std::string& s);

struct TrainConfig {
  Method method = Method::kBpr;
  // itfr component ablations; pn_only turns plain bpr into "bpr with the
  // normalized scorer".
  bool no_sa = false;
  bool no_cb = false;
  bool no_pn = false;
  bool pn_only = false;

  double lr = 1e-3;
  int batch_size = 1024;
  int epochs = 200;
  int negatives_per_positive = 1;
  double l2 = 0.0;
  int dim = 64;
  double eta = 0.03;
  double gamma = 1.0;
  double rho = 0.04;
  double tau = 2.0;
  double init_scale = 0.1;
  std::uint64_t seed = 0;
  int eval_every = 1;
  int patience = 0;  // 0 disables early stopping
  int k = 20;        // validation Recall cutoff driving model selection
  bool beta_from_plain_losses = false;
  int log_every = 1;  // thinning for per-batch log rows

  void validate() const;  // throws UsageError on incompatible flags
  ScorerMode scorer() const;
  double effective_rho() const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;

  AdamState(int param_row_count, int dim)
      : first_moment(static_cast<std::size_t>(param_row_count) * dim, 0.0),
        second_moment(static_cast<std::size_t>(param_row_count) * dim, 0.0) {}
};

// Lazy Adam: moments decay and bias correction apply only on rows the batch
// touched; the step counter advances once per call.
void adam_step(AdamState& state, EmbeddingTable& table, const SparseGradient& grad, double lr);

struct TrainLogRow {
  int epoch = 0;
  int batch = -1;  // -1 marks a validation row
  std::vector<double> plain_losses;
  std::vector<double> sharp_losses;
  std::vector<double> weights;
  double val_precision = absent();
  double val_recall = absent();
  double val_ndcg = absent();
  bool checkpointed = false;
};

struct TrainLog {
  std::string method;
  int user_group_count = 0;
  int item_group_count = 0;
  std::vector<TrainLogRow> rows;

  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  EmbeddingTable table;  // checkpoint with the best validation recall
  int best_epoch = -1;
  double best_recall = -1.0;
  GroupWeights final_weights;
  TrainLog log;
};

// Per-batch hook: receives every simplex in play after the weight update
// (one for the cell-weight methods, two for the side-weight variant).
using BatchObserver =
    std::function<void(int epoch, int batch, const std::vector<std::vector<double>>& simplexes)>;

TrainResult train(const TrainConfig& cfg, const SplitDataset& split, const InteractionDataset& ds,
                  const BatchObserver& observer = {});

}  // namespace itfr
