#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "itfr/common.hpp"

namespace itfr {

enum class ScorerMode { kDot, kNormalized };

std::string to_string(ScorerMode mode);
ScorerMode scorer_mode_from_string(const std::string& s);

// Matrix-factorization parameters: one d-dimensional row per user and per
// item, plus the scorer configuration. Parameter rows are addressed with a
// single index space: users first, then items.
struct EmbeddingTable {
  int user_count = 0;
  int item_count = 0;
  int dim = 0;
  ScorerMode scorer_mode = ScorerMode::kDot;
  double tau = 1.0;  // only used in normalized mode
  double l2 = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> user_embeddings;  // user_count x dim, row-major
  std::vector<double> item_embeddings;  // item_count x dim, row-major

  int param_row_count() const { return user_count + item_count; }

  double* user_row(int u) { return user_embeddings.data() + static_cast<std::size_t>(u) * dim; }
  const double* user_row(int u) const {
    return user_embeddings.data() + static_cast<std::size_t>(u) * dim;
  }
  double* item_row(int i) { return item_embeddings.data() + static_cast<std::size_t>(i) * dim; }
  const double* item_row(int i) const {
    return item_embeddings.data() + static_cast<std::size_t>(i) * dim;
  }
  // Unified addressing: rows [0, n) are users, rows [n, n+m) are items.
  double* param_row(int r) { return r < user_count ? user_row(r) : item_row(r - user_count); }
  const double* param_row(int r) const {
    return r < user_count ? user_row(r) : item_row(r - user_count);
  }
};

// Gradient of one (user, positive, negative) triple w.r.t. the three touched
// embedding rows.
struct TripleGradient {
  std::vector<double> user;
  std::vector<double> pos;
  std::vector<double> neg;
};

EmbeddingTable init_embeddings(int user_count, int item_count, int dim, std::uint64_t seed,
                               double scale = 0.1);

// Dot mode: u.v; normalized mode: tau * cos(u, v), bounded to [-tau, tau].
double score(const EmbeddingTable& table, int user, int item);

// Pairwise ranking loss -ln sigmoid(s_pos - s_neg) plus l2*(|u|^2+|i|^2+|j|^2),
// with the exact gradient of that sum for the active scorer.
std::pair<double, TripleGradient> bpr_loss_and_grad(const EmbeddingTable& table, int user,
                                                    int pos_item, int neg_item);

// JSON header line followed by the two matrices as little-endian f64.
void save_checkpoint(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable load_checkpoint(const std::filesystem::path& path);

}  // namespace itfr
