#include "itfr/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace itfr {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr double kNormFloor = 1e-12;

double dot(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int k = 0; k < d; ++k) s += a[k] * b[k];
  return s;
}

double norm(const double* a, int d) { return std::sqrt(dot(a, a, d)); }

double softplus(double x) {
  // ln(1 + e^x), stable on both tails
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid_minus_one(double x) {
  // sigma(x) - 1, stable on both tails
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return -e / (1.0 + e);
  }
  return -1.0 / (1.0 + std::exp(x));
}

}  // namespace

std::string to_string(ScorerMode mode) {
  return mode == ScorerMode::kDot ? "dot" : "normalized";
}

ScorerMode scorer_mode_from_string(const std::string& s) {
  if (s == "dot") return ScorerMode::kDot;
  if (s == "normalized") return ScorerMode::kNormalized;
  throw UsageError("unknown scorer mode: " + s);
}

EmbeddingTable init_embeddings(int user_count, int item_count, int dim, std::uint64_t seed,
                               double scale) {
  if (user_count < 1 || item_count < 1 || dim < 1) throw UsageError("init sizes must be >= 1");
  if (scale < 0.0) throw UsageError("init scale must be non-negative");

  EmbeddingTable table;
  table.user_count = user_count;
  table.item_count = item_count;
  table.dim = dim;
  table.seed = seed;
  table.user_embeddings.resize(static_cast<std::size_t>(user_count) * dim);
  table.item_embeddings.resize(static_cast<std::size_t>(item_count) * dim);

  Rng rng(seed);
  for (double& x : table.user_embeddings) x = scale * standard_normal(rng);
  for (double& x : table.item_embeddings) x = scale * standard_normal(rng);
  return table;
}

double score(const EmbeddingTable& table, int user, int item) {
  const double* u = table.user_row(user);
  const double* v = table.item_row(item);
  if (table.scorer_mode == ScorerMode::kDot) return dot(u, v, table.dim);

  const double nu = norm(u, table.dim);
  const double nv = norm(v, table.dim);
  if (nu <= kNormFloor || nv <= kNormFloor) throw NumericalError("degenerate embedding");
  return table.tau * dot(u, v, table.dim) / (nu * nv);
}

std::pair<double, TripleGradient> bpr_loss_and_grad(const EmbeddingTable& table, int user,
                                                    int pos_item, int neg_item) {
  if (pos_item == neg_item) throw UsageError("positive equals negative");
  const int d = table.dim;
  const double* u = table.user_row(user);
  const double* vi = table.item_row(pos_item);
  const double* vj = table.item_row(neg_item);

  TripleGradient grad;
  grad.user.assign(d, 0.0);
  grad.pos.assign(d, 0.0);
  grad.neg.assign(d, 0.0);

  double x;  // s_pos - s_neg
  if (table.scorer_mode == ScorerMode::kDot) {
    x = dot(u, vi, d) - dot(u, vj, d);
    const double c = sigmoid_minus_one(x);
    for (int k = 0; k < d; ++k) {
      grad.user[k] = c * (vi[k] - vj[k]);
      grad.pos[k] = c * u[k];
      grad.neg[k] = -c * u[k];
    }
  } else {
    const double nu = norm(u, d);
    const double ni = norm(vi, d);
    const double nj = norm(vj, d);
    if (nu <= kNormFloor || ni <= kNormFloor || nj <= kNormFloor) {
      throw NumericalError("degenerate embedding");
    }
    const double di = dot(u, vi, d);
    const double dj = dot(u, vj, d);
    const double si = table.tau * di / (nu * ni);
    const double sj = table.tau * dj / (nu * nj);
    x = si - sj;
    const double c = sigmoid_minus_one(x);
    // d(tau * u.v / (|u||v|)) / du = (tau / (|u||v|)) (v - (u.v / |u|^2) u)
    const double ai = table.tau / (nu * ni);
    const double aj = table.tau / (nu * nj);
    for (int k = 0; k < d; ++k) {
      const double dsi_du = ai * (vi[k] - di / (nu * nu) * u[k]);
      const double dsj_du = aj * (vj[k] - dj / (nu * nu) * u[k]);
      grad.user[k] = c * (dsi_du - dsj_du);
      grad.pos[k] = c * ai * (u[k] - di / (ni * ni) * vi[k]);
      grad.neg[k] = -c * aj * (u[k] - dj / (nj * nj) * vj[k]);
    }
  }

  double loss = softplus(-x);
  if (table.l2 != 0.0) {
    loss += table.l2 * (dot(u, u, d) + dot(vi, vi, d) + dot(vj, vj, d));
    for (int k = 0; k < d; ++k) {
      grad.user[k] += 2.0 * table.l2 * u[k];
      grad.pos[k] += 2.0 * table.l2 * vi[k];
      grad.neg[k] += 2.0 * table.l2 * vj[k];
    }
  }
  return {loss, std::move(grad)};
}

void save_checkpoint(const EmbeddingTable& table, const std::filesystem::path& path) {
  nlohmann::json header;
  header["n"] = table.user_count;
  header["m"] = table.item_count;
  header["d"] = table.dim;
  header["scorer_mode"] = to_string(table.scorer_mode);
  header["tau"] = table.tau;
  header["l2"] = table.l2;
  header["seed"] = table.seed;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(table.user_embeddings.data()),
            static_cast<std::streamsize>(table.user_embeddings.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(table.item_embeddings.data()),
            static_cast<std::streamsize>(table.item_embeddings.size() * sizeof(double)));
  if (!out) throw DataError("short write on checkpoint: " + path.string());
}

EmbeddingTable load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  std::string header_line;
  if (!std::getline(in, header_line)) throw DataError("checkpoint missing header");
  nlohmann::json header = nlohmann::json::parse(header_line);

  EmbeddingTable table;
  table.user_count = header.at("n").get<int>();
  table.item_count = header.at("m").get<int>();
  table.dim = header.at("d").get<int>();
  table.scorer_mode = scorer_mode_from_string(header.at("scorer_mode").get<std::string>());
  table.tau = header.at("tau").get<double>();
  table.l2 = header.at("l2").get<double>();
  table.seed = header.at("seed").get<std::uint64_t>();
  table.user_embeddings.resize(static_cast<std::size_t>(table.user_count) * table.dim);
  table.item_embeddings.resize(static_cast<std::size_t>(table.item_count) * table.dim);
  in.read(reinterpret_cast<char*>(table.user_embeddings.data()),
          static_cast<std::streamsize>(table.user_embeddings.size() * sizeof(double)));
  in.read(reinterpret_cast<char*>(table.item_embeddings.data()),
          static_cast<std::streamsize>(table.item_embeddings.size() * sizeof(double)));
  if (!in) throw DataError("truncated checkpoint: " + path.string());
  return table;
}

}  // namespace itfr
