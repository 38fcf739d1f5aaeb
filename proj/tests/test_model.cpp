#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <numeric>

#include "itfr/model.hpp"

using namespace itfr;

namespace {

EmbeddingTable manual_table(std::vector<std::vector<double>> users,
                            std::vector<std::vector<double>> items, ScorerMode mode,
                            double tau = 1.0, double l2 = 0.0) {
  EmbeddingTable t;
  t.user_count = static_cast<int>(users.size());
  t.item_count = static_cast<int>(items.size());
  t.dim = static_cast<int>(users[0].size());
  t.scorer_mode = mode;
  t.tau = tau;
  t.l2 = l2;
  for (const auto& row : users)
    t.user_embeddings.insert(t.user_embeddings.end(), row.begin(), row.end());
  for (const auto& row : items)
    t.item_embeddings.insert(t.item_embeddings.end(), row.begin(), row.end());
  return t;
}

// Central finite differences of the loss returned by bpr_loss_and_grad with
// respect to every coordinate of the three touched rows.
double max_grad_rel_error(EmbeddingTable table, int u, int i, int j, double h = 1e-5) {
  const auto [loss, grad] = bpr_loss_and_grad(table, u, i, j);
  (void)loss;
  const int d = table.dim;

  double scale = 1e-8;
  double max_abs_err = 0.0;
  auto probe = [&](double* coord, double analytic) {
    const double original = *coord;
    *coord = original + h;
    const double up = bpr_loss_and_grad(table, u, i, j).first;
    *coord = original - h;
    const double down = bpr_loss_and_grad(table, u, i, j).first;
    *coord = original;
    const double numeric = (up - down) / (2.0 * h);
    max_abs_err = std::max(max_abs_err, std::abs(analytic - numeric));
    scale = std::max({scale, std::abs(analytic), std::abs(numeric)});
  };
  for (int c = 0; c < d; ++c) probe(table.user_row(u) + c, grad.user[c]);
  for (int c = 0; c < d; ++c) probe(table.item_row(i) + c, grad.pos[c]);
  for (int c = 0; c < d; ++c) probe(table.item_row(j) + c, grad.neg[c]);
  return max_abs_err / scale;
}

}  // namespace

TEST_CASE("init_embeddings determinism and degenerate scale") {
  const auto a = init_embeddings(5, 7, 8, 123);
  const auto b = init_embeddings(5, 7, 8, 123);
  CHECK(a.user_embeddings == b.user_embeddings);
  CHECK(a.item_embeddings == b.item_embeddings);

  const auto c = init_embeddings(5, 7, 8, 124);
  CHECK(a.user_embeddings != c.user_embeddings);

  auto zero = init_embeddings(2, 2, 4, 1, 0.0);
  for (double x : zero.user_embeddings) CHECK(x == 0.0);
  zero.scorer_mode = ScorerMode::kNormalized;
  CHECK_THROWS_AS(score(zero, 0, 0), NumericalError);
}

TEST_CASE("init_embeddings sample mean within 5 sigma") {
  const int n = 1024, m = 1024, d = 64;
  const double scale = 0.1;
  const auto t = init_embeddings(n, m, d, 2024, scale);
  double sum = 0.0;
  for (double x : t.user_embeddings) sum += x;
  for (double x : t.item_embeddings) sum += x;
  const double count = static_cast<double>(n + m) * d;
  const double mean = sum / count;
  CHECK(std::abs(mean) <= 5.0 * scale / std::sqrt(count));
}

TEST_CASE("score in both modes") {
  SUBCASE("collinear vectors give tau") {
    const auto t = manual_table({{1.0, 2.0, 3.0}}, {{2.0, 4.0, 6.0}}, ScorerMode::kNormalized, 2.0);
    CHECK(score(t, 0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("orthogonal vectors give zero") {
    const auto t = manual_table({{1.0, 0.0}}, {{0.0, 5.0}}, ScorerMode::kNormalized, 3.0);
    CHECK(score(t, 0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("45 degrees gives 1/sqrt(2)") {
    const auto t = manual_table({{1.0, 0.0}}, {{1.0, 1.0}}, ScorerMode::kNormalized, 1.0);
    CHECK(score(t, 0, 0) == doctest::Approx(0.7071067811865476).epsilon(1e-12));
  }
  SUBCASE("dot mode is the inner product") {
    const auto t = manual_table({{1.0, 2.0}}, {{3.0, -1.0}}, ScorerMode::kDot);
    CHECK(score(t, 0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("bpr loss closed-form values") {
  SUBCASE("equal scores give ln 2") {
    const auto t = manual_table({{0.0, 0.0}}, {{1.0, 0.0}, {0.0, 1.0}}, ScorerMode::kDot);
    const auto [loss, grad] = bpr_loss_and_grad(t, 0, 0, 1);
    CHECK(loss == doctest::Approx(0.6931471805599453).epsilon(1e-12));
    CHECK(grad.pos[0] == doctest::Approx(0.0));  // c * u with u = 0
  }
  SUBCASE("score gap of one gives ln(1 + e^-1)") {
    const auto t = manual_table({{1.0}}, {{1.0}, {0.0}}, ScorerMode::kDot);
    const auto [loss, grad] = bpr_loss_and_grad(t, 0, 0, 1);
    CHECK(loss == doctest::Approx(0.31326168751822286).epsilon(1e-12));
  }
  SUBCASE("identical positive and negative rejected") {
    const auto t = manual_table({{1.0}}, {{1.0}, {0.0}}, ScorerMode::kDot);
    CHECK_THROWS_WITH_AS(bpr_loss_and_grad(t, 0, 1, 1), "positive equals negative", UsageError);
  }
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(99);
  for (const auto mode : {ScorerMode::kDot, ScorerMode::kNormalized}) {
    for (const double l2 : {0.0, 0.01}) {
      for (int rep = 0; rep < 50; ++rep) {
        auto t = init_embeddings(4, 6, 4, rng(), 0.4);
        t.scorer_mode = mode;
        t.tau = 1.0 + 2.0 * uniform_unit(rng);
        t.l2 = l2;
        const int u = static_cast<int>(uniform_below(rng, 4));
        const int i = static_cast<int>(uniform_below(rng, 6));
        int j = static_cast<int>(uniform_below(rng, 6));
        if (j == i) j = (j + 1) % 6;
        CHECK(max_grad_rel_error(t, u, i, j) <= 1e-4);
      }
    }
  }
}

TEST_CASE("bounded scores in normalized mode") {
  Rng rng(5);
  auto t = init_embeddings(6, 9, 5, 11, 0.3);
  t.scorer_mode = ScorerMode::kNormalized;
  t.tau = 2.5;
  for (int u = 0; u < 6; ++u) {
    for (int i = 0; i < 9; ++i) {
      CHECK(std::abs(score(t, u, i)) <= t.tau + 1e-12);
    }
  }
}

TEST_CASE("user magnitude does not change rankings in normalized mode") {
  auto t = init_embeddings(3, 20, 6, 31, 0.3);
  t.scorer_mode = ScorerMode::kNormalized;
  t.tau = 1.5;

  auto ranking = [&](int u) {
    std::vector<int> order(t.item_count);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const double sa = score(t, u, a), sb = score(t, u, b);
      if (sa != sb) return sa > sb;
      return a < b;
    });
    return order;
  };
  const auto before = ranking(1);
  for (int c = 0; c < t.dim; ++c) t.user_row(1)[c] *= 7.5;
  CHECK(ranking(1) == before);
}

TEST_CASE("loss strictly decreases as the score gap grows") {
  double previous = 1e18;
  for (double x = -2.0; x <= 2.0; x += 0.25) {
    const auto t = manual_table({{1.0}}, {{x}, {0.0}}, ScorerMode::kDot);
    const double loss = bpr_loss_and_grad(t, 0, 0, 1).first;
    CHECK(loss < previous);
    previous = loss;
  }
}

TEST_CASE("checkpoint round trip is exact") {
  namespace fs = std::filesystem;
  auto t = init_embeddings(7, 9, 5, 321, 0.2);
  t.scorer_mode = ScorerMode::kNormalized;
  t.tau = 2.25;
  t.l2 = 1e-5;
  const fs::path path =
      fs::temp_directory_path() / ("itfr_ckpt_" + std::to_string(Rng(std::random_device{}())()));
  save_checkpoint(t, path);
  const auto loaded = load_checkpoint(path);
  fs::remove(path);

  CHECK(loaded.user_count == t.user_count);
  CHECK(loaded.item_count == t.item_count);
  CHECK(loaded.dim == t.dim);
  CHECK(loaded.scorer_mode == t.scorer_mode);
  CHECK(loaded.tau == t.tau);
  CHECK(loaded.l2 == t.l2);
  CHECK(loaded.seed == t.seed);
  CHECK(std::memcmp(loaded.user_embeddings.data(), t.user_embeddings.data(),
                    t.user_embeddings.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(loaded.item_embeddings.data(), t.item_embeddings.data(),
                    t.item_embeddings.size() * sizeof(double)) == 0);
}
