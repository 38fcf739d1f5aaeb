#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "itfr/balance.hpp"

using namespace itfr;

namespace {

// Dense buffer over `rows` parameter rows of width `dim`.
std::vector<double> dense(int rows, int dim) { return std::vector<double>(rows * dim, 0.0); }

}  // namespace

TEST_CASE("pairwise_contribution") {
  const int dim = 2, rows = 4;

  SUBCASE("orthogonal directions contribute nothing") {
    SparseGradient g(dim);
    g.row(0)[0] = 1.0;
    auto acc = dense(rows, dim);
    acc[0 * dim + 1] = 5.0;  // orthogonal to g
    CHECK(pairwise_contribution(g, 1.0, acc, 1.0, 1.0) == doctest::Approx(0.0).epsilon(1e-15));
  }

  SUBCASE("parallel directions: sqrt(4) * sqrt(1) * 1 = 2") {
    SparseGradient g(dim);
    g.row(1)[0] = 0.3;
    auto acc = dense(rows, dim);
    acc[1 * dim + 0] = 2.0;
    CHECK(pairwise_contribution(g, 4.0, acc, 1.0, 1.0) == doctest::Approx(2.0).epsilon(1e-12));
  }

  SUBCASE("anti-parallel directions: conflict of -1") {
    SparseGradient g(dim);
    g.row(2)[1] = 1.5;
    auto acc = dense(rows, dim);
    acc[2 * dim + 1] = -4.0;
    CHECK(pairwise_contribution(g, 1.0, acc, 1.0, 1.0) == doctest::Approx(-1.0).epsilon(1e-12));
  }

  SUBCASE("vanishing norms give zero") {
    SparseGradient g(dim);
    g.row(0)[0] = 1e-13;
    auto acc = dense(rows, dim);
    acc[0] = 1.0;
    CHECK(pairwise_contribution(g, 1.0, acc, 1.0, 1.0) == 0.0);
    SparseGradient g2(dim);
    g2.row(0)[0] = 1.0;
    CHECK(pairwise_contribution(g2, 1.0, dense(rows, dim), 1.0, 1.0) == 0.0);
  }

  SUBCASE("alpha scales linearly") {
    SparseGradient g(dim);
    g.row(0)[0] = 1.0;
    auto acc = dense(rows, dim);
    acc[0] = 1.0;
    const double base = pairwise_contribution(g, 1.0, acc, 1.0, 1.0);
    CHECK(pairwise_contribution(g, 1.0, acc, 1.0, 2.5) == doctest::Approx(2.5 * base));
  }
}

TEST_CASE("beta_weights") {
  SUBCASE("gamma = 0 is uniform") {
    const auto beta = beta_weights(std::vector<double>{0.3, 0.1, 2.0, 0.7}, 0.0);
    for (double b : beta) CHECK(b == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("losses (1,2) with gamma 1 -> (1/3, 2/3)") {
    const auto beta = beta_weights(std::vector<double>{1.0, 2.0}, 1.0);
    CHECK(beta[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(beta[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("losses (1,2) with gamma 2 -> (0.2, 0.8)") {
    const auto beta = beta_weights(std::vector<double>{1.0, 2.0}, 2.0);
    CHECK(beta[0] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(beta[1] == doctest::Approx(0.8).epsilon(1e-12));
  }
  SUBCASE("all-zero losses fall back to uniform") {
    const auto beta = beta_weights(std::vector<double>{0.0, 0.0, 0.0}, 1.5);
    for (double b : beta) CHECK(b == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("absent groups are excluded and get zero") {
    const auto beta = beta_weights(std::vector<double>{1.0, absent(), 1.0}, 0.0);
    CHECK(beta[0] == doctest::Approx(0.5));
    CHECK(beta[1] == 0.0);
    CHECK(beta[2] == doctest::Approx(0.5));
  }
  SUBCASE("beta always sums to one") {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> losses;
      for (int g = 0; g < 6; ++g) losses.push_back(uniform_unit(rng) * 2.0);
      const auto beta = beta_weights(losses, uniform_unit(rng) * 3.0);
      double sum = 0.0;
      for (double b : beta) sum += b;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

namespace {

// A miniature world for total_contributions: 2x2 cells over 4 parameter rows.
struct BalanceWorld {
  EpochGradientAccumulator acc{2, 2, 4, 2};
  BatchGroupResults batch;

  BalanceWorld() {
    batch.user_group_count = 2;
    batch.item_group_count = 2;
    batch.cells.resize(4);
  }

  void set_batch_cell(int cell, int row, double x, double y, double lhat) {
    batch.cells[cell].present = true;
    batch.cells[cell].plain_loss = lhat;
    batch.cells[cell].sharp_loss = lhat;
    batch.cells[cell].grad = SparseGradient(2);
    batch.cells[cell].grad.row(row)[0] = x;
    batch.cells[cell].grad.row(row)[1] = y;
  }

  void set_accum_cell(int cell, int row, double x, double y, double lbar) {
    SparseGradient g(2);
    g.row(row)[0] = x;
    g.row(row)[1] = y;
    acc.accumulate(cell, g, lbar, lbar);
  }
};

}  // namespace

TEST_CASE("total_contributions") {
  SUBCASE("single cell aligned with its own accumulator gives 1") {
    EpochGradientAccumulator acc(1, 1, 2, 2);
    SparseGradient g(2);
    g.row(0)[0] = 3.0;
    acc.accumulate(0, g, 1.0, 1.0);
    acc.roll_epoch();

    BatchGroupResults batch;
    batch.user_group_count = 1;
    batch.item_group_count = 1;
    batch.cells.resize(1);
    batch.cells[0].present = true;
    batch.cells[0].plain_loss = 1.0;
    batch.cells[0].sharp_loss = 1.0;
    batch.cells[0].grad = SparseGradient(2);
    batch.cells[0].grad.row(0)[0] = 0.5;  // parallel to the accumulator

    BalanceConfig cfg;
    cfg.alpha = 1.0;
    cfg.gamma = 1.0;
    const auto c = total_contributions(batch, acc, cfg);
    CHECK(c.total[0] == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("orthogonal accumulators give zero everywhere") {
    BalanceWorld w;
    w.set_batch_cell(0, 0, 1.0, 0.0, 0.8);
    w.set_batch_cell(3, 1, 2.0, 0.0, 0.4);
    w.set_accum_cell(0, 0, 0.0, 1.0, 0.5);
    w.set_accum_cell(3, 1, 0.0, -2.0, 0.5);
    w.acc.roll_epoch();

    BalanceConfig cfg;
    const auto c = total_contributions(w.batch, w.acc, cfg);
    for (double x : c.total) CHECK(x == doctest::Approx(0.0).epsilon(1e-15));
  }

  SUBCASE("2x2 case matches a direct double-loop evaluation") {
    Rng rng(71);
    for (int rep = 0; rep < 10; ++rep) {
      BalanceWorld w;
      std::vector<double> lhat(4), lbar(4);
      std::vector<std::array<double, 2>> batch_dirs(4), accum_dirs(4);
      for (int cell = 0; cell < 4; ++cell) {
        lhat[cell] = 0.1 + uniform_unit(rng);
        lbar[cell] = 0.1 + uniform_unit(rng);
        batch_dirs[cell] = {standard_normal(rng), standard_normal(rng)};
        accum_dirs[cell] = {standard_normal(rng), standard_normal(rng)};
        w.set_batch_cell(cell, cell, batch_dirs[cell][0], batch_dirs[cell][1], lhat[cell]);
        w.set_accum_cell(cell, cell, accum_dirs[cell][0], accum_dirs[cell][1], lbar[cell]);
      }
      w.acc.roll_epoch();
      BalanceConfig cfg;
      cfg.gamma = 2.0;
      const auto got = total_contributions(w.batch, w.acc, cfg);

      // Direct evaluation: beta over lbar^gamma, cosine between directions
      // (cells share a row only with themselves here).
      double beta_denom = 0.0;
      for (int ab = 0; ab < 4; ++ab) beta_denom += std::pow(lbar[ab], cfg.gamma);
      for (int g = 0; g < 4; ++g) {
        double expected = 0.0;
        for (int ab = 0; ab < 4; ++ab) {
          const double beta = std::pow(lbar[ab], cfg.gamma) / beta_denom;
          double cosine = 0.0;
          if (ab == g) {
            const double dot = batch_dirs[g][0] * accum_dirs[ab][0] +
                               batch_dirs[g][1] * accum_dirs[ab][1];
            const double ng = std::hypot(batch_dirs[g][0], batch_dirs[g][1]);
            const double na = std::hypot(accum_dirs[ab][0], accum_dirs[ab][1]);
            cosine = dot / (ng * na);
          }
          expected += beta * std::sqrt(lhat[g]) * std::sqrt(lbar[ab]) * cosine;
        }
        CHECK(got.total[g] == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }

  SUBCASE("requires a completed prior epoch") {
    BalanceWorld w;
    w.set_batch_cell(0, 0, 1.0, 0.0, 1.0);
    BalanceConfig cfg;
    CHECK_THROWS_AS(total_contributions(w.batch, w.acc, cfg), UsageError);
  }
}

TEST_CASE("update_weights") {
  SUBCASE("equal contributions leave weights exactly unchanged") {
    auto w = GroupWeights::uniform(4, 1.0);
    const auto before = w.w;
    ContributionVector c;
    c.total = {0.7, 0.7, 0.7, 0.7};
    update_weights(w, c, {true, true, true, true});
    CHECK(w.w == before);
  }

  SUBCASE("hand-computed two-group update") {
    GroupWeights w;
    w.w = {0.5, 0.5};
    w.eta = 1.0;
    ContributionVector c;
    c.total = {1.0, 0.0};
    update_weights(w, c, {true, true});
    CHECK(w.w[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-12));
    CHECK(w.w[1] == doctest::Approx(1.0 / (std::exp(1.0) + 1.0)).epsilon(1e-12));
    CHECK(w.w[0] == doctest::Approx(0.7310585786300049).epsilon(1e-10));
  }

  SUBCASE("repeated updates approach one but never reach it") {
    GroupWeights w;
    w.w = {0.5, 0.5};
    w.eta = 1.0;
    ContributionVector c;
    c.total = {1.0, 0.0};
    double previous = 0.5;
    for (int step = 0; step < 200; ++step) {
      update_weights(w, c, {true, true});
      // Strict growth until w[0] saturates at 1 ulp below 1; the loser's
      // share stays strictly positive forever.
      if (step < 30) {
        CHECK(w.w[0] > previous);
        CHECK(w.w[0] < 1.0);
      }
      CHECK(w.w[0] >= previous);
      CHECK(w.w[0] <= 1.0);
      CHECK(w.w[1] > 0.0);
      previous = w.w[0];
    }
  }

  SUBCASE("shift invariance is exact on dyadic inputs") {
    GroupWeights a, b;
    a.w = b.w = {0.25, 0.25, 0.5};
    a.eta = b.eta = 1.0;
    ContributionVector ca, cb;
    ca.total = {1.0, 2.0, 4.0};
    cb.total = {9.0, 10.0, 12.0};  // +8, exactly representable
    update_weights(a, ca, {true, true, true});
    update_weights(b, cb, {true, true, true});
    CHECK(a.w == b.w);
  }

  SUBCASE("absent groups keep their mass against a zero exponent") {
    GroupWeights w;
    w.w = {0.25, 0.25, 0.5};
    w.eta = 1.0;
    ContributionVector c;
    c.total = {std::log(2.0), 0.0, 0.0};
    update_weights(w, c, {true, false, false});
    // multipliers: (2, 1, 1) -> (0.5, 0.25, 0.5) / 1.25
    CHECK(w.w[0] == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(w.w[1] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(w.w[2] == doctest::Approx(0.4).epsilon(1e-12));
  }
}

TEST_CASE("groupdro_update") {
  SUBCASE("equal losses leave weights unchanged") {
    auto w = GroupWeights::uniform(3, 2.0);
    const auto before = w.w;
    groupdro_update(w, std::vector<double>{0.4, 0.4, 0.4});
    CHECK(w.w == before);
  }
  SUBCASE("hand-computed example") {
    GroupWeights w;
    w.w = {0.5, 0.5};
    w.eta = 1.0;
    groupdro_update(w, std::vector<double>{1.0, 0.0});
    CHECK(w.w[0] == doctest::Approx(0.7310585786300049).epsilon(1e-10));
    CHECK(w.w[1] == doctest::Approx(0.2689414213699951).epsilon(1e-10));
  }
  SUBCASE("eta = 0 never moves the weights") {
    GroupWeights w;
    w.w = {0.3, 0.2, 0.5};
    w.eta = 0.0;
    const auto before = w.w;
    groupdro_update(w, std::vector<double>{5.0, 0.1, 2.0});
    CHECK(w.w == before);
  }
  SUBCASE("larger loss overtakes an equal starting weight") {
    GroupWeights w;
    w.w = {0.5, 0.5};
    w.eta = 0.7;
    groupdro_update(w, std::vector<double>{0.9, 0.2});
    CHECK(w.w[0] > w.w[1]);
  }
  SUBCASE("simplex preserved across random update sequences") {
    Rng rng(13);
    GroupWeights w = GroupWeights::uniform(6, 0.3);
    for (int step = 0; step < 500; ++step) {
      std::vector<double> losses;
      for (int g = 0; g < 6; ++g) {
        losses.push_back(uniform_below(rng, 5) == 0 ? absent() : 2.0 * uniform_unit(rng));
      }
      groupdro_update(w, losses);
      double sum = 0.0;
      for (double x : w.w) {
        CHECK(x > 0.0);
        sum += x;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("combine_losses") {
  GroupWeights w;
  w.w = {0.25, 0.25, 0.25, 0.25};
  w.eta = 1.0;

  SUBCASE("uniform weights over present groups give the arithmetic mean") {
    const std::vector<double> losses{0.2, 0.4, 0.6, 0.8};
    CHECK(combine_losses(w, losses, {true, true, true, true}) ==
          doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("one-hot weights pick that group's loss") {
    GroupWeights hot;
    hot.w = {0.0, 1.0, 0.0, 0.0};
    const std::vector<double> losses{0.2, 0.4, 0.6, 0.8};
    CHECK(combine_losses(hot, losses, {true, true, true, true}) ==
          doctest::Approx(0.4).epsilon(1e-12));
  }
  SUBCASE("hand-computed weighted sum") {
    GroupWeights two;
    two.w = {0.25, 0.75};
    const std::vector<double> losses{0.4, 0.8};
    CHECK(combine_losses(two, losses, {true, true}) == doctest::Approx(0.7).epsilon(1e-12));
  }
  SUBCASE("renormalizes over the present groups only") {
    const std::vector<double> losses{0.2, absent(), 0.6, absent()};
    CHECK(combine_losses(w, losses, {true, false, true, false}) ==
          doctest::Approx(0.4).epsilon(1e-12));
  }
  SUBCASE("no present group is an error") {
    CHECK_THROWS_AS(combine_losses(w, std::vector<double>{absent(), absent(), absent(), absent()},
                                   {false, false, false, false}),
                    UsageError);
  }
}
