#include <doctest.h>

#include <cmath>

#include "kfdiff/attention.hpp"
#include "kfdiff/errors.hpp"
#include "support.hpp"

using namespace kfdiff;

TEST_SUITE("attention") {
  TEST_CASE("two valid tokens in d=2 blend by the hand-computed softmax") {
    MatrixD q(1, 2), k(3, 2), v(3, 2);
    q(0, 0) = 1.0;
    q(0, 1) = 0.0;
    k(0, 0) = 1.0;  // logit 1/sqrt(2)
    k(1, 0) = 0.0;  // logit 0
    k(2, 0) = 50.0; // invalid, would dominate if unmasked
    v(0, 0) = 1.0, v(0, 1) = 2.0;
    v(1, 0) = -1.0, v(1, 1) = 4.0;
    v(2, 0) = 100.0, v(2, 1) = 100.0;
    const std::vector<char> valid{1, 1, 0};
    const auto r = masked_attention(q, k, v, 1, valid);
    const double e0 = std::exp(1.0 / std::sqrt(2.0)), e1 = 1.0;
    const double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
    CHECK(r.out(0, 0) == doctest::Approx(w0 * 1.0 + w1 * -1.0).epsilon(1e-12));
    CHECK(r.out(0, 1) == doctest::Approx(w0 * 2.0 + w1 * 4.0).epsilon(1e-12));
    CHECK(r.probs(0, 2) == 0.0);
  }

  TEST_CASE("all-valid mask equals plain softmax attention") {
    std::mt19937_64 rng(1);
    const MatrixD q = test::random_matrix<double>(5, 8, rng), k = test::random_matrix<double>(7, 8, rng),
                  v = test::random_matrix<double>(7, 8, rng);
    const auto r = masked_attention(q, k, v, 2, {});
    for (int h = 0; h < 2; ++h)
      for (int i = 0; i < 5; ++i) {
        std::vector<double> logits(7);
        double mx = -1e300, z = 0.0;
        for (int j = 0; j < 7; ++j) {
          double s = 0.0;
          for (int c = 0; c < 4; ++c) s += q(i, h * 4 + c) * k(j, h * 4 + c);
          logits[j] = s / 2.0;
          mx = std::max(mx, logits[j]);
        }
        for (double& l : logits) z += (l = std::exp(l - mx));
        for (int c = 0; c < 4; ++c) {
          double o = 0.0;
          for (int j = 0; j < 7; ++j) o += logits[j] / z * v(j, h * 4 + c);
          CHECK(std::abs(r.out(i, h * 4 + c) - o) < 1e-6);
        }
      }
  }

  TEST_CASE("invalid keys get negligible weight and one valid key returns its value") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
      const int lk = 3 + trial % 9;
      const MatrixF q = test::random_matrix<float>(4, 8, rng, 3.0), k = test::random_matrix<float>(lk, 8, rng, 3.0),
                    v = test::random_matrix<float>(lk, 8, rng);
      std::vector<char> valid(lk, 0);
      valid[trial % lk] = 1;
      if (trial % 2) valid[(trial * 7 + 1) % lk] = 1;
      const auto r = masked_attention(q, k, v, 2, valid);
      for (std::size_t row = 0; row < r.probs.rows(); ++row)
        for (int j = 0; j < lk; ++j)
          if (!valid[j]) REQUIRE(r.probs(row, j) < 1e-8f);
      if (trial % 2 == 0) {
        for (int i = 0; i < 4; ++i)
          for (int c = 0; c < 8; ++c) REQUIRE(std::abs(r.out(i, c) - v(trial % lk, c)) < 1e-6f);
      }
    }
  }

  TEST_CASE("inactive queries produce zero rows") {
    std::mt19937_64 rng(3);
    const MatrixD q = test::random_matrix<double>(3, 4, rng), k = test::random_matrix<double>(3, 4, rng),
                  v = test::random_matrix<double>(3, 4, rng);
    const std::vector<char> active{1, 0, 1};
    const auto r = masked_attention(q, k, v, 1, {}, active);
    for (int c = 0; c < 4; ++c) CHECK(r.out(1, c) == 0.0);
    CHECK(r.out(0, 0) != 0.0);
  }

  TEST_CASE("no valid key is a precondition error") {
    MatrixF q(2, 4), k(2, 4), v(2, 4);
    const std::vector<char> none{0, 0};
    CHECK_THROWS_AS(masked_attention(q, k, v, 1, none), PreconditionError);
  }
}
