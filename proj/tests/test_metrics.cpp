#include <doctest.h>

#include "kfdiff/errors.hpp"
#include "kfdiff/metrics.hpp"
#include "support.hpp"

using namespace kfdiff;

TEST_SUITE("metrics") {
  TEST_CASE("ADE hand cases") {
    std::mt19937_64 rng(1);
    const MatrixF gt = test::random_matrix<float>(10, 4, rng);
    const KeyframeMask m = KeyframeMask::from_indices(10, {3});
    const std::vector<MatrixF> same{gt};
    CHECK(ade(gt, same, m) == 0.0);
    const std::vector<MatrixF> two{test::random_matrix<float>(10, 4, rng), gt};
    CHECK(ade(gt, two, m) == 0.0);

    MatrixF zeros(3, 4), ones(3, 4);
    ones.fill(1.0f);
    const std::vector<MatrixF> s1{ones};
    CHECK(ade(zeros, s1, KeyframeMask::from_indices(3, {})) == doctest::Approx(2.0));
    CHECK_THROWS_AS(ade(zeros, std::vector<MatrixF>{}, KeyframeMask::from_indices(3, {})), InputError);
  }

  TEST_CASE("ADE is non-increasing as samples are added") {
    std::mt19937_64 rng(2);
    const MatrixF gt = test::random_matrix<float>(12, 5, rng);
    const KeyframeMask m = KeyframeMask::from_indices(12, {0, 6});
    std::vector<MatrixF> samples;
    double prev = 1e300;
    for (int i = 0; i < 8; ++i) {
      samples.push_back(test::random_matrix<float>(12, 5, rng));
      const double v = ade(gt, samples, m);
      CHECK(v <= prev);
      prev = v;
    }
  }

  TEST_CASE("K-Err hand cases") {
    MatrixF gen(6, 3), kf(6, 3);
    const std::vector<int> idx{1, 4};
    CHECK(k_err(gen, kf, idx) == 0.0);
    gen(1, 0) = 1.0f;
    CHECK(k_err(gen, kf, std::vector<int>{1}) == doctest::Approx(1.0));
    gen(4, 2) = 3.0f;
    CHECK(k_err(gen, kf, idx) == doctest::Approx(2.0));
    CHECK_THROWS_AS(k_err(gen, kf, std::vector<int>{}), InputError);
  }

  TEST_CASE("K-TranS hand cases") {
    MatrixF gen(5, 2), kf(5, 2);
    gen.fill(1.0f);
    kf.fill(1.0f);
    CHECK(k_trans(gen, kf, std::vector<int>{2}) == 0.0);
    gen(3, 1) = 2.0f;  // one neighbour off by unit L2
    CHECK(k_trans(gen, kf, std::vector<int>{2}) == doctest::Approx(0.5));
    // Boundary keyframe uses its single neighbour.
    MatrixF g2(4, 1), k2(4, 1);
    g2(1, 0) = 2.0f;
    CHECK(k_trans(g2, k2, std::vector<int>{0}) == doctest::Approx(2.0));
  }

  TEST_CASE("diversity: identical samples, determinism and the exhaustive-pairing oracle") {
    std::mt19937_64 rng(3);
    const MatrixF one = test::random_matrix<float>(6, 3, rng);
    const std::vector<MatrixF> same(6, one);
    CHECK(diversity(same, 10, 1) == 0.0);
    std::vector<MatrixF> mixed;
    for (int i = 0; i < 6; ++i) mixed.push_back(test::random_matrix<float>(6, 3, rng));
    CHECK(diversity(mixed, 10, 5) == diversity(mixed, 10, 5));

    // Two clusters at distance c; 4 samples (2 per cluster). With pair_count = 2
    // every split uses both cross pairs. Average over many seeds approaches
    // the expectation over all 4! orderings.
    const double c = 3.0;
    MatrixF a(1, 1), b(1, 1);
    b(0, 0) = static_cast<float>(c);
    const std::vector<MatrixF> four{a, a, b, b};
    int order[4] = {0, 1, 2, 3};
    double exact = 0.0;
    int count = 0;
    do {
      double d = 0.0;
      for (int p = 0; p < 2; ++p) d += std::abs(four[order[p]](0, 0) - four[order[2 + p]](0, 0));
      exact += d / 2.0;
      ++count;
    } while (std::next_permutation(order, order + 4));
    exact /= count;
    CHECK(exact == doctest::Approx(2.0 * c / 3.0));
    double mean = 0.0;
    const int seeds = 4000;
    for (int s = 0; s < seeds; ++s) mean += diversity(four, 2, s) / seeds;
    CHECK(mean == doctest::Approx(exact).epsilon(0.05));
  }

  TEST_CASE("Frechet distance: identity, symmetry and the Gaussian closed form") {
    std::mt19937_64 rng(4);
    std::vector<MatrixF> set;
    for (int i = 0; i < 30; ++i) set.push_back(test::random_matrix<float>(20, 4, rng));
    CHECK(frechet_feature_distance(set, set) < 1e-6);
    std::vector<MatrixF> other;
    for (int i = 0; i < 30; ++i) other.push_back(test::random_matrix<float>(20, 4, rng, 2.0));
    CHECK(std::abs(frechet_feature_distance(set, other) - frechet_feature_distance(other, set)) < 1e-8);
    CHECK(motion_features(set[0]).size() == 2 * 4 + 2);

    std::normal_distribution<double> g;
    const int n = 20000;
    MatrixD fa(n, 1), fb(n, 1);
    for (int i = 0; i < n; ++i) fa(i, 0) = g(rng), fb(i, 0) = 1.0 + g(rng);
    CHECK(frechet_distance(fa, fb) == doctest::Approx(1.0).epsilon(0.1));

    // Rank-deficient covariances stay finite.
    MatrixD flat(5, 3);
    CHECK(std::isfinite(frechet_distance(flat, flat)));
    CHECK_THROWS_AS(frechet_distance(MatrixD(1, 3), flat), InputError);
  }
}
