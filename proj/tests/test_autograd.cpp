#include <doctest.h>

#include "kfdiff/autograd.hpp"
#include "kfdiff/errors.hpp"
#include "support.hpp"

using namespace kfdiff;
using namespace kfdiff::ag;

namespace {

// Builds a scalar objective sum(W_out .* f(x)) so every output entry matters,
// then checks d/dx against central differences.
using Builder = std::function<Var(Tape<double>&, Var)>;

void check_input_grad(const Builder& build, const MatrixD& x0, double tol = 1e-6) {
  std::mt19937_64 rng(99);
  Tape<double> probe(false);
  const MatrixD out_shape = probe.value(build(probe, probe.constant(x0)));
  const MatrixD weights = test::random_matrix<double>(out_shape.rows(), out_shape.cols(), rng);
  auto objective = [&](const MatrixD& x) {
    Tape<double> t(false);
    const MatrixD& y = t.value(build(t, t.constant(x)));
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += weights[i] * y[i];
    return s;
  };
  Tape<double> tape(true);
  const Var x = tape.input(x0);
  const Var y = build(tape, x);
  tape.backward(y, weights);
  const MatrixD analytic = tape.grad(x);
  const MatrixD numeric = test::numeric_grad(objective, x0);
  for (std::size_t i = 0; i < analytic.size(); ++i)
    REQUIRE(test::rel_err(analytic[i], numeric[i], 1e-6) < tol);
}

}  // namespace

TEST_SUITE("autograd") {
  TEST_CASE("elementwise and shape ops have correct gradients") {
    std::mt19937_64 rng(1);
    const MatrixD x = test::random_matrix<double>(4, 6, rng);
    const MatrixD w = test::random_matrix<double>(6, 3, rng);
    const MatrixD b = test::random_matrix<double>(1, 3, rng);
    const MatrixD other = test::random_matrix<double>(4, 6, rng);

    check_input_grad([&](Tape<double>& t, Var v) { return linear(t, v, t.constant(w), t.constant(b)); }, x);
    check_input_grad([&](Tape<double>& t, Var v) { return matmul(t, v, t.constant(w)); }, x);
    check_input_grad([&](Tape<double>& t, Var v) { return gelu(t, v); }, x);
    check_input_grad([&](Tape<double>& t, Var v) { return silu(t, v); }, x);
    check_input_grad([&](Tape<double>& t, Var v) { return scale(t, add(t, v, v), 0.5); }, x);
    check_input_grad([&](Tape<double>& t, Var v) { return add_const(t, v, other); }, x);
    check_input_grad([&](Tape<double>& t, Var v) { return concat_cols(t, v, t.constant(other)); }, x);
    check_input_grad([&](Tape<double>& t, Var v) { return slice_rows(t, v, 1, 2); }, x);
    check_input_grad(
        [&](Tape<double>& t, Var v) {
          const std::array<Var, 2> parts{v, slice_rows(t, v, 0, 1)};
          return concat_rows(t, std::span<const Var>(parts));
        },
        x);
    check_input_grad([&](Tape<double>& t, Var v) { return broadcast_rows(t, slice_rows(t, v, 2, 1), 5); }, x);
    check_input_grad([&](Tape<double>& t, Var v) { return add_row(t, t.constant(other), slice_rows(t, v, 3, 1)); },
                     x);
    const std::vector<char> use{1, 0, 0, 1};
    check_input_grad(
        [&](Tape<double>& t, Var v) { return select_rows(t, v, slice_rows(t, t.constant(other), 0, 1), use); }, x);
    check_input_grad([&](Tape<double>& t, Var v) { return select_rows(t, t.constant(other), slice_rows(t, v, 1, 1), use); },
                     x);
  }

  TEST_CASE("layer norm gradients w.r.t. input, gain and bias") {
    std::mt19937_64 rng(2);
    const MatrixD x = test::random_matrix<double>(3, 8, rng);
    const MatrixD g = test::random_matrix<double>(1, 8, rng), b = test::random_matrix<double>(1, 8, rng);
    check_input_grad([&](Tape<double>& t, Var v) { return layer_norm(t, v, t.constant(g), t.constant(b)); }, x);
    check_input_grad([&](Tape<double>& t, Var v) { return layer_norm(t, t.constant(x), v, t.constant(b)); }, g);
    check_input_grad([&](Tape<double>& t, Var v) { return layer_norm(t, t.constant(x), t.constant(g), v); }, b);
  }

  TEST_CASE("fused attention gradients w.r.t. q, k and v under masks") {
    std::mt19937_64 rng(3);
    const MatrixD q = test::random_matrix<double>(5, 8, rng), k = test::random_matrix<double>(6, 8, rng),
                  v = test::random_matrix<double>(6, 8, rng);
    const std::vector<char> valid{1, 0, 1, 1, 0, 1};
    const std::vector<char> active{1, 1, 0, 1, 1};
    check_input_grad([&](Tape<double>& t, Var x) { return attention(t, x, t.constant(k), t.constant(v), 2, valid, active); }, q);
    check_input_grad([&](Tape<double>& t, Var x) { return attention(t, t.constant(q), x, t.constant(v), 2, valid, active); }, k);
    check_input_grad([&](Tape<double>& t, Var x) { return attention(t, t.constant(q), t.constant(k), x, 2, valid, active); }, v);
  }

  TEST_CASE("embedding mean routes gradient to the looked-up rows only") {
    std::mt19937_64 rng(4);
    const MatrixD table = test::random_matrix<double>(6, 4, rng);
    const std::vector<int> ids{1, 3, 3};
    check_input_grad([&](Tape<double>& t, Var v) { return embedding_mean(t, v, ids); }, table);
    Tape<double> t(true);
    const Var tv = t.input(table);
    const Var e = embedding_mean(t, tv, ids);
    MatrixD seed(1, 4);
    seed.fill(1.0);
    t.backward(e, seed);
    CHECK(t.grad(tv)(0, 0) == 0.0);
    CHECK(t.grad(tv)(1, 0) == doctest::Approx(1.0 / 3.0));
    CHECK(t.grad(tv)(3, 0) == doctest::Approx(2.0 / 3.0));
    const std::vector<int> bad{7};
    CHECK_THROWS_AS(embedding_mean(t, tv, bad), InputError);
  }

  TEST_CASE("parameters accumulate gradients across graphs") {
    ParameterSet<double> ps;
    ps.add("w", MatrixD(2, 2));
    ps.at("w").value(0, 0) = 1.0;
    MatrixD x(1, 2);
    x(0, 0) = 2.0, x(0, 1) = 3.0;
    MatrixD seed(1, 2);
    seed.fill(1.0);
    for (int rep = 0; rep < 2; ++rep) {
      Tape<double> t(true);
      const Var y = matmul(t, t.constant(x), t.param(ps.at("w")));
      t.backward(y, seed);
    }
    CHECK(ps.at("w").grad(0, 0) == 4.0);
    CHECK(ps.at("w").grad(1, 1) == 6.0);
    ps.zero_grad();
    CHECK(ps.at("w").grad(1, 1) == 0.0);
    CHECK(ps.scalar_count() == 4);
  }

  TEST_CASE("non-recording tapes refuse backward") {
    Tape<double> t(false);
    const Var v = t.input(MatrixD(1, 1));
    CHECK_THROWS_AS(t.backward(v, MatrixD(1, 1)), PreconditionError);
  }
}
