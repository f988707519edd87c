#include <catch2/catch_amalgamated.hpp>

#include <flowinfer/graph.hpp>
#include <flowinfer/rng.hpp>

#include "support.hpp"

#include <cmath>
#include <random>

using namespace flowinfer;
using testsupport::FdCheck;
using testsupport::random_matrix;

TEST_CASE("elementwise op values") {
    Tape t;
    Tensor x = t.constant_scalar(0.0);
    REQUIRE(t.tanh(x).value().data[0] == 0.0);

    Tensor v = t.constant_scalar(4.2);
    REQUIRE(t.exp(t.log(v)).value().data[0] == Catch::Approx(4.2).epsilon(1e-12));
}

TEST_CASE("matmul identity") {
    Tape t;
    Tensor eye = t.constant(Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}}));
    Tensor col = t.constant(Matrix::from_rows({{3.0}, {5.0}}));
    Tensor out = t.matmul(eye, col);
    REQUIRE(out.value()(0, 0) == 3.0);
    REQUIRE(out.value()(1, 0) == 5.0);
}

TEST_CASE("backward of x^2 and tanh") {
    {
        Parameter p("x", Matrix::scalar(3.0));
        Tape t;
        Tensor x = t.param(p);
        Tensor loss = t.pow(x, 2.0);
        t.backward(loss);
        REQUIRE(p.grad.data[0] == Catch::Approx(6.0).epsilon(1e-14));
    }
    {
        Parameter p("x", Matrix::scalar(0.0));
        Tape t;
        Tensor x = t.param(p);
        Tensor loss = t.tanh(x);
        t.backward(loss);
        REQUIRE(p.grad.data[0] == Catch::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("backward of sum(A*v) matches finite differences") {
    std::mt19937_64 rng(11);
    FdCheck fd;
    fd.rel_tol = 1e-6;
    bool ok = fd.run(
        [](Tape& t, std::vector<Tensor>& in) { return t.matmul(in[0], in[1]); },
        {random_matrix(3, 3, rng), random_matrix(3, 1, rng)});
    INFO("max combined error " << fd.max_err);
    REQUIRE(ok);
}

TEST_CASE("finite differences across every registered op") {
    std::mt19937_64 rng(23);

    auto check = [&](const char* name, FdCheck::Builder b, std::vector<Matrix> inputs) {
        FdCheck fd;
        const bool ok = fd.run(b, std::move(inputs));
        INFO(name << ": max combined error " << fd.max_err);
        REQUIRE(ok);
    };

    check("add", [](Tape& t, auto& in) { return t.add(in[0], in[1]); },
          {random_matrix(3, 4, rng), random_matrix(3, 4, rng)});
    check("add scalar broadcast", [](Tape& t, auto& in) { return t.add(in[0], in[1]); },
          {random_matrix(3, 4, rng), random_matrix(1, 1, rng)});
    check("sub", [](Tape& t, auto& in) { return t.sub(in[0], in[1]); },
          {random_matrix(3, 4, rng), random_matrix(3, 4, rng)});
    check("sub scalar broadcast", [](Tape& t, auto& in) { return t.sub(in[1], in[0]); },
          {random_matrix(3, 4, rng), random_matrix(1, 1, rng)});
    check("mul", [](Tape& t, auto& in) { return t.mul(in[0], in[1]); },
          {random_matrix(3, 4, rng), random_matrix(3, 4, rng)});
    check("mul scalar broadcast", [](Tape& t, auto& in) { return t.mul(in[0], in[1]); },
          {random_matrix(1, 1, rng), random_matrix(3, 4, rng)});
    check("div", [](Tape& t, auto& in) { return t.div(in[0], in[1]); },
          {random_matrix(3, 4, rng), random_matrix(3, 4, rng, 0.5, 2.0)});
    check("matmul", [](Tape& t, auto& in) { return t.matmul(in[0], in[1]); },
          {random_matrix(2, 3, rng), random_matrix(3, 4, rng)});
    check("tanh", [](Tape& t, auto& in) { return t.tanh(in[0]); }, {random_matrix(3, 4, rng)});
    check("exp", [](Tape& t, auto& in) { return t.exp(in[0]); }, {random_matrix(3, 4, rng)});
    check("log", [](Tape& t, auto& in) { return t.log(in[0]); },
          {random_matrix(3, 4, rng, 0.2, 2.0)});
    // relu has a kink at zero; keep samples away from it
    {
        Matrix m = random_matrix(3, 4, rng);
        for (double& v : m.data)
            if (std::abs(v) < 1e-2) v += 0.5;
        check("relu", [](Tape& t, auto& in) { return t.relu(in[0]); }, {m});
    }
    check("sigmoid", [](Tape& t, auto& in) { return t.sigmoid(in[0]); }, {random_matrix(3, 4, rng)});
    check("pow int", [](Tape& t, auto& in) { return t.pow(in[0], 3.0); }, {random_matrix(3, 4, rng)});
    check("pow frac", [](Tape& t, auto& in) { return t.pow(in[0], 0.5); },
          {random_matrix(3, 4, rng, 0.3, 2.0)});
    check("sum", [](Tape& t, auto& in) { return t.sum(in[0]); }, {random_matrix(3, 4, rng)});
    check("mean", [](Tape& t, auto& in) { return t.mean(in[0]); }, {random_matrix(3, 4, rng)});
    check("row_sum", [](Tape& t, auto& in) { return t.row_sum(in[0]); }, {random_matrix(3, 4, rng)});
    check("col_mean", [](Tape& t, auto& in) { return t.col_mean(in[0]); },
          {random_matrix(5, 3, rng)});
    check("variance", [](Tape& t, auto& in) { return t.col_var(in[0]); },
          {random_matrix(6, 3, rng)});
    check("concat", [](Tape& t, auto& in) { return t.concat_cols({in[0], in[1], in[2]}); },
          {random_matrix(3, 2, rng), random_matrix(3, 1, rng), random_matrix(3, 3, rng)});
    check("slice", [](Tape& t, auto& in) { return t.slice_cols(in[0], 1, 3); },
          {random_matrix(3, 4, rng)});
    check("affine", [](Tape& t, auto& in) { return t.affine(in[0], in[1], in[2]); },
          {random_matrix(4, 3, rng), random_matrix(3, 5, rng), random_matrix(1, 5, rng)});
    {
        std::mt19937_64 mrng(5);
        auto mask = std::make_shared<Matrix>(3, 5);
        std::bernoulli_distribution coin(0.6);
        for (double& v : mask->data) v = coin(mrng) ? 1.0 : 0.0;
        check("masked_affine",
              [mask](Tape& t, auto& in) { return t.masked_affine(in[0], in[1], in[2], mask); },
              {random_matrix(4, 3, rng), random_matrix(3, 5, rng), random_matrix(1, 5, rng)});
    }
    check("batch_norm train",
          [](Tape& t, auto& in) { return t.batch_norm(in[0], in[1], in[2], 1e-5, true); },
          {random_matrix(6, 3, rng), random_matrix(1, 3, rng, -0.5, 0.5),
           random_matrix(1, 3, rng)});
    {
        Matrix rm = random_matrix(1, 3, rng, -0.5, 0.5);
        Matrix rv = random_matrix(1, 3, rng, 0.5, 1.5);
        check("batch_norm eval",
              [rm, rv](Tape& t, auto& in) {
                  return t.batch_norm(in[0], in[1], in[2], 1e-5, false, &rm, &rv);
              },
              {random_matrix(6, 3, rng), random_matrix(1, 3, rng, -0.5, 0.5),
               random_matrix(1, 3, rng)});
    }
}

TEST_CASE("gradients accumulate until zeroed") {
    Parameter p("x", Matrix::scalar(2.0));
    for (int pass = 0; pass < 2; ++pass) {
        Tape t;
        Tensor x = t.param(p);
        t.backward(t.pow(x, 2.0));
    }
    REQUIRE(p.grad.data[0] == Catch::Approx(8.0));
    p.zero_grad();
    REQUIRE(p.grad.data[0] == 0.0);
}

TEST_CASE("unreachable leaves keep zero grad") {
    Parameter used("a", Matrix::scalar(1.5));
    Parameter unused("b", Matrix::scalar(-0.5));
    Tape t;
    Tensor a = t.param(used);
    t.param(unused);
    t.backward(t.mul(a, a));
    REQUIRE(used.grad.data[0] == Catch::Approx(3.0));
    REQUIRE(unused.grad.data[0] == 0.0);
}

TEST_CASE("second backward on a consumed tape is rejected") {
    Parameter p("x", Matrix::scalar(1.0));
    Tape t;
    Tensor loss = t.pow(t.param(p), 2.0);
    t.backward(loss);
    REQUIRE_THROWS_AS(t.backward(loss), std::runtime_error);
}

TEST_CASE("non-scalar loss is rejected") {
    Parameter p("x", Matrix(2, 2, 1.0));
    Tape t;
    Tensor x = t.param(p);
    REQUIRE_THROWS_AS(t.backward(x), std::runtime_error);
}

TEST_CASE("shape and domain errors name the op") {
    Tape t;
    Tensor a = t.constant(Matrix(2, 3, 1.0));
    Tensor b = t.constant(Matrix(3, 3, 1.0));
    REQUIRE_THROWS_WITH(t.add(a, b), Catch::Matchers::ContainsSubstring("add") &&
                                         Catch::Matchers::ContainsSubstring("2x3") &&
                                         Catch::Matchers::ContainsSubstring("3x3"));
    REQUIRE_THROWS_WITH(t.matmul(a, a), Catch::Matchers::ContainsSubstring("matmul"));
    Tensor neg = t.constant_scalar(-1.0);
    REQUIRE_THROWS_AS(t.log(neg), std::runtime_error);
    Tensor zero = t.constant_scalar(0.0);
    REQUIRE_THROWS_AS(t.div(a, zero), std::runtime_error);
}

TEST_CASE("tape replay is bitwise deterministic") {
    std::mt19937_64 rng(99);
    Matrix a = random_matrix(4, 4, rng);
    Matrix v = random_matrix(4, 1, rng);

    auto run = [&]() {
        Parameter pa("a", a), pv("v", v);
        Tape t;
        Tensor out = t.tanh(t.matmul(t.param(pa), t.param(pv)));
        Tensor loss = t.mean(t.exp(out));
        t.backward(loss);
        std::vector<double> bits{loss.value().data[0]};
        bits.insert(bits.end(), pa.grad.data.begin(), pa.grad.data.end());
        bits.insert(bits.end(), pv.grad.data.begin(), pv.grad.data.end());
        return bits;
    };

    REQUIRE(run() == run());
}
