#pragma once

// Shared helpers for the unit suites: finite-difference gradient oracle,
// random matrix generation, simple statistics.

#include <flowinfer/graph.hpp>
#include <flowinfer/rng.hpp>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace testsupport {

using flowinfer::Matrix;
using flowinfer::Parameter;
using flowinfer::Tape;
using flowinfer::Tensor;

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -2.0,
                            double hi = 2.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(r, c);
    for (double& v : m.data) v = dist(rng);
    return m;
}

// Builds a scalar loss from an arbitrary-shaped op output by contracting with
// fixed random weights, so every output entry influences the loss.
struct FdCheck {
    double h = 1e-5;
    double rel_tol = 1e-5;
    double abs_tol = 1e-8;

    // builder(tape, inputs) -> op output tensor (any shape)
    using Builder = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

    double max_err = 0.0;  // worst combined error over all checked entries

    bool run(const Builder& build, std::vector<Matrix> inputs, std::uint64_t seed = 7) {
        std::mt19937_64 wrng(seed);
        Matrix weights;
        {
            Tape probe;
            std::vector<Tensor> ts;
            ts.reserve(inputs.size());
            for (auto& m : inputs) ts.push_back(probe.leaf(m, false));
            Tensor out = build(probe, ts);
            weights = random_matrix(out.rows(), out.cols(), wrng, -1.0, 1.0);
        }

        auto loss_value = [&](const std::vector<Matrix>& ins) {
            Tape t;
            std::vector<Tensor> ts;
            ts.reserve(ins.size());
            for (const auto& m : ins) ts.push_back(t.leaf(m, false));
            Tensor out = build(t, ts);
            Tensor loss = t.sum(t.mul(out, t.constant(weights)));
            return loss.value().data[0];
        };

        // analytic gradients
        std::vector<Parameter> params;
        params.reserve(inputs.size());
        for (std::size_t i = 0; i < inputs.size(); ++i)
            params.emplace_back("p" + std::to_string(i), inputs[i]);
        {
            Tape t;
            std::vector<Tensor> ts;
            for (auto& p : params) ts.push_back(t.param(p));
            Tensor out = build(t, ts);
            Tensor loss = t.sum(t.mul(out, t.constant(weights)));
            t.backward(loss);
        }

        bool ok = true;
        for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
            for (std::size_t k = 0; k < inputs[pi].size(); ++k) {
                std::vector<Matrix> plus = inputs, minus = inputs;
                plus[pi].data[k] += h;
                minus[pi].data[k] -= h;
                const double numeric = (loss_value(plus) - loss_value(minus)) / (2.0 * h);
                const double analytic = params[pi].grad.data[k];
                const double abs_err = std::abs(analytic - numeric);
                const double scale = std::max(std::abs(analytic), std::abs(numeric));
                const double err = abs_err <= abs_tol ? 0.0 : abs_err / std::max(scale, 1e-300);
                max_err = std::max(max_err, err);
                if (abs_err > abs_tol && abs_err > rel_tol * scale) ok = false;
            }
        }
        return ok;
    }
};

inline double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double sample_variance(const std::vector<double>& xs) {
    const double m = mean_of(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

}  // namespace testsupport
