#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowinfer {

enum class SchedulerKind { fixed_linear, adaann };

// 'fixed' and 'Linear' are two spellings of the constant-increment scheduler.
inline SchedulerKind scheduler_from_string(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "adaann") return SchedulerKind::adaann;
    if (s == "fixed" || s == "linear") return SchedulerKind::fixed_linear;
    throw std::runtime_error("unknown scheduler '" + s + "' (expected AdaAnn, fixed, or Linear)");
}

// Inverse-temperature schedule state. The tempered target is p^t(z, x); t
// starts at t0 and increases monotonically to exactly 1.
class AnnealingState {
public:
    double t = 1.0;
    SchedulerKind scheduler = SchedulerKind::adaann;
    double t0 = 0.05;
    double tol = 0.01;  // KL tolerance tau
    int M = 1000;       // MC samples for the adaptive step
    int K = 10;         // constant-increment step count
    int T0 = 500, T = 5, T1 = 5000;
    int N = 100, N1 = 100;

    AnnealingState() = default;

    void reset() {
        if (!(t0 > 0.0 && t0 <= 1.0)) throw std::runtime_error("annealing: t0 must be in (0, 1]");
        t = t0;
        linear_step_ = 0;
    }

    bool done() const { return t >= 1.0; }

    // t_j = t0 + j (1 - t0) / K; exactly K increments land on 1.
    double linear_next() {
        if (done()) return t;
        ++linear_step_;
        if (linear_step_ >= K) {
            t = 1.0;
        } else {
            t = std::min(1.0, t0 + static_cast<double>(linear_step_) * (1.0 - t0) /
                                       static_cast<double>(K));
        }
        return t;
    }

    // eps_k = tol / sqrt(Var[log p(z, x)]) with the variance estimated from M
    // realizations of the untempered log-joint under the current approximant.
    double adaann_next(const std::vector<double>& log_p_values) {
        if (done()) return t;
        if (log_p_values.size() < 2)
            throw std::runtime_error("adaann: needs at least 2 log-density samples");
        const double n = static_cast<double>(log_p_values.size());
        double mean = 0.0;
        for (double v : log_p_values) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : log_p_values) var += (v - mean) * (v - mean);
        var /= (n - 1.0);
        if (var <= 0.0)
            throw std::runtime_error("adaann: degenerate annealed posterior (zero variance of log p)");
        const double eps = tol / std::sqrt(var);
        t = std::min(1.0, t + eps);
        return t;
    }

    // (parameter updates at this temperature, batch size); t = 1 wins when
    // t0 == 1 so an annealed run started at the target matches the plain one.
    std::pair<int, int> schedule_params() const {
        if (t >= 1.0) return {T1, N1};
        if (t == t0) return {T0, N};
        return {T, N};
    }

private:
    int linear_step_ = 0;
};

}  // namespace flowinfer
