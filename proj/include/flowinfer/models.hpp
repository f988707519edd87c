#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "graph.hpp"

namespace flowinfer {

inline constexpr double kBaryePerMmHg = 1333.22;

// ---------------------------------------------------------------------------
// Observations

struct ObservationSet {
    Matrix x;                    // m x n_repeats
    std::vector<double> x_star;  // generating mean, length m
    std::vector<double> sd;      // diagonal noise SDs, length m

    std::size_t n_outputs() const { return x.rows; }
    std::size_t n_repeats() const { return x.cols; }
};

// x_ij = x*_i + sd_i * eps, eps ~ N(0,1), independent per repeat.
inline ObservationSet make_observations(const std::vector<double>& x_star,
                                        const std::vector<double>& sd, std::size_t n_repeats,
                                        std::mt19937_64& rng) {
    if (x_star.size() != sd.size())
        throw std::runtime_error("make_observations: mean/sd length mismatch");
    if (n_repeats < 1) throw std::runtime_error("make_observations: n_repeats must be >= 1");
    ObservationSet obs;
    obs.x_star = x_star;
    obs.sd = sd;
    obs.x = Matrix(x_star.size(), n_repeats);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < x_star.size(); ++i)
        for (std::size_t r = 0; r < n_repeats; ++r)
            obs.x(i, r) = x_star[i] + sd[i] * normal(rng);
    return obs;
}

// ---------------------------------------------------------------------------
// Gaussian log-likelihood (constants included so tempering acts on the full
// log-joint; the noninformative uniform prior contributes zero)

inline std::vector<double> gaussian_log_density(const Matrix& outputs, const ObservationSet& obs) {
    const std::size_t m = obs.n_outputs();
    const std::size_t n = obs.n_repeats();
    if (outputs.cols != m)
        throw std::runtime_error("gaussian_log_density: output width " +
                                 std::to_string(outputs.cols) + " != " + std::to_string(m));
    std::vector<double> out(outputs.rows, 0.0);
    for (std::size_t s = 0; s < outputs.rows; ++s) {
        double lp = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double var = obs.sd[i] * obs.sd[i];
            if (!(var > 0.0)) throw std::runtime_error("gaussian_log_density: sd must be positive");
            const double c = -0.5 * std::log(2.0 * M_PI * var);
            for (std::size_t r = 0; r < n; ++r) {
                const double res = obs.x(i, r) - outputs(s, i);
                lp += c - res * res / (2.0 * var);
            }
        }
        out[s] = lp;
    }
    return out;
}

// Tape version via the expanded quadratic: per output i,
// sum_r -(out - x_ir)^2 / (2 v_i) = -(n out^2 - 2 out Sx_i + Sxx_i) / (2 v_i).
inline Tensor gaussian_log_density(Tape& t, Tensor outputs, const ObservationSet& obs) {
    const std::size_t m = obs.n_outputs();
    const double n = static_cast<double>(obs.n_repeats());
    if (outputs.cols() != m)
        throw std::runtime_error("gaussian_log_density: output width " +
                                 std::to_string(outputs.cols()) + " != " + std::to_string(m));
    Matrix w_sq(m, 1), w_lin(m, 1);
    double constant = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double var = obs.sd[i] * obs.sd[i];
        if (!(var > 0.0)) throw std::runtime_error("gaussian_log_density: sd must be positive");
        double sx = 0.0, sxx = 0.0;
        for (std::size_t r = 0; r < obs.n_repeats(); ++r) {
            sx += obs.x(i, r);
            sxx += obs.x(i, r) * obs.x(i, r);
        }
        w_sq(i, 0) = -n / (2.0 * var);
        w_lin(i, 0) = sx / var;
        constant += -sxx / (2.0 * var) - 0.5 * n * std::log(2.0 * M_PI * var);
    }
    Tensor quad = t.matmul(t.pow(outputs, 2.0), t.constant(w_sq));
    Tensor lin = t.matmul(outputs, t.constant(w_lin));
    return t.add_scalar(t.add(quad, lin), constant);
}

// ---------------------------------------------------------------------------
// Model interface

// A black-box forward model: pure, deterministic, row-wise independent.
class Model {
public:
    virtual ~Model() = default;
    virtual std::string name() const = 0;
    virtual std::size_t input_dim() const = 0;
    virtual std::size_t output_dim() const = 0;
    virtual std::vector<double> default_params() const = 0;
    virtual Matrix solve_t(const Matrix& params) const = 0;

    // Differentiable graph for closed-form models; ODE-based models do not
    // provide one (the surrogate exists precisely to avoid differentiating
    // through the solver).
    virtual bool has_graph() const { return false; }
    virtual Tensor graph(Tape&, Tensor) const {
        throw std::runtime_error(name() + ": no differentiable graph available");
    }
};

// ---------------------------------------------------------------------------
// Closed-form 2D map: f(z) = (z1^3/10 + e^{z2/3}, z1^3/10 - e^{z2/3})

class TrivialModel : public Model {
public:
    std::string name() const override { return "trivial"; }
    std::size_t input_dim() const override { return 2; }
    std::size_t output_dim() const override { return 2; }
    std::vector<double> default_params() const override { return {3.0, 5.0}; }

    Matrix solve_t(const Matrix& z) const override {
        if (z.cols != 2) throw std::runtime_error("trivial: expects 2 inputs");
        Matrix out(z.rows, 2);
        for (std::size_t i = 0; i < z.rows; ++i) {
            const double cube = z(i, 0) * z(i, 0) * z(i, 0) / 10.0;
            const double e = std::exp(z(i, 1) / 3.0);
            out(i, 0) = cube + e;
            out(i, 1) = cube - e;
        }
        return out;
    }

    bool has_graph() const override { return true; }

    Tensor graph(Tape& t, Tensor z) const override {
        Tensor z1 = t.slice_cols(z, 0, 1);
        Tensor z2 = t.slice_cols(z, 1, 2);
        Tensor cube = t.mul_scalar(t.pow(z1, 3.0), 0.1);
        Tensor e = t.exp(t.mul_scalar(z2, 1.0 / 3.0));
        return t.concat_cols({t.add(cube, e), t.sub(cube, e)});
    }
};

// ---------------------------------------------------------------------------
// Over-parameterized 5 -> 4 map through the Sobol' function:
// f(z) = A g(e^z), g_i(r) = (2|2 a_i - 1| + r_i) / (1 + r_i)

class HighdimModel : public Model {
public:
    static constexpr std::array<double, 5> a_coeff = {0.084, 0.229, 0.913, 0.152, 0.826};

    static double g_const(std::size_t i) { return 2.0 * std::abs(2.0 * a_coeff[i] - 1.0); }

    static std::array<double, 5> sobol_g(const std::array<double, 5>& r) {
        std::array<double, 5> g{};
        for (std::size_t i = 0; i < 5; ++i) g[i] = (g_const(i) + r[i]) / (1.0 + r[i]);
        return g;
    }

    // inverse of g_i on its range (1, c_i): r = (c_i - y) / (y - 1)
    static std::array<double, 5> sobol_g_inv(const std::array<double, 5>& y) {
        std::array<double, 5> r{};
        for (std::size_t i = 0; i < 5; ++i) {
            const double c = g_const(i);
            r[i] = (c - y[i]) / (y[i] - 1.0);
            if (!(r[i] > 0.0)) throw std::runtime_error("sobol_g_inv: value outside the range of g");
        }
        return r;
    }

    // A is bidiagonal over (i, i+1) scaled by 1/sqrt(2); v = (1,-1,1,-1,1)
    // spans its null space.
    static Matrix a_matrix() {
        Matrix A(4, 5, 0.0);
        const double s = 1.0 / std::sqrt(2.0);
        for (std::size_t i = 0; i < 4; ++i) {
            A(i, i) = s;
            A(i, i + 1) = s;
        }
        return A;
    }

    std::string name() const override { return "highdim"; }
    std::size_t input_dim() const override { return 5; }
    std::size_t output_dim() const override { return 4; }
    std::vector<double> default_params() const override { return {2.75, -1.5, 0.25, -2.5, 1.75}; }

    Matrix solve_t(const Matrix& z) const override {
        if (z.cols != 5) throw std::runtime_error("highdim: expects 5 inputs");
        const Matrix A = a_matrix();
        Matrix out(z.rows, 4, 0.0);
        for (std::size_t s = 0; s < z.rows; ++s) {
            std::array<double, 5> r{};
            for (std::size_t j = 0; j < 5; ++j) r[j] = std::exp(z(s, j));
            const auto g = sobol_g(r);
            for (std::size_t i = 0; i < 4; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < 5; ++j) acc += A(i, j) * g[j];
                out(s, i) = acc;
            }
        }
        return out;
    }

    bool has_graph() const override { return true; }

    Tensor graph(Tape& t, Tensor z) const override {
        const std::size_t batch = z.rows();
        Matrix cmat(batch, 5), ones(batch, 5, 1.0);
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t j = 0; j < 5; ++j) cmat(i, j) = g_const(j);
        Tensor r = t.exp(z);
        Tensor g = t.div(t.add(r, t.constant(cmat)), t.add(r, t.constant(ones)));
        Matrix At(5, 4, 0.0);
        const Matrix A = a_matrix();
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 5; ++j) At(j, i) = A(i, j);
        return t.matmul(g, t.constant(At));
    }
};

// ---------------------------------------------------------------------------
// Classical fixed-step RK4

// rhs(t, y, dy): evaluates algebraic variables inline, then the derivative.
// Returns the trajectory including the initial state ((steps + 1) rows).
template <class Rhs>
Matrix rk4_dae(Rhs&& rhs, const std::vector<double>& y0, double t0, double t1, int steps) {
    if (steps < 1) throw std::runtime_error("rk4: steps must be >= 1");
    const std::size_t dim = y0.size();
    const double h = (t1 - t0) / static_cast<double>(steps);
    Matrix traj(static_cast<std::size_t>(steps) + 1, dim);
    std::vector<double> y = y0, k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);
    for (std::size_t j = 0; j < dim; ++j) traj(0, j) = y[j];
    for (int s = 0; s < steps; ++s) {
        const double tcur = t0 + h * static_cast<double>(s);
        rhs(tcur, y, k1);
        for (std::size_t j = 0; j < dim; ++j) tmp[j] = y[j] + 0.5 * h * k1[j];
        rhs(tcur + 0.5 * h, tmp, k2);
        for (std::size_t j = 0; j < dim; ++j) tmp[j] = y[j] + 0.5 * h * k2[j];
        rhs(tcur + 0.5 * h, tmp, k3);
        for (std::size_t j = 0; j < dim; ++j) tmp[j] = y[j] + h * k3[j];
        rhs(tcur + h, tmp, k4);
        for (std::size_t j = 0; j < dim; ++j) {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            if (!std::isfinite(y[j]))
                throw std::runtime_error("rk4: non-finite state at step " + std::to_string(s + 1));
            traj(static_cast<std::size_t>(s) + 1, j) = y[j];
        }
    }
    return traj;
}

// ---------------------------------------------------------------------------
// Aortic inflow waveform. The bundled pulse is a four-harmonic Fourier series
// on a 60/72 s cycle (mean 41.0 ml/s, range ~[28, 63]) calibrated so the RC
// and RCR models below reproduce their reference pressure triples
// (78.28, 101.12, 85.75) and (100.96, 148.02, 116.50) mmHg at the default
// parameters. A two-column (t, Q) table spanning one period may override it;
// tables are linearly interpolated and wrapped.

class InflowWaveform {
public:
    static constexpr double kDefaultCycle = 60.0 / 72.0;
    // q0, then (cos, sin) pairs per harmonic; first-harmonic phase fixed
    static constexpr double kMeanFlow = 40.9965151697;
    static constexpr double kHarmonics[4][2] = {{-14.8292615629, 0.0},
                                                {8.1437878004, 2.0176989900},
                                                {-1.6801636044, -0.5553919618},
                                                {-2.3184257594, -0.7598260591}};

    InflowWaveform() : cycle_(kDefaultCycle) {}

    InflowWaveform(std::vector<double> times, std::vector<double> flows)
        : cycle_(times.empty() ? kDefaultCycle : times.back()), times_(std::move(times)),
          flows_(std::move(flows)) {
        if (times_.size() != flows_.size() || times_.size() < 2)
            throw std::runtime_error("waveform table: needs matching (t, Q) columns, >= 2 rows");
        if (times_.front() != 0.0)
            throw std::runtime_error("waveform table: must start at t = 0");
        for (std::size_t i = 1; i < times_.size(); ++i)
            if (times_[i] <= times_[i - 1])
                throw std::runtime_error("waveform table: times must increase");
    }

    static InflowWaveform from_csv(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("waveform file '" + path + "' not readable");
        std::vector<double> ts, qs;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            // skip a header row
            if (line.find_first_not_of("0123456789+-.eE, \t\r") != std::string::npos) continue;
            std::istringstream ls(line);
            std::string a, b;
            if (!std::getline(ls, a, ',') || !std::getline(ls, b)) continue;
            ts.push_back(std::stod(a));
            qs.push_back(std::stod(b));
        }
        return InflowWaveform(std::move(ts), std::move(qs));
    }

    double cycle_length() const { return cycle_; }

    double operator()(double t) const {
        double u = std::fmod(t, cycle_);
        if (u < 0.0) u += cycle_;
        if (times_.empty()) {
            // higher harmonics by angle-addition recurrence: one sincos total
            const double a = 2.0 * M_PI * u / cycle_;
            const double c1 = std::cos(a), s1 = std::sin(a);
            double ck = c1, sk = s1;
            double q = kMeanFlow;
            for (int k = 0; k < 4; ++k) {
                if (k > 0) {
                    const double c = ck * c1 - sk * s1;
                    sk = sk * c1 + ck * s1;
                    ck = c;
                }
                q += kHarmonics[k][0] * ck + kHarmonics[k][1] * sk;
            }
            return q;
        }
        auto it = std::upper_bound(times_.begin(), times_.end(), u);
        if (it == times_.begin()) return flows_.front();
        if (it == times_.end()) return flows_.back();
        const std::size_t hi = static_cast<std::size_t>(it - times_.begin());
        const std::size_t lo = hi - 1;
        const double w = (u - times_[lo]) / (times_[hi] - times_[lo]);
        return flows_[lo] + w * (flows_[hi] - flows_[lo]);
    }

    // mean flow over one cycle (trapezoid on a fine grid)
    double mean_flow(int samples = 4096) const {
        double acc = 0.0;
        for (int i = 0; i < samples; ++i)
            acc += (*this)(cycle_ * (static_cast<double>(i) + 0.5) / samples);
        return acc / samples;
    }

private:
    double cycle_;
    std::vector<double> times_, flows_;
};

// ---------------------------------------------------------------------------
// Windkessel models. Parameters in CGS (Barye s/ml, ml/Barye); pressures
// reported in mmHg. Integration: 10 cycles at 1000 RK4 steps each starting
// from P = 55 mmHg; statistics over the final cycle.

struct WindkesselSetup {
    InflowWaveform waveform;
    double distal_pressure_mmhg = 55.0;
    int steps_per_cycle = 1000;
    int n_cycles = 10;
};

// Two-element (RC): Q_d = (P_p - P_d)/R, dP_p/dt = (Q_p - Q_d)/C.
class RcModel : public Model {
public:
    explicit RcModel(WindkesselSetup setup = {}) : setup_(std::move(setup)) {}

    std::string name() const override { return "rc"; }
    std::size_t input_dim() const override { return 2; }
    std::size_t output_dim() const override { return 3; }
    std::vector<double> default_params() const override { return {1000.0, 5e-5}; }

    Matrix solve_t(const Matrix& params) const override {
        if (params.cols != 2) throw std::runtime_error("rc: expects (R, C)");
        Matrix out(params.rows, 3);
        for (std::size_t s = 0; s < params.rows; ++s) {
            const double R = params(s, 0), C = params(s, 1);
            const double pd = setup_.distal_pressure_mmhg * kBaryePerMmHg;
            auto rhs = [&](double t, const std::vector<double>& y, std::vector<double>& dy) {
                const double qd = (y[0] - pd) / R;
                dy[0] = (setup_.waveform(t) - qd) / C;
            };
            const auto stats = pressure_stats(rhs, {pd}, [](double, const std::vector<double>& y) {
                return y[0];
            });
            out(s, 0) = stats[0];
            out(s, 1) = stats[1];
            out(s, 2) = stats[2];
        }
        return out;
    }

    const WindkesselSetup& setup() const { return setup_; }

protected:
    WindkesselSetup setup_;

    // integrates and reports (min, max, mean) of the observable over the final
    // cycle, converted to mmHg
    template <class Rhs, class Observe>
    std::array<double, 3> pressure_stats(Rhs&& rhs, std::vector<double> y0,
                                         Observe&& observe) const {
        const double tc = setup_.waveform.cycle_length();
        const int n = setup_.steps_per_cycle;
        const double h = tc / static_cast<double>(n);
        std::vector<double> y = std::move(y0);
        std::vector<double> k1(y.size()), k2(y.size()), k3(y.size()), k4(y.size()), tmp(y.size());
        double pmin = 0.0, pmax = 0.0, psum = 0.0;
        const int total = setup_.n_cycles * n;
        const int last_start = (setup_.n_cycles - 1) * n;
        for (int s = 0; s < total; ++s) {
            const double t = h * static_cast<double>(s);
            if (s == last_start) {
                const double p = observe(t, y);
                pmin = pmax = p;
                psum = 0.0;
            }
            rhs(t, y, k1);
            for (std::size_t j = 0; j < y.size(); ++j) tmp[j] = y[j] + 0.5 * h * k1[j];
            rhs(t + 0.5 * h, tmp, k2);
            for (std::size_t j = 0; j < y.size(); ++j) tmp[j] = y[j] + 0.5 * h * k2[j];
            rhs(t + 0.5 * h, tmp, k3);
            for (std::size_t j = 0; j < y.size(); ++j) tmp[j] = y[j] + h * k3[j];
            rhs(t + h, tmp, k4);
            for (std::size_t j = 0; j < y.size(); ++j) {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                if (!std::isfinite(y[j]))
                    throw std::runtime_error("windkessel: non-finite state at step " +
                                             std::to_string(s + 1));
            }
            if (s >= last_start) {
                const double p = observe(t + h, y);
                pmin = std::min(pmin, p);
                pmax = std::max(pmax, p);
                psum += p;
            }
        }
        const double inv = 1.0 / kBaryePerMmHg;
        return {pmin * inv, pmax * inv, psum / static_cast<double>(n) * inv};
    }
};

// Three-element (RCR): state P_c, observable P_p = P_c + Q_p R_p.
class RcrModel : public RcModel {
public:
    explicit RcrModel(WindkesselSetup setup = {}) : RcModel(std::move(setup)) {}

    std::string name() const override { return "rcr"; }
    std::size_t input_dim() const override { return 3; }
    std::size_t output_dim() const override { return 3; }
    std::vector<double> default_params() const override { return {1000.0, 1000.0, 5e-5}; }

    Matrix solve_t(const Matrix& params) const override {
        if (params.cols != 3) throw std::runtime_error("rcr: expects (R_p, R_d, C)");
        Matrix out(params.rows, 3);
        for (std::size_t s = 0; s < params.rows; ++s) {
            const double rp = params(s, 0), rd = params(s, 1), C = params(s, 2);
            const double pd = setup_.distal_pressure_mmhg * kBaryePerMmHg;
            auto rhs = [&](double t, const std::vector<double>& y, std::vector<double>& dy) {
                const double qd = (y[0] - pd) / rd;
                dy[0] = (setup_.waveform(t) - qd) / C;
            };
            const auto stats =
                pressure_stats(rhs, {pd}, [&](double t, const std::vector<double>& y) {
                    return y[0] + setup_.waveform(t) * rp;
                });
            out(s, 0) = stats[0];
            out(s, 1) = stats[1];
            out(s, 2) = stats[2];
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Modified Friedman regression: mu_i = b1 sin(pi x_i1 x_i2)
// + b2^2 (x_i3 - b3)^2 + sum_{j>=4} b_j x_ij. The squared b2 makes the
// posterior symmetric in the sign of b2.

class FriedmanModel : public Model {
public:
    explicit FriedmanModel(Matrix design) : x_(std::move(design)) {
        if (x_.cols != 10) throw std::runtime_error("friedman: design matrix must have 10 columns");
        sin_term_.resize(x_.rows);
        for (std::size_t i = 0; i < x_.rows; ++i)
            sin_term_[i] = std::sin(M_PI * x_(i, 0) * x_(i, 1));
    }

    static Matrix random_design(std::size_t n, std::mt19937_64& rng) {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        Matrix x(n, 10);
        for (double& v : x.data) v = unit(rng);
        return x;
    }

    std::string name() const override { return "friedman"; }
    std::size_t input_dim() const override { return 10; }
    std::size_t output_dim() const override { return x_.rows; }
    std::vector<double> default_params() const override {
        return {10.0, std::sqrt(20.0), 0.5, 10.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    }

    const Matrix& design() const { return x_; }

    Matrix solve_t(const Matrix& beta) const override {
        if (beta.cols != 10) throw std::runtime_error("friedman: expects 10 coefficients");
        Matrix mu(beta.rows, x_.rows);
        for (std::size_t s = 0; s < beta.rows; ++s) {
            const double b1 = beta(s, 0);
            const double b2sq = beta(s, 1) * beta(s, 1);
            const double b3 = beta(s, 2);
            for (std::size_t i = 0; i < x_.rows; ++i) {
                const double dx = x_(i, 2) - b3;
                double acc = b1 * sin_term_[i] + b2sq * dx * dx;
                for (std::size_t j = 3; j < 10; ++j) acc += beta(s, j) * x_(i, j);
                mu(s, i) = acc;
            }
        }
        return mu;
    }

    bool has_graph() const override { return true; }

    // Expands b2^2 (x3 - b3)^2 = b2^2 x3^2 - 2 b2^2 b3 x3 + b2^2 b3^2 so every
    // term is a (batch x 1) coefficient times a constant row.
    Tensor graph(Tape& t, Tensor beta) const override {
        const std::size_t n = x_.rows;
        Matrix sin_row(1, n), x3_row(1, n), x3sq_row(1, n), ones_row(1, n, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            sin_row(0, i) = sin_term_[i];
            x3_row(0, i) = x_(i, 2);
            x3sq_row(0, i) = x_(i, 2) * x_(i, 2);
        }
        Matrix lin(7, n);
        for (std::size_t j = 3; j < 10; ++j)
            for (std::size_t i = 0; i < n; ++i) lin(j - 3, i) = x_(i, j);

        Tensor b1 = t.slice_cols(beta, 0, 1);
        Tensor b2sq = t.pow(t.slice_cols(beta, 1, 2), 2.0);
        Tensor b3 = t.slice_cols(beta, 2, 3);
        Tensor rest = t.slice_cols(beta, 3, 10);

        Tensor mu = t.matmul(b1, t.constant(sin_row));
        mu = t.add(mu, t.matmul(b2sq, t.constant(x3sq_row)));
        mu = t.add(mu, t.matmul(t.mul_scalar(t.mul(b2sq, b3), -2.0), t.constant(x3_row)));
        mu = t.add(mu, t.matmul(t.mul(b2sq, t.mul(b3, b3)), t.constant(ones_row)));
        mu = t.add(mu, t.matmul(rest, t.constant(lin)));
        return mu;
    }

private:
    Matrix x_;
    std::vector<double> sin_term_;
};

// ---------------------------------------------------------------------------
// Synthetic observation generation (per-benchmark noise rules live with the
// benchmark definitions; this is the generic mechanism)

inline ObservationSet gen_data(const Model& model, const std::vector<double>& sd,
                               std::size_t n_repeats, std::mt19937_64& rng) {
    Matrix truth(1, model.input_dim());
    const auto def = model.default_params();
    for (std::size_t j = 0; j < def.size(); ++j) truth(0, j) = def[j];
    const Matrix out = model.solve_t(truth);
    std::vector<double> x_star(out.cols);
    for (std::size_t i = 0; i < out.cols; ++i) x_star[i] = out(0, i);
    if (sd.size() != x_star.size()) throw std::runtime_error("gen_data: sd length mismatch");
    // zero-noise generation is allowed (degenerate SDs are rejected only by
    // the likelihood)
    ObservationSet obs;
    obs.x_star = x_star;
    obs.sd = sd;
    obs.x = Matrix(x_star.size(), n_repeats);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < x_star.size(); ++i)
        for (std::size_t r = 0; r < n_repeats; ++r)
            obs.x(i, r) = x_star[i] + sd[i] * normal(rng);
    return obs;
}

}  // namespace flowinfer
