#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fastmath.hpp"
#include "graph.hpp"
#include "io.hpp"
#include "optim.hpp"
#include "sobol.hpp"

namespace flowinfer {

// A priori point cloud inside the limits hyper-rectangle. 'tensor' is the
// full Cartesian product of gridnum equispaced values per dimension
// (gridnum^d points); 'sobol' is gridnum low-discrepancy points.
struct PreGrid {
    enum class Kind { tensor, sobol };

    Kind kind = Kind::tensor;
    int gridnum = 4;
    Matrix points;  // n x d, normalized space
    Matrix values;  // n x m, true-model outputs (empty until populated)

    static Kind kind_from_string(const std::string& s) {
        if (s == "tensor") return Kind::tensor;
        if (s == "sobol") return Kind::sobol;
        throw std::runtime_error("unknown pre-grid kind '" + s + "'");
    }
};

inline PreGrid build_pre_grid(PreGrid::Kind kind, int gridnum,
                              const std::vector<std::pair<double, double>>& limits) {
    if (gridnum < 1) throw std::runtime_error("pre-grid: gridnum must be >= 1");
    const std::size_t d = limits.size();
    PreGrid grid;
    grid.kind = kind;
    grid.gridnum = gridnum;
    if (kind == PreGrid::Kind::tensor) {
        std::size_t n = 1;
        for (std::size_t j = 0; j < d; ++j) n *= static_cast<std::size_t>(gridnum);
        grid.points = Matrix(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t rem = i;
            for (std::size_t j = d; j-- > 0;) {
                const std::size_t idx = rem % static_cast<std::size_t>(gridnum);
                rem /= static_cast<std::size_t>(gridnum);
                const auto [lo, hi] = limits[j];
                grid.points(i, j) =
                    gridnum == 1 ? 0.5 * (lo + hi)
                                 : lo + (hi - lo) * static_cast<double>(idx) /
                                           static_cast<double>(gridnum - 1);
            }
        }
    } else {
        Matrix unit = SobolSequence::points(gridnum, static_cast<int>(d));
        grid.points = Matrix(static_cast<std::size_t>(gridnum), d);
        for (std::size_t i = 0; i < grid.points.rows; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const auto [lo, hi] = limits[j];
                grid.points(i, j) = lo + (hi - lo) * unit(i, j);
            }
    }
    return grid;
}

// Feed-forward regressor standing in for the expensive model inside the
// likelihood. Inputs live in the normalized domain; an affine map built from
// the limits box rescales them to [-1, 1] before the network. Adaptive
// batches are kept in an age-stamped archive and re-weighted by recency,
// while the pre-grid always keeps full weight, so the surrogate never
// forgets its initial coverage.
class SurrogateModel {
public:
    static constexpr int kHidden = 64;
    static constexpr double kArchiveDecay = 0.9;
    static constexpr double kLearningRate = 0.003;

    struct ArchiveBatch {
        int round = 0;
        Matrix points;
        Matrix values;
    };

    SurrogateModel() = default;

    SurrogateModel(std::string name, std::size_t input_dim, std::size_t output_dim,
                   std::vector<std::pair<double, double>> limits, PreGrid::Kind grid_kind,
                   int gridnum, std::mt19937_64& rng, long budget = 0)
        : name_(std::move(name)), d_(input_dim), m_(output_dim), limits_(std::move(limits)),
          budget_(budget) {
        if (limits_.size() != d_) throw std::runtime_error("surrogate: limits/input_dim mismatch");
        for (const auto& [lo, hi] : limits_)
            if (!(lo < hi)) throw std::runtime_error("surrogate: limits must satisfy low < high");
        grid_ = build_pre_grid(grid_kind, gridnum, limits_);
        init_network(rng);
    }

    const std::string& name() const { return name_; }
    std::size_t input_dim() const { return d_; }
    std::size_t output_dim() const { return m_; }
    const std::vector<std::pair<double, double>>& limits() const { return limits_; }
    const PreGrid& pre_grid() const { return grid_; }
    const std::vector<ArchiveBatch>& archive() const { return archive_; }
    long budget() const { return budget_; }
    int surr_pre_it = 40000;
    int surr_upd_it = 6000;

    // true-model evaluations consumed so far (pre-grid plus archive)
    long evals_used() const {
        long n = grid_.values.rows > 0 ? static_cast<long>(grid_.points.rows) : 0;
        for (const auto& b : archive_) n += static_cast<long>(b.points.rows);
        return n;
    }

    bool budget_allows(long extra) const { return budget_ <= 0 || evals_used() + extra <= budget_; }

    void set_pre_grid_values(Matrix values) {
        if (values.rows != grid_.points.rows || values.cols != m_)
            throw std::runtime_error("surrogate: pre-grid values shape mismatch");
        if (budget_ > 0 && static_cast<long>(grid_.points.rows) > budget_)
            throw std::runtime_error("surrogate: pre-grid size exceeds the evaluation budget");
        grid_.values = std::move(values);
    }

    double weight_of_round(int round) const {
        return std::pow(kArchiveDecay, static_cast<double>(next_round_ - 1 - round));
    }

    // L(w) = MSE(pre-grid) + sum_j decay^{R - r_j} MSE(batch j)
    double weighted_loss() const {
        double loss = mse_eval(grid_.points, grid_.values);
        for (const auto& b : archive_) loss += weight_of_round(b.round) * mse_eval(b.points, b.values);
        return loss;
    }

    double pre_grid_mse() const { return mse_eval(grid_.points, grid_.values); }

    double pre_train() {
        if (grid_.values.rows == 0) throw std::runtime_error("surrogate: pre-grid is empty");
        AdamOptimizer adam(param_ptrs());
        for (int it = 0; it < surr_pre_it; ++it) train_step(adam);
        final_pre_mse_ = pre_grid_mse();
        return final_pre_mse_;
    }

    void update(const Matrix& new_points, const Matrix& new_values) {
        if (new_points.rows < 1) throw std::runtime_error("surrogate update: needs >= 1 point");
        if (new_points.cols != d_ || new_values.cols != m_ || new_points.rows != new_values.rows)
            throw std::runtime_error("surrogate update: dimension mismatch (points " +
                                     shape_str(new_points.rows, new_points.cols) + ", values " +
                                     shape_str(new_values.rows, new_values.cols) + ")");
        if (!budget_allows(static_cast<long>(new_points.rows)))
            throw std::runtime_error("surrogate update: evaluation budget exceeded");
        ArchiveBatch batch;
        batch.round = next_round_++;
        batch.points = new_points;
        batch.values = new_values;
        archive_.push_back(std::move(batch));
        AdamOptimizer adam(param_ptrs());
        for (int it = 0; it < surr_upd_it; ++it) train_step(adam);
    }

    // Differentiable evaluation on the tape. Weights enter as constants
    // unless the caller is training the surrogate itself, so likelihood
    // gradients flow to the flow parameters through z only.
    Tensor forward(Tape& t, Tensor z, bool trainable_weights = false) {
        if (z.cols() != d_) throw std::runtime_error("surrogate forward: input width mismatch");
        Tensor h = t.affine(z, t.constant(scale_w_), t.constant(scale_b_));
        auto lift = [&](Parameter& p) {
            return trainable_weights ? t.param(p) : t.constant(p.value);
        };
        h = t.tanh(t.affine(h, lift(w_[0]), lift(b_[0])));
        h = t.tanh(t.affine(h, lift(w_[1]), lift(b_[1])));
        return t.affine(h, lift(w_[2]), lift(b_[2]));
    }

    // Fast evaluation path used by posterior predictive sampling and the
    // annealing diagnostics. Layers are computed tile-by-tile so each weight
    // row is reused across samples from L1, and the inner loops run along
    // contiguous weight rows so they vectorize.
    Matrix forward_eval(const Matrix& z) const {
        if (z.cols != d_) throw std::runtime_error("surrogate forward: input width mismatch");
        const std::size_t n = z.rows;
        Matrix scaled(n, d_);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < d_; ++k)
                scaled(i, k) = z(i, k) * scale_w_(k, k) + scale_b_(0, k);
        Matrix h0(n, static_cast<std::size_t>(kHidden));
        dense_layer(scaled, w_[0].value, b_[0].value, h0);
        fastmath::tanh_inplace(h0.data.data(), h0.size());
        Matrix h1(n, static_cast<std::size_t>(kHidden));
        dense_layer(h0, w_[1].value, b_[1].value, h1);
        fastmath::tanh_inplace(h1.data.data(), h1.size());
        Matrix out(n, m_);
        dense_layer(h1, w_[2].value, b_[2].value, out);
        return out;
    }

    void save(const std::string& path) const {
        std::vector<std::pair<std::string, const Matrix*>> arrays;
        Matrix meta(1, 6);
        meta(0, 0) = static_cast<double>(d_);
        meta(0, 1) = static_cast<double>(m_);
        meta(0, 2) = grid_.kind == PreGrid::Kind::tensor ? 0.0 : 1.0;
        meta(0, 3) = static_cast<double>(grid_.gridnum);
        meta(0, 4) = static_cast<double>(next_round_);
        meta(0, 5) = static_cast<double>(budget_);
        Matrix lim(d_, 2);
        for (std::size_t j = 0; j < d_; ++j) {
            lim(j, 0) = limits_[j].first;
            lim(j, 1) = limits_[j].second;
        }
        arrays.emplace_back("meta", &meta);
        arrays.emplace_back("limits", &lim);
        arrays.emplace_back("pregrid_points", &grid_.points);
        arrays.emplace_back("pregrid_values", &grid_.values);
        std::vector<Matrix> stamps(archive_.size());
        for (std::size_t i = 0; i < archive_.size(); ++i) {
            stamps[i] = Matrix::scalar(static_cast<double>(archive_[i].round));
            arrays.emplace_back("arch" + std::to_string(i) + ".round", &stamps[i]);
            arrays.emplace_back("arch" + std::to_string(i) + ".points", &archive_[i].points);
            arrays.emplace_back("arch" + std::to_string(i) + ".values", &archive_[i].values);
        }
        for (int l = 0; l < 3; ++l) {
            arrays.emplace_back(w_[l].name, &w_[l].value);
            arrays.emplace_back(b_[l].name, &b_[l].value);
        }
        snapshot::save(path, arrays);
    }

    static SurrogateModel load(const std::string& path) {
        const auto arrays = snapshot::load(path);
        const Matrix& meta = snapshot::find(arrays, "meta");
        if (meta.cols != 6) throw std::runtime_error("surrogate load: malformed meta field");
        SurrogateModel s;
        s.d_ = static_cast<std::size_t>(meta(0, 0));
        s.m_ = static_cast<std::size_t>(meta(0, 1));
        s.grid_.kind = meta(0, 2) == 0.0 ? PreGrid::Kind::tensor : PreGrid::Kind::sobol;
        s.grid_.gridnum = static_cast<int>(meta(0, 3));
        s.next_round_ = static_cast<int>(meta(0, 4));
        s.budget_ = static_cast<long>(meta(0, 5));
        const Matrix& lim = snapshot::find(arrays, "limits");
        if (lim.rows != s.d_ || lim.cols != 2)
            throw std::runtime_error("surrogate load: limits shape does not match declared dims");
        for (std::size_t j = 0; j < s.d_; ++j) s.limits_.emplace_back(lim(j, 0), lim(j, 1));
        s.grid_.points = snapshot::find(arrays, "pregrid_points");
        s.grid_.values = snapshot::find(arrays, "pregrid_values");
        if (s.grid_.points.cols != s.d_)
            throw std::runtime_error("surrogate load: pre-grid width does not match declared dims");
        if (s.grid_.values.rows != 0 &&
            (s.grid_.values.rows != s.grid_.points.rows || s.grid_.values.cols != s.m_))
            throw std::runtime_error("surrogate load: pre-grid values shape mismatch");
        for (int i = 0; snapshot::contains(arrays, "arch" + std::to_string(i) + ".round"); ++i) {
            ArchiveBatch b;
            b.round = static_cast<int>(
                snapshot::find(arrays, "arch" + std::to_string(i) + ".round").data[0]);
            b.points = snapshot::find(arrays, "arch" + std::to_string(i) + ".points");
            b.values = snapshot::find(arrays, "arch" + std::to_string(i) + ".values");
            if (b.points.cols != s.d_ || b.values.cols != s.m_ || b.points.rows != b.values.rows)
                throw std::runtime_error("surrogate load: archive batch " + std::to_string(i) +
                                         " shape mismatch");
            s.archive_.push_back(std::move(b));
        }
        s.build_scaling();
        const std::size_t dims_in[3] = {s.d_, kHidden, kHidden};
        const std::size_t dims_out[3] = {kHidden, kHidden, s.m_};
        for (int l = 0; l < 3; ++l) {
            const std::string wn = "net.W" + std::to_string(l);
            const std::string bn = "net.b" + std::to_string(l);
            const Matrix& wv = snapshot::find(arrays, wn);
            const Matrix& bv = snapshot::find(arrays, bn);
            if (wv.rows != dims_in[l] || wv.cols != dims_out[l] || bv.rows != 1 ||
                bv.cols != dims_out[l])
                throw std::runtime_error("surrogate load: weight '" + wn +
                                         "' shape does not match declared dims");
            s.w_[l] = Parameter(wn, wv);
            s.b_[l] = Parameter(bn, bv);
        }
        return s;
    }

private:
    std::string name_;
    std::size_t d_ = 0, m_ = 0;
    std::vector<std::pair<double, double>> limits_;
    long budget_ = 0;
    PreGrid grid_;
    std::vector<ArchiveBatch> archive_;
    int next_round_ = 1;
    double final_pre_mse_ = 0.0;
    Parameter w_[3], b_[3];
    Matrix scale_w_, scale_b_;  // fixed affine: limits box -> [-1, 1]

    void build_scaling() {
        scale_w_ = Matrix(d_, d_, 0.0);
        scale_b_ = Matrix(1, d_, 0.0);
        for (std::size_t j = 0; j < d_; ++j) {
            const auto [lo, hi] = limits_[j];
            scale_w_(j, j) = 2.0 / (hi - lo);
            scale_b_(0, j) = -(hi + lo) / (hi - lo);
        }
    }

    void init_network(std::mt19937_64& rng) {
        build_scaling();
        const std::size_t dims_in[3] = {d_, kHidden, kHidden};
        const std::size_t dims_out[3] = {kHidden, kHidden, m_};
        for (int l = 0; l < 3; ++l) {
            Matrix w(dims_in[l], dims_out[l]);
            const double bound = 1.0 / std::sqrt(static_cast<double>(dims_in[l]));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (double& v : w.data) v = dist(rng);
            w_[l] = Parameter("net.W" + std::to_string(l), std::move(w));
            b_[l] = Parameter("net.b" + std::to_string(l), Matrix(1, dims_out[l], 0.0));
        }
    }

    std::vector<Parameter*> param_ptrs() {
        return {&w_[0], &b_[0], &w_[1], &b_[1], &w_[2], &b_[2]};
    }

    // out = in * w + b, tiled over samples
    static void dense_layer(const Matrix& in, const Matrix& w, const Matrix& b, Matrix& out) {
        constexpr std::size_t kTile = 16;
        const std::size_t n = in.rows, K = in.cols, J = w.cols;
        const double* __restrict id = in.data.data();
        const double* __restrict wd = w.data.data();
        const double* __restrict bd = b.data.data();
        double* __restrict od = out.data.data();
        for (std::size_t i0 = 0; i0 < n; i0 += kTile) {
            const std::size_t i1 = std::min(n, i0 + kTile);
            for (std::size_t i = i0; i < i1; ++i) {
                double* __restrict orow = od + i * J;
                for (std::size_t j = 0; j < J; ++j) orow[j] = bd[j];
            }
            for (std::size_t k = 0; k < K; ++k) {
                const double* __restrict wrow = wd + k * J;
                for (std::size_t i = i0; i < i1; ++i) {
                    const double u = id[i * K + k];
                    double* __restrict orow = od + i * J;
                    for (std::size_t j = 0; j < J; ++j) orow[j] += u * wrow[j];
                }
            }
        }
    }

    double mse_eval(const Matrix& pts, const Matrix& vals) const {
        if (pts.rows == 0) return 0.0;
        const Matrix pred = forward_eval(pts);
        double acc = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double r = pred.data[i] - vals.data[i];
            acc += r * r;
        }
        return acc / static_cast<double>(pred.size());
    }

    void train_step(AdamOptimizer& adam) {
        adam.zero_grads();
        Tape t;
        Tensor loss = t.constant_scalar(0.0);
        {
            Tensor pred = forward(t, t.constant(grid_.points), true);
            Tensor res = t.sub(pred, t.constant(grid_.values));
            loss = t.add(loss, t.mean(t.mul(res, res)));
        }
        for (const auto& batch : archive_) {
            Tensor pred = forward(t, t.constant(batch.points), true);
            Tensor res = t.sub(pred, t.constant(batch.values));
            loss = t.add(loss, t.mul_scalar(t.mean(t.mul(res, res)),
                                            weight_of_round(batch.round)));
        }
        t.backward(loss);
        adam.step(kLearningRate);
    }
};

}  // namespace flowinfer
