#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "graph.hpp"
#include "rng.hpp"

namespace flowinfer {

enum class Activation { relu, tanh, sigmoid };

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    throw std::runtime_error("unknown activation '" + s + "'");
}

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
    }
    return "?";
}

inline double activate_scalar(Activation a, double v) {
    switch (a) {
        case Activation::relu: return v > 0.0 ? v : 0.0;
        case Activation::tanh: return std::tanh(v);
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-v));
    }
    return v;
}

inline Tensor activate(Tape& t, Activation a, Tensor x) {
    switch (a) {
        case Activation::relu: return t.relu(x);
        case Activation::tanh: return t.tanh(x);
        case Activation::sigmoid: return t.sigmoid(x);
    }
    return x;
}

enum class InputOrder { sequential, random };

inline InputOrder input_order_from_string(const std::string& s) {
    if (s == "sequential") return InputOrder::sequential;
    if (s == "random") return InputOrder::random;
    throw std::runtime_error("unknown input_order '" + s + "'");
}

// Degree labels and boolean masks for a MADE conditioner. Masks are stored
// input x output to match y = x W. Hidden connections require
// deg(out) >= deg(in); the output mask requires deg(out) > deg(in), so output
// i depends only on inputs of strictly smaller degree.
struct MadeMasks {
    std::vector<int> input_degrees;                        // permutation of 1..d
    std::vector<std::vector<int>> hidden_degrees;          // one list per hidden layer
    std::vector<std::shared_ptr<const Matrix>> hidden_masks;
    std::shared_ptr<const Matrix> output_mask;             // hidden_size x d
};

inline MadeMasks build_masks_from_degrees(std::vector<int> input_degrees, int hidden_size,
                                          int n_hidden) {
    const int d = static_cast<int>(input_degrees.size());
    if (d < 1 || hidden_size < 1 || n_hidden < 1)
        throw std::runtime_error("build_masks: d, hidden_size and n_hidden must be >= 1");

    MadeMasks mm;
    mm.input_degrees = std::move(input_degrees);

    const int cycle = std::max(1, d - 1);
    for (int l = 0; l < n_hidden; ++l) {
        std::vector<int> degs(hidden_size);
        for (int k = 0; k < hidden_size; ++k) degs[k] = 1 + (k % cycle);
        mm.hidden_degrees.push_back(std::move(degs));
    }

    const std::vector<int>* prev = &mm.input_degrees;
    for (int l = 0; l < n_hidden; ++l) {
        const auto& cur = mm.hidden_degrees[l];
        auto mask = std::make_shared<Matrix>(prev->size(), cur.size(), 0.0);
        for (std::size_t i = 0; i < prev->size(); ++i)
            for (std::size_t j = 0; j < cur.size(); ++j)
                (*mask)(i, j) = cur[j] >= (*prev)[i] ? 1.0 : 0.0;
        mm.hidden_masks.push_back(std::move(mask));
        prev = &cur;
    }

    auto out_mask = std::make_shared<Matrix>(prev->size(), d, 0.0);
    for (std::size_t i = 0; i < prev->size(); ++i)
        for (int j = 0; j < d; ++j)
            (*out_mask)(i, j) = mm.input_degrees[static_cast<std::size_t>(j)] > (*prev)[i] ? 1.0 : 0.0;
    mm.output_mask = std::move(out_mask);
    return mm;
}

inline MadeMasks build_masks(int d, int hidden_size, int n_hidden, InputOrder order,
                             std::uint64_t seed) {
    std::vector<int> degrees(static_cast<std::size_t>(d));
    std::iota(degrees.begin(), degrees.end(), 1);
    if (order == InputOrder::random) {
        std::mt19937_64 rng(seed);
        std::shuffle(degrees.begin(), degrees.end(), rng);
    }
    return build_masks_from_degrees(std::move(degrees), hidden_size, n_hidden);
}

namespace detail {

inline void init_uniform(Matrix& w, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, w.rows)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : w.data) v = dist(rng);
}

inline Matrix masked_affine_eval(const Matrix& x, const Matrix& w, const Matrix* mask,
                                 const Matrix& b) {
    Matrix out(x.rows, w.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < w.cols; ++j) out(i, j) = b(0, j);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t k = 0; k < x.cols; ++k) {
            const double xv = x(i, k);
            if (xv == 0.0) continue;
            for (std::size_t j = 0; j < w.cols; ++j) {
                const double wv = mask ? w(k, j) * (*mask)(k, j) : w(k, j);
                out(i, j) += xv * wv;
            }
        }
    return out;
}

}  // namespace detail

// Masked autoencoder producing the conditioner pair (mu, alpha); the two
// output heads share the hidden trunk and the same output mask.
class MadeNetwork {
public:
    MadeNetwork() = default;
    MadeNetwork(int d, int hidden_size, int n_hidden, Activation act, MadeMasks masks,
                std::mt19937_64& rng, const std::string& prefix)
        : d_(d), hidden_size_(hidden_size), n_hidden_(n_hidden), act_(act),
          masks_(std::move(masks)) {
        int in = d;
        for (int l = 0; l < n_hidden; ++l) {
            Matrix w(in, hidden_size);
            detail::init_uniform(w, rng);
            hidden_w_.emplace_back(prefix + ".W" + std::to_string(l), std::move(w));
            hidden_b_.emplace_back(prefix + ".b" + std::to_string(l), Matrix(1, hidden_size, 0.0));
            in = hidden_size;
        }
        // zero-initialized heads make the block start as the identity map
        w_mu_ = Parameter(prefix + ".Wmu", Matrix(hidden_size, d, 0.0));
        b_mu_ = Parameter(prefix + ".bmu", Matrix(1, d, 0.0));
        w_alpha_ = Parameter(prefix + ".Walpha", Matrix(hidden_size, d, 0.0));
        b_alpha_ = Parameter(prefix + ".balpha", Matrix(1, d, 0.0));
    }

    int input_size() const { return d_; }
    const MadeMasks& masks() const { return masks_; }

    std::pair<Tensor, Tensor> forward(Tape& t, Tensor x) {
        Tensor h = x;
        for (int l = 0; l < n_hidden_; ++l) {
            h = t.masked_affine(h, t.param(hidden_w_[l]), t.param(hidden_b_[l]),
                                masks_.hidden_masks[static_cast<std::size_t>(l)]);
            h = activate(t, act_, h);
        }
        Tensor mu = t.masked_affine(h, t.param(w_mu_), t.param(b_mu_), masks_.output_mask);
        Tensor alpha = t.masked_affine(h, t.param(w_alpha_), t.param(b_alpha_), masks_.output_mask);
        return {mu, alpha};
    }

    void forward_eval(const Matrix& x, Matrix& mu, Matrix& alpha) const {
        Matrix h = x;
        for (int l = 0; l < n_hidden_; ++l) {
            h = detail::masked_affine_eval(h, hidden_w_[l].value,
                                           masks_.hidden_masks[static_cast<std::size_t>(l)].get(),
                                           hidden_b_[l].value);
            for (double& v : h.data) v = activate_scalar(act_, v);
        }
        mu = detail::masked_affine_eval(h, w_mu_.value, masks_.output_mask.get(), b_mu_.value);
        alpha = detail::masked_affine_eval(h, w_alpha_.value, masks_.output_mask.get(),
                                           b_alpha_.value);
    }

    void collect_params(std::vector<Parameter*>& out) {
        for (auto& p : hidden_w_) out.push_back(&p);
        for (auto& p : hidden_b_) out.push_back(&p);
        out.push_back(&w_mu_);
        out.push_back(&b_mu_);
        out.push_back(&w_alpha_);
        out.push_back(&b_alpha_);
    }

private:
    int d_ = 0, hidden_size_ = 0, n_hidden_ = 0;
    Activation act_ = Activation::relu;
    MadeMasks masks_;
    std::vector<Parameter> hidden_w_, hidden_b_;
    Parameter w_mu_, b_mu_, w_alpha_, b_alpha_;
};

// One bijection in the stack. "forward" is the sampling direction
// z_{k-1} -> z_k; the accumulated forward log-determinants feed the free
// energy, and density evaluation negates them.
class FlowLayer {
public:
    virtual ~FlowLayer() = default;
    virtual std::pair<Tensor, Tensor> forward(Tape& t, Tensor x, bool training) = 0;
    virtual Matrix forward_eval(const Matrix& x, std::vector<double>* logdet) const = 0;
    virtual Matrix inverse_eval(const Matrix& y) const = 0;
    virtual void collect_params(std::vector<Parameter*>& out) = 0;
    virtual void named_state(std::vector<std::pair<std::string, Matrix*>>& out) = 0;
    virtual const char* kind() const = 0;
};

// Autoregressive affine block: z_k = z_{k-1} * exp(alpha) + mu with both
// conditioners functions of z_{k-1} through the MADE masks, so the forward
// map is one network pass and its Jacobian is triangular in degree order with
// log-det = sum(alpha). The inverse recovers coordinates one degree at a time.
class MafBlock : public FlowLayer {
public:
    MafBlock(int d, int hidden_size, int n_hidden, Activation act, MadeMasks masks,
             std::mt19937_64& rng, const std::string& prefix)
        : made_(d, hidden_size, n_hidden, act, std::move(masks), rng, prefix) {}

    std::pair<Tensor, Tensor> forward(Tape& t, Tensor x, bool) override {
        auto [mu, alpha] = made_.forward(t, x);
        Tensor y = t.add(t.mul(x, t.exp(alpha)), mu);
        return {y, t.row_sum(alpha)};
    }

    Matrix forward_eval(const Matrix& x, std::vector<double>* logdet) const override {
        Matrix mu, alpha;
        made_.forward_eval(x, mu, alpha);
        Matrix y(x.rows, x.cols);
        for (std::size_t i = 0; i < x.rows; ++i) {
            double ld = 0.0;
            for (std::size_t j = 0; j < x.cols; ++j) {
                y(i, j) = x(i, j) * std::exp(alpha(i, j)) + mu(i, j);
                ld += alpha(i, j);
            }
            if (logdet) (*logdet)[i] += ld;
        }
        return y;
    }

    Matrix inverse_eval(const Matrix& y) const override {
        const std::size_t d = y.cols;
        const auto& degrees = made_.masks().input_degrees;
        std::vector<std::size_t> coord_of_rank(d);
        for (std::size_t j = 0; j < d; ++j)
            coord_of_rank[static_cast<std::size_t>(degrees[j] - 1)] = j;
        Matrix x(y.rows, d, 0.0);
        Matrix mu, alpha;
        for (std::size_t r = 0; r < d; ++r) {
            made_.forward_eval(x, mu, alpha);
            const std::size_t j = coord_of_rank[r];
            for (std::size_t i = 0; i < y.rows; ++i)
                x(i, j) = (y(i, j) - mu(i, j)) * std::exp(-alpha(i, j));
        }
        return x;
    }

    void collect_params(std::vector<Parameter*>& out) override { made_.collect_params(out); }

    void named_state(std::vector<std::pair<std::string, Matrix*>>& out) override {
        std::vector<Parameter*> ps;
        made_.collect_params(ps);
        for (Parameter* p : ps) out.emplace_back(p->name, &p->value);
    }

    const char* kind() const override { return "maf"; }

    const MadeNetwork& made() const { return made_; }
    MadeNetwork& made() { return made_; }

private:
    MadeNetwork made_;
};

// Coupling block: one index range is copied, the other gets an affine map
// conditioned on the copied range through a plain two-head MLP trunk.
class RealNvpBlock : public FlowLayer {
public:
    RealNvpBlock(int d, int hidden_size, int n_hidden, Activation act, bool odd_parity,
                 std::mt19937_64& rng, const std::string& prefix)
        : d_(d), act_(act) {
        const int split = d / 2;
        if (d == 1 || split == 0) {
            cond_begin_ = 0;
            cond_end_ = 0;
            trans_begin_ = 0;
            trans_end_ = d;
        } else if (!odd_parity) {
            cond_begin_ = 0;
            cond_end_ = split;
            trans_begin_ = split;
            trans_end_ = d;
        } else {
            cond_begin_ = split;
            cond_end_ = d;
            trans_begin_ = 0;
            trans_end_ = split;
        }
        const int n_cond = cond_end_ - cond_begin_;
        const int n_trans = trans_end_ - trans_begin_;
        int in = n_cond;
        for (int l = 0; l < n_hidden; ++l) {
            Matrix w(static_cast<std::size_t>(in), static_cast<std::size_t>(hidden_size));
            detail::init_uniform(w, rng);
            hidden_w_.emplace_back(prefix + ".W" + std::to_string(l), std::move(w));
            hidden_b_.emplace_back(prefix + ".b" + std::to_string(l),
                                   Matrix(1, static_cast<std::size_t>(hidden_size), 0.0));
            in = hidden_size;
        }
        w_mu_ = Parameter(prefix + ".Wmu", Matrix(static_cast<std::size_t>(in),
                                                  static_cast<std::size_t>(n_trans), 0.0));
        b_mu_ = Parameter(prefix + ".bmu", Matrix(1, static_cast<std::size_t>(n_trans), 0.0));
        w_alpha_ = Parameter(prefix + ".Walpha", Matrix(static_cast<std::size_t>(in),
                                                        static_cast<std::size_t>(n_trans), 0.0));
        b_alpha_ = Parameter(prefix + ".balpha", Matrix(1, static_cast<std::size_t>(n_trans), 0.0));
    }

    std::pair<Tensor, Tensor> forward(Tape& t, Tensor x, bool) override {
        Tensor cond = t.slice_cols(x, static_cast<std::size_t>(cond_begin_),
                                   static_cast<std::size_t>(cond_end_));
        Tensor trans = t.slice_cols(x, static_cast<std::size_t>(trans_begin_),
                                    static_cast<std::size_t>(trans_end_));
        Tensor h = cond;
        for (std::size_t l = 0; l < hidden_w_.size(); ++l) {
            h = t.affine(h, t.param(hidden_w_[l]), t.param(hidden_b_[l]));
            h = activate(t, act_, h);
        }
        Tensor mu = t.affine(h, t.param(w_mu_), t.param(b_mu_));
        Tensor alpha = t.affine(h, t.param(w_alpha_), t.param(b_alpha_));
        Tensor mapped = t.add(t.mul(trans, t.exp(alpha)), mu);
        Tensor y = trans_begin_ == 0 && cond_end_ != cond_begin_
                       ? t.concat_cols({mapped, cond})
                       : (cond_end_ == cond_begin_ ? mapped : t.concat_cols({cond, mapped}));
        return {y, t.row_sum(alpha)};
    }

    Matrix forward_eval(const Matrix& x, std::vector<double>* logdet) const override {
        Matrix mu, alpha;
        conditioners_eval(x, mu, alpha);
        Matrix y = x;
        for (std::size_t i = 0; i < x.rows; ++i) {
            double ld = 0.0;
            for (int j = trans_begin_; j < trans_end_; ++j) {
                const double a = alpha(i, static_cast<std::size_t>(j - trans_begin_));
                y(i, static_cast<std::size_t>(j)) =
                    x(i, static_cast<std::size_t>(j)) * std::exp(a) +
                    mu(i, static_cast<std::size_t>(j - trans_begin_));
                ld += a;
            }
            if (logdet) (*logdet)[i] += ld;
        }
        return y;
    }

    Matrix inverse_eval(const Matrix& y) const override {
        // the conditioner half passes through unchanged, so the inverse is
        // closed form: x = (y - mu) * exp(-alpha)
        Matrix mu, alpha;
        conditioners_eval(y, mu, alpha);
        Matrix x = y;
        for (std::size_t i = 0; i < y.rows; ++i)
            for (int j = trans_begin_; j < trans_end_; ++j) {
                const std::size_t k = static_cast<std::size_t>(j - trans_begin_);
                x(i, static_cast<std::size_t>(j)) =
                    (y(i, static_cast<std::size_t>(j)) - mu(i, k)) * std::exp(-alpha(i, k));
            }
        return x;
    }

    void collect_params(std::vector<Parameter*>& out) override {
        for (auto& p : hidden_w_) out.push_back(&p);
        for (auto& p : hidden_b_) out.push_back(&p);
        out.push_back(&w_mu_);
        out.push_back(&b_mu_);
        out.push_back(&w_alpha_);
        out.push_back(&b_alpha_);
    }

    void named_state(std::vector<std::pair<std::string, Matrix*>>& out) override {
        std::vector<Parameter*> ps;
        collect_params(ps);
        for (Parameter* p : ps) out.emplace_back(p->name, &p->value);
    }

    const char* kind() const override { return "realnvp"; }

private:
    int d_ = 0;
    Activation act_ = Activation::relu;
    int cond_begin_ = 0, cond_end_ = 0, trans_begin_ = 0, trans_end_ = 0;
    std::vector<Parameter> hidden_w_, hidden_b_;
    Parameter w_mu_, b_mu_, w_alpha_, b_alpha_;

    void conditioners_eval(const Matrix& full, Matrix& mu, Matrix& alpha) const {
        Matrix cond(full.rows, static_cast<std::size_t>(cond_end_ - cond_begin_));
        for (std::size_t i = 0; i < full.rows; ++i)
            for (int j = cond_begin_; j < cond_end_; ++j)
                cond(i, static_cast<std::size_t>(j - cond_begin_)) =
                    full(i, static_cast<std::size_t>(j));
        Matrix h = cond;
        for (std::size_t l = 0; l < hidden_w_.size(); ++l) {
            h = detail::masked_affine_eval(h, hidden_w_[l].value, nullptr, hidden_b_[l].value);
            for (double& v : h.data) v = activate_scalar(act_, v);
        }
        mu = detail::masked_affine_eval(h, w_mu_.value, nullptr, b_mu_.value);
        alpha = detail::masked_affine_eval(h, w_alpha_.value, nullptr, b_alpha_.value);
    }
};

// y = exp(gamma) (x - m) / sqrt(v + eps) + beta. Training mode normalizes
// with current-batch statistics and refreshes the running ones; evaluation
// mode is a fixed diffeomorphism using the running statistics.
// log-det per sample: sum_i(gamma_i - log(v_i + eps) / 2).
class BatchNormFlowLayer : public FlowLayer {
public:
    BatchNormFlowLayer(int d, const std::string& prefix, double momentum = 0.1, double eps = 1e-5)
        : momentum_(momentum), eps_(eps) {
        gamma_ = Parameter(prefix + ".gamma", Matrix(1, static_cast<std::size_t>(d), 0.0));
        beta_ = Parameter(prefix + ".beta", Matrix(1, static_cast<std::size_t>(d), 0.0));
        running_mean_ = Matrix(1, static_cast<std::size_t>(d), 0.0);
        running_var_ = Matrix(1, static_cast<std::size_t>(d), 1.0);
        rm_name_ = prefix + ".running_mean";
        rv_name_ = prefix + ".running_var";
    }

    std::pair<Tensor, Tensor> forward(Tape& t, Tensor x, bool training) override {
        Tensor g = t.param(gamma_);
        Tensor y;
        Tensor ld_scalar;
        if (training) {
            y = t.batch_norm(x, g, t.param(beta_), eps_, true);
            const Matrix& bm = t.node(y.id()).saved_a;
            const Matrix& bv = t.node(y.id()).saved_b;
            for (std::size_t j = 0; j < running_mean_.cols; ++j) {
                running_mean_(0, j) = (1.0 - momentum_) * running_mean_(0, j) + momentum_ * bm(0, j);
                running_var_(0, j) = (1.0 - momentum_) * running_var_(0, j) + momentum_ * bv(0, j);
            }
            // the log-det depends on the batch variance, which the loss must
            // differentiate through; col_var recomputes the same statistics as
            // a tape node
            Tensor v = t.col_var(x);
            Tensor half_log = t.mul_scalar(t.log(t.add_scalar(v, eps_)), 0.5);
            ld_scalar = t.sum(t.sub(g, half_log));
        } else {
            y = t.batch_norm(x, g, t.param(beta_), eps_, false, &running_mean_, &running_var_);
            double c = 0.0;
            for (std::size_t j = 0; j < running_var_.cols; ++j)
                c -= 0.5 * std::log(running_var_(0, j) + eps_);
            ld_scalar = t.add_scalar(t.sum(g), c);
        }
        Tensor ld = t.mul(t.constant(Matrix(x.rows(), 1, 1.0)), ld_scalar);
        return {y, ld};
    }

    Matrix forward_eval(const Matrix& x, std::vector<double>* logdet) const override {
        Matrix y(x.rows, x.cols);
        double ld = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double scale = std::exp(gamma_.value(0, j)) / std::sqrt(running_var_(0, j) + eps_);
            ld += gamma_.value(0, j) - 0.5 * std::log(running_var_(0, j) + eps_);
            for (std::size_t i = 0; i < x.rows; ++i)
                y(i, j) = scale * (x(i, j) - running_mean_(0, j)) + beta_.value(0, j);
        }
        if (logdet)
            for (std::size_t i = 0; i < x.rows; ++i) (*logdet)[i] += ld;
        return y;
    }

    Matrix inverse_eval(const Matrix& y) const override {
        Matrix x(y.rows, y.cols);
        for (std::size_t j = 0; j < y.cols; ++j) {
            const double inv_scale =
                std::sqrt(running_var_(0, j) + eps_) * std::exp(-gamma_.value(0, j));
            for (std::size_t i = 0; i < y.rows; ++i)
                x(i, j) = (y(i, j) - beta_.value(0, j)) * inv_scale + running_mean_(0, j);
        }
        return x;
    }

    void collect_params(std::vector<Parameter*>& out) override {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }

    void named_state(std::vector<std::pair<std::string, Matrix*>>& out) override {
        out.emplace_back(gamma_.name, &gamma_.value);
        out.emplace_back(beta_.name, &beta_.value);
        out.emplace_back(rm_name_, &running_mean_);
        out.emplace_back(rv_name_, &running_var_);
    }

    const char* kind() const override { return "batch_norm"; }

    Matrix& running_mean() { return running_mean_; }
    Matrix& running_var() { return running_var_; }
    Parameter& gamma() { return gamma_; }
    Parameter& beta() { return beta_; }

private:
    double momentum_ = 0.1;
    double eps_ = 1e-5;
    Parameter gamma_, beta_;
    Matrix running_mean_, running_var_;
    std::string rm_name_, rv_name_;
};

struct FlowStackConfig {
    std::string flow_type = "maf";  // "maf" or "realnvp"
    int input_size = 2;
    int n_blocks = 5;
    int hidden_size = 100;
    int n_hidden = 1;
    Activation activation = Activation::relu;
    InputOrder input_order = InputOrder::sequential;
    bool batch_norm = true;
};

// Ordered composition of flow layers sharing one dimensionality.
class FlowStack {
public:
    FlowStack() = default;
    explicit FlowStack(int d) : d_(d) {}

    int dim() const { return d_; }
    std::size_t n_layers() const { return layers_.size(); }
    FlowLayer& layer(std::size_t i) { return *layers_[i]; }

    void add_layer(std::unique_ptr<FlowLayer> l) { layers_.push_back(std::move(l)); }

    // Sampling-direction pass on the tape. Returns (z_K, per-sample log-det sum).
    std::pair<Tensor, Tensor> forward(Tape& t, Tensor z0, bool training) {
        Tensor z = z0;
        Tensor logdet = t.constant(Matrix(z0.rows(), 1, 0.0));
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            auto [y, ld] = layers_[k]->forward(t, z, training);
            if (!y.value().all_finite() || !ld.value().all_finite())
                throw std::runtime_error("flow layer " + std::to_string(k) + " (" +
                                         layers_[k]->kind() + ") produced non-finite values");
            z = y;
            logdet = t.add(logdet, ld);
        }
        return {z, logdet};
    }

    // Evaluation-mode pass on plain arrays (batch-norm uses running stats).
    Matrix forward_eval(const Matrix& z0, std::vector<double>* logdet = nullptr) const {
        Matrix z = z0;
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            z = layers_[k]->forward_eval(z, logdet);
            if (!z.all_finite())
                throw std::runtime_error("flow layer " + std::to_string(k) + " (" +
                                         layers_[k]->kind() + ") produced non-finite values");
        }
        return z;
    }

    Matrix inverse_eval(const Matrix& zK) const {
        Matrix z = zK;
        for (std::size_t k = layers_.size(); k-- > 0;) {
            z = layers_[k]->inverse_eval(z);
            if (!z.all_finite())
                throw std::runtime_error("flow layer " + std::to_string(k) + " (" +
                                         layers_[k]->kind() + ") produced non-finite values");
        }
        return z;
    }

    std::vector<Parameter*> params() {
        std::vector<Parameter*> out;
        for (auto& l : layers_) l->collect_params(out);
        return out;
    }

    std::vector<std::pair<std::string, Matrix*>> named_state() {
        std::vector<std::pair<std::string, Matrix*>> out;
        for (auto& l : layers_) l->named_state(out);
        return out;
    }

    void zero_grads() {
        for (Parameter* p : params()) p->zero_grad();
    }

private:
    int d_ = 0;
    std::vector<std::unique_ptr<FlowLayer>> layers_;
};

// Standard-normal base draw plus its log-density.
inline Matrix sample_base(std::size_t batch, std::size_t d, std::mt19937_64& rng,
                          std::vector<double>* log_q0 = nullptr) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix z0(batch, d);
    for (double& v : z0.data) v = normal(rng);
    if (log_q0) {
        log_q0->assign(batch, 0.0);
        const double c = -0.5 * static_cast<double>(d) * std::log(2.0 * 3.14159265358979323846);
        for (std::size_t i = 0; i < batch; ++i) {
            double q = 0.0;
            for (std::size_t j = 0; j < d; ++j) q += z0(i, j) * z0(i, j);
            (*log_q0)[i] = c - 0.5 * q;
        }
    }
    return z0;
}

inline FlowStack make_flow_stack(const FlowStackConfig& cfg, std::mt19937_64& rng) {
    if (cfg.input_size < 1) throw std::runtime_error("flow stack: input_size must be >= 1");
    FlowStack stack(cfg.input_size);
    if (cfg.flow_type == "maf") {
        std::vector<int> degrees(static_cast<std::size_t>(cfg.input_size));
        std::iota(degrees.begin(), degrees.end(), 1);
        if (cfg.input_order == InputOrder::random) std::shuffle(degrees.begin(), degrees.end(), rng);
        for (int b = 0; b < cfg.n_blocks; ++b) {
            MadeMasks masks = build_masks_from_degrees(degrees, cfg.hidden_size, cfg.n_hidden);
            stack.add_layer(std::make_unique<MafBlock>(cfg.input_size, cfg.hidden_size,
                                                       cfg.n_hidden, cfg.activation,
                                                       std::move(masks), rng,
                                                       "layer" + std::to_string(b) + ".maf"));
            if (cfg.batch_norm)
                stack.add_layer(std::make_unique<BatchNormFlowLayer>(
                    cfg.input_size, "layer" + std::to_string(b) + ".bn"));
            // reverse the degree labels so the next block conditions the
            // coordinates this block left unconditioned
            std::reverse(degrees.begin(), degrees.end());
        }
    } else if (cfg.flow_type == "realnvp") {
        for (int b = 0; b < cfg.n_blocks; ++b) {
            stack.add_layer(std::make_unique<RealNvpBlock>(cfg.input_size, cfg.hidden_size,
                                                           cfg.n_hidden, cfg.activation, b % 2 == 1,
                                                           rng,
                                                           "layer" + std::to_string(b) + ".nvp"));
            if (cfg.batch_norm)
                stack.add_layer(std::make_unique<BatchNormFlowLayer>(
                    cfg.input_size, "layer" + std::to_string(b) + ".bn"));
        }
    } else {
        throw std::runtime_error("unknown flow_type '" + cfg.flow_type + "'");
    }
    return stack;
}

}  // namespace flowinfer
