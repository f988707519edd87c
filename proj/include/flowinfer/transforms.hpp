#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "graph.hpp"

namespace flowinfer {

// Per-dimension monotone map between the normalized interval [a,b] the flow
// operates in and the physical interval [c,d] the model consumes. Inputs
// outside [a,b] are allowed: tanh saturates toward (c,d), linear and exp
// extrapolate.
struct UnivariateTransform {
    enum class Kind { identity, tanh, linear, exp };

    Kind kind = Kind::identity;
    double a = 0.0, b = 1.0, c = 0.0, d = 1.0;

    UnivariateTransform() = default;
    UnivariateTransform(Kind k, double a_, double b_, double c_, double d_)
        : kind(k), a(a_), b(b_), c(c_), d(d_) {
        if (kind != Kind::identity) {
            if (!(a < b)) throw std::runtime_error("transform: requires a < b");
            if (!(c < d)) throw std::runtime_error("transform: requires c < d");
        }
        if (kind == Kind::exp && !(c > 0.0))
            throw std::runtime_error("exp transform: requires c > 0");
    }

    static Kind kind_from_string(const std::string& s) {
        if (s == "identity") return Kind::identity;
        if (s == "tanh") return Kind::tanh;
        if (s == "linear") return Kind::linear;
        if (s == "exp") return Kind::exp;
        throw std::runtime_error("unknown transform kind '" + s + "'");
    }

    static const char* kind_name(Kind k) {
        switch (k) {
            case Kind::identity: return "identity";
            case Kind::tanh: return "tanh";
            case Kind::linear: return "linear";
            case Kind::exp: return "exp";
        }
        return "?";
    }

    double exp_slope() const { return std::log(d / c) / (b - a); }
    double exp_offset() const { return std::log(c) - exp_slope() * a; }

    double forward(double z) const {
        switch (kind) {
            case Kind::identity: return z;
            case Kind::linear: return c + (d - c) * (z - a) / (b - a);
            case Kind::tanh: return c + (d - c) * (std::tanh(z) + 1.0) / 2.0;
            case Kind::exp: return std::exp(exp_slope() * z + exp_offset());
        }
        return z;
    }

    // log of d(physical)/dz; the tanh branch is evaluated through
    // log(sech^2 z) = log 4 - 2|z| - 2 log(1 + e^{-2|z|}) so it stays finite
    // where tanh(z) rounds to +-1.
    double log_jacobian(double z) const {
        switch (kind) {
            case Kind::identity: return 0.0;
            case Kind::linear: return std::log((d - c) / (b - a));
            case Kind::tanh: {
                const double az = std::abs(z);
                const double log_sech2 = std::log(4.0) - 2.0 * az - 2.0 * std::log1p(std::exp(-2.0 * az));
                return std::log((d - c) / 2.0) + log_sech2;
            }
            case Kind::exp: return std::log(exp_slope()) + exp_slope() * z + exp_offset();
        }
        return 0.0;
    }
};

// Independent per-coordinate transforms; the total log-Jacobian is the sum of
// the per-coordinate terms.
class InputTransformation {
public:
    InputTransformation() = default;
    explicit InputTransformation(std::vector<UnivariateTransform> dims) : dims_(std::move(dims)) {}

    static InputTransformation identity(std::size_t d) {
        return InputTransformation(std::vector<UnivariateTransform>(d));
    }

    std::size_t size() const { return dims_.size(); }
    const UnivariateTransform& dim(std::size_t i) const { return dims_[i]; }

    bool all_identity() const {
        for (const auto& t : dims_)
            if (t.kind != UnivariateTransform::Kind::identity) return false;
        return true;
    }

    // Normalized-space box, one [a,b] per dimension (identity dims have no
    // natural bounds and report [0,1] placeholders; callers needing real
    // limits must supply them).
    std::vector<std::pair<double, double>> normalized_box() const {
        std::vector<std::pair<double, double>> box;
        box.reserve(dims_.size());
        for (const auto& t : dims_) box.emplace_back(t.a, t.b);
        return box;
    }

    Matrix forward(const Matrix& z) const {
        check_width(z.cols);
        Matrix out(z.rows, z.cols);
        for (std::size_t i = 0; i < z.rows; ++i)
            for (std::size_t j = 0; j < z.cols; ++j) out(i, j) = dims_[j].forward(z(i, j));
        return out;
    }

    // Per-sample sum of log-Jacobian terms.
    std::vector<double> log_jacobian(const Matrix& z) const {
        check_width(z.cols);
        std::vector<double> out(z.rows, 0.0);
        for (std::size_t i = 0; i < z.rows; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < z.cols; ++j) s += dims_[j].log_jacobian(z(i, j));
            out[i] = s;
        }
        return out;
    }

    // Tape variants used inside likelihood hooks so gradients reach the flow.
    Tensor forward(Tape& t, Tensor z) const {
        check_width(z.cols());
        if (all_identity()) return z;
        std::vector<Tensor> cols;
        cols.reserve(dims_.size());
        for (std::size_t j = 0; j < dims_.size(); ++j) {
            Tensor col = t.slice_cols(z, j, j + 1);
            cols.push_back(forward_col(t, col, dims_[j]));
        }
        return t.concat_cols(cols);
    }

    Tensor log_jacobian(Tape& t, Tensor z) const {
        check_width(z.cols());
        const std::size_t batch = z.rows();
        Tensor total = t.constant(Matrix(batch, 1, 0.0));
        for (std::size_t j = 0; j < dims_.size(); ++j) {
            const auto& tr = dims_[j];
            if (tr.kind == UnivariateTransform::Kind::identity) continue;
            Tensor col = t.slice_cols(z, j, j + 1);
            total = t.add(total, log_jacobian_col(t, col, tr));
        }
        return total;
    }

private:
    std::vector<UnivariateTransform> dims_;

    void check_width(std::size_t c) const {
        if (c != dims_.size())
            throw std::runtime_error("transformation: expected " + std::to_string(dims_.size()) +
                                     " columns, got " + std::to_string(c));
    }

    static Tensor forward_col(Tape& t, Tensor col, const UnivariateTransform& tr) {
        using Kind = UnivariateTransform::Kind;
        switch (tr.kind) {
            case Kind::identity:
                return col;
            case Kind::linear: {
                const double slope = (tr.d - tr.c) / (tr.b - tr.a);
                return t.add_scalar(t.mul_scalar(col, slope), tr.c - slope * tr.a);
            }
            case Kind::tanh: {
                Tensor u = t.tanh(col);
                const double half = (tr.d - tr.c) / 2.0;
                return t.add_scalar(t.mul_scalar(u, half), tr.c + half);
            }
            case Kind::exp:
                return t.exp(t.add_scalar(t.mul_scalar(col, tr.exp_slope()), tr.exp_offset()));
        }
        return col;
    }

    static Tensor log_jacobian_col(Tape& t, Tensor col, const UnivariateTransform& tr) {
        using Kind = UnivariateTransform::Kind;
        switch (tr.kind) {
            case Kind::identity:
                return t.constant(Matrix(col.rows(), 1, 0.0));
            case Kind::linear:
                return t.constant(Matrix(col.rows(), 1, tr.log_jacobian(0.0)));
            case Kind::tanh: {
                // log((d-c)/2) + log(sech^2 z), with sech^2 z = 4 s(2z) s(-2z)
                Tensor two_z = t.mul_scalar(col, 2.0);
                Tensor lo = t.log(t.sigmoid(two_z));
                Tensor hi = t.log(t.sigmoid(t.mul_scalar(col, -2.0)));
                const double k = std::log((tr.d - tr.c) / 2.0) + std::log(4.0);
                return t.add_scalar(t.add(lo, hi), k);
            }
            case Kind::exp: {
                const double m = tr.exp_slope();
                return t.add_scalar(t.mul_scalar(col, m), std::log(m) + tr.exp_offset());
            }
        }
        return t.constant(Matrix(col.rows(), 1, 0.0));
    }
};

}  // namespace flowinfer
