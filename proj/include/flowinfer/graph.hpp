#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowinfer {

// Dense row-major matrix of 64-bit floats. All tape values are 2-D; a scalar
// is a 1x1 matrix and a per-sample column is batch x 1.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rs) {
        Matrix m(rs.size(), rs.size() ? rs.begin()->size() : 0);
        std::size_t i = 0;
        for (const auto& row : rs) {
            std::size_t j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    static Matrix scalar(double v) {
        Matrix m(1, 1);
        m.data[0] = v;
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    std::size_t size() const { return data.size(); }
    bool is_scalar() const { return rows == 1 && cols == 1; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline std::string shape_str(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

// Trainable leaf storage. Parameters outlive any single tape; gradients
// accumulate (+=) across backward calls until the owner zeroes them.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
        grad = Matrix(value.rows, value.cols, 0.0);
    }

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

namespace graph {

enum class Op {
    leaf,
    add,
    sub,
    mul,
    div,
    matmul,
    tanh_fn,
    exp_fn,
    log_fn,
    relu_fn,
    sigmoid_fn,
    pow_fn,
    sum_all,
    mean_all,
    row_sum,
    col_mean,
    col_var,
    concat_cols,
    slice_cols,
    affine,
    masked_affine,
    batch_norm,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::div: return "div";
        case Op::matmul: return "matmul";
        case Op::tanh_fn: return "tanh";
        case Op::exp_fn: return "exp";
        case Op::log_fn: return "log";
        case Op::relu_fn: return "relu";
        case Op::sigmoid_fn: return "sigmoid";
        case Op::pow_fn: return "pow";
        case Op::sum_all: return "sum";
        case Op::mean_all: return "mean";
        case Op::row_sum: return "row_sum";
        case Op::col_mean: return "col_mean";
        case Op::col_var: return "variance";
        case Op::concat_cols: return "concat";
        case Op::slice_cols: return "slice";
        case Op::affine: return "affine";
        case Op::masked_affine: return "masked_affine";
        case Op::batch_norm: return "batch_norm";
    }
    return "?";
}

class Tape;

// Lightweight handle into a tape node. Valid only while the tape lives.
class Tensor {
public:
    Tensor() = default;
    Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

    bool valid() const { return tape_ != nullptr; }
    int id() const { return id_; }
    Tape* tape() const { return tape_; }

    std::size_t rows() const;
    std::size_t cols() const;
    const Matrix& value() const;
    const Matrix& grad() const;

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Append-only computation record; append order is a valid topological order,
// so reverse traversal implements backpropagation.
class Tape {
public:
    struct Node {
        Op op = Op::leaf;
        std::array<int, 3> in{-1, -1, -1};
        std::vector<int> extra_in;  // concat only
        Matrix val;
        Matrix grad;  // allocated on demand during backward
        bool requires_grad = false;
        double aux = 0.0;      // pow exponent / bn eps
        int iaux0 = 0;         // slice begin / bn training flag
        int iaux1 = 0;         // slice end
        std::shared_ptr<const Matrix> mask;  // masked_affine
        Matrix saved_a;        // bn: mean (1 x c) used in forward
        Matrix saved_b;        // bn: variance (1 x c) used in forward
        Parameter* param = nullptr;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t size() const { return nodes_.size(); }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

    Tensor constant(Matrix m) { return push_leaf(std::move(m), false, nullptr); }
    Tensor constant_scalar(double v) { return constant(Matrix::scalar(v)); }

    Tensor leaf(Matrix m, bool requires_grad) { return push_leaf(std::move(m), requires_grad, nullptr); }

    // Trainable leaf bound to external storage; backward accumulates into p.grad.
    Tensor param(Parameter& p) { return push_leaf(p.value, true, &p); }

    Tensor add(Tensor a, Tensor b) { return elementwise(Op::add, a, b); }
    Tensor sub(Tensor a, Tensor b) { return elementwise(Op::sub, a, b); }
    Tensor mul(Tensor a, Tensor b) { return elementwise(Op::mul, a, b); }

    Tensor div(Tensor a, Tensor b) {
        for (double v : node(b.id()).val.data)
            if (v == 0.0) throw std::runtime_error("div: zero operand");
        return elementwise(Op::div, a, b);
    }

    Tensor matmul(Tensor a, Tensor b) {
        const Matrix& A = node(a.id()).val;
        const Matrix& B = node(b.id()).val;
        if (A.cols != B.rows)
            throw std::runtime_error(std::string("matmul: inner dimensions disagree, ") +
                                     shape_str(A.rows, A.cols) + " vs " + shape_str(B.rows, B.cols));
        Matrix out(A.rows, B.cols, 0.0);
        matmul_acc(A, B, out);
        Node n;
        n.op = Op::matmul;
        n.in = {a.id(), b.id(), -1};
        n.val = std::move(out);
        return push(std::move(n));
    }

    Tensor tanh(Tensor x) { return unary(Op::tanh_fn, x, [](double v) { return std::tanh(v); }); }

    Tensor exp(Tensor x) { return unary(Op::exp_fn, x, [](double v) { return std::exp(v); }); }

    Tensor log(Tensor x) {
        for (double v : node(x.id()).val.data)
            if (v <= 0.0) throw std::runtime_error("log: non-positive operand");
        return unary(Op::log_fn, x, [](double v) { return std::log(v); });
    }

    Tensor relu(Tensor x) { return unary(Op::relu_fn, x, [](double v) { return v > 0.0 ? v : 0.0; }); }

    Tensor sigmoid(Tensor x) {
        return unary(Op::sigmoid_fn, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    }

    // Integer exponents use repeated multiplication, so pow(-x, 2) == pow(x, 2)
    // bitwise; fractional exponents require a positive base.
    Tensor pow(Tensor x, double p) {
        const Matrix& X = node(x.id()).val;
        const bool integral = (p == std::floor(p));
        if (!integral)
            for (double v : X.data)
                if (v < 0.0) throw std::runtime_error("pow: negative base with fractional exponent");
        Node n;
        n.op = Op::pow_fn;
        n.in = {x.id(), -1, -1};
        n.aux = p;
        n.val = Matrix(X.rows, X.cols);
        for (std::size_t i = 0; i < X.size(); ++i) n.val.data[i] = pow_eval(X.data[i], p);
        return push(std::move(n));
    }

    Tensor sum(Tensor x) { return reduce(Op::sum_all, x); }
    Tensor mean(Tensor x) { return reduce(Op::mean_all, x); }

    Tensor row_sum(Tensor x) {
        const Matrix& X = node(x.id()).val;
        Node n;
        n.op = Op::row_sum;
        n.in = {x.id(), -1, -1};
        n.val = Matrix(X.rows, 1, 0.0);
        for (std::size_t i = 0; i < X.rows; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < X.cols; ++j) s += X(i, j);
            n.val(i, 0) = s;
        }
        return push(std::move(n));
    }

    Tensor col_mean(Tensor x) {
        const Matrix& X = node(x.id()).val;
        Node n;
        n.op = Op::col_mean;
        n.in = {x.id(), -1, -1};
        n.val = Matrix(1, X.cols, 0.0);
        for (std::size_t j = 0; j < X.cols; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < X.rows; ++i) s += X(i, j);
            n.val(0, j) = s / static_cast<double>(X.rows);
        }
        return push(std::move(n));
    }

    // Per-column population (biased) variance.
    Tensor col_var(Tensor x) {
        const Matrix& X = node(x.id()).val;
        Node n;
        n.op = Op::col_var;
        n.in = {x.id(), -1, -1};
        n.val = Matrix(1, X.cols, 0.0);
        n.saved_a = Matrix(1, X.cols, 0.0);  // column means
        for (std::size_t j = 0; j < X.cols; ++j) {
            double m = 0.0;
            for (std::size_t i = 0; i < X.rows; ++i) m += X(i, j);
            m /= static_cast<double>(X.rows);
            double v = 0.0;
            for (std::size_t i = 0; i < X.rows; ++i) {
                const double d = X(i, j) - m;
                v += d * d;
            }
            n.saved_a(0, j) = m;
            n.val(0, j) = v / static_cast<double>(X.rows);
        }
        return push(std::move(n));
    }

    Tensor concat_cols(const std::vector<Tensor>& parts) {
        if (parts.empty()) throw std::runtime_error("concat: no inputs");
        const std::size_t r = node(parts[0].id()).val.rows;
        std::size_t c = 0;
        for (const Tensor& t : parts) {
            const Matrix& m = node(t.id()).val;
            if (m.rows != r) throw std::runtime_error("concat: row counts disagree");
            c += m.cols;
        }
        Node n;
        n.op = Op::concat_cols;
        n.val = Matrix(r, c, 0.0);
        std::size_t off = 0;
        for (const Tensor& t : parts) {
            const Matrix& m = node(t.id()).val;
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < m.cols; ++j) n.val(i, off + j) = m(i, j);
            off += m.cols;
            n.extra_in.push_back(t.id());
        }
        return push(std::move(n));
    }

    Tensor slice_cols(Tensor x, std::size_t begin, std::size_t end) {
        const Matrix& X = node(x.id()).val;
        if (begin > end || end > X.cols) throw std::runtime_error("slice: column range out of bounds");
        Node n;
        n.op = Op::slice_cols;
        n.in = {x.id(), -1, -1};
        n.iaux0 = static_cast<int>(begin);
        n.iaux1 = static_cast<int>(end);
        n.val = Matrix(X.rows, end - begin, 0.0);
        for (std::size_t i = 0; i < X.rows; ++i)
            for (std::size_t j = begin; j < end; ++j) n.val(i, j - begin) = X(i, j);
        return push(std::move(n));
    }

    // y = x W + b with b (1 x out) broadcast across rows.
    Tensor affine(Tensor x, Tensor w, Tensor b) {
        return affine_impl(Op::affine, x, w, b, nullptr);
    }

    // y = x (W o M) + b for a fixed boolean mask M; the autoregressive
    // connectivity of MADE layers lives here.
    Tensor masked_affine(Tensor x, Tensor w, Tensor b, std::shared_ptr<const Matrix> m) {
        return affine_impl(Op::masked_affine, x, w, b, std::move(m));
    }

    // y = exp(gamma) * (x - m) / sqrt(v + eps) + beta, with (m, v) the batch
    // statistics in training mode or the caller-supplied running statistics in
    // evaluation mode. The node saves the statistics it used.
    Tensor batch_norm(Tensor x, Tensor gamma, Tensor beta, double eps, bool training,
                      const Matrix* running_mean = nullptr, const Matrix* running_var = nullptr) {
        const Matrix& X = node(x.id()).val;
        const Matrix& G = node(gamma.id()).val;
        const Matrix& B = node(beta.id()).val;
        if (G.rows != 1 || G.cols != X.cols || B.rows != 1 || B.cols != X.cols)
            throw std::runtime_error("batch_norm: gamma/beta must be 1x" + std::to_string(X.cols));
        Node n;
        n.op = Op::batch_norm;
        n.in = {x.id(), gamma.id(), beta.id()};
        n.aux = eps;
        n.iaux0 = training ? 1 : 0;
        Matrix m(1, X.cols, 0.0), v(1, X.cols, 0.0);
        if (training) {
            for (std::size_t j = 0; j < X.cols; ++j) {
                double mu = 0.0;
                for (std::size_t i = 0; i < X.rows; ++i) mu += X(i, j);
                mu /= static_cast<double>(X.rows);
                double var = 0.0;
                for (std::size_t i = 0; i < X.rows; ++i) {
                    const double d = X(i, j) - mu;
                    var += d * d;
                }
                m(0, j) = mu;
                v(0, j) = var / static_cast<double>(X.rows);
            }
        } else {
            if (!running_mean || !running_var)
                throw std::runtime_error("batch_norm: evaluation mode needs running statistics");
            m = *running_mean;
            v = *running_var;
        }
        n.val = Matrix(X.rows, X.cols);
        for (std::size_t j = 0; j < X.cols; ++j) {
            const double scale = std::exp(G(0, j)) / std::sqrt(v(0, j) + eps);
            for (std::size_t i = 0; i < X.rows; ++i)
                n.val(i, j) = scale * (X(i, j) - m(0, j)) + B(0, j);
        }
        n.saved_a = std::move(m);
        n.saved_b = std::move(v);
        return push(std::move(n));
    }

    // Convenience wrappers for scalar constants.
    Tensor add_scalar(Tensor a, double s) { return add(a, constant_scalar(s)); }
    Tensor mul_scalar(Tensor a, double s) { return mul(a, constant_scalar(s)); }

    // Reverse sweep from a scalar loss. Each reachable requires_grad leaf gets
    // d loss / d leaf accumulated into its Parameter storage. A tape can be
    // walked backward once; a second call is a hard error.
    void backward(Tensor loss) {
        const Node& ln = node(loss.id());
        if (!(ln.val.rows == 1 && ln.val.cols == 1))
            throw std::runtime_error("backward: loss must be scalar, got " +
                                     shape_str(ln.val.rows, ln.val.cols));
        if (consumed_)
            throw std::runtime_error("backward: tape already consumed; rebuild the forward pass");
        consumed_ = true;

        ensure_grad(loss.id());
        node(loss.id()).grad.data[0] = 1.0;

        for (int id = loss.id(); id >= 0; --id) {
            Node& n = node(id);
            if (!n.requires_grad || n.grad.size() == 0) continue;
            backward_node(n);
        }
        for (auto& n : nodes_) {
            if (n.param != nullptr && n.grad.size() != 0) {
                for (std::size_t i = 0; i < n.grad.size(); ++i) n.param->grad.data[i] += n.grad.data[i];
            }
        }
    }

    bool consumed() const { return consumed_; }

private:
    std::vector<Node> nodes_;
    bool consumed_ = false;

    Tensor push(Node n) {
        for (int i : n.in)
            if (i >= 0 && node(i).requires_grad) n.requires_grad = true;
        for (int i : n.extra_in)
            if (node(i).requires_grad) n.requires_grad = true;
        nodes_.push_back(std::move(n));
        return Tensor(this, static_cast<int>(nodes_.size()) - 1);
    }

    Tensor push_leaf(Matrix m, bool requires_grad, Parameter* p) {
        Node n;
        n.op = Op::leaf;
        n.val = std::move(m);
        n.requires_grad = requires_grad;
        n.param = p;
        nodes_.push_back(std::move(n));
        return Tensor(this, static_cast<int>(nodes_.size()) - 1);
    }

    static double pow_eval(double x, double p) {
        if (p == std::floor(p) && std::abs(p) <= 64.0) {
            long e = static_cast<long>(p);
            const bool neg = e < 0;
            e = neg ? -e : e;
            double acc = 1.0, base = x;
            while (e > 0) {
                if (e & 1) acc *= base;
                base *= base;
                e >>= 1;
            }
            return neg ? 1.0 / acc : acc;
        }
        return std::pow(x, p);
    }

    template <class F>
    Tensor unary(Op op, Tensor x, F f) {
        const Matrix& X = node(x.id()).val;
        Node n;
        n.op = op;
        n.in = {x.id(), -1, -1};
        n.val = Matrix(X.rows, X.cols);
        for (std::size_t i = 0; i < X.size(); ++i) n.val.data[i] = f(X.data[i]);
        return push(std::move(n));
    }

    Tensor reduce(Op op, Tensor x) {
        const Matrix& X = node(x.id()).val;
        double s = 0.0;
        for (double v : X.data) s += v;
        if (op == Op::mean_all) s /= static_cast<double>(X.size());
        Node n;
        n.op = op;
        n.in = {x.id(), -1, -1};
        n.val = Matrix::scalar(s);
        return push(std::move(n));
    }

    // Elementwise binary ops accept equal shapes or a 1x1 scalar on either side.
    Tensor elementwise(Op op, Tensor a, Tensor b) {
        const Matrix& A = node(a.id()).val;
        const Matrix& B = node(b.id()).val;
        if (!A.same_shape(B) && !A.is_scalar() && !B.is_scalar())
            throw std::runtime_error(std::string(op_name(op)) + ": shape mismatch, " +
                                     shape_str(A.rows, A.cols) + " vs " + shape_str(B.rows, B.cols));
        const Matrix& big = A.is_scalar() ? B : A;
        Node n;
        n.op = op;
        n.in = {a.id(), b.id(), -1};
        n.val = Matrix(big.rows, big.cols);
        const std::size_t sz = big.size();
        for (std::size_t i = 0; i < sz; ++i) {
            const double x = A.is_scalar() ? A.data[0] : A.data[i];
            const double y = B.is_scalar() ? B.data[0] : B.data[i];
            switch (op) {
                case Op::add: n.val.data[i] = x + y; break;
                case Op::sub: n.val.data[i] = x - y; break;
                case Op::mul: n.val.data[i] = x * y; break;
                case Op::div: n.val.data[i] = x / y; break;
                default: throw std::runtime_error("elementwise: bad op");
            }
        }
        return push(std::move(n));
    }

    Tensor affine_impl(Op op, Tensor x, Tensor w, Tensor b, std::shared_ptr<const Matrix> mask) {
        const Matrix& X = node(x.id()).val;
        const Matrix& W = node(w.id()).val;
        const Matrix& B = node(b.id()).val;
        if (X.cols != W.rows)
            throw std::runtime_error(std::string(op_name(op)) + ": input/weight dims disagree, " +
                                     shape_str(X.rows, X.cols) + " vs " + shape_str(W.rows, W.cols));
        if (B.rows != 1 || B.cols != W.cols)
            throw std::runtime_error(std::string(op_name(op)) + ": bias must be 1x" +
                                     std::to_string(W.cols));
        if (mask && !mask->same_shape(W))
            throw std::runtime_error("masked_affine: mask/weight shapes disagree");
        Node n;
        n.op = op;
        n.in = {x.id(), w.id(), b.id()};
        n.mask = std::move(mask);
        n.val = Matrix(X.rows, W.cols);
        for (std::size_t i = 0; i < X.rows; ++i)
            for (std::size_t j = 0; j < W.cols; ++j) n.val(i, j) = B(0, j);
        if (n.mask) {
            const Matrix& M = *n.mask;
            for (std::size_t i = 0; i < X.rows; ++i)
                for (std::size_t k = 0; k < X.cols; ++k) {
                    const double xv = X(i, k);
                    if (xv == 0.0) continue;
                    for (std::size_t j = 0; j < W.cols; ++j)
                        n.val(i, j) += xv * W(k, j) * M(k, j);
                }
        } else {
            for (std::size_t i = 0; i < X.rows; ++i)
                for (std::size_t k = 0; k < X.cols; ++k) {
                    const double xv = X(i, k);
                    for (std::size_t j = 0; j < W.cols; ++j) n.val(i, j) += xv * W(k, j);
                }
        }
        return push(std::move(n));
    }

    static void matmul_acc(const Matrix& A, const Matrix& B, Matrix& out) {
        for (std::size_t i = 0; i < A.rows; ++i)
            for (std::size_t k = 0; k < A.cols; ++k) {
                const double a = A(i, k);
                if (a == 0.0) continue;
                for (std::size_t j = 0; j < B.cols; ++j) out(i, j) += a * B(k, j);
            }
    }

    void ensure_grad(int id) {
        Node& n = node(id);
        if (n.grad.size() == 0) n.grad = Matrix(n.val.rows, n.val.cols, 0.0);
    }

    Matrix* grad_of(int id) {
        if (id < 0) return nullptr;
        Node& n = node(id);
        if (!n.requires_grad) return nullptr;
        ensure_grad(id);
        return &n.grad;
    }

    // Accumulate g into the input's gradient, reducing over a broadcast scalar.
    static void acc_bcast(Matrix* dst, const Matrix& g, std::size_t src_size) {
        if (!dst) return;
        if (dst->size() == g.size()) {
            for (std::size_t i = 0; i < g.size(); ++i) dst->data[i] += g.data[i];
        } else {
            double s = 0.0;
            for (double v : g.data) s += v;
            dst->data[0] += s;
        }
        (void)src_size;
    }

    void backward_node(Node& n) {
        const Matrix& g = n.grad;
        switch (n.op) {
            case Op::leaf:
                break;
            case Op::add: {
                acc_bcast(grad_of(n.in[0]), g, 0);
                acc_bcast(grad_of(n.in[1]), g, 0);
                break;
            }
            case Op::sub: {
                acc_bcast(grad_of(n.in[0]), g, 0);
                Matrix* db = grad_of(n.in[1]);
                if (db) {
                    if (db->size() == g.size())
                        for (std::size_t i = 0; i < g.size(); ++i) db->data[i] -= g.data[i];
                    else {
                        double s = 0.0;
                        for (double v : g.data) s += v;
                        db->data[0] -= s;
                    }
                }
                break;
            }
            case Op::mul:
            case Op::div: {
                const Matrix& A = node(n.in[0]).val;
                const Matrix& B = node(n.in[1]).val;
                Matrix* da = grad_of(n.in[0]);
                Matrix* db = grad_of(n.in[1]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double av = A.is_scalar() ? A.data[0] : A.data[i];
                    const double bv = B.is_scalar() ? B.data[0] : B.data[i];
                    const double gv = g.data[i];
                    double ga, gb;
                    if (n.op == Op::mul) {
                        ga = gv * bv;
                        gb = gv * av;
                    } else {
                        ga = gv / bv;
                        gb = -gv * av / (bv * bv);
                    }
                    if (da) da->data[A.is_scalar() ? 0 : i] += ga;
                    if (db) db->data[B.is_scalar() ? 0 : i] += gb;
                }
                break;
            }
            case Op::matmul: {
                const Matrix& A = node(n.in[0]).val;
                const Matrix& B = node(n.in[1]).val;
                Matrix* da = grad_of(n.in[0]);
                Matrix* db = grad_of(n.in[1]);
                if (da) {
                    // dA += g B^T
                    for (std::size_t i = 0; i < A.rows; ++i)
                        for (std::size_t j = 0; j < B.cols; ++j) {
                            const double gv = g(i, j);
                            if (gv == 0.0) continue;
                            for (std::size_t k = 0; k < A.cols; ++k)
                                (*da)(i, k) += gv * B(k, j);
                        }
                }
                if (db) {
                    // dB += A^T g
                    for (std::size_t i = 0; i < A.rows; ++i)
                        for (std::size_t k = 0; k < A.cols; ++k) {
                            const double av = A(i, k);
                            if (av == 0.0) continue;
                            for (std::size_t j = 0; j < B.cols; ++j)
                                (*db)(k, j) += av * g(i, j);
                        }
                }
                break;
            }
            case Op::tanh_fn: {
                Matrix* dx = grad_of(n.in[0]);
                if (dx)
                    for (std::size_t i = 0; i < g.size(); ++i)
                        dx->data[i] += g.data[i] * (1.0 - n.val.data[i] * n.val.data[i]);
                break;
            }
            case Op::exp_fn: {
                Matrix* dx = grad_of(n.in[0]);
                if (dx)
                    for (std::size_t i = 0; i < g.size(); ++i) dx->data[i] += g.data[i] * n.val.data[i];
                break;
            }
            case Op::log_fn: {
                const Matrix& X = node(n.in[0]).val;
                Matrix* dx = grad_of(n.in[0]);
                if (dx)
                    for (std::size_t i = 0; i < g.size(); ++i) dx->data[i] += g.data[i] / X.data[i];
                break;
            }
            case Op::relu_fn: {
                const Matrix& X = node(n.in[0]).val;
                Matrix* dx = grad_of(n.in[0]);
                if (dx)
                    for (std::size_t i = 0; i < g.size(); ++i)
                        dx->data[i] += X.data[i] > 0.0 ? g.data[i] : 0.0;
                break;
            }
            case Op::sigmoid_fn: {
                Matrix* dx = grad_of(n.in[0]);
                if (dx)
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        const double y = n.val.data[i];
                        dx->data[i] += g.data[i] * y * (1.0 - y);
                    }
                break;
            }
            case Op::pow_fn: {
                const Matrix& X = node(n.in[0]).val;
                Matrix* dx = grad_of(n.in[0]);
                if (dx)
                    for (std::size_t i = 0; i < g.size(); ++i)
                        dx->data[i] += g.data[i] * n.aux * pow_eval(X.data[i], n.aux - 1.0);
                break;
            }
            case Op::sum_all: {
                Matrix* dx = grad_of(n.in[0]);
                if (dx)
                    for (double& v : dx->data) v += g.data[0];
                break;
            }
            case Op::mean_all: {
                Matrix* dx = grad_of(n.in[0]);
                if (dx) {
                    const double s = g.data[0] / static_cast<double>(dx->size());
                    for (double& v : dx->data) v += s;
                }
                break;
            }
            case Op::row_sum: {
                Matrix* dx = grad_of(n.in[0]);
                if (dx)
                    for (std::size_t i = 0; i < dx->rows; ++i)
                        for (std::size_t j = 0; j < dx->cols; ++j) (*dx)(i, j) += g(i, 0);
                break;
            }
            case Op::col_mean: {
                Matrix* dx = grad_of(n.in[0]);
                if (dx) {
                    const double inv = 1.0 / static_cast<double>(dx->rows);
                    for (std::size_t i = 0; i < dx->rows; ++i)
                        for (std::size_t j = 0; j < dx->cols; ++j) (*dx)(i, j) += g(0, j) * inv;
                }
                break;
            }
            case Op::col_var: {
                const Matrix& X = node(n.in[0]).val;
                Matrix* dx = grad_of(n.in[0]);
                if (dx) {
                    const double inv = 2.0 / static_cast<double>(X.rows);
                    for (std::size_t i = 0; i < X.rows; ++i)
                        for (std::size_t j = 0; j < X.cols; ++j)
                            (*dx)(i, j) += g(0, j) * inv * (X(i, j) - n.saved_a(0, j));
                }
                break;
            }
            case Op::concat_cols: {
                std::size_t off = 0;
                for (int in_id : n.extra_in) {
                    const Matrix& part = node(in_id).val;
                    Matrix* dx = grad_of(in_id);
                    if (dx)
                        for (std::size_t i = 0; i < part.rows; ++i)
                            for (std::size_t j = 0; j < part.cols; ++j)
                                (*dx)(i, j) += g(i, off + j);
                    off += part.cols;
                }
                break;
            }
            case Op::slice_cols: {
                Matrix* dx = grad_of(n.in[0]);
                if (dx) {
                    const std::size_t begin = static_cast<std::size_t>(n.iaux0);
                    for (std::size_t i = 0; i < g.rows; ++i)
                        for (std::size_t j = 0; j < g.cols; ++j) (*dx)(i, begin + j) += g(i, j);
                }
                break;
            }
            case Op::affine:
            case Op::masked_affine: {
                const Matrix& X = node(n.in[0]).val;
                const Matrix& W = node(n.in[1]).val;
                Matrix* dx = grad_of(n.in[0]);
                Matrix* dw = grad_of(n.in[1]);
                Matrix* db = grad_of(n.in[2]);
                const Matrix* M = n.mask ? n.mask.get() : nullptr;
                if (db)
                    for (std::size_t i = 0; i < g.rows; ++i)
                        for (std::size_t j = 0; j < g.cols; ++j) (*db)(0, j) += g(i, j);
                if (dx) {
                    for (std::size_t i = 0; i < g.rows; ++i)
                        for (std::size_t j = 0; j < g.cols; ++j) {
                            const double gv = g(i, j);
                            if (gv == 0.0) continue;
                            for (std::size_t k = 0; k < X.cols; ++k) {
                                const double wv = M ? W(k, j) * (*M)(k, j) : W(k, j);
                                (*dx)(i, k) += gv * wv;
                            }
                        }
                }
                if (dw) {
                    for (std::size_t i = 0; i < g.rows; ++i)
                        for (std::size_t k = 0; k < X.cols; ++k) {
                            const double xv = X(i, k);
                            if (xv == 0.0) continue;
                            for (std::size_t j = 0; j < g.cols; ++j) {
                                const double mv = M ? (*M)(k, j) : 1.0;
                                (*dw)(k, j) += xv * g(i, j) * mv;
                            }
                        }
                }
                break;
            }
            case Op::batch_norm: {
                const Matrix& X = node(n.in[0]).val;
                const Matrix& G = node(n.in[1]).val;
                Matrix* dx = grad_of(n.in[0]);
                Matrix* dg = grad_of(n.in[1]);
                Matrix* db = grad_of(n.in[2]);
                const Matrix& m = n.saved_a;
                const Matrix& v = n.saved_b;
                const double eps = n.aux;
                const bool training = n.iaux0 == 1;
                const std::size_t R = X.rows, C = X.cols;
                for (std::size_t j = 0; j < C; ++j) {
                    const double rstd = 1.0 / std::sqrt(v(0, j) + eps);
                    const double sc = std::exp(G(0, j));
                    double sum_dy = 0.0, sum_dy_xhat = 0.0;
                    for (std::size_t i = 0; i < R; ++i) {
                        const double xhat = (X(i, j) - m(0, j)) * rstd;
                        const double dy = g(i, j);
                        sum_dy += dy;
                        sum_dy_xhat += dy * xhat;
                    }
                    if (db) (*db)(0, j) += sum_dy;
                    if (dg) (*dg)(0, j) += sc * sum_dy_xhat;
                    if (dx) {
                        if (training) {
                            const double invR = 1.0 / static_cast<double>(R);
                            for (std::size_t i = 0; i < R; ++i) {
                                const double xhat = (X(i, j) - m(0, j)) * rstd;
                                const double dxhat = g(i, j) * sc;
                                (*dx)(i, j) += rstd * (dxhat - sum_dy * sc * invR -
                                                       xhat * (sum_dy_xhat * sc * invR));
                            }
                        } else {
                            for (std::size_t i = 0; i < R; ++i) (*dx)(i, j) += g(i, j) * sc * rstd;
                        }
                    }
                }
                break;
            }
        }
    }
};

inline std::size_t Tensor::rows() const { return tape_->node(id_).val.rows; }
inline std::size_t Tensor::cols() const { return tape_->node(id_).val.cols; }
inline const Matrix& Tensor::value() const { return tape_->node(id_).val; }
inline const Matrix& Tensor::grad() const { return tape_->node(id_).grad; }

}  // namespace graph

using graph::Tape;
using graph::Tensor;

}  // namespace flowinfer
