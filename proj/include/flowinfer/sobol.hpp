#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "graph.hpp"

namespace flowinfer {

// Sobol' low-discrepancy sequence for up to 21 dimensions, gray-code order.
// Direction numbers from the Joe–Kuo "new-joe-kuo-6" tables; the first 2^k
// points of every one-dimensional projection form a (0, k, 1)-net in base 2.
class SobolSequence {
public:
    static constexpr int kMaxDim = 21;
    static constexpr int kBits = 32;

    explicit SobolSequence(int dim) : dim_(dim) {
        if (dim < 1 || dim > kMaxDim)
            throw std::runtime_error("sobol: dimension must be in [1, " +
                                     std::to_string(kMaxDim) + "]");
        // primitive polynomial degree s, coefficient a, initial m values
        struct DimSpec {
            int s;
            std::uint32_t a;
            std::uint32_t m[7];
        };
        static const DimSpec specs[kMaxDim - 1] = {
            {1, 0, {1}},
            {2, 1, {1, 3}},
            {3, 1, {1, 3, 1}},
            {3, 2, {1, 1, 1}},
            {4, 1, {1, 1, 3, 3}},
            {4, 4, {1, 3, 5, 13}},
            {5, 2, {1, 1, 5, 5, 17}},
            {5, 4, {1, 1, 5, 5, 5}},
            {5, 7, {1, 1, 7, 11, 19}},
            {5, 11, {1, 1, 5, 1, 1}},
            {5, 13, {1, 1, 1, 3, 11}},
            {5, 14, {1, 3, 5, 5, 31}},
            {6, 1, {1, 3, 3, 9, 7, 49}},
            {6, 13, {1, 1, 1, 15, 21, 21}},
            {6, 16, {1, 3, 1, 13, 27, 49}},
            {6, 19, {1, 1, 1, 15, 7, 5}},
            {6, 22, {1, 3, 1, 15, 13, 25}},
            {6, 25, {1, 1, 5, 5, 19, 61}},
            {7, 1, {1, 3, 7, 11, 23, 15, 103}},
            {7, 4, {1, 3, 7, 13, 13, 15, 69}},
        };

        v_.assign(static_cast<std::size_t>(dim), std::vector<std::uint32_t>(kBits, 0));
        // dimension 0: van der Corput, v_k = 1 << (32 - k)
        for (int k = 0; k < kBits; ++k) v_[0][static_cast<std::size_t>(k)] = 1u << (31 - k);
        for (int j = 1; j < dim; ++j) {
            const DimSpec& sp = specs[j - 1];
            auto& v = v_[static_cast<std::size_t>(j)];
            for (int k = 0; k < sp.s; ++k) v[static_cast<std::size_t>(k)] = sp.m[k] << (31 - k);
            for (int k = sp.s; k < kBits; ++k) {
                std::uint32_t val = v[static_cast<std::size_t>(k - sp.s)] ^
                                    (v[static_cast<std::size_t>(k - sp.s)] >> sp.s);
                for (int i = 1; i < sp.s; ++i)
                    if ((sp.a >> (sp.s - 1 - i)) & 1u) val ^= v[static_cast<std::size_t>(k - i)];
                v[static_cast<std::size_t>(k)] = val;
            }
        }
        state_.assign(static_cast<std::size_t>(dim), 0);
        index_ = 0;
    }

    int dim() const { return dim_; }

    // next point in [0,1)^d
    std::vector<double> next() {
        std::vector<double> point(static_cast<std::size_t>(dim_));
        if (index_ > 0) {
            // flip direction c = trailing zeros of the new index (Antonov-Saleev)
            std::uint64_t n = index_;
            int c = 0;
            while (!(n & 1u)) {
                n >>= 1;
                ++c;
            }
            for (int j = 0; j < dim_; ++j)
                state_[static_cast<std::size_t>(j)] ^= v_[static_cast<std::size_t>(j)]
                                                         [static_cast<std::size_t>(c)];
        }
        constexpr double scale = 1.0 / 4294967296.0;  // 2^-32
        for (int j = 0; j < dim_; ++j)
            point[static_cast<std::size_t>(j)] = static_cast<double>(state_[static_cast<std::size_t>(j)]) * scale;
        ++index_;
        return point;
    }

    // first n points as an n x d matrix
    static Matrix points(int n, int dim) {
        SobolSequence seq(dim);
        Matrix out(static_cast<std::size_t>(n), static_cast<std::size_t>(dim));
        for (int i = 0; i < n; ++i) {
            const auto p = seq.next();
            for (int j = 0; j < dim; ++j)
                out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
                    p[static_cast<std::size_t>(j)];
        }
        return out;
    }

private:
    int dim_;
    std::vector<std::vector<std::uint32_t>> v_;
    std::vector<std::uint32_t> state_;
    std::uint64_t index_ = 0;
};

}  // namespace flowinfer
