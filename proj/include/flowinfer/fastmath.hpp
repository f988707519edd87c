#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>

namespace flowinfer::fastmath {

// exp(y) for y in [-708, 708] via range reduction y = n ln2 + r and a
// degree-11 Taylor kernel on |r| <= ln2/2. Error stays within a few ulp;
// branch-free so compilers can vectorize the surrounding loops.
inline double fast_exp(double y) {
    constexpr double inv_ln2 = 1.4426950408889634074;
    constexpr double ln2_hi = 6.93147180369123816490e-01;
    constexpr double ln2_lo = 1.90821492927058770002e-10;
    const double nd = std::nearbyint(y * inv_ln2);
    double r = y - nd * ln2_hi;
    r -= nd * ln2_lo;
    double p = 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    std::int64_t bits;
    std::memcpy(&bits, &p, sizeof(bits));
    bits += static_cast<std::int64_t>(nd) << 52;
    std::memcpy(&p, &bits, sizeof(bits));
    return p;
}

// tanh accurate to ~5e-15 absolute; |x| > 20 saturates to exactly +-1.
inline double fast_tanh(double x) {
    const double ax = std::abs(x) < 20.0 ? std::abs(x) : 20.0;
    const double e = fast_exp(-2.0 * ax);
    const double t = (1.0 - e) / (1.0 + e);
    return x < 0.0 ? -t : t;
}

// in-place tanh over a contiguous array; the loop body is branch-free so it
// vectorizes
inline void tanh_inplace(double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] = fast_tanh(x[i]);
}

}  // namespace flowinfer::fastmath
