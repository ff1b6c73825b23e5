#pragma once

// Independent oracles used by the test suites. Everything here recomputes
// results from first principles (explicit index maps, direct summation,
// finite differences, exhaustive pair counts) and must stay decoupled from
// the library's implementation paths.

#include <cmath>
#include <functional>
#include <vector>

#include "ntae/rng.hpp"
#include "ntae/tensor.hpp"

namespace ntae::testing {

inline double rel_err(double a, double b) {
    const double denom = std::max(std::abs(a), std::abs(b));
    if (denom == 0.0) return 0.0;
    return std::abs(a - b) / denom;
}

inline double max_rel_err(const Tensord& a, const Tensord& b) {
    double m = 0.0;
    for (Index i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
    return m;
}

inline bool bitwise_equal(const Tensord& a, const Tensord& b) {
    if (a.shape() != b.shape()) return false;
    for (Index i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

// Decomposes a row-major flat offset into a multi-index by div/mod.
inline std::vector<Index> unflatten(Index flat, const Shape& shape) {
    std::vector<Index> idx(shape.size());
    for (std::size_t k = shape.size(); k-- > 0;) {
        idx[k] = flat % shape[k];
        flat /= shape[k];
    }
    return idx;
}

// Mode-n unfolding straight from the definition: element (i_1..i_N) lands at
// row i_n, column sum_{k != n} i_k * prod_{m<k, m != n} I_m.
inline Tensord oracle_unfold(const Tensord& x, int mode) {
    const Shape& s = x.shape();
    const Index rows = s[mode - 1];
    const Index cols = x.size() / rows;
    Tensord out(Shape{rows, cols});
    for (Index flat = 0; flat < x.size(); ++flat) {
        const std::vector<Index> idx = unflatten(flat, s);
        Index col = 0;
        Index w = 1;
        for (std::size_t k = 0; k < s.size(); ++k) {
            if (static_cast<int>(k) == mode - 1) continue;
            col += idx[k] * w;
            w *= s[k];
        }
        out[idx[mode - 1] * cols + col] = x[flat];
    }
    return out;
}

// Mode-n product by direct summation over the contracted index.
inline Tensord oracle_mode_product(const Tensord& x, const Tensord& a, int mode) {
    const Shape& s = x.shape();
    Shape target = s;
    const Index rows = a.shape()[0];
    const Index in_dim = a.shape()[1];
    target[mode - 1] = rows;
    Tensord out(target);
    for (Index flat = 0; flat < out.size(); ++flat) {
        std::vector<Index> idx = unflatten(flat, target);
        double acc = 0.0;
        for (Index i = 0; i < in_dim; ++i) {
            std::vector<Index> src = idx;
            src[mode - 1] = i;
            acc += a[idx[mode - 1] * in_dim + i] * x.at(src);
        }
        out[flat] = acc;
    }
    return out;
}

inline Tensord random_tensor(const Shape& shape, std::uint64_t seed) {
    return random_normal(shape, seed);
}

// Random shape with the given order, extents in [lo, hi].
inline Shape random_shape(Rng& rng, int order, Index lo, Index hi) {
    Shape s(static_cast<std::size_t>(order));
    for (auto& e : s) e = lo + rng.below(hi - lo + 1);
    return s;
}

// Central finite difference of f at x (scalar-valued f over a flat vector).
inline std::vector<double> central_differences(const std::function<double()>& f,
                                               double* coords, Index count, double eps) {
    std::vector<double> g(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i) {
        const double keep = coords[i];
        coords[i] = keep + eps;
        const double fp = f();
        coords[i] = keep - eps;
        const double fm = f();
        coords[i] = keep;
        g[static_cast<std::size_t>(i)] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

}  // namespace ntae::testing
