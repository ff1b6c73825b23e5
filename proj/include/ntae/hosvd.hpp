#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "ntae/errors.hpp"
#include "ntae/tensor.hpp"

namespace ntae {

/// Truncated Tucker representation: core of shape (K_1..K_N) plus one
/// orthonormal factor I_n x K_n per mode.
struct TuckerFactors {
    Tensord core;
    std::vector<Eigen::MatrixXd> factors;
};

namespace detail {

/// Deterministic sign convention: the largest-magnitude entry of each column
/// is made positive (first occurrence wins on ties).
inline void fix_column_signs(Eigen::MatrixXd& u) {
    for (Eigen::Index c = 0; c < u.cols(); ++c) {
        Eigen::Index imax = 0;
        u.col(c).cwiseAbs().maxCoeff(&imax);
        if (u(imax, c) < 0.0) u.col(c) = -u.col(c);
    }
}

}  // namespace detail

/// Top-k left singular vectors of unfold(X, mode) via a symmetric
/// eigendecomposition of the Gram matrix.
inline Eigen::MatrixXd leading_left_singular_vectors(const Tensord& x, int mode, Index k) {
    const Tensord u = unfold(x, mode);
    const Index rows = u.shape()[0];
    if (k < 1 || k > rows)
        throw RankError("rank " + std::to_string(k) + " outside [1," + std::to_string(rows) +
                        "] at mode " + std::to_string(mode));
    Eigen::MatrixXd gram(rows, rows);
    gram.noalias() = u.matrix() * u.matrix().transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (es.info() != Eigen::Success) throw DegenerateInputError("eigendecomposition failed");
    Eigen::MatrixXd top(rows, k);
    for (Index c = 0; c < k; ++c) top.col(c) = es.eigenvectors().col(rows - 1 - c);
    detail::fix_column_signs(top);
    return top;
}

/// Truncated higher-order SVD at the given multilinear rank.
inline TuckerFactors hosvd(const Tensord& x, const std::vector<Index>& ranks) {
    if (static_cast<int>(ranks.size()) != x.order())
        throw RankError("need one rank per mode: got " + std::to_string(ranks.size()) +
                        " for order " + std::to_string(x.order()));
    TuckerFactors f;
    f.factors.reserve(ranks.size());
    for (int n = 1; n <= x.order(); ++n)
        f.factors.push_back(leading_left_singular_vectors(x, n, ranks[n - 1]));
    Tensord core = x;
    for (int n = 1; n <= x.order(); ++n)
        core = mode_n_product(core, f.factors[n - 1].transpose(), n);
    f.core = std::move(core);
    return f;
}

/// Composes core x_1 U_1 ... x_N U_N.
inline Tensord tucker_reconstruct(const TuckerFactors& f) {
    Tensord x = f.core;
    for (std::size_t n = 0; n < f.factors.size(); ++n)
        x = mode_n_product(x, f.factors[n], static_cast<int>(n + 1));
    return x;
}

/// Projects a tensor onto existing factors: X x_1 U_1^T ... x_N U_N^T.
inline Tensord tucker_project(const Tensord& x, const TuckerFactors& f) {
    Tensord core = x;
    for (std::size_t n = 0; n < f.factors.size(); ++n)
        core = mode_n_product(core, f.factors[n].transpose(),
                              static_cast<int>(n + 1));
    return core;
}

}  // namespace ntae
