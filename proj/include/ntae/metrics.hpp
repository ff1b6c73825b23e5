#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "ntae/errors.hpp"
#include "ntae/rng.hpp"
#include "ntae/tensor.hpp"

namespace ntae {

inline double nmse(const Tensord& xhat, const Tensord& xref) {
    if (xhat.shape() != xref.shape())
        throw ShapeError("nmse of " + shape_str(xhat.shape()) + " against " +
                         shape_str(xref.shape()));
    const double denom = squared_norm(xref);
    if (denom <= 0.0) throw DegenerateInputError("nmse against a zero-norm reference");
    return (xhat.array() - xref.array()).square().sum() / denom;
}

struct ClusteringResult {
    std::vector<int> assignment;
    Eigen::MatrixXd centroids;  // k x d
    double inertia = 0.0;
};

namespace detail {

inline double sq_dist(const Eigen::MatrixXd& points, Index p, const Eigen::MatrixXd& centroids,
                      Index c) {
    return (points.row(p) - centroids.row(c)).squaredNorm();
}

/// One k-means++ seeding + Lloyd run.
inline ClusteringResult lloyd_once(const Eigen::MatrixXd& points, int k, int max_iter, Rng& rng) {
    const Index n = points.rows();
    ClusteringResult r;
    r.centroids.resize(k, points.cols());
    std::vector<double> dist2(static_cast<std::size_t>(n),
                              std::numeric_limits<double>::infinity());

    r.centroids.row(0) = points.row(static_cast<Index>(rng.below(n)));
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (Index p = 0; p < n; ++p) {
            dist2[static_cast<std::size_t>(p)] = std::min(
                dist2[static_cast<std::size_t>(p)], sq_dist(points, p, r.centroids, c - 1));
            total += dist2[static_cast<std::size_t>(p)];
        }
        Index chosen = n - 1;
        if (total > 0.0) {
            const double target = rng.uniform01() * total;
            double acc = 0.0;
            for (Index p = 0; p < n; ++p) {
                acc += dist2[static_cast<std::size_t>(p)];
                if (acc >= target) {
                    chosen = p;
                    break;
                }
            }
        } else {
            chosen = static_cast<Index>(rng.below(n));
        }
        r.centroids.row(c) = points.row(chosen);
    }

    r.assignment.assign(static_cast<std::size_t>(n), -1);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        for (Index p = 0; p < n; ++p) {
            int best = 0;
            double best_d = sq_dist(points, p, r.centroids, 0);
            for (int c = 1; c < k; ++c) {
                const double d = sq_dist(points, p, r.centroids, c);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (r.assignment[static_cast<std::size_t>(p)] != best) {
                r.assignment[static_cast<std::size_t>(p)] = best;
                changed = true;
            }
        }
        if (!changed) break;

        r.centroids.setZero();
        std::fill(counts.begin(), counts.end(), 0);
        for (Index p = 0; p < n; ++p) {
            r.centroids.row(r.assignment[static_cast<std::size_t>(p)]) += points.row(p);
            ++counts[static_cast<std::size_t>(r.assignment[static_cast<std::size_t>(p)])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                r.centroids.row(c) /= counts[static_cast<std::size_t>(c)];
            } else {
                // re-seed an empty cluster at the point farthest from its centroid
                Index far = 0;
                double far_d = -1.0;
                for (Index p = 0; p < n; ++p) {
                    const double d =
                        sq_dist(points, p, r.centroids,
                                r.assignment[static_cast<std::size_t>(p)]);
                    if (d > far_d) {
                        far_d = d;
                        far = p;
                    }
                }
                r.centroids.row(c) = points.row(far);
            }
        }
    }

    r.inertia = 0.0;
    for (Index p = 0; p < n; ++p)
        r.inertia += sq_dist(points, p, r.centroids, r.assignment[static_cast<std::size_t>(p)]);
    return r;
}

}  // namespace detail

/// Best-inertia k-means over `restarts` independent k-means++ seedings;
/// deterministic in `seed` (ties keep the earlier restart).
inline ClusteringResult kmeans(const Eigen::MatrixXd& points, int k, int restarts = 10,
                               int max_iter = 100, std::uint64_t seed = 0) {
    const Index n = points.rows();
    if (n < 1) throw ConfigError("kmeans needs at least one point");
    if (k < 1 || k > n)
        throw ConfigError("kmeans with k=" + std::to_string(k) + " on " + std::to_string(n) +
                          " points");
    if (restarts < 1 || max_iter < 1) throw ConfigError("restarts and max_iter must be positive");
    ClusteringResult best;
    for (int r = 0; r < restarts; ++r) {
        Rng rng(derive_seed(seed, "kmeans.restart", {static_cast<std::uint64_t>(r)}));
        ClusteringResult cur = detail::lloyd_once(points, k, max_iter, rng);
        if (r == 0 || cur.inertia < best.inertia) best = std::move(cur);
    }
    return best;
}

namespace detail {

/// Contingency table between two labelings; labels may be arbitrary ints.
inline Eigen::MatrixXd contingency(const std::vector<int>& pred, const std::vector<int>& truth) {
    std::map<int, int> pid, tid;
    for (int v : pred) pid.emplace(v, static_cast<int>(pid.size()));
    for (int v : truth) tid.emplace(v, static_cast<int>(tid.size()));
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(static_cast<Index>(pid.size()),
                                              static_cast<Index>(tid.size()));
    for (std::size_t i = 0; i < pred.size(); ++i) c(pid[pred[i]], tid[truth[i]]) += 1.0;
    return c;
}

/// Maximum-score assignment of rows to columns (Hungarian algorithm with
/// potentials on the square-padded matrix); returns the matched score sum.
inline double assignment_max(const Eigen::MatrixXd& score) {
    const Index m = std::max(score.rows(), score.cols());
    Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(m, m);
    cost.topLeftCorner(score.rows(), score.cols()) = -score;

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(m) + 1, 0.0),
        v(static_cast<std::size_t>(m) + 1, 0.0);
    std::vector<Index> match(static_cast<std::size_t>(m) + 1, 0),
        way(static_cast<std::size_t>(m) + 1, 0);
    for (Index i = 1; i <= m; ++i) {
        match[0] = i;
        Index j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
        std::vector<bool> used(static_cast<std::size_t>(m) + 1, false);
        do {
            used[static_cast<std::size_t>(j0)] = true;
            const Index i0 = match[static_cast<std::size_t>(j0)];
            Index j1 = 0;
            double delta = inf;
            for (Index j = 1; j <= m; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (Index j = 0; j <= m; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<std::size_t>(j0)] != 0);
        do {
            const Index j1 = way[static_cast<std::size_t>(j0)];
            match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    double total = 0.0;
    for (Index j = 1; j <= m; ++j) {
        const Index i = match[static_cast<std::size_t>(j)];
        if (i >= 1 && i <= score.rows() && j <= score.cols()) total += score(i - 1, j - 1);
    }
    return total;
}

inline void check_labelings(const std::vector<int>& pred, const std::vector<int>& truth,
                            std::size_t min_size) {
    if (pred.size() != truth.size())
        throw ConfigError("labelings of different lengths: " + std::to_string(pred.size()) +
                          " vs " + std::to_string(truth.size()));
    if (pred.size() < min_size)
        throw ConfigError("need at least " + std::to_string(min_size) + " samples");
}

inline double comb2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace detail

/// Fraction of samples that agree under the best injective cluster-to-class
/// matching.
inline double clustering_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    detail::check_labelings(pred, truth, 1);
    const Eigen::MatrixXd c = detail::contingency(pred, truth);
    return detail::assignment_max(c) / static_cast<double>(pred.size());
}

/// Adjusted Rand index from pair counts; a degenerate denominator (both
/// partitions trivial) scores 1 for identical partitions and 0 otherwise.
inline double ari(const std::vector<int>& pred, const std::vector<int>& truth) {
    detail::check_labelings(pred, truth, 2);
    const Eigen::MatrixXd c = detail::contingency(pred, truth);
    double sum_ij = 0.0;
    for (Index i = 0; i < c.rows(); ++i)
        for (Index j = 0; j < c.cols(); ++j) sum_ij += detail::comb2(c(i, j));
    double sum_a = 0.0, sum_b = 0.0;
    for (Index i = 0; i < c.rows(); ++i) sum_a += detail::comb2(c.row(i).sum());
    for (Index j = 0; j < c.cols(); ++j) sum_b += detail::comb2(c.col(j).sum());
    const double pairs = detail::comb2(static_cast<double>(pred.size()));
    const double expected = sum_a * sum_b / pairs;
    const double denom = 0.5 * (sum_a + sum_b) - expected;
    if (denom == 0.0) return sum_ij == expected && sum_a == sum_b ? 1.0 : 0.0;
    return (sum_ij - expected) / denom;
}

/// Mutual information normalized by the geometric mean of the entropies;
/// two zero-entropy partitions are identical (1), one zero-entropy side
/// carries no information (0).
inline double nmi(const std::vector<int>& pred, const std::vector<int>& truth) {
    detail::check_labelings(pred, truth, 2);
    const Eigen::MatrixXd c = detail::contingency(pred, truth);
    const double n = static_cast<double>(pred.size());
    double hp = 0.0, ht = 0.0, mi = 0.0;
    for (Index i = 0; i < c.rows(); ++i) {
        const double p = c.row(i).sum() / n;
        if (p > 0.0) hp -= p * std::log(p);
    }
    for (Index j = 0; j < c.cols(); ++j) {
        const double p = c.col(j).sum() / n;
        if (p > 0.0) ht -= p * std::log(p);
    }
    for (Index i = 0; i < c.rows(); ++i)
        for (Index j = 0; j < c.cols(); ++j) {
            if (c(i, j) <= 0.0) continue;
            const double pij = c(i, j) / n;
            mi += pij * std::log(n * c(i, j) / (c.row(i).sum() * c.col(j).sum()));
        }
    if (hp == 0.0 && ht == 0.0) return 1.0;
    if (hp == 0.0 || ht == 0.0) return 0.0;
    return mi / std::sqrt(hp * ht);
}

/// Fraction of samples in the majority class of their own cluster.
inline double purity(const std::vector<int>& pred, const std::vector<int>& truth) {
    detail::check_labelings(pred, truth, 2);
    const Eigen::MatrixXd c = detail::contingency(pred, truth);
    double hit = 0.0;
    for (Index i = 0; i < c.rows(); ++i) hit += c.row(i).maxCoeff();
    return hit / static_cast<double>(pred.size());
}

}  // namespace ntae
