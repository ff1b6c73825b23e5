#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <vector>

#include "ntae/errors.hpp"
#include "ntae/models.hpp"
#include "ntae/rng.hpp"
#include "ntae/tensor.hpp"

namespace ntae {

/// Synthetic Tucker protocol: B samples of shape (I,...,I), cores of ratio
/// rho per non-batch mode, shared perturbed orthonormal factors, AWGN at the
/// given SNR. `order` counts the batch mode.
struct SynthConfig {
    int order = 3;
    Index dim = 20;
    Index batch = 512;
    double core_ratio = 0.25;
    double factor_noise = 0.05;
    double snr_db = 30.0;
    bool per_sample_factors = false;
    std::uint64_t seed = 0;
};

struct Dataset {
    Tensord noisy;
    std::optional<Tensord> clean;
    std::optional<std::vector<int>> labels;

    Index batch() const { return noisy.shape()[0]; }

    const Tensord& reference() const { return clean ? *clean : noisy; }
};

inline void validate(const SynthConfig& c) {
    if (c.order < 2) throw ConfigError("order must be at least 2 (a batch of vectors)");
    if (c.batch < 2) throw ConfigError("batch must be at least 2");
    if (!(c.core_ratio > 0.0 && c.core_ratio <= 1.0))
        throw ConfigError("core_ratio must lie in (0,1]");
    if (c.dim < 1 || std::llround(c.core_ratio * static_cast<double>(c.dim)) < 1)
        throw ConfigError("core_ratio * dim must round to at least 1");
}

/// QR of a Gaussian matrix by modified Gram-Schmidt with a second
/// re-orthogonalization pass.
inline Eigen::MatrixXd orthonormal_factor(Index rows, Index cols, std::uint64_t seed) {
    if (cols > rows)
        throw RankError("cannot build " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " orthonormal columns");
    Rng rng(seed);
    Eigen::MatrixXd a(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) a(i, j) = rng.normal();
    Eigen::MatrixXd q(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        Eigen::VectorXd v = a.col(j);
        for (int pass = 0; pass < 2; ++pass)
            for (Index i = 0; i < j; ++i) v -= q.col(i).dot(v) * q.col(i);
        const double norm = v.norm();
        if (norm < 1e-12) throw DegenerateInputError("rank-deficient Gaussian draw");
        q.col(j) = v / norm;
    }
    return q;
}

/// sigma^2 = ||X||_F^2 / (count * 10^(snr/10)); an infinite SNR is a no-op.
inline Tensord add_awgn(const Tensord& x, double snr_db, std::uint64_t seed) {
    if (std::isinf(snr_db)) return x;
    const double power = squared_norm(x);
    if (power <= 0.0) throw DegenerateInputError("cannot scale noise against a zero-norm tensor");
    const double sigma =
        std::sqrt(power / (static_cast<double>(x.size()) * std::pow(10.0, snr_db / 10.0)));
    Tensord out = x;
    Rng rng(seed);
    for (Index i = 0; i < out.size(); ++i) out[i] += sigma * rng.normal();
    return out;
}

inline Dataset synth_tucker_batch(const SynthConfig& c) {
    validate(c);
    const Index rank = std::max<Index>(1, std::llround(c.core_ratio * static_cast<double>(c.dim)));
    const int sample_order = c.order - 1;

    Shape core_shape{c.batch};
    core_shape.insert(core_shape.end(), static_cast<std::size_t>(sample_order), rank);
    const Tensord core = random_normal(core_shape, derive_seed(c.seed, "synth.core"));

    Dataset d;
    if (!c.per_sample_factors) {
        Tensord clean = core;
        for (int n = 2; n <= c.order; ++n) {
            Eigen::MatrixXd u = orthonormal_factor(
                c.dim, rank, derive_seed(c.seed, "synth.factor", {static_cast<std::uint64_t>(n)}));
            Rng perturb(derive_seed(c.seed, "synth.perturb", {static_cast<std::uint64_t>(n)}));
            for (Index j = 0; j < u.cols(); ++j)
                for (Index i = 0; i < u.rows(); ++i) u(i, j) += c.factor_noise * perturb.normal();
            clean = mode_n_product(clean, u, n);
        }
        d.clean = std::move(clean);
    } else {
        Shape sample_shape(static_cast<std::size_t>(sample_order), c.dim);
        Shape sample_core(static_cast<std::size_t>(sample_order), rank);
        Shape full{c.batch};
        full.insert(full.end(), static_cast<std::size_t>(sample_order), c.dim);
        Tensord clean(std::move(full));
        const Index core_stride = shape_product(sample_core);
        const Index out_stride = shape_product(sample_shape);
        for (Index b = 0; b < c.batch; ++b) {
            Tensord g(sample_core);
            std::copy_n(core.data() + b * core_stride, core_stride, g.data());
            for (int n = 2; n <= c.order; ++n) {
                Eigen::MatrixXd u = orthonormal_factor(
                    c.dim, rank,
                    derive_seed(c.seed, "synth.factor",
                                {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(b)}));
                Rng perturb(derive_seed(
                    c.seed, "synth.perturb",
                    {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(b)}));
                for (Index j = 0; j < u.cols(); ++j)
                    for (Index i = 0; i < u.rows(); ++i) u(i, j) += c.factor_noise * perturb.normal();
                g = mode_n_product(g, u, n - 1);
            }
            std::copy_n(g.data(), out_stride, clean.data() + b * out_stride);
        }
        d.clean = std::move(clean);
    }
    d.noisy = add_awgn(*d.clean, c.snr_db, derive_seed(c.seed, "synth.noise"));
    return d;
}

/// Gathers the given samples of noisy/clean/labels into a new dataset.
inline Dataset gather(const Dataset& d, const std::vector<Index>& indices) {
    Dataset out;
    out.noisy = gather_batch(d.noisy, indices);
    if (d.clean) out.clean = gather_batch(*d.clean, indices);
    if (d.labels) {
        std::vector<int> l;
        l.reserve(indices.size());
        for (Index i : indices) l.push_back((*d.labels)[static_cast<std::size_t>(i)]);
        out.labels = std::move(l);
    }
    return out;
}

/// Applies a random non-identity permutation of the non-batch modes to a
/// uniformly chosen ceil(fraction*B) subset of samples (noisy and clean move
/// identically). The chosen sample indices land in *permuted_out when given,
/// sorted ascending.
inline Dataset permute_modes_subset(const Dataset& d, double fraction, std::uint64_t seed,
                                    std::vector<Index>* permuted_out = nullptr) {
    if (!(fraction >= 0.0 && fraction <= 1.0))
        throw ConfigError("permuted fraction must lie in [0,1]");
    const Shape& s = d.noisy.shape();
    const int sample_order = static_cast<int>(s.size()) - 1;
    if (sample_order < 1) throw ShapeError("need at least one non-batch mode");
    for (std::size_t k = 2; k < s.size(); ++k)
        if (s[k] != s[1])
            throw ShapeError("mode permutation needs equal non-batch extents, got " +
                             shape_str(s));
    if (d.clean && d.clean->shape() != s)
        throw ShapeError("clean/noisy shape mismatch");

    const Index b = d.noisy.shape()[0];
    const Index count = static_cast<Index>(std::ceil(fraction * static_cast<double>(b)));
    if (permuted_out) permuted_out->clear();
    Dataset out = d;
    if (count == 0) return out;

    Rng rng(derive_seed(seed, "permute.subset"));
    std::vector<Index> order(static_cast<std::size_t>(b));
    for (Index i = 0; i < b; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    std::vector<Index> chosen(order.begin(), order.begin() + count);
    std::sort(chosen.begin(), chosen.end());
    if (permuted_out) *permuted_out = chosen;

    Shape sample_shape(s.begin() + 1, s.end());
    const Index stride = shape_product(sample_shape);
    std::vector<int> perm(static_cast<std::size_t>(sample_order));
    Rng perm_rng(derive_seed(seed, "permute.draw"));
    auto draw_non_identity = [&] {
        while (true) {
            for (int k = 0; k < sample_order; ++k) perm[static_cast<std::size_t>(k)] = k + 1;
            perm_rng.shuffle(perm);
            for (int k = 0; k < sample_order; ++k)
                if (perm[static_cast<std::size_t>(k)] != k + 1) return;
        }
    };
    auto apply = [&](Tensord& batch, Index sample) {
        Tensord t(sample_shape);
        std::copy_n(batch.data() + sample * stride, stride, t.data());
        const Tensord p = permute(t, perm);
        std::copy_n(p.data(), stride, batch.data() + sample * stride);
    };
    for (Index sample : chosen) {
        draw_non_identity();
        apply(out.noisy, sample);
        if (out.clean) apply(*out.clean, sample);
    }
    return out;
}

/// Seeded shuffle split; the train side takes ceil(fraction*B) samples.
inline std::pair<Dataset, Dataset> train_test_split(const Dataset& d, double train_fraction,
                                                    std::uint64_t seed) {
    const Index b = d.batch();
    const Index n_train =
        static_cast<Index>(std::ceil(train_fraction * static_cast<double>(b)));
    if (n_train <= 0 || n_train >= b)
        throw ConfigError("split fraction " + std::to_string(train_fraction) +
                          " leaves an empty side for batch " + std::to_string(b));
    std::vector<Index> order(static_cast<std::size_t>(b));
    for (Index i = 0; i < b; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed(seed, "split"));
    rng.shuffle(order);
    const std::vector<Index> train_idx(order.begin(), order.begin() + n_train);
    const std::vector<Index> test_idx(order.begin() + n_train, order.end());
    return {gather(d, train_idx), gather(d, test_idx)};
}

/// Split that walks the permuted samples alternately into train and test
/// ("evenly distribute"), respecting side capacities; unpermuted samples fill
/// the remaining seats in shuffle order. An empty permuted set reduces to the
/// plain split, bit for bit.
inline std::pair<Dataset, Dataset> train_test_split_alternating(
    const Dataset& d, double train_fraction, std::uint64_t seed,
    const std::vector<Index>& permuted) {
    if (permuted.empty()) return train_test_split(d, train_fraction, seed);
    const Index b = d.batch();
    const Index n_train =
        static_cast<Index>(std::ceil(train_fraction * static_cast<double>(b)));
    if (n_train <= 0 || n_train >= b)
        throw ConfigError("split fraction " + std::to_string(train_fraction) +
                          " leaves an empty side for batch " + std::to_string(b));
    std::vector<Index> order(static_cast<std::size_t>(b));
    for (Index i = 0; i < b; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed(seed, "split"));
    rng.shuffle(order);

    std::vector<bool> is_permuted(static_cast<std::size_t>(b), false);
    for (Index i : permuted) is_permuted[static_cast<std::size_t>(i)] = true;

    std::vector<Index> train_idx, test_idx;
    train_idx.reserve(static_cast<std::size_t>(n_train));
    test_idx.reserve(static_cast<std::size_t>(b - n_train));
    const Index test_cap = b - n_train;
    bool to_train = true;
    for (Index i : order) {
        if (!is_permuted[static_cast<std::size_t>(i)]) continue;
        const bool train_full = static_cast<Index>(train_idx.size()) >= n_train;
        const bool test_full = static_cast<Index>(test_idx.size()) >= test_cap;
        if ((to_train && !train_full) || test_full)
            train_idx.push_back(i);
        else
            test_idx.push_back(i);
        to_train = !to_train;
    }
    for (Index i : order) {
        if (is_permuted[static_cast<std::size_t>(i)]) continue;
        if (static_cast<Index>(train_idx.size()) < n_train)
            train_idx.push_back(i);
        else
            test_idx.push_back(i);
    }
    return {gather(d, train_idx), gather(d, test_idx)};
}

}  // namespace ntae
