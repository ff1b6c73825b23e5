// Acceptance gate: one test case per release criterion, each printing a
// single [PASS]/[FAIL] verdict line with the measured numbers next to the
// pinned threshold. Run the whole binary or a single criterion via the
// doctest filter, e.g. `acceptance -tc=A4*`.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ntae/config.hpp"
#include "ntae/datagen.hpp"
#include "ntae/experiments.hpp"
#include "ntae/hosvd.hpp"
#include "ntae/metrics.hpp"
#include "ntae/models.hpp"
#include "ntae/tensor_io.hpp"
#include "ntae/training.hpp"

#include "support/cluster_oracles.hpp"

using namespace ntae;

namespace {

constexpr double kKernelRelTol = 1e-12;
constexpr double kKernelBudgetSeconds = 30.0;
constexpr double kGradEps = 1e-5;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradBudgetSeconds = 60.0;
constexpr double kEncodeRelTol = 1e-12;
constexpr double kHosvdExactTol = 1e-10;
constexpr double kHosvdNoisyTol = 5e-2;
constexpr double kMaOrder3NmseGate = 0.12;
constexpr double kIndexTol = 1e-12;
constexpr double kMonotoneSlack = 1e-12;

template <typename... Args>
std::string strf(const char* fmt, Args... args) {
    char buf[1024];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return std::string(buf);
}

void verdict(const char* id, bool ok, const std::string& detail) {
    std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    const std::string message = std::string(id) + ": " + detail;
    CHECK_MESSAGE(ok, message);
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const char* yn(bool ok) { return ok ? "yes" : "NO"; }

bool bitwise_equal(const Tensord& a, const Tensord& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) ==
               0;
}

double rel_err(const Tensord& got, const Tensord& want) {
    double num = 0.0;
    for (Index i = 0; i < got.size(); ++i) {
        const double d = got[i] - want[i];
        num += d * d;
    }
    return std::sqrt(num) / std::max(std::sqrt(squared_norm(want)), 1e-300);
}

std::vector<Index> row_major_strides(const Shape& s) {
    std::vector<Index> st(s.size());
    Index acc = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

/// Mode product straight from the definition: one scalar sum per output
/// coordinate, no unfolding involved.
Tensord mode_product_by_summation(const Tensord& x, const Tensord& a, int mode) {
    const Shape& xs = x.shape();
    Shape os = xs;
    const Index rows = a.shape()[0];
    const Index inner = a.shape()[1];
    os[static_cast<std::size_t>(mode - 1)] = rows;
    Tensord out(os);
    const auto xstr = row_major_strides(xs);
    const auto ostr = row_major_strides(os);
    std::vector<Index> coord(xs.size());
    for (Index oi = 0; oi < out.size(); ++oi) {
        Index rem = oi;
        for (std::size_t d = 0; d < os.size(); ++d) {
            coord[d] = rem / ostr[d];
            rem %= ostr[d];
        }
        const Index r = coord[static_cast<std::size_t>(mode - 1)];
        double acc = 0.0;
        for (Index j = 0; j < inner; ++j) {
            coord[static_cast<std::size_t>(mode - 1)] = j;
            Index xi = 0;
            for (std::size_t d = 0; d < xs.size(); ++d) xi += coord[d] * xstr[d];
            acc += a[r * inner + j] * x[xi];
        }
        coord[static_cast<std::size_t>(mode - 1)] = r;
        out[oi] = acc;
    }
    return out;
}

struct TempDir {
    std::filesystem::path path;

    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("ntae-acceptance-" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("A1 multilinear kernels") {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(2026, "acc.a1"));

    const int trips = 1000;
    int exact = 0;
    for (int trip = 0; trip < trips; ++trip) {
        const int order = 2 + static_cast<int>(rng.below(5));
        Shape shape(static_cast<std::size_t>(order));
        for (auto& e : shape) e = 1 + rng.below(5);
        const Tensord x =
            random_normal(shape, derive_seed(2026, "acc.a1.x", {static_cast<std::uint64_t>(trip)}));
        const int mode = 1 + static_cast<int>(rng.below(order));
        if (bitwise_equal(fold(unfold(x, mode), mode, shape), x)) ++exact;
    }

    double worst = 0.0;
    for (int c = 0; c < 50; ++c) {
        const int order = 2 + static_cast<int>(rng.below(3));
        Shape shape(static_cast<std::size_t>(order));
        for (auto& e : shape) e = 2 + rng.below(5);
        const int mode = 1 + static_cast<int>(rng.below(order));
        const Index rows = 1 + rng.below(6);
        const Tensord x =
            random_normal(shape, derive_seed(2026, "acc.a1.mx", {static_cast<std::uint64_t>(c)}));
        const Tensord a = random_normal({rows, shape[static_cast<std::size_t>(mode - 1)]},
                                        derive_seed(2026, "acc.a1.ma", {static_cast<std::uint64_t>(c)}));
        worst = std::max(worst, rel_err(mode_n_product(x, a.matrix(), mode),
                                        mode_product_by_summation(x, a, mode)));
    }

    const double secs = elapsed_s(t0);
    verdict("A1", exact == trips && worst <= kKernelRelTol && secs < kKernelBudgetSeconds,
            strf("fold(unfold) bitwise on %d/%d round trips; mode-product vs direct summation "
                 "rel err %.2e (tol %.0e); %.1fs (budget %.0fs)",
                 exact, trips, worst, kKernelRelTol, secs, kKernelBudgetSeconds));
}

TEST_CASE("A2 gradient checks") {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    auto run_check = [&](std::vector<ad::Parameter*> params, const std::function<double()>& fn) {
        worst = std::max(
            worst, ad::grad_check(fn, std::span<ad::Parameter* const>(params.data(), params.size()),
                                  kGradEps));
    };

    {
        ad::Parameter w("w", random_normal({3, 4}, derive_seed(2026, "acc.a2.fc.w")));
        ad::Parameter b("b", random_normal({3}, derive_seed(2026, "acc.a2.fc.b")));
        ad::Parameter z("z", random_normal({4, 5}, derive_seed(2026, "acc.a2.fc.z")));
        const Tensord target = random_normal({3, 5}, derive_seed(2026, "acc.a2.fc.t"));
        run_check({&w, &b, &z}, [&]() {
            for (auto* p : {&w, &b, &z}) p->zero_grad();
            ad::Tape t;
            ad::Var l = t.mse_loss(t.fc(t.param(w), t.param(b), t.param(z)), t.input(target));
            t.backward(l);
            return t.scalar(l);
        });
    }

    {
        ad::Parameter a("a", random_normal({3, 4}, derive_seed(2026, "acc.a2.mm.a")));
        ad::Parameter b("b", random_normal({4, 2}, derive_seed(2026, "acc.a2.mm.b")));
        const Tensord target = random_normal({3, 2}, derive_seed(2026, "acc.a2.mm.t"));
        run_check({&a, &b}, [&]() {
            for (auto* p : {&a, &b}) p->zero_grad();
            ad::Tape t;
            ad::Var l = t.mse_loss(t.matmul(t.param(a), t.param(b)), t.input(target));
            t.backward(l);
            return t.scalar(l);
        });
    }

    {
        // Inputs pushed 0.5 away from zero keep every coordinate on one side
        // of the ReLU kink across the finite-difference probes.
        Tensord xv = random_normal({4, 6}, derive_seed(2026, "acc.a2.relu.x"));
        for (Index i = 0; i < xv.size(); ++i) xv[i] += xv[i] >= 0.0 ? 0.5 : -0.5;
        ad::Parameter x("x", std::move(xv));
        const Tensord target = random_normal({4, 6}, derive_seed(2026, "acc.a2.relu.t"));
        run_check({&x}, [&]() {
            x.zero_grad();
            ad::Tape t;
            ad::Var l = t.mse_loss(t.relu(t.param(x)), t.input(target));
            t.backward(l);
            return t.scalar(l);
        });
    }

    {
        ad::Parameter x("x", random_normal({2, 3, 4}, derive_seed(2026, "acc.a2.idx.x")));
        const Tensord target = random_normal({4, 6}, derive_seed(2026, "acc.a2.idx.t"));
        run_check({&x}, [&]() {
            x.zero_grad();
            ad::Tape t;
            ad::Var px = t.param(x);
            ad::Var back = t.fold(t.unfold(px, 2), 2, {2, 3, 4});
            ad::Var sum = t.add(back, px);  // same parameter on two paths
            ad::Var l = t.mse_loss(t.reshape(t.permute(sum, {3, 1, 2}), {4, 6}), t.input(target));
            t.backward(l);
            return t.scalar(l);
        });
    }

    const double worst_ops = worst;

    const Shape shape{4, 6, 6};
    Model m{build_ma_ntae(shape, 0.5, derive_seed(2026, "acc.a2.model"))};
    const auto params = parameters(m);
    Rng bias_rng(derive_seed(2026, "acc.a2.bias"));
    for (auto* p : params)
        if (p->value.order() == 1)
            for (Index i = 0; i < p->value.size(); ++i) p->value[i] = 0.05 * bias_rng.normal();
    const Tensord x = random_normal(shape, derive_seed(2026, "acc.a2.x"));
    const double worst_e2e = ad::grad_check(
        [&]() {
            for (auto* p : params) p->zero_grad();
            ad::Tape t;
            ad::Var l = t.mse_loss(forward_on(t, m, t.input(x)), t.input(x));
            t.backward(l);
            return t.scalar(l);
        },
        std::span<ad::Parameter* const>(params.data(), params.size()), kGradEps);

    worst = std::max(worst_ops, worst_e2e);
    const double secs = elapsed_s(t0);
    verdict("A2", worst <= kGradRelTol && secs < kGradBudgetSeconds,
            strf("central differences at eps %.0e: per-op rel err %.2e, end-to-end rel err %.2e "
                 "(tol %.0e); %.1fs (budget %.0fs)",
                 kGradEps, worst_ops, worst_e2e, kGradRelTol, secs, kGradBudgetSeconds));
}

TEST_CASE("A3 linear collapse to mode products") {
    Rng rng(derive_seed(2026, "acc.a3"));
    double worst = 0.0;
    for (int c = 0; c < 50; ++c) {
        const int order = 3 + static_cast<int>(rng.below(3));
        Shape shape(static_cast<std::size_t>(order));
        shape[0] = 1 + rng.below(4);
        for (std::size_t d = 1; d < shape.size(); ++d) shape[d] = 2 + rng.below(6);
        const double alpha = 0.3 + 0.1 * static_cast<double>(rng.below(7));
        MaNtaeModel m = build_ma_ntae(shape, alpha,
                                      derive_seed(2026, "acc.a3.m", {static_cast<std::uint64_t>(c)}));
        m.activation = Activation::identity;
        for (auto* stages : {&m.enc, &m.dec})
            for (auto& st : *stages) {
                st.b1.value.array() = 0.0;
                st.b2.value.array() = 0.0;
            }

        const Tensord x =
            random_normal(shape, derive_seed(2026, "acc.a3.x", {static_cast<std::uint64_t>(c)}));
        Tensord want = x;
        for (std::size_t l = 0; l < m.plan.stages.size(); ++l) {
            const Eigen::MatrixXd composed =
                m.enc[l].w2.value.matrix() * m.enc[l].w1.value.matrix();
            want = mode_n_product(want, composed, m.plan.stages[l].mode);
        }
        worst = std::max(worst, rel_err(encode(m, x), want));
    }
    verdict("A3", worst <= kEncodeRelTol,
            strf("identity activations + zero biases on 50 random configs: encode vs composed "
                 "mode-product map rel err %.2e (tol %.0e)",
                 worst, kEncodeRelTol));
}

TEST_CASE("A4 hosvd oracle") {
    SynthConfig c;
    c.order = 3;
    c.dim = 20;
    c.batch = 64;
    c.core_ratio = 0.25;  // rank 5 at dim 20
    c.factor_noise = 0.05;
    c.snr_db = std::numeric_limits<double>::infinity();
    c.seed = derive_seed(2026, "acc.a4");
    const Shape ranks{c.batch, 5, 5};

    const Dataset exact = synth_tucker_batch(c);
    const double nmse_exact = nmse(tucker_reconstruct(hosvd(exact.noisy, ranks)), *exact.clean);

    c.snr_db = 30.0;
    const Dataset noisy = synth_tucker_batch(c);
    const double nmse_noisy = nmse(tucker_reconstruct(hosvd(noisy.noisy, ranks)), *noisy.clean);

    verdict("A4", nmse_exact <= kHosvdExactTol && nmse_noisy <= kHosvdNoisyTol,
            strf("exact-rank reconstruction NMSE %.2e (tol %.0e); 30 dB + factor-noise 0.05 NMSE "
                 "vs clean %.4f (tol %.2f)",
                 nmse_exact, kHosvdExactTol, nmse_noisy, kHosvdNoisyTol));
}

TEST_CASE("A5 complexity counters") {
    Rng rng(derive_seed(2026, "acc.a5"));
    bool exact = true;
    for (int c = 0; c < 20; ++c) {
        const int order = 3 + static_cast<int>(rng.below(4));
        Shape shape(static_cast<std::size_t>(order));
        shape[0] = 1;
        for (std::size_t d = 1; d < shape.size(); ++d) shape[d] = 2 + rng.below(11);
        const double alpha = 0.2 + 0.1 * static_cast<double>(rng.below(8));
        const ModePlan plan = make_plan(shape, alpha);
        Model model{
            build_ma_ntae(shape, plan, derive_seed(2026, "acc.a5.m", {static_cast<std::uint64_t>(c)}))};
        Index biases = 0;
        for (const auto* p : parameters(model))
            if (p->value.order() == 1) biases += p->value.size();
        exact = exact && param_count(model) - biases == mode_param_count(plan) &&
                param_count(model) == ma_param_count(plan);
    }

    std::vector<double> ratios;
    bool increasing = true;
    for (const Index dim : {Index{10}, Index{15}, Index{20}, Index{25}, Index{30}}) {
        const Shape shape{1, dim, dim, dim};
        const double ratio = static_cast<double>(dae_param_count(shape, 0.5)) /
                             static_cast<double>(ma_param_count(make_plan(shape, 0.5)));
        if (!ratios.empty() && ratio <= ratios.back()) increasing = false;
        ratios.push_back(ratio);
    }

    verdict("A5", exact && increasing,
            strf("weight count equals 2*sum H(I+K) on 20 random configs: %s; order-4 DAE/MA "
                 "parameter ratio over I=10,15,20,25,30: %.1f, %.1f, %.1f, %.1f, %.1f strictly "
                 "increasing: %s",
                 yn(exact), ratios[0], ratios[1], ratios[2], ratios[3], ratios[4], yn(increasing)));
}

TEST_CASE("A6 benchmark ordering") {
    const auto t0 = std::chrono::steady_clock::now();
    Config cfg = Config::parse(R"(
[synth]
orders = 3, 4
dims = 20
batch = 512

[model]
models = ma-ntae, tfnn, dae
alpha = 0.5

[train]
epochs = 300
minibatch = 64
lr = 0.01

[run]
repeats = 5
seed = 2026
)");
    RunnerOptions opt;
    const ExperimentResult res = run_synth_benchmark(cfg, opt);

    std::map<std::pair<int, std::string>, double> mean;
    for (const auto& a : res.aggregates) mean[{a.order, a.model}] = a.stats.at("test_nmse_mean");
    const double ma3 = mean.at({3, "ma-ntae"}), tf3 = mean.at({3, "tfnn"}),
                 da3 = mean.at({3, "dae"});
    const double ma4 = mean.at({4, "ma-ntae"}), tf4 = mean.at({4, "tfnn"}),
                 da4 = mean.at({4, "dae"});
    const bool order3 = ma3 < tf3 && tf3 < da3;
    const bool order4 = ma4 < tf4 && tf4 < da4;
    const bool gate = ma3 <= kMaOrder3NmseGate;

    verdict("A6", order3 && order4 && gate,
            strf("mean test NMSE over 5 repeats (300-epoch budget): order 3 ma-ntae %.4f | tfnn "
                 "%.4f | dae %.4f ordered: %s; order 4 ma-ntae %.4f | tfnn %.4f | dae %.4f "
                 "ordered: %s; ma-ntae order-3 %.4f <= %.2f: %s; %.0fs",
                 ma3, tf3, da3, yn(order3), ma4, tf4, da4, yn(order4), ma3, kMaOrder3NmseGate,
                 yn(gate), elapsed_s(t0)));
}

TEST_CASE("A7 permutation robustness") {
    const auto t0 = std::chrono::steady_clock::now();
    Config cfg = Config::parse(R"(
[synth]
orders = 3
dims = 20
batch = 512

[model]
models = ma-ntae
alpha = 0.5

[train]
epochs = 300
minibatch = 64
lr = 0.01

[run]
repeats = 3
seed = 2027

[permutation]
fractions = 0, 0.1, 0.2, 0.3
)");
    RunnerOptions opt;
    const ExperimentResult res = run_permutation_study(cfg, opt);

    std::map<double, double> by_fraction;
    for (const auto& a : res.aggregates)
        if (a.model == "ma-ntae") by_fraction[a.fraction] = a.stats.at("test_nmse_mean");

    bool mono = by_fraction.size() == 4;
    std::string curve;
    double prev = -std::numeric_limits<double>::infinity();
    for (const auto& [fraction, m] : by_fraction) {
        mono = mono && m >= prev - kMonotoneSlack;
        curve += strf("%s%.1f: %.4f", curve.empty() ? "" : ", ", fraction, m);
        prev = m;
    }
    verdict("A7", mono,
            strf("ma-ntae mean test NMSE by permuted fraction { %s } non-decreasing: %s; %.0fs",
                 curve.c_str(), yn(mono), elapsed_s(t0)));
}

TEST_CASE("A8 clustering indices vs oracles") {
    double max_diff = 0.0;
    long pairs = 0;
    for (int n = 1; n <= 6; ++n) {
        const auto parts = oracle::all_partitions(n);
        for (const auto& p : parts)
            for (const auto& t : parts) {
                oracle::check_all(p, t, max_diff);
                ++pairs;
            }
    }
    for (int n = 7; n <= 8; ++n) {
        const auto parts = oracle::all_partitions(n);
        const std::vector<int> lump(static_cast<std::size_t>(n), 0);
        std::vector<int> singles(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) singles[static_cast<std::size_t>(i)] = i;
        Rng rng(derive_seed(2026, "acc.a8.partners", {static_cast<std::uint64_t>(n)}));
        for (const auto& p : parts) {
            oracle::check_all(p, lump, max_diff);
            oracle::check_all(p, singles, max_diff);
            oracle::check_all(p, p, max_diff);
            oracle::check_all(p, oracle::random_labeling(n, rng), max_diff);
            oracle::check_all(p, oracle::random_labeling(n, rng), max_diff);
            pairs += 5;
        }
    }

    Rng rng(derive_seed(2026, "acc.a8.invariance"));
    double max_inv = 0.0;
    for (int c = 0; c < 200; ++c) {
        const int n = 2 + static_cast<int>(rng.below(40));
        const auto pred = oracle::random_labeling(n, rng);
        const auto truth = oracle::random_labeling(n, rng);
        auto values = oracle::distinct_values(pred);
        rng.shuffle(values);
        std::map<int, int> relabel;
        for (std::size_t i = 0; i < values.size(); ++i)
            relabel[oracle::distinct_values(pred)[i]] = values[i] - 100;
        std::vector<int> pred2, truth2;
        for (int v : pred) pred2.push_back(relabel.at(v));
        for (int v : truth) truth2.push_back(3 * v + 7);
        max_inv = std::max(
            {max_inv, std::abs(clustering_accuracy(pred, truth) - clustering_accuracy(pred2, truth2)),
             std::abs(ari(pred, truth) - ari(pred2, truth2)),
             std::abs(nmi(pred, truth) - nmi(pred2, truth2)),
             std::abs(purity(pred, truth) - purity(pred2, truth2))});
    }

    verdict("A8", max_diff <= kIndexTol && max_inv <= kIndexTol,
            strf("accuracy/ari/nmi/purity vs brute-force oracles on %ld labeling pairs (exhaustive "
                 "n<=6, all partitions n=7,8): max diff %.2e; relabeling invariance on 200 cases: "
                 "max diff %.2e (tol %.0e)",
                 pairs, max_diff, max_inv, kIndexTol));
}

TEST_CASE("A9 determinism and persistence") {
    TempDir tmp;

    const char* bench = R"(
[synth]
orders = 3
dims = 6
batch = 16

[train]
epochs = 3
minibatch = 4
lr = 0.01

[run]
repeats = 2
seed = 77
)";
    RunnerOptions opt;
    Config cfg1 = Config::parse(bench);
    Config cfg2 = Config::parse(bench);
    const ExperimentResult r1 = run_synth_benchmark(cfg1, opt);
    const ExperimentResult r2 = run_synth_benchmark(cfg2, opt);
    bool rerun_ok = !r1.runs.empty() && r1.runs.size() == r2.runs.size();
    if (rerun_ok)
        for (std::size_t i = 0; i < r1.runs.size(); ++i)
            rerun_ok = rerun_ok && same_numbers(r1.runs[i], r2.runs[i]);

    Rng rng(derive_seed(2026, "acc.a9"));
    bool ntt1_ok = true;
    for (int c = 0; c < 8; ++c) {
        const int order = 1 + static_cast<int>(rng.below(5));
        Shape shape(static_cast<std::size_t>(order));
        for (auto& e : shape) e = 1 + rng.below(5);
        const Tensord x =
            random_normal(shape, derive_seed(2026, "acc.a9.t", {static_cast<std::uint64_t>(c)}));
        const std::string path = tmp.file("rt" + std::to_string(c) + ".ntt1");
        save_tensor(path, x);
        ntt1_ok = ntt1_ok && bitwise_equal(load_tensor(path), x);
    }

    SynthConfig sc;
    sc.order = 3;
    sc.dim = 5;
    sc.batch = 8;
    sc.seed = derive_seed(2026, "acc.a9.data");
    const Dataset data = synth_tucker_batch(sc);
    Model model{build_ma_ntae({8, 5, 5}, 0.5, derive_seed(2026, "acc.a9.model"))};
    TrainConfig tc;
    tc.epochs = 3;
    tc.minibatch = 4;
    tc.lr = 1e-2;
    tc.seed = derive_seed(2026, "acc.a9.train");
    AdamState adam;
    train(model, data, data, tc, adam);
    const std::string ck = tmp.file("model.ntck");
    save_checkpoint(ck, model, adam);

    Model other{build_ma_ntae({8, 5, 5}, 0.5, derive_seed(2026, "acc.a9.other"))};
    AdamState adam2;
    load_checkpoint(ck, other, adam2);
    bool ck_ok = adam2.step == adam.step;
    const auto pa = parameters(model);
    const auto pb = parameters(other);
    ck_ok = ck_ok && pa.size() == pb.size() && adam.moments.size() == adam2.moments.size();
    if (ck_ok)
        for (std::size_t i = 0; i < pa.size(); ++i)
            ck_ok = ck_ok && bitwise_equal(pa[i]->value, pb[i]->value) &&
                    bitwise_equal(adam.moments[i].m, adam2.moments[i].m) &&
                    bitwise_equal(adam.moments[i].v, adam2.moments[i].v);
    ck_ok = ck_ok && evaluate_nmse(model, data) == evaluate_nmse(other, data);

    verdict("A9", rerun_ok && ntt1_ok && ck_ok,
            strf("identical (config, seed) reruns bitwise-equal on %zu records: %s; tensor file "
                 "round trips bitwise on 8 tensors: %s; checkpoint round trip bitwise (params, "
                 "moments, step, eval): %s",
                 r1.runs.size(), yn(rerun_ok), yn(ntt1_ok), yn(ck_ok)));
}

TEST_CASE("pipelines compress and cluster end-to-end") {
    TempDir tmp;

    SynthConfig sc;
    sc.order = 3;
    sc.dim = 20;
    sc.batch = 12;
    sc.seed = derive_seed(2026, "acc.pipe.data");
    const Dataset data = synth_tucker_batch(sc);
    const std::string in_path = tmp.file("batch.ntt1");
    save_tensor(in_path, data.noisy);

    Config ccfg = Config::parse("[compress]\ninput = " + in_path +
                                "\nalphas = 0.5\n"
                                "[train]\nepochs = 5\nminibatch = 8\nlr = 0.01\n"
                                "[run]\nseed = 5\n");
    RunnerOptions copt;
    copt.out_dir = tmp.file("compress");
    const ExperimentResult cres = run_compress(ccfg, copt);
    double ratio = 0.0;
    bool compress_ok = cres.runs.size() == 1;
    if (compress_ok) {
        ratio = cres.runs[0].metrics.at("latent_ratio");
        compress_ok = ratio == 16.0;
    }
    const std::string recon_path = copt.out_dir + "/recon_a0.50.ntt1";
    bool recon_ok = std::filesystem::exists(recon_path) &&
                    std::filesystem::exists(copt.out_dir + "/results.json");
    if (recon_ok) recon_ok = load_tensor(recon_path).shape() == Shape{12, 20, 20};

    const Index per_blob = 40;
    Tensord blobs({2 * per_blob, 6, 6});
    std::vector<int> labels(static_cast<std::size_t>(2 * per_blob));
    Rng rng(derive_seed(2026, "acc.pipe.blobs"));
    for (Index s = 0; s < 2 * per_blob; ++s) {
        const int cls = s < per_blob ? 0 : 1;
        labels[static_cast<std::size_t>(s)] = cls;
        for (Index j = 0; j < 36; ++j)
            blobs[s * 36 + j] = (cls == 0 ? -10.0 : 10.0) + rng.normal();
    }
    const std::string bx = tmp.file("blobs.ntt1");
    const std::string bl = tmp.file("blobs.labels");
    save_tensor(bx, blobs);
    save_labels(bl, labels);

    Config kcfg = Config::parse("[cluster]\ninput = " + bx + "\nlabels = " + bl +
                                "\nrepeats = 5\n"
                                "[model]\nmodels = ma-ntae\n"
                                "[train]\nepochs = 60\nminibatch = 16\nlr = 0.01\n"
                                "[run]\nseed = 9\n");
    RunnerOptions kopt;
    kopt.out_dir = tmp.file("cluster");
    const ExperimentResult kres = run_cluster(kcfg, kopt);
    double base_acc = std::numeric_limits<double>::quiet_NaN();
    double ma_acc = std::numeric_limits<double>::quiet_NaN();
    for (const auto& r : kres.runs) {
        if (r.model == "all-features") base_acc = r.metrics.at("accuracy_mean");
        if (r.model == "ma-ntae") ma_acc = r.metrics.at("accuracy_mean");
    }
    const bool cluster_ok = base_acc == 1.0 && ma_acc == 1.0;

    verdict("pipelines", compress_ok && recon_ok && cluster_ok,
            strf("compress: latent size ratio %.1f (expect 16.0) and reloadable reconstruction: "
                 "%s; cluster on 20-sigma blobs: k-means accuracy all-features %.3f, ma-ntae "
                 "latent %.3f (expect 1.000)",
                 ratio, yn(compress_ok && recon_ok), base_acc, ma_acc));
}
