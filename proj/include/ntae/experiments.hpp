#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ntae/config.hpp"
#include "ntae/datagen.hpp"
#include "ntae/metrics.hpp"
#include "ntae/models.hpp"
#include "ntae/tensor_io.hpp"
#include "ntae/training.hpp"

namespace ntae {

/// One (config, seed, model, repeat) execution. Timing fields
/// (wall_seconds, epoch_seconds) are informational and excluded from
/// determinism comparisons; everything else is a pure function of the
/// config and the seed.
struct RunRecord {
    std::string experiment;
    std::string model;
    int order = 0;
    Index dim = 0;
    double alpha = 0.0;
    double fraction = 0.0;
    int repeat = 0;
    std::uint64_t seed = 0;
    Index params = 0;
    Index flops_per_sample = 0;
    std::vector<double> train_loss, test_loss;
    double train_nmse = std::numeric_limits<double>::quiet_NaN();
    double test_nmse = std::numeric_limits<double>::quiet_NaN();
    std::map<std::string, double> metrics;
    std::vector<double> epoch_seconds;
    double wall_seconds = 0.0;
};

/// Returns true when the two records carry the same numbers, timing aside.
inline bool same_numbers(const RunRecord& a, const RunRecord& b) {
    auto nan_eq = [](double x, double y) {
        return (std::isnan(x) && std::isnan(y)) || x == y;
    };
    return a.experiment == b.experiment && a.model == b.model && a.order == b.order &&
           a.dim == b.dim && a.alpha == b.alpha && a.fraction == b.fraction &&
           a.repeat == b.repeat && a.seed == b.seed && a.params == b.params &&
           a.flops_per_sample == b.flops_per_sample && a.train_loss == b.train_loss &&
           a.test_loss == b.test_loss && nan_eq(a.train_nmse, b.train_nmse) &&
           nan_eq(a.test_nmse, b.test_nmse) && a.metrics == b.metrics;
}

struct AggregateRow {
    std::string model;
    int order = 0;
    Index dim = 0;
    double alpha = 0.0;
    double fraction = 0.0;
    int repeats = 0;
    std::map<std::string, double> stats;
};

struct ExperimentResult {
    std::string experiment;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> config_echo;
    std::vector<RunRecord> runs;
    std::vector<AggregateRow> aggregates;
};

struct RunnerOptions {
    std::string out_dir;  // empty: keep results in memory only
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

inline ModelKind parse_model_kind(const std::string& name) {
    if (name == "ma-ntae") return ModelKind::ma_ntae;
    if (name == "tfnn") return ModelKind::tfnn;
    if (name == "dae") return ModelKind::dae;
    throw ConfigError("unknown model kind: " + name + " (expected ma-ntae, tfnn, or dae)");
}

/// Builds any of the three trainable models behind the common wrapper.
/// A positive latent floor widens per-mode plans until the flattened core
/// holds at least that many features (ignored by the DAE, whose bottleneck
/// is fixed by alpha).
inline Model build_model(ModelKind kind, const Shape& input_shape, double alpha,
                         std::uint64_t seed, Index latent_floor = 0) {
    switch (kind) {
        case ModelKind::ma_ntae: {
            ModePlan plan = make_plan(input_shape, alpha);
            if (latent_floor > 0) plan = apply_latent_floor(plan, latent_floor);
            return Model{build_ma_ntae(input_shape, plan, seed)};
        }
        case ModelKind::tfnn: {
            ModePlan plan = make_plan(input_shape, alpha);
            if (latent_floor > 0) plan = apply_latent_floor(plan, latent_floor);
            return Model{build_tfnn(input_shape, plan, seed)};
        }
        case ModelKind::dae:
            return Model{build_dae(input_shape, alpha, seed)};
    }
    throw ConfigError("unhandled model kind");
}

namespace detail {

inline double elapsed_seconds(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

inline std::string fmt_cell(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

inline void write_csv(const std::string& path, const Table& t) {
    std::string out;
    auto append_row = [&out](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ',';
            out += cells[i];
        }
        out += '\n';
    };
    append_row(t.columns);
    for (const auto& row : t.rows) append_row(row);
    io::write_file(path, out);
}

/// Mean and sample standard deviation (0 for a single value).
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0;
    for (double x : v) mean += x;
    mean /= n;
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

inline std::vector<AggregateRow> aggregate_runs(const std::vector<RunRecord>& runs) {
    std::vector<AggregateRow> out;
    std::vector<std::vector<const RunRecord*>> groups;
    for (const auto& r : runs) {
        bool placed = false;
        for (std::size_t g = 0; g < out.size(); ++g) {
            const auto& a = out[g];
            if (a.model == r.model && a.order == r.order && a.dim == r.dim &&
                a.alpha == r.alpha && a.fraction == r.fraction) {
                groups[g].push_back(&r);
                placed = true;
                break;
            }
        }
        if (!placed) {
            AggregateRow a;
            a.model = r.model;
            a.order = r.order;
            a.dim = r.dim;
            a.alpha = r.alpha;
            a.fraction = r.fraction;
            out.push_back(std::move(a));
            groups.push_back({&r});
        }
    }
    for (std::size_t g = 0; g < out.size(); ++g) {
        auto& a = out[g];
        a.repeats = static_cast<int>(groups[g].size());
        std::vector<double> test, train, wall;
        for (const auto* r : groups[g]) {
            test.push_back(r->test_nmse);
            train.push_back(r->train_nmse);
            wall.push_back(r->wall_seconds);
        }
        const auto [tm, ts] = mean_std(test);
        const auto [rm, rs] = mean_std(train);
        a.stats["test_nmse_mean"] = tm;
        a.stats["test_nmse_std"] = ts;
        a.stats["train_nmse_mean"] = rm;
        a.stats["train_nmse_std"] = rs;
        a.stats["wall_seconds_mean"] = mean_std(wall).first;

        std::map<std::string, std::vector<double>> per_metric;
        for (const auto* r : groups[g])
            for (const auto& [k, v] : r->metrics) per_metric[k].push_back(v);
        for (const auto& [k, vals] : per_metric) {
            const auto [m, s] = mean_std(vals);
            a.stats[k + "_mean"] = m;
            a.stats[k + "_std"] = s;
        }
    }
    return out;
}

/// Runs f(0..n-1), either inline or across a small worker pool; the first
/// exception wins and is rethrown after all workers drain.
template <typename F>
void for_each_index(std::size_t n, int threads, F f) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
            {
                std::lock_guard<std::mutex> lock(mu);
                if (first_error) return;
            }
            try {
                f(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int count = std::min<int>(threads, static_cast<int>(n));
    pool.reserve(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline std::uint64_t resolve_seed(const Config& cfg, const RunnerOptions& opt) {
    const std::uint64_t from_cfg = cfg.get_uint("run.seed", 0);
    return opt.seed ? *opt.seed : from_cfg;
}

inline std::map<std::string, std::string> config_echo(const Config& cfg,
                                                      const RunnerOptions& opt,
                                                      std::uint64_t seed) {
    std::map<std::string, std::string> echo = cfg.entries();
    echo["cli.seed"] = std::to_string(seed);
    echo["cli.threads"] = std::to_string(opt.threads);
    echo["cli.out_dir"] = opt.out_dir;
    return echo;
}

// ---- shared synthetic-protocol plumbing --------------------------------

struct SynthProtocol {
    std::vector<int> orders;
    std::vector<Index> dims;
    Index batch = 512;
    double core_ratio = 0.25;
    double factor_noise = 0.05;
    double snr_db = 30.0;
    bool per_sample_factors = false;
    double train_fraction = 0.8;
    std::vector<ModelKind> kinds;
    double alpha = 0.5;
    TrainConfig tc;
    int repeats = 5;
};

inline SynthProtocol read_synth_protocol(const Config& cfg) {
    SynthProtocol s;
    for (auto v : cfg.get_int_list("synth.orders", {3})) s.orders.push_back(static_cast<int>(v));
    for (auto v : cfg.get_int_list("synth.dims", {20})) s.dims.push_back(static_cast<Index>(v));
    s.batch = static_cast<Index>(cfg.get_int("synth.batch", 512));
    s.core_ratio = cfg.get_double("synth.core_ratio", 0.25);
    s.factor_noise = cfg.get_double("synth.factor_noise", 0.05);
    s.snr_db = cfg.get_double("synth.snr_db", 30.0);
    s.per_sample_factors = cfg.get_bool("synth.per_sample_factors", false);
    s.train_fraction = cfg.get_double("synth.train_fraction", 0.8);
    for (const auto& name :
         cfg.get_string_list("model.models", {"ma-ntae", "tfnn", "dae"}))
        s.kinds.push_back(parse_model_kind(name));
    s.alpha = cfg.get_double("model.alpha", 0.5);
    s.tc.epochs = static_cast<int>(cfg.get_int("train.epochs", 300));
    s.tc.minibatch = static_cast<Index>(cfg.get_int("train.minibatch", 64));
    s.tc.lr = cfg.get_double("train.lr", 1e-2);
    s.repeats = static_cast<int>(cfg.get_int("run.repeats", 5));
    if (s.repeats < 1) throw ConfigError("run.repeats must be positive");
    return s;
}

struct CellSpec {
    int order = 3;
    Index dim = 20;
    ModelKind kind = ModelKind::ma_ntae;
    int repeat = 0;
    double fraction = 0.0;
};

/// One synthetic (order, dim, model, repeat) cell at a given permuted
/// fraction. Data, permutation, and split seeds depend only on (order, dim,
/// repeat), so every model sees the same data, and fraction 0 reproduces
/// the plain benchmark bitwise.
inline RunRecord run_synth_cell(const std::string& experiment, const SynthProtocol& s,
                                const CellSpec& c, std::uint64_t base_seed) {
    const std::uint64_t uo = static_cast<std::uint64_t>(c.order);
    const std::uint64_t ud = static_cast<std::uint64_t>(c.dim);
    const std::uint64_t ur = static_cast<std::uint64_t>(c.repeat);
    const std::uint64_t uk = static_cast<std::uint64_t>(static_cast<int>(c.kind));

    SynthConfig sc;
    sc.order = c.order;
    sc.dim = c.dim;
    sc.batch = s.batch;
    sc.core_ratio = s.core_ratio;
    sc.factor_noise = s.factor_noise;
    sc.snr_db = s.snr_db;
    sc.per_sample_factors = s.per_sample_factors;
    sc.seed = derive_seed(base_seed, "exp.data", {uo, ud, ur});
    const Dataset full = synth_tucker_batch(sc);

    std::vector<Index> permuted;
    const Dataset shuffled = permute_modes_subset(
        full, c.fraction, derive_seed(base_seed, "exp.perm", {uo, ud, ur}), &permuted);
    const auto [train_set, test_set] = train_test_split_alternating(
        shuffled, s.train_fraction, derive_seed(base_seed, "exp.split", {uo, ud, ur}), permuted);

    Model m = build_model(c.kind, train_set.noisy.shape(), s.alpha,
                          derive_seed(base_seed, "exp.model", {uo, ud, uk, ur}));
    TrainConfig tc = s.tc;
    tc.seed = derive_seed(base_seed, "exp.train", {uo, ud, uk, ur});

    const auto t0 = std::chrono::steady_clock::now();
    const History h = train(m, train_set, test_set, tc);

    RunRecord r;
    r.experiment = experiment;
    r.model = model_kind_name(c.kind);
    r.order = c.order;
    r.dim = c.dim;
    r.alpha = s.alpha;
    r.fraction = c.fraction;
    r.repeat = c.repeat;
    r.seed = base_seed;
    r.params = param_count(m);
    Shape per_sample = train_set.noisy.shape();
    per_sample[0] = 1;
    r.flops_per_sample = flop_count(m, per_sample);
    r.train_loss = h.train_loss;
    r.test_loss = h.test_loss;
    r.epoch_seconds = h.epoch_seconds;
    r.train_nmse = evaluate_nmse(m, train_set);
    r.test_nmse = evaluate_nmse(m, test_set);
    r.wall_seconds = elapsed_seconds(t0);
    return r;
}

// ---- output files -------------------------------------------------------

inline nlohmann::ordered_json record_json(const RunRecord& r) {
    nlohmann::ordered_json j;
    j["experiment"] = r.experiment;
    j["model"] = r.model;
    j["order"] = r.order;
    j["dim"] = r.dim;
    j["alpha"] = r.alpha;
    j["fraction"] = r.fraction;
    j["repeat"] = r.repeat;
    j["seed"] = r.seed;
    j["params"] = r.params;
    j["flops_per_sample"] = r.flops_per_sample;
    j["train_loss"] = r.train_loss;
    j["test_loss"] = r.test_loss;
    j["train_nmse"] = r.train_nmse;
    j["test_nmse"] = r.test_nmse;
    j["metrics"] = r.metrics;
    j["epoch_seconds"] = r.epoch_seconds;
    j["wall_seconds"] = r.wall_seconds;
    return j;
}

inline void write_outputs(const ExperimentResult& res, const std::string& out_dir) {
    if (out_dir.empty()) return;
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };

    nlohmann::ordered_json doc;
    doc["experiment"] = res.experiment;
    doc["seed"] = res.seed;
    doc["config"] = res.config_echo;
    doc["runs"] = nlohmann::ordered_json::array();
    for (const auto& r : res.runs) doc["runs"].push_back(record_json(r));
    doc["aggregates"] = nlohmann::ordered_json::array();
    for (const auto& a : res.aggregates) {
        nlohmann::ordered_json j;
        j["model"] = a.model;
        j["order"] = a.order;
        j["dim"] = a.dim;
        j["alpha"] = a.alpha;
        j["fraction"] = a.fraction;
        j["repeats"] = a.repeats;
        for (const auto& [k, v] : a.stats) j[k] = v;
        doc["aggregates"].push_back(j);
    }
    io::write_file(path("results.json"), doc.dump(2) + "\n");

    std::set<std::string> metric_keys;
    for (const auto& r : res.runs)
        for (const auto& [k, v] : r.metrics) metric_keys.insert(k);

    Table runs;
    runs.columns = {"experiment", "model",  "order",
                    "dim",        "alpha",  "fraction",
                    "repeat",     "seed",   "params",
                    "flops_per_sample",     "epochs",
                    "train_nmse", "test_nmse", "wall_seconds"};
    for (const auto& k : metric_keys) runs.columns.push_back(k);
    for (const auto& r : res.runs) {
        std::vector<std::string> row{r.experiment,
                                     r.model,
                                     std::to_string(r.order),
                                     std::to_string(r.dim),
                                     fmt_cell(r.alpha),
                                     fmt_cell(r.fraction),
                                     std::to_string(r.repeat),
                                     std::to_string(r.seed),
                                     std::to_string(r.params),
                                     std::to_string(r.flops_per_sample),
                                     std::to_string(r.train_loss.size()),
                                     fmt_cell(r.train_nmse),
                                     fmt_cell(r.test_nmse),
                                     fmt_cell(r.wall_seconds)};
        for (const auto& k : metric_keys) {
            const auto it = r.metrics.find(k);
            row.push_back(it == r.metrics.end() ? "" : fmt_cell(it->second));
        }
        runs.rows.push_back(std::move(row));
    }
    write_csv(path("runs.csv"), runs);

    if (!res.aggregates.empty()) {
        std::set<std::string> stat_keys;
        for (const auto& a : res.aggregates)
            for (const auto& [k, v] : a.stats) stat_keys.insert(k);
        Table agg;
        agg.columns = {"model", "order", "dim", "alpha", "fraction", "repeats"};
        for (const auto& k : stat_keys) agg.columns.push_back(k);
        for (const auto& a : res.aggregates) {
            std::vector<std::string> row{a.model,
                                         std::to_string(a.order),
                                         std::to_string(a.dim),
                                         fmt_cell(a.alpha),
                                         fmt_cell(a.fraction),
                                         std::to_string(a.repeats)};
            for (const auto& k : stat_keys) {
                const auto it = a.stats.find(k);
                row.push_back(it == a.stats.end() ? "" : fmt_cell(it->second));
            }
            agg.rows.push_back(std::move(row));
        }
        write_csv(path("aggregates.csv"), agg);
    }

    bool any_history = false;
    for (const auto& r : res.runs) any_history = any_history || !r.train_loss.empty();
    if (any_history) {
        Table hist;
        hist.columns = {"model",  "order", "dim",        "alpha",     "fraction",
                        "repeat", "epoch", "train_loss", "test_loss", "epoch_seconds"};
        for (const auto& r : res.runs)
            for (std::size_t e = 0; e < r.train_loss.size(); ++e)
                hist.rows.push_back({r.model, std::to_string(r.order), std::to_string(r.dim),
                                     fmt_cell(r.alpha), fmt_cell(r.fraction),
                                     std::to_string(r.repeat), std::to_string(e),
                                     fmt_cell(r.train_loss[e]), fmt_cell(r.test_loss[e]),
                                     fmt_cell(r.epoch_seconds[e])});
        write_csv(path("history.csv"), hist);
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

/// Table-1 protocol: per (order, dim, model, repeat) generate a Tucker
/// batch, split 80/20, train, and score test NMSE against the clean
/// reference; aggregates carry mean and sample std per cell.
inline ExperimentResult run_synth_benchmark(const Config& cfg, const RunnerOptions& opt) {
    const auto s = detail::read_synth_protocol(cfg);
    const std::uint64_t seed = detail::resolve_seed(cfg, opt);
    cfg.require_consumed();

    std::vector<detail::CellSpec> cells;
    for (int order : s.orders)
        for (Index dim : s.dims)
            for (ModelKind kind : s.kinds)
                for (int rep = 0; rep < s.repeats; ++rep)
                    cells.push_back({order, dim, kind, rep, 0.0});

    ExperimentResult res;
    res.experiment = "synth-benchmark";
    res.seed = seed;
    res.config_echo = detail::config_echo(cfg, opt, seed);
    res.runs.resize(cells.size());
    detail::for_each_index(cells.size(), opt.threads, [&](std::size_t i) {
        res.runs[i] = detail::run_synth_cell(res.experiment, s, cells[i], seed);
    });
    res.aggregates = detail::aggregate_runs(res.runs);
    detail::write_outputs(res, opt.out_dir);
    return res;
}

/// Mode-permutation robustness sweep: the benchmark protocol repeated at
/// each permuted fraction, with permuted samples alternated between the
/// train and test sides. Fraction 0 reproduces run_synth_benchmark bitwise.
inline ExperimentResult run_permutation_study(const Config& cfg, const RunnerOptions& opt) {
    const auto s = detail::read_synth_protocol(cfg);
    const auto fractions = cfg.get_double_list("permutation.fractions", {0.0, 0.1, 0.2, 0.3});
    const std::uint64_t seed = detail::resolve_seed(cfg, opt);
    cfg.require_consumed();

    std::vector<detail::CellSpec> cells;
    for (double f : fractions)
        for (int order : s.orders)
            for (Index dim : s.dims)
                for (ModelKind kind : s.kinds)
                    for (int rep = 0; rep < s.repeats; ++rep)
                        cells.push_back({order, dim, kind, rep, f});

    ExperimentResult res;
    res.experiment = "permutation-study";
    res.seed = seed;
    res.config_echo = detail::config_echo(cfg, opt, seed);
    res.runs.resize(cells.size());
    detail::for_each_index(cells.size(), opt.threads, [&](std::size_t i) {
        res.runs[i] = detail::run_synth_cell(res.experiment, s, cells[i], seed);
    });
    res.aggregates = detail::aggregate_runs(res.runs);
    detail::write_outputs(res, opt.out_dir);
    return res;
}

/// Parameter and FLOP growth across orders and mode sizes, from the closed
/// forms alone — nothing is trained or even allocated.
inline ExperimentResult run_param_sweep(const Config& cfg, const RunnerOptions& opt) {
    std::vector<int> orders;
    for (auto v : cfg.get_int_list("sweep.orders", {3, 4, 5})) orders.push_back(static_cast<int>(v));
    std::vector<Index> dims;
    for (auto v : cfg.get_int_list("sweep.dims", {10, 20, 30, 40})) dims.push_back(static_cast<Index>(v));
    const auto alphas = cfg.get_double_list("sweep.alphas", {cfg.get_double("model.alpha", 0.5)});
    std::vector<ModelKind> kinds;
    for (const auto& name : cfg.get_string_list("model.models", {"ma-ntae", "tfnn", "dae"}))
        kinds.push_back(parse_model_kind(name));
    const std::uint64_t seed = detail::resolve_seed(cfg, opt);
    cfg.require_consumed();

    ExperimentResult res;
    res.experiment = "param-sweep";
    res.seed = seed;
    res.config_echo = detail::config_echo(cfg, opt, seed);
    for (int order : orders)
        for (Index dim : dims)
            for (double alpha : alphas)
                for (ModelKind kind : kinds) {
                    Shape shape{1};
                    shape.insert(shape.end(), static_cast<std::size_t>(order - 1), dim);
                    RunRecord r;
                    r.experiment = res.experiment;
                    r.model = model_kind_name(kind);
                    r.order = order;
                    r.dim = dim;
                    r.alpha = alpha;
                    r.seed = seed;
                    if (kind == ModelKind::dae) {
                        r.params = dae_param_count(shape, alpha);
                        r.flops_per_sample = dae_flop_count(shape, alpha);
                    } else {
                        const ModePlan plan = make_plan(shape, alpha);
                        r.params = kind == ModelKind::ma_ntae ? ma_param_count(plan)
                                                              : mode_param_count(plan);
                        r.flops_per_sample = mode_flop_count(plan, shape);
                    }
                    res.runs.push_back(std::move(r));
                }
    detail::write_outputs(res, opt.out_dir);
    return res;
}

/// Compresses one NTT1 batch at each alpha: trains on the whole batch,
/// writes the reconstruction next to per-alpha rows separating the
/// latent-size ratio from the parameter overhead.
inline ExperimentResult run_compress(const Config& cfg, const RunnerOptions& opt) {
    const std::string input = cfg.get_string("compress.input");
    const auto alphas = cfg.get_double_list("compress.alphas", {0.5, 0.4, 0.3, 0.2});
    TrainConfig base_tc;
    base_tc.epochs = static_cast<int>(cfg.get_int("train.epochs", 300));
    base_tc.minibatch = static_cast<Index>(cfg.get_int("train.minibatch", 64));
    base_tc.lr = cfg.get_double("train.lr", 1e-2);
    const std::uint64_t seed = detail::resolve_seed(cfg, opt);
    cfg.require_consumed();

    Dataset data;
    data.noisy = load_tensor(input);
    if (data.noisy.order() < 2)
        throw ShapeError("compress needs a batch tensor of order >= 2, got " +
                         shape_str(data.noisy.shape()));
    const Index per_sample_in = shape_product(data.noisy.shape()) / data.noisy.shape()[0];

    ExperimentResult res;
    res.experiment = "compress";
    res.seed = seed;
    res.config_echo = detail::config_echo(cfg, opt, seed);
    res.runs.resize(alphas.size());
    if (!opt.out_dir.empty()) std::filesystem::create_directories(opt.out_dir);

    detail::for_each_index(alphas.size(), opt.threads, [&](std::size_t i) {
        const double alpha = alphas[i];
        const ModePlan plan = make_plan(data.noisy.shape(), alpha);
        Model m{build_ma_ntae(data.noisy.shape(), plan,
                              derive_seed(seed, "compress.model", {i}))};
        TrainConfig tc = base_tc;
        tc.seed = derive_seed(seed, "compress.train", {i});

        const auto t0 = std::chrono::steady_clock::now();
        const History h = train(m, data, data, tc);

        Tensord recon(data.noisy.shape());
        const Index b = data.noisy.shape()[0];
        const Index chunk = 128;
        for (Index lo = 0; lo < b; lo += chunk) {
            const Index hi = std::min(b, lo + chunk);
            ad::Tape t;
            const Tensord part = t.value(forward_on(t, m, t.input(slice_batch(data.noisy, lo, hi))));
            std::copy_n(part.data(), part.size(), recon.data() + lo * per_sample_in);
        }

        RunRecord r;
        r.experiment = res.experiment;
        r.model = model_kind_name(ModelKind::ma_ntae);
        r.order = static_cast<int>(data.noisy.order());
        r.dim = data.noisy.shape()[1];
        r.alpha = alpha;
        r.repeat = static_cast<int>(i);
        r.seed = seed;
        r.params = param_count(m);
        Shape one = data.noisy.shape();
        one[0] = 1;
        r.flops_per_sample = flop_count(m, one);
        r.train_loss = h.train_loss;
        r.test_loss = h.test_loss;
        r.epoch_seconds = h.epoch_seconds;
        r.train_nmse = nmse(recon, data.noisy);
        r.test_nmse = r.train_nmse;
        const Index latent = total_latent(plan);
        r.metrics["latent_per_sample"] = static_cast<double>(latent);
        r.metrics["input_per_sample"] = static_cast<double>(per_sample_in);
        r.metrics["latent_ratio"] =
            static_cast<double>(per_sample_in) / static_cast<double>(latent);
        r.metrics["param_overhead"] =
            static_cast<double>(r.params) / static_cast<double>(data.noisy.size());
        r.wall_seconds = detail::elapsed_seconds(t0);

        if (!opt.out_dir.empty()) {
            char name[40];
            std::snprintf(name, sizeof name, "recon_a%.2f.ntt1", alpha);
            save_tensor((std::filesystem::path(opt.out_dir) / name).string(), recon);
        }
        res.runs[i] = std::move(r);
    });
    res.aggregates = detail::aggregate_runs(res.runs);
    detail::write_outputs(res, opt.out_dir);
    return res;
}

/// Trains on the whole labeled batch with the reconstruction loss only,
/// then k-means the per-sample latent features across seeded repeats,
/// scoring Accuracy/ARI/NMI/Purity against the labels; an all-features
/// baseline clusters the raw flattened samples with the same protocol.
inline ExperimentResult run_cluster(const Config& cfg, const RunnerOptions& opt) {
    const std::string input = cfg.get_string("cluster.input");
    const std::string labels_path = cfg.get_string("cluster.labels");
    const int repeats = static_cast<int>(cfg.get_int("cluster.repeats", 30));
    const int restarts = static_cast<int>(cfg.get_int("cluster.kmeans_restarts", 1));
    const int max_iter = static_cast<int>(cfg.get_int("cluster.kmeans_max_iter", 100));
    const Index latent_floor = static_cast<Index>(cfg.get_int("cluster.latent_floor", 25));
    std::vector<ModelKind> kinds;
    for (const auto& name : cfg.get_string_list("model.models", {"ma-ntae"}))
        kinds.push_back(parse_model_kind(name));
    const double alpha = cfg.get_double("model.alpha", 0.5);
    TrainConfig base_tc;
    base_tc.epochs = static_cast<int>(cfg.get_int("train.epochs", 300));
    base_tc.minibatch = static_cast<Index>(cfg.get_int("train.minibatch", 64));
    base_tc.lr = cfg.get_double("train.lr", 1e-2);
    const std::uint64_t seed = detail::resolve_seed(cfg, opt);
    cfg.require_consumed();
    if (repeats < 1) throw ConfigError("cluster.repeats must be positive");

    Dataset data;
    data.noisy = load_tensor(input);
    const std::vector<int> labels = load_labels(labels_path);
    if (static_cast<Index>(labels.size()) != data.noisy.shape()[0])
        throw SizeError("label count " + std::to_string(labels.size()) +
                        " does not match batch extent " +
                        std::to_string(data.noisy.shape()[0]));
    const int k = static_cast<int>(std::set<int>(labels.begin(), labels.end()).size());
    if (k < 2) throw ConfigError("clustering needs at least two distinct label values");

    const auto to_points = [](const Tensord& t) {
        const Index n = t.shape()[0];
        const Index d = t.size() / n;
        Eigen::MatrixXd pts(n, d);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < d; ++j) pts(i, j) = t[i * d + j];
        return pts;
    };

    const auto score_points = [&](const Eigen::MatrixXd& pts, std::uint64_t stream,
                                  RunRecord& r) {
        std::vector<double> acc, rand_idx, mutual, pure;
        for (int rep = 0; rep < repeats; ++rep) {
            const ClusteringResult c =
                kmeans(pts, k, restarts, max_iter,
                       derive_seed(stream, "cluster.kmeans", {static_cast<std::uint64_t>(rep)}));
            acc.push_back(clustering_accuracy(c.assignment, labels));
            rand_idx.push_back(ari(c.assignment, labels));
            mutual.push_back(nmi(c.assignment, labels));
            pure.push_back(purity(c.assignment, labels));
        }
        const auto put = [&](const char* name, const std::vector<double>& v) {
            const auto [m, s] = detail::mean_std(v);
            r.metrics[std::string(name) + "_mean"] = m;
            r.metrics[std::string(name) + "_std"] = s;
        };
        put("accuracy", acc);
        put("ari", rand_idx);
        put("nmi", mutual);
        put("purity", pure);
        r.metrics["k"] = k;
        r.metrics["feature_dim"] = static_cast<double>(pts.cols());
    };

    ExperimentResult res;
    res.experiment = "cluster";
    res.seed = seed;
    res.config_echo = detail::config_echo(cfg, opt, seed);

    {
        RunRecord r;
        r.experiment = res.experiment;
        r.model = "all-features";
        r.order = static_cast<int>(data.noisy.order());
        r.dim = data.noisy.shape()[1];
        r.alpha = alpha;
        r.seed = seed;
        const auto t0 = std::chrono::steady_clock::now();
        score_points(to_points(data.noisy), derive_seed(seed, "cluster.features", {0}), r);
        r.wall_seconds = detail::elapsed_seconds(t0);
        res.runs.push_back(std::move(r));
    }

    for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
        const ModelKind kind = kinds[ki];
        Model m = build_model(kind, data.noisy.shape(), alpha,
                              derive_seed(seed, "cluster.model", {ki}), latent_floor);
        TrainConfig tc = base_tc;
        tc.seed = derive_seed(seed, "cluster.train", {ki});

        const auto t0 = std::chrono::steady_clock::now();
        const History h = train(m, data, data, tc);

        RunRecord r;
        r.experiment = res.experiment;
        r.model = model_kind_name(kind);
        r.order = static_cast<int>(data.noisy.order());
        r.dim = data.noisy.shape()[1];
        r.alpha = alpha;
        r.seed = seed;
        r.params = param_count(m);
        Shape one = data.noisy.shape();
        one[0] = 1;
        r.flops_per_sample = flop_count(m, one);
        r.train_loss = h.train_loss;
        r.test_loss = h.test_loss;
        r.epoch_seconds = h.epoch_seconds;
        r.train_nmse = evaluate_nmse(m, data);
        r.test_nmse = r.train_nmse;
        score_points(to_points(latent_features(m, data.noisy)),
                     derive_seed(seed, "cluster.features", {ki + 1}), r);
        r.wall_seconds = detail::elapsed_seconds(t0);
        res.runs.push_back(std::move(r));
    }
    res.aggregates = detail::aggregate_runs(res.runs);
    detail::write_outputs(res, opt.out_dir);
    return res;
}

/// Trains one model on a whole NTT1 batch and persists the checkpoint
/// (parameters plus optimizer state) alongside the epoch history.
inline ExperimentResult run_train(const Config& cfg, const RunnerOptions& opt) {
    const std::string input = cfg.get_string("io.input");
    const ModelKind kind = parse_model_kind(cfg.get_string("model.kind", "ma-ntae"));
    const double alpha = cfg.get_double("model.alpha", 0.5);
    TrainConfig tc;
    tc.epochs = static_cast<int>(cfg.get_int("train.epochs", 300));
    tc.minibatch = static_cast<Index>(cfg.get_int("train.minibatch", 64));
    tc.lr = cfg.get_double("train.lr", 1e-2);
    const std::uint64_t seed = detail::resolve_seed(cfg, opt);
    cfg.require_consumed();

    Dataset data;
    data.noisy = load_tensor(input);
    Model m = build_model(kind, data.noisy.shape(), alpha, derive_seed(seed, "train.model"));
    tc.seed = derive_seed(seed, "train.loop");

    AdamState state;
    const auto t0 = std::chrono::steady_clock::now();
    const History h = train(m, data, data, tc, state);

    RunRecord r;
    r.experiment = "train";
    r.model = model_kind_name(kind);
    r.order = static_cast<int>(data.noisy.order());
    r.dim = data.noisy.shape()[1];
    r.alpha = alpha;
    r.seed = seed;
    r.params = param_count(m);
    Shape one = data.noisy.shape();
    one[0] = 1;
    r.flops_per_sample = flop_count(m, one);
    r.train_loss = h.train_loss;
    r.test_loss = h.test_loss;
    r.epoch_seconds = h.epoch_seconds;
    r.train_nmse = evaluate_nmse(m, data);
    r.test_nmse = r.train_nmse;
    r.wall_seconds = detail::elapsed_seconds(t0);

    if (!opt.out_dir.empty()) {
        std::filesystem::create_directories(opt.out_dir);
        save_checkpoint((std::filesystem::path(opt.out_dir) / "checkpoint.ntck").string(), m,
                        state);
    }

    ExperimentResult res;
    res.experiment = r.experiment;
    res.seed = seed;
    res.config_echo = detail::config_echo(cfg, opt, seed);
    res.runs.push_back(std::move(r));
    detail::write_outputs(res, opt.out_dir);
    return res;
}

/// Restores a checkpoint against a batch and reports its reconstruction
/// NMSE; the model geometry must match what the checkpoint was saved from.
inline ExperimentResult run_eval(const Config& cfg, const RunnerOptions& opt) {
    const std::string input = cfg.get_string("io.input");
    const std::string checkpoint = cfg.get_string("io.checkpoint");
    const ModelKind kind = parse_model_kind(cfg.get_string("model.kind", "ma-ntae"));
    const double alpha = cfg.get_double("model.alpha", 0.5);
    const std::uint64_t seed = detail::resolve_seed(cfg, opt);
    cfg.require_consumed();

    Dataset data;
    data.noisy = load_tensor(input);
    Model m = build_model(kind, data.noisy.shape(), alpha, 0);
    AdamState state;
    load_checkpoint(checkpoint, m, state);

    RunRecord r;
    r.experiment = "eval";
    r.model = model_kind_name(kind);
    r.order = static_cast<int>(data.noisy.order());
    r.dim = data.noisy.shape()[1];
    r.alpha = alpha;
    r.seed = seed;
    r.params = param_count(m);
    Shape one = data.noisy.shape();
    one[0] = 1;
    r.flops_per_sample = flop_count(m, one);
    const auto t0 = std::chrono::steady_clock::now();
    r.train_nmse = evaluate_nmse(m, data);
    r.test_nmse = r.train_nmse;
    r.wall_seconds = detail::elapsed_seconds(t0);

    ExperimentResult res;
    res.experiment = r.experiment;
    res.seed = seed;
    res.config_echo = detail::config_echo(cfg, opt, seed);
    res.runs.push_back(std::move(r));
    detail::write_outputs(res, opt.out_dir);
    return res;
}

}  // namespace ntae
