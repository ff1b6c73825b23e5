#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ntae/config.hpp"
#include "ntae/experiments.hpp"

namespace {

struct CliArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

void add_common(CLI::App* cmd, CliArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config file (key=value sections)")
        ->required();
    cmd->add_option("--out-dir", args.out_dir, "directory for CSV/JSON/tensor outputs");
    cmd->add_option("--seed", args.seed, "base seed (overrides run.seed from the config)");
    cmd->add_option("--threads", args.threads,
                    "concurrent runs (default 1; results are identical at any thread "
                    "count, only the timing columns move)")
        ->check(CLI::PositiveNumber);
}

int fail(const std::exception& e, const std::string& type) {
    nlohmann::json line;
    line["error"] = type;
    line["message"] = e.what();
    std::fprintf(stderr, "%s\n", line.dump().c_str());
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mode-aware non-linear Tucker autoencoder experiment runner"};
    app.require_subcommand(1);

    CliArgs args;
    std::function<ntae::ExperimentResult(const ntae::Config&, const ntae::RunnerOptions&)> runner;

    const std::map<std::string, std::pair<const char*, ntae::ExperimentResult (*)(
                                                           const ntae::Config&,
                                                           const ntae::RunnerOptions&)>>
        commands{
            {"synth-benchmark",
             {"train every model on synthetic Tucker batches and tabulate NMSE",
              &ntae::run_synth_benchmark}},
            {"permutation-study",
             {"sweep the fraction of mode-permuted samples", &ntae::run_permutation_study}},
            {"param-sweep",
             {"closed-form parameter/FLOP growth table, no training", &ntae::run_param_sweep}},
            {"compress",
             {"train per alpha on one NTT1 batch and write reconstructions",
              &ntae::run_compress}},
            {"cluster",
             {"reconstruction-only training, then k-means on the latent features",
              &ntae::run_cluster}},
            {"train", {"train one model on an NTT1 batch and save a checkpoint",
                       &ntae::run_train}},
            {"eval", {"evaluate a checkpoint against an NTT1 batch", &ntae::run_eval}},
        };

    for (const auto& [name, spec] : commands) {
        CLI::App* cmd = app.add_subcommand(name, spec.first);
        add_common(cmd, args);
        auto fn = spec.second;
        cmd->callback([&, fn] { runner = fn; });
    }

    CLI11_PARSE(app, argc, argv);

    try {
        const ntae::Config cfg = ntae::Config::from_file(args.config_path);
        ntae::RunnerOptions opt;
        opt.out_dir = args.out_dir;
        opt.seed = args.seed;
        opt.threads = args.threads;
        const ntae::ExperimentResult res = runner(cfg, opt);
        std::printf("%s: %zu runs", res.experiment.c_str(), res.runs.size());
        if (!args.out_dir.empty()) std::printf(" -> %s", args.out_dir.c_str());
        std::printf("\n");
        for (const auto& a : res.aggregates) {
            std::printf("  %-12s order=%d dim=%lld alpha=%.2f", a.model.c_str(), a.order,
                        static_cast<long long>(a.dim), a.alpha);
            if (a.fraction > 0) std::printf(" fraction=%.2f", a.fraction);
            const auto mean = a.stats.find("test_nmse_mean");
            const auto stdev = a.stats.find("test_nmse_std");
            if (mean != a.stats.end() && stdev != a.stats.end())
                std::printf("  test NMSE %.4f (+/- %.4f)", mean->second, stdev->second);
            const auto acc = a.stats.find("accuracy_mean");
            if (acc != a.stats.end()) std::printf("  accuracy %.4f", acc->second);
            std::printf("\n");
        }
        return 0;
    } catch (const ntae::Error& e) {
        return fail(e, e.kind());
    } catch (const std::exception& e) {
        return fail(e, "internal");
    }
}
