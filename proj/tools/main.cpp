// flowtune command-line surface: tune, report, replay, baseline.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "flowtune/errors.hpp"
#include "flowtune/report.hpp"

namespace {

flowtune::RunConfig load_config(const std::string& path, int iters, int parallel,
                                double timeout, const std::string& backend,
                                const std::string& retrieval, std::uint64_t seed,
                                bool seed_set) {
    auto config = flowtune::RunConfig::from_file(path);
    if (iters > 0) config.loop.total_serial_iterations = iters;
    if (parallel > 0) {
        config.loop.parallel_k = parallel;
        config.evaluator.parallel_k = parallel;
    }
    if (timeout > 0) config.evaluator.timeout_s = timeout;
    if (!backend.empty()) config.backend_kind = backend;
    if (retrieval == "on") config.loop.retrieval_enabled = true;
    if (retrieval == "off") config.loop.retrieval_enabled = false;
    if (seed_set) {
        config.loop.seed = seed;
        config.evaluator.synthetic_seed = seed;
    }
    return config;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Black-box flow-parameter autotuning"};
    app.require_subcommand(1);

    std::string config_path;
    std::string backend;
    std::string retrieval;
    std::string out_dir = "runs/latest";
    std::string run_dir;
    std::string kind = "trajectory";
    std::string out_file;
    int iters = 0;
    int parallel = 0;
    double timeout = 0.0;
    std::uint64_t seed = 0;
    bool seed_set = false;

    auto* tune = app.add_subcommand("tune", "Run an autotuning loop");
    tune->add_option("--config", config_path, "Run configuration JSON")->required();
    tune->add_option("--backend", backend, "scripted | scripted_direct | http");
    tune->add_option("--iters", iters, "Serial iteration count");
    tune->add_option("--parallel", parallel, "Parallel evaluations per iteration (K)");
    tune->add_option("--timeout", timeout, "Per-run timeout in seconds");
    tune->add_option("--retrieval", retrieval, "on | off")
        ->check(CLI::IsMember({"on", "off", ""}));
    tune->add_option("--seed", seed, "Run seed")->each([&](const std::string&) {
        seed_set = true;
    });
    tune->add_option("--out", out_dir, "Run output directory");

    auto* report = app.add_subcommand("report", "Emit CSV reports for a finished run");
    report->add_option("--run", run_dir, "Run directory")->required();
    report->add_option("--kind", kind, "trajectory | correlation | pareto")
        ->check(CLI::IsMember({"trajectory", "correlation", "pareto"}));
    report->add_option("--out", out_file, "Output CSV path (default stdout)");

    auto* replay = app.add_subcommand("replay", "Re-execute a logged run from its caches");
    replay->add_option("--run", run_dir, "Run directory")->required();

    auto* baseline = app.add_subcommand("baseline", "Write default-flow baseline metrics");
    baseline->add_option("--config", config_path, "Run configuration JSON")->required();
    baseline->add_option("--out", out_file, "Baseline JSON path")->required();
    baseline->add_option("--seed", seed, "Evaluator seed")->each([&](const std::string&) {
        seed_set = true;
    });

    CLI11_PARSE(app, argc, argv);

    try {
        if (tune->parsed()) {
            const auto config = load_config(config_path, iters, parallel, timeout, backend,
                                            retrieval, seed, seed_set);
            const auto outcome = flowtune::run_tune(config, out_dir);
            std::cout << "run directory: " << outcome.run_dir.string() << "\n";
            if (outcome.report.best_found)
                std::cout << "best objective: " << outcome.report.best_objective << "\n";
            return outcome.exit_status;
        }
        if (report->parsed()) {
            std::ostream* out = &std::cout;
            std::ofstream file;
            if (!out_file.empty()) {
                file.open(out_file);
                if (!file) throw flowtune::Error("cannot write " + out_file);
                out = &file;
            }
            if (kind == "trajectory") flowtune::write_trajectory_csv(run_dir, *out);
            else if (kind == "correlation") flowtune::write_correlation_csv(run_dir, *out);
            else flowtune::write_pareto_csv(run_dir, *out);
            return 0;
        }
        if (replay->parsed()) {
            const int attempted = flowtune::run_replay(run_dir);
            std::cout << "replay ok; provider network calls: " << attempted << "\n";
            return 0;
        }
        if (baseline->parsed()) {
            auto config = flowtune::RunConfig::from_file(config_path);
            if (seed_set) config.evaluator.synthetic_seed = seed;
            const auto b = flowtune::run_baseline(config, out_file);
            std::cout << "baseline written for " << b.platform << "-" << b.circuit << "\n";
            return 0;
        }
    } catch (const flowtune::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
