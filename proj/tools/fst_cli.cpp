// fst: command-line driver for the few-shot testing pipeline.
//
//   fst prepare  --config run.json
//   fst train    --config run.json --threads 4
//   fst optimize --config run.json --n 10 --w-m inf
//   fst execute  --config run.json --n 10 --w-m 1
//   fst evaluate --config run.json --fast
//   fst report   --config run.json
//   fst run      --config run.json --fast     (all of the above in order)
//
// Exit codes: 0 success, 1 invalid input, 2 missing or inconsistent
// artifact, 3 numerical failure.

#include <malloc.h>

#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "fst/pipeline.hpp"

namespace {

int run(int argc, char** argv) {
    CLI::App app{"Few-shot scenario testing pipeline"};
    app.require_subcommand(1, 1);

    std::optional<std::string> config_path;
    std::vector<std::string> overrides;
    std::optional<unsigned> threads;
    std::optional<std::string> output_dir;
    bool fast = false, force = false, print_config = false;
    std::optional<std::size_t> n;
    std::optional<std::string> w_m;

    auto common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "JSON config file (defaults apply to missing keys)");
        sub->add_option("--set", overrides, "Override a config value, e.g. --set training.epochs=50")
            ->type_name("PATH=VALUE");
        sub->add_option("--threads", threads, "Worker thread cap (0 = all cores)");
        sub->add_option("-o,--output", output_dir, "Output root (overrides output_dir)");
        sub->add_flag("--fast", fast, "Fast evaluation mode (evaluation.fast_trials trials)");
        sub->add_flag("--force", force, "Recompute even when artifacts are up to date");
        sub->add_flag("--print-config", print_config, "Print the merged config and exit");
    };
    auto plan_options = [&](CLI::App* sub) {
        sub->add_option("--n", n, "Test-set size");
        sub->add_option("--w-m", w_m, "Fluctuation confidence w_M (number or inf)");
    };

    std::vector<CLI::App*> subs;
    for (const char* name : {"prepare", "train", "optimize", "execute", "evaluate", "report", "run"}) {
        auto* sub = app.add_subcommand(name);
        common(sub);
        if (std::string(name) == "optimize" || std::string(name) == "execute") plan_options(sub);
        subs.push_back(sub);
    }
    subs[0]->description("Build the grid and rasterize surrogate and subject maps");
    subs[1]->description("Train the similarity networks and the critical sampler");
    subs[2]->description("Optimize FST plans (default: configured n at configured w_M and at inf)");
    subs[3]->description("Execute a stored plan on every subject (map lookup and simulation)");
    subs[4]->description("Run the comparison, bound, ablation and cross-n experiments");
    subs[5]->description("Render the evaluation outputs as a markdown summary");
    subs[6]->description("prepare, train, optimize, execute, evaluate and report in order");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    if (fast) overrides.push_back("evaluation.fast=true");
    if (threads) overrides.push_back("threads=" + std::to_string(*threads));
    if (output_dir) overrides.push_back("output_dir=" + nlohmann::json(*output_dir).dump());
    auto cfg = fst::load_config(config_path ? std::optional<std::filesystem::path>(*config_path) : std::nullopt,
                                overrides);
    if (cfg.threads == 0) cfg.threads = std::max(1u, std::thread::hardware_concurrency());
    if (print_config) {
        std::cout << cfg.raw.dump(2) << "\n";
        return 0;
    }

    std::optional<fst::PlanRequest> request;
    if (n || w_m) {
        double w = cfg.optimization.w_M;
        if (w_m) {
            if (*w_m == "inf") {
                w = fst::kInfiniteConfidence;
            } else {
                try {
                    w = std::stod(*w_m);
                } catch (const std::exception&) {
                    throw fst::ValidationError("--w-m expects a positive number or inf, got '" + *w_m + "'");
                }
            }
            fst::require(w > 0.0, "--w-m must be > 0");
        }
        std::size_t size = n.value_or(cfg.optimization.n);
        fst::require(size >= 1, "--n must be >= 1");
        request = fst::PlanRequest{size, w};
    }

    fst::StageOptions opt;
    opt.force = force;
    auto note = [&](const char* stage, fst::StageStatus s) {
        if (s == fst::StageStatus::UpToDate) std::cerr << stage << ": up to date\n";
    };
    if (command == "prepare") note("prepare", fst::cmd_prepare(cfg, opt));
    else if (command == "train") note("train", fst::cmd_train(cfg, opt));
    else if (command == "optimize")
        note("optimize", fst::cmd_optimize(cfg, request ? std::vector<fst::PlanRequest>{*request}
                                                        : std::vector<fst::PlanRequest>{},
                                           opt));
    else if (command == "execute") note("execute", fst::cmd_execute(cfg, request, opt));
    else if (command == "evaluate") note("evaluate", fst::cmd_evaluate(cfg, opt));
    else if (command == "report") note("report", fst::cmd_report(cfg, opt));
    else fst::run_pipeline(cfg, opt);
    std::cerr << "outputs in " << cfg.output_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    // Large per-query temporaries otherwise go through mmap and fault on every use.
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    try {
        return run(argc, argv);
    } catch (const fst::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const fst::ArtifactError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed artifact: " << e.what() << "\n";
        return 2;
    } catch (const fst::NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
