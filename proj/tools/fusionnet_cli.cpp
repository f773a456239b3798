#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fusionnet/config.hpp"
#include "fusionnet/errors.hpp"
#include "fusionnet/gradcheck.hpp"
#include "fusionnet/grid.hpp"
#include "fusionnet/trainer.hpp"

namespace {

using namespace fusionnet;

struct ConfigFlags {
    std::string path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::vector<std::string> overrides;

    void add_to(CLI::App& app) {
        app.add_option("--config", path, "key = value configuration file");
        app.add_option("--seed", seed, "overrides the config seed");
        app.add_option("--epochs", epochs, "overrides the config epoch count");
        app.add_option("--set", overrides, "extra KEY=VALUE overrides, applied last");
    }

    RunConfig resolve() const {
        RunConfig config = path.empty() ? RunConfig{} : load_config(path);
        if (seed) {
            config.seed = *seed;
        }
        if (epochs) {
            config.epochs = *epochs;
        }
        for (const std::string& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) {
                throw_error(ErrorKind::config, "--set expects KEY=VALUE, got '" + kv + "'");
            }
            config.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        config.validate();
        return config;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-branch fused CNN classifier: training, evaluation and verification tools"};
    app.require_subcommand(1);

    ConfigFlags train_flags;
    std::string train_data, train_out, resume;
    std::optional<std::size_t> stop_after;
    bool train_single = false;
    CLI::App* train = app.add_subcommand("train", "train a network and write logs and checkpoints");
    train_flags.add_to(*train);
    train->add_option("--data", train_data, "dataset root with normal/ and all/")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_flag("--single-thread", train_single, "load batches on the training thread");
    train->add_option("--resume", resume, "continue from a checkpoint written by the same config");
    train->add_option("--stop-after", stop_after, "stop once this many epochs are complete");

    std::string eval_ckpt, eval_data, eval_split = "test", eval_config;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
    eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--data", eval_data, "dataset root")->required();
    eval->add_option("--split", eval_split, "train|val|test");
    eval->add_option("--config", eval_config, "config whose architecture the checkpoint must match");

    GradcheckOptions grad_options;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
    gradcheck->add_option("--seed", grad_options.seed, "seed for the random test inputs");
    gradcheck->add_option("--corrupt", grad_options.corrupt, "perturb one item's analytic gradient");

    std::string synth_out;
    std::size_t per_class = 200, size = 64;
    std::uint64_t synth_seed = 0;
    CLI::App* synth = app.add_subcommand("synth", "write a synthetic two-class dataset");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--per-class", per_class, "images per class");
    synth->add_option("--size", size, "image side length (>= 16)");
    synth->add_option("--seed", synth_seed, "generator seed");

    ConfigFlags grid_flags;
    std::string grid_data, grid_out;
    bool grid_single = false;
    CLI::App* grid = app.add_subcommand("grid", "optimizer x normalization grid plus branch ablation");
    grid_flags.add_to(*grid);
    grid->add_option("--data", grid_data, "dataset root")->required();
    grid->add_option("--out", grid_out, "output directory")->required();
    grid->add_flag("--single-thread", grid_single, "load batches on the training thread");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*train) {
            const RunConfig config = train_flags.resolve();
            TrainOptions options;
            options.data = train_data;
            options.out = train_out;
            options.single_thread = train_single;
            if (!resume.empty()) {
                options.resume = resume;
            }
            options.stop_after = stop_after;
            options.progress = &std::cout;
            std::cout << kCsvHeader << '\n';
            cmd_train(config, options);
        } else if (*eval) {
            const Split split = parse_split(eval_split);
            std::optional<RunConfig> expected;
            if (!eval_config.empty()) {
                expected = load_config(eval_config);
                expected->validate();
            }
            const EvalResult result = cmd_eval(eval_ckpt, eval_data, split, expected ? &*expected : nullptr);
            std::cout << kCsvHeader << '\n' << result.row << '\n';
        } else if (*gradcheck) {
            const GradcheckReport report = cmd_gradcheck(grad_options);
            std::cout << report.format();
            return report.passed() ? 0 : exit_code(ErrorKind::numeric);
        } else if (*synth) {
            synth_generate(synth_out, per_class, size, synth_seed);
            std::cout << "wrote " << 2 * per_class << " images to " << synth_out << '\n';
        } else if (*grid) {
            GridOptions options;
            options.base = grid_flags.resolve();
            options.data = grid_data;
            options.out = grid_out;
            options.single_thread = grid_single;
            options.progress = &std::cout;
            std::cout << kGridCsvHeader << '\n';
            cmd_grid(options);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
