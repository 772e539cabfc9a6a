// fedmode: federated travel-mode inference experiment runner.
//
//   fedmode generate  --config <path> --out <dir>
//   fedmode train     --config <path> --out <dir>
//   fedmode evaluate  --checkpoint-dir <dir> --data <csv>
//   fedmode gradcheck
//
// FEDMODE_SEED overrides the config's master seed.
// Exit codes: 0 success, 1 configuration error, 2 runtime or numerical error.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fedmode/config.hpp"
#include "fedmode/error.hpp"
#include "fedmode/experiment.hpp"
#include "fedmode/model.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

bool is_config_error(fedmode::ErrorCode code) {
    using fedmode::ErrorCode;
    return code == ErrorCode::ParseError || code == ErrorCode::UnknownKey || code == ErrorCode::InvalidValue;
}

fedmode::config::ExperimentConfig resolve_config(const std::string& path) {
    auto cfg = fedmode::config::load_config(path);
    if (const char* env = std::getenv("FEDMODE_SEED"); env != nullptr && *env != '\0') {
        try {
            std::size_t used = 0;
            const auto seed = std::stoull(env, &used, 10);
            if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
            cfg.seed = seed;
        } catch (const std::exception&) {
            throw fedmode::Error(fedmode::ErrorCode::InvalidValue, std::string("FEDMODE_SEED='") + env + "'");
        }
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated travel-mode inference simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    auto* generate = app.add_subcommand("generate", "Write synthetic trips as CSV");
    generate->add_option("--config", config_path, "Experiment config (JSON)")->required();
    generate->add_option("--out", out_dir, "Output directory")->required();

    auto* train = app.add_subcommand("train", "Run the federated experiment");
    train->add_option("--config", config_path, "Experiment config (JSON)")->required();
    train->add_option("--out", out_dir, "Output directory (overrides output_dir)");
    bool quiet = false;
    train->add_flag("--quiet", quiet, "No per-round progress on stderr");

    std::string ckpt_dir;
    std::string data_csv;
    auto* evaluate = app.add_subcommand("evaluate", "Score saved checkpoints on a trip CSV");
    evaluate->add_option("--checkpoint-dir", ckpt_dir, "Checkpoint directory written by train")->required();
    evaluate->add_option("--data", data_csv, "Trip CSV")->required();

    std::size_t seeds = 5;
    bool corrupt_lstm = false;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every architecture");
    gradcheck->add_option("--seeds", seeds, "Seeds per architecture");
    gradcheck->add_flag("--corrupt-lstm-backward", corrupt_lstm, "Negative control: break the LSTM backward pass")
        ->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*generate) {
            const auto cfg = resolve_config(config_path);
            const std::filesystem::path dir(out_dir);
            fedmode::experiment::write_generated_trips(cfg, dir / "trips.csv");
            std::filesystem::create_directories(dir);
            std::ofstream(dir / "config.echo.json") << fedmode::config::dump_config(cfg);
            std::cout << "wrote " << (dir / "trips.csv").string() << "\n";
        } else if (*train) {
            auto cfg = resolve_config(config_path);
            if (!out_dir.empty()) cfg.output_dir = out_dir;
            fedmode::experiment::RunOptions opts;
            opts.output_dir = cfg.output_dir;
            opts.progress = quiet ? nullptr : &std::cerr;
            fedmode::experiment::run_experiment(cfg, opts);
            std::cout << "wrote " << (opts.output_dir / "metrics.csv").string() << "\n";
        } else if (*evaluate) {
            for (const auto& line : fedmode::experiment::evaluate_checkpoints(ckpt_dir, data_csv)) {
                std::printf("%s,%.6f\n", line.model.c_str(), line.accuracy);
            }
        } else if (*gradcheck) {
            fedmode::nn::testing::set_lstm_backward_fault(corrupt_lstm);
            const bool ok = fedmode::experiment::print_gradcheck(fedmode::experiment::run_gradcheck(seeds), std::cout);
            return ok ? kExitOk : kExitRuntime;
        }
    } catch (const fedmode::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return is_config_error(e.code()) && !*evaluate ? kExitConfig : kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
