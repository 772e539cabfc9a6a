#pragma once

// End-to-end pipeline: generate -> features -> split -> partition ->
// federate -> ensemble -> evaluate, plus the gradient-check runner.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedmode/config.hpp"
#include "fedmode/ensemble.hpp"
#include "fedmode/fed.hpp"
#include "fedmode/geo.hpp"
#include "fedmode/synth.hpp"

namespace fedmode::experiment {

struct PreparedData {
    std::vector<geo::Trip> trips;
    std::vector<geo::FeatureSegment> segments;  // raw, before normalization
    geo::Normalizer normalizer;                 // fitted on the train split
    synth::DatasetSplit split;                  // normalized
    std::vector<synth::WorkerDataset> workers;
};

/// Converts trips into labelled segments using the configured channels and L.
std::vector<geo::FeatureSegment> trips_to_segments(std::span<const geo::Trip> trips,
                                                   const config::DatasetSection& dataset);

PreparedData prepare_data(const config::ExperimentConfig& config);

/// Base-learner specs in the fixed order LSTM, GRU, CNN1D.
std::vector<nn::ModelSpec> base_specs(const config::ExperimentConfig& config);

struct MetricsRow {
    std::size_t round = 0;
    std::string architecture;
    double test_accuracy = 0.0;
    double test_loss = 0.0;
    std::size_t n_participants = 0;
};

std::string metrics_csv_header();
std::string format_metrics_row(const MetricsRow& row);

struct EnsembleRound {
    std::vector<MetricsRow> rows;  // stacked, softavg, vote
    nn::ParamSet meta;
};

/// Trains the meta-learner on the proxy split and scores all three combiners
/// on the test split.
EnsembleRound evaluate_ensembles(std::span<const ensemble::BaseLearner> bases, const synth::DatasetSplit& split,
                                 const config::ExperimentConfig& config, std::size_t round,
                                 std::size_t n_participants);

struct ExperimentResult {
    std::vector<MetricsRow> rows;
    fed::FederationState state;
    nn::ParamSet meta;
    std::vector<geo::FeatureSegment> proxy;  // for isolation bookkeeping
};

struct RunOptions {
    std::filesystem::path output_dir;  // empty: write nothing
    std::ostream* progress = nullptr;
};

/// Writes metrics.csv, config.echo.json and checkpoints/ when an output
/// directory is given.
ExperimentResult run_experiment(const config::ExperimentConfig& config, const RunOptions& options = {});

/// Generates the configured synthetic trips and writes them as CSV.
void write_generated_trips(const config::ExperimentConfig& config, const std::filesystem::path& csv_path);

struct EvaluationLine {
    std::string model;
    double accuracy = 0.0;
};

/// Scores saved checkpoints on a trip CSV.
std::vector<EvaluationLine> evaluate_checkpoints(const std::filesystem::path& checkpoint_dir,
                                                 const std::filesystem::path& trips_csv);

struct GradcheckLine {
    nn::Architecture architecture;
    double max_relative_error = 0.0;
    bool pass = false;
};

std::vector<GradcheckLine> run_gradcheck(std::size_t seeds = 5);
/// Prints one line per architecture; returns true iff all pass.
bool print_gradcheck(const std::vector<GradcheckLine>& lines, std::ostream& out);

}  // namespace fedmode::experiment
