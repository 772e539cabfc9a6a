#pragma once

// Experiment configuration: JSON with every key optional and unknown keys
// rejected.
//
// {
//   "seed": 42, "output_dir": "out",
//   "dataset":    {"trips_per_mode", "points_per_trip", "channels", "segment_length", "class_names"},
//   "federation": {"workers", "rounds", "local_epochs", "local_batch", "worker_lr", "chief_lr",
//                  "aggregation", "architecture_assignment", "client_fraction", "modes_per_worker",
//                  "pretrain_on_proxy", "pretrain_epochs", "checkpoint_interval", "threads"},
//   "model":      {"hidden", "cnn_filters", "cnn_kernel", "dropout"},
//   "ensemble":   {"combiner", "meta_epochs"}
// }

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fedmode/ensemble.hpp"
#include "fedmode/fed.hpp"
#include "fedmode/geo.hpp"

namespace fedmode::config {

struct DatasetSection {
    std::size_t trips_per_mode = 200;
    std::size_t points_per_trip = 20;
    std::vector<geo::Channel> channels = geo::default_channels();
    std::size_t segment_length = 10;
    std::vector<std::string> class_names = {"walk", "bike", "car", "public_transit"};

    bool operator==(const DatasetSection&) const = default;
};

struct ModelSection {
    std::size_t hidden = 64;
    std::size_t cnn_filters = 32;
    std::size_t cnn_kernel = 3;
    double dropout = 0.0;

    bool operator==(const ModelSection&) const = default;
};

struct EnsembleSection {
    ensemble::Combiner combiner = ensemble::Combiner::StackedMlp;
    std::size_t meta_epochs = 200;

    bool operator==(const EnsembleSection&) const = default;
};

struct ExperimentConfig {
    std::uint64_t seed = 42;
    std::string output_dir = "out";
    DatasetSection dataset;
    fed::FederationConfig federation;
    ModelSection model;
    EnsembleSection ensemble;

    bool operator==(const ExperimentConfig&) const = default;
};

void validate(const ExperimentConfig& config);

ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Fully resolved config as pretty-printed JSON; parse_config inverts it.
std::string dump_config(const ExperimentConfig& config);

}  // namespace fedmode::config
