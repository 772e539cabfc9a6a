#pragma once

// Chief/worker federated training: worker selection, broadcast, local
// updates, sample-weighted averaging and the optional chief-side Adam.
//
// Chief-side operations (select_workers, fedavg_aggregate, server_apply) take
// only parameters and sample counts. local_round is the only function that
// receives a WorkerDataset, and it reads the data inside a WorkerScope.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmode/adam.hpp"
#include "fedmode/geo.hpp"
#include "fedmode/model.hpp"
#include "fedmode/synth.hpp"
#include "fedmode/tensor.hpp"

namespace fedmode::fed {

enum class Aggregation { PlainFedAvg, ServerAdam };
enum class Assignment { Replicated, Partitioned };

std::string aggregation_name(Aggregation a);
Aggregation aggregation_from_name(const std::string& s);
std::string assignment_name(Assignment a);
Assignment assignment_from_name(const std::string& s);

struct FederationConfig {
    std::size_t n_workers = 10;
    std::size_t rounds = 20;
    std::size_t local_epochs = 10;
    std::size_t local_batch = 30;
    double worker_lr = 0.0005;
    double chief_lr = 0.001;
    Aggregation aggregation = Aggregation::PlainFedAvg;
    Assignment assignment = Assignment::Replicated;
    double client_fraction = 1.0;
    std::size_t modes_per_worker = 2;
    bool pretrain_on_proxy = true;
    std::size_t pretrain_epochs = 1;
    std::size_t checkpoint_interval = 5;
    std::size_t threads = 0;  // 0 = hardware concurrency; never affects results

    bool operator==(const FederationConfig&) const = default;
};

void validate(const FederationConfig& config);

struct WorkerUpdate {
    std::size_t worker_id = 0;
    nn::ParamSet params;
    std::size_t n_samples = 0;
};

struct ModelMetrics {
    std::string name;
    double test_accuracy = 0.0;
    double test_loss = 0.0;
    std::size_t n_participants = 0;
};

struct RoundMetrics {
    std::size_t round = 0;
    std::vector<ModelMetrics> models;
    std::vector<std::size_t> participants;
};

struct GlobalModel {
    nn::ModelSpec spec;
    nn::ParamSet params;
    std::optional<nn::AdamState> chief_adam;
};

struct FederationState {
    std::vector<GlobalModel> globals;
    std::size_t round = 0;
    std::vector<RoundMetrics> history;
};

/// ceil(client_fraction * n_workers) distinct ids in ascending order.
std::vector<std::size_t> select_workers(std::size_t round, const FederationConfig& config, std::uint64_t seed);

std::vector<nn::ParamSet> broadcast(const nn::ParamSet& global, std::size_t n_copies);

std::uint64_t local_round_seed(std::uint64_t master, std::size_t round, std::size_t worker, nn::Architecture arch);

/// E epochs of local Adam (fresh optimizer state) on the worker's own data.
WorkerUpdate local_round(const synth::WorkerDataset& worker, nn::ParamSet params, const nn::ModelSpec& spec,
                         const FederationConfig& config, std::uint64_t seed);

/// Sample-weighted coordinate mean, summed in ascending worker-id order.
nn::ParamSet fedavg_aggregate(std::span<const WorkerUpdate> updates);

/// Treats global - aggregate as a gradient and takes one chief Adam step.
nn::ParamSet server_apply(const nn::ParamSet& global, const nn::ParamSet& aggregate, nn::AdamState& chief_state);

/// Worker ids per architecture group in partitioned mode (e.g. 4/3/3 for 10).
std::vector<std::vector<std::size_t>> partition_groups(std::size_t n_workers, std::size_t n_architectures);

/// Indices into the global-model list that `worker` trains.
std::vector<std::size_t> worker_models(std::size_t worker, std::size_t n_models, const FederationConfig& config);

/// Builds one global per spec; optionally pre-trains on the chief's proxy set.
FederationState init_federation(std::span<const nn::ModelSpec> specs, std::span<const geo::FeatureSegment> proxy,
                                 const FederationConfig& config, std::uint64_t seed);

/// One synchronous round: select, broadcast, local training, aggregate,
/// apply, evaluate on `test`.
void run_round(FederationState& state, std::span<const synth::WorkerDataset> workers,
               std::span<const geo::FeatureSegment> test, const FederationConfig& config, std::uint64_t seed);

using RoundObserver = std::function<void(const FederationState&)>;

FederationState run_federation(const FederationConfig& config, std::span<const synth::WorkerDataset> workers,
                               std::span<const nn::ModelSpec> specs, std::span<const geo::FeatureSegment> proxy,
                               std::span<const geo::FeatureSegment> test, std::uint64_t seed,
                               const RoundObserver& observer = {});

}  // namespace fedmode::fed
