#pragma once

// Synthetic labeled trips and the proxy/train/test + per-worker data layout.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedmode/geo.hpp"

namespace fedmode::synth {

using geo::FeatureSegment;
using geo::ModeLabel;
using geo::Trip;

struct ModeKinematics {
    std::string mode;
    double speed_mean = 1.0;        // m/s
    double speed_std = 0.0;         // m/s
    double accel_burst_prob = 0.0;  // per step
    double accel_magnitude = 0.0;   // m/s^2, applied over one 1 s step
    double dwell_prob = 0.0;        // per step

    bool operator==(const ModeKinematics&) const = default;
};

std::vector<ModeKinematics> default_kinematics();
const ModeKinematics& kinematics_for(std::span<const ModeKinematics> table, const std::string& mode);

inline constexpr double kStartLat = 45.5;
inline constexpr double kStartLon = -73.6;
inline constexpr double kStartTime = 1464739200.0;  // 2016-06-01T00:00:00Z

Trip generate_trip(const ModeLabel& mode, std::size_t n_points, std::uint64_t seed,
                   std::span<const ModeKinematics> table);
Trip generate_trip(const ModeLabel& mode, std::size_t n_points, std::uint64_t seed);

struct DatasetConfig {
    std::size_t trips_per_mode = 200;
    std::size_t points_per_trip = 20;
    std::vector<std::string> class_names = {"walk", "bike", "car", "public_transit"};
    std::uint64_t master_seed = 0;
};

std::uint64_t trip_seed(std::uint64_t master, std::size_t mode_index, std::size_t trip_index);

/// Mode-major: all trips of class 0, then class 1, ...
std::vector<Trip> generate_dataset(const DatasetConfig& config,
                                   std::span<const ModeKinematics> table);
std::vector<Trip> generate_dataset(const DatasetConfig& config);

struct DatasetSplit {
    std::vector<FeatureSegment> proxy;
    std::vector<FeatureSegment> train;
    std::vector<FeatureSegment> test;
    // Positions of each split's members in the input list.
    std::vector<std::size_t> proxy_index;
    std::vector<std::size_t> train_index;
    std::vector<std::size_t> test_index;
};

inline constexpr double kProxyFraction = 0.05;
inline constexpr double kTrainFraction = 0.8;
inline constexpr std::size_t kMinSegmentsToSplit = 20;

DatasetSplit split_dataset(std::span<const FeatureSegment> segments, std::uint64_t seed);

/// A worker's local shard. Reads of the segment data are counted so tests can
/// verify that nothing outside a worker's own training scope touches them.
class WorkerDataset {
public:
    WorkerDataset(std::size_t worker_id, std::vector<FeatureSegment> segments);

    std::size_t worker_id() const noexcept { return worker_id_; }
    std::span<const FeatureSegment> segments() const;

private:
    std::size_t worker_id_;
    std::vector<FeatureSegment> segments_;
};

struct DataAccessCounters {
    std::size_t inside_worker = 0;
    std::size_t outside_worker = 0;
};

DataAccessCounters data_access_counters();
void reset_data_access_counters();

/// Marks the current thread as executing inside a worker's local scope.
class WorkerScope {
public:
    WorkerScope();
    ~WorkerScope();
    WorkerScope(const WorkerScope&) = delete;
    WorkerScope& operator=(const WorkerScope&) = delete;

private:
    bool previous_;
};

std::vector<WorkerDataset> partition_non_iid(std::span<const FeatureSegment> train, std::size_t n_workers,
                                             std::size_t modes_per_worker, std::size_t n_classes,
                                             std::uint64_t seed);

/// Labels worker `w` is assigned under round-robin label sharding: a window of
/// `modes_per_worker` consecutive labels (mod K) starting at w mod K, or at
/// w * modes_per_worker when there are fewer workers than labels.
std::vector<std::size_t> worker_labels(std::size_t worker, std::size_t n_workers, std::size_t modes_per_worker,
                                       std::size_t n_classes);

}  // namespace fedmode::synth
