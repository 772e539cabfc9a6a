#include "fedmode/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "fedmode/error.hpp"
#include "fedmode/seed.hpp"

namespace fedmode::synth {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kHeadingStepStd = 0.1;  // rad per step
constexpr double kStartJitterDeg = 0.02;

std::atomic<std::size_t> g_inside_reads{0};
std::atomic<std::size_t> g_outside_reads{0};
thread_local bool t_in_worker_scope = false;

}  // namespace

std::vector<ModeKinematics> default_kinematics() {
    return {
        {"walk", 1.4, 0.3, 0.0, 0.0, 0.0},
        {"bike", 4.5, 1.0, 0.05, 1.0, 0.02},
        {"car", 12.0, 5.0, 0.10, 2.5, 0.05},
        {"public_transit", 8.0, 4.0, 0.10, 1.5, 0.15},
    };
}

const ModeKinematics& kinematics_for(std::span<const ModeKinematics> table, const std::string& mode) {
    for (const auto& k : table) {
        if (k.mode == mode) return k;
    }
    throw Error(ErrorCode::UnknownMode, "no kinematics for mode '" + mode + "'");
}

Trip generate_trip(const ModeLabel& mode, std::size_t n_points, std::uint64_t seed) {
    const auto table = default_kinematics();
    return generate_trip(mode, n_points, seed, table);
}

Trip generate_trip(const ModeLabel& mode, std::size_t n_points, std::uint64_t seed,
                   std::span<const ModeKinematics> table) {
    if (n_points < 2) throw Error(ErrorCode::TooShort, "n_points must be >= 2");
    const ModeKinematics& kin = kinematics_for(table, mode.name);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    double lat = kStartLat + kStartJitterDeg * (2.0 * unit(rng) - 1.0);
    double lon = kStartLon + kStartJitterDeg * (2.0 * unit(rng) - 1.0);
    double heading = 2.0 * std::numbers::pi * unit(rng);

    constexpr double e2 = geo::Wgs84::f * (2.0 - geo::Wgs84::f);
    Trip trip;
    trip.mode = mode;
    trip.points.reserve(n_points);
    trip.points.push_back({lat, lon, kStartTime});
    for (std::size_t i = 1; i < n_points; ++i) {
        const double dwell_draw = unit(rng);
        const double speed_draw = gauss(rng);
        const double burst_draw = unit(rng);
        const double burst_sign = unit(rng) < 0.5 ? -1.0 : 1.0;
        heading += kHeadingStepStd * gauss(rng);

        double speed = 0.0;
        if (dwell_draw >= kin.dwell_prob) {
            speed = std::max(0.0, kin.speed_mean + kin.speed_std * speed_draw);
            if (burst_draw < kin.accel_burst_prob) {
                speed = std::max(0.0, speed + burst_sign * kin.accel_magnitude);
            }
        }
        const double step = speed;  // 1 s sampling
        const double s = std::sin(lat * kDeg);
        const double w = std::sqrt(1.0 - e2 * s * s);
        const double meridional = geo::Wgs84::a * (1.0 - e2) / (w * w * w);
        const double prime_vertical = geo::Wgs84::a / w;
        lat += step * std::cos(heading) / meridional / kDeg;
        lon += step * std::sin(heading) / (prime_vertical * std::cos(lat * kDeg)) / kDeg;
        trip.points.push_back({lat, lon, kStartTime + static_cast<double>(i)});
    }
    return trip;
}

std::uint64_t trip_seed(std::uint64_t master, std::size_t mode_index, std::size_t trip_index) {
    return derive_seed(master, {0x747269702dULL, mode_index, trip_index});
}

std::vector<Trip> generate_dataset(const DatasetConfig& config) {
    const auto table = default_kinematics();
    return generate_dataset(config, table);
}

std::vector<Trip> generate_dataset(const DatasetConfig& config, std::span<const ModeKinematics> table) {
    if (config.trips_per_mode < 1) throw Error(ErrorCode::InvalidValue, "trips_per_mode must be >= 1");
    std::vector<Trip> trips;
    trips.reserve(config.class_names.size() * config.trips_per_mode);
    for (std::size_t m = 0; m < config.class_names.size(); ++m) {
        const ModeLabel label{m, config.class_names[m]};
        for (std::size_t i = 0; i < config.trips_per_mode; ++i) {
            trips.push_back(generate_trip(label, config.points_per_trip, trip_seed(config.master_seed, m, i), table));
        }
    }
    return trips;
}

DatasetSplit split_dataset(std::span<const FeatureSegment> segments, std::uint64_t seed) {
    const std::size_t n = segments.size();
    if (n < kMinSegmentsToSplit) {
        throw Error(ErrorCode::TooFewSegments,
                    "need at least " + std::to_string(kMinSegmentsToSplit) + " segments, got " + std::to_string(n));
    }
    std::map<std::size_t, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < n; ++i) by_label[segments[i].label].push_back(i);

    std::mt19937_64 rng(seed);
    for (auto& [label, idx] : by_label) std::shuffle(idx.begin(), idx.end(), rng);

    std::vector<std::size_t> order;
    order.reserve(n);
    for (std::size_t round = 0; order.size() < n; ++round) {
        for (auto& [label, idx] : by_label) {
            if (round < idx.size()) order.push_back(idx[round]);
        }
    }

    const auto n_proxy = static_cast<std::size_t>(std::floor(kProxyFraction * static_cast<double>(n)));
    const std::size_t rest = n - n_proxy;
    const auto n_train = static_cast<std::size_t>(std::floor(kTrainFraction * static_cast<double>(rest)));

    DatasetSplit split;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = order[k];
        if (k < n_proxy) {
            split.proxy.push_back(segments[i]);
            split.proxy_index.push_back(i);
        } else if (k < n_proxy + n_train) {
            split.train.push_back(segments[i]);
            split.train_index.push_back(i);
        } else {
            split.test.push_back(segments[i]);
            split.test_index.push_back(i);
        }
    }
    return split;
}

WorkerDataset::WorkerDataset(std::size_t worker_id, std::vector<FeatureSegment> segments)
    : worker_id_(worker_id), segments_(std::move(segments)) {
    if (segments_.empty()) {
        throw Error(ErrorCode::EmptyDataset, "worker " + std::to_string(worker_id) + " has no data");
    }
}

std::span<const FeatureSegment> WorkerDataset::segments() const {
    if (t_in_worker_scope) {
        g_inside_reads.fetch_add(1, std::memory_order_relaxed);
    } else {
        g_outside_reads.fetch_add(1, std::memory_order_relaxed);
    }
    return segments_;
}

DataAccessCounters data_access_counters() {
    return {g_inside_reads.load(), g_outside_reads.load()};
}

void reset_data_access_counters() {
    g_inside_reads = 0;
    g_outside_reads = 0;
}

WorkerScope::WorkerScope() : previous_(t_in_worker_scope) { t_in_worker_scope = true; }
WorkerScope::~WorkerScope() { t_in_worker_scope = previous_; }

std::vector<std::size_t> worker_labels(std::size_t worker, std::size_t n_workers, std::size_t modes_per_worker,
                                       std::size_t n_classes) {
    const std::size_t start = n_workers >= n_classes ? worker % n_classes : worker * modes_per_worker;
    std::vector<std::size_t> labels;
    for (std::size_t j = 0; j < modes_per_worker; ++j) labels.push_back((start + j) % n_classes);
    std::sort(labels.begin(), labels.end());
    return labels;
}

std::vector<WorkerDataset> partition_non_iid(std::span<const FeatureSegment> train, std::size_t n_workers,
                                             std::size_t modes_per_worker, std::size_t n_classes,
                                             std::uint64_t seed) {
    if (n_workers < 1) throw Error(ErrorCode::InvalidValue, "n_workers must be >= 1");
    if (modes_per_worker < 1 || modes_per_worker > n_classes) {
        throw Error(ErrorCode::InvalidValue, "modes_per_worker must be in [1, " + std::to_string(n_classes) + "]");
    }
    if (n_workers * modes_per_worker < n_classes) {
        throw Error(ErrorCode::InfeasiblePartition,
                    std::to_string(n_workers) + " workers x " + std::to_string(modes_per_worker) +
                        " modes cannot cover " + std::to_string(n_classes) + " labels");
    }

    std::vector<std::vector<std::size_t>> by_label(n_classes);
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train[i].label >= n_classes) {
            throw Error(ErrorCode::InvalidValue, "segment label " + std::to_string(train[i].label) + " out of range");
        }
        by_label[train[i].label].push_back(i);
    }
    std::mt19937_64 rng(seed);
    for (auto& idx : by_label) std::shuffle(idx.begin(), idx.end(), rng);

    std::vector<std::vector<std::size_t>> holders(n_classes);
    for (std::size_t w = 0; w < n_workers; ++w)
        for (std::size_t label : worker_labels(w, n_workers, modes_per_worker, n_classes)) holders[label].push_back(w);

    std::vector<std::vector<FeatureSegment>> shards(n_workers);
    for (std::size_t label = 0; label < n_classes; ++label) {
        const auto& idx = by_label[label];
        const auto& ws = holders[label];
        if (ws.empty() || idx.size() < ws.size()) {
            throw Error(ErrorCode::InfeasiblePartition,
                        "label " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                            " segments for " + std::to_string(ws.size()) + " workers");
        }
        const std::size_t base = idx.size() / ws.size();
        const std::size_t extra = idx.size() % ws.size();
        std::size_t pos = 0;
        for (std::size_t k = 0; k < ws.size(); ++k) {
            const std::size_t take = base + (k < extra ? 1 : 0);
            for (std::size_t j = 0; j < take; ++j) shards[ws[k]].push_back(train[idx[pos++]]);
        }
    }

    std::vector<WorkerDataset> out;
    out.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) out.emplace_back(w, std::move(shards[w]));
    return out;
}

}  // namespace fedmode::synth
