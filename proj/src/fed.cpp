#include "fedmode/fed.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <thread>

#include "fedmode/error.hpp"
#include "fedmode/seed.hpp"

namespace fedmode::fed {

namespace {

std::size_t worker_threads(const FederationConfig& config, std::size_t jobs) {
    std::size_t n = config.threads != 0 ? config.threads : std::max(1u, std::thread::hardware_concurrency());
    return std::max<std::size_t>(1, std::min(n, jobs));
}

// Runs fn(i) for i in [0, n) on up to `threads` threads; rethrows the first
// failure by index.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto drain = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (threads <= 1) {
        drain();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(drain);
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace

std::string aggregation_name(Aggregation a) {
    return a == Aggregation::PlainFedAvg ? "plain_fedavg" : "server_adam";
}

Aggregation aggregation_from_name(const std::string& s) {
    if (s == "plain_fedavg") return Aggregation::PlainFedAvg;
    if (s == "server_adam") return Aggregation::ServerAdam;
    throw Error(ErrorCode::InvalidValue, "aggregation must be plain_fedavg or server_adam, got '" + s + "'");
}

std::string assignment_name(Assignment a) { return a == Assignment::Replicated ? "replicated" : "partitioned"; }

Assignment assignment_from_name(const std::string& s) {
    if (s == "replicated") return Assignment::Replicated;
    if (s == "partitioned") return Assignment::Partitioned;
    throw Error(ErrorCode::InvalidValue, "architecture_assignment must be replicated or partitioned, got '" + s + "'");
}

void validate(const FederationConfig& c) {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidValue, what); };
    if (c.n_workers < 1) fail("workers must be >= 1");
    if (c.rounds < 1) fail("rounds must be >= 1");
    if (c.local_batch < 1) fail("local_batch must be >= 1");
    if (!(c.worker_lr >= 0.0) || !(c.chief_lr >= 0.0)) fail("learning rates must be >= 0");
    if (!(c.client_fraction > 0.0 && c.client_fraction <= 1.0)) fail("client_fraction must be in (0, 1]");
    if (c.modes_per_worker < 1) fail("modes_per_worker must be >= 1");
}

std::vector<std::size_t> select_workers(std::size_t round, const FederationConfig& config, std::uint64_t seed) {
    std::vector<std::size_t> ids(config.n_workers);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    if (config.client_fraction >= 1.0) return ids;
    // The epsilon keeps e.g. 0.3 * 10 = 3.0000000000000004 from rounding up.
    auto k = static_cast<std::size_t>(std::ceil(config.client_fraction * static_cast<double>(config.n_workers) - 1e-9));
    k = std::clamp<std::size_t>(k, 1, config.n_workers);
    std::mt19937_64 rng(derive_seed(seed, {0x73656c656374ULL, round}));
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(k);
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<nn::ParamSet> broadcast(const nn::ParamSet& global, std::size_t n_copies) {
    return std::vector<nn::ParamSet>(n_copies, global);
}

std::uint64_t local_round_seed(std::uint64_t master, std::size_t round, std::size_t worker, nn::Architecture arch) {
    return derive_seed(master, {0x6c6f63616cULL, round, worker, static_cast<std::uint64_t>(arch)});
}

WorkerUpdate local_round(const synth::WorkerDataset& worker, nn::ParamSet params, const nn::ModelSpec& spec,
                         const FederationConfig& config, std::uint64_t seed) {
    synth::WorkerScope scope;
    const auto data = worker.segments();
    if (data.empty()) throw Error(ErrorCode::EmptyDataset, "worker " + std::to_string(worker.worker_id()));
    nn::TrainOptions opts{config.local_epochs, config.local_batch, config.worker_lr, seed};
    auto result = nn::train_local(std::move(params), spec, data, opts);
    return {worker.worker_id(), std::move(result.params), result.n_samples};
}

nn::ParamSet fedavg_aggregate(std::span<const WorkerUpdate> updates) {
    if (updates.empty()) throw Error(ErrorCode::EmptyUpdateList, "nothing to aggregate");
    std::vector<const WorkerUpdate*> sorted;
    for (const auto& u : updates) sorted.push_back(&u);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const WorkerUpdate* a, const WorkerUpdate* b) { return a->worker_id < b->worker_id; });

    double total = 0.0;
    for (const auto* u : sorted) {
        if (!u->params.same_layout(sorted.front()->params)) {
            throw Error(ErrorCode::LayoutMismatch, "worker " + std::to_string(u->worker_id) + " has a different layout");
        }
        total += static_cast<double>(u->n_samples);
    }
    if (!(total > 0.0)) throw Error(ErrorCode::InvalidValue, "updates carry zero samples");

    // base + sum_k w_k (p_k - base): equal to sum_k w_k p_k, and exact when
    // all updates coincide.
    nn::ParamSet out = sorted.front()->params;
    for (std::size_t p = 0; p < out.size(); ++p) {
        double* acc = out[p].value.ptr();
        const double* base = sorted.front()->params[p].value.ptr();
        const std::size_t n = out[p].value.size();
        std::vector<double> sum(n, 0.0);
        for (const auto* u : sorted) {
            const double w = static_cast<double>(u->n_samples) / total;
            const double* v = u->params[p].value.ptr();
            for (std::size_t i = 0; i < n; ++i) sum[i] += w * (v[i] - base[i]);
        }
        for (std::size_t i = 0; i < n; ++i) acc[i] = base[i] + sum[i];
    }
    return out;
}

nn::ParamSet server_apply(const nn::ParamSet& global, const nn::ParamSet& aggregate, nn::AdamState& chief_state) {
    if (!global.same_layout(aggregate)) throw Error(ErrorCode::LayoutMismatch, "aggregate layout differs from global");
    std::vector<nn::Tensor> pseudo_grad;
    pseudo_grad.reserve(global.size());
    for (std::size_t p = 0; p < global.size(); ++p) {
        nn::Tensor g = global[p].value;
        const nn::Tensor& a = aggregate[p].value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= a[i];
        pseudo_grad.push_back(std::move(g));
    }
    nn::ParamSet next = global;
    nn::adam_step(next, pseudo_grad, chief_state);
    return next;
}

std::vector<std::vector<std::size_t>> partition_groups(std::size_t n_workers, std::size_t n_architectures) {
    if (n_architectures == 0 || n_workers < n_architectures) {
        throw Error(ErrorCode::InvalidValue, "partitioned assignment needs at least one worker per architecture");
    }
    std::vector<std::vector<std::size_t>> groups(n_architectures);
    const std::size_t base = n_workers / n_architectures;
    const std::size_t extra = n_workers % n_architectures;
    std::size_t w = 0;
    for (std::size_t g = 0; g < n_architectures; ++g) {
        const std::size_t size = base + (g < extra ? 1 : 0);
        for (std::size_t k = 0; k < size; ++k) groups[g].push_back(w++);
    }
    return groups;
}

std::vector<std::size_t> worker_models(std::size_t worker, std::size_t n_models, const FederationConfig& config) {
    if (config.assignment == Assignment::Replicated) {
        std::vector<std::size_t> all(n_models);
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }
    const auto groups = partition_groups(config.n_workers, n_models);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (std::find(groups[g].begin(), groups[g].end(), worker) != groups[g].end()) return {g};
    }
    return {};
}

FederationState init_federation(std::span<const nn::ModelSpec> specs, std::span<const geo::FeatureSegment> proxy,
                                const FederationConfig& config, std::uint64_t seed) {
    validate(config);
    FederationState state;
    for (const auto& spec : specs) {
        const auto arch = static_cast<std::uint64_t>(spec.architecture);
        GlobalModel g;
        g.spec = spec;
        g.params = nn::build_model(spec, derive_seed(seed, {0x696e6974ULL, arch}));
        if (config.pretrain_on_proxy && config.pretrain_epochs > 0 && !proxy.empty()) {
            nn::TrainOptions opts{config.pretrain_epochs, config.local_batch, config.chief_lr,
                                  derive_seed(seed, {0x70726574ULL, arch})};
            g.params = nn::train_local(std::move(g.params), spec, proxy, opts).params;
        }
        if (config.aggregation == Aggregation::ServerAdam) g.chief_adam = nn::AdamState(g.params, config.chief_lr);
        state.globals.push_back(std::move(g));
    }
    return state;
}

void run_round(FederationState& state, std::span<const synth::WorkerDataset> workers,
               std::span<const geo::FeatureSegment> test, const FederationConfig& config, std::uint64_t seed) {
    const std::size_t round = state.round + 1;
    const std::size_t n_models = state.globals.size();
    const auto selected = select_workers(round, config, seed);

    struct Job {
        std::size_t worker;
        std::size_t model;
    };
    std::vector<Job> jobs;
    for (std::size_t w : selected) {
        if (w >= workers.size() || workers[w].worker_id() != w) {
            throw Error(ErrorCode::InvalidValue, "worker list must be indexed by worker id");
        }
        for (std::size_t m : worker_models(w, n_models, config)) jobs.push_back({w, m});
    }

    // Broadcast: every job receives its own copy of the current global.
    std::vector<std::vector<nn::ParamSet>> copies(n_models);
    std::vector<std::size_t> handed(n_models, 0);
    for (std::size_t m = 0; m < n_models; ++m) {
        const auto count = static_cast<std::size_t>(
            std::count_if(jobs.begin(), jobs.end(), [m](const Job& j) { return j.model == m; }));
        copies[m] = broadcast(state.globals[m].params, count);
    }
    std::vector<std::pair<std::size_t, std::size_t>> slot(jobs.size());
    for (std::size_t j = 0; j < jobs.size(); ++j) slot[j] = {jobs[j].model, handed[jobs[j].model]++};

    std::vector<WorkerUpdate> results(jobs.size());
    parallel_for(jobs.size(), worker_threads(config, jobs.size()), [&](std::size_t j) {
        const auto& job = jobs[j];
        const auto& spec = state.globals[job.model].spec;
        auto& params = copies[slot[j].first][slot[j].second];
        results[j] = local_round(workers[job.worker], std::move(params), spec, config,
                                 local_round_seed(seed, round, job.worker, spec.architecture));
    });

    RoundMetrics metrics;
    metrics.round = round;
    metrics.participants = selected;
    for (std::size_t m = 0; m < n_models; ++m) {
        std::vector<WorkerUpdate> updates;
        for (std::size_t j = 0; j < jobs.size(); ++j) {
            if (jobs[j].model == m) updates.push_back(std::move(results[j]));
        }
        auto& global = state.globals[m];
        if (!updates.empty()) {
            nn::ParamSet aggregate = fedavg_aggregate(updates);
            if (config.aggregation == Aggregation::ServerAdam) {
                if (!global.chief_adam) global.chief_adam = nn::AdamState(global.params, config.chief_lr);
                global.params = server_apply(global.params, aggregate, *global.chief_adam);
            } else {
                global.params = std::move(aggregate);
            }
        }
        const auto eval = nn::evaluate(global.params, global.spec, test);
        metrics.models.push_back({nn::architecture_name(global.spec.architecture), eval.accuracy, eval.loss,
                                  updates.size()});
    }
    state.round = round;
    state.history.push_back(std::move(metrics));
}

FederationState run_federation(const FederationConfig& config, std::span<const synth::WorkerDataset> workers,
                               std::span<const nn::ModelSpec> specs, std::span<const geo::FeatureSegment> proxy,
                               std::span<const geo::FeatureSegment> test, std::uint64_t seed,
                               const RoundObserver& observer) {
    if (workers.size() != config.n_workers) {
        throw Error(ErrorCode::InvalidValue, "config expects " + std::to_string(config.n_workers) + " workers, got " +
                                                 std::to_string(workers.size()));
    }
    FederationState state = init_federation(specs, proxy, config, seed);
    for (std::size_t t = 0; t < config.rounds; ++t) {
        run_round(state, workers, test, config, seed);
        if (observer) observer(state);
    }
    return state;
}

}  // namespace fedmode::fed
