#include <algorithm>
#include <set>
#include <type_traits>

#include "doctest.h"
#include "fedmode/error.hpp"
#include "fedmode/fed.hpp"
#include "support.hpp"

using namespace fedmode;
using nn::ParamSet;
using nn::Tensor;

namespace {

// Chief-side entry points take parameters and counts only; none of them can
// be handed a WorkerDataset or segments.
static_assert(std::is_same_v<decltype(&fed::fedavg_aggregate), ParamSet (*)(std::span<const fed::WorkerUpdate>)>);
static_assert(std::is_same_v<decltype(&fed::server_apply),
                             ParamSet (*)(const ParamSet&, const ParamSet&, nn::AdamState&)>);
static_assert(std::is_same_v<decltype(&fed::select_workers),
                             std::vector<std::size_t> (*)(std::size_t, const fed::FederationConfig&, std::uint64_t)>);
static_assert(std::is_same_v<decltype(&fed::broadcast), std::vector<ParamSet> (*)(const ParamSet&, std::size_t)>);

static_assert(std::is_same_v<decltype(fed::WorkerUpdate::worker_id), std::size_t>);
static_assert(std::is_same_v<decltype(fed::WorkerUpdate::params), ParamSet>);
static_assert(std::is_same_v<decltype(fed::WorkerUpdate::n_samples), std::size_t>);
// No further members hiding data.
static_assert(sizeof(fed::WorkerUpdate) == 2 * sizeof(std::size_t) + sizeof(ParamSet));
static_assert(!std::is_constructible_v<fed::WorkerUpdate, synth::WorkerDataset>);

ParamSet scalar_params(double v) {
    ParamSet p;
    p.add("w", Tensor({1}, v));
    return p;
}

nn::ModelSpec tiny_spec(nn::Architecture a) {
    nn::ModelSpec s;
    s.architecture = a;
    s.channels = 2;
    s.length = 4;
    s.hidden = 6;
    s.classes = 4;
    s.cnn_filters = 3;
    s.cnn_kernel = 2;
    return s;
}

struct Fixture {
    std::vector<geo::FeatureSegment> train, proxy, test;
    std::vector<synth::WorkerDataset> workers;
    std::vector<nn::ModelSpec> specs;
    fed::FederationConfig config;

    explicit Fixture(std::size_t n_workers = 4, std::size_t modes = 2) {
        train = testsupport::random_segments(80, 2, 4, 4, 1);
        proxy = testsupport::random_segments(12, 2, 4, 4, 2);
        test = testsupport::random_segments(40, 2, 4, 4, 3);
        workers = synth::partition_non_iid(train, n_workers, modes, 4, 4);
        specs = {tiny_spec(nn::Architecture::LSTM), tiny_spec(nn::Architecture::GRU),
                 tiny_spec(nn::Architecture::CNN1D)};
        config.n_workers = n_workers;
        config.rounds = 2;
        config.local_epochs = 2;
        config.local_batch = 8;
        config.worker_lr = 0.01;
        config.threads = 1;
    }
};

}  // namespace

TEST_CASE("worker selection") {
    fed::FederationConfig cfg;
    const auto all = fed::select_workers(1, cfg, 9);
    CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    cfg.client_fraction = 0.5;
    const auto half = fed::select_workers(3, cfg, 9);
    CHECK(half.size() == 5);
    CHECK(std::set<std::size_t>(half.begin(), half.end()).size() == 5);
    CHECK(std::is_sorted(half.begin(), half.end()));
    CHECK(fed::select_workers(3, cfg, 9) == half);
    cfg.client_fraction = 0.3;
    CHECK(fed::select_workers(1, cfg, 9).size() == 3);
    cfg.client_fraction = 0.25;
    CHECK(fed::select_workers(1, cfg, 9).size() == 3);
    bool varies = false;
    for (std::size_t r = 2; r < 10; ++r) varies = varies || fed::select_workers(r, cfg, 9) != fed::select_workers(1, cfg, 9);
    CHECK(varies);
}

TEST_CASE("broadcast gives independent copies") {
    const ParamSet g = scalar_params(1.0);
    auto copies = fed::broadcast(g, 3);
    REQUIRE(copies.size() == 3);
    for (const auto& c : copies) CHECK(c == g);
    copies[0][0].value[0] = 5.0;
    CHECK(copies[1] == g);
    CHECK(g[0].value[0] == 1.0);
    CHECK(fed::broadcast(g, 0).empty());
}

TEST_CASE("fedavg aggregation arithmetic") {
    const std::vector<fed::WorkerUpdate> one{{0, scalar_params(2.5), 7}};
    CHECK(nn::bit_equal(fed::fedavg_aggregate(one), one[0].params));

    const std::vector<fed::WorkerUpdate> two{{0, scalar_params(2.0), 1}, {1, scalar_params(4.0), 3}};
    CHECK(fed::fedavg_aggregate(two)[0].value[0] == 3.5);

    std::mt19937_64 rng(5);
    ParamSet p = nn::build_model(tiny_spec(nn::Architecture::GRU), 3);
    const std::vector<fed::WorkerUpdate> same{{0, p, 3}, {1, p, 5}, {2, p, 11}};
    CHECK(nn::bit_equal(fed::fedavg_aggregate(same), p));

    CHECK(fed::fedavg_aggregate(two).same_layout(two[0].params));
}

TEST_CASE("fedavg is scale equivariant and permutation invariant") {
    std::vector<fed::WorkerUpdate> ups;
    for (std::size_t w = 0; w < 6; ++w)
        ups.push_back({w, nn::build_model(tiny_spec(nn::Architecture::CNN1D), 100 + w), 3 + 7 * w});
    const ParamSet ref = fed::fedavg_aggregate(ups);

    for (std::size_t scale : {2u, 3u, 1000u}) {
        auto scaled = ups;
        for (auto& u : scaled) u.n_samples *= scale;
        CHECK(nn::bit_equal(fed::fedavg_aggregate(scaled), ref));
    }
    auto shuffled = ups;
    std::mt19937_64 rng(6);
    for (int rep = 0; rep < 5; ++rep) {
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(nn::bit_equal(fed::fedavg_aggregate(shuffled), ref));
    }
    // Matches the plain weighted mean up to rounding.
    double total = 0;
    for (const auto& u : ups) total += u.n_samples;
    for (std::size_t p = 0; p < ref.size(); ++p)
        for (std::size_t i = 0; i < ref[p].value.size(); ++i) {
            double m = 0.0;
            for (const auto& u : ups) m += u.n_samples / total * u.params[p].value[i];
            CHECK(std::abs(ref[p].value[i] - m) <= 1e-12);
        }
}

TEST_CASE("fedavg errors") {
    try {
        fed::fedavg_aggregate({});
        FAIL("expected EmptyUpdateList");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyUpdateList);
    }
    ParamSet other;
    other.add("v", Tensor({1}));
    const std::vector<fed::WorkerUpdate> mixed{{0, scalar_params(1.0), 1}, {1, other, 1}};
    try {
        fed::fedavg_aggregate(mixed);
        FAIL("expected LayoutMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::LayoutMismatch);
    }
}

TEST_CASE("server apply examples") {
    const ParamSet g = scalar_params(1.0);
    nn::AdamState st(g, 0.001);
    CHECK(nn::bit_equal(fed::server_apply(g, g, st), g));

    nn::AdamState st2(g, 0.001);
    const ParamSet next = fed::server_apply(g, scalar_params(0.0), st2);
    CHECK(next[0].value[0] == doctest::Approx(0.999).epsilon(1e-8));
    CHECK(st2.t == 1);

    ParamSet other;
    other.add("v", Tensor({1}));
    CHECK_THROWS_AS(fed::server_apply(g, other, st2), Error);
}

TEST_CASE("partitioned groups") {
    const auto groups = fed::partition_groups(10, 3);
    REQUIRE(groups.size() == 3);
    CHECK(groups[0].size() == 4);
    CHECK(groups[1].size() == 3);
    CHECK(groups[2].size() == 3);
    fed::FederationConfig cfg;
    CHECK(fed::worker_models(7, 3, cfg) == std::vector<std::size_t>{0, 1, 2});
    cfg.assignment = fed::Assignment::Partitioned;
    CHECK(fed::worker_models(3, 3, cfg) == std::vector<std::size_t>{0});
    CHECK(fed::worker_models(4, 3, cfg) == std::vector<std::size_t>{1});
    CHECK(fed::worker_models(9, 3, cfg) == std::vector<std::size_t>{2});
}

TEST_CASE("local round") {
    Fixture fx;
    const auto& spec = fx.specs[0];
    const ParamSet global = nn::build_model(spec, 1);
    synth::reset_data_access_counters();
    const auto u = fed::local_round(fx.workers[1], global, spec, fx.config, 5);
    CHECK(synth::data_access_counters().outside_worker == 0);
    CHECK(synth::data_access_counters().inside_worker > 0);
    CHECK(u.worker_id == 1);
    {
        synth::WorkerScope scope;
        CHECK(u.n_samples == fx.workers[1].segments().size());
    }
    CHECK_FALSE(u.params == global);
    CHECK(nn::bit_equal(fed::local_round(fx.workers[1], global, spec, fx.config, 5).params, u.params));

    synth::WorkerDataset twin(2, [&] {
        synth::WorkerScope scope;
        auto s = fx.workers[1].segments();
        return std::vector<geo::FeatureSegment>(s.begin(), s.end());
    }());
    CHECK(nn::bit_equal(fed::local_round(twin, global, spec, fx.config, 5).params, u.params));

    auto cfg = fx.config;
    cfg.local_epochs = 0;
    const auto idle = fed::local_round(fx.workers[1], global, spec, cfg, 5);
    CHECK(nn::bit_equal(idle.params, global));
    CHECK(idle.n_samples == u.n_samples);
}

TEST_CASE("untrained model scores near chance") {
    Fixture fx;
    const auto noise = testsupport::random_segments(400, 2, 4, 4, 31, false);
    for (const auto& spec : fx.specs) {
        const double acc = nn::evaluate(nn::build_model(spec, 77), spec, noise).accuracy;
        CHECK(acc >= 0.15);
        CHECK(acc <= 0.35);
    }
}

TEST_CASE("federation history and layout") {
    Fixture fx;
    fx.config.rounds = 3;
    const auto init = fed::init_federation(fx.specs, fx.proxy, fx.config, 8);
    const auto st = fed::run_federation(fx.config, fx.workers, fx.specs, fx.proxy, fx.test, 8);
    CHECK(st.round == 3);
    REQUIRE(st.history.size() == 3);
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(st.history[r].round == r + 1);
        REQUIRE(st.history[r].models.size() == 3);
        CHECK(st.history[r].models[0].name == "lstm");
        CHECK(st.history[r].models[2].name == "cnn1d");
        for (const auto& m : st.history[r].models) {
            CHECK(m.n_participants == 4);
            CHECK(m.test_accuracy >= 0.0);
            CHECK(m.test_accuracy <= 1.0);
            CHECK(m.test_loss >= 0.0);
        }
    }
    for (std::size_t m = 0; m < 3; ++m) {
        CHECK(st.globals[m].params.same_layout(init.globals[m].params));
        CHECK_FALSE(st.globals[m].chief_adam.has_value());
    }
}

TEST_CASE("thread count never changes the result") {
    Fixture fx;
    auto a_cfg = fx.config;
    a_cfg.threads = 1;
    auto b_cfg = fx.config;
    b_cfg.threads = 4;
    const auto a = fed::run_federation(a_cfg, fx.workers, fx.specs, fx.proxy, fx.test, 12);
    const auto b = fed::run_federation(b_cfg, fx.workers, fx.specs, fx.proxy, fx.test, 12);
    for (std::size_t m = 0; m < 3; ++m) CHECK(nn::bit_equal(a.globals[m].params, b.globals[m].params));
}

TEST_CASE("partitioned assignment trains one architecture per group") {
    Fixture fx(6, 4);
    fx.config.assignment = fed::Assignment::Partitioned;
    fx.config.rounds = 1;
    const auto st = fed::run_federation(fx.config, fx.workers, fx.specs, fx.proxy, fx.test, 13);
    for (const auto& m : st.history[0].models) CHECK(m.n_participants == 2);
}

TEST_CASE("server adam mode keeps a chief optimizer") {
    Fixture fx;
    fx.config.aggregation = fed::Aggregation::ServerAdam;
    const auto st = fed::run_federation(fx.config, fx.workers, fx.specs, fx.proxy, fx.test, 14);
    for (const auto& g : st.globals) {
        REQUIRE(g.chief_adam.has_value());
        CHECK(g.chief_adam->t == 2);
        CHECK(g.chief_adam->lr == fx.config.chief_lr);
    }
}

TEST_CASE("single worker federation equals repeated local training") {
    Fixture fx(1, 4);
    fx.config.rounds = 3;
    fx.config.local_batch = 1000;  // full batch
    const std::uint64_t seed = 21;
    const auto init = fed::init_federation(fx.specs, fx.proxy, fx.config, seed);
    const auto st = fed::run_federation(fx.config, fx.workers, fx.specs, fx.proxy, fx.test, seed);
    std::vector<geo::FeatureSegment> data;
    {
        synth::WorkerScope scope;
        auto s = fx.workers[0].segments();
        data.assign(s.begin(), s.end());
    }
    for (std::size_t m = 0; m < fx.specs.size(); ++m) {
        ParamSet p = init.globals[m].params;
        for (std::size_t r = 1; r <= 3; ++r) {
            nn::TrainOptions opt{fx.config.local_epochs, fx.config.local_batch, fx.config.worker_lr,
                                 fed::local_round_seed(seed, r, 0, fx.specs[m].architecture)};
            p = nn::train_local(p, fx.specs[m], data, opt).params;
        }
        CHECK(nn::bit_equal(p, st.globals[m].params));
    }
}

TEST_CASE("no worker data is read outside worker scope during federation") {
    Fixture fx;
    synth::reset_data_access_counters();
    fed::run_federation(fx.config, fx.workers, fx.specs, fx.proxy, fx.test, 30);
    CHECK(synth::data_access_counters().outside_worker == 0);
    CHECK(synth::data_access_counters().inside_worker > 0);
}

TEST_CASE("federation config validation") {
    fed::FederationConfig cfg;
    cfg.rounds = 0;
    CHECK_THROWS_AS(fed::validate(cfg), Error);
    cfg = {};
    cfg.client_fraction = 0.0;
    CHECK_THROWS_AS(fed::validate(cfg), Error);
    cfg.client_fraction = 1.5;
    CHECK_THROWS_AS(fed::validate(cfg), Error);
    cfg = {};
    CHECK_NOTHROW(fed::validate(cfg));
    Fixture fx;
    fx.config.n_workers = 5;
    CHECK_THROWS_AS(fed::run_federation(fx.config, fx.workers, fx.specs, fx.proxy, fx.test, 1), Error);
}
