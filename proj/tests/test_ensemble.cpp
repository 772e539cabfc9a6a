#include <random>

#include "doctest.h"
#include "fedmode/config.hpp"
#include "fedmode/ensemble.hpp"
#include "fedmode/error.hpp"
#include "fedmode/experiment.hpp"
#include "support.hpp"

using namespace fedmode;
using ensemble::BaseLearner;
using nn::Tensor;

namespace {

nn::ModelSpec tiny_spec(nn::Architecture a) {
    nn::ModelSpec s;
    s.architecture = a;
    s.channels = 2;
    s.length = 4;
    s.hidden = 8;
    s.classes = 4;
    s.cnn_filters = 3;
    s.cnn_kernel = 2;
    return s;
}

std::vector<BaseLearner> trained_bases(std::span<const geo::FeatureSegment> data) {
    std::vector<BaseLearner> out;
    std::uint64_t seed = 1;
    for (auto a : {nn::Architecture::LSTM, nn::Architecture::GRU, nn::Architecture::CNN1D}) {
        const auto spec = tiny_spec(a);
        out.push_back({spec, nn::train_local(nn::build_model(spec, seed), spec, data, {3, 10, 0.01, seed}).params});
        ++seed;
    }
    return out;
}

Tensor rows(std::size_t k, std::vector<double> v) {
    const std::size_t n = v.size() / k;
    return Tensor({n, k}, std::move(v));
}

Tensor random_probs(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    Tensor z({n, k});
    std::normal_distribution<double> g(0.0, 2.0);
    for (auto& v : z.data()) v = g(rng);
    return nn::softmax(z);
}

// Meta weights that pass the first K-block straight through to the logits.
nn::ParamSet copy_first_block_meta(const nn::ModelSpec& mspec) {
    nn::ParamSet meta = nn::build_model(mspec, 0);
    for (auto& p : meta)
        for (auto& v : p.value.data()) v = 0.0;
    const std::size_t K = mspec.classes;
    for (std::size_t k = 0; k < K; ++k) {
        meta.get("head.dense1.W").at(k, k) = 1.0;
        meta.get("head.dense2.W").at(k, k) = 1.0;
        meta.get("head.out.W").at(k, k) = 1.0;
    }
    return meta;
}

}  // namespace

TEST_CASE("combiner names") {
    CHECK(ensemble::combiner_name(ensemble::Combiner::StackedMlp) == "stacked_mlp");
    CHECK(ensemble::combiner_from_name("majority_vote") == ensemble::Combiner::MajorityVote);
    CHECK(ensemble::metrics_name(ensemble::Combiner::StackedMlp) == "efeddnn_stacked");
    CHECK(ensemble::metrics_name(ensemble::Combiner::SoftAverage) == "efeddnn_softavg");
    CHECK(ensemble::metrics_name(ensemble::Combiner::MajorityVote) == "efeddnn_vote");
    CHECK_THROWS_AS(ensemble::combiner_from_name("boosting"), Error);
}

TEST_CASE("stacked features layout") {
    const auto data = testsupport::random_segments(30, 2, 4, 4, 3);
    const auto bases = trained_bases(data);
    const auto st = ensemble::collect_base_predictions(bases, data);
    REQUIRE(st.features.shape() == nn::Shape{30, 12});
    CHECK(st.labels == ensemble::labels_of(data));
    const auto probs = ensemble::base_probabilities(bases, data);
    for (std::size_t i = 0; i < 30; ++i) {
        for (std::size_t b = 0; b < 3; ++b) {
            double sum = 0.0;
            for (std::size_t k = 0; k < 4; ++k) {
                CHECK(st.features.at(i, b * 4 + k) == probs[b].at(i, k));
                sum += st.features.at(i, b * 4 + k);
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
    }

    const std::vector<BaseLearner> same(3, bases[0]);
    const auto s2 = ensemble::collect_base_predictions(same, data);
    for (std::size_t i = 0; i < 30; ++i)
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK(s2.features.at(i, k) == s2.features.at(i, 4 + k));
            CHECK(s2.features.at(i, k) == s2.features.at(i, 8 + k));
        }
}

TEST_CASE("identity-like meta reproduces the first base learner") {
    const auto data = testsupport::random_segments(40, 2, 4, 4, 4);
    ensemble::EnsembleModel model;
    model.bases = trained_bases(data);
    model.meta_spec = ensemble::meta_spec(4, 3, 8);
    model.meta = copy_first_block_meta(*model.meta_spec);
    const auto pred = ensemble::predict_stacked(model, data);
    CHECK(pred == nn::argmax_rows(nn::forward_model(model.bases[0].params, model.bases[0].spec, data)));

    const auto single = ensemble::predict_stacked(model, std::span(data).first(1));
    CHECK(single.size() == 1);
    for (auto p : pred) CHECK(p < 4);

    model.meta.reset();
    try {
        ensemble::predict_stacked(model, data);
        FAIL("expected MissingMeta");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingMeta);
    }
}

TEST_CASE("soft average examples") {
    const std::vector<Tensor> p{rows(2, {0.6, 0.4}), rows(2, {0.2, 0.8}), rows(2, {0.4, 0.6})};
    const auto mean = ensemble::soft_average(p);
    CHECK(mean[0] == doctest::Approx(0.4));
    CHECK(mean[1] == doctest::Approx(0.6));
    CHECK(ensemble::soft_average_labels(p) == std::vector<std::size_t>{1});

    const std::vector<Tensor> tie{rows(2, {0.5, 0.5}), rows(2, {0.25, 0.75}), rows(2, {0.75, 0.25})};
    CHECK(ensemble::soft_average_labels(tie) == std::vector<std::size_t>{0});

    std::mt19937_64 rng(5);
    const Tensor one = random_probs(20, 4, rng);
    const std::vector<Tensor> three(3, one);
    CHECK(ensemble::soft_average_labels(three) == nn::argmax_rows(one));

    CHECK_THROWS_AS(ensemble::soft_average(std::vector<Tensor>{rows(2, {0.5, 0.5}), rows(3, {0.2, 0.3, 0.5})}), Error);
}

TEST_CASE("soft average argmax ignores a common rescaling") {
    std::mt19937_64 rng(6);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<Tensor> p{random_probs(15, 4, rng), random_probs(15, 4, rng), random_probs(15, 4, rng)};
        const auto ref = ensemble::soft_average_labels(p);
        for (auto& t : p)
            for (auto& v : t.data()) v *= 3.7;
        CHECK(ensemble::soft_average_labels(p) == ref);
    }
}

TEST_CASE("majority vote examples") {
    // classes: walk 0, bike 1, car 2
    const std::vector<Tensor> car_car_walk{rows(3, {0.1, 0.1, 0.8}), rows(3, {0.2, 0.2, 0.6}), rows(3, {0.9, 0.05, 0.05})};
    CHECK(ensemble::majority_vote_labels(car_car_walk) == std::vector<std::size_t>{2});

    const std::vector<Tensor> unanimous{rows(3, {0.1, 0.8, 0.1}), rows(3, {0.3, 0.4, 0.3}), rows(3, {0.2, 0.5, 0.3})};
    CHECK(ensemble::majority_vote_labels(unanimous) == std::vector<std::size_t>{1});

    // All distinct; the soft average favours car.
    const std::vector<Tensor> split{rows(3, {0.4, 0.3, 0.3}), rows(3, {0.3, 0.4, 0.3}), rows(3, {0.0, 0.05, 0.95})};
    CHECK(ensemble::soft_average_labels(split) == std::vector<std::size_t>{2});
    CHECK(ensemble::majority_vote_labels(split) == std::vector<std::size_t>{2});
    const std::vector<Tensor> split2{rows(3, {0.9, 0.05, 0.05}), rows(3, {0.3, 0.4, 0.3}), rows(3, {0.3, 0.3, 0.4})};
    CHECK(ensemble::majority_vote_labels(split2) == std::vector<std::size_t>{0});

    const auto shares = ensemble::vote_shares(car_car_walk);
    CHECK(shares[0] == doctest::Approx(1.0 / 3));
    CHECK(shares[2] == doctest::Approx(2.0 / 3));
}

TEST_CASE("unanimous bases decide every combiner") {
    const auto data = testsupport::random_segments(60, 2, 4, 4, 7);
    const auto bases = trained_bases(data);
    const auto probs = ensemble::base_probabilities(bases, data);
    const auto a0 = nn::argmax_rows(probs[0]), a1 = nn::argmax_rows(probs[1]), a2 = nn::argmax_rows(probs[2]);
    const auto soft = ensemble::soft_average_labels(probs);
    const auto vote = ensemble::majority_vote_labels(probs);

    ensemble::EnsembleModel model;
    model.bases = bases;
    model.meta_spec = ensemble::meta_spec(4, 3, 8);
    ensemble::MetaOptions opt;
    opt.hidden = 8;
    opt.epochs = 100;
    opt.seed = 3;
    model.meta = ensemble::train_meta_learner(ensemble::collect_base_predictions(bases, data), opt);
    const auto stacked = ensemble::predict_stacked(model, data);
    const auto meta_argmax = nn::argmax_rows(
        ensemble::stacked_probabilities(*model.meta_spec, *model.meta, ensemble::collect_base_predictions(bases, data)));

    std::size_t unanimous = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (a0[i] != a1[i] || a1[i] != a2[i]) {
            CHECK(stacked[i] == meta_argmax[i]);
            continue;
        }
        ++unanimous;
        CHECK(soft[i] == a0[i]);
        CHECK(vote[i] == a0[i]);
        CHECK(stacked[i] == a0[i]);
    }
    CHECK(unanimous > 0);

    std::mt19937_64 rng(8);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<Tensor> p{random_probs(1, 4, rng), random_probs(1, 4, rng), random_probs(1, 4, rng)};
        const auto l = nn::argmax_rows(p[0]);
        if (l != nn::argmax_rows(p[1]) || l != nn::argmax_rows(p[2])) continue;
        CHECK(ensemble::soft_average_labels(p) == l);
        CHECK(ensemble::majority_vote_labels(p) == l);
    }
}

TEST_CASE("meta learner training") {
    const auto data = testsupport::random_segments(60, 2, 4, 4, 9);
    const auto bases = trained_bases(data);
    const auto st = ensemble::collect_base_predictions(bases, data);
    const auto mspec = ensemble::meta_spec(4, 3, 8);
    CHECK(mspec.channels == 12);
    CHECK(mspec.length == 1);

    ensemble::MetaOptions opt;
    opt.hidden = 8;
    opt.seed = 4;
    opt.epochs = 0;
    const auto init = ensemble::train_meta_learner(st, opt);
    CHECK(nn::bit_equal(init, nn::build_model(mspec, 4)));

    opt.epochs = 50;
    const auto trained = ensemble::train_meta_learner(st, opt);
    CHECK(nn::bit_equal(trained, ensemble::train_meta_learner(st, opt)));
    const Tensor y = nn::one_hot(st.labels, 4);
    const double before = nn::cross_entropy_loss(ensemble::stacked_probabilities(mspec, init, st), y);
    const double after = nn::cross_entropy_loss(ensemble::stacked_probabilities(mspec, trained, st), y);
    CHECK(after < before);

    ensemble::StackedFeatures empty;
    empty.classes = 4;
    empty.bases = 3;
    empty.features = Tensor({0, 12});
    try {
        ensemble::train_meta_learner(empty, opt);
        FAIL("expected EmptyDataset");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyDataset);
    }
}

TEST_CASE("accuracy scoring") {
    const std::vector<std::size_t> truth{0, 1, 2, 3};
    CHECK(ensemble::evaluate_accuracy(truth, truth) == 1.0);
    CHECK(ensemble::evaluate_accuracy(std::vector<std::size_t>{1, 2, 3, 0}, truth) == 0.0);
    CHECK(ensemble::evaluate_accuracy(std::vector<std::size_t>{0, 1, 2, 0}, truth) == 0.75);
    try {
        ensemble::evaluate_accuracy(std::vector<std::size_t>{0}, truth);
        FAIL("expected LengthMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::LengthMismatch);
    }
    try {
        ensemble::evaluate_accuracy({}, {});
        FAIL("expected Empty");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Empty);
    }
}

TEST_CASE("predict dispatches on the combiner") {
    const auto data = testsupport::random_segments(20, 2, 4, 4, 10);
    ensemble::EnsembleModel model;
    model.bases = trained_bases(data);
    model.combiner = ensemble::Combiner::SoftAverage;
    CHECK(ensemble::predict(model, data) == ensemble::predict_soft_average(model.bases, data));
    model.combiner = ensemble::Combiner::MajorityVote;
    CHECK(ensemble::predict(model, data) == ensemble::predict_majority_vote(model.bases, data));
    model.combiner = ensemble::Combiner::StackedMlp;
    CHECK_THROWS_AS(ensemble::predict(model, data), Error);
}

TEST_CASE("meta learner sees only the proxy split") {
    config::ExperimentConfig cfg;
    cfg.model.hidden = 8;
    cfg.ensemble.meta_epochs = 20;
    cfg.dataset.channels = {geo::Channel::Speed, geo::Channel::Acceleration};
    cfg.dataset.segment_length = 4;
    const auto data = testsupport::random_segments(100, 2, 4, 4, 11);
    const auto bases = trained_bases(data);

    synth::DatasetSplit a = synth::split_dataset(data, 1);
    synth::DatasetSplit b = a;
    b.train = testsupport::random_segments(50, 2, 4, 4, 12);
    b.test = testsupport::random_segments(30, 2, 4, 4, 13);
    const auto ra = experiment::evaluate_ensembles(bases, a, cfg, 1, 10);
    const auto rb = experiment::evaluate_ensembles(bases, b, cfg, 1, 10);
    CHECK(nn::bit_equal(ra.meta, rb.meta));

    synth::DatasetSplit c = a;
    c.proxy = testsupport::random_segments(static_cast<std::size_t>(a.proxy.size()), 2, 4, 4, 14);
    CHECK_FALSE(nn::bit_equal(experiment::evaluate_ensembles(bases, c, cfg, 1, 10).meta, ra.meta));

    REQUIRE(ra.rows.size() == 3);
    CHECK(ra.rows[0].architecture == "efeddnn_stacked");
    CHECK(ra.rows[1].architecture == "efeddnn_softavg");
    CHECK(ra.rows[2].architecture == "efeddnn_vote");
    for (const auto& r : ra.rows) {
        CHECK(r.round == 1);
        CHECK(r.n_participants == 10);
        CHECK(r.test_accuracy >= 0.0);
        CHECK(r.test_loss >= 0.0);
    }
    CHECK(ra.rows[1].test_accuracy ==
          ensemble::evaluate_accuracy(ensemble::predict_soft_average(bases, a.test), ensemble::labels_of(a.test)));
}
