#include "fedmode/ensemble.hpp"

#include <algorithm>

#include "fedmode/error.hpp"

namespace fedmode::ensemble {

namespace {

void check_blocks(std::span<const nn::Tensor> probs) {
    if (probs.empty()) throw Error(ErrorCode::ShapeMismatch, "no base-model predictions");
    for (const auto& p : probs) {
        if (p.rank() != 2 || p.shape() != probs.front().shape()) {
            throw Error(ErrorCode::ShapeMismatch, "base-model prediction shapes differ");
        }
    }
}

}  // namespace

std::string combiner_name(Combiner c) {
    switch (c) {
        case Combiner::StackedMlp: return "stacked_mlp";
        case Combiner::SoftAverage: return "soft_average";
        case Combiner::MajorityVote: return "majority_vote";
    }
    return "?";
}

Combiner combiner_from_name(const std::string& s) {
    for (auto c : {Combiner::StackedMlp, Combiner::SoftAverage, Combiner::MajorityVote}) {
        if (combiner_name(c) == s) return c;
    }
    throw Error(ErrorCode::InvalidValue, "combiner must be stacked_mlp, soft_average or majority_vote, got '" + s + "'");
}

std::string metrics_name(Combiner c) {
    switch (c) {
        case Combiner::StackedMlp: return "efeddnn_stacked";
        case Combiner::SoftAverage: return "efeddnn_softavg";
        case Combiner::MajorityVote: return "efeddnn_vote";
    }
    return "?";
}

std::vector<std::size_t> labels_of(std::span<const geo::FeatureSegment> segments) {
    std::vector<std::size_t> labels(segments.size());
    for (std::size_t i = 0; i < segments.size(); ++i) labels[i] = segments[i].label;
    return labels;
}

std::vector<nn::Tensor> base_probabilities(std::span<const BaseLearner> bases,
                                           std::span<const geo::FeatureSegment> segments) {
    std::vector<nn::Tensor> out;
    out.reserve(bases.size());
    for (const auto& b : bases) out.push_back(nn::forward_model(b.params, b.spec, segments));
    return out;
}

StackedFeatures stack_probabilities(std::span<const nn::Tensor> probs, std::span<const std::size_t> labels) {
    check_blocks(probs);
    const std::size_t n = probs.front().dim(0), K = probs.front().dim(1), B = probs.size();
    if (labels.size() != n) throw Error(ErrorCode::LengthMismatch, "labels do not match prediction rows");
    StackedFeatures s;
    s.classes = K;
    s.bases = B;
    s.labels.assign(labels.begin(), labels.end());
    s.features = nn::Tensor({n, B * K});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t k = 0; k < K; ++k) s.features[i * B * K + b * K + k] = probs[b][i * K + k];
    return s;
}

StackedFeatures collect_base_predictions(std::span<const BaseLearner> bases,
                                         std::span<const geo::FeatureSegment> segments) {
    const auto probs = base_probabilities(bases, segments);
    return stack_probabilities(probs, labels_of(segments));
}

nn::ModelSpec meta_spec(std::size_t classes, std::size_t bases, std::size_t hidden) {
    nn::ModelSpec spec;
    spec.architecture = nn::Architecture::MLP;
    spec.channels = classes * bases;
    spec.length = 1;
    spec.hidden = hidden;
    spec.classes = classes;
    return spec;
}

namespace {

nn::Tensor as_model_input(const StackedFeatures& s) {
    const std::size_t n = s.features.dim(0), w = s.features.dim(1);
    return nn::Tensor({n, w, 1}, std::vector<double>(s.features.data().begin(), s.features.data().end()));
}

}  // namespace

nn::ParamSet train_meta_learner(const StackedFeatures& stacked, const MetaOptions& options) {
    if (stacked.labels.empty()) throw Error(ErrorCode::EmptyDataset, "no proxy samples for the meta-learner");
    const auto spec = meta_spec(stacked.classes, stacked.bases, options.hidden);
    nn::ParamSet meta = nn::build_model(spec, options.seed);
    if (options.epochs == 0) return meta;
    return nn::train_tensors(std::move(meta), spec, as_model_input(stacked), stacked.labels,
                             {options.epochs, options.batch_size, options.lr, options.seed})
        .params;
}

nn::Tensor stacked_probabilities(const nn::ModelSpec& spec, const nn::ParamSet& meta, const StackedFeatures& stacked) {
    return nn::forward_probs(meta, spec, as_model_input(stacked));
}

nn::Tensor soft_average(std::span<const nn::Tensor> probs) {
    check_blocks(probs);
    nn::Tensor mean(probs.front().shape());
    for (const auto& p : probs)
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += p[i];
    for (auto& v : mean.data()) v /= static_cast<double>(probs.size());
    return mean;
}

std::vector<std::size_t> soft_average_labels(std::span<const nn::Tensor> probs) {
    return nn::argmax_rows(soft_average(probs));
}

nn::Tensor vote_shares(std::span<const nn::Tensor> probs) {
    check_blocks(probs);
    nn::Tensor shares(probs.front().shape());
    const std::size_t K = shares.dim(1);
    for (const auto& p : probs) {
        const auto votes = nn::argmax_rows(p);
        for (std::size_t i = 0; i < votes.size(); ++i) shares[i * K + votes[i]] += 1.0;
    }
    for (auto& v : shares.data()) v /= static_cast<double>(probs.size());
    return shares;
}

std::vector<std::size_t> majority_vote_labels(std::span<const nn::Tensor> probs) {
    const nn::Tensor shares = vote_shares(probs);
    const auto fallback = soft_average_labels(probs);
    const std::size_t n = shares.dim(0), K = shares.dim(1);
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = shares.ptr() + i * K;
        const double best = *std::max_element(row, row + K);
        const auto winners = std::count(row, row + K, best);
        out[i] = winners == 1 ? static_cast<std::size_t>(std::max_element(row, row + K) - row) : fallback[i];
    }
    return out;
}

std::vector<std::size_t> stacked_labels(std::span<const nn::Tensor> base_probs, const nn::Tensor& meta_probs) {
    check_blocks(base_probs);
    auto out = nn::argmax_rows(meta_probs);
    if (out.size() != base_probs.front().dim(0)) throw Error(ErrorCode::ShapeMismatch, "meta and base row counts differ");
    std::vector<std::vector<std::size_t>> votes;
    for (const auto& p : base_probs) votes.push_back(nn::argmax_rows(p));
    for (std::size_t i = 0; i < out.size(); ++i) {
        bool unanimous = true;
        for (const auto& v : votes) unanimous = unanimous && v[i] == votes.front()[i];
        if (unanimous) out[i] = votes.front()[i];
    }
    return out;
}

std::vector<std::size_t> predict_stacked(const EnsembleModel& model, std::span<const geo::FeatureSegment> segments) {
    if (!model.meta || !model.meta_spec) throw Error(ErrorCode::MissingMeta, "stacked ensemble has no meta-learner");
    const auto probs = base_probabilities(model.bases, segments);
    const auto stacked = stack_probabilities(probs, labels_of(segments));
    return stacked_labels(probs, stacked_probabilities(*model.meta_spec, *model.meta, stacked));
}

std::vector<std::size_t> predict_soft_average(std::span<const BaseLearner> bases,
                                              std::span<const geo::FeatureSegment> segments) {
    return soft_average_labels(base_probabilities(bases, segments));
}

std::vector<std::size_t> predict_majority_vote(std::span<const BaseLearner> bases,
                                               std::span<const geo::FeatureSegment> segments) {
    return majority_vote_labels(base_probabilities(bases, segments));
}

std::vector<std::size_t> predict(const EnsembleModel& model, std::span<const geo::FeatureSegment> segments) {
    switch (model.combiner) {
        case Combiner::StackedMlp: return predict_stacked(model, segments);
        case Combiner::SoftAverage: return predict_soft_average(model.bases, segments);
        case Combiner::MajorityVote: return predict_majority_vote(model.bases, segments);
    }
    return {};
}

double evaluate_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
    if (predicted.size() != truth.size()) throw Error(ErrorCode::LengthMismatch, "prediction and label counts differ");
    if (predicted.empty()) throw Error(ErrorCode::Empty, "no predictions to score");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == truth[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

}  // namespace fedmode::ensemble
