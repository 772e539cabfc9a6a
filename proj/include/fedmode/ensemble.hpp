#pragma once

// Combining the federated base learners: stacking with an MLP meta-learner,
// unweighted soft averaging and hard majority voting.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmode/geo.hpp"
#include "fedmode/model.hpp"
#include "fedmode/tensor.hpp"

namespace fedmode::ensemble {

enum class Combiner { StackedMlp, SoftAverage, MajorityVote };

std::string combiner_name(Combiner c);  // "stacked_mlp", "soft_average", "majority_vote"
Combiner combiner_from_name(const std::string& s);
/// Row label used in metrics.csv ("efeddnn_stacked", ...).
std::string metrics_name(Combiner c);

struct BaseLearner {
    nn::ModelSpec spec;
    nn::ParamSet params;
};

/// Row i = [p_base0(i) | p_base1(i) | ...], each block K wide.
struct StackedFeatures {
    nn::Tensor features;  // [n x (bases * K)]
    std::vector<std::size_t> labels;
    std::size_t classes = 0;
    std::size_t bases = 0;
};

/// Per-base probability tensors for the segments, in base order.
std::vector<nn::Tensor> base_probabilities(std::span<const BaseLearner> bases,
                                           std::span<const geo::FeatureSegment> segments);

StackedFeatures stack_probabilities(std::span<const nn::Tensor> probs, std::span<const std::size_t> labels);
StackedFeatures collect_base_predictions(std::span<const BaseLearner> bases,
                                         std::span<const geo::FeatureSegment> segments);

struct MetaOptions {
    std::size_t epochs = 200;
    std::size_t batch_size = 30;
    double lr = 0.001;
    std::size_t hidden = 64;
    std::uint64_t seed = 0;
};

/// MLP over a (bases*K) x 1 input: two ReLU hidden layers then K softmax.
nn::ModelSpec meta_spec(std::size_t classes, std::size_t bases, std::size_t hidden);

nn::ParamSet train_meta_learner(const StackedFeatures& stacked, const MetaOptions& options);

struct EnsembleModel {
    Combiner combiner = Combiner::StackedMlp;
    std::vector<BaseLearner> bases;
    std::optional<nn::ModelSpec> meta_spec;
    std::optional<nn::ParamSet> meta;
};

/// Meta-learner probabilities for already-stacked features.
nn::Tensor stacked_probabilities(const nn::ModelSpec& spec, const nn::ParamSet& meta, const StackedFeatures& stacked);

/// Meta argmax per row, except that rows where every base learner has the
/// same argmax take that label.
std::vector<std::size_t> stacked_labels(std::span<const nn::Tensor> base_probs, const nn::Tensor& meta_probs);

/// Unweighted mean of the per-base probability rows.
nn::Tensor soft_average(std::span<const nn::Tensor> probs);
std::vector<std::size_t> soft_average_labels(std::span<const nn::Tensor> probs);

/// Modal argmax across bases; when no label has a strict plurality the
/// soft-average label decides.
std::vector<std::size_t> majority_vote_labels(std::span<const nn::Tensor> probs);
/// Fraction of bases voting for each class, per row.
nn::Tensor vote_shares(std::span<const nn::Tensor> probs);

std::vector<std::size_t> predict_stacked(const EnsembleModel& model, std::span<const geo::FeatureSegment> segments);
std::vector<std::size_t> predict_soft_average(std::span<const BaseLearner> bases,
                                              std::span<const geo::FeatureSegment> segments);
std::vector<std::size_t> predict_majority_vote(std::span<const BaseLearner> bases,
                                               std::span<const geo::FeatureSegment> segments);
std::vector<std::size_t> predict(const EnsembleModel& model, std::span<const geo::FeatureSegment> segments);

double evaluate_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

std::vector<std::size_t> labels_of(std::span<const geo::FeatureSegment> segments);

}  // namespace fedmode::ensemble
