#pragma once

// Architectures (LSTM, GRU, 1-D CNN, MLP), their shared classifier head,
// local mini-batch training and the finite-difference gradient check.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedmode/autodiff.hpp"
#include "fedmode/geo.hpp"
#include "fedmode/tensor.hpp"

namespace fedmode::nn {

enum class Architecture { LSTM, GRU, CNN1D, MLP };

std::string architecture_name(Architecture a);  // "lstm", "gru", "cnn1d", "mlp"
Architecture architecture_from_name(const std::string& name);

struct ModelSpec {
    Architecture architecture = Architecture::MLP;
    std::size_t channels = 4;
    std::size_t length = 10;
    std::size_t hidden = 64;
    std::size_t classes = 4;
    std::size_t cnn_filters = 32;
    std::size_t cnn_kernel = 3;
    std::size_t cnn_stride = 1;
    double dropout = 0.0;

    bool operator==(const ModelSpec&) const = default;
};

void validate(const ModelSpec& spec);

/// Width of the vector entering the two-layer ReLU head.
std::size_t head_input_width(const ModelSpec& spec);
/// Time extent after each CNN layer.
std::pair<std::size_t, std::size_t> cnn_output_lengths(const ModelSpec& spec);

// Single-layer building blocks, operating on graph variables.

Var dense_forward(Graph& g, Var x, Var W, Var b);

struct LstmWeights {
    Var W_i, W_f, W_o, W_g;
    Var U_i, U_f, U_o, U_g;
    Var b_i, b_f, b_o, b_g;
};

/// Returns (h_t, c_t).
std::pair<Var, Var> lstm_cell(Graph& g, Var x, Var h_prev, Var c_prev, const LstmWeights& w);

struct GruWeights {
    Var W_z, W_r, W_h;
    Var U_z, U_r, U_h;
    Var b_z, b_r, b_h;
};

Var gru_cell(Graph& g, Var x, Var h_prev, const GruWeights& w);

inline Var conv1d_forward(Graph& g, Var x, Var kernels, Var bias, std::size_t stride) {
    return g.conv1d(x, kernels, bias, stride);
}

ParamSet build_model(const ModelSpec& spec, std::uint64_t seed);

/// Graph leaves for every parameter, in ParamSet order.
std::vector<Var> bind_params(Graph& g, const ParamSet& params, bool requires_grad);

/// Dropout is applied after each hidden ReLU only when `dropout_rng` is set.
Var model_logits(Graph& g, const ModelSpec& spec, std::span<const Var> params, Var input,
                 std::mt19937_64* dropout_rng = nullptr);

/// Packs segments into a [batch x C x L] tensor.
Tensor batch_input(std::span<const geo::FeatureSegment> segments, const ModelSpec& spec);
Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes);

/// Class probabilities for a [batch x C x L] input.
Tensor forward_probs(const ParamSet& params, const ModelSpec& spec, const Tensor& input);
Tensor forward_model(const ParamSet& params, const ModelSpec& spec, std::span<const geo::FeatureSegment> segments);

/// Row-wise argmax with ties to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& probs);

/// Mean loss over the batch and its gradient per parameter.
double loss_and_gradients(const ParamSet& params, const ModelSpec& spec, const Tensor& input,
                          const Tensor& targets, std::vector<Tensor>& grads);

struct TrainOptions {
    std::size_t epochs = 10;
    std::size_t batch_size = 30;
    double lr = 0.0005;
    std::uint64_t seed = 0;
};

struct TrainResult {
    ParamSet params;
    std::size_t n_samples = 0;
};

/// Mini-batch Adam over `inputs` ([n x C x L]); optimizer state starts fresh.
TrainResult train_tensors(ParamSet params, const ModelSpec& spec, const Tensor& inputs,
                          std::span<const std::size_t> labels, const TrainOptions& options);

TrainResult train_local(ParamSet params, const ModelSpec& spec, std::span<const geo::FeatureSegment> data,
                        const TrainOptions& options);

/// Mean cross-entropy and accuracy of `params` on labelled segments.
struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};
EvalResult evaluate(const ParamSet& params, const ModelSpec& spec, std::span<const geo::FeatureSegment> data);

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckThreshold = 1e-4;
inline constexpr double kGradCheckDenominatorFloor = 1e-6;

/// A small spec of the given architecture suitable for grad_check.
ModelSpec gradcheck_spec(Architecture arch);

/// Max relative error between autodiff and central finite differences over
/// every parameter coordinate of a random small batch.
double grad_check(const ModelSpec& spec, std::uint64_t seed);

namespace testing {
/// Negative-control hook: scales the gradient flowing through the LSTM
/// input-gate product so backward no longer matches forward.
void set_lstm_backward_fault(bool enabled);
}  // namespace testing

}  // namespace fedmode::nn
