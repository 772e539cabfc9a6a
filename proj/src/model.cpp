#include "fedmode/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>

#include "fedmode/adam.hpp"
#include "fedmode/error.hpp"
#include "fedmode/seed.hpp"

namespace fedmode::nn {

namespace {

std::atomic<bool> g_lstm_fault{false};

Tensor uniform_init(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-s, s);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

void add_dense(ParamSet& ps, const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    ps.add(prefix + ".W", uniform_init({in, out}, in, out, rng));
    ps.add(prefix + ".b", Tensor({out}));
}

Var zeros(Graph& g, std::size_t rows, std::size_t cols) { return g.constant(Tensor({rows, cols})); }

// Sequential reader over bound parameter vars.
class ParamCursor {
public:
    explicit ParamCursor(std::span<const Var> vars) : vars_(vars) {}
    Var next() {
        if (pos_ >= vars_.size()) throw Error(ErrorCode::LayoutMismatch, "parameter list too short for spec");
        return vars_[pos_++];
    }
    bool done() const { return pos_ == vars_.size(); }

private:
    std::span<const Var> vars_;
    std::size_t pos_ = 0;
};

Var gate(Graph& g, Var x, Var h, Var W, Var U, Var b) {
    return g.add_bias(g.add(g.matmul(x, W), g.matmul(h, U)), b);
}

}  // namespace

namespace testing {
void set_lstm_backward_fault(bool enabled) { g_lstm_fault = enabled; }
}  // namespace testing

std::string architecture_name(Architecture a) {
    switch (a) {
        case Architecture::LSTM: return "lstm";
        case Architecture::GRU: return "gru";
        case Architecture::CNN1D: return "cnn1d";
        case Architecture::MLP: return "mlp";
    }
    return "?";
}

Architecture architecture_from_name(const std::string& name) {
    for (auto a : {Architecture::LSTM, Architecture::GRU, Architecture::CNN1D, Architecture::MLP}) {
        if (architecture_name(a) == name) return a;
    }
    throw Error(ErrorCode::InvalidSpec, "unknown architecture '" + name + "'");
}

std::pair<std::size_t, std::size_t> cnn_output_lengths(const ModelSpec& spec) {
    const std::size_t l1 = (spec.length - spec.cnn_kernel) / spec.cnn_stride + 1;
    const std::size_t l2 = (l1 - spec.cnn_kernel) / spec.cnn_stride + 1;
    return {l1, l2};
}

void validate(const ModelSpec& spec) {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidSpec, what); };
    if (spec.channels == 0 || spec.length == 0) fail("channels and length must be positive");
    if (spec.hidden == 0) fail("hidden size must be positive");
    if (spec.classes < 2) fail("need at least 2 classes");
    if (spec.dropout < 0.0 || spec.dropout >= 1.0) fail("dropout must be in [0, 1)");
    if (spec.architecture == Architecture::CNN1D) {
        if (spec.cnn_filters == 0 || spec.cnn_kernel == 0) fail("cnn filters and kernel must be positive");
        if (spec.cnn_stride == 0) throw Error(ErrorCode::InvalidStride, "cnn stride must be >= 1");
        if (spec.cnn_kernel > spec.length) fail("cnn kernel longer than the sequence");
        const std::size_t l1 = (spec.length - spec.cnn_kernel) / spec.cnn_stride + 1;
        if (spec.cnn_kernel > l1) fail("second cnn layer kernel longer than its input");
    }
}

std::size_t head_input_width(const ModelSpec& spec) {
    switch (spec.architecture) {
        case Architecture::LSTM:
        case Architecture::GRU: return spec.hidden;
        case Architecture::CNN1D: return spec.cnn_filters * cnn_output_lengths(spec).second;
        case Architecture::MLP: return spec.channels * spec.length;
    }
    return 0;
}

Var dense_forward(Graph& g, Var x, Var W, Var b) { return g.add_bias(g.matmul(x, W), b); }

std::pair<Var, Var> lstm_cell(Graph& g, Var x, Var h_prev, Var c_prev, const LstmWeights& w) {
    const Var i = g.sigmoid(gate(g, x, h_prev, w.W_i, w.U_i, w.b_i));
    const Var f = g.sigmoid(gate(g, x, h_prev, w.W_f, w.U_f, w.b_f));
    const Var o = g.sigmoid(gate(g, x, h_prev, w.W_o, w.U_o, w.b_o));
    const Var cand = g.tanh(gate(g, x, h_prev, w.W_g, w.U_g, w.b_g));
    Var write = g.mul(i, cand);
    if (g_lstm_fault.load(std::memory_order_relaxed)) write = g.scale_grad(write, 1.5);
    const Var c = g.add(g.mul(f, c_prev), write);
    const Var h = g.mul(o, g.tanh(c));
    return {h, c};
}

Var gru_cell(Graph& g, Var x, Var h_prev, const GruWeights& w) {
    const Var z = g.sigmoid(gate(g, x, h_prev, w.W_z, w.U_z, w.b_z));
    const Var r = g.sigmoid(gate(g, x, h_prev, w.W_r, w.U_r, w.b_r));
    const Var cand = g.tanh(gate(g, x, g.mul(r, h_prev), w.W_h, w.U_h, w.b_h));
    // (1 - z) * h_prev + z * cand
    return g.add(h_prev, g.mul(z, g.sub(cand, h_prev)));
}

ParamSet build_model(const ModelSpec& spec, std::uint64_t seed) {
    validate(spec);
    std::mt19937_64 rng(seed);
    ParamSet ps;
    const std::size_t C = spec.channels, H = spec.hidden;
    switch (spec.architecture) {
        case Architecture::LSTM:
            for (const char* gname : {"i", "f", "o", "g"})
                ps.add(std::string("lstm.W_") + gname, uniform_init({C, H}, C, H, rng));
            for (const char* gname : {"i", "f", "o", "g"})
                ps.add(std::string("lstm.U_") + gname, uniform_init({H, H}, H, H, rng));
            for (const char* gname : {"i", "f", "o", "g"})
                ps.add(std::string("lstm.b_") + gname, Tensor({H}, gname[0] == 'f' ? 1.0 : 0.0));
            break;
        case Architecture::GRU:
            for (const char* gname : {"z", "r", "h"})
                ps.add(std::string("gru.W_") + gname, uniform_init({C, H}, C, H, rng));
            for (const char* gname : {"z", "r", "h"})
                ps.add(std::string("gru.U_") + gname, uniform_init({H, H}, H, H, rng));
            for (const char* gname : {"z", "r", "h"}) ps.add(std::string("gru.b_") + gname, Tensor({H}));
            break;
        case Architecture::CNN1D: {
            const std::size_t F = spec.cnn_filters, k = spec.cnn_kernel;
            ps.add("conv1.kernel", uniform_init({F, C, k}, C * k, F * k, rng));
            ps.add("conv1.bias", Tensor({F}));
            ps.add("conv2.kernel", uniform_init({F, F, k}, F * k, F * k, rng));
            ps.add("conv2.bias", Tensor({F}));
            break;
        }
        case Architecture::MLP: break;
    }
    add_dense(ps, "head.dense1", head_input_width(spec), H, rng);
    add_dense(ps, "head.dense2", H, H, rng);
    add_dense(ps, "head.out", H, spec.classes, rng);
    return ps;
}

std::vector<Var> bind_params(Graph& g, const ParamSet& params, bool requires_grad) {
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(requires_grad ? g.leaf(p.value) : g.constant(p.value));
    return vars;
}

Var model_logits(Graph& g, const ModelSpec& spec, std::span<const Var> params, Var input,
                 std::mt19937_64* dropout_rng) {
    const Tensor& x = g.value(input);
    if (x.rank() != 3 || x.dim(1) != spec.channels || x.dim(2) != spec.length) {
        throw Error(ErrorCode::ShapeMismatch, "model input " + shape_string(x.shape()) + " does not match spec C=" +
                                                  std::to_string(spec.channels) + " L=" + std::to_string(spec.length));
    }
    const std::size_t B = x.dim(0);
    ParamCursor cur(params);
    Var features{};
    switch (spec.architecture) {
        case Architecture::LSTM: {
            LstmWeights w{};
            w.W_i = cur.next(), w.W_f = cur.next(), w.W_o = cur.next(), w.W_g = cur.next();
            w.U_i = cur.next(), w.U_f = cur.next(), w.U_o = cur.next(), w.U_g = cur.next();
            w.b_i = cur.next(), w.b_f = cur.next(), w.b_o = cur.next(), w.b_g = cur.next();
            Var h = zeros(g, B, spec.hidden);
            Var c = zeros(g, B, spec.hidden);
            for (std::size_t t = 0; t < spec.length; ++t) std::tie(h, c) = lstm_cell(g, g.time_step(input, t), h, c, w);
            features = h;
            break;
        }
        case Architecture::GRU: {
            GruWeights w{};
            w.W_z = cur.next(), w.W_r = cur.next(), w.W_h = cur.next();
            w.U_z = cur.next(), w.U_r = cur.next(), w.U_h = cur.next();
            w.b_z = cur.next(), w.b_r = cur.next(), w.b_h = cur.next();
            Var h = zeros(g, B, spec.hidden);
            for (std::size_t t = 0; t < spec.length; ++t) h = gru_cell(g, g.time_step(input, t), h, w);
            features = h;
            break;
        }
        case Architecture::CNN1D: {
            const Var k1 = cur.next(), b1 = cur.next(), k2 = cur.next(), b2 = cur.next();
            Var y = g.relu(conv1d_forward(g, input, k1, b1, spec.cnn_stride));
            y = g.relu(conv1d_forward(g, y, k2, b2, spec.cnn_stride));
            features = g.reshape(y, {B, head_input_width(spec)});
            break;
        }
        case Architecture::MLP: features = g.reshape(input, {B, head_input_width(spec)}); break;
    }

    auto hidden = [&](Var v) {
        const Var W = cur.next(), b = cur.next();
        Var a = g.relu(dense_forward(g, v, W, b));
        if (dropout_rng != nullptr) a = g.dropout(a, spec.dropout, *dropout_rng);
        return a;
    };
    Var a = hidden(features);
    a = hidden(a);
    const Var W = cur.next(), b = cur.next();
    const Var logits = dense_forward(g, a, W, b);
    if (!cur.done()) throw Error(ErrorCode::LayoutMismatch, "parameter list too long for spec");
    return logits;
}

Tensor batch_input(std::span<const geo::FeatureSegment> segments, const ModelSpec& spec) {
    const std::size_t per = spec.channels * spec.length;
    Tensor x({segments.size(), spec.channels, spec.length});
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& s = segments[i];
        if (s.channels != spec.channels || s.length != spec.length) {
            throw Error(ErrorCode::ShapeMismatch, "segment " + std::to_string(s.channels) + "x" +
                                                      std::to_string(s.length) + " does not match spec");
        }
        std::copy(s.values.begin(), s.values.end(), x.ptr() + i * per);
    }
    return x;
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
    Tensor y({labels.size(), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) {
            throw Error(ErrorCode::ShapeMismatch, "label " + std::to_string(labels[i]) + " >= " + std::to_string(classes));
        }
        y[i * classes + labels[i]] = 1.0;
    }
    return y;
}

Tensor forward_probs(const ParamSet& params, const ModelSpec& spec, const Tensor& input) {
    Graph g;
    const auto vars = bind_params(g, params, false);
    const Var x = g.constant(input);
    return softmax(g.value(model_logits(g, spec, vars, x)));
}

Tensor forward_model(const ParamSet& params, const ModelSpec& spec, std::span<const geo::FeatureSegment> segments) {
    return forward_probs(params, spec, batch_input(segments, spec));
}

std::vector<std::size_t> argmax_rows(const Tensor& probs) {
    const std::size_t B = probs.dim(0), K = probs.dim(1);
    std::vector<std::size_t> out(B);
    for (std::size_t r = 0; r < B; ++r) {
        const double* row = probs.ptr() + r * K;
        out[r] = static_cast<std::size_t>(std::max_element(row, row + K) - row);  // first max wins
    }
    return out;
}

namespace {

double loss_and_gradients_impl(const ParamSet& params, const ModelSpec& spec, const Tensor& input,
                               const Tensor& targets, std::vector<Tensor>& grads, std::mt19937_64* dropout_rng) {
    Graph g;
    const auto vars = bind_params(g, params, true);
    const Var x = g.constant(input);
    const Var logits = model_logits(g, spec, vars, x, dropout_rng);
    const Var loss = g.softmax_cross_entropy(logits, targets);
    g.backward(loss);
    grads.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) grads[i] = Tensor(params[i].value.shape(), g.grad(vars[i]));
    return g.value(loss)[0];
}

}  // namespace

double loss_and_gradients(const ParamSet& params, const ModelSpec& spec, const Tensor& input, const Tensor& targets,
                          std::vector<Tensor>& grads) {
    return loss_and_gradients_impl(params, spec, input, targets, grads, nullptr);
}

TrainResult train_tensors(ParamSet params, const ModelSpec& spec, const Tensor& inputs,
                          std::span<const std::size_t> labels, const TrainOptions& options) {
    const std::size_t n = inputs.rank() == 3 ? inputs.dim(0) : 0;
    if (n == 0) throw Error(ErrorCode::EmptyDataset, "no training samples");
    if (labels.size() != n) throw Error(ErrorCode::LengthMismatch, "inputs and labels differ in length");
    if (options.batch_size == 0) throw Error(ErrorCode::InvalidValue, "batch size must be >= 1");

    const std::size_t per = inputs.dim(1) * inputs.dim(2);
    std::mt19937_64 shuffle_rng(options.seed);
    std::mt19937_64 dropout_rng(derive_seed(options.seed, {1}));
    std::mt19937_64* drop = spec.dropout > 0.0 ? &dropout_rng : nullptr;
    AdamState state(params, options.lr);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Tensor> grads;
    std::vector<std::size_t> batch_labels;

    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t start = 0; start < n; start += options.batch_size) {
            const std::size_t b = std::min(options.batch_size, n - start);
            Tensor x({b, inputs.dim(1), inputs.dim(2)});
            batch_labels.resize(b);
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t src = order[start + i];
                std::copy_n(inputs.ptr() + src * per, per, x.ptr() + i * per);
                batch_labels[i] = labels[src];
            }
            const double loss =
                loss_and_gradients_impl(params, spec, x, one_hot(batch_labels, spec.classes), grads, drop);
            if (!std::isfinite(loss)) throw Error(ErrorCode::NumericalError, "training loss is not finite");
            adam_step(params, grads, state);
        }
    }
    return {std::move(params), n};
}

TrainResult train_local(ParamSet params, const ModelSpec& spec, std::span<const geo::FeatureSegment> data,
                        const TrainOptions& options) {
    if (data.empty()) throw Error(ErrorCode::EmptyDataset, "no local training data");
    std::vector<std::size_t> labels(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) labels[i] = data[i].label;
    return train_tensors(std::move(params), spec, batch_input(data, spec), labels, options);
}

EvalResult evaluate(const ParamSet& params, const ModelSpec& spec, std::span<const geo::FeatureSegment> data) {
    if (data.empty()) throw Error(ErrorCode::Empty, "no evaluation data");
    const Tensor probs = forward_model(params, spec, data);
    std::vector<std::size_t> labels(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) labels[i] = data[i].label;
    const auto pred = argmax_rows(probs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
    return {cross_entropy_loss(probs, one_hot(labels, spec.classes)),
            static_cast<double>(correct) / static_cast<double>(data.size())};
}

ModelSpec gradcheck_spec(Architecture arch) {
    ModelSpec spec;
    spec.architecture = arch;
    spec.channels = 3;
    spec.length = arch == Architecture::CNN1D ? 6 : 5;
    spec.hidden = 6;
    spec.classes = 3;
    spec.cnn_filters = 4;
    spec.cnn_kernel = 3;
    return spec;
}

double grad_check(const ModelSpec& spec, std::uint64_t seed) {
    constexpr std::size_t kBatch = 3;
    ParamSet params = build_model(spec, seed);
    std::mt19937_64 rng(derive_seed(seed, {0x6763}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    // Zero biases behind a fully inactive ReLU layer put the next layer exactly
    // on the kink; jitter everything so the check runs at a generic point.
    std::uniform_real_distribution<double> jitter(-0.1, 0.1);
    for (auto& p : params)
        for (auto& v : p.value.data()) v += jitter(rng);
    Tensor input({kBatch, spec.channels, spec.length});
    for (auto& v : input.data()) v = gauss(rng);
    std::vector<std::size_t> labels(kBatch);
    for (auto& l : labels) l = std::uniform_int_distribution<std::size_t>(0, spec.classes - 1)(rng);
    const Tensor targets = one_hot(labels, spec.classes);

    std::vector<Tensor> grads;
    loss_and_gradients(params, spec, input, targets, grads);

    auto loss_at = [&] {
        Graph g;
        const auto vars = bind_params(g, params, false);
        const Var logits = model_logits(g, spec, vars, g.constant(input));
        return g.value(g.softmax_cross_entropy(logits, targets))[0];
    };

    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& w = params[p].value;
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double saved = w[k];
            w[k] = saved + kGradCheckStep;
            const double up = loss_at();
            w[k] = saved - kGradCheckStep;
            const double down = loss_at();
            w[k] = saved;
            const double numeric = (up - down) / (2.0 * kGradCheckStep);
            const double analytic = grads[p][k];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckDenominatorFloor});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace fedmode::nn
