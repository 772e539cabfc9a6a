#include "fedmode/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "fedmode/checkpoint.hpp"
#include "fedmode/error.hpp"
#include "fedmode/seed.hpp"
#include "json.hpp"

namespace fedmode::experiment {

namespace {

using nlohmann::json;

constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;
constexpr std::uint64_t kPartitionStream = 0x7061727469ULL;
constexpr std::uint64_t kFederationStream = 0x666564ULL;
constexpr std::uint64_t kMetaStream = 0x6d657461ULL;

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string());
    out << text;
    if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<ensemble::BaseLearner> bases_of(const fed::FederationState& state) {
    std::vector<ensemble::BaseLearner> bases;
    for (const auto& g : state.globals) bases.push_back({g.spec, g.params});
    return bases;
}

std::string round_tag(std::size_t round) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "round%04zu", round);
    return buf;
}

}  // namespace

std::vector<geo::FeatureSegment> trips_to_segments(std::span<const geo::Trip> trips,
                                                   const config::DatasetSection& dataset) {
    std::vector<geo::FeatureSegment> segments;
    for (const auto& trip : trips) {
        const auto features = geo::compute_motion_features(trip);
        auto segs = geo::segment_trip(features, trip.mode.index, dataset.segment_length, dataset.channels);
        segments.insert(segments.end(), std::make_move_iterator(segs.begin()), std::make_move_iterator(segs.end()));
    }
    return segments;
}

PreparedData prepare_data(const config::ExperimentConfig& config) {
    PreparedData data;
    synth::DatasetConfig ds;
    ds.trips_per_mode = config.dataset.trips_per_mode;
    ds.points_per_trip = config.dataset.points_per_trip;
    ds.class_names = config.dataset.class_names;
    ds.master_seed = config.seed;
    data.trips = synth::generate_dataset(ds);
    data.segments = trips_to_segments(data.trips, config.dataset);

    auto raw = synth::split_dataset(data.segments, derive_seed(config.seed, {kSplitStream}));
    data.normalizer = geo::fit_normalizer(raw.train);
    data.split.proxy = geo::apply_normalizer(data.normalizer, raw.proxy);
    data.split.train = geo::apply_normalizer(data.normalizer, raw.train);
    data.split.test = geo::apply_normalizer(data.normalizer, raw.test);
    data.split.proxy_index = std::move(raw.proxy_index);
    data.split.train_index = std::move(raw.train_index);
    data.split.test_index = std::move(raw.test_index);

    data.workers = synth::partition_non_iid(data.split.train, config.federation.n_workers,
                                            config.federation.modes_per_worker, config.dataset.class_names.size(),
                                            derive_seed(config.seed, {kPartitionStream}));
    return data;
}

std::vector<nn::ModelSpec> base_specs(const config::ExperimentConfig& config) {
    std::vector<nn::ModelSpec> specs;
    for (auto arch : {nn::Architecture::LSTM, nn::Architecture::GRU, nn::Architecture::CNN1D}) {
        nn::ModelSpec s;
        s.architecture = arch;
        s.channels = config.dataset.channels.size();
        s.length = config.dataset.segment_length;
        s.hidden = config.model.hidden;
        s.classes = config.dataset.class_names.size();
        s.cnn_filters = config.model.cnn_filters;
        s.cnn_kernel = config.model.cnn_kernel;
        s.dropout = config.model.dropout;
        specs.push_back(s);
    }
    return specs;
}

std::string metrics_csv_header() { return "round,architecture,test_accuracy,test_loss,n_participants\n"; }

std::string format_metrics_row(const MetricsRow& row) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%s,%.6f,%.6f,%zu\n", row.round, row.architecture.c_str(), row.test_accuracy,
                  row.test_loss, row.n_participants);
    return buf;
}

EnsembleRound evaluate_ensembles(std::span<const ensemble::BaseLearner> bases, const synth::DatasetSplit& split,
                                 const config::ExperimentConfig& config, std::size_t round,
                                 std::size_t n_participants) {
    const std::size_t K = config.dataset.class_names.size();
    EnsembleRound out;

    const auto proxy_stack = ensemble::collect_base_predictions(bases, split.proxy);
    ensemble::MetaOptions meta_opts;
    meta_opts.epochs = config.ensemble.meta_epochs;
    meta_opts.batch_size = config.federation.local_batch;
    meta_opts.lr = config.federation.chief_lr;
    meta_opts.hidden = config.model.hidden;
    meta_opts.seed = derive_seed(config.seed, {kMetaStream, round});
    out.meta = ensemble::train_meta_learner(proxy_stack, meta_opts);
    const auto mspec = ensemble::meta_spec(K, bases.size(), config.model.hidden);

    const auto truth = ensemble::labels_of(split.test);
    const nn::Tensor targets = nn::one_hot(truth, K);
    const auto probs = ensemble::base_probabilities(bases, split.test);

    const nn::Tensor stacked = ensemble::stacked_probabilities(mspec, out.meta, ensemble::stack_probabilities(probs, truth));
    const nn::Tensor averaged = ensemble::soft_average(probs);
    const nn::Tensor shares = ensemble::vote_shares(probs);

    auto row = [&](ensemble::Combiner c, const std::vector<std::size_t>& pred, const nn::Tensor& p) {
        out.rows.push_back({round, ensemble::metrics_name(c), ensemble::evaluate_accuracy(pred, truth),
                            nn::cross_entropy_loss(p, targets), n_participants});
    };
    row(ensemble::Combiner::StackedMlp, ensemble::stacked_labels(probs, stacked), stacked);
    row(ensemble::Combiner::SoftAverage, nn::argmax_rows(averaged), averaged);
    row(ensemble::Combiner::MajorityVote, ensemble::majority_vote_labels(probs), shares);
    return out;
}

ExperimentResult run_experiment(const config::ExperimentConfig& config, const RunOptions& options) {
    config::validate(config);
    const PreparedData data = prepare_data(config);
    const auto specs = base_specs(config);

    const bool writing = !options.output_dir.empty();
    const auto ckpt_dir = options.output_dir / "checkpoints";
    if (writing) std::filesystem::create_directories(ckpt_dir);

    ExperimentResult result;
    result.proxy = data.split.proxy;
    const std::size_t interval = config.federation.checkpoint_interval;

    auto observer = [&](const fed::FederationState& state) {
        const auto& m = state.history.back();
        for (const auto& model : m.models) {
            result.rows.push_back({m.round, model.name, model.test_accuracy, model.test_loss, model.n_participants});
        }
        auto ens = evaluate_ensembles(bases_of(state), data.split, config, m.round, m.participants.size());
        result.rows.insert(result.rows.end(), ens.rows.begin(), ens.rows.end());
        result.meta = std::move(ens.meta);

        if (writing && interval > 0 && m.round % interval == 0) {
            for (const auto& g : state.globals) {
                nn::save_checkpoint(ckpt_dir / (nn::architecture_name(g.spec.architecture) + "_" + round_tag(m.round) + ".ckpt"),
                                    g.spec, g.params);
            }
        }
        if (options.progress != nullptr) {
            *options.progress << "round " << m.round << "/" << config.federation.rounds;
            for (const auto& r : result.rows) {
                if (r.round == m.round) *options.progress << "  " << r.architecture << "=" << r.test_accuracy;
            }
            *options.progress << std::endl;
        }
    };

    result.state = fed::run_federation(config.federation, data.workers, specs, data.split.proxy, data.split.test,
                                       derive_seed(config.seed, {kFederationStream}), observer);

    if (writing) {
        std::string csv = metrics_csv_header();
        for (const auto& r : result.rows) csv += format_metrics_row(r);
        write_text(options.output_dir / "metrics.csv", csv);
        write_text(options.output_dir / "config.echo.json", config::dump_config(config));

        json channels = json::array();
        for (auto c : config.dataset.channels) channels.push_back(geo::channel_name(c));
        json bases = json::array();
        for (const auto& g : result.state.globals) {
            const auto name = nn::architecture_name(g.spec.architecture);
            nn::save_checkpoint(ckpt_dir / (name + ".ckpt"), g.spec, g.params);
            bases.push_back(name + ".ckpt");
        }
        const auto mspec = ensemble::meta_spec(config.dataset.class_names.size(), specs.size(), config.model.hidden);
        nn::save_checkpoint(ckpt_dir / "meta.ckpt", mspec, result.meta);
        json pipeline = {{"class_names", config.dataset.class_names},
                         {"channels", channels},
                         {"segment_length", config.dataset.segment_length},
                         {"normalizer", {{"mean", data.normalizer.mean}, {"std", data.normalizer.stddev}}},
                         {"base_models", bases},
                         {"meta_model", "meta.ckpt"}};
        write_text(ckpt_dir / "pipeline.json", pipeline.dump(2) + "\n");
    }
    return result;
}

void write_generated_trips(const config::ExperimentConfig& config, const std::filesystem::path& csv_path) {
    synth::DatasetConfig ds;
    ds.trips_per_mode = config.dataset.trips_per_mode;
    ds.points_per_trip = config.dataset.points_per_trip;
    ds.class_names = config.dataset.class_names;
    ds.master_seed = config.seed;
    const auto trips = synth::generate_dataset(ds);
    if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + csv_path.string());
    geo::write_trips_csv(out, trips);
}

std::vector<EvaluationLine> evaluate_checkpoints(const std::filesystem::path& checkpoint_dir,
                                                 const std::filesystem::path& trips_csv) {
    json pipeline;
    try {
        pipeline = json::parse(read_text(checkpoint_dir / "pipeline.json"));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("pipeline.json: ") + e.what());
    }
    config::DatasetSection dataset;
    std::vector<ensemble::BaseLearner> bases;
    geo::Normalizer norm;
    std::string meta_file;
    try {
        dataset.class_names = pipeline.at("class_names").get<std::vector<std::string>>();
        dataset.channels.clear();
        for (const auto& c : pipeline.at("channels")) dataset.channels.push_back(geo::channel_from_name(c.get<std::string>()));
        dataset.segment_length = pipeline.at("segment_length").get<std::size_t>();
        norm.mean = pipeline.at("normalizer").at("mean").get<std::vector<double>>();
        norm.stddev = pipeline.at("normalizer").at("std").get<std::vector<double>>();
        for (const auto& f : pipeline.at("base_models")) {
            auto ck = nn::load_checkpoint(checkpoint_dir / f.get<std::string>());
            bases.push_back({ck.spec, std::move(ck.params)});
        }
        meta_file = pipeline.at("meta_model").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("pipeline.json: ") + e.what());
    }

    std::ifstream in(trips_csv);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + trips_csv.string());
    const auto trips = geo::read_trips_csv(in, dataset.class_names);
    const auto segments = geo::apply_normalizer(norm, trips_to_segments(trips, dataset));
    if (segments.empty()) throw Error(ErrorCode::Empty, "no segments in " + trips_csv.string());
    const auto truth = ensemble::labels_of(segments);

    std::vector<EvaluationLine> lines;
    for (const auto& b : bases) {
        lines.push_back({nn::architecture_name(b.spec.architecture),
                         ensemble::evaluate_accuracy(nn::argmax_rows(nn::forward_model(b.params, b.spec, segments)), truth)});
    }
    auto meta = nn::load_checkpoint(checkpoint_dir / meta_file);
    ensemble::EnsembleModel model{ensemble::Combiner::StackedMlp, bases, meta.spec, std::move(meta.params)};
    lines.push_back({ensemble::metrics_name(ensemble::Combiner::StackedMlp),
                     ensemble::evaluate_accuracy(ensemble::predict_stacked(model, segments), truth)});
    lines.push_back({ensemble::metrics_name(ensemble::Combiner::SoftAverage),
                     ensemble::evaluate_accuracy(ensemble::predict_soft_average(bases, segments), truth)});
    lines.push_back({ensemble::metrics_name(ensemble::Combiner::MajorityVote),
                     ensemble::evaluate_accuracy(ensemble::predict_majority_vote(bases, segments), truth)});
    return lines;
}

std::vector<GradcheckLine> run_gradcheck(std::size_t seeds) {
    std::vector<GradcheckLine> lines;
    for (auto arch : {nn::Architecture::MLP, nn::Architecture::LSTM, nn::Architecture::GRU, nn::Architecture::CNN1D}) {
        GradcheckLine line{arch, 0.0, false};
        for (std::size_t s = 1; s <= seeds; ++s) {
            line.max_relative_error = std::max(line.max_relative_error, nn::grad_check(nn::gradcheck_spec(arch), s));
        }
        line.pass = line.max_relative_error < nn::kGradCheckThreshold;
        lines.push_back(line);
    }
    return lines;
}

bool print_gradcheck(const std::vector<GradcheckLine>& lines, std::ostream& out) {
    bool all = true;
    for (const auto& l : lines) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-6s max_rel_error=%.3e %s\n", nn::architecture_name(l.architecture).c_str(),
                      l.max_relative_error, l.pass ? "PASS" : "FAIL");
        out << buf;
        all = all && l.pass;
    }
    return all;
}

}  // namespace fedmode::experiment
