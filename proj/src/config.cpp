#include "fedmode/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "fedmode/error.hpp"
#include "json.hpp"

namespace fedmode::config {

namespace {

using nlohmann::json;

// Reads keys from one JSON object, remembering which ones were consumed so
// leftovers can be reported as unknown.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw Error(ErrorCode::InvalidValue, name_of("") + " must be a JSON object");
    }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
            if (!it->is_number_integer() || (std::is_unsigned_v<T> && !it->is_number_unsigned())) {
                throw Error(ErrorCode::InvalidValue, name_of(key) + " must be a non-negative integer");
            }
        }
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw Error(ErrorCode::InvalidValue, name_of(key) + " has the wrong type");
        }
    }

    template <typename T, typename Convert>
    void read_as(const char* key, T& out, Convert convert) {
        std::string text;
        read(key, text);
        if (j_.contains(key)) {
            try {
                out = convert(text);
            } catch (const Error& e) {
                throw Error(ErrorCode::InvalidValue, name_of(key) + ": " + e.what());
            }
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void reject_unknown() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) throw Error(ErrorCode::UnknownKey, "unknown key '" + name_of(key) + "'");
        }
    }

    std::string name_of(const std::string& key) const {
        if (path_.empty()) return key.empty() ? "config" : key;
        return key.empty() ? path_ : path_ + "." + key;
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw Error(ErrorCode::InvalidValue, key + " " + what);
}

}  // namespace

void validate(const ExperimentConfig& c) {
    const auto& d = c.dataset;
    require(d.trips_per_mode >= 1, "dataset.trips_per_mode", "must be >= 1");
    require(d.points_per_trip >= 2, "dataset.points_per_trip", "must be >= 2");
    require(!d.channels.empty(), "dataset.channels", "must not be empty");
    require(d.segment_length >= 1, "dataset.segment_length", "must be >= 1");
    require(d.class_names.size() >= 2, "dataset.class_names", "needs at least 2 classes");
    require(std::set<std::string>(d.class_names.begin(), d.class_names.end()).size() == d.class_names.size(),
            "dataset.class_names", "must be unique");
    require(std::set<geo::Channel>(d.channels.begin(), d.channels.end()).size() == d.channels.size(),
            "dataset.channels", "must be unique");

    const auto& f = c.federation;
    require(f.n_workers >= 1, "federation.workers", "must be >= 1");
    require(f.rounds >= 1, "federation.rounds", "must be >= 1");
    require(f.local_batch >= 1, "federation.local_batch", "must be >= 1");
    require(f.worker_lr >= 0.0, "federation.worker_lr", "must be >= 0");
    require(f.chief_lr >= 0.0, "federation.chief_lr", "must be >= 0");
    require(f.client_fraction > 0.0 && f.client_fraction <= 1.0, "federation.client_fraction", "must be in (0, 1]");
    require(f.modes_per_worker >= 1 && f.modes_per_worker <= d.class_names.size(), "federation.modes_per_worker",
            "must be in [1, number of classes]");
    require(f.n_workers * f.modes_per_worker >= d.class_names.size(), "federation.modes_per_worker",
            "times workers must cover every class");
    require(f.assignment == fed::Assignment::Replicated || f.n_workers >= 3, "federation.architecture_assignment",
            "partitioned needs at least 3 workers");

    const auto& m = c.model;
    require(m.hidden >= 1, "model.hidden", "must be >= 1");
    require(m.cnn_filters >= 1, "model.cnn_filters", "must be >= 1");
    require(m.cnn_kernel >= 1, "model.cnn_kernel", "must be >= 1");
    require(2 * (m.cnn_kernel - 1) < d.segment_length, "model.cnn_kernel", "too long for two conv layers");
    require(m.dropout >= 0.0 && m.dropout < 1.0, "model.dropout", "must be in [0, 1)");
}

ExperimentConfig parse_config(std::string_view json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ParseError, e.what());
    }

    ExperimentConfig c;
    Section top(root, "");
    top.read("seed", c.seed);
    top.read("output_dir", c.output_dir);

    if (const json* j = top.child("dataset")) {
        Section s(*j, "dataset");
        auto& d = c.dataset;
        s.read("trips_per_mode", d.trips_per_mode);
        s.read("points_per_trip", d.points_per_trip);
        std::vector<std::string> channel_names;
        s.read("channels", channel_names);
        if (j->contains("channels")) {
            d.channels.clear();
            for (const auto& name : channel_names) {
                try {
                    d.channels.push_back(geo::channel_from_name(name));
                } catch (const Error& e) {
                    throw Error(ErrorCode::InvalidValue, std::string("dataset.channels: ") + e.what());
                }
            }
        }
        s.read("segment_length", d.segment_length);
        s.read("class_names", d.class_names);
        s.reject_unknown();
    }
    if (const json* j = top.child("federation")) {
        Section s(*j, "federation");
        auto& f = c.federation;
        s.read("workers", f.n_workers);
        s.read("rounds", f.rounds);
        s.read("local_epochs", f.local_epochs);
        s.read("local_batch", f.local_batch);
        s.read("worker_lr", f.worker_lr);
        s.read("chief_lr", f.chief_lr);
        s.read_as("aggregation", f.aggregation, fed::aggregation_from_name);
        s.read_as("architecture_assignment", f.assignment, fed::assignment_from_name);
        s.read("client_fraction", f.client_fraction);
        s.read("modes_per_worker", f.modes_per_worker);
        s.read("pretrain_on_proxy", f.pretrain_on_proxy);
        s.read("pretrain_epochs", f.pretrain_epochs);
        s.read("checkpoint_interval", f.checkpoint_interval);
        s.read("threads", f.threads);
        s.reject_unknown();
    }
    if (const json* j = top.child("model")) {
        Section s(*j, "model");
        s.read("hidden", c.model.hidden);
        s.read("cnn_filters", c.model.cnn_filters);
        s.read("cnn_kernel", c.model.cnn_kernel);
        s.read("dropout", c.model.dropout);
        s.reject_unknown();
    }
    if (const json* j = top.child("ensemble")) {
        Section s(*j, "ensemble");
        s.read_as("combiner", c.ensemble.combiner, ensemble::combiner_from_name);
        s.read("meta_epochs", c.ensemble.meta_epochs);
        s.reject_unknown();
    }
    top.reject_unknown();
    validate(c);
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ParseError, "cannot read config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string dump_config(const ExperimentConfig& c) {
    json channels = json::array();
    for (auto ch : c.dataset.channels) channels.push_back(geo::channel_name(ch));
    const auto& f = c.federation;
    json j = {
        {"seed", c.seed},
        {"output_dir", c.output_dir},
        {"dataset",
         {{"trips_per_mode", c.dataset.trips_per_mode},
          {"points_per_trip", c.dataset.points_per_trip},
          {"channels", channels},
          {"segment_length", c.dataset.segment_length},
          {"class_names", c.dataset.class_names}}},
        {"federation",
         {{"workers", f.n_workers},
          {"rounds", f.rounds},
          {"local_epochs", f.local_epochs},
          {"local_batch", f.local_batch},
          {"worker_lr", f.worker_lr},
          {"chief_lr", f.chief_lr},
          {"aggregation", fed::aggregation_name(f.aggregation)},
          {"architecture_assignment", fed::assignment_name(f.assignment)},
          {"client_fraction", f.client_fraction},
          {"modes_per_worker", f.modes_per_worker},
          {"pretrain_on_proxy", f.pretrain_on_proxy},
          {"pretrain_epochs", f.pretrain_epochs},
          {"checkpoint_interval", f.checkpoint_interval},
          {"threads", f.threads}}},
        {"model",
         {{"hidden", c.model.hidden},
          {"cnn_filters", c.model.cnn_filters},
          {"cnn_kernel", c.model.cnn_kernel},
          {"dropout", c.model.dropout}}},
        {"ensemble", {{"combiner", ensemble::combiner_name(c.ensemble.combiner)}, {"meta_epochs", c.ensemble.meta_epochs}}},
    };
    return j.dump(2) + "\n";
}

}  // namespace fedmode::config
