#include "fedmode/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "fedmode/error.hpp"
#include "json.hpp"

namespace fedmode::nn {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "fedmode-checkpoint";
constexpr int kVersion = 1;

json spec_to_json(const ModelSpec& s) {
    return {{"architecture", architecture_name(s.architecture)},
            {"channels", s.channels},
            {"length", s.length},
            {"hidden", s.hidden},
            {"classes", s.classes},
            {"cnn_filters", s.cnn_filters},
            {"cnn_kernel", s.cnn_kernel},
            {"cnn_stride", s.cnn_stride},
            {"dropout", s.dropout}};
}

ModelSpec spec_from_json(const json& j) {
    ModelSpec s;
    s.architecture = architecture_from_name(j.at("architecture").get<std::string>());
    s.channels = j.at("channels").get<std::size_t>();
    s.length = j.at("length").get<std::size_t>();
    s.hidden = j.at("hidden").get<std::size_t>();
    s.classes = j.at("classes").get<std::size_t>();
    s.cnn_filters = j.at("cnn_filters").get<std::size_t>();
    s.cnn_kernel = j.at("cnn_kernel").get<std::size_t>();
    s.cnn_stride = j.at("cnn_stride").get<std::size_t>();
    s.dropout = j.at("dropout").get<double>();
    return s;
}

void put_le64(std::string& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_le64(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace

void write_checkpoint(std::ostream& out, const ModelSpec& spec, const ParamSet& params) {
    json tensors = json::array();
    std::string blob;
    blob.reserve(params.scalar_count() * 8);
    for (const auto& p : params) {
        tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", blob.size()}});
        for (double v : p.value.data()) put_le64(blob, v);
    }
    json manifest = {{"format", kFormat},
                     {"version", kVersion},
                     {"spec", spec_to_json(spec)},
                     {"tensors", tensors},
                     {"blob_bytes", blob.size()}};
    out << manifest.dump() << '\n';
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw Error(ErrorCode::Io, "failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "checkpoint: missing manifest");
    json manifest;
    try {
        manifest = json::parse(line);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("checkpoint manifest: ") + e.what());
    }
    try {
        if (manifest.at("format") != kFormat || manifest.at("version") != kVersion) {
            throw Error(ErrorCode::ParseError, "checkpoint: unsupported format or version");
        }
        const auto blob_bytes = manifest.at("blob_bytes").get<std::size_t>();
        std::string blob(blob_bytes, '\0');
        in.read(blob.data(), static_cast<std::streamsize>(blob_bytes));
        if (static_cast<std::size_t>(in.gcount()) != blob_bytes) {
            throw Error(ErrorCode::ParseError, "checkpoint: truncated blob");
        }
        const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

        Checkpoint ck;
        ck.spec = spec_from_json(manifest.at("spec"));
        for (const auto& t : manifest.at("tensors")) {
            Shape shape = t.at("shape").get<Shape>();
            const auto offset = t.at("offset").get<std::size_t>();
            const std::size_t n = shape_size(shape);
            if (offset % 8 != 0 || offset + n * 8 > blob_bytes) {
                throw Error(ErrorCode::ParseError, "checkpoint: tensor outside blob");
            }
            std::vector<double> data(n);
            for (std::size_t i = 0; i < n; ++i) data[i] = get_le64(bytes + offset + 8 * i);
            ck.params.add(t.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
        }
        return ck;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("checkpoint manifest: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const ParamSet& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string());
    write_checkpoint(out, spec, params);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    return read_checkpoint(in);
}

}  // namespace fedmode::nn
