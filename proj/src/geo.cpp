#include "fedmode/geo.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "fedmode/error.hpp"

namespace fedmode::geo {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double channel_value(const MotionFeatures& f, Channel c, std::size_t row) {
    switch (c) {
        case Channel::Distance: return f.distance[row];
        case Channel::Speed: return f.speed[row];
        case Channel::Acceleration: return f.acceleration[row];
        case Channel::Jerk: return f.jerk[row];
    }
    return 0.0;
}

}  // namespace

std::string channel_name(Channel c) {
    switch (c) {
        case Channel::Distance: return "distance";
        case Channel::Speed: return "speed";
        case Channel::Acceleration: return "acceleration";
        case Channel::Jerk: return "jerk";
    }
    return "?";
}

Channel channel_from_name(const std::string& name) {
    for (Channel c : default_channels()) {
        if (channel_name(c) == name) return c;
    }
    throw Error(ErrorCode::InvalidValue, "unknown channel '" + name + "'");
}

std::vector<Channel> default_channels() {
    return {Channel::Distance, Channel::Speed, Channel::Acceleration, Channel::Jerk};
}

void validate(const GpsPoint& p) {
    if (!std::isfinite(p.lat) || !std::isfinite(p.lon) || !std::isfinite(p.t) ||
        p.lat < -90.0 || p.lat > 90.0 || p.lon < -180.0 || p.lon > 180.0) {
        std::ostringstream msg;
        msg << "(" << p.lat << ", " << p.lon << ", t=" << p.t << ")";
        throw Error(ErrorCode::InvalidCoordinate, msg.str());
    }
}

double vincenty_inverse(const GpsPoint& p1, const GpsPoint& p2) {
    validate(p1);
    validate(p2);
    constexpr double a = Wgs84::a;
    constexpr double b = Wgs84::b;
    constexpr double f = Wgs84::f;

    const double L = (p2.lon - p1.lon) * kDeg;
    const double U1 = std::atan((1.0 - f) * std::tan(p1.lat * kDeg));
    const double U2 = std::atan((1.0 - f) * std::tan(p2.lat * kDeg));
    const double sinU1 = std::sin(U1), cosU1 = std::cos(U1);
    const double sinU2 = std::sin(U2), cosU2 = std::cos(U2);

    double lambda = L;
    double sinSigma = 0.0, cosSigma = 0.0, sigma = 0.0;
    double cosSqAlpha = 0.0, cos2SigmaM = 0.0;
    bool converged = false;
    for (int iter = 0; iter < kVincentyMaxIterations; ++iter) {
        const double sinLambda = std::sin(lambda);
        const double cosLambda = std::cos(lambda);
        const double t1 = cosU2 * sinLambda;
        const double t2 = cosU1 * sinU2 - sinU1 * cosU2 * cosLambda;
        sinSigma = std::sqrt(t1 * t1 + t2 * t2);
        if (sinSigma == 0.0) return 0.0;  // coincident
        cosSigma = sinU1 * sinU2 + cosU1 * cosU2 * cosLambda;
        sigma = std::atan2(sinSigma, cosSigma);
        const double sinAlpha = cosU1 * cosU2 * sinLambda / sinSigma;
        cosSqAlpha = 1.0 - sinAlpha * sinAlpha;
        // equatorial line: cosSqAlpha = 0
        cos2SigmaM = cosSqAlpha != 0.0 ? cosSigma - 2.0 * sinU1 * sinU2 / cosSqAlpha : 0.0;
        const double C = f / 16.0 * cosSqAlpha * (4.0 + f * (4.0 - 3.0 * cosSqAlpha));
        const double prev = lambda;
        lambda = L + (1.0 - C) * f * sinAlpha *
                         (sigma + C * sinSigma *
                                      (cos2SigmaM + C * cosSigma * (-1.0 + 2.0 * cos2SigmaM * cos2SigmaM)));
        if (std::abs(lambda - prev) < kVincentyTolerance) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        throw Error(ErrorCode::NonConvergence, "Vincenty inverse did not converge (near-antipodal points)");
    }

    const double uSq = cosSqAlpha * (a * a - b * b) / (b * b);
    const double A = 1.0 + uSq / 16384.0 * (4096.0 + uSq * (-768.0 + uSq * (320.0 - 175.0 * uSq)));
    const double B = uSq / 1024.0 * (256.0 + uSq * (-128.0 + uSq * (74.0 - 47.0 * uSq)));
    const double deltaSigma =
        B * sinSigma *
        (cos2SigmaM + B / 4.0 *
                          (cosSigma * (-1.0 + 2.0 * cos2SigmaM * cos2SigmaM) -
                           B / 6.0 * cos2SigmaM * (-3.0 + 4.0 * sinSigma * sinSigma) *
                               (-3.0 + 4.0 * cos2SigmaM * cos2SigmaM)));
    return b * A * (sigma - deltaSigma);
}

double fallback_great_circle(const GpsPoint& p1, const GpsPoint& p2) {
    validate(p1);
    validate(p2);
    const double phi1 = p1.lat * kDeg, phi2 = p2.lat * kDeg;
    const double dphi = phi2 - phi1;
    const double dlambda = (p2.lon - p1.lon) * kDeg;
    const double h = std::sin(dphi / 2) * std::sin(dphi / 2) +
                     std::cos(phi1) * std::cos(phi2) * std::sin(dlambda / 2) * std::sin(dlambda / 2);
    return 2.0 * kMeanEarthRadius * std::atan2(std::sqrt(h), std::sqrt(std::max(0.0, 1.0 - h)));
}

double geodesic_distance(const GpsPoint& p1, const GpsPoint& p2) {
    try {
        return vincenty_inverse(p1, p2);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NonConvergence) throw;
        return fallback_great_circle(p1, p2);
    }
}

MotionFeatures compute_motion_features(const Trip& trip) {
    const auto& pts = trip.points;
    const std::size_t n = pts.size();
    if (n < 2) throw Error(ErrorCode::TooShort, "trip needs at least 2 points, got " + std::to_string(n));

    std::vector<double> dt(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        dt[i] = pts[i + 1].t - pts[i].t;
        if (!(dt[i] > 0.0)) {
            throw Error(ErrorCode::NonMonotonicTime,
                        "timestamps not strictly increasing at point " + std::to_string(i + 1));
        }
    }

    MotionFeatures f;
    f.distance.assign(n, 0.0);
    f.speed.assign(n, 0.0);
    f.acceleration.assign(n, 0.0);
    f.jerk.assign(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        f.distance[i] = geodesic_distance(pts[i], pts[i + 1]);
        f.speed[i] = f.distance[i] / dt[i];
    }
    f.speed[n - 1] = f.speed[n - 2];
    for (std::size_t i = 0; i + 1 < n; ++i) f.acceleration[i] = (f.speed[i + 1] - f.speed[i]) / dt[i];
    for (std::size_t i = 0; i + 1 < n; ++i) f.jerk[i] = (f.acceleration[i + 1] - f.acceleration[i]) / dt[i];
    return f;
}

std::vector<FeatureSegment> segment_trip(const MotionFeatures& features, std::size_t label,
                                         std::size_t length, std::span<const Channel> channels) {
    if (length == 0) throw Error(ErrorCode::InvalidValue, "segment length must be >= 1");
    const std::vector<Channel> defaults = default_channels();
    if (channels.empty()) channels = defaults;

    std::vector<FeatureSegment> out;
    const std::size_t rows = features.rows();
    for (std::size_t start = 0; start < rows; start += length) {
        FeatureSegment seg;
        seg.channels = channels.size();
        seg.length = length;
        seg.valid_len = std::min(length, rows - start);
        seg.label = label;
        seg.values.assign(seg.channels * length, 0.0);
        for (std::size_t c = 0; c < channels.size(); ++c) {
            for (std::size_t j = 0; j < seg.valid_len; ++j) {
                seg.at(c, j) = channel_value(features, channels[c], start + j);
            }
        }
        out.push_back(std::move(seg));
    }
    return out;
}

Normalizer fit_normalizer(std::span<const FeatureSegment> segments) {
    std::size_t count = 0;
    std::size_t channels = 0;
    for (const auto& s : segments) {
        if (count == 0 && s.valid_len > 0) channels = s.channels;
        if (s.channels != channels && s.valid_len > 0) {
            throw Error(ErrorCode::ChannelMismatch, "segments disagree on channel count");
        }
        count += s.valid_len;
    }
    if (count == 0) throw Error(ErrorCode::EmptyFit, "no non-padded columns to fit");

    Normalizer norm;
    norm.mean.assign(channels, 0.0);
    norm.stddev.assign(channels, 0.0);
    for (const auto& s : segments)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t j = 0; j < s.valid_len; ++j) norm.mean[c] += s.at(c, j);
    for (auto& m : norm.mean) m /= static_cast<double>(count);
    for (const auto& s : segments)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t j = 0; j < s.valid_len; ++j) {
                const double d = s.at(c, j) - norm.mean[c];
                norm.stddev[c] += d * d;
            }
    for (auto& sd : norm.stddev) sd = std::max(std::sqrt(sd / static_cast<double>(count)), kStdFloor);
    return norm;
}

FeatureSegment apply_normalizer(const Normalizer& norm, const FeatureSegment& seg) {
    if (norm.mean.size() != seg.channels || norm.stddev.size() != seg.channels) {
        throw Error(ErrorCode::ChannelMismatch, "normalizer has " + std::to_string(norm.mean.size()) +
                                                    " channels, segment has " + std::to_string(seg.channels));
    }
    FeatureSegment out = seg;
    for (std::size_t c = 0; c < seg.channels; ++c)
        for (std::size_t j = 0; j < seg.valid_len; ++j)
            out.at(c, j) = (seg.at(c, j) - norm.mean[c]) / norm.stddev[c];
    return out;
}

std::vector<FeatureSegment> apply_normalizer(const Normalizer& norm, std::span<const FeatureSegment> segs) {
    std::vector<FeatureSegment> out;
    out.reserve(segs.size());
    for (const auto& s : segs) out.push_back(apply_normalizer(norm, s));
    return out;
}

void write_trips_csv(std::ostream& out, std::span<const Trip> trips) {
    out << "trip_id,lat,lon,timestamp,mode\n";
    char buf[160];
    for (std::size_t id = 0; id < trips.size(); ++id) {
        for (const auto& p : trips[id].points) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,", id, p.lat, p.lon, p.t);
            out << buf << trips[id].mode.name << '\n';
        }
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_double(const std::string& s, std::size_t line_no, const char* what) {
    double v = 0.0;
    const auto* first = s.data();
    const auto* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        throw Error(ErrorCode::ParseError,
                    "line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
    }
    return v;
}

}  // namespace

std::vector<Trip> read_trips_csv(std::istream& in, std::span<const std::string> class_names) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "empty trip CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "trip_id,lat,lon,timestamp,mode") {
        throw Error(ErrorCode::ParseError, "unexpected CSV header '" + line + "'");
    }

    std::vector<Trip> trips;
    std::unordered_map<std::string, std::size_t> index_of;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 5) {
            throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected 5 fields");
        }
        GpsPoint p{parse_double(fields[1], line_no, "lat"), parse_double(fields[2], line_no, "lon"),
                   parse_double(fields[3], line_no, "timestamp")};
        validate(p);
        const auto& mode = fields[4];
        auto cls = std::find(class_names.begin(), class_names.end(), mode);
        if (cls == class_names.end()) {
            throw Error(ErrorCode::UnknownMode, "line " + std::to_string(line_no) + ": mode '" + mode + "'");
        }
        auto [it, inserted] = index_of.try_emplace(fields[0], trips.size());
        if (inserted) {
            trips.push_back(Trip{{}, ModeLabel{static_cast<std::size_t>(cls - class_names.begin()), mode}});
        } else if (trips[it->second].mode.name != mode) {
            throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": trip changes mode");
        }
        trips[it->second].points.push_back(p);
    }
    return trips;
}

}  // namespace fedmode::geo
