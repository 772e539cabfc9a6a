#pragma once

// GPS trip kinematics: geodesic distance, per-point motion features,
// fixed-length segmentation and channel normalization.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fedmode::geo {

struct Wgs84 {
    static constexpr double a = 6378137.0;
    static constexpr double f = 1.0 / 298.257223563;
    static constexpr double b = a * (1.0 - f);
};

inline constexpr double kMeanEarthRadius = 6371008.8;
inline constexpr double kStdFloor = 1e-8;
inline constexpr int kVincentyMaxIterations = 200;
inline constexpr double kVincentyTolerance = 1e-12;

struct GpsPoint {
    double lat = 0.0;  // degrees
    double lon = 0.0;  // degrees
    double t = 0.0;    // seconds since epoch

    bool operator==(const GpsPoint&) const = default;
};

struct ModeLabel {
    std::size_t index = 0;
    std::string name;

    bool operator==(const ModeLabel&) const = default;
};

struct Trip {
    std::vector<GpsPoint> points;
    ModeLabel mode;

    bool operator==(const Trip&) const = default;
};

/// One row per GPS point. Row i (0-based) holds the distance to point i+1,
/// the speed over that step and its forward differences.
struct MotionFeatures {
    std::vector<double> distance;
    std::vector<double> speed;
    std::vector<double> acceleration;
    std::vector<double> jerk;

    std::size_t rows() const { return speed.size(); }
};

enum class Channel { Distance, Speed, Acceleration, Jerk };

std::string channel_name(Channel c);
Channel channel_from_name(const std::string& name);
std::vector<Channel> default_channels();

/// Fixed-length C x L window, row-major by channel. Columns at or beyond
/// `valid_len` are padding and hold exact zeros.
struct FeatureSegment {
    std::size_t channels = 0;
    std::size_t length = 0;
    std::size_t valid_len = 0;
    std::size_t label = 0;
    std::vector<double> values;

    double at(std::size_t c, std::size_t col) const { return values[c * length + col]; }
    double& at(std::size_t c, std::size_t col) { return values[c * length + col]; }

    bool operator==(const FeatureSegment&) const = default;
};

struct Normalizer {
    std::vector<double> mean;
    std::vector<double> stddev;

    bool operator==(const Normalizer&) const = default;
};

void validate(const GpsPoint& p);

/// Vincenty inverse solution on WGS84. Throws NonConvergence when the
/// lambda iteration does not settle within the iteration cap.
double vincenty_inverse(const GpsPoint& p1, const GpsPoint& p2);

/// Haversine distance on the mean-radius sphere.
double fallback_great_circle(const GpsPoint& p1, const GpsPoint& p2);

/// Vincenty, or the great-circle distance when Vincenty does not converge.
double geodesic_distance(const GpsPoint& p1, const GpsPoint& p2);

MotionFeatures compute_motion_features(const Trip& trip);

std::vector<FeatureSegment> segment_trip(const MotionFeatures& features, std::size_t label,
                                         std::size_t length = 10,
                                         std::span<const Channel> channels = {});

Normalizer fit_normalizer(std::span<const FeatureSegment> segments);
FeatureSegment apply_normalizer(const Normalizer& norm, const FeatureSegment& seg);
std::vector<FeatureSegment> apply_normalizer(const Normalizer& norm,
                                             std::span<const FeatureSegment> segs);

// CSV trip format: trip_id,lat,lon,timestamp,mode
void write_trips_csv(std::ostream& out, std::span<const Trip> trips);
std::vector<Trip> read_trips_csv(std::istream& in, std::span<const std::string> class_names);

}  // namespace fedmode::geo
