#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "fedmode/geo.hpp"

namespace fedmode::testsupport {

// Segment whose channel c holds base + c at every valid column.
inline geo::FeatureSegment constant_segment(std::size_t channels, std::size_t length, std::size_t valid_len,
                                            std::size_t label, double base) {
    geo::FeatureSegment s;
    s.channels = channels;
    s.length = length;
    s.valid_len = valid_len;
    s.label = label;
    s.values.assign(channels * length, 0.0);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t col = 0; col < valid_len; ++col) s.at(c, col) = base + static_cast<double>(c);
    return s;
}

// Random full-length segments with labels cycling through [0, classes).
// With `informative` the values are shifted by the label.
inline std::vector<geo::FeatureSegment> random_segments(std::size_t n, std::size_t channels, std::size_t length,
                                                        std::size_t classes, std::uint64_t seed,
                                                        bool informative = true) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<geo::FeatureSegment> out;
    for (std::size_t i = 0; i < n; ++i) {
        geo::FeatureSegment s;
        s.channels = channels;
        s.length = length;
        s.valid_len = length;
        s.label = i % classes;
        s.values.resize(channels * length);
        for (auto& v : s.values) v = noise(rng) + (informative ? static_cast<double>(s.label) : 0.0);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace fedmode::testsupport
