// analysis.hpp: lineshape measurements on sampled traces: extrema, dips, features.

#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace eitsim::analysis {

/// Interior indices where y is strictly below (above) both neighbours.
std::vector<std::size_t> local_minima(const std::vector<double>& y);
std::vector<std::size_t> local_maxima(const std::vector<double>& y);

/// Linear interpolation; clamps outside the grid.
double interpolate(const std::vector<double>& x, const std::vector<double>& y, double at);

/// EIT dip measured against its two flanking maxima.
struct Dip {
    std::size_t index = 0;
    double position = 0.0;
    double value = 0.0;
    double peak = 0.0;      ///< mean of the flanking maxima
    double contrast = 0.0;  ///< (peak - value) / peak
    double fwhm = 0.0;      ///< full width at half depth
};

/// Local minimum nearest to `target` that has a local maximum on each side.
std::optional<Dip> dip_near(const std::vector<double>& x, const std::vector<double>& y, double target);

/// Region rising above baseline + threshold·(max - baseline); baseline is the
/// lower of the two end values of the trace.
struct Feature {
    std::size_t first = 0;
    std::size_t last = 0;
    std::size_t peak = 0;
    double peak_position = 0.0;
    double center = 0.0;  ///< midpoint of the outer half-height crossings
    double height = 0.0;  ///< above baseline
    double fwhm = 0.0;    ///< outer width at half height
    std::vector<std::size_t> minima;  ///< interior local minima at least min_dip_depth deep
};

struct FeatureOptions {
    double threshold = 0.5;
    double merge_gap = 0.0;      ///< runs separated by narrower gaps (x units) form one feature
    double min_dip_depth = 0.0;  ///< fraction of the feature height
};

std::vector<Feature> find_features(const std::vector<double>& x, const std::vector<double>& y,
                                   const FeatureOptions& options = {});

/// max |y(x) - y(-x)| / max |y| over a grid symmetric about zero.
double symmetry_defect(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace eitsim::analysis
