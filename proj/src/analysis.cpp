#include "eitsim/analysis.hpp"

#include "eitsim/common.hpp"

#include <algorithm>
#include <cmath>

namespace eitsim::analysis {

namespace {

void require_shape(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw Error("trace grid and values differ in length");
    if (x.empty()) throw Error("empty trace");
}

// x where y crosses `level` between indices a and b (y[a] and y[b] straddle it).
double crossing(const std::vector<double>& x, const std::vector<double>& y, std::size_t a, std::size_t b,
                double level) {
    const double ya = y[a];
    const double yb = y[b];
    if (ya == yb) return x[a];
    const double t = (level - ya) / (yb - ya);
    return x[a] + t * (x[b] - x[a]);
}

}  // namespace

std::vector<std::size_t> local_minima(const std::vector<double>& y) {
    std::vector<std::size_t> out;
    for (std::size_t i = 1; i + 1 < y.size(); ++i) {
        if (y[i] < y[i - 1] && y[i] < y[i + 1]) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> local_maxima(const std::vector<double>& y) {
    std::vector<std::size_t> out;
    for (std::size_t i = 1; i + 1 < y.size(); ++i) {
        if (y[i] > y[i - 1] && y[i] > y[i + 1]) out.push_back(i);
    }
    return out;
}

double interpolate(const std::vector<double>& x, const std::vector<double>& y, double at) {
    require_shape(x, y);
    if (at <= x.front()) return y.front();
    if (at >= x.back()) return y.back();
    const auto it = std::upper_bound(x.begin(), x.end(), at);
    const auto hi = static_cast<std::size_t>(it - x.begin());
    const std::size_t lo = hi - 1;
    const double t = (at - x[lo]) / (x[hi] - x[lo]);
    return y[lo] + t * (y[hi] - y[lo]);
}

std::optional<Dip> dip_near(const std::vector<double>& x, const std::vector<double>& y, double target) {
    require_shape(x, y);
    const auto minima = local_minima(y);
    const auto maxima = local_maxima(y);
    std::optional<Dip> best;
    double best_distance = 0.0;
    for (std::size_t i : minima) {
        const auto right = std::upper_bound(maxima.begin(), maxima.end(), i);
        if (right == maxima.end() || right == maxima.begin()) continue;
        const std::size_t r = *right;
        const std::size_t l = *(right - 1);
        const double distance = std::abs(x[i] - target);
        if (best && distance >= best_distance) continue;

        Dip d;
        d.index = i;
        d.position = x[i];
        d.value = y[i];
        d.peak = 0.5 * (y[l] + y[r]);
        d.contrast = d.peak != 0.0 ? (d.peak - d.value) / d.peak : 0.0;
        const double half = d.value + 0.5 * (d.peak - d.value);
        std::size_t a = i;
        while (a > l && y[a - 1] < half) --a;
        std::size_t b = i;
        while (b < r && y[b + 1] < half) ++b;
        const double left_x = a > l ? crossing(x, y, a - 1, a, half) : x[l];
        const double right_x = b < r ? crossing(x, y, b, b + 1, half) : x[r];
        d.fwhm = right_x - left_x;
        best = d;
        best_distance = distance;
    }
    return best;
}

std::vector<Feature> find_features(const std::vector<double>& x, const std::vector<double>& y,
                                   const FeatureOptions& options) {
    require_shape(x, y);
    const double baseline = std::min(y.front(), y.back());
    const double top = *std::max_element(y.begin(), y.end());
    std::vector<Feature> out;
    if (!(top > baseline)) return out;
    const double level = baseline + options.threshold * (top - baseline);

    std::vector<std::pair<std::size_t, std::size_t>> runs;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] <= level) continue;
        std::size_t j = i;
        while (j + 1 < y.size() && y[j + 1] > level) ++j;
        if (!runs.empty() && x[i] - x[runs.back().second] < options.merge_gap) {
            runs.back().second = j;
        } else {
            runs.emplace_back(i, j);
        }
        i = j;
    }

    for (const auto& [first, last] : runs) {
        Feature f;
        f.first = first;
        f.last = last;
        f.peak = first;
        for (std::size_t k = first; k <= last; ++k) {
            if (y[k] > y[f.peak]) f.peak = k;
        }
        f.peak_position = x[f.peak];
        f.height = y[f.peak] - baseline;
        const double half = baseline + 0.5 * f.height;
        std::size_t a = first;
        while (a < f.peak && y[a] < half) ++a;
        std::size_t b = last;
        while (b > f.peak && y[b] < half) --b;
        const double left_x = a > 0 ? crossing(x, y, a - 1, a, half) : x[a];
        const double right_x = b + 1 < y.size() ? crossing(x, y, b, b + 1, half) : x[b];
        f.fwhm = right_x - left_x;
        f.center = 0.5 * (left_x + right_x);

        for (std::size_t k = std::max<std::size_t>(first, 1); k <= last && k + 1 < y.size(); ++k) {
            if (!(y[k] < y[k - 1] && y[k] < y[k + 1])) continue;
            const double left_top = *std::max_element(y.begin() + static_cast<std::ptrdiff_t>(first),
                                                       y.begin() + static_cast<std::ptrdiff_t>(k));
            const double right_top = *std::max_element(y.begin() + static_cast<std::ptrdiff_t>(k + 1),
                                                        y.begin() + static_cast<std::ptrdiff_t>(last + 1));
            if (std::min(left_top, right_top) - y[k] >= options.min_dip_depth * f.height) f.minima.push_back(k);
        }
        out.push_back(std::move(f));
    }
    return out;
}

double symmetry_defect(const std::vector<double>& x, const std::vector<double>& y) {
    require_shape(x, y);
    double scale = 0.0;
    for (double v : y) scale = std::max(scale, std::abs(v));
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        worst = std::max(worst, std::abs(y[i] - interpolate(x, y, -x[i])));
    }
    return scale > 0.0 ? worst / scale : 0.0;
}

}  // namespace eitsim::analysis
