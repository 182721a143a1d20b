#include "eitsim/spin.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace eitsim::spin {

void validate(const SpinModel& m) {
    if (!std::isfinite(m.d) || !std::isfinite(m.e) || !std::isfinite(m.g_factor) || !std::isfinite(m.field) ||
        !std::isfinite(m.angle_deg)) {
        throw InvalidModel("spin model parameters must be finite");
    }
    if (m.field < 0.0) throw InvalidModel("spin model field magnitude must be >= 0");
    if (m.angle_deg < 0.0 || m.angle_deg > 180.0) throw InvalidModel("spin model field angle must lie in [0, 180] degrees");
}

Eigen::Matrix3cd spin_hamiltonian(const SpinModel& m) {
    validate(m);
    using C = std::complex<double>;
    const double r = 1.0 / std::numbers::sqrt2;
    Eigen::Matrix3cd sz = Eigen::Matrix3cd::Zero();
    sz(0, 0) = 1.0;
    sz(2, 2) = -1.0;
    Eigen::Matrix3cd sx = Eigen::Matrix3cd::Zero();
    sx(0, 1) = sx(1, 0) = sx(1, 2) = sx(2, 1) = r;
    Eigen::Matrix3cd sy = Eigen::Matrix3cd::Zero();
    sy(0, 1) = C(0, -r);
    sy(1, 0) = C(0, r);
    sy(1, 2) = C(0, -r);
    sy(2, 1) = C(0, r);

    const double phi = m.angle_deg * std::numbers::pi / 180.0;
    const double zeeman = m.g_factor * kBohrMagnetonHzPerTesla * m.field;
    Eigen::Matrix3cd h = m.d * sz * sz + m.e * (sx * sx - sy * sy) + zeeman * (std::cos(phi) * sz + std::sin(phi) * sx);
    return 0.5 * (h + h.adjoint());
}

namespace {

std::array<double, 3> sorted_eigenvalues(const SpinModel& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3cd> eig(spin_hamiltonian(m), Eigen::EigenvaluesOnly);
    std::array<double, 3> out{eig.eigenvalues()(0), eig.eigenvalues()(1), eig.eigenvalues()(2)};
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TransitionSet level_structure(const SpinModel& ground, const SpinModel& excited) {
    if (ground.field != excited.field || ground.angle_deg != excited.angle_deg) {
        throw InvalidModel("ground and excited spin models must share the magnetic field");
    }
    TransitionSet ts;
    ts.ground = sorted_eigenvalues(ground);
    ts.excited = sorted_eigenvalues(excited);
    return ts;
}

double delta_k(const TransitionSet& ts, const ControlPair& pair) {
    return ts.offset(pair.second.ground, pair.second.excited) - ts.offset(pair.first.ground, pair.first.excited);
}

double find_overlap_angle(const SpinModel& ground, const SpinModel& excited, double field, AngleWindow window,
                          const ControlPair& pair) {
    auto mismatch_at = [&](double angle) {
        SpinModel g = ground;
        SpinModel e = excited;
        g.field = e.field = field;
        g.angle_deg = e.angle_deg = angle;
        return delta_k(level_structure(g, e), pair);
    };

    double lo = window.lower_deg;
    double hi = window.upper_deg;
    double f_lo = mismatch_at(lo);
    const double f_hi = mismatch_at(hi);
    if (f_lo == 0.0) return lo;
    if (f_hi == 0.0) return hi;
    if ((f_lo > 0.0) == (f_hi > 0.0)) {
        throw NoSignChange("Delta_k does not change sign between " + std::to_string(lo) + " and " +
                           std::to_string(hi) + " degrees");
    }

    constexpr double angle_tolerance = 0.01;
    constexpr double mismatch_tolerance = 1e3;
    double mid = 0.5 * (lo + hi);
    for (int iter = 0; iter < 200; ++iter) {
        mid = 0.5 * (lo + hi);
        const double f_mid = mismatch_at(mid);
        if ((hi - lo) < angle_tolerance && std::abs(f_mid) < mismatch_tolerance) break;
        if (f_mid == 0.0) break;
        if ((f_mid > 0.0) == (f_lo > 0.0)) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    return mid;
}

}  // namespace eitsim::spin
