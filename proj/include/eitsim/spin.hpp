// spin.hpp: spin-1 zero-field-splitting + Zeeman Hamiltonians and the level
// structure they imply for a ground/excited manifold pair.

#pragma once

#include "eitsim/common.hpp"

#include <Eigen/Dense>

#include <array>

namespace eitsim::spin {

struct SpinModel {
    double d = 0.0;         ///< axial zero-field splitting D, Hz
    double e = 0.0;         ///< transverse splitting E, Hz
    double g_factor = 2.0;
    double field = 0.0;     ///< |B|, tesla
    double angle_deg = 0.0; ///< polar angle of B from the symmetry axis
};

void validate(const SpinModel& m);

/// H = D Sz² + E (Sx² - Sy²) + g μB |B| (cos φ Sz + sin φ Sx), basis m = +1, 0, -1.
Eigen::Matrix3cd spin_hamiltonian(const SpinModel& m);

/// Eigenvalues of both manifolds, labelled by ascending energy (g1..g3, e1..e3).
struct TransitionSet {
    std::array<double, 3> ground{};
    std::array<double, 3> excited{};

    /// excited[j] - ground[i], Hz relative to the zero-phonon line.
    double offset(int ground_index, int excited_index) const {
        return excited[static_cast<std::size_t>(excited_index)] - ground[static_cast<std::size_t>(ground_index)];
    }
};

TransitionSet level_structure(const SpinModel& ground, const SpinModel& excited);

/// One optical transition by zero-based level indices.
struct Transition {
    int ground = 0;
    int excited = 0;
};

/// The two transitions a single control laser is meant to drive.
struct ControlPair {
    Transition first{1, 1};   ///< g2 -> e2
    Transition second{2, 2};  ///< g3 -> e3
};

/// Δ_k = offset(second) - offset(first).
double delta_k(const TransitionSet& ts, const ControlPair& pair = {});

struct AngleWindow {
    double lower_deg = 0.0;
    double upper_deg = 90.0;
};

/// Field angle in the window where Δ_k changes sign, by bisection until the
/// bracket is below 0.01° and |Δ_k| < 1 kHz. Throws NoSignChange.
double find_overlap_angle(const SpinModel& ground, const SpinModel& excited, double field, AngleWindow window,
                          const ControlPair& pair = {});

}  // namespace eitsim::spin
