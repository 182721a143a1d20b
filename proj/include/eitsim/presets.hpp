// presets.hpp: reference level systems used by the figure presets and tests.

#pragma once

#include "eitsim/model.hpp"

#include <vector>

namespace eitsim::presets {

/// Decay and drive parameters shared by all reference systems, Hz.
/// Defaults are the three-level parameter table (Gamma_e = 1e7, Gamma_g = 1e4,
/// gamma_g* = 1e5, Omega_c = 3e6, Omega_p = 1e4, gamma_e negligible).
struct RateParams {
    double excited_decay = 1e7;       ///< Gamma_e, total out of each excited level
    double excited_dephasing = 0.0;   ///< gamma_e
    double ground_relaxation = 1e4;   ///< Gamma_g, per ordered ground pair
    double ground_dephasing = 1e5;    ///< gamma_g*
    double control_rabi = 3e6;        ///< Omega_c
    double probe_rabi = 1e4;          ///< Omega_p
};

/// Rate parameters from the double-EIT fits: Gamma_e = 2.7 MHz,
/// gamma_g* = 0.23 MHz, Omega_c = 7.4 MHz (1 mW).
RateParams double_eit_rates();

/// Lambda of g1, g2 and e2: probe g1-e2, control g2-e2. Gamma_e is split
/// equally between the two ground levels; gamma_g* sits on g2 only.
model::LevelSystemSpec lambda_three_level(const RateParams& rates = {}, double ground_splitting = 1e9);

/// Five levels g1, g2, g3, e2, e3: probe g1-e2, control g2-e2 and g3-e3.
/// `mismatch` is Delta_k = offset(g3,e3) - offset(g2,e2).
model::LevelSystemSpec asymmetric_five_level(const RateParams& rates, double mismatch,
                                             double upper_ground_splitting = 500e6);

/// Relative dipole weights of the six couplings of the double-EIT system.
struct DoubleEitWeights {
    double probe_e2 = 1.0;
    double probe_e3 = 1.0;
    double control_g2_e2 = 1.0;
    double control_g2_e3 = 1.0;
    double control_g3_e2 = 1.0;
    double control_g3_e3 = 1.0;
};

/// Five levels with probe g1-e2, g1-e3 and control g2-e2, g2-e3, g3-e2, g3-e3.
/// E(e3) - E(e2) = `excited_splitting` (Delta_54); the ground splitting
/// E(g3) - E(g2) follows from Delta_k = Delta_54 - (E(g3) - E(g2)).
/// Second two-photon resonance sits at delta = Delta_k - Delta_54.
model::LevelSystemSpec double_eit_five_level(const RateParams& rates, double mismatch, double excited_splitting,
                                             const DoubleEitWeights& weights = {});

}  // namespace eitsim::presets
