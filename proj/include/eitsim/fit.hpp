// fit.hpp: bounded least-squares fits of level-system parameters to spectra.
//
// model_t(δ) = scale_t · A(δ; θ_t) + offset_t, with A the inhomogeneous
// absorbance of the template after the free parameters θ_t are applied.

#pragma once

#include "eitsim/spectra.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace eitsim::fit {

struct ObservedTrace {
    std::string name;
    std::vector<double> delta;   ///< Hz, strictly increasing
    std::vector<double> signal;  ///< arbitrary units
    std::optional<std::vector<double>> sigma;
    std::optional<double> power;        ///< W
    std::optional<double> temperature;  ///< K
};

void validate(const ObservedTrace& trace);

/// What a free parameter controls in the template. Paths:
///   excited_decay      total radiative rate of every excited level (branching kept)
///   excited_dephasing  every dephasing entry on an excited level
///   ground_dephasing   every dephasing entry on a ground level
///   ground_relaxation  every ground->ground channel
///   control_rabi       largest control amplitude (relative weights kept)
///   probe_rabi         largest probe amplitude
///   energy:<label>     energy of one level
///   inhomogeneous_fwhm Δ_I
///   excited_width      Γ_e + γ_e with γ_e = split · width
struct FreeParameter {
    std::string path;
    double lower = 0.0;
    double upper = 0.0;
    double initial = 0.0;
    bool shared = true;         ///< one value for all traces, else one per trace
    bool power_scaled = false;  ///< value is at power_reference; trace value × sqrt(P / P_ref)
    double split = 0.0;         ///< excited_width only
};

struct FitOptions {
    int max_iterations = 200;
    double step_tolerance = 1e-10;  ///< relative
    double gradient_tolerance = 1e-12;
    int workers = 1;
    bool merge_degenerate = true;   ///< fit Γ_e + γ_e as one width when flagged
};

struct FitProblem {
    model::LevelSystemSpec model;
    spectra::InhomogeneitySpec inhomogeneity;
    std::vector<FreeParameter> parameters;
    double power_reference = 1e-3;  ///< W
    /// Applied to every power_scaled amplitude even when it is not free.
    std::vector<std::string> power_scaled_fixed;
    FitOptions options;
};

void validate(const FitProblem& problem);

/// Spec and inhomogeneity for one trace at the given per-trace parameter values
/// (one value per FreeParameter, before power scaling).
struct TraceModel {
    model::LevelSystemSpec spec;
    spectra::InhomogeneitySpec inhomogeneity;
};
TraceModel apply_parameters(const FitProblem& problem, const std::vector<double>& values,
                            std::optional<double> power);

struct ParameterEstimate {
    std::string name;  ///< path, with [t] appended for per-trace values
    std::string path;
    int trace = -1;    ///< -1 when shared
    double value = 0.0;
    double uncertainty = 0.0;
    bool at_bound = false;
    bool identifiable = true;
};

struct CorrelatedPair {
    std::string first;
    std::string second;
    double correlation = 0.0;
};

struct IdentifiabilityReport {
    std::vector<std::string> names;
    std::vector<double> sensitivity;  ///< |∂r/∂ln θ|₂ per column (absolute step for zero values)
    Eigen::MatrixXd correlation;
    std::vector<CorrelatedPair> degenerate;  ///< |correlation| > 0.99
    std::vector<std::string> unidentifiable;  ///< zero sensitivity or null-space columns
    bool flags(const std::string& a, const std::string& b) const;
};

IdentifiabilityReport identifiability_report(const FitProblem& problem, const std::vector<ObservedTrace>& traces);

struct FitResult {
    std::vector<ParameterEstimate> estimates;
    std::vector<double> scale;
    std::vector<double> offset;
    std::vector<double> scale_uncertainty;
    std::vector<double> offset_uncertainty;
    std::vector<std::string> covariance_labels;
    Eigen::MatrixXd covariance;
    double residual_norm = 0.0;  ///< sqrt of the weighted sum of squares
    double chi2 = 0.0;
    double reduced_chi2 = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
    std::string status;
    std::vector<std::string> warnings;
    std::optional<std::string> combined_width;  ///< set when Γ_e and γ_e were fitted as one width
    std::vector<std::vector<double>> model;      ///< per trace at the optimum
    std::vector<std::vector<double>> residuals;  ///< signal - model

    const ParameterEstimate* find(const std::string& name) const;
};

FitResult fit(const std::vector<ObservedTrace>& traces, const FitProblem& problem);

/// Forward model at per-trace parameter values, with unit scale and zero offset.
std::vector<std::vector<double>> forward(const FitProblem& problem, const std::vector<ObservedTrace>& traces,
                                         const std::vector<std::vector<double>>& values);

/// Synthetic observations: forward model at `truth` (truth[t] holds one value per
/// FreeParameter for trace t) plus Gaussian noise of `noise_fraction` × max|signal|.
std::vector<ObservedTrace> synthesize(const FitProblem& problem, std::vector<ObservedTrace> templates,
                                      const std::vector<std::vector<double>>& truth, double noise_fraction,
                                      std::uint64_t seed);

}  // namespace eitsim::fit
