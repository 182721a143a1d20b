// spectra.hpp: probe-absorption spectra, ensemble averages and threshold tools.

#pragma once

#include "eitsim/lindblad.hpp"
#include "eitsim/model.hpp"
#include "eitsim/spin.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace eitsim::spectra {

using model::LevelSystemSpec;

/// Gaussian distribution of the shared optical shift Δ.
struct InhomogeneitySpec {
    double fwhm = 0.0;        ///< Δ_I, Hz
    int n_samples = 801;      ///< odd, so Δ = 0 is always sampled
    double truncation = 4.0;  ///< half-width of the sampled range in units of sigma
    bool tiered = true;       ///< dense core |Δ| < 50Γ_e when Δ_I/Γ_e > 100
};

void validate(const InhomogeneitySpec& inhom);

struct DetuningSample {
    double detuning;  ///< Δ, Hz
    double weight;    ///< normalized quadrature weight
};

/// Quadrature nodes over ±truncation·σ. Uniform unless the dense-core rule applies
/// (`linewidth` is the homogeneous excited linewidth Γ_e used to size it).
std::vector<DetuningSample> sample_detunings(const InhomogeneitySpec& inhom, double linewidth);

struct TraceMetadata {
    std::string model_hash;
    std::string mode;  ///< "homogeneous" or "inhomogeneous"
    double control_detuning = 0.0;
    std::optional<InhomogeneitySpec> inhomogeneity;
    int samples_used = 1;
    bool tiered_sampling = false;
};

struct SpectrumTrace {
    std::vector<double> delta;       ///< δ grid, Hz, strictly increasing
    std::vector<double> absorbance;  ///< dimensionless
    TraceMetadata metadata;
};

/// Absorbance vs (B, x) where x = f_probe - f_control is the two-laser difference frequency.
struct MagnetoMap {
    std::vector<double> difference_grid;  ///< Hz
    std::vector<double> b_grid;           ///< tesla
    Eigen::MatrixXd absorbance;           ///< rows follow b_grid, columns difference_grid
};

struct SweepOptions {
    int workers = 1;
    bool check_convergence = false;
};

/// A = -(2/Ω_p,max) Σ_(g,e) Ω_p(g,e) Im ρ(e,g) over probe couplings. Zero when no probe amplitude is set.
double probe_absorption(const lindblad::DensityMatrix& rho, const LevelSystemSpec& spec);

/// Precomputed frame, dissipator and probe couplings of one model; one
/// instance is shared read-only by all workers of a sweep.
class SpectrumEngine {
public:
    explicit SpectrumEngine(const LevelSystemSpec& spec);

    struct Scratch {
        explicit Scratch(std::size_t levels);
        lindblad::SteadyStateSolver solver;
        Eigen::MatrixXcd hamiltonian;
        Eigen::MatrixXcd liouvillian;
    };

    Scratch make_scratch() const { return Scratch(n_); }
    double absorbance(const model::DetuningPoint& point, Scratch& scratch) const;
    std::size_t levels() const noexcept { return n_; }

private:
    struct ProbeTerm {
        Eigen::Index ground;
        Eigen::Index excited;
        double rabi;
    };
    std::size_t n_;
    model::HamiltonianBuilder builder_;
    Eigen::MatrixXcd dissipator_;
    std::vector<ProbeTerm> probe_;
    double probe_scale_ = 0.0;
};

std::vector<double> linspace(double start, double stop, int points);

/// Symmetric grid: `points` values over ±half_width with exact mirror symmetry.
std::vector<double> symmetric_grid(double half_width, int points);

/// 201 points over ±6·max(Γ_e, Ω_c).
std::vector<double> default_delta_grid(const LevelSystemSpec& spec, int points = 201);

SpectrumTrace homogeneous_spectrum(const LevelSystemSpec& spec, double control_detuning,
                                   const std::vector<double>& delta_grid, const SweepOptions& options = {});

/// Absorbance of every Δ sample (rows) at every δ (columns), before weighting.
Eigen::MatrixXd ensemble_components(const LevelSystemSpec& spec, const std::vector<DetuningSample>& samples,
                                    const std::vector<double>& delta_grid, const SweepOptions& options = {});

/// Weighted sum over samples in sample order.
std::vector<double> weighted_sum(const Eigen::MatrixXd& components, const std::vector<DetuningSample>& samples);

/// Throws NonConvergedSampling (when options.check_convergence) if doubling the
/// sample count moves any point by more than 0.5% of the trace maximum.
SpectrumTrace inhomogeneous_spectrum(const LevelSystemSpec& spec, const InhomogeneitySpec& inhom,
                                     const std::vector<double>& delta_grid, const SweepOptions& options = {});

struct ThresholdReport {
    bool satisfied = false;
    double min_omega_c = 0.0;  ///< Hz
    double margin = 0.0;       ///< Ω_c² / (Δ_I γ_g*)
};

/// Strict inequality Ω_c² > Δ_I·γ_g*.
ThresholdReport eit_threshold(double omega_c, double delta_i, double gamma_g);

/// Ω = Ω_ref·sqrt(P/P_ref). Throws on non-positive powers.
double rabi_from_power(double power, double omega_ref, double power_ref);

/// Inverse of rabi_from_power.
double power_for_rabi(double omega, double omega_ref, double power_ref);

struct FieldRange {
    double start = 0.0;  ///< tesla
    double stop = 0.0;
    int points = 1;
};

/// For each B: spin eigenvalues -> level energies of `template_spec` (labels g1..g3, e1..e3)
/// -> inhomogeneous spectrum over the two-laser difference frequency.
MagnetoMap magneto_map(const LevelSystemSpec& template_spec, const spin::SpinModel& ground,
                       const spin::SpinModel& excited, const FieldRange& fields,
                       const std::vector<double>& difference_grid, const InhomogeneitySpec& inhom,
                       const SweepOptions& options = {});

/// Template with level energies replaced from a transition set.
LevelSystemSpec instantiate_levels(const LevelSystemSpec& template_spec, const spin::TransitionSet& levels);

}  // namespace eitsim::spectra
