// lindblad.hpp: Liouvillian construction, steady states and time evolution.
//
// Superoperators act on the column-stacked density matrix:
//   vec(rho)[row + col * N] = rho(row, col).
// Rates are frequencies in Hz; the generator carries the 2*pi.

#pragma once

#include "eitsim/model.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace eitsim::lindblad {

using model::DecayChannel;
using model::Dephasing;
using model::DetuningPoint;
using model::Hamiltonian;

struct DensityMatrix {
    std::vector<std::string> labels;
    Eigen::MatrixXcd matrix;

    std::complex<double> operator()(std::size_t i, std::size_t j) const {
        return matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
};

/// Which DensityMatrix invariants hold, with the measured defects.
struct PhysicalityReport {
    double hermiticity_defect = 0.0;  ///< max |rho - rho^dagger|
    double trace_defect = 0.0;        ///< |tr rho - 1|
    double min_eigenvalue = 0.0;
    bool ok = false;
};

PhysicalityReport check_physical(const DensityMatrix& rho, double tolerance = 1e-10);

struct Liouvillian {
    std::vector<std::string> labels;
    Eigen::MatrixXcd matrix;  ///< N^2 x N^2, units of rad/s
    std::optional<DetuningPoint> point;

    std::size_t levels() const noexcept { return labels.size(); }
};

/// Dissipative part only. Decay (from -> to, rate) uses L = sqrt(2*pi*rate)|to><from|;
/// dephasing (l, rate) uses L = sqrt(2*pi*2*rate)|l><l|.
Eigen::MatrixXcd dissipator(const std::vector<std::string>& labels, const std::vector<DecayChannel>& decays,
                            const std::vector<Dephasing>& dephasings);

/// Adds -i*2*pi*(I (x) H - H^T (x) I) to `superop`, visiting only nonzero entries of H.
void add_commutator(Eigen::MatrixXcd& superop, const Eigen::MatrixXcd& hamiltonian);

Liouvillian build_liouvillian(const Hamiltonian& h, const std::vector<DecayChannel>& decays,
                              const std::vector<Dephasing>& dephasings);

/// Row-sum infinity norm.
double infinity_norm(const Eigen::MatrixXcd& m);

/// Reusable bordered-system solver; holds its own LU workspace so a sweep
/// allocates once per worker.
class SteadyStateSolver {
public:
    explicit SteadyStateSolver(std::size_t levels);

    /// Returns the column-stacked steady state. Throws DegenerateSteadyState.
    const Eigen::VectorXcd& solve(const Eigen::MatrixXcd& liouvillian);

    /// Column-stacked state reshaped, symmetrized and trace-normalized.
    Eigen::MatrixXcd density() const;

    double last_relative_residual() const noexcept { return last_relative_residual_; }

private:
    const Eigen::VectorXcd& solve_by_null_space(const Eigen::MatrixXcd& liouvillian);

    std::size_t n_;
    Eigen::MatrixXcd bordered_;
    Eigen::VectorXcd rhs_;
    Eigen::VectorXcd x_;
    Eigen::VectorXcd residual_;
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu_;
    double last_relative_residual_ = 0.0;
};

/// Unique null vector of L with unit trace.
DensityMatrix steady_state(const Liouvillian& l);

/// Number of eigenvalues with |Re| below `tolerance * ||L||_inf` and |Im| below the same.
int count_zero_modes(const Liouvillian& l, double tolerance = 1e-9);

struct EvolveOptions {
    double relative_tolerance = 1e-10;
    double absolute_tolerance = 1e-12;
    long long max_steps = 400'000'000;
};

struct EvolveStats {
    long long accepted = 0;
    long long rejected = 0;
};

/// Adaptive Dormand-Prince 5(4) integration of d vec(rho)/dt = L vec(rho).
DensityMatrix evolve(const DensityMatrix& rho0, const Liouvillian& l, double seconds,
                     const EvolveOptions& options = {}, EvolveStats* stats = nullptr);

}  // namespace eitsim::lindblad
