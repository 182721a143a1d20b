#include "eitsim/lindblad.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace eitsim::lindblad {

namespace {

using Index = Eigen::Index;
constexpr std::complex<double> kI{0.0, 1.0};

Index vec_index(Index row, Index col, Index n) { return row + col * n; }

std::size_t resolve(const std::vector<std::string>& labels, const std::string& label) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == label) return i;
    }
    throw InvalidModel("unknown level label '" + label + "'");
}

Eigen::MatrixXcd unvec(const Eigen::VectorXcd& v, Index n) {
    Eigen::MatrixXcd m(n, n);
    for (Index c = 0; c < n; ++c) {
        for (Index r = 0; r < n; ++r) m(r, c) = v(vec_index(r, c, n));
    }
    return m;
}

Eigen::VectorXcd vec(const Eigen::MatrixXcd& m) {
    const Index n = m.rows();
    Eigen::VectorXcd v(n * n);
    for (Index c = 0; c < n; ++c) {
        for (Index r = 0; r < n; ++r) v(vec_index(r, c, n)) = m(r, c);
    }
    return v;
}

}  // namespace

PhysicalityReport check_physical(const DensityMatrix& rho, double tolerance) {
    PhysicalityReport report;
    const auto& m = rho.matrix;
    report.hermiticity_defect = (m - m.adjoint()).cwiseAbs().maxCoeff();
    report.trace_defect = std::abs(m.trace() - std::complex<double>(1.0, 0.0));
    const Eigen::MatrixXcd hermitian = 0.5 * (m + m.adjoint());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(hermitian, Eigen::EigenvaluesOnly);
    report.min_eigenvalue = eig.eigenvalues().minCoeff();
    report.ok = report.hermiticity_defect <= tolerance && report.trace_defect <= tolerance &&
                report.min_eigenvalue >= -tolerance;
    return report;
}

Eigen::MatrixXcd dissipator(const std::vector<std::string>& labels, const std::vector<DecayChannel>& decays,
                            const std::vector<Dephasing>& dephasings) {
    const auto n = static_cast<Index>(labels.size());
    Eigen::MatrixXcd d = Eigen::MatrixXcd::Zero(n * n, n * n);

    for (const auto& channel : decays) {
        if (channel.rate < 0.0) throw InvalidModel("negative decay rate " + channel.from + "->" + channel.to);
        const auto to = static_cast<Index>(resolve(labels, channel.to));
        const auto from = static_cast<Index>(resolve(labels, channel.from));
        const double c2 = kTwoPi * channel.rate;
        d(vec_index(to, to, n), vec_index(from, from, n)) += c2;
        for (Index j = 0; j < n; ++j) {
            d(vec_index(from, j, n), vec_index(from, j, n)) -= 0.5 * c2;
            d(vec_index(j, from, n), vec_index(j, from, n)) -= 0.5 * c2;
        }
    }
    for (const auto& entry : dephasings) {
        if (entry.rate < 0.0) throw InvalidModel("negative dephasing rate on " + entry.level);
        const auto l = static_cast<Index>(resolve(labels, entry.level));
        const double c2 = kTwoPi * 2.0 * entry.rate;
        d(vec_index(l, l, n), vec_index(l, l, n)) += c2;
        for (Index j = 0; j < n; ++j) {
            d(vec_index(l, j, n), vec_index(l, j, n)) -= 0.5 * c2;
            d(vec_index(j, l, n), vec_index(j, l, n)) -= 0.5 * c2;
        }
    }
    return d;
}

void add_commutator(Eigen::MatrixXcd& superop, const Eigen::MatrixXcd& hamiltonian) {
    const Index n = hamiltonian.rows();
    for (Index a = 0; a < n; ++a) {
        for (Index b = 0; b < n; ++b) {
            const std::complex<double> h = hamiltonian(a, b);
            if (h == 0.0) continue;
            const std::complex<double> term = -kI * kTwoPi * h;
            for (Index c = 0; c < n; ++c) {
                superop(vec_index(a, c, n), vec_index(b, c, n)) += term;  // H rho
                superop(vec_index(c, b, n), vec_index(c, a, n)) -= term;  // rho H
            }
        }
    }
}

Liouvillian build_liouvillian(const Hamiltonian& h, const std::vector<DecayChannel>& decays,
                              const std::vector<Dephasing>& dephasings) {
    const auto n = static_cast<Index>(h.labels.size());
    if (h.matrix.rows() != n || h.matrix.cols() != n) {
        throw InvalidModel("Hamiltonian dimension does not match its labels");
    }
    Liouvillian l;
    l.labels = h.labels;
    l.matrix = dissipator(h.labels, decays, dephasings);
    add_commutator(l.matrix, h.matrix);
    return l;
}

double infinity_norm(const Eigen::MatrixXcd& m) { return m.cwiseAbs().rowwise().sum().maxCoeff(); }

SteadyStateSolver::SteadyStateSolver(std::size_t levels)
    : n_(levels),
      bordered_(static_cast<Index>(levels * levels), static_cast<Index>(levels * levels)),
      rhs_(Eigen::VectorXcd::Zero(static_cast<Index>(levels * levels))),
      x_(static_cast<Index>(levels * levels)),
      residual_(static_cast<Index>(levels * levels)),
      lu_(static_cast<Index>(levels * levels)) {
    if (levels == 0) throw InvalidModel("steady state of an empty system");
    rhs_(0) = 1.0;
}

const Eigen::VectorXcd& SteadyStateSolver::solve(const Eigen::MatrixXcd& liouvillian) {
    const auto n = static_cast<Index>(n_);
    const Index m = n * n;
    if (liouvillian.rows() != m || liouvillian.cols() != m) {
        throw InvalidModel("Liouvillian dimension does not match the solver");
    }

    // The rho_00 population equation is redundant under trace preservation;
    // replace it with tr(rho) = 1.
    bordered_ = liouvillian;
    bordered_.row(0).setZero();
    for (Index i = 0; i < n; ++i) bordered_(0, vec_index(i, i, n)) = 1.0;

    lu_.compute(bordered_);
    const auto pivots = lu_.matrixLU().diagonal().cwiseAbs();
    if (!(lu_.rcond() > 1e-14) || !(pivots.minCoeff() > 1e-13 * pivots.maxCoeff())) {
        return solve_by_null_space(liouvillian);
    }

    x_.noalias() = lu_.solve(rhs_);

    const double norm = infinity_norm(liouvillian);
    residual_.noalias() = liouvillian * x_;
    last_relative_residual_ = residual_.cwiseAbs().maxCoeff() / norm;
    if (!(last_relative_residual_ < 1e-10)) {
        // One step of iterative refinement on the bordered system.
        residual_ = rhs_;
        residual_.noalias() -= bordered_ * x_;
        x_.noalias() += lu_.solve(residual_);
        residual_.noalias() = liouvillian * x_;
        last_relative_residual_ = residual_.cwiseAbs().maxCoeff() / norm;
    }
    return x_;
}

const Eigen::VectorXcd& SteadyStateSolver::solve_by_null_space(const Eigen::MatrixXcd& liouvillian) {
    const auto n = static_cast<Index>(n_);
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(liouvillian, Eigen::ComputeFullV);
    const auto& sigma = svd.singularValues();
    const double cutoff = 1e-11 * sigma(0);
    int null_dimension = 0;
    for (Index i = 0; i < sigma.size(); ++i) {
        if (sigma(i) <= cutoff) ++null_dimension;
    }
    if (null_dimension != 1) {
        std::ostringstream msg;
        msg << "steady state is not unique: null space dimension " << null_dimension
            << " (disconnected or undriven level?)";
        throw DegenerateSteadyState(msg.str(), null_dimension);
    }
    x_ = svd.matrixV().col(sigma.size() - 1);
    std::complex<double> trace = 0.0;
    for (Index i = 0; i < n; ++i) trace += x_(vec_index(i, i, n));
    x_ /= trace;
    residual_.noalias() = liouvillian * x_;
    last_relative_residual_ = residual_.cwiseAbs().maxCoeff() / infinity_norm(liouvillian);
    return x_;
}

Eigen::MatrixXcd SteadyStateSolver::density() const {
    const auto n = static_cast<Index>(n_);
    Eigen::MatrixXcd rho = unvec(x_, n);
    rho = 0.5 * (rho + rho.adjoint()).eval();
    rho /= rho.trace().real();
    return rho;
}

DensityMatrix steady_state(const Liouvillian& l) {
    SteadyStateSolver solver(l.levels());
    solver.solve(l.matrix);
    return DensityMatrix{l.labels, solver.density()};
}

int count_zero_modes(const Liouvillian& l, double tolerance) {
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> eig(l.matrix, false);
    const double scale = infinity_norm(l.matrix);
    int zeros = 0;
    for (Index i = 0; i < eig.eigenvalues().size(); ++i) {
        if (std::abs(eig.eigenvalues()(i)) <= tolerance * scale) ++zeros;
    }
    return zeros;
}

namespace {

// Dormand-Prince 5(4) with FSAL on a real linear system; Gen and Vec may be fixed-size.
template <typename Gen, typename Vec>
void dopri5(const Gen& gen, Vec& y, double seconds, const EvolveOptions& options, EvolveStats* stats) {
    constexpr double a21 = 1.0 / 5;
    constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                     a65 = -5103.0 / 18656;
    constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                     e6 = 22.0 / 525, e7 = -1.0 / 40;

    const Index m = y.size();
    Vec k1(m), k2(m), k3(m), k4(m), k5(m), k6(m), k7(m), stage(m), y_new(m), err(m);

    k1.noalias() = gen * y;
    const double norm = gen.cwiseAbs().rowwise().sum().maxCoeff();
    double h = std::min(seconds, norm > 0.0 ? 0.01 / norm : seconds);
    double t = 0.0;
    long long accepted = 0;
    long long rejected = 0;

    while (t < seconds) {
        if (accepted + rejected >= options.max_steps) {
            throw StepSizeUnderflow("evolve: step budget exhausted", t, h);
        }
        if (t + h > seconds) h = seconds - t;
        if (h <= 1e-15 * std::max(t, 1e-300) || h < 1e-300) {
            throw StepSizeUnderflow("evolve: step size underflow", t, h);
        }

        stage = y + h * a21 * k1;
        k2.noalias() = gen * stage;
        stage = y + h * (a31 * k1 + a32 * k2);
        k3.noalias() = gen * stage;
        stage = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
        k4.noalias() = gen * stage;
        stage = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        k5.noalias() = gen * stage;
        stage = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        k6.noalias() = gen * stage;
        y_new = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        k7.noalias() = gen * y_new;
        err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

        double ratio = 0.0;
        for (Index i = 0; i < m; ++i) {
            const double scale = options.absolute_tolerance +
                                 options.relative_tolerance * std::max(std::abs(y(i)), std::abs(y_new(i)));
            ratio = std::max(ratio, std::abs(err(i)) / scale);
        }

        if (ratio <= 1.0) {
            t = (t + h >= seconds) ? seconds : t + h;
            y.swap(y_new);
            k1.swap(k7);
            ++accepted;
            const double grow = ratio == 0.0 ? 5.0 : std::min(5.0, std::max(0.2, 0.9 * std::pow(ratio, -0.2)));
            h *= grow;
        } else {
            ++rejected;
            h *= std::max(0.2, 0.9 * std::pow(ratio, -0.2));
        }
    }

    if (stats) {
        stats->accepted = accepted;
        stats->rejected = rejected;
    }
}

}  // namespace

DensityMatrix evolve(const DensityMatrix& rho0, const Liouvillian& l, double seconds,
                     const EvolveOptions& options, EvolveStats* stats) {
    if (seconds < 0.0) throw Error("evolve: negative duration");
    const auto n = static_cast<Index>(l.levels());
    if (rho0.matrix.rows() != n || rho0.matrix.cols() != n) {
        throw InvalidModel("evolve: initial state does not match the Liouvillian");
    }
    if (seconds == 0.0) return rho0;

    // Real coordinates of a Hermitian rho: rho_ii, then Re and Im of rho_ij (i < j).
    // The generator is real in this basis.
    const Index m = n * n;
    Eigen::MatrixXcd to_real = Eigen::MatrixXcd::Zero(m, m);
    Eigen::MatrixXcd from_real = Eigen::MatrixXcd::Zero(m, m);
    Index k = 0;
    for (Index i = 0; i < n; ++i, ++k) {
        to_real(k, vec_index(i, i, n)) = 1.0;
        from_real(vec_index(i, i, n), k) = 1.0;
    }
    for (Index i = 0; i < n; ++i) {
        for (Index j = i + 1; j < n; ++j, k += 2) {
            to_real(k, vec_index(i, j, n)) = 0.5;
            to_real(k, vec_index(j, i, n)) = 0.5;
            to_real(k + 1, vec_index(i, j, n)) = -0.5 * kI;
            to_real(k + 1, vec_index(j, i, n)) = 0.5 * kI;
            from_real(vec_index(i, j, n), k) = 1.0;
            from_real(vec_index(j, i, n), k) = 1.0;
            from_real(vec_index(i, j, n), k + 1) = kI;
            from_real(vec_index(j, i, n), k + 1) = -kI;
        }
    }
    const Eigen::MatrixXd gen = (to_real * l.matrix * from_real).real();
    const Eigen::MatrixXcd hermitian0 = 0.5 * (rho0.matrix + rho0.matrix.adjoint());
    Eigen::VectorXd y = (to_real * vec(hermitian0)).real();

    if (n == 3) {
        const Eigen::Matrix<double, 9, 9> gen9 = gen;
        Eigen::Matrix<double, 9, 1> y9 = y;
        dopri5(gen9, y9, seconds, options, stats);
        y = y9;
    } else {
        dopri5(gen, y, seconds, options, stats);
    }

    Eigen::MatrixXcd rho = unvec(from_real * y.cast<std::complex<double>>(), n);
    rho = 0.5 * (rho + rho.adjoint()).eval();
    return DensityMatrix{rho0.labels, rho};
}

}  // namespace eitsim::lindblad
