#include "eitsim/fit.hpp"
#include "eitsim/presets.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

using namespace eitsim;
using namespace eitsim::fit;

namespace {

// default-rate Lambda on a cheap 2 GHz ensemble.
FitProblem lambda_problem(std::vector<FreeParameter> parameters) {
    FitProblem p;
    p.model = presets::lambda_three_level();
    p.inhomogeneity.fwhm = 2e9;
    p.inhomogeneity.n_samples = 61;
    p.inhomogeneity.tiered = false;
    p.parameters = std::move(parameters);
    return p;
}

ObservedTrace grid_trace(const std::vector<double>& delta, std::optional<double> power = std::nullopt) {
    ObservedTrace t;
    t.delta = delta;
    t.power = power;
    return t;
}

std::vector<std::vector<double>> same_truth(std::size_t traces, std::vector<double> values) {
    return std::vector<std::vector<double>>(traces, std::move(values));
}

double norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

std::vector<double> far_wing() {
    std::vector<double> x;
    for (int i = 0; i <= 20; ++i) x.push_back(200e6 + i * 1e6);
    return x;
}

}  // namespace

TEST_CASE("fit: noise-free trace with initial = truth converges at once") {
    const auto problem = lambda_problem({{"excited_decay", 2e6, 30e6, 10e6}, {"ground_dephasing", 1e4, 1e6, 1e5}});
    const auto observed = synthesize(problem, {grid_trace(spectra::symmetric_grid(30e6, 61))},
                                     same_truth(1, {10e6, 1e5}), 0.0, 1);
    const auto result = fit::fit(observed, problem);
    CHECK(result.converged);
    CHECK(result.iterations <= 2);
    CHECK(result.residual_norm < 1e-10);
    CHECK(result.residual_norm < 1e-10 * norm(observed[0].signal));
    CHECK(result.find("excited_decay")->value == doctest::Approx(10e6).epsilon(1e-12));
}

TEST_CASE("property: noise-free round trip recovers the generator exactly") {
    auto problem = lambda_problem({{"excited_decay", 2e6, 30e6, 6e6}, {"ground_dephasing", 1e4, 1e6, 3e5}});
    const auto observed = synthesize(problem, {grid_trace(spectra::symmetric_grid(30e6, 61))},
                                     same_truth(1, {10e6, 1e5}), 0.0, 1);
    const auto result = fit::fit(observed, problem);
    REQUIRE(result.converged);
    CHECK(std::abs(result.find("excited_decay")->value / 10e6 - 1.0) < 1e-8);
    CHECK(std::abs(result.find("ground_dephasing")->value / 1e5 - 1.0) < 1e-8);
    CHECK(std::abs(result.scale[0] - 1.0) < 1e-8);
}

TEST_CASE("fit: power series with sqrt(P) Rabi scaling, 1% noise") {
    auto problem = lambda_problem({{"excited_decay", 2e6, 30e6, 7e6},
                                   {"ground_dephasing", 1e4, 1e6, 2e5},
                                   {"control_rabi", 0.5e6, 20e6, 5e6, true, true}});
    problem.power_reference = 1e-3;
    std::vector<ObservedTrace> templates;
    for (double p : {0.25e-3, 1e-3, 4e-3}) templates.push_back(grid_trace(spectra::symmetric_grid(30e6, 61), p));
    const std::vector<double> truth{10e6, 1e5, 3e6};
    const auto observed = synthesize(problem, templates, same_truth(3, truth), 0.01, 7);
    const auto result = fit::fit(observed, problem);
    REQUIRE(result.converged);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto& e = result.estimates[i];
        INFO(e.name << " = " << e.value << " +- " << e.uncertainty);
        CHECK(std::abs(e.value - truth[i]) / truth[i] < 0.1);
        CHECK(std::abs(e.value - truth[i]) < 2.0 * e.uncertainty);
    }
    CHECK(result.reduced_chi2 == doctest::Approx(1.0).epsilon(0.3));
}

TEST_CASE("fit: temperature series with per-trace gamma_e tracks a monotone schedule") {
    auto problem = lambda_problem({{"excited_dephasing", 0.0, 30e6, 3e6, false}});
    const std::vector<double> schedule{0.5e6, 2e6, 5e6, 10e6};
    std::vector<ObservedTrace> templates;
    std::vector<std::vector<double>> truth;
    for (std::size_t t = 0; t < schedule.size(); ++t) {
        auto trace = grid_trace(spectra::symmetric_grid(30e6, 61));
        trace.temperature = 2.0 + 2.0 * static_cast<double>(t);
        templates.push_back(trace);
        truth.push_back({schedule[t]});
    }
    const auto observed = synthesize(problem, templates, truth, 0.01, 11);
    const auto result = fit::fit(observed, problem);
    REQUIRE(result.converged);
    REQUIRE(result.estimates.size() == schedule.size());
    for (std::size_t t = 0; t < schedule.size(); ++t) {
        CHECK(result.estimates[t].trace == static_cast<int>(t));
        if (t > 0) CHECK(result.estimates[t].value > result.estimates[t - 1].value);
    }
}

TEST_CASE("fit: covariance is symmetric PSD and uncertainties are its root diagonal") {
    const auto problem = lambda_problem({{"excited_decay", 2e6, 30e6, 7e6}, {"ground_dephasing", 1e4, 1e6, 2e5}});
    const auto observed = synthesize(problem, {grid_trace(spectra::symmetric_grid(30e6, 61))},
                                     same_truth(1, {10e6, 1e5}), 0.01, 3);
    const auto result = fit::fit(observed, problem);
    const auto& c = result.covariance;
    CHECK((c - c.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * c.cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (c + c.transpose()));
    CHECK(es.eigenvalues().minCoeff() >= -1e-10 * es.eigenvalues().maxCoeff());
    CHECK(result.estimates[0].uncertainty == doctest::Approx(std::sqrt(c(0, 0))));
    CHECK(result.estimates[1].uncertainty == doctest::Approx(std::sqrt(c(1, 1))));
}

TEST_CASE("property: scaling the signals changes only the scale nuisance") {
    const auto problem = lambda_problem({{"excited_decay", 2e6, 30e6, 7e6}, {"ground_dephasing", 1e4, 1e6, 2e5}});
    const auto observed = synthesize(problem, {grid_trace(spectra::symmetric_grid(30e6, 61))},
                                     same_truth(1, {10e6, 1e5}), 0.01, 5);
    auto scaled = observed;
    const double c = 3.7e4;
    for (double& s : scaled[0].signal) s *= c;
    const auto a = fit::fit(observed, problem);
    const auto b = fit::fit(scaled, problem);
    for (std::size_t i = 0; i < a.estimates.size(); ++i) {
        CHECK(std::abs(b.estimates[i].value / a.estimates[i].value - 1.0) < 1e-6);
    }
    CHECK(std::abs(b.scale[0] / (c * a.scale[0]) - 1.0) < 1e-6);
}

TEST_CASE("property: identical inputs and seed give identical results") {
    auto problem = lambda_problem({{"excited_decay", 2e6, 30e6, 7e6}, {"ground_dephasing", 1e4, 1e6, 2e5}});
    const auto templates = std::vector<ObservedTrace>{grid_trace(spectra::symmetric_grid(30e6, 41))};
    const auto o1 = synthesize(problem, templates, same_truth(1, {10e6, 1e5}), 0.01, 99);
    const auto o2 = synthesize(problem, templates, same_truth(1, {10e6, 1e5}), 0.01, 99);
    CHECK(o1[0].signal == o2[0].signal);
    const auto a = fit::fit(o1, problem);
    problem.options.workers = 3;
    const auto b = fit::fit(o2, problem);
    CHECK(a.estimates[0].value == b.estimates[0].value);
    CHECK(a.estimates[1].value == b.estimates[1].value);
    CHECK(a.covariance == b.covariance);
    CHECK(a.residuals == b.residuals);
}

TEST_CASE("fit: iteration budget exhaustion returns the best point, flagged") {
    auto problem = lambda_problem({{"excited_decay", 2e6, 30e6, 25e6}});
    problem.options.max_iterations = 1;
    const auto observed = synthesize(problem, {grid_trace(spectra::symmetric_grid(30e6, 41))},
                                     same_truth(1, {10e6}), 0.0, 1);
    const auto result = fit::fit(observed, problem);
    CHECK_FALSE(result.converged);
    CHECK(result.iterations == 1);
    CHECK(std::isfinite(result.find("excited_decay")->value));
}

TEST_CASE("identifiability_report: (Gamma_e, gamma_e) on one trace is flagged") {
    const auto problem = lambda_problem({{"excited_decay", 2e6, 30e6, 10e6}, {"excited_dephasing", 0.0, 10e6, 1e6}});
    const auto observed = synthesize(problem, {grid_trace(spectra::symmetric_grid(30e6, 61))},
                                     same_truth(1, {10e6, 1e6}), 0.0, 1);
    const auto report = identifiability_report(problem, observed);
    CHECK(report.flags("excited_decay", "excited_dephasing"));
    CHECK(report.flags("excited_dephasing", "excited_decay"));
}

TEST_CASE("fit: flagged (Gamma_e, gamma_e) is fitted as the combined width") {
    // The merged fit keeps the initial split gamma_e / (Gamma_e + gamma_e) = 1/9.
    const auto problem = lambda_problem({{"excited_decay", 2e6, 30e6, 8e6}, {"excited_dephasing", 0.0, 10e6, 1e6}});
    const auto observed = synthesize(problem, {grid_trace(spectra::symmetric_grid(30e6, 61))},
                                     same_truth(1, {9.6e6, 1.2e6}), 0.0, 1);
    const auto result = fit::fit(observed, problem);
    REQUIRE(result.combined_width.has_value());
    CHECK_FALSE(result.warnings.empty());
    const double width = result.find("excited_decay")->value + result.find("excited_dephasing")->value;
    CHECK(width == doctest::Approx(10.8e6).epsilon(1e-6));
}

TEST_CASE("identifiability_report: a single free parameter raises no flags") {
    const auto problem = lambda_problem({{"excited_decay", 2e6, 30e6, 10e6}});
    const auto observed = synthesize(problem, {grid_trace(spectra::symmetric_grid(30e6, 61))},
                                     same_truth(1, {10e6}), 0.0, 1);
    const auto report = identifiability_report(problem, observed);
    CHECK(report.degenerate.empty());
    CHECK(report.unidentifiable.empty());
}

TEST_CASE("identifiability_report: (Omega_c, scale) depends on whether the dip is sampled") {
    const auto problem = lambda_problem({{"control_rabi", 0.3e6, 30e6, 3e6}});
    const auto with_dip = synthesize(problem, {grid_trace(spectra::symmetric_grid(30e6, 61))},
                                     same_truth(1, {3e6}), 0.0, 1);
    CHECK_FALSE(identifiability_report(problem, with_dip).flags("control_rabi", "scale[0]"));

    const auto without_dip = synthesize(problem, {grid_trace(far_wing())}, same_truth(1, {3e6}), 0.0, 1);
    CHECK(identifiability_report(problem, without_dip).flags("control_rabi", "scale[0]"));
}

TEST_CASE("validate: problem and trace preconditions") {
    ObservedTrace t = grid_trace({0.0, 1e6, 2e6});
    t.signal = {1.0, 2.0, 3.0};
    CHECK_NOTHROW(validate(t));
    auto bad = t;
    bad.delta = {0.0, 2e6, 1e6};
    CHECK_THROWS(validate(bad));
    bad = t;
    bad.signal.pop_back();
    CHECK_THROWS(validate(bad));
    bad = t;
    bad.sigma = std::vector<double>{1.0, 0.0, 1.0};
    CHECK_THROWS(validate(bad));

    CHECK_NOTHROW(validate(lambda_problem({{"excited_decay", 2e6, 30e6, 10e6}})));
    CHECK_THROWS(validate(lambda_problem({{"excited_decay", 30e6, 2e6, 10e6}})));
    CHECK_THROWS(validate(lambda_problem({{"excited_decay", 2e6, 30e6, 40e6}})));
    CHECK_THROWS(validate(lambda_problem({{"nonsense", 0.0, 1.0, 0.5}})));
    CHECK_THROWS(validate(lambda_problem({{"energy:nope", 0.0, 1.0, 0.5}})));
    CHECK_THROWS(fit::fit({}, lambda_problem({{"excited_decay", 2e6, 30e6, 10e6}})));
}

TEST_CASE("fit: power-scaled parameter without power tags is rejected") {
    const auto problem = lambda_problem({{"control_rabi", 0.5e6, 20e6, 3e6, true, true}});
    ObservedTrace t = grid_trace(spectra::symmetric_grid(30e6, 11));
    t.signal.assign(11, 1.0);
    CHECK_THROWS(fit::fit({t}, problem));
}
