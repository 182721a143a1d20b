#include "eitsim/model.hpp"
#include "eitsim/presets.hpp"

#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include <random>

using namespace eitsim;
using namespace eitsim::model;

namespace {

bool has_violation(const ValidationReport& r, const std::string& needle) {
    for (const auto& v : r.violations) {
        if (v.find(needle) != std::string::npos) return true;
    }
    return false;
}

LevelSystemSpec fig5a(double mismatch, double splitting) {
    return presets::double_eit_five_level(presets::double_eit_rates(), mismatch, splitting);
}

double diag(const Hamiltonian& h, const LevelSystemSpec& spec, const std::string& label) {
    const auto i = static_cast<Eigen::Index>(spec.require_index(label));
    return h.matrix(i, i).real();
}

std::complex<double> entry(const Hamiltonian& h, const LevelSystemSpec& spec, const std::string& a,
                           const std::string& b) {
    return h.matrix(static_cast<Eigen::Index>(spec.require_index(a)), static_cast<Eigen::Index>(spec.require_index(b)));
}

}  // namespace

TEST_CASE("validate_system: reference Lambda is valid") {
    const auto report = validate_system(presets::lambda_three_level());
    CHECK(report.ok());
}

TEST_CASE("validate_system: ground-ground drive coupling is rejected") {
    auto spec = presets::lambda_three_level();
    spec.drives[1].couplings[0] = Coupling{"g2", "g1", 3e6};
    const auto report = validate_system(spec);
    CHECK_FALSE(report.ok());
    CHECK(has_violation(report, "coupling must be ground-excited"));
}

TEST_CASE("validate_system: over-constrained control couplings admit no frame") {
    // g1-e2 (probe), g2-e2 (control), g2-e3 (probe), g1-e3 (control):
    // frame(g1) - frame(g2) would have to equal both P - C and C - P.
    LevelSystemSpec spec;
    spec.levels = {Level{"g1", Manifold::ground, 0.0}, Level{"g2", Manifold::ground, 1e9},
                   Level{"g3", Manifold::ground, 1.5e9}, Level{"e2", Manifold::excited, 0.0},
                   Level{"e3", Manifold::excited, 5e6}};
    spec.drives = {DriveField{FieldId::probe, {Coupling{"g1", "e2", 1e4}, Coupling{"g2", "e3", 1e4}}},
                   DriveField{FieldId::control, {Coupling{"g2", "e2", 3e6}, Coupling{"g1", "e3", 3e6}}}};
    const auto report = validate_system(spec);
    CHECK(has_violation(report, "no consistent rotating frame"));
    CHECK_THROWS_AS(assign_rotating_frame(spec), NoConsistentFrame);
}

TEST_CASE("validate_system: other violations") {
    auto spec = presets::lambda_three_level();
    SUBCASE("duplicate label") {
        spec.levels[1].label = "g1";
        CHECK(has_violation(validate_system(spec), "duplicate level label"));
    }
    SUBCASE("negative rate") {
        spec.decays[0].rate = -1.0;
        CHECK(has_violation(validate_system(spec), "negative or non-finite decay rate"));
    }
    SUBCASE("missing probe") {
        spec.drives.erase(spec.drives.begin());
        CHECK(has_violation(validate_system(spec), "missing probe field"));
    }
    SUBCASE("dangling label") {
        spec.dephasings[0].level = "x9";
        CHECK(has_violation(validate_system(spec), "unknown level 'x9'"));
    }
    SUBCASE("decay into excited level") {
        spec.decays.push_back(DecayChannel{"g1", "e2", 1.0});
        CHECK(has_violation(validate_system(spec), "must end on a ground level"));
    }
    SUBCASE("require_valid throws") {
        spec.levels.clear();
        CHECK_THROWS_AS(require_valid(spec), InvalidModel);
    }
}

TEST_CASE("assign_rotating_frame: three-level Lambda") {
    const auto frame = assign_rotating_frame(presets::lambda_three_level());
    CHECK(frame.at("e2") == FrameTerm{0, 0});
    CHECK(frame.at("g1") == FrameTerm{1, 0});
    CHECK(frame.at("g2") == FrameTerm{0, 1});
}

TEST_CASE("assign_rotating_frame: double-EIT configuration") {
    const auto spec = fig5a(2e6, 5e6);
    const auto frame = assign_rotating_frame(spec);
    CHECK(frame.at("e2") == FrameTerm{0, 0});
    CHECK(frame.at("e3") == FrameTerm{0, 0});
    CHECK(frame.at("g1") == FrameTerm{1, 0});
    CHECK(frame.at("g2") == FrameTerm{0, 1});
    CHECK(frame.at("g3") == FrameTerm{0, 1});
    // All six couplings satisfy frame(g) - frame(e) = class(field).
    for (const auto& drive : spec.drives) {
        const FrameTerm want = drive.field == FieldId::probe ? FrameTerm{1, 0} : FrameTerm{0, 1};
        for (const auto& c : drive.couplings) {
            const auto g = frame.at(c.ground);
            const auto e = frame.at(c.excited);
            CHECK(FrameTerm{g.probe - e.probe, g.control - e.control} == want);
        }
    }
}

TEST_CASE("assign_rotating_frame: single undriven level") {
    LevelSystemSpec spec;
    spec.levels = {Level{"g1", Manifold::ground, 0.0}};
    const auto frame = assign_rotating_frame(spec);
    REQUIRE(frame.terms.size() == 1);
    CHECK(frame.at("g1") == FrameTerm{0, 0});
}

TEST_CASE("assemble_hamiltonian: default-rate Lambda at resonance") {
    const auto spec = presets::lambda_three_level();
    const auto h = assemble_hamiltonian(spec, DetuningPoint{0.0, 0.0});
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(h.matrix(i, i) == std::complex<double>(0.0, 0.0));
    CHECK(entry(h, spec, "g1", "e2") == std::complex<double>(5e3, 0.0));
    CHECK(entry(h, spec, "g2", "e2") == std::complex<double>(1.5e6, 0.0));
    CHECK(entry(h, spec, "e2", "g1") == std::complex<double>(5e3, 0.0));
    CHECK(entry(h, spec, "g1", "g2") == std::complex<double>(0.0, 0.0));
}

TEST_CASE("assemble_hamiltonian: Delta = 5 GHz shifts only the excited level") {
    const auto spec = presets::lambda_three_level();
    const auto h0 = assemble_hamiltonian(spec, DetuningPoint{0.0, 0.0});
    const auto h = assemble_hamiltonian(spec, DetuningPoint{5e9, 0.0});
    CHECK(diag(h, spec, "e2") == -5e9);
    CHECK(diag(h, spec, "g1") == 0.0);
    CHECK(diag(h, spec, "g2") == 0.0);
    Eigen::MatrixXcd off = h.matrix - h0.matrix;
    off.diagonal().setZero();
    CHECK(off.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("assemble_hamiltonian: probe ground carries -delta") {
    const auto spec = presets::lambda_three_level();
    const auto h = assemble_hamiltonian(spec, DetuningPoint{0.0, 2e6});
    CHECK(diag(h, spec, "g1") == doctest::Approx(-2e6));
    CHECK(diag(h, spec, "g2") == 0.0);
}

TEST_CASE("assemble_hamiltonian: double-EIT diagonal with Delta_k = 2 MHz, Delta_54 = 5 MHz") {
    const double dk = 2e6;
    const double d54 = 5e6;
    const auto spec = fig5a(dk, d54);
    const double delta_c = 1e6;
    const double delta_p = 0.3e6;
    const auto h = assemble_hamiltonian(spec, DetuningPoint{delta_c, delta_p});
    // Hand-derived: control ground g2 is the zero; e2 at -Delta; e3 at Delta_54 - Delta;
    // g3 at E(g3) - E(g2) = Delta_54 - Delta_k; g1 at -delta.
    CHECK(diag(h, spec, "g2") == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(diag(h, spec, "e2") == doctest::Approx(-delta_c));
    CHECK(diag(h, spec, "e3") == doctest::Approx(d54 - delta_c));
    CHECK(diag(h, spec, "g3") == doctest::Approx(d54 - dk));
    CHECK(diag(h, spec, "g1") == doctest::Approx(-delta_p));
    CHECK(diag(h, spec, "e3") - diag(h, spec, "e2") == doctest::Approx(d54));
    // The g3-e3 control transition is detuned by Delta_k relative to g2-e2.
    CHECK((diag(h, spec, "e3") - diag(h, spec, "g3")) - (diag(h, spec, "e2") - diag(h, spec, "g2")) ==
          doctest::Approx(dk));
}

TEST_CASE("laser_frequencies: probe sits at nu_c + E(g_c) - E(g_p) - delta") {
    const auto spec = presets::lambda_three_level({}, 1e9);
    const auto lasers = laser_frequencies(spec, DetuningPoint{0.0, 3e6});
    CHECK(lasers.control == doctest::Approx(-1e9));
    CHECK(lasers.probe == doctest::Approx(lasers.control + 1e9 - 3e6));
}

TEST_CASE("property: Hermitian for random detunings and Rabi amplitudes") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1e9, 1e9);
    for (int trial = 0; trial < 200; ++trial) {
        auto rates = presets::double_eit_rates();
        rates.control_rabi = std::abs(u(rng)) * 1e-2;
        rates.probe_rabi = std::abs(u(rng)) * 1e-3;
        const auto spec = presets::double_eit_five_level(rates, u(rng) * 1e-2, u(rng) * 1e-2);
        const auto h = assemble_hamiltonian(spec, DetuningPoint{u(rng), u(rng) * 1e-2});
        CHECK((h.matrix - h.matrix.adjoint()).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("property: a common shift of the excited manifold leaves the rotating-frame Hamiltonian invariant") {
    const auto spec = presets::asymmetric_five_level({}, 20e6);
    const DetuningPoint point{3e6, 1e6};
    const auto h = assemble_hamiltonian(spec, point);
    for (double c : {-7e9, 1.234e6, 40e9}) {
        auto shifted = spec;
        for (auto& level : shifted.levels) {
            if (level.manifold == Manifold::excited) level.energy += c;
        }
        const auto hs = assemble_hamiltonian(shifted, point);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> a(h.matrix);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> b(hs.matrix);
        CHECK((a.eigenvalues() - b.eigenvalues()).cwiseAbs().maxCoeff() < 1e-6 * (1.0 + std::abs(c)));
    }
}

TEST_CASE("property: zero Rabi amplitudes give a diagonal Hamiltonian") {
    presets::RateParams rates;
    rates.control_rabi = 0.0;
    rates.probe_rabi = 0.0;
    const auto spec = presets::asymmetric_five_level(rates, 10e6);
    const auto h = assemble_hamiltonian(spec, DetuningPoint{1e6, 2e6});
    Eigen::MatrixXcd off = h.matrix;
    off.diagonal().setZero();
    CHECK(off.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("HamiltonianBuilder matches assemble_hamiltonian bit for bit") {
    const auto spec = fig5a(13.1e6, 5e6);
    HamiltonianBuilder builder(spec);
    Eigen::MatrixXcd out;
    for (double d : {-3e9, 0.0, 7e6}) {
        const DetuningPoint point{d, d * 1e-3};
        builder.fill(point, out);
        CHECK(out == assemble_hamiltonian(spec, point).matrix);
    }
}

TEST_CASE("model_fingerprint and helpers") {
    const auto a = presets::lambda_three_level();
    auto b = a;
    CHECK(model_fingerprint(a) == model_fingerprint(b));
    b.decays[0].rate *= 1.0000001;
    CHECK(model_fingerprint(a) != model_fingerprint(b));
    CHECK(excited_linewidth(a) == doctest::Approx(1e7));
    CHECK(max_rabi(a, FieldId::control) == 3e6);
    CHECK(max_rabi(a, FieldId::probe) == 1e4);
}
