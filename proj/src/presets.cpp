#include "eitsim/presets.hpp"

namespace eitsim::presets {

using model::Coupling;
using model::DecayChannel;
using model::Dephasing;
using model::DriveField;
using model::FieldId;
using model::Level;
using model::LevelSystemSpec;
using model::Manifold;

namespace {

void add_dissipation(LevelSystemSpec& spec, const RateParams& rates, const std::vector<std::string>& grounds,
                     const std::vector<std::string>& excited, const std::vector<std::string>& dephased_grounds) {
    const double branch = rates.excited_decay / static_cast<double>(grounds.size());
    for (const auto& e : excited) {
        for (const auto& g : grounds) spec.decays.push_back(DecayChannel{e, g, branch});
    }
    for (const auto& a : grounds) {
        for (const auto& b : grounds) {
            if (a != b) spec.decays.push_back(DecayChannel{a, b, rates.ground_relaxation});
        }
    }
    for (const auto& g : dephased_grounds) spec.dephasings.push_back(Dephasing{g, rates.ground_dephasing});
    for (const auto& e : excited) spec.dephasings.push_back(Dephasing{e, rates.excited_dephasing});
}

}  // namespace

RateParams double_eit_rates() {
    RateParams r;
    r.excited_decay = 2.7e6;
    r.ground_dephasing = 0.23e6;
    r.ground_relaxation = 1e4;
    r.control_rabi = 7.4e6;
    r.probe_rabi = 0.74e6;
    return r;
}

LevelSystemSpec lambda_three_level(const RateParams& rates, double ground_splitting) {
    LevelSystemSpec spec;
    spec.levels = {
        Level{"g1", Manifold::ground, 0.0},
        Level{"g2", Manifold::ground, ground_splitting},
        Level{"e2", Manifold::excited, 0.0},
    };
    spec.drives = {
        DriveField{FieldId::probe, {Coupling{"g1", "e2", rates.probe_rabi}}},
        DriveField{FieldId::control, {Coupling{"g2", "e2", rates.control_rabi}}},
    };
    add_dissipation(spec, rates, {"g1", "g2"}, {"e2"}, {"g2"});
    return spec;
}

LevelSystemSpec asymmetric_five_level(const RateParams& rates, double mismatch, double upper_ground_splitting) {
    constexpr double lower_ground_splitting = 1e9;
    LevelSystemSpec spec;
    spec.levels = {
        Level{"g1", Manifold::ground, 0.0},
        Level{"g2", Manifold::ground, lower_ground_splitting},
        Level{"g3", Manifold::ground, lower_ground_splitting + upper_ground_splitting},
        Level{"e2", Manifold::excited, 0.0},
        Level{"e3", Manifold::excited, upper_ground_splitting + mismatch},
    };
    spec.drives = {
        DriveField{FieldId::probe, {Coupling{"g1", "e2", rates.probe_rabi}}},
        DriveField{FieldId::control,
                   {Coupling{"g2", "e2", rates.control_rabi}, Coupling{"g3", "e3", rates.control_rabi}}},
    };
    add_dissipation(spec, rates, {"g1", "g2", "g3"}, {"e2", "e3"}, {"g2", "g3"});
    return spec;
}

LevelSystemSpec double_eit_five_level(const RateParams& rates, double mismatch, double excited_splitting,
                                      const DoubleEitWeights& w) {
    constexpr double lower_ground_splitting = 1e9;
    const double upper_ground_splitting = excited_splitting - mismatch;
    LevelSystemSpec spec;
    spec.levels = {
        Level{"g1", Manifold::ground, 0.0},
        Level{"g2", Manifold::ground, lower_ground_splitting},
        Level{"g3", Manifold::ground, lower_ground_splitting + upper_ground_splitting},
        Level{"e2", Manifold::excited, 0.0},
        Level{"e3", Manifold::excited, excited_splitting},
    };
    const double p = rates.probe_rabi;
    const double c = rates.control_rabi;
    spec.drives = {
        DriveField{FieldId::probe, {Coupling{"g1", "e2", p * w.probe_e2}, Coupling{"g1", "e3", p * w.probe_e3}}},
        DriveField{FieldId::control,
                   {Coupling{"g2", "e2", c * w.control_g2_e2}, Coupling{"g2", "e3", c * w.control_g2_e3},
                    Coupling{"g3", "e2", c * w.control_g3_e2}, Coupling{"g3", "e3", c * w.control_g3_e3}}},
    };
    add_dissipation(spec, rates, {"g1", "g2", "g3"}, {"e2", "e3"}, {"g2", "g3"});
    return spec;
}

}  // namespace eitsim::presets
