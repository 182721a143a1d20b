#include "eitsim/model.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <set>
#include <sstream>

namespace eitsim::model {

const char* to_string(Manifold m) { return m == Manifold::ground ? "ground" : "excited"; }
const char* to_string(FieldId f) { return f == FieldId::probe ? "probe" : "control"; }

std::optional<std::size_t> LevelSystemSpec::index_of(const std::string& label) const {
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (levels[i].label == label) return i;
    }
    return std::nullopt;
}

std::size_t LevelSystemSpec::require_index(const std::string& label) const {
    if (auto idx = index_of(label)) return *idx;
    throw InvalidModel("unknown level label '" + label + "'");
}

const DriveField* LevelSystemSpec::field(FieldId id) const {
    for (const auto& d : drives) {
        if (d.field == id) return &d;
    }
    return nullptr;
}

DriveField* LevelSystemSpec::field(FieldId id) {
    for (auto& d : drives) {
        if (d.field == id) return &d;
    }
    return nullptr;
}

std::vector<std::string> LevelSystemSpec::labels() const {
    std::vector<std::string> out;
    out.reserve(levels.size());
    for (const auto& l : levels) out.push_back(l.label);
    return out;
}

const FrameTerm& RotatingFrame::at(const std::string& label) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == label) return terms[i];
    }
    throw InvalidModel("frame has no level '" + label + "'");
}

std::string ValidationReport::summary() const {
    std::string out;
    for (const auto& v : violations) {
        if (!out.empty()) out += "; ";
        out += v;
    }
    return out;
}

namespace {

bool finite(double x) { return std::isfinite(x); }

std::string describe(const Coupling& c) { return c.ground + "-" + c.excited; }

struct FrameEdge {
    std::size_t ground;
    std::size_t excited;
    FieldId field;
};

// Labels must already resolve; returns the offending coupling on conflict.
std::optional<std::string> solve_frame(const LevelSystemSpec& spec, std::vector<FrameTerm>& terms) {
    const std::size_t n = spec.levels.size();
    std::vector<std::vector<FrameEdge>> adjacency(n);
    for (const auto& drive : spec.drives) {
        for (const auto& c : drive.couplings) {
            auto g = spec.index_of(c.ground);
            auto e = spec.index_of(c.excited);
            if (!g || !e) continue;
            FrameEdge edge{*g, *e, drive.field};
            adjacency[*g].push_back(edge);
            adjacency[*e].push_back(edge);
        }
    }

    terms.assign(n, FrameTerm{});
    std::vector<bool> seen(n, false);
    auto unit = [](FieldId f) {
        return f == FieldId::probe ? FrameTerm{1, 0} : FrameTerm{0, 1};
    };

    // Excited levels first so that every component is rooted on one of them.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_partition(order.begin(), order.end(),
                          [&](std::size_t i) { return spec.levels[i].manifold == Manifold::excited; });

    for (std::size_t root : order) {
        if (seen[root]) continue;
        seen[root] = true;
        terms[root] = FrameTerm{};
        std::deque<std::size_t> queue{root};
        while (!queue.empty()) {
            const std::size_t at = queue.front();
            queue.pop_front();
            for (const auto& edge : adjacency[at]) {
                const FrameTerm u = unit(edge.field);
                const std::size_t other = at == edge.ground ? edge.excited : edge.ground;
                FrameTerm want;
                if (at == edge.ground) {
                    want = {terms[at].probe - u.probe, terms[at].control - u.control};
                } else {
                    want = {terms[at].probe + u.probe, terms[at].control + u.control};
                }
                if (!seen[other]) {
                    seen[other] = true;
                    terms[other] = want;
                    queue.push_back(other);
                } else if (!(terms[other] == want)) {
                    return spec.levels[edge.ground].label + "-" + spec.levels[edge.excited].label + " (" +
                           to_string(edge.field) + ")";
                }
            }
        }
    }
    return std::nullopt;
}

}  // namespace

ValidationReport validate_system(const LevelSystemSpec& spec) {
    ValidationReport report;
    auto& v = report.violations;

    std::set<std::string> seen;
    bool has_ground = false;
    bool has_excited = false;
    for (const auto& level : spec.levels) {
        if (level.label.empty()) v.push_back("level label must be non-empty");
        if (!seen.insert(level.label).second) v.push_back("duplicate level label '" + level.label + "'");
        if (!finite(level.energy)) v.push_back("level '" + level.label + "' has non-finite energy");
        has_ground |= level.manifold == Manifold::ground;
        has_excited |= level.manifold == Manifold::excited;
    }
    if (!has_ground) v.push_back("at least one ground level is required");
    if (!has_excited) v.push_back("at least one excited level is required");

    auto manifold_of = [&](const std::string& label) -> std::optional<Manifold> {
        if (auto idx = spec.index_of(label)) return spec.levels[*idx].manifold;
        return std::nullopt;
    };

    int probes = 0;
    int controls = 0;
    for (const auto& drive : spec.drives) {
        (drive.field == FieldId::probe ? probes : controls) += 1;
        for (const auto& c : drive.couplings) {
            const auto mg = manifold_of(c.ground);
            const auto me = manifold_of(c.excited);
            if (!mg) v.push_back(std::string(to_string(drive.field)) + " coupling references unknown level '" + c.ground + "'");
            if (!me) v.push_back(std::string(to_string(drive.field)) + " coupling references unknown level '" + c.excited + "'");
            if (mg && me && (*mg != Manifold::ground || *me != Manifold::excited)) {
                v.push_back("coupling must be ground-excited: " + describe(c));
            }
            if (!finite(c.rabi) || c.rabi < 0.0) v.push_back("negative or non-finite Rabi amplitude on " + describe(c));
        }
    }
    if (probes != 1) v.push_back(probes == 0 ? "missing probe field" : "more than one probe field");
    if (controls != 1) v.push_back(controls == 0 ? "missing control field" : "more than one control field");

    for (const auto& d : spec.decays) {
        const auto mf = manifold_of(d.from);
        const auto mt = manifold_of(d.to);
        if (!mf) v.push_back("decay references unknown level '" + d.from + "'");
        if (!mt) v.push_back("decay references unknown level '" + d.to + "'");
        if (mf && mt) {
            if (d.from == d.to) v.push_back("decay channel " + d.from + "->" + d.to + " is a self loop");
            else if (*mt != Manifold::ground) v.push_back("decay channel " + d.from + "->" + d.to + " must end on a ground level");
        }
        if (!finite(d.rate) || d.rate < 0.0) v.push_back("negative or non-finite decay rate " + d.from + "->" + d.to);
    }
    for (const auto& d : spec.dephasings) {
        if (!manifold_of(d.level)) v.push_back("dephasing references unknown level '" + d.level + "'");
        if (!finite(d.rate) || d.rate < 0.0) v.push_back("negative or non-finite dephasing rate on " + d.level);
    }

    if (v.empty()) {
        std::vector<FrameTerm> terms;
        if (auto conflict = solve_frame(spec, terms)) {
            v.push_back("no consistent rotating frame (conflict at " + *conflict + ")");
        }
    }
    return report;
}

void require_valid(const LevelSystemSpec& spec) {
    auto report = validate_system(spec);
    if (!report.ok()) throw InvalidModel(report.summary());
}

RotatingFrame assign_rotating_frame(const LevelSystemSpec& spec) {
    RotatingFrame frame;
    frame.labels = spec.labels();
    if (auto conflict = solve_frame(spec, frame.terms)) {
        throw NoConsistentFrame("no consistent rotating frame (conflict at " + *conflict + ")");
    }
    return frame;
}

LaserFrequencies laser_frequencies(const LevelSystemSpec& spec, const DetuningPoint& point) {
    LaserFrequencies lasers;
    const DriveField* control = spec.field(FieldId::control);
    const DriveField* probe = spec.field(FieldId::probe);
    const bool has_control = control && !control->couplings.empty();
    double control_ground = 0.0;
    if (has_control) {
        const auto& ref = control->couplings.front();
        control_ground = spec.levels[spec.require_index(ref.ground)].energy;
        lasers.control = spec.levels[spec.require_index(ref.excited)].energy - control_ground;
    }
    if (probe && !probe->couplings.empty()) {
        const auto& ref = probe->couplings.front();
        const double probe_ground = spec.levels[spec.require_index(ref.ground)].energy;
        if (has_control) {
            lasers.probe = lasers.control + control_ground - probe_ground - point.two_photon;
        } else {
            lasers.probe = spec.levels[spec.require_index(ref.excited)].energy - probe_ground - point.two_photon;
        }
    }
    return lasers;
}

HamiltonianBuilder::HamiltonianBuilder(const LevelSystemSpec& spec) : HamiltonianBuilder(spec, assign_rotating_frame(spec)) {}

HamiltonianBuilder::HamiltonianBuilder(const LevelSystemSpec& spec, const RotatingFrame& frame) {
    const std::size_t n = spec.levels.size();
    if (frame.terms.size() != n) throw InvalidModel("rotating frame does not match the level system");
    terms_ = frame.terms;
    for (const auto& level : spec.levels) {
        energies_.push_back(level.energy);
        excited_.push_back(level.manifold == Manifold::excited);
    }
    for (const auto& drive : spec.drives) {
        for (const auto& c : drive.couplings) {
            couplings_.push_back(Entry{static_cast<Eigen::Index>(spec.require_index(c.ground)),
                                       static_cast<Eigen::Index>(spec.require_index(c.excited)), c.rabi});
        }
    }
    if (const DriveField* control = spec.field(FieldId::control); control && !control->couplings.empty()) {
        const auto& ref = control->couplings.front();
        control_ground_ = spec.require_index(ref.ground);
        control_ground_energy_ = energies_[*control_ground_];
        control_excited_energy_ = energies_[spec.require_index(ref.excited)];
    }
    if (const DriveField* probe = spec.field(FieldId::probe); probe && !probe->couplings.empty()) {
        const auto& ref = probe->couplings.front();
        probe_ground_ = spec.require_index(ref.ground);
        probe_ground_energy_ = energies_[*probe_ground_];
        probe_excited_energy_ = energies_[spec.require_index(ref.excited)];
    }
}

void HamiltonianBuilder::fill(const DetuningPoint& point, Eigen::MatrixXcd& out) const {
    const auto n = static_cast<Eigen::Index>(energies_.size());
    out.setZero(n, n);

    // Lasers sit on the unshifted reference transitions; Delta shifts the
    // excited manifold instead.
    double control_frequency = 0.0;
    double probe_frequency = 0.0;
    if (control_ground_) control_frequency = control_excited_energy_ - control_ground_energy_;
    if (probe_ground_) {
        probe_frequency = control_ground_
                              ? control_frequency + control_ground_energy_ - probe_ground_energy_ - point.two_photon
                              : probe_excited_energy_ - probe_ground_energy_ - point.two_photon;
    }

    for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        const double shifted = excited_[k] ? energies_[k] - point.control : energies_[k];
        out(i, i) = shifted + (terms_[k].probe * probe_frequency + terms_[k].control * control_frequency);
    }

    // Gauge: reference control ground at zero.
    double gauge = 0.0;
    if (control_ground_) {
        gauge = out(static_cast<Eigen::Index>(*control_ground_), static_cast<Eigen::Index>(*control_ground_)).real();
    } else if (probe_ground_) {
        gauge = out(static_cast<Eigen::Index>(*probe_ground_), static_cast<Eigen::Index>(*probe_ground_)).real() +
                point.two_photon;
    }
    for (Eigen::Index i = 0; i < n; ++i) out(i, i) -= gauge;

    for (const auto& c : couplings_) {
        out(c.ground, c.excited) += 0.5 * c.rabi;
        out(c.excited, c.ground) += 0.5 * c.rabi;
    }
}

Hamiltonian assemble_hamiltonian(const LevelSystemSpec& spec, const RotatingFrame& frame,
                                 const DetuningPoint& point) {
    HamiltonianBuilder builder(spec, frame);
    Hamiltonian h;
    h.labels = spec.labels();
    builder.fill(point, h.matrix);
    return h;
}

Hamiltonian assemble_hamiltonian(const LevelSystemSpec& spec, const DetuningPoint& point) {
    return assemble_hamiltonian(spec, assign_rotating_frame(spec), point);
}

std::string model_fingerprint(const LevelSystemSpec& spec) {
    std::ostringstream out;
    char buf[64];
    auto num = [&](double x) {
        std::snprintf(buf, sizeof buf, "%.17g", x);
        return std::string(buf);
    };
    for (const auto& l : spec.levels) out << "L|" << l.label << '|' << to_string(l.manifold) << '|' << num(l.energy) << '\n';
    for (const auto& d : spec.drives) {
        for (const auto& c : d.couplings) {
            out << "D|" << to_string(d.field) << '|' << c.ground << '|' << c.excited << '|' << num(c.rabi) << '\n';
        }
    }
    for (const auto& d : spec.decays) out << "G|" << d.from << '|' << d.to << '|' << num(d.rate) << '\n';
    for (const auto& d : spec.dephasings) out << "P|" << d.level << '|' << num(d.rate) << '\n';
    return hash_hex(out.str());
}

double excited_linewidth(const LevelSystemSpec& spec) {
    double widest = 0.0;
    for (const auto& level : spec.levels) {
        if (level.manifold != Manifold::excited) continue;
        double total = 0.0;
        for (const auto& d : spec.decays) {
            if (d.from == level.label) total += d.rate;
        }
        widest = std::max(widest, total);
    }
    return widest;
}

double max_rabi(const LevelSystemSpec& spec, FieldId field) {
    double best = 0.0;
    if (const DriveField* f = spec.field(field)) {
        for (const auto& c : f->couplings) best = std::max(best, c.rabi);
    }
    return best;
}

}  // namespace eitsim::model
