// model.hpp: declarative level systems, rotating frames and RWA Hamiltonians.
//
// All energies, rates and Rabi amplitudes are ordinary frequencies in Hz.
// Conversion to angular units happens once, inside the Lindblad engine.

#pragma once

#include "eitsim/common.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace eitsim::model {

enum class Manifold { ground, excited };
enum class FieldId { probe, control };

const char* to_string(Manifold m);
const char* to_string(FieldId f);

struct Level {
    std::string label;
    Manifold manifold = Manifold::ground;
    double energy = 0.0;  ///< Hz, relative to the other levels of the same manifold
};

struct Coupling {
    std::string ground;
    std::string excited;
    double rabi = 0.0;  ///< Hz
};

struct DriveField {
    FieldId field = FieldId::probe;
    std::vector<Coupling> couplings;
};

/// Incoherent transfer `from` -> `to`. Excited->ground is radiative decay;
/// ground->ground channels carry the effective ground relaxation.
struct DecayChannel {
    std::string from;
    std::string to;
    double rate = 0.0;  ///< Hz, population transfer rate
};

/// Pure dephasing on one level: every coherence between this level and an
/// undephased level decays at `rate`.
struct Dephasing {
    std::string level;
    double rate = 0.0;  ///< Hz
};

struct LevelSystemSpec {
    std::vector<Level> levels;
    std::vector<DriveField> drives;
    std::vector<DecayChannel> decays;
    std::vector<Dephasing> dephasings;

    std::size_t dimension() const noexcept { return levels.size(); }
    std::optional<std::size_t> index_of(const std::string& label) const;
    std::size_t require_index(const std::string& label) const;
    const DriveField* field(FieldId id) const;
    DriveField* field(FieldId id);
    std::vector<std::string> labels() const;
};

/// Shared optical shift Δ of the defect and probe two-photon detuning δ.
struct DetuningPoint {
    double control = 0.0;     ///< Δ, Hz
    double two_photon = 0.0;  ///< δ, Hz
};

/// Frame frequency of one level as an integer combination of the two laser
/// frequency classes: `probe * f_probe + control * f_control`.
struct FrameTerm {
    int probe = 0;
    int control = 0;

    friend bool operator==(const FrameTerm&, const FrameTerm&) = default;
};

struct RotatingFrame {
    std::vector<std::string> labels;
    std::vector<FrameTerm> terms;

    const FrameTerm& at(const std::string& label) const;
    double frequency(std::size_t level, double probe_frequency, double control_frequency) const {
        return terms[level].probe * probe_frequency + terms[level].control * control_frequency;
    }
};

struct ValidationReport {
    std::vector<std::string> violations;
    bool ok() const noexcept { return violations.empty(); }
    std::string summary() const;
};

ValidationReport validate_system(const LevelSystemSpec& spec);

/// Throws InvalidModel with the report summary when validation fails.
void require_valid(const LevelSystemSpec& spec);

/// Solves frame(g) - frame(e) = class(field) over the coupling graph.
/// Throws NoConsistentFrame when a cycle over-constrains the assignment.
RotatingFrame assign_rotating_frame(const LevelSystemSpec& spec);

struct Hamiltonian {
    std::vector<std::string> labels;
    Eigen::MatrixXcd matrix;  ///< Hz
};

/// Time-independent RWA Hamiltonian in the given frame.
///
/// The reference control transition is the first control coupling and the
/// reference two-photon resonance pairs its ground level with the ground level
/// of the first probe coupling. The result has the reference control ground
/// level at 0, excited levels at (splitting - Δ) and the probe ground at -δ.
Hamiltonian assemble_hamiltonian(const LevelSystemSpec& spec, const RotatingFrame& frame,
                                 const DetuningPoint& point);

Hamiltonian assemble_hamiltonian(const LevelSystemSpec& spec, const DetuningPoint& point);

/// Index-resolved form of assemble_hamiltonian for sweeps: fills a
/// preallocated matrix with bit-identical results.
class HamiltonianBuilder {
public:
    HamiltonianBuilder(const LevelSystemSpec& spec, const RotatingFrame& frame);
    explicit HamiltonianBuilder(const LevelSystemSpec& spec);

    std::size_t dimension() const noexcept { return energies_.size(); }
    void fill(const DetuningPoint& point, Eigen::MatrixXcd& out) const;

private:
    struct Entry {
        Eigen::Index ground;
        Eigen::Index excited;
        double rabi;
    };
    std::vector<double> energies_;
    std::vector<bool> excited_;
    std::vector<FrameTerm> terms_;
    std::vector<Entry> couplings_;
    double control_ground_energy_ = 0.0;
    double control_excited_energy_ = 0.0;
    double probe_ground_energy_ = 0.0;
    double probe_excited_energy_ = 0.0;
    std::optional<std::size_t> control_ground_;
    std::optional<std::size_t> probe_ground_;
};

/// Laser frequencies implied by a detuning point, measured on the same
/// energy axis as the level energies (excited energies before the Δ shift).
struct LaserFrequencies {
    double probe = 0.0;
    double control = 0.0;
};
LaserFrequencies laser_frequencies(const LevelSystemSpec& spec, const DetuningPoint& point);

/// Stable textual fingerprint of a spec (FNV-1a of a canonical dump).
std::string model_fingerprint(const LevelSystemSpec& spec);

/// Largest total radiative decay rate out of any excited level, Hz.
double excited_linewidth(const LevelSystemSpec& spec);

double max_rabi(const LevelSystemSpec& spec, FieldId field);

}  // namespace eitsim::model
