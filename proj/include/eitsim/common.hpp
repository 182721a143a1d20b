// common.hpp: shared constants, error types and small numeric helpers.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace eitsim {

inline constexpr std::string_view kVersion = "0.3.0";

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Bohr magneton over Planck's constant, Hz per tesla.
inline constexpr double kBohrMagnetonHzPerTesla = 13.996e9;

/// Base for everything the library throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidModel : public Error {
public:
    using Error::Error;
};

class NoConsistentFrame : public Error {
public:
    using Error::Error;
};

class DegenerateSteadyState : public Error {
public:
    DegenerateSteadyState(const std::string& what, int null_dimension)
        : Error(what), null_dimension_(null_dimension) {}
    int null_dimension() const noexcept { return null_dimension_; }

private:
    int null_dimension_;
};

class StepSizeUnderflow : public Error {
public:
    StepSizeUnderflow(const std::string& what, double time, double step)
        : Error(what), time_(time), step_(step) {}
    double time() const noexcept { return time_; }
    double step() const noexcept { return step_; }

private:
    double time_;
    double step_;
};

/// Engine failure at a particular (Δ, δ) of a spectrum sweep.
class SpectrumPointError : public Error {
public:
    SpectrumPointError(const std::string& what, double control_detuning, double two_photon_detuning)
        : Error(what), control_detuning_(control_detuning), two_photon_detuning_(two_photon_detuning) {}
    double control_detuning() const noexcept { return control_detuning_; }
    double two_photon_detuning() const noexcept { return two_photon_detuning_; }

private:
    double control_detuning_;
    double two_photon_detuning_;
};

class NonConvergedSampling : public Error {
public:
    NonConvergedSampling(const std::string& what, double max_relative_change)
        : Error(what), max_relative_change_(max_relative_change) {}
    double max_relative_change() const noexcept { return max_relative_change_; }

private:
    double max_relative_change_;
};

class NoSignChange : public Error {
public:
    using Error::Error;
};

/// 64-bit FNV-1a; used for model fingerprints and config hashes.
class Fnv1a {
public:
    void update(std::string_view bytes) noexcept {
        for (unsigned char c : bytes) {
            state_ ^= c;
            state_ *= 0x100000001b3ULL;
        }
    }
    std::uint64_t digest() const noexcept { return state_; }
    std::string hex() const;

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string Fnv1a::hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    std::uint64_t v = state_;
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

inline std::string hash_hex(std::string_view bytes) {
    Fnv1a h;
    h.update(bytes);
    return h.hex();
}

}  // namespace eitsim
