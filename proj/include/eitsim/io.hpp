// io.hpp: model/config JSON, trace and map CSV, fit result serialization.
//
// CSV files are RFC 4180 with one leading `#` provenance line (version and
// config hash); readers skip lines starting with `#`.

#pragma once

#include "eitsim/fit.hpp"
#include "eitsim/model.hpp"
#include "eitsim/spectra.hpp"
#include "eitsim/spin.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace eitsim::io {

using Json = nlohmann::ordered_json;

/// Malformed input; the message is anchored as "source:line: ...".
class ConfigError : public Error {
public:
    ConfigError(const std::string& what, int line) : Error(what), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

/// Scale to Hz for "Hz", "kHz", "MHz", "GHz".
double frequency_unit(const std::string& units);

/// Parses quantities such as "140GHz", "0.23 MHz", "600mW", "1e-3 W" into SI (Hz or W).
double parse_frequency(const std::string& text);
double parse_power(const std::string& text);

/// JSON text with the source line of every value, addressed by JSON pointer.
class JsonDocument {
public:
    static JsonDocument parse(const std::string& text, const std::string& source);
    static JsonDocument load(const std::filesystem::path& path);

    const Json& root() const noexcept { return root_; }
    const std::string& source() const noexcept { return source_; }
    int line_of(const std::string& pointer) const;

    [[noreturn]] void fail(const std::string& pointer, const std::string& message) const;

private:
    Json root_;
    std::string source_;
    std::map<std::string, int> lines_;
};

/// Typed access to one JSON object with line-anchored errors.
class Node {
public:
    Node(const JsonDocument& doc, std::string pointer);

    const Json& value() const;
    const std::string& pointer() const noexcept { return pointer_; }
    bool has(const std::string& key) const;
    Node operator[](const std::string& key) const;
    Node operator[](std::size_t index) const;
    std::size_t size() const;

    double number() const;
    double number(const std::string& key, std::optional<double> fallback = std::nullopt) const;
    long long integer(const std::string& key, std::optional<long long> fallback = std::nullopt) const;
    std::string string() const;
    std::string string(const std::string& key, std::optional<std::string> fallback = std::nullopt) const;
    bool boolean(const std::string& key, std::optional<bool> fallback = std::nullopt) const;
    void require_object() const;
    void require_array() const;
    /// Rejects keys outside `allowed`.
    void only_keys(const std::vector<std::string>& allowed) const;

    [[noreturn]] void fail(const std::string& message) const { doc_->fail(pointer_, message); }

private:
    const JsonDocument* doc_;
    std::string pointer_;
};

struct SpinPair {
    spin::SpinModel ground;
    spin::SpinModel excited;
};

struct ModelFile {
    model::LevelSystemSpec spec;
    std::optional<SpinPair> spin;
};

/// Reads the {units, levels, drives, decays, dephasings[, spin]} model object at `node`.
ModelFile parse_model(const Node& node);
ModelFile read_model(const std::filesystem::path& path);

/// Canonical model JSON in the given frequency unit.
Json model_to_json(const model::LevelSystemSpec& spec, const std::string& units = "Hz",
                   const std::optional<SpinPair>& spin = std::nullopt);

/// Exact, locale-independent shortest round-trip formatting.
std::string format_number(double value);

/// Provenance line written first in every CSV.
std::string provenance_line(const std::string& config_hash);

/// Columns delta_hz,absorbance[,sigma].
void write_trace_csv(const std::filesystem::path& path, const spectra::SpectrumTrace& trace,
                     const std::string& config_hash, const std::vector<double>* sigma = nullptr);

Json trace_metadata(const spectra::SpectrumTrace& trace, const std::string& config_hash);

/// Rows follow B (first column, tesla); the header row carries the difference frequencies.
void write_map_csv(const std::filesystem::path& path, const spectra::MagnetoMap& map, const std::string& config_hash);

/// Generic matrix CSV: header row `corner,col...`, then `row,values...`.
void write_matrix_csv(const std::filesystem::path& path, const std::string& corner,
                      const std::vector<double>& rows, const std::vector<double>& cols, const Eigen::MatrixXd& values,
                      const std::string& config_hash);

/// Reads delta_hz,signal[,sigma] (or absorbance for signal) with a header row. Errors name the 1-based file line.
fit::ObservedTrace read_trace_csv(const std::filesystem::path& path);
fit::ObservedTrace parse_trace_csv(const std::string& text, const std::string& source);

/// Sidecar tags: {"tags": {"power_W": ..., "temperature_K": ...}} or the tags object itself.
void apply_tags(fit::ObservedTrace& trace, const Node& node);

void write_residuals_csv(const std::filesystem::path& path, const std::vector<fit::ObservedTrace>& traces,
                         const fit::FitResult& result, const std::string& config_hash);

Json fit_result_to_json(const fit::FitResult& result, const fit::IdentifiabilityReport* report,
                        const std::string& config_hash);

/// Writes `text` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace eitsim::io
