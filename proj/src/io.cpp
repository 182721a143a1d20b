#include "eitsim/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace eitsim::io {

namespace {

// Records the line of every value in already-validated JSON text.
class LineScanner {
public:
    LineScanner(const std::string& text, std::map<std::string, int>& lines) : text_(text), lines_(lines) {}

    void run() {
        skip();
        value("");
    }

private:
    void skip() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
            if (text_[pos_] == '\n') ++line_;
            ++pos_;
        }
    }

    std::string string_token() {
        std::string out;
        ++pos_;
        while (pos_ < text_.size() && text_[pos_] != '"') {
            if (text_[pos_] == '\\') {
                out += text_[pos_ + 1];
                pos_ += 2;
                continue;
            }
            out += text_[pos_++];
        }
        ++pos_;
        return out;
    }

    static std::string escape(const std::string& key) {
        std::string out;
        for (char c : key) {
            if (c == '~') {
                out += "~0";
            } else if (c == '/') {
                out += "~1";
            } else {
                out += c;
            }
        }
        return out;
    }

    void value(const std::string& pointer) {
        lines_[pointer] = line_;
        if (pos_ >= text_.size()) return;
        const char c = text_[pos_];
        if (c == '{') {
            ++pos_;
            skip();
            while (pos_ < text_.size() && text_[pos_] != '}') {
                const std::string key = string_token();
                const int key_line = line_;
                skip();
                ++pos_;  // ':'
                skip();
                const std::string child = pointer + "/" + escape(key);
                value(child);
                lines_[child] = key_line;
                skip();
                if (text_[pos_] == ',') {
                    ++pos_;
                    skip();
                }
            }
            ++pos_;
        } else if (c == '[') {
            ++pos_;
            skip();
            std::size_t index = 0;
            while (pos_ < text_.size() && text_[pos_] != ']') {
                value(pointer + "/" + std::to_string(index++));
                skip();
                if (text_[pos_] == ',') {
                    ++pos_;
                    skip();
                }
            }
            ++pos_;
        } else if (c == '"') {
            string_token();
        } else {
            while (pos_ < text_.size() && text_[pos_] != ',' && text_[pos_] != '}' && text_[pos_] != ']' &&
                   !std::isspace(static_cast<unsigned char>(text_[pos_]))) {
                ++pos_;
            }
        }
    }

    const std::string& text_;
    std::map<std::string, int>& lines_;
    std::size_t pos_ = 0;
    int line_ = 1;
};

std::string trim(const std::string& s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

double parse_quantity(const std::string& text, const std::map<std::string, double>& units, const char* what) {
    const std::string t = trim(text);
    double value = 0.0;
    const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (ec != std::errc()) throw Error(std::string("cannot parse ") + what + " '" + text + "'");
    const std::string unit = trim(std::string(end, t.data() + t.size()));
    const auto it = units.find(unit);
    if (it == units.end()) throw Error(std::string("unknown ") + what + " unit in '" + text + "'");
    return value * it->second;
}

const char* manifold_name(model::Manifold m) { return m == model::Manifold::ground ? "ground" : "excited"; }

spin::SpinModel parse_spin(const Node& node, double unit) {
    node.require_object();
    node.only_keys({"D", "E", "g", "B_mT", "phi_deg"});
    spin::SpinModel m;
    m.d = node.number("D") * unit;
    m.e = node.number("E", 0.0) * unit;
    m.g_factor = node.number("g", 2.0);
    m.field = node.number("B_mT", 0.0) * 1e-3;
    m.angle_deg = node.number("phi_deg", 0.0);
    try {
        spin::validate(m);
    } catch (const Error& e) {
        node.fail(e.what());
    }
    return m;
}

Json spin_to_json(const spin::SpinModel& m, double unit) {
    Json j;
    j["D"] = m.d / unit;
    j["E"] = m.e / unit;
    j["g"] = m.g_factor;
    j["B_mT"] = m.field * 1e3;
    j["phi_deg"] = m.angle_deg;
    return j;
}

std::vector<std::string> split_csv_line(const std::string& line, const std::string& source, int line_number) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(field);
            field.clear();
        } else {
            field += c;
        }
    }
    if (quoted) throw ConfigError(source + ":" + std::to_string(line_number) + ": unterminated quoted field", line_number);
    out.push_back(field);
    return out;
}

}  // namespace

double frequency_unit(const std::string& units) {
    if (units == "Hz") return 1.0;
    if (units == "kHz") return 1e3;
    if (units == "MHz") return 1e6;
    if (units == "GHz") return 1e9;
    throw Error("unknown frequency unit '" + units + "' (expected Hz, kHz, MHz or GHz)");
}

double parse_frequency(const std::string& text) {
    return parse_quantity(text, {{"Hz", 1.0}, {"kHz", 1e3}, {"MHz", 1e6}, {"GHz", 1e9}}, "frequency");
}

double parse_power(const std::string& text) {
    return parse_quantity(text, {{"W", 1.0}, {"mW", 1e-3}, {"uW", 1e-6}}, "power");
}

JsonDocument JsonDocument::parse(const std::string& text, const std::string& source) {
    JsonDocument doc;
    doc.source_ = source;
    try {
        doc.root_ = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        int line = 1;
        for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i) {
            if (text[i] == '\n') ++line;
        }
        throw ConfigError(source + ":" + std::to_string(line) + ": invalid JSON: " + e.what(), line);
    }
    LineScanner(text, doc.lines_).run();
    return doc;
}

JsonDocument JsonDocument::load(const std::filesystem::path& path) {
    return parse(read_text(path), path.string());
}

int JsonDocument::line_of(const std::string& pointer) const {
    std::string p = pointer;
    for (;;) {
        const auto it = lines_.find(p);
        if (it != lines_.end()) return it->second;
        if (p.empty()) return 1;
        p = p.substr(0, p.rfind('/'));
    }
}

void JsonDocument::fail(const std::string& pointer, const std::string& message) const {
    const int line = line_of(pointer);
    throw ConfigError(source_ + ":" + std::to_string(line) + ": " + message + " (at " +
                          (pointer.empty() ? std::string("/") : pointer) + ")",
                      line);
}

Node::Node(const JsonDocument& doc, std::string pointer) : doc_(&doc), pointer_(std::move(pointer)) {}

const Json& Node::value() const {
    return doc_->root().at(nlohmann::ordered_json::json_pointer(pointer_));
}

bool Node::has(const std::string& key) const { return value().is_object() && value().contains(key); }

Node Node::operator[](const std::string& key) const {
    require_object();
    if (!value().contains(key)) fail("missing required field '" + key + "'");
    return Node(*doc_, pointer_ + "/" + key);
}

Node Node::operator[](std::size_t index) const {
    require_array();
    if (index >= value().size()) fail("index out of range");
    return Node(*doc_, pointer_ + "/" + std::to_string(index));
}

std::size_t Node::size() const {
    require_array();
    return value().size();
}

double Node::number() const {
    const auto& v = value();
    if (!v.is_number()) fail("expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail("expected a finite number");
    return d;
}

double Node::number(const std::string& key, std::optional<double> fallback) const {
    if (!has(key)) {
        if (fallback) return *fallback;
        (*this)[key];
    }
    return (*this)[key].number();
}

long long Node::integer(const std::string& key, std::optional<long long> fallback) const {
    if (!has(key)) {
        if (fallback) return *fallback;
        (*this)[key];
    }
    const Node n = (*this)[key];
    if (!n.value().is_number_integer()) n.fail("expected an integer");
    return n.value().get<long long>();
}

std::string Node::string() const {
    if (!value().is_string()) fail("expected a string");
    return value().get<std::string>();
}

std::string Node::string(const std::string& key, std::optional<std::string> fallback) const {
    if (!has(key)) {
        if (fallback) return *fallback;
        (*this)[key];
    }
    return (*this)[key].string();
}

bool Node::boolean(const std::string& key, std::optional<bool> fallback) const {
    if (!has(key)) {
        if (fallback) return *fallback;
        (*this)[key];
    }
    const Node n = (*this)[key];
    if (!n.value().is_boolean()) n.fail("expected true or false");
    return n.value().get<bool>();
}

void Node::require_object() const {
    if (!value().is_object()) fail("expected an object");
}

void Node::require_array() const {
    if (!value().is_array()) fail("expected an array");
}

void Node::only_keys(const std::vector<std::string>& allowed) const {
    require_object();
    for (const auto& [key, _] : value().items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            Node(*doc_, pointer_ + "/" + key).fail("unknown field '" + key + "'");
        }
    }
}

ModelFile parse_model(const Node& node) {
    node.only_keys({"units", "levels", "drives", "decays", "dephasings", "spin", "description"});
    const Node units_node = node["units"];
    double unit = 1.0;
    try {
        unit = frequency_unit(units_node.string());
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        units_node.fail(e.what());
    }

    ModelFile out;
    auto& spec = out.spec;
    const Node levels = node["levels"];
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const Node l = levels[i];
        l.only_keys({"label", "manifold", "energy"});
        model::Level level;
        level.label = l.string("label");
        const std::string manifold = l.string("manifold");
        if (manifold == "ground") {
            level.manifold = model::Manifold::ground;
        } else if (manifold == "excited") {
            level.manifold = model::Manifold::excited;
        } else {
            l["manifold"].fail("manifold must be 'ground' or 'excited'");
        }
        level.energy = l.number("energy", 0.0) * unit;
        spec.levels.push_back(level);
    }
    if (node.has("drives")) {
        const Node drives = node["drives"];
        for (std::size_t i = 0; i < drives.size(); ++i) {
            const Node d = drives[i];
            d.only_keys({"field", "couplings"});
            model::DriveField field;
            const std::string id = d.string("field");
            if (id == "probe") {
                field.field = model::FieldId::probe;
            } else if (id == "control") {
                field.field = model::FieldId::control;
            } else {
                d["field"].fail("field must be 'probe' or 'control'");
            }
            const Node couplings = d["couplings"];
            for (std::size_t k = 0; k < couplings.size(); ++k) {
                const Node c = couplings[k];
                c.only_keys({"ground", "excited", "rabi"});
                field.couplings.push_back(model::Coupling{c.string("ground"), c.string("excited"), c.number("rabi") * unit});
            }
            spec.drives.push_back(field);
        }
    }
    if (node.has("decays")) {
        const Node decays = node["decays"];
        for (std::size_t i = 0; i < decays.size(); ++i) {
            const Node d = decays[i];
            d.only_keys({"from", "to", "rate"});
            spec.decays.push_back(model::DecayChannel{d.string("from"), d.string("to"), d.number("rate") * unit});
        }
    }
    if (node.has("dephasings")) {
        const Node dephasings = node["dephasings"];
        for (std::size_t i = 0; i < dephasings.size(); ++i) {
            const Node d = dephasings[i];
            d.only_keys({"level", "rate"});
            spec.dephasings.push_back(model::Dephasing{d.string("level"), d.number("rate") * unit});
        }
    }
    const auto report = model::validate_system(spec);
    if (!report.ok()) node.fail("invalid model: " + report.summary());

    if (node.has("spin")) {
        const Node s = node["spin"];
        s.only_keys({"ground", "excited"});
        out.spin = SpinPair{parse_spin(s["ground"], unit), parse_spin(s["excited"], unit)};
        if (out.spin->ground.field != out.spin->excited.field ||
            out.spin->ground.angle_deg != out.spin->excited.angle_deg) {
            s.fail("ground and excited spin blocks must share B_mT and phi_deg");
        }
    }
    return out;
}

ModelFile read_model(const std::filesystem::path& path) {
    const auto doc = JsonDocument::load(path);
    return parse_model(Node(doc, ""));
}

Json model_to_json(const model::LevelSystemSpec& spec, const std::string& units, const std::optional<SpinPair>& spin) {
    const double unit = frequency_unit(units);
    Json j;
    j["units"] = units;
    j["levels"] = Json::array();
    for (const auto& l : spec.levels) {
        j["levels"].push_back(Json{{"label", l.label}, {"manifold", manifold_name(l.manifold)}, {"energy", l.energy / unit}});
    }
    j["drives"] = Json::array();
    for (const auto& d : spec.drives) {
        Json couplings = Json::array();
        for (const auto& c : d.couplings) {
            couplings.push_back(Json{{"ground", c.ground}, {"excited", c.excited}, {"rabi", c.rabi / unit}});
        }
        j["drives"].push_back(Json{{"field", model::to_string(d.field)}, {"couplings", couplings}});
    }
    j["decays"] = Json::array();
    for (const auto& d : spec.decays) j["decays"].push_back(Json{{"from", d.from}, {"to", d.to}, {"rate", d.rate / unit}});
    j["dephasings"] = Json::array();
    for (const auto& d : spec.dephasings) j["dephasings"].push_back(Json{{"level", d.level}, {"rate", d.rate / unit}});
    if (spin) j["spin"] = Json{{"ground", spin_to_json(spin->ground, unit)}, {"excited", spin_to_json(spin->excited, unit)}};
    return j;
}

std::string format_number(double value) {
    char buffer[64];
    const auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
    if (ec != std::errc()) throw Error("number formatting failed");
    return std::string(buffer, end);
}

std::string provenance_line(const std::string& config_hash) {
    return "# eitsim " + std::string(kVersion) + " config " + config_hash + "\r\n";
}

void write_trace_csv(const std::filesystem::path& path, const spectra::SpectrumTrace& trace,
                     const std::string& config_hash, const std::vector<double>* sigma) {
    std::string out = provenance_line(config_hash);
    out += sigma ? "delta_hz,absorbance,sigma\r\n" : "delta_hz,absorbance\r\n";
    for (std::size_t i = 0; i < trace.delta.size(); ++i) {
        out += format_number(trace.delta[i]) + "," + format_number(trace.absorbance[i]);
        if (sigma) out += "," + format_number((*sigma)[i]);
        out += "\r\n";
    }
    write_text(path, out);
}

Json trace_metadata(const spectra::SpectrumTrace& trace, const std::string& config_hash) {
    Json j;
    j["version"] = std::string(kVersion);
    j["config_hash"] = config_hash;
    j["model_hash"] = trace.metadata.model_hash;
    j["mode"] = trace.metadata.mode;
    j["control_detuning_hz"] = trace.metadata.control_detuning;
    if (trace.metadata.inhomogeneity) {
        const auto& in = *trace.metadata.inhomogeneity;
        j["inhomogeneity"] = Json{{"fwhm_hz", in.fwhm},
                                  {"n_samples", in.n_samples},
                                  {"truncation_sigma", in.truncation},
                                  {"tiered", in.tiered}};
    }
    j["samples_used"] = trace.metadata.samples_used;
    j["tiered_sampling"] = trace.metadata.tiered_sampling;
    j["points"] = trace.delta.size();
    return j;
}

void write_matrix_csv(const std::filesystem::path& path, const std::string& corner, const std::vector<double>& rows,
                      const std::vector<double>& cols, const Eigen::MatrixXd& values, const std::string& config_hash) {
    std::string out = provenance_line(config_hash);
    out += corner;
    for (double c : cols) out += "," + format_number(c);
    out += "\r\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out += format_number(rows[r]);
        for (std::size_t c = 0; c < cols.size(); ++c) {
            out += "," + format_number(values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
        }
        out += "\r\n";
    }
    write_text(path, out);
}

void write_map_csv(const std::filesystem::path& path, const spectra::MagnetoMap& map, const std::string& config_hash) {
    write_matrix_csv(path, "b_tesla\\difference_hz", map.b_grid, map.difference_grid, map.absorbance, config_hash);
}

fit::ObservedTrace parse_trace_csv(const std::string& text, const std::string& source) {
    fit::ObservedTrace trace;
    trace.name = source;
    std::istringstream in(text);
    std::string line;
    int line_number = 0;
    bool header_seen = false;
    std::size_t columns = 0;
    std::vector<double> sigma;
    auto fail = [&](const std::string& message) -> void {
        throw ConfigError(source + ":" + std::to_string(line_number) + ": " + message, line_number);
    };
    while (std::getline(in, line)) {
        ++line_number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || line[0] == '#') continue;
        const auto fields = split_csv_line(line, source, line_number);
        if (!header_seen) {
            std::vector<std::string> names;
            for (const auto& f : fields) names.push_back(trim(f));
            const bool ok = (names.size() == 2 || names.size() == 3) && names[0] == "delta_hz" &&
                            (names[1] == "signal" || names[1] == "absorbance") &&
                            (names.size() == 2 || names[2] == "sigma");
            if (!ok) fail("header must be delta_hz,signal[,sigma] or delta_hz,absorbance[,sigma]");
            columns = names.size();
            header_seen = true;
            continue;
        }
        if (fields.size() != columns) {
            fail("row has " + std::to_string(fields.size()) + " fields, expected " + std::to_string(columns));
        }
        double values[3] = {0.0, 0.0, 0.0};
        for (std::size_t c = 0; c < columns; ++c) {
            const std::string f = trim(fields[c]);
            const auto [end, ec] = std::from_chars(f.data(), f.data() + f.size(), values[c]);
            if (ec != std::errc() || end != f.data() + f.size() || f.empty() || !std::isfinite(values[c])) {
                fail("cannot parse '" + fields[c] + "' as a number");
            }
        }
        if (!trace.delta.empty() && !(values[0] > trace.delta.back())) fail("delta_hz must be strictly increasing");
        if (columns == 3 && !(values[2] > 0.0)) fail("sigma must be positive");
        trace.delta.push_back(values[0]);
        trace.signal.push_back(values[1]);
        if (columns == 3) sigma.push_back(values[2]);
    }
    if (!header_seen) throw ConfigError(source + ":1: missing header row", 1);
    if (trace.delta.empty()) throw ConfigError(source + ":" + std::to_string(line_number) + ": no data rows", line_number);
    if (columns == 3) trace.sigma = std::move(sigma);
    return trace;
}

fit::ObservedTrace read_trace_csv(const std::filesystem::path& path) {
    return parse_trace_csv(read_text(path), path.string());
}

void apply_tags(fit::ObservedTrace& trace, const Node& node) {
    const Node tags = node.has("tags") ? node["tags"] : node;
    tags.require_object();
    if (tags.has("power_W")) {
        const double p = tags.number("power_W");
        if (!(p > 0.0)) tags["power_W"].fail("power_W must be positive");
        trace.power = p;
    }
    if (tags.has("temperature_K")) trace.temperature = tags.number("temperature_K");
}

void write_residuals_csv(const std::filesystem::path& path, const std::vector<fit::ObservedTrace>& traces,
                         const fit::FitResult& result, const std::string& config_hash) {
    std::string out = provenance_line(config_hash);
    out += "trace,delta_hz,signal,model,residual\r\n";
    for (std::size_t t = 0; t < traces.size(); ++t) {
        for (std::size_t i = 0; i < traces[t].delta.size(); ++i) {
            out += std::to_string(t) + "," + format_number(traces[t].delta[i]) + "," +
                   format_number(traces[t].signal[i]) + "," + format_number(result.model[t][i]) + "," +
                   format_number(result.residuals[t][i]) + "\r\n";
        }
    }
    write_text(path, out);
}

Json fit_result_to_json(const fit::FitResult& result, const fit::IdentifiabilityReport* report,
                        const std::string& config_hash) {
    Json j;
    j["version"] = std::string(kVersion);
    j["config_hash"] = config_hash;
    j["converged"] = result.converged;
    j["status"] = result.status;
    j["iterations"] = result.iterations;
    j["evaluations"] = result.evaluations;
    j["residual_norm"] = result.residual_norm;
    j["chi2"] = result.chi2;
    j["reduced_chi2"] = result.reduced_chi2;
    j["estimates"] = Json::array();
    for (const auto& e : result.estimates) {
        Json item{{"name", e.name}, {"path", e.path}, {"value", e.value}, {"uncertainty", e.uncertainty},
                  {"at_bound", e.at_bound}, {"identifiable", e.identifiable}};
        if (e.trace >= 0) item["trace"] = e.trace;
        j["estimates"].push_back(item);
    }
    j["nuisance"] = Json::array();
    for (std::size_t t = 0; t < result.scale.size(); ++t) {
        j["nuisance"].push_back(Json{{"trace", t},
                                     {"scale", result.scale[t]},
                                     {"scale_uncertainty", result.scale_uncertainty[t]},
                                     {"offset", result.offset[t]},
                                     {"offset_uncertainty", result.offset_uncertainty[t]}});
    }
    j["covariance"] = Json{{"labels", result.covariance_labels}, {"matrix", Json::array()}};
    for (Eigen::Index r = 0; r < result.covariance.rows(); ++r) {
        Json jr = Json::array();
        for (Eigen::Index c = 0; c < result.covariance.cols(); ++c) jr.push_back(result.covariance(r, c));
        j["covariance"]["matrix"].push_back(jr);
    }
    if (result.combined_width) j["combined_width"] = *result.combined_width;
    j["warnings"] = result.warnings;
    if (report) {
        Json id;
        id["parameters"] = report->names;
        id["sensitivity"] = report->sensitivity;
        id["degenerate_pairs"] = Json::array();
        for (const auto& p : report->degenerate) {
            id["degenerate_pairs"].push_back(Json{{"first", p.first}, {"second", p.second}, {"correlation", p.correlation}});
        }
        id["unidentifiable"] = report->unidentifiable;
        j["identifiability"] = id;
    }
    return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string() + ":1: cannot open file", 1);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace eitsim::io
