#include "eitsim/io.hpp"
#include "eitsim/presets.hpp"

#include <doctest.h>

#include <filesystem>

using namespace eitsim;
using namespace eitsim::io;

namespace {

std::string line_error(const std::string& text) {
    try {
        const auto doc = JsonDocument::parse(text, "model.json");
        parse_model(Node(doc, ""));
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

const char* kLambda = R"({
  "units": "MHz",
  "levels": [
    {"label": "g1", "manifold": "ground", "energy": 0},
    {"label": "g2", "manifold": "ground", "energy": 1000},
    {"label": "e2", "manifold": "excited", "energy": 0}
  ],
  "drives": [
    {"field": "probe", "couplings": [{"ground": "g1", "excited": "e2", "rabi": 0.01}]},
    {"field": "control", "couplings": [{"ground": "g2", "excited": "e2", "rabi": 3}]}
  ],
  "decays": [
    {"from": "e2", "to": "g1", "rate": 5},
    {"from": "e2", "to": "g2", "rate": 5},
    {"from": "g1", "to": "g2", "rate": 0.01},
    {"from": "g2", "to": "g1", "rate": 0.01}
  ],
  "dephasings": [{"level": "g2", "rate": 0.1}, {"level": "e2", "rate": 0}]
})";

}  // namespace

TEST_CASE("units: exact power-of-ten scaling") {
    CHECK(frequency_unit("Hz") == 1.0);
    CHECK(frequency_unit("kHz") == 1e3);
    CHECK(frequency_unit("MHz") == 1e6);
    CHECK(frequency_unit("GHz") == 1e9);
    CHECK_THROWS(frequency_unit("THz"));
    CHECK(parse_frequency("140GHz") == 140e9);
    CHECK(parse_frequency(" 0.23 MHz") == doctest::Approx(0.23e6));
    CHECK(parse_power("600mW") == doctest::Approx(0.6));
    CHECK(parse_power("1e-3 W") == 1e-3);
    CHECK_THROWS(parse_frequency("12"));
    CHECK_THROWS(parse_power("abc"));
}

TEST_CASE("parse_model: MHz model matches the default-rate preset") {
    const auto doc = JsonDocument::parse(kLambda, "model.json");
    const auto file = parse_model(Node(doc, ""));
    const auto preset = presets::lambda_three_level();
    CHECK(model::model_fingerprint(file.spec) == model::model_fingerprint(preset));
    CHECK_FALSE(file.spin.has_value());
}

TEST_CASE("parse_model: round trip through model_to_json") {
    const auto spec = presets::double_eit_five_level(presets::double_eit_rates(), 13.1e6, 5e6);
    const auto text = model_to_json(spec, "Hz").dump(2);
    const auto doc = JsonDocument::parse(text, "roundtrip.json");
    CHECK(model::model_fingerprint(parse_model(Node(doc, "")).spec) == model::model_fingerprint(spec));
}

TEST_CASE("parse_model: units field is mandatory") {
    std::string text = kLambda;
    text.replace(text.find("\"units\": \"MHz\","), 15, "");
    const auto message = line_error(text);
    CHECK(message.find("missing required field 'units'") != std::string::npos);
    CHECK(message.find("model.json:1:") == 0);
}

TEST_CASE("parse_model: errors are anchored to the offending line") {
    std::string text = kLambda;
    text.replace(text.find("\"rabi\": 3"), 9, "\"rabi\": -3");
    CHECK(line_error(text).find("model.json:1:") == 0);  // whole-model validation anchors at the object

    std::string bad_manifold = kLambda;
    bad_manifold.replace(bad_manifold.find("\"manifold\": \"excited\""), 21, "\"manifold\": \"upper\"");
    CHECK(line_error(bad_manifold).find("model.json:6:") == 0);

    std::string unknown = kLambda;
    unknown.replace(unknown.find("\"energy\": 1000"), 14, "\"energy\": 1000, \"spin\": 1");
    const auto message = line_error(unknown);
    CHECK(message.find("model.json:5:") == 0);
    CHECK(message.find("unknown field 'spin'") != std::string::npos);

    CHECK(line_error("{\n  \"units\": \"MHz\",\n  \"levels\": [\n}").find("model.json:4:") == 0);
}

TEST_CASE("parse_model: spin block") {
    std::string text = kLambda;
    text.insert(text.rfind('}'),
                ",\n  \"spin\": {\"ground\": {\"D\": 1336, \"E\": 18.7, \"g\": 2, \"B_mT\": 30, \"phi_deg\": 57},\n"
                "           \"excited\": {\"D\": 775, \"g\": 2, \"B_mT\": 30, \"phi_deg\": 57}}\n");
    const auto doc = JsonDocument::parse(text, "spin.json");
    const auto file = parse_model(Node(doc, ""));
    REQUIRE(file.spin.has_value());
    CHECK(file.spin->ground.d == doctest::Approx(1336e6));
    CHECK(file.spin->ground.e == doctest::Approx(18.7e6));
    CHECK(file.spin->excited.field == doctest::Approx(0.03));
    CHECK(file.spin->excited.angle_deg == 57.0);
}

TEST_CASE("format_number: shortest round trip") {
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(1e-300) == "1e-300");
    CHECK(std::stod(format_number(2.0 / 3.0)) == 2.0 / 3.0);
}

TEST_CASE("trace CSV: provenance line, header, round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "eitsim_test_io";
    std::filesystem::remove_all(dir);
    spectra::SpectrumTrace trace;
    trace.delta = {-1e6, 0.0, 1e6};
    trace.absorbance = {1e-3, 2.5e-4, 1e-3};
    write_trace_csv(dir / "trace.csv", trace, "abc123");
    const auto text = read_text(dir / "trace.csv");
    CHECK(text.rfind(provenance_line("abc123"), 0) == 0);
    CHECK(text.find("delta_hz,absorbance\r\n") != std::string::npos);
    CHECK(text.find(std::string("# eitsim ") + std::string(kVersion)) == 0);
    const auto back = read_trace_csv(dir / "trace.csv");
    CHECK(back.delta == trace.delta);
    CHECK(back.signal == trace.absorbance);
    CHECK_FALSE(back.sigma.has_value());
    std::filesystem::remove_all(dir);
}

TEST_CASE("trace CSV: malformed rows report their line number") {
    auto row_error = [](const std::string& text) {
        try {
            parse_trace_csv(text, "obs.csv");
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(row_error("delta_hz,signal\n1,2\n2,x\n").find("obs.csv:3:") == 0);
    CHECK(row_error("delta_hz,signal\n1,2\n2\n").find("obs.csv:3:") == 0);
    CHECK(row_error("# c\ndelta_hz,signal\n2,2\n1,3\n").find("obs.csv:4:") == 0);
    CHECK(row_error("time,signal\n1,2\n").find("obs.csv:1:") == 0);
    CHECK(row_error("delta_hz,signal,sigma\n1,2,0\n").find("obs.csv:2:") == 0);
    CHECK(row_error("delta_hz,signal\n").find("no data rows") != std::string::npos);
    const auto ok = parse_trace_csv("delta_hz,signal,sigma\r\n\"1\",2,0.5\r\n", "obs.csv");
    REQUIRE(ok.sigma.has_value());
    CHECK((*ok.sigma)[0] == 0.5);
}

TEST_CASE("apply_tags: sidecar tags") {
    const auto doc = JsonDocument::parse(R"({"tags": {"power_W": 0.001, "temperature_K": 8}})", "tags.json");
    fit::ObservedTrace t;
    apply_tags(t, Node(doc, ""));
    REQUIRE(t.power.has_value());
    CHECK(*t.power == 1e-3);
    CHECK(*t.temperature == 8.0);
}

TEST_CASE("matrix CSV layout") {
    const auto dir = std::filesystem::temp_directory_path() / "eitsim_test_io_map";
    std::filesystem::remove_all(dir);
    Eigen::MatrixXd m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    write_matrix_csv(dir / "m.csv", "b\\x", {0.1, 0.2}, {1, 2, 3}, m, "h");
    const auto text = read_text(dir / "m.csv");
    CHECK(text == provenance_line("h") + "b\\x,1,2,3\r\n0.1,1,2,3\r\n0.2,4,5,6\r\n");
    std::filesystem::remove_all(dir);
}
