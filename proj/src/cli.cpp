#include "eitsim/cli.hpp"

#include "eitsim/presets.hpp"
#include "eitsim/spectra.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <iostream>
#include <random>
#include <sstream>

namespace eitsim::cli {

namespace fs = std::filesystem;
using io::Json;
using io::Node;

namespace {

struct CommonOptions {
    std::string config;
    std::string out = ".";
    std::optional<int> workers;
    std::optional<std::uint64_t> seed;
    std::string preset;
    bool check_convergence = false;
};

/// Reads quantities from one config document; bare numbers need a top-level "units".
class ConfigReader {
public:
    ConfigReader(const io::JsonDocument& doc, fs::path base) : doc_(doc), base_(std::move(base)) {
        const Node root = this->root();
        root.require_object();
        if (root.has("units")) {
            try {
                units_ = io::frequency_unit(root.string("units"));
            } catch (const io::ConfigError&) {
                throw;
            } catch (const Error& e) {
                root["units"].fail(e.what());
            }
        }
    }

    Node root() const { return Node(doc_, ""); }
    const fs::path& base() const { return base_; }

    double frequency(const Node& n) const {
        if (n.value().is_string()) {
            try {
                return io::parse_frequency(n.string());
            } catch (const Error& e) {
                n.fail(e.what());
            }
        }
        if (!units_) n.fail("bare number needs a top-level \"units\" field or a unit string such as \"10MHz\"");
        return n.number() * *units_;
    }

    double frequency(const Node& parent, const std::string& key, std::optional<double> fallback = std::nullopt) const {
        if (!parent.has(key) && fallback) return *fallback;
        return frequency(parent[key]);
    }

    double power(const Node& n) const {
        if (!n.value().is_string()) n.fail("power needs a unit string such as \"1mW\"");
        double p = 0.0;
        try {
            p = io::parse_power(n.string());
        } catch (const Error& e) {
            n.fail(e.what());
        }
        if (!(p > 0.0)) n.fail("power must be positive");
        return p;
    }

    std::vector<double> grid(const Node& n) const {
        n.require_object();
        n.only_keys({"start", "stop", "points", "half_width", "values"});
        std::vector<double> out;
        if (n.has("values")) {
            const Node values = n["values"];
            for (std::size_t i = 0; i < values.size(); ++i) out.push_back(frequency(values[i]));
        } else {
            const long long points = n.integer("points");
            if (points < 1) n["points"].fail("grid is empty: points must be at least 1");
            if (points > 1000000) n["points"].fail("grid has too many points");
            if (n.has("half_width")) {
                const double half = frequency(n["half_width"]);
                if (!(half >= 0.0)) n["half_width"].fail("half_width must be non-negative");
                out = points == 1 ? std::vector<double>{0.0} : spectra::symmetric_grid(half, static_cast<int>(points));
            } else {
                const double start = frequency(n["start"]);
                const double stop = frequency(n["stop"]);
                out = points == 1 ? std::vector<double>{start} : spectra::linspace(start, stop, static_cast<int>(points));
            }
        }
        if (out.empty()) n.fail("grid is empty");
        for (std::size_t i = 1; i < out.size(); ++i) {
            if (!(out[i] > out[i - 1])) n.fail("grid values must be strictly increasing");
        }
        return out;
    }

    std::optional<spectra::InhomogeneitySpec> inhomogeneity(const Node& n) const {
        if (n.value().is_null()) return std::nullopt;
        n.require_object();
        n.only_keys({"fwhm", "n_samples", "truncation_sigma", "tiered"});
        spectra::InhomogeneitySpec s;
        s.fwhm = frequency(n["fwhm"]);
        s.n_samples = static_cast<int>(n.integer("n_samples", 801));
        s.truncation = n.number("truncation_sigma", 4.0);
        s.tiered = n.boolean("tiered", true);
        try {
            spectra::validate(s);
        } catch (const Error& e) {
            n.fail(e.what());
        }
        return s;
    }

    /// Inline model object or a path to a model file, relative to the config.
    io::ModelFile model(const Node& n) const {
        if (n.value().is_string()) {
            const fs::path path = base_ / n.string();
            if (!fs::exists(path)) n.fail("model file " + path.string() + " does not exist");
            return io::read_model(path);
        }
        return io::parse_model(n);
    }

    fs::path file(const Node& n) const {
        const fs::path path = base_ / n.string();
        if (!fs::exists(path)) n.fail("file " + path.string() + " does not exist");
        return path;
    }

private:
    const io::JsonDocument& doc_;
    fs::path base_;
    std::optional<double> units_;
};

Json inhomogeneity_json(const std::optional<spectra::InhomogeneitySpec>& s) {
    if (!s) return nullptr;
    return Json{{"fwhm", s->fwhm}, {"n_samples", s->n_samples}, {"truncation_sigma", s->truncation}, {"tiered", s->tiered}};
}

Json grid_json(const std::vector<double>& grid) {
    Json values = Json::array();
    for (double v : grid) values.push_back(v);
    return Json{{"values", values}};
}

/// Loads --config or --preset; returns the document and the directory relative paths resolve against.
struct LoadedConfig {
    io::JsonDocument doc;
    fs::path base;
};

LoadedConfig load_config(const CommonOptions& opts, const std::string& command) {
    if (!opts.config.empty() && !opts.preset.empty()) {
        throw io::ConfigError("command line: --config and --preset are mutually exclusive", 0);
    }
    if (!opts.preset.empty()) {
        Json cfg;
        try {
            cfg = preset_config(opts.preset);
        } catch (const Error& e) {
            throw io::ConfigError(std::string("command line: ") + e.what(), 0);
        }
        return {io::JsonDocument::parse(cfg.dump(2), "preset:" + opts.preset), fs::current_path()};
    }
    if (opts.config.empty()) throw io::ConfigError("command line: " + command + " needs --config PATH or --preset NAME", 0);
    const fs::path path(opts.config);
    if (!fs::exists(path)) throw io::ConfigError(path.string() + ":0: config file does not exist", 0);
    return {io::JsonDocument::load(path), path.has_parent_path() ? path.parent_path() : fs::path(".")};
}

void check_command(const Node& root, const std::string& command) {
    if (root.has("command") && root.string("command") != command) {
        root["command"].fail("config is for '" + root.string("command") + "', not '" + command + "'");
    }
}

int resolve_workers(const CommonOptions& opts, const Node& root) {
    const long long w = opts.workers ? *opts.workers : root.integer("workers", 1);
    if (w < 1 || w > 4096) {
        if (opts.workers) throw io::ConfigError("command line: --workers must be between 1 and 4096", 0);
        root["workers"].fail("workers must be between 1 and 4096");
    }
    return static_cast<int>(w);
}

std::uint64_t resolve_seed(const CommonOptions& opts, const Node& root) {
    if (opts.seed) return *opts.seed;
    const long long s = root.integer("seed", 0);
    if (s < 0) root["seed"].fail("seed must be non-negative");
    return static_cast<std::uint64_t>(s);
}

void write_json(const fs::path& path, const Json& j) { io::write_text(path, j.dump(2) + "\n"); }

std::vector<double> add_noise(std::vector<double>& signal, double fraction, std::uint64_t seed, std::size_t index) {
    double peak = 0.0;
    for (double v : signal) peak = std::max(peak, std::abs(v));
    const double sigma = fraction * peak;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : signal) v += sigma * normal(rng);
    return std::vector<double>(signal.size(), sigma > 0.0 ? sigma : 1.0);
}

// ---------------------------------------------------------------- simulate

struct SimulationRun {
    std::string name;
    io::ModelFile model;
    std::optional<spectra::InhomogeneitySpec> inhomogeneity;
    double control_detuning = 0.0;
    std::vector<double> delta_grid;
    std::optional<std::vector<double>> control_grid;
    double noise = 0.0;
    Json tags = Json::object();
};

const std::vector<std::string> kRunKeys = {"name",     "model",         "inhomogeneity", "control_detuning",
                                           "delta_grid", "control_detuning_grid", "noise", "tags"};

SimulationRun parse_run(const ConfigReader& reader, const Node& root, const std::optional<Node>& item,
                        std::size_t index) {
    auto pick = [&](const std::string& key) -> std::optional<Node> {
        if (item && item->has(key)) return (*item)[key];
        if (root.has(key)) return root[key];
        return std::nullopt;
    };
    SimulationRun run;
    run.name = item ? item->string("name", "run" + std::to_string(index)) : "trace";
    if (run.name.empty() || run.name.find_first_of("/\\") != std::string::npos || run.name[0] == '.') {
        (*item)["name"].fail("run name must be a plain file stem");
    }
    const auto model = pick("model");
    if (!model) (item ? *item : root)["model"];
    run.model = reader.model(*model);
    if (const auto n = pick("inhomogeneity")) run.inhomogeneity = reader.inhomogeneity(*n);
    if (const auto n = pick("control_detuning")) run.control_detuning = reader.frequency(*n);
    if (const auto n = pick("delta_grid")) {
        run.delta_grid = reader.grid(*n);
    } else {
        run.delta_grid = spectra::default_delta_grid(run.model.spec);
    }
    if (const auto n = pick("control_detuning_grid")) {
        if (run.inhomogeneity) n->fail("control_detuning_grid needs a homogeneous run (inhomogeneity null)");
        run.control_grid = reader.grid(*n);
    }
    if (const auto n = pick("noise")) {
        run.noise = n->number();
        if (!(run.noise >= 0.0)) n->fail("noise must be a non-negative fraction of the trace maximum");
    }
    if (const auto n = pick("tags")) {
        n->require_object();
        n->only_keys({"power_W", "temperature_K"});
        run.tags = n->value();
    }
    return run;
}

int cmd_simulate(const CommonOptions& opts) {
    const auto loaded = load_config(opts, "simulate");
    const ConfigReader reader(loaded.doc, loaded.base);
    const Node root = reader.root();
    check_command(root, "simulate");
    root.only_keys({"command", "description", "units", "model", "inhomogeneity", "control_detuning", "delta_grid",
                    "control_detuning_grid", "noise", "tags", "runs", "workers", "seed"});
    const int workers = resolve_workers(opts, root);
    const std::uint64_t seed = resolve_seed(opts, root);

    std::vector<SimulationRun> runs;
    if (root.has("runs")) {
        const Node items = root["runs"];
        if (items.size() == 0) items.fail("runs is empty");
        for (std::size_t i = 0; i < items.size(); ++i) {
            const Node item = items[i];
            item.require_object();
            item.only_keys(kRunKeys);
            runs.push_back(parse_run(reader, root, item, i));
            for (std::size_t k = 0; k + 1 < runs.size(); ++k) {
                if (runs[k].name == runs.back().name) item["name"].fail("duplicate run name '" + runs.back().name + "'");
            }
        }
    } else {
        runs.push_back(parse_run(reader, root, std::nullopt, 0));
    }

    Json resolved = Json::object();
    resolved["command"] = "simulate";
    resolved["seed"] = seed;
    resolved["runs"] = Json::array();
    for (const auto& r : runs) {
        Json j;
        j["name"] = r.name;
        j["model"] = io::model_to_json(r.model.spec, "Hz", r.model.spin);
        j["inhomogeneity"] = inhomogeneity_json(r.inhomogeneity);
        j["control_detuning"] = r.control_detuning;
        j["delta_grid"] = grid_json(r.delta_grid);
        if (r.control_grid) j["control_detuning_grid"] = grid_json(*r.control_grid);
        j["noise"] = r.noise;
        j["tags"] = r.tags;
        resolved["runs"].push_back(j);
    }
    const std::string hash = config_hash(resolved);
    const fs::path out(opts.out);
    Json saved = resolved;
    saved["config_hash"] = hash;
    saved["version"] = std::string(kVersion);
    write_json(out / "config.json", saved);

    spectra::SweepOptions sweep;
    sweep.workers = workers;
    sweep.check_convergence = opts.check_convergence;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto& r = runs[i];
        Json meta;
        if (r.control_grid) {
            Eigen::MatrixXd values(static_cast<Eigen::Index>(r.control_grid->size()),
                                   static_cast<Eigen::Index>(r.delta_grid.size()));
            std::string model_hash;
            for (std::size_t k = 0; k < r.control_grid->size(); ++k) {
                const auto t = spectra::homogeneous_spectrum(r.model.spec, (*r.control_grid)[k], r.delta_grid, sweep);
                for (std::size_t c = 0; c < t.absorbance.size(); ++c) {
                    values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = t.absorbance[c];
                }
                model_hash = t.metadata.model_hash;
            }
            io::write_matrix_csv(out / (r.name + ".csv"), "control_detuning_hz\\delta_hz", *r.control_grid, r.delta_grid,
                                 values, hash);
            meta = Json{{"version", std::string(kVersion)},
                        {"config_hash", hash},
                        {"model_hash", model_hash},
                        {"mode", "homogeneous_matrix"},
                        {"rows", r.control_grid->size()},
                        {"columns", r.delta_grid.size()}};
        } else {
            auto trace = r.inhomogeneity
                             ? spectra::inhomogeneous_spectrum(r.model.spec, *r.inhomogeneity, r.delta_grid, sweep)
                             : spectra::homogeneous_spectrum(r.model.spec, r.control_detuning, r.delta_grid, sweep);
            std::optional<std::vector<double>> sigma;
            if (r.noise > 0.0) sigma = add_noise(trace.absorbance, r.noise, seed, i);
            io::write_trace_csv(out / (r.name + ".csv"), trace, hash, sigma ? &*sigma : nullptr);
            meta = io::trace_metadata(trace, hash);
            meta["noise_fraction"] = r.noise;
            meta["seed"] = seed;
        }
        meta["run"] = r.name;
        meta["tags"] = r.tags;
        meta["model"] = io::model_to_json(r.model.spec, "Hz", r.model.spin);
        write_json(out / (r.name + ".meta.json"), meta);
        std::cout << "wrote " << (out / (r.name + ".csv")).string() << "\n";
    }
    return exit_ok;
}

// ---------------------------------------------------------------- map

int cmd_map(const CommonOptions& opts) {
    const auto loaded = load_config(opts, "map");
    const ConfigReader reader(loaded.doc, loaded.base);
    const Node root = reader.root();
    check_command(root, "map");
    root.only_keys({"command", "description", "units", "model", "inhomogeneity", "fields", "difference_grid",
                    "workers", "seed"});
    const int workers = resolve_workers(opts, root);
    const auto model = reader.model(root["model"]);
    if (!model.spin) root["model"].fail("map needs a model with a spin block");
    const auto inhom = reader.inhomogeneity(root["inhomogeneity"]);
    if (!inhom) root["inhomogeneity"].fail("map needs an inhomogeneity block");
    const Node f = root["fields"];
    f.only_keys({"start_mT", "stop_mT", "points"});
    spectra::FieldRange fields;
    fields.start = f.number("start_mT") * 1e-3;
    fields.stop = f.number("stop_mT") * 1e-3;
    const long long points = f.integer("points");
    if (points < 1 || points > 100000) f["points"].fail("points must be between 1 and 100000");
    if (fields.start < 0.0 || fields.stop < fields.start) f.fail("need 0 <= start_mT <= stop_mT");
    fields.points = static_cast<int>(points);
    const auto grid = reader.grid(root["difference_grid"]);

    Json resolved{{"command", "map"},
                  {"model", io::model_to_json(model.spec, "Hz", model.spin)},
                  {"inhomogeneity", inhomogeneity_json(inhom)},
                  {"fields", Json{{"start_mT", fields.start * 1e3}, {"stop_mT", fields.stop * 1e3}, {"points", points}}},
                  {"difference_grid", grid_json(grid)}};
    const std::string hash = config_hash(resolved);

    spectra::SweepOptions sweep;
    sweep.workers = workers;
    sweep.check_convergence = opts.check_convergence;
    const auto map = spectra::magneto_map(model.spec, model.spin->ground, model.spin->excited, fields, grid, *inhom, sweep);
    const fs::path out(opts.out);
    io::write_map_csv(out / "map.csv", map, hash);
    write_json(out / "map.meta.json", Json{{"version", std::string(kVersion)}, {"config_hash", hash}, {"config", resolved}});
    std::cout << "wrote " << (out / "map.csv").string() << "\n";
    return exit_ok;
}

// ---------------------------------------------------------------- fit

int cmd_fit(const CommonOptions& opts) {
    const auto loaded = load_config(opts, "fit");
    const ConfigReader reader(loaded.doc, loaded.base);
    const Node root = reader.root();
    check_command(root, "fit");
    root.only_keys({"command", "description", "units", "model", "inhomogeneity", "traces", "parameters",
                    "power_reference", "power_scaled_fixed", "options", "identifiability", "workers", "seed"});

    fit::FitProblem problem;
    const auto model = reader.model(root["model"]);
    problem.model = model.spec;
    const auto inhom = reader.inhomogeneity(root["inhomogeneity"]);
    if (!inhom) root["inhomogeneity"].fail("fit needs an inhomogeneity block");
    problem.inhomogeneity = *inhom;
    if (root.has("power_reference")) problem.power_reference = reader.power(root["power_reference"]);
    if (root.has("power_scaled_fixed")) {
        const Node list = root["power_scaled_fixed"];
        for (std::size_t i = 0; i < list.size(); ++i) problem.power_scaled_fixed.push_back(list[i].string());
    }
    const Node params = root["parameters"];
    if (params.size() == 0) params.fail("no free parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Node p = params[i];
        p.only_keys({"path", "lower", "upper", "initial", "shared", "power_scaled", "split"});
        fit::FreeParameter fp;
        fp.path = p.string("path");
        fp.lower = reader.frequency(p["lower"]);
        fp.upper = reader.frequency(p["upper"]);
        fp.initial = reader.frequency(p["initial"]);
        fp.shared = p.boolean("shared", true);
        fp.power_scaled = p.boolean("power_scaled", false);
        fp.split = p.number("split", 0.0);
        problem.parameters.push_back(fp);
    }
    if (root.has("options")) {
        const Node o = root["options"];
        o.only_keys({"max_iterations", "step_tolerance", "gradient_tolerance", "merge_degenerate"});
        problem.options.max_iterations = static_cast<int>(o.integer("max_iterations", problem.options.max_iterations));
        if (problem.options.max_iterations < 1) o["max_iterations"].fail("max_iterations must be positive");
        problem.options.step_tolerance = o.number("step_tolerance", problem.options.step_tolerance);
        problem.options.gradient_tolerance = o.number("gradient_tolerance", problem.options.gradient_tolerance);
        problem.options.merge_degenerate = o.boolean("merge_degenerate", problem.options.merge_degenerate);
    }
    problem.options.workers = resolve_workers(opts, root);
    try {
        fit::validate(problem);
    } catch (const io::ConfigError&) {
        throw;
    } catch (const Error& e) {
        root["parameters"].fail(e.what());
    }

    std::vector<fit::ObservedTrace> traces;
    Json traces_json = Json::array();
    const Node items = root["traces"];
    if (items.size() == 0) items.fail("no traces");
    for (std::size_t i = 0; i < items.size(); ++i) {
        const Node t = items[i];
        t.only_keys({"file", "meta", "name", "power", "temperature_K"});
        const fs::path path = reader.file(t["file"]);
        const std::string text = io::read_text(path);
        auto trace = io::parse_trace_csv(text, path.string());
        trace.name = t.string("name", path.stem().string());
        if (t.has("meta")) {
            const auto sidecar = io::JsonDocument::load(reader.file(t["meta"]));
            io::apply_tags(trace, Node(sidecar, ""));
        }
        if (t.has("power")) trace.power = reader.power(t["power"]);
        if (t.has("temperature_K")) trace.temperature = t.number("temperature_K");
        try {
            fit::validate(trace);
        } catch (const Error& e) {
            t.fail(e.what());
        }
        Json tj{{"name", trace.name}, {"content_hash", hash_hex(text)}};
        if (trace.power) tj["power_W"] = *trace.power;
        if (trace.temperature) tj["temperature_K"] = *trace.temperature;
        traces_json.push_back(tj);
        traces.push_back(std::move(trace));
    }
    const bool want_report = root.boolean("identifiability", true);

    Json params_json = Json::array();
    for (const auto& p : problem.parameters) {
        params_json.push_back(Json{{"path", p.path},
                                   {"lower", p.lower},
                                   {"upper", p.upper},
                                   {"initial", p.initial},
                                   {"shared", p.shared},
                                   {"power_scaled", p.power_scaled},
                                   {"split", p.split}});
    }
    Json resolved{{"command", "fit"},
                  {"model", io::model_to_json(problem.model, "Hz", model.spin)},
                  {"inhomogeneity", inhomogeneity_json(problem.inhomogeneity)},
                  {"power_reference", problem.power_reference},
                  {"power_scaled_fixed", problem.power_scaled_fixed},
                  {"parameters", params_json},
                  {"options", Json{{"max_iterations", problem.options.max_iterations},
                                   {"step_tolerance", problem.options.step_tolerance},
                                   {"gradient_tolerance", problem.options.gradient_tolerance},
                                   {"merge_degenerate", problem.options.merge_degenerate}}},
                  {"identifiability", want_report},
                  {"traces", traces_json}};
    const std::string hash = config_hash(resolved);

    std::optional<fit::IdentifiabilityReport> report;
    if (want_report) report = fit::identifiability_report(problem, traces);
    const auto result = fit::fit(traces, problem);

    const fs::path out(opts.out);
    Json j = io::fit_result_to_json(result, report ? &*report : nullptr, hash);
    write_json(out / "fit.json", j);
    io::write_residuals_csv(out / "residuals.csv", traces, result, hash);

    for (const auto& e : result.estimates) {
        std::cout << e.name << " = " << io::format_number(e.value) << " +/- " << io::format_number(e.uncertainty)
                  << "\n";
    }
    for (const auto& w : result.warnings) std::cout << "warning: " << w << "\n";
    std::cout << "wrote " << (out / "fit.json").string() << "\n";
    if (!result.converged) {
        std::cerr << "error: fit did not converge (" << result.status << "); best point written\n";
        return exit_nonconvergence;
    }
    return exit_ok;
}

// ---------------------------------------------------------------- check

struct CheckOptions {
    std::string config;
    std::string control_rabi;
    std::string fwhm;
    std::string ground_dephasing;
    std::string calibration_rabi;
    std::string calibration_power;
};

std::string mhz(double hz) {
    std::ostringstream s;
    s.precision(6);
    s << hz / 1e6 << " MHz";
    return s.str();
}

std::string mw(double w) {
    std::ostringstream s;
    s.precision(6);
    s << w * 1e3 << " mW";
    return s.str();
}

int cmd_check(const CheckOptions& opts) {
    std::optional<double> control;
    std::optional<double> fwhm;
    std::optional<double> gamma;
    std::optional<double> cal_rabi;
    std::optional<double> cal_power;

    if (!opts.config.empty()) {
        const fs::path path(opts.config);
        if (!fs::exists(path)) throw io::ConfigError(path.string() + ":0: config file does not exist", 0);
        const auto doc = io::JsonDocument::load(path);
        const ConfigReader reader(doc, path.parent_path());
        const Node root = reader.root();
        check_command(root, "check");
        root.only_keys({"command", "description", "units", "control_rabi", "inhomogeneous_fwhm", "ground_dephasing",
                        "calibration"});
        if (root.has("control_rabi")) control = reader.frequency(root["control_rabi"]);
        fwhm = reader.frequency(root["inhomogeneous_fwhm"]);
        gamma = reader.frequency(root["ground_dephasing"]);
        if (root.has("calibration")) {
            const Node c = root["calibration"];
            c.only_keys({"rabi", "power"});
            cal_rabi = reader.frequency(c["rabi"]);
            cal_power = reader.power(c["power"]);
        }
    }
    auto flag_frequency = [](const std::string& text, const char* name) -> std::optional<double> {
        if (text.empty()) return std::nullopt;
        try {
            return io::parse_frequency(text);
        } catch (const Error& e) {
            throw io::ConfigError(std::string("command line: ") + name + ": " + e.what(), 0);
        }
    };
    if (auto v = flag_frequency(opts.control_rabi, "--control-rabi")) control = v;
    if (auto v = flag_frequency(opts.fwhm, "--fwhm")) fwhm = v;
    if (auto v = flag_frequency(opts.ground_dephasing, "--ground-dephasing")) gamma = v;
    if (auto v = flag_frequency(opts.calibration_rabi, "--calibration-rabi")) cal_rabi = v;
    if (!opts.calibration_power.empty()) {
        try {
            cal_power = io::parse_power(opts.calibration_power);
        } catch (const Error& e) {
            throw io::ConfigError(std::string("command line: --calibration-power: ") + e.what(), 0);
        }
    }
    if (!fwhm || !gamma) throw io::ConfigError("command line: check needs --fwhm and --ground-dephasing (or --config)", 0);
    if (cal_rabi.has_value() != cal_power.has_value()) {
        throw io::ConfigError("command line: --calibration-rabi and --calibration-power go together", 0);
    }
    if (!(*fwhm >= 0.0) || !(*gamma >= 0.0) || (control && !(*control >= 0.0))) {
        throw io::ConfigError("command line: rates must be non-negative", 0);
    }
    if (cal_rabi && !(*cal_rabi > 0.0 && *cal_power > 0.0)) {
        throw io::ConfigError("command line: calibration values must be positive", 0);
    }

    const auto report = spectra::eit_threshold(control.value_or(0.0), *fwhm, *gamma);
    std::cout << "condition: Omega_c^2 > Delta_I * gamma_g* (strict)\n";
    std::cout << "Delta_I = " << mhz(*fwhm) << ", gamma_g* = " << mhz(*gamma) << "\n";
    if (report.min_omega_c == 0.0) {
        std::cout << "threshold 0; any power suffices\n";
    } else {
        std::cout << "minimum Omega_c = " << mhz(report.min_omega_c) << "\n";
        if (cal_rabi) {
            std::cout << "required power = " << mw(spectra::power_for_rabi(report.min_omega_c, *cal_rabi, *cal_power))
                      << " (calibration " << mhz(*cal_rabi) << " at " << mw(*cal_power) << ")\n";
        }
    }
    if (control) {
        std::ostringstream margin;
        margin.precision(6);
        margin << report.margin;
        std::cout << "Omega_c = " << mhz(*control) << ", margin = " << margin.str() << ", "
                  << (report.satisfied ? "satisfied" : "not satisfied") << "\n";
    }
    return exit_ok;
}

// ---------------------------------------------------------------- presets

Json rates_model(const model::LevelSystemSpec& spec) { return io::model_to_json(spec, "Hz"); }

Json symmetric(double half_width, int points) { return Json{{"half_width", half_width}, {"points", points}}; }

Json inhom(double fwhm, int samples) {
    return Json{{"fwhm", fwhm}, {"n_samples", samples}, {"truncation_sigma", 4.0}, {"tiered", true}};
}

std::string stem(double value, const char* unit) {
    std::ostringstream s;
    s << value << unit;
    return s.str();
}

Json base_config(const std::string& description) {
    return Json{{"command", "simulate"}, {"description", description}, {"units", "Hz"}, {"seed", 0}, {"workers", 1}};
}

const std::vector<std::pair<std::string, std::string>>& preset_table() {
    static const std::vector<std::pair<std::string, std::string>> table = {
        {"fig3a", "three-level Lambda: homogeneous (Delta = 0) and 100 GHz inhomogeneous traces, plus a dip inset"},
        {"fig3b", "three-level Lambda: homogeneous traces at Delta = 0, 10, 50, 200 MHz"},
        {"fig3c", "three-level Lambda: homogeneous absorbance over the (Delta, delta) plane"},
        {"fig4", "five-level asymmetric EIT at Delta_k = 0, 1, 3, 10 Gamma_e, 100 GHz"},
        {"fig5-power", "five-level double EIT at 0.25, 0.5, 1, 2 mW, 140 GHz"},
        {"fig5-temperature", "five-level double EIT with an excited dephasing schedule over 2 to 12 K, 140 GHz"},
    };
    return table;
}

}  // namespace

std::vector<std::string> preset_names() {
    std::vector<std::string> out;
    for (const auto& [name, _] : preset_table()) out.push_back(name);
    return out;
}

io::Json preset_config(const std::string& name) {
    const presets::RateParams default_rates;
    if (name == "fig3a") {
        Json cfg = base_config("Homogeneous and inhomogeneous Lambda EIT");
        cfg["model"] = rates_model(presets::lambda_three_level(default_rates));
        cfg["delta_grid"] = symmetric(250e6, 501);
        cfg["runs"] = Json::array({Json{{"name", "homogeneous"}, {"inhomogeneity", nullptr}},
                                   Json{{"name", "inhomogeneous"}, {"inhomogeneity", inhom(100e9, 801)}},
                                   Json{{"name", "inhomogeneous_inset"},
                                        {"inhomogeneity", inhom(100e9, 801)},
                                        {"delta_grid", symmetric(5e6, 201)}}});
        return cfg;
    }
    if (name == "fig3b") {
        Json cfg = base_config("Homogeneous Lambda traces at several control detunings");
        cfg["model"] = rates_model(presets::lambda_three_level(default_rates));
        cfg["delta_grid"] = symmetric(250e6, 501);
        cfg["runs"] = Json::array();
        for (double d : {0.0, 10e6, 50e6, 200e6}) {
            cfg["runs"].push_back(Json{{"name", "delta_" + stem(d / 1e6, "MHz")}, {"control_detuning", d}});
        }
        return cfg;
    }
    if (name == "fig3c") {
        Json cfg = base_config("Homogeneous absorbance versus control and two-photon detuning");
        cfg["model"] = rates_model(presets::lambda_three_level(default_rates));
        cfg["runs"] = Json::array({Json{{"name", "absorbance_map"},
                                        {"control_detuning_grid", symmetric(250e6, 101)},
                                        {"delta_grid", symmetric(250e6, 201)}}});
        return cfg;
    }
    if (name == "fig4") {
        Json cfg = base_config("Asymmetric EIT in the five-level system");
        cfg["inhomogeneity"] = inhom(100e9, 801);
        cfg["delta_grid"] = symmetric(160e6, 201);
        cfg["runs"] = Json::array();
        for (double k : {0.0, 1.0, 3.0, 10.0}) {
            cfg["runs"].push_back(Json{{"name", "delta_k_" + stem(k, "gamma_e")},
                                       {"model", rates_model(presets::asymmetric_five_level(
                                                     default_rates, k * default_rates.excited_decay))}});
        }
        return cfg;
    }
    const auto rates = presets::double_eit_rates();
    const double splitting = 5e6;
    const double mismatch = splitting + 3.0 * rates.excited_decay;
    if (name == "fig5-power") {
        Json cfg = base_config("Double EIT power series (control and probe scaled together)");
        cfg["inhomogeneity"] = inhom(140e9, 801);
        cfg["delta_grid"] = symmetric(6.0 * rates.control_rabi * std::sqrt(2.0), 201);
        cfg["runs"] = Json::array();
        for (double p : {0.25e-3, 0.5e-3, 1e-3, 2e-3}) {
            auto r = rates;
            r.control_rabi = rates.control_rabi * std::sqrt(p / 1e-3);
            r.probe_rabi = rates.probe_rabi * std::sqrt(p / 1e-3);
            cfg["runs"].push_back(Json{{"name", "power_" + stem(p * 1e3, "mW")},
                                       {"model", rates_model(presets::double_eit_five_level(r, mismatch, splitting))},
                                       {"tags", Json{{"power_W", p}}}});
        }
        return cfg;
    }
    if (name == "fig5-temperature") {
        Json cfg = base_config("Double EIT temperature series through the excited dephasing rate");
        cfg["inhomogeneity"] = inhom(140e9, 801);
        cfg["delta_grid"] = symmetric(80e6, 201);
        cfg["runs"] = Json::array();
        const std::vector<std::pair<double, double>> schedule = {
            {2.0, 0.0}, {4.0, 0.0}, {6.0, 0.5e6}, {8.0, 4e6}, {10.0, 8e6}, {12.0, 14e6}};
        for (const auto& [kelvin, dephasing] : schedule) {
            auto r = rates;
            r.excited_dephasing = dephasing;
            cfg["runs"].push_back(Json{{"name", "temperature_" + stem(kelvin, "K")},
                                       {"model", rates_model(presets::double_eit_five_level(r, mismatch, splitting))},
                                       {"tags", Json{{"temperature_K", kelvin}}}});
        }
        return cfg;
    }
    throw Error("unknown preset '" + name + "'");
}

std::string config_hash(const io::Json& resolved) {
    Json copy = resolved;
    if (copy.is_object()) copy.erase("workers");
    return hash_hex(std::string(kVersion) + "\n" + copy.dump());
}

int run(int argc, const char* const* argv) {
    CLI::App app{"eitsim: EIT spectra of inhomogeneously broadened multi-level ensembles"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    CommonOptions simulate_opts, map_opts, fit_opts;
    auto add_common = [](CLI::App* sub, CommonOptions& o) {
        sub->add_option("--config", o.config, "JSON config file");
        sub->add_option("--out", o.out, "output directory")->capture_default_str();
        sub->add_option("--workers", o.workers, "worker threads (results do not depend on it)");
        sub->add_option("--seed", o.seed, "random seed for synthetic noise");
        sub->add_option("--preset", o.preset, "built-in figure preset");
        sub->add_flag("--check-convergence", o.check_convergence, "verify the Delta sampling by doubling it");
    };
    add_common(app.add_subcommand("simulate", "compute probe-absorption traces"), simulate_opts);
    add_common(app.add_subcommand("map", "magneto-spectroscopy map over field and difference frequency"), map_opts);
    add_common(app.add_subcommand("fit", "fit model parameters to observed traces"), fit_opts);

    CheckOptions check_opts;
    auto* check = app.add_subcommand("check", "complete-EIT threshold Omega_c^2 > Delta_I gamma_g*");
    check->add_option("--config", check_opts.config, "JSON file with the quantities below");
    check->add_option("--control-rabi", check_opts.control_rabi, "control Rabi frequency, e.g. 7.4MHz");
    check->add_option("--fwhm", check_opts.fwhm, "inhomogeneous FWHM, e.g. 140GHz");
    check->add_option("--ground-dephasing", check_opts.ground_dephasing, "gamma_g*, e.g. 0.23MHz");
    check->add_option("--calibration-rabi", check_opts.calibration_rabi, "Rabi frequency at the calibration power");
    check->add_option("--calibration-power", check_opts.calibration_power, "calibration power, e.g. 1mW");

    std::string write_dir;
    auto* presets_cmd = app.add_subcommand("presets", "list figure presets or write their configs");
    presets_cmd->add_option("--write", write_dir, "directory for <preset>.json configs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_config;
    }

    try {
        if (app.got_subcommand("simulate")) return cmd_simulate(simulate_opts);
        if (app.got_subcommand("map")) return cmd_map(map_opts);
        if (app.got_subcommand("fit")) return cmd_fit(fit_opts);
        if (app.got_subcommand("check")) return cmd_check(check_opts);
        for (const auto& [name, description] : preset_table()) {
            if (write_dir.empty()) {
                std::cout << name << "  " << description << "\n";
            } else {
                const fs::path path = fs::path(write_dir) / (name + ".json");
                write_json(path, preset_config(name));
                std::cout << "wrote " << path.string() << "\n";
            }
        }
        return exit_ok;
    } catch (const io::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const NonConvergedSampling& e) {
        std::cerr << "not converged: " << e.what() << "\n";
        return exit_nonconvergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_engine;
    }
}

}  // namespace eitsim::cli
