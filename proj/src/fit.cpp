#include "eitsim/fit.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>

namespace eitsim::fit {

using model::LevelSystemSpec;
using model::Manifold;

namespace {

bool is_excited(const LevelSystemSpec& spec, const std::string& label) {
    return spec.levels[spec.require_index(label)].manifold == Manifold::excited;
}

void set_excited_decay(LevelSystemSpec& spec, double total) {
    for (const auto& level : spec.levels) {
        if (level.manifold != Manifold::excited) continue;
        double current = 0.0;
        std::vector<model::DecayChannel*> channels;
        for (auto& d : spec.decays) {
            if (d.from == level.label && !is_excited(spec, d.to)) {
                channels.push_back(&d);
                current += d.rate;
            }
        }
        if (channels.empty()) {
            std::vector<std::string> grounds;
            for (const auto& g : spec.levels) {
                if (g.manifold == Manifold::ground) grounds.push_back(g.label);
            }
            for (const auto& g : grounds) {
                spec.decays.push_back(model::DecayChannel{level.label, g, total / static_cast<double>(grounds.size())});
            }
        } else if (current > 0.0) {
            for (auto* d : channels) d->rate *= total / current;
        } else {
            for (auto* d : channels) d->rate = total / static_cast<double>(channels.size());
        }
    }
}

void set_dephasing(LevelSystemSpec& spec, Manifold manifold, double rate) {
    bool any = false;
    for (auto& d : spec.dephasings) {
        if (spec.levels[spec.require_index(d.level)].manifold == manifold) {
            d.rate = rate;
            any = true;
        }
    }
    if (any) return;
    if (manifold == Manifold::ground) throw InvalidModel("ground_dephasing: the template has no ground dephasing entry");
    for (const auto& level : spec.levels) {
        if (level.manifold == Manifold::excited) spec.dephasings.push_back(model::Dephasing{level.label, rate});
    }
}

void set_ground_relaxation(LevelSystemSpec& spec, double rate) {
    bool any = false;
    for (auto& d : spec.decays) {
        if (!is_excited(spec, d.from) && !is_excited(spec, d.to)) {
            d.rate = rate;
            any = true;
        }
    }
    if (!any) throw InvalidModel("ground_relaxation: the template has no ground-ground channel");
}

void scale_rabi(LevelSystemSpec& spec, model::FieldId field, double target) {
    auto* drive = spec.field(field);
    if (!drive || drive->couplings.empty()) throw InvalidModel("template has no couplings for this field");
    const double current = model::max_rabi(spec, field);
    for (auto& c : drive->couplings) c.rabi = current > 0.0 ? c.rabi * target / current : target;
}

void apply_path(TraceModel& m, const FreeParameter& p, double value) {
    auto& spec = m.spec;
    if (p.path == "excited_decay") {
        set_excited_decay(spec, value);
    } else if (p.path == "excited_dephasing") {
        set_dephasing(spec, Manifold::excited, value);
    } else if (p.path == "excited_width") {
        set_excited_decay(spec, (1.0 - p.split) * value);
        set_dephasing(spec, Manifold::excited, p.split * value);
    } else if (p.path == "ground_dephasing") {
        set_dephasing(spec, Manifold::ground, value);
    } else if (p.path == "ground_relaxation") {
        set_ground_relaxation(spec, value);
    } else if (p.path == "control_rabi") {
        scale_rabi(spec, model::FieldId::control, value);
    } else if (p.path == "probe_rabi") {
        scale_rabi(spec, model::FieldId::probe, value);
    } else if (p.path.rfind("energy:", 0) == 0) {
        spec.levels[spec.require_index(p.path.substr(7))].energy = value;
    } else if (p.path == "inhomogeneous_fwhm") {
        m.inhomogeneity.fwhm = value;
    } else {
        throw InvalidModel("unknown parameter path '" + p.path + "'");
    }
}

bool is_rabi(const std::string& path) { return path == "control_rabi" || path == "probe_rabi"; }

// Position of every FreeParameter in the flat parameter vector.
struct Layout {
    std::vector<std::size_t> start;
    std::size_t physical = 0;
    std::size_t traces = 0;

    Layout(const FitProblem& problem, std::size_t trace_count) : traces(trace_count) {
        for (const auto& p : problem.parameters) {
            start.push_back(physical);
            physical += p.shared ? 1 : trace_count;
        }
    }
    std::size_t size() const { return physical + 2 * traces; }
    std::size_t scale(std::size_t t) const { return physical + 2 * t; }
    std::size_t offset(std::size_t t) const { return physical + 2 * t + 1; }
    std::size_t index(const FitProblem& problem, std::size_t p, std::size_t t) const {
        return start[p] + (problem.parameters[p].shared ? 0 : t);
    }
    std::vector<double> values(const FitProblem& problem, const Eigen::VectorXd& x, std::size_t t) const {
        std::vector<double> v(problem.parameters.size());
        for (std::size_t p = 0; p < v.size(); ++p) v[p] = x(static_cast<Eigen::Index>(index(problem, p, t)));
        return v;
    }
    std::vector<std::string> names(const FitProblem& problem) const {
        std::vector<std::string> out(size());
        for (std::size_t p = 0; p < problem.parameters.size(); ++p) {
            const auto& path = problem.parameters[p].path;
            if (problem.parameters[p].shared) {
                out[start[p]] = path;
            } else {
                for (std::size_t t = 0; t < traces; ++t) out[start[p] + t] = path + "[" + std::to_string(t) + "]";
            }
        }
        for (std::size_t t = 0; t < traces; ++t) {
            out[scale(t)] = "scale[" + std::to_string(t) + "]";
            out[offset(t)] = "offset[" + std::to_string(t) + "]";
        }
        return out;
    }
};

// Forward model with a cache keyed on (trace, per-trace values).
class Evaluator {
public:
    Evaluator(const FitProblem& problem, const std::vector<ObservedTrace>& traces)
        : problem_(problem), traces_(traces) {}

    const std::vector<double>& absorbance(std::size_t t, const std::vector<double>& values) {
        std::vector<double> key;
        key.reserve(values.size() + 1);
        key.push_back(static_cast<double>(t));
        key.insert(key.end(), values.begin(), values.end());
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        const auto m = apply_parameters(problem_, values, traces_[t].power);
        spectra::SweepOptions options;
        options.workers = problem_.options.workers;
        auto trace = spectra::inhomogeneous_spectrum(m.spec, m.inhomogeneity, traces_[t].delta, options);
        ++evaluations_;
        return cache_.emplace(std::move(key), std::move(trace.absorbance)).first->second;
    }

    int evaluations() const { return evaluations_; }

private:
    const FitProblem& problem_;
    const std::vector<ObservedTrace>& traces_;
    std::map<std::vector<double>, std::vector<double>> cache_;
    int evaluations_ = 0;
};

double weight(const ObservedTrace& trace, std::size_t i) { return trace.sigma ? 1.0 / (*trace.sigma)[i] : 1.0; }

std::size_t point_count(const std::vector<ObservedTrace>& traces) {
    std::size_t n = 0;
    for (const auto& t : traces) n += t.delta.size();
    return n;
}

struct Linearization {
    Eigen::VectorXd residual;
    Eigen::MatrixXd jacobian;
};

// Natural magnitude of each parameter, used for finite-difference steps and
// the relative step test.
Eigen::VectorXd typical_scale(const FitProblem& problem, const Layout& layout, const Eigen::VectorXd& x0,
                              const std::vector<ObservedTrace>& traces) {
    Eigen::VectorXd s(static_cast<Eigen::Index>(layout.size()));
    for (std::size_t p = 0; p < problem.parameters.size(); ++p) {
        const auto& fp = problem.parameters[p];
        const double span = std::max(std::abs(fp.lower), std::abs(fp.upper));
        const double typical = std::max(std::abs(fp.initial), 1e-3 * span);
        for (std::size_t t = 0; t < (fp.shared ? 1 : layout.traces); ++t) {
            s(static_cast<Eigen::Index>(layout.start[p] + t)) = typical > 0.0 ? typical : 1.0;
        }
    }
    for (std::size_t t = 0; t < layout.traces; ++t) {
        double peak = 0.0;
        for (double v : traces[t].signal) peak = std::max(peak, std::abs(v));
        const auto si = static_cast<Eigen::Index>(layout.scale(t));
        const auto oi = static_cast<Eigen::Index>(layout.offset(t));
        s(si) = std::abs(x0(si)) > 0.0 ? std::abs(x0(si)) : 1.0;
        s(oi) = peak > 0.0 ? peak : 1.0;
    }
    return s;
}

Eigen::VectorXd residuals(Evaluator& eval, const FitProblem& problem, const Layout& layout,
                          const std::vector<ObservedTrace>& traces, const Eigen::VectorXd& x) {
    Eigen::VectorXd r(static_cast<Eigen::Index>(point_count(traces)));
    Eigen::Index row = 0;
    for (std::size_t t = 0; t < traces.size(); ++t) {
        const auto& a = eval.absorbance(t, layout.values(problem, x, t));
        const double scale = x(static_cast<Eigen::Index>(layout.scale(t)));
        const double offset = x(static_cast<Eigen::Index>(layout.offset(t)));
        for (std::size_t i = 0; i < a.size(); ++i, ++row) {
            r(row) = (traces[t].signal[i] - (scale * a[i] + offset)) * weight(traces[t], i);
        }
    }
    return r;
}

Linearization linearize(Evaluator& eval, const FitProblem& problem, const Layout& layout,
                        const std::vector<ObservedTrace>& traces, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& typical) {
    Linearization lin;
    lin.residual = residuals(eval, problem, layout, traces, x);
    const auto m = lin.residual.size();
    lin.jacobian = Eigen::MatrixXd::Zero(m, static_cast<Eigen::Index>(layout.size()));

    for (std::size_t p = 0; p < problem.parameters.size(); ++p) {
        const auto& fp = problem.parameters[p];
        for (std::size_t copy = 0; copy < (fp.shared ? 1 : layout.traces); ++copy) {
            const auto col = static_cast<Eigen::Index>(layout.start[p] + copy);
            double h = 1e-6 * std::max(std::abs(x(col)), 1e-3 * typical(col));
            if (x(col) + h > fp.upper) h = -h;
            Eigen::VectorXd xh = x;
            xh(col) += h;
            const double step = xh(col) - x(col);
            const auto rh = residuals(eval, problem, layout, traces, xh);
            lin.jacobian.col(col) = (rh - lin.residual) / step;
        }
    }
    Eigen::Index row = 0;
    for (std::size_t t = 0; t < traces.size(); ++t) {
        const auto& a = eval.absorbance(t, layout.values(problem, x, t));
        for (std::size_t i = 0; i < a.size(); ++i, ++row) {
            const double w = weight(traces[t], i);
            lin.jacobian(row, static_cast<Eigen::Index>(layout.scale(t))) = -a[i] * w;
            lin.jacobian(row, static_cast<Eigen::Index>(layout.offset(t))) = -w;
        }
    }
    return lin;
}

// Weighted linear least squares for one trace's scale and offset.
std::pair<double, double> linear_nuisance(const ObservedTrace& trace, const std::vector<double>& a) {
    Eigen::MatrixXd design(static_cast<Eigen::Index>(a.size()), 2);
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double w = weight(trace, i);
        design(static_cast<Eigen::Index>(i), 0) = a[i] * w;
        design(static_cast<Eigen::Index>(i), 1) = w;
        rhs(static_cast<Eigen::Index>(i)) = trace.signal[i] * w;
    }
    const Eigen::Vector2d c = design.completeOrthogonalDecomposition().solve(rhs);
    return {c(0), c(1)};
}

Eigen::VectorXd initial_point(Evaluator& eval, const FitProblem& problem, const Layout& layout,
                              const std::vector<ObservedTrace>& traces) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.size()));
    for (std::size_t p = 0; p < problem.parameters.size(); ++p) {
        for (std::size_t t = 0; t < (problem.parameters[p].shared ? 1 : layout.traces); ++t) {
            x(static_cast<Eigen::Index>(layout.start[p] + t)) = problem.parameters[p].initial;
        }
    }
    for (std::size_t t = 0; t < traces.size(); ++t) {
        const auto [scale, offset] = linear_nuisance(traces[t], eval.absorbance(t, layout.values(problem, x, t)));
        x(static_cast<Eigen::Index>(layout.scale(t))) = scale;
        x(static_cast<Eigen::Index>(layout.offset(t))) = offset;
    }
    return x;
}

// Correlation matrix of the column-normalized Jacobian; null-space columns are reported.
void correlation_analysis(const Eigen::MatrixXd& jacobian, const std::vector<std::string>& names,
                          IdentifiabilityReport& report) {
    const auto n = jacobian.cols();
    Eigen::VectorXd norms = jacobian.colwise().norm().transpose();
    const double largest = norms.maxCoeff();
    Eigen::MatrixXd normalized = jacobian;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (norms(j) > 1e-14 * largest && norms(j) > 0.0) {
            normalized.col(j) /= norms(j);
        } else {
            normalized.col(j).setZero();
            report.unidentifiable.push_back(names[static_cast<std::size_t>(j)]);
        }
    }
    const Eigen::MatrixXd normal = normalized.transpose() * normalized;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(normal, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double cutoff = 1e-13 * sv(0);
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        if (sv(k) > cutoff) {
            inv(k) = 1.0 / sv(k);
        } else {
            for (Eigen::Index j = 0; j < n; ++j) {
                const auto& name = names[static_cast<std::size_t>(j)];
                if (std::abs(svd.matrixV()(j, k)) > 0.1 &&
                    std::find(report.unidentifiable.begin(), report.unidentifiable.end(), name) ==
                        report.unidentifiable.end()) {
                    report.unidentifiable.push_back(name);
                }
            }
        }
    }
    const Eigen::MatrixXd cov = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
    report.correlation = Eigen::MatrixXd::Identity(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double d = cov(i, i) * cov(j, j);
            if (i != j && d > 0.0) report.correlation(i, j) = cov(i, j) / std::sqrt(d);
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (std::abs(report.correlation(i, j)) > 0.99) {
                report.degenerate.push_back(CorrelatedPair{names[static_cast<std::size_t>(i)],
                                                           names[static_cast<std::size_t>(j)],
                                                           report.correlation(i, j)});
            }
        }
    }
}

std::string format_value(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

}  // namespace

void validate(const ObservedTrace& trace) {
    const std::string who = trace.name.empty() ? "trace" : "trace '" + trace.name + "'";
    if (trace.delta.empty()) throw Error(who + ": empty delta grid");
    if (trace.delta.size() != trace.signal.size()) throw Error(who + ": delta and signal lengths differ");
    if (trace.sigma && trace.sigma->size() != trace.delta.size()) throw Error(who + ": sigma length differs");
    for (std::size_t i = 0; i < trace.delta.size(); ++i) {
        if (!std::isfinite(trace.delta[i]) || !std::isfinite(trace.signal[i])) throw Error(who + ": non-finite value");
        if (i > 0 && !(trace.delta[i] > trace.delta[i - 1])) throw Error(who + ": delta grid must be strictly increasing");
        if (trace.sigma && !((*trace.sigma)[i] > 0.0)) throw Error(who + ": sigma must be positive");
    }
    if (trace.power && !(*trace.power > 0.0)) throw Error(who + ": power must be positive");
}

void validate(const FitProblem& problem) {
    model::require_valid(problem.model);
    spectra::validate(problem.inhomogeneity);
    for (const auto& p : problem.parameters) {
        if (!std::isfinite(p.lower) || !std::isfinite(p.upper) || !(p.lower < p.upper)) {
            throw Error("parameter " + p.path + ": bounds must be finite with lower < upper");
        }
        if (!(p.initial >= p.lower && p.initial <= p.upper)) {
            throw Error("parameter " + p.path + ": initial value outside bounds");
        }
        if (p.power_scaled && !is_rabi(p.path)) throw Error("parameter " + p.path + ": only Rabi amplitudes scale with power");
        if (p.path == "excited_width" && !(p.split >= 0.0 && p.split <= 1.0)) {
            throw Error("parameter excited_width: split must lie in [0, 1]");
        }
    }
    for (const auto& path : problem.power_scaled_fixed) {
        if (!is_rabi(path)) throw Error("power_scaled_fixed: " + path + " is not a Rabi amplitude");
    }
    if (!(problem.power_reference > 0.0)) throw Error("power_reference must be positive");
    // Exercise every path once so unknown paths fail before any solve.
    apply_parameters(problem, [&] {
        std::vector<double> v;
        for (const auto& p : problem.parameters) v.push_back(p.initial);
        return v;
    }(), problem.power_reference);
}

TraceModel apply_parameters(const FitProblem& problem, const std::vector<double>& values, std::optional<double> power) {
    if (values.size() != problem.parameters.size()) throw Error("apply_parameters: one value per free parameter");
    TraceModel m{problem.model, problem.inhomogeneity};
    bool scaled = !problem.power_scaled_fixed.empty();
    for (const auto& p : problem.parameters) scaled = scaled || p.power_scaled;
    if (scaled && !power) throw Error("power-scaled Rabi amplitudes need a power tag on every trace");
    const double factor = power ? std::sqrt(*power / problem.power_reference) : 1.0;
    for (const auto& path : problem.power_scaled_fixed) {
        const auto field = path == "control_rabi" ? model::FieldId::control : model::FieldId::probe;
        bool free = false;
        for (const auto& p : problem.parameters) free = free || p.path == path;
        if (!free) scale_rabi(m.spec, field, model::max_rabi(m.spec, field) * factor);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto& p = problem.parameters[i];
        apply_path(m, p, p.power_scaled ? values[i] * factor : values[i]);
    }
    return m;
}

bool IdentifiabilityReport::flags(const std::string& a, const std::string& b) const {
    for (const auto& pair : degenerate) {
        if ((pair.first == a && pair.second == b) || (pair.first == b && pair.second == a)) return true;
    }
    return false;
}

IdentifiabilityReport identifiability_report(const FitProblem& problem, const std::vector<ObservedTrace>& traces) {
    validate(problem);
    if (traces.empty()) throw Error("identifiability_report: at least one trace is required");
    for (const auto& t : traces) validate(t);

    const Layout layout(problem, traces.size());
    Evaluator eval(problem, traces);
    const Eigen::VectorXd x0 = initial_point(eval, problem, layout, traces);
    const Eigen::VectorXd typical = typical_scale(problem, layout, x0, traces);
    const auto lin = linearize(eval, problem, layout, traces, x0, typical);

    IdentifiabilityReport report;
    report.names = layout.names(problem);
    for (Eigen::Index j = 0; j < lin.jacobian.cols(); ++j) {
        const double magnitude = x0(j) != 0.0 ? std::abs(x0(j)) : typical(j);
        report.sensitivity.push_back(lin.jacobian.col(j).norm() * magnitude);
    }
    correlation_analysis(lin.jacobian, report.names, report);
    return report;
}

const ParameterEstimate* FitResult::find(const std::string& name) const {
    for (const auto& e : estimates) {
        if (e.name == name) return &e;
    }
    return nullptr;
}

std::vector<std::vector<double>> forward(const FitProblem& problem, const std::vector<ObservedTrace>& traces,
                                         const std::vector<std::vector<double>>& values) {
    if (values.size() != traces.size()) throw Error("forward: one value set per trace");
    std::vector<std::vector<double>> out;
    spectra::SweepOptions options;
    options.workers = problem.options.workers;
    for (std::size_t t = 0; t < traces.size(); ++t) {
        const auto m = apply_parameters(problem, values[t], traces[t].power);
        out.push_back(spectra::inhomogeneous_spectrum(m.spec, m.inhomogeneity, traces[t].delta, options).absorbance);
    }
    return out;
}

std::vector<ObservedTrace> synthesize(const FitProblem& problem, std::vector<ObservedTrace> templates,
                                      const std::vector<std::vector<double>>& truth, double noise_fraction,
                                      std::uint64_t seed) {
    const auto clean = forward(problem, templates, truth);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t t = 0; t < templates.size(); ++t) {
        double peak = 0.0;
        for (double v : clean[t]) peak = std::max(peak, std::abs(v));
        const double sigma = noise_fraction * peak;
        templates[t].signal = clean[t];
        for (auto& v : templates[t].signal) v += sigma * normal(rng);
        if (sigma > 0.0) {
            templates[t].sigma = std::vector<double>(clean[t].size(), sigma);
        } else {
            templates[t].sigma.reset();
        }
    }
    return templates;
}

FitResult fit(const std::vector<ObservedTrace>& traces, const FitProblem& input) {
    validate(input);
    if (traces.empty()) throw Error("fit: at least one trace is required");
    for (const auto& t : traces) validate(t);

    FitProblem problem = input;
    FitResult result;

    // Γ_e and γ_e are nearly interchangeable in a single lineshape; when the
    // report says so they are fitted as one total width at fixed split.
    std::optional<std::size_t> decay_index;
    std::optional<std::size_t> dephasing_index;
    for (std::size_t p = 0; p < problem.parameters.size(); ++p) {
        if (problem.parameters[p].path == "excited_decay" && problem.parameters[p].shared) decay_index = p;
        if (problem.parameters[p].path == "excited_dephasing" && problem.parameters[p].shared) dephasing_index = p;
    }
    double split = 0.0;
    if (problem.options.merge_degenerate && decay_index && dephasing_index) {
        const auto report = identifiability_report(problem, traces);
        if (report.flags("excited_decay", "excited_dephasing")) {
            const auto decay = problem.parameters[*decay_index];
            const auto dephasing = problem.parameters[*dephasing_index];
            FreeParameter width;
            width.path = "excited_width";
            width.lower = decay.lower + dephasing.lower;
            width.upper = decay.upper + dephasing.upper;
            width.initial = decay.initial + dephasing.initial;
            split = width.initial > 0.0 ? dephasing.initial / width.initial : 0.0;
            width.split = split;
            std::vector<FreeParameter> kept;
            for (std::size_t p = 0; p < problem.parameters.size(); ++p) {
                if (p == *decay_index) {
                    kept.push_back(width);
                } else if (p != *dephasing_index) {
                    kept.push_back(problem.parameters[p]);
                }
            }
            problem.parameters = std::move(kept);
            result.combined_width = "excited_decay and excited_dephasing are degenerate; fitted excited_width = "
                                    "Gamma_e + gamma_e with gamma_e/width fixed at " + format_value(split);
            result.warnings.push_back(*result.combined_width);
        }
    }

    const Layout layout(problem, traces.size());
    Evaluator eval(problem, traces);
    Eigen::VectorXd x = initial_point(eval, problem, layout, traces);
    const Eigen::VectorXd typical = typical_scale(problem, layout, x, traces);
    const auto n = static_cast<Eigen::Index>(layout.size());

    auto clamp = [&](Eigen::VectorXd& v) {
        for (std::size_t p = 0; p < problem.parameters.size(); ++p) {
            const auto& fp = problem.parameters[p];
            for (std::size_t t = 0; t < (fp.shared ? 1 : layout.traces); ++t) {
                auto& value = v(static_cast<Eigen::Index>(layout.start[p] + t));
                value = std::clamp(value, fp.lower, fp.upper);
            }
        }
    };

    double signal_energy = 0.0;
    for (std::size_t t = 0; t < traces.size(); ++t) {
        for (std::size_t i = 0; i < traces[t].signal.size(); ++i) {
            const double w = traces[t].signal[i] * weight(traces[t], i);
            signal_energy += w * w;
        }
    }

    auto lin = linearize(eval, problem, layout, traces, x, typical);
    double cost = 0.5 * lin.residual.squaredNorm();
    double lambda = -1.0;
    double nu = 2.0;
    result.status = "maximum iterations reached";
    int iteration = 0;
    for (; iteration < problem.options.max_iterations; ++iteration) {
        if (cost <= 1e-30 * std::max(signal_energy, std::numeric_limits<double>::min())) {
            result.converged = true;
            result.status = "residual vanished";
            break;
        }
        // Scaled variables u = x / typical keep the damping isotropic.
        const Eigen::MatrixXd js = lin.jacobian * typical.asDiagonal();
        const Eigen::MatrixXd normal = js.transpose() * js;
        const Eigen::VectorXd gradient = js.transpose() * lin.residual;
        if (gradient.cwiseAbs().maxCoeff() <= problem.options.gradient_tolerance * std::sqrt(2.0 * cost) *
                                                  std::sqrt(static_cast<double>(lin.residual.size()))) {
            result.converged = true;
            result.status = "gradient tolerance reached";
            break;
        }
        Eigen::VectorXd diag = normal.diagonal();
        for (Eigen::Index j = 0; j < n; ++j) diag(j) = std::max(diag(j), 1e-12 * diag.maxCoeff());
        if (lambda < 0.0) lambda = 1e-3;

        bool accepted = false;
        bool small_step = false;
        while (!accepted) {
            Eigen::MatrixXd a = normal;
            a.diagonal() += lambda * diag;
            const Eigen::VectorXd du = a.ldlt().solve(-gradient);
            Eigen::VectorXd trial = x + typical.cwiseProduct(du);
            clamp(trial);
            const Eigen::VectorXd step_u = (trial - x).cwiseQuotient(typical);
            double relative = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                relative = std::max(relative, std::abs(trial(j) - x(j)) / (std::abs(x(j)) + typical(j)));
            }
            if (relative <= problem.options.step_tolerance) {
                small_step = true;
                break;
            }
            const Eigen::VectorXd r_trial = residuals(eval, problem, layout, traces, trial);
            const double cost_trial = 0.5 * r_trial.squaredNorm();
            const double predicted = -step_u.dot(gradient) - 0.5 * step_u.dot(normal * step_u);
            const double rho = predicted > 0.0 ? (cost - cost_trial) / predicted : -1.0;
            if (cost_trial < cost && rho > 0.0) {
                const double decrease = cost - cost_trial;
                x = trial;
                lin = linearize(eval, problem, layout, traces, x, typical);
                cost = 0.5 * lin.residual.squaredNorm();
                lambda *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
                nu = 2.0;
                accepted = true;
                if (decrease <= 1e-12 * cost) small_step = true;
            } else {
                lambda *= nu;
                nu *= 2.0;
                if (lambda > 1e16) {
                    small_step = true;
                    break;
                }
            }
        }
        if (small_step) {
            result.converged = true;
            result.status = "step tolerance reached";
            ++iteration;
            break;
        }
    }
    result.iterations = iteration;
    result.evaluations = eval.evaluations();

    // Statistics and covariance at the optimum.
    const auto m = lin.residual.size();
    result.chi2 = lin.residual.squaredNorm();
    result.residual_norm = std::sqrt(result.chi2);
    const auto dof = std::max<Eigen::Index>(1, m - n);
    result.reduced_chi2 = result.chi2 / static_cast<double>(dof);

    IdentifiabilityReport final_report;
    const auto names = layout.names(problem);
    correlation_analysis(lin.jacobian, names, final_report);
    const Eigen::MatrixXd js = lin.jacobian * typical.asDiagonal();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(js, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    Eigen::VectorXd inv_sq = Eigen::VectorXd::Zero(sv.size());
    for (Eigen::Index k = 0; k < sv.size(); ++k) {
        if (sv(k) > 1e-12 * sv(0)) inv_sq(k) = 1.0 / (sv(k) * sv(k));
    }
    result.covariance = typical.asDiagonal() * (svd.matrixV() * inv_sq.asDiagonal() * svd.matrixV().transpose()) *
                        typical.asDiagonal();
    result.covariance *= result.reduced_chi2;
    result.covariance = 0.5 * (result.covariance + result.covariance.transpose());
    result.covariance_labels = names;

    for (const auto& name : final_report.unidentifiable) {
        result.warnings.push_back("parameter " + name + " is not identifiable (singular Jacobian)");
    }
    for (const auto& pair : final_report.degenerate) {
        result.warnings.push_back("parameters " + pair.first + " and " + pair.second + " are degenerate (correlation " +
                                  format_value(pair.correlation) + ")");
    }

    auto unidentifiable = [&](const std::string& name) {
        return std::find(final_report.unidentifiable.begin(), final_report.unidentifiable.end(), name) !=
               final_report.unidentifiable.end();
    };
    for (std::size_t p = 0; p < problem.parameters.size(); ++p) {
        const auto& fp = problem.parameters[p];
        for (std::size_t t = 0; t < (fp.shared ? 1 : layout.traces); ++t) {
            const auto idx = static_cast<Eigen::Index>(layout.start[p] + t);
            ParameterEstimate e;
            e.name = names[static_cast<std::size_t>(idx)];
            e.path = fp.path;
            e.trace = fp.shared ? -1 : static_cast<int>(t);
            e.value = x(idx);
            e.uncertainty = std::sqrt(std::max(0.0, result.covariance(idx, idx)));
            e.at_bound = x(idx) <= fp.lower || x(idx) >= fp.upper;
            e.identifiable = !unidentifiable(e.name);
            result.estimates.push_back(e);
            if (fp.path == "excited_width") {
                ParameterEstimate decay = e;
                decay.name = decay.path = "excited_decay";
                decay.value = (1.0 - split) * e.value;
                decay.uncertainty = (1.0 - split) * e.uncertainty;
                ParameterEstimate dephasing = e;
                dephasing.name = dephasing.path = "excited_dephasing";
                dephasing.value = split * e.value;
                dephasing.uncertainty = split * e.uncertainty;
                result.estimates.push_back(decay);
                result.estimates.push_back(dephasing);
            }
        }
    }
    for (std::size_t t = 0; t < traces.size(); ++t) {
        const auto si = static_cast<Eigen::Index>(layout.scale(t));
        const auto oi = static_cast<Eigen::Index>(layout.offset(t));
        result.scale.push_back(x(si));
        result.offset.push_back(x(oi));
        result.scale_uncertainty.push_back(std::sqrt(std::max(0.0, result.covariance(si, si))));
        result.offset_uncertainty.push_back(std::sqrt(std::max(0.0, result.covariance(oi, oi))));
        const auto& a = eval.absorbance(t, layout.values(problem, x, t));
        std::vector<double> model(a.size());
        std::vector<double> res(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            model[i] = x(si) * a[i] + x(oi);
            res[i] = traces[t].signal[i] - model[i];
        }
        result.model.push_back(std::move(model));
        result.residuals.push_back(std::move(res));
    }
    if (!result.converged) result.warnings.push_back("fit did not converge: " + result.status);
    return result;
}

}  // namespace eitsim::fit
