#include "eitsim/spectra.hpp"

#include "eitsim/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace eitsim::spectra {

using model::DetuningPoint;
using model::FieldId;

namespace {

constexpr double kFwhmPerSigma = 2.3548200450309493;  // 2 sqrt(2 ln 2)

void require_increasing(const std::vector<double>& grid, const char* what) {
    for (std::size_t i = 1; i < grid.size(); ++i) {
        if (!(grid[i] > grid[i - 1])) throw Error(std::string(what) + " must be strictly increasing");
    }
    for (double x : grid) {
        if (!std::isfinite(x)) throw Error(std::string(what) + " must be finite");
    }
}

std::vector<DetuningSample> weigh(std::vector<double> nodes, double sigma) {
    // Trapezoid cells on the (sorted, possibly non-uniform) node set.
    const std::size_t n = nodes.size();
    std::vector<DetuningSample> out(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double left = i == 0 ? nodes[i] : nodes[i - 1];
        const double right = i + 1 == n ? nodes[i] : nodes[i + 1];
        const double z = nodes[i] / sigma;
        out[i] = DetuningSample{nodes[i], std::exp(-0.5 * z * z) * 0.5 * (right - left)};
        total += out[i].weight;
    }
    for (auto& s : out) s.weight /= total;
    return out;
}

}  // namespace

void validate(const InhomogeneitySpec& inhom) {
    if (!std::isfinite(inhom.fwhm) || inhom.fwhm < 0.0) throw Error("inhomogeneity fwhm must be >= 0");
    if (inhom.n_samples < 1 || inhom.n_samples % 2 == 0) throw Error("inhomogeneity n_samples must be odd and >= 1");
    if (!std::isfinite(inhom.truncation) || inhom.truncation <= 0.0) throw Error("inhomogeneity truncation must be > 0");
}

std::vector<DetuningSample> sample_detunings(const InhomogeneitySpec& inhom, double linewidth) {
    validate(inhom);
    if (inhom.fwhm == 0.0 || inhom.n_samples == 1) return {DetuningSample{0.0, 1.0}};

    const double sigma = inhom.fwhm / kFwhmPerSigma;
    const double half = inhom.truncation * sigma;
    const int n = inhom.n_samples;

    if (inhom.tiered && linewidth > 0.0 && inhom.fwhm / linewidth > 100.0) {
        const double core = 50.0 * linewidth;
        const double step = 0.5 * linewidth;
        const int core_half_count = static_cast<int>(std::lround(core / step));
        const int core_count = 2 * core_half_count + 1;
        const int outer_per_side = (n - core_count) / 2;
        if (outer_per_side >= 1 && core < half) {
            const double outer_step = (half - core) / outer_per_side;
            std::vector<double> positive;
            for (int k = 1; k <= core_half_count; ++k) positive.push_back(k * step);
            for (int k = 1; k <= outer_per_side; ++k) positive.push_back(core + k * outer_step);
            std::vector<double> nodes;
            nodes.reserve(static_cast<std::size_t>(n));
            for (auto it = positive.rbegin(); it != positive.rend(); ++it) nodes.push_back(-*it);
            nodes.push_back(0.0);
            nodes.insert(nodes.end(), positive.begin(), positive.end());
            return weigh(std::move(nodes), sigma);
        }
    }
    return weigh(symmetric_grid(half, n), sigma);
}

double probe_absorption(const lindblad::DensityMatrix& rho, const LevelSystemSpec& spec) {
    const double scale = model::max_rabi(spec, FieldId::probe);
    if (scale == 0.0) return 0.0;
    const auto* probe = spec.field(FieldId::probe);
    double sum = 0.0;
    for (const auto& c : probe->couplings) {
        const auto g = spec.require_index(c.ground);
        const auto e = spec.require_index(c.excited);
        sum += c.rabi * rho(e, g).imag();
    }
    return -2.0 / scale * sum;
}

SpectrumEngine::Scratch::Scratch(std::size_t levels)
    : solver(levels),
      hamiltonian(static_cast<Eigen::Index>(levels), static_cast<Eigen::Index>(levels)),
      liouvillian(static_cast<Eigen::Index>(levels * levels), static_cast<Eigen::Index>(levels * levels)) {}

SpectrumEngine::SpectrumEngine(const LevelSystemSpec& spec)
    : n_(spec.dimension()), builder_((model::require_valid(spec), spec)) {
    dissipator_ = lindblad::dissipator(spec.labels(), spec.decays, spec.dephasings);
    probe_scale_ = model::max_rabi(spec, FieldId::probe);
    if (const auto* probe = spec.field(FieldId::probe)) {
        for (const auto& c : probe->couplings) {
            probe_.push_back(ProbeTerm{static_cast<Eigen::Index>(spec.require_index(c.ground)),
                                       static_cast<Eigen::Index>(spec.require_index(c.excited)), c.rabi});
        }
    }
}

double SpectrumEngine::absorbance(const DetuningPoint& point, Scratch& s) const {
    builder_.fill(point, s.hamiltonian);
    s.liouvillian = dissipator_;
    lindblad::add_commutator(s.liouvillian, s.hamiltonian);
    const Eigen::VectorXcd* x = nullptr;
    try {
        x = &s.solver.solve(s.liouvillian);
    } catch (const Error& e) {
        std::ostringstream msg;
        msg << e.what() << " at Delta=" << point.control << " Hz, delta=" << point.two_photon << " Hz";
        throw SpectrumPointError(msg.str(), point.control, point.two_photon);
    }
    if (probe_scale_ == 0.0) return 0.0;

    const auto n = static_cast<Eigen::Index>(n_);
    double trace = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) trace += (*x)(i + i * n).real();
    double sum = 0.0;
    for (const auto& p : probe_) {
        // Hermitian part of rho(e, g).
        const std::complex<double> eg = (*x)(p.excited + p.ground * n);
        const std::complex<double> ge = (*x)(p.ground + p.excited * n);
        sum += p.rabi * 0.5 * (eg.imag() - ge.imag());
    }
    return -2.0 / probe_scale_ * sum / trace;
}

std::vector<double> linspace(double start, double stop, int points) {
    if (points < 1) throw Error("grid must have at least one point");
    if (points == 1) return {start};
    std::vector<double> out(static_cast<std::size_t>(points));
    const double step = (stop - start) / (points - 1);
    for (int i = 0; i < points; ++i) out[static_cast<std::size_t>(i)] = start + i * step;
    out.back() = stop;
    return out;
}

std::vector<double> symmetric_grid(double half_width, int points) {
    if (points < 1) throw Error("grid must have at least one point");
    if (points == 1) return {0.0};
    std::vector<double> out(static_cast<std::size_t>(points), 0.0);
    const double step = 2.0 * half_width / (points - 1);
    for (int i = points / 2; i < points; ++i) {
        const double value = (i - 0.5 * (points - 1)) * step;
        out[static_cast<std::size_t>(i)] = value;
        out[static_cast<std::size_t>(points - 1 - i)] = -value;
    }
    if (points % 2 == 1) out[static_cast<std::size_t>(points / 2)] = 0.0;
    return out;
}

std::vector<double> default_delta_grid(const LevelSystemSpec& spec, int points) {
    const double width = std::max(model::excited_linewidth(spec), model::max_rabi(spec, FieldId::control));
    return symmetric_grid(6.0 * (width > 0.0 ? width : 1.0), points);
}

SpectrumTrace homogeneous_spectrum(const LevelSystemSpec& spec, double control_detuning,
                                   const std::vector<double>& delta_grid, const SweepOptions& options) {
    require_increasing(delta_grid, "delta grid");
    const SpectrumEngine engine(spec);
    SpectrumTrace trace;
    trace.delta = delta_grid;
    trace.absorbance.assign(delta_grid.size(), 0.0);

    const int workers = resolve_workers(options.workers);
    std::vector<std::optional<SpectrumEngine::Scratch>> scratch(static_cast<std::size_t>(workers));
    parallel_for(delta_grid.size(), workers, [&](int w, std::size_t i) {
        auto& s = scratch[static_cast<std::size_t>(w)];
        if (!s) s.emplace(engine.levels());
        trace.absorbance[i] = engine.absorbance(DetuningPoint{control_detuning, delta_grid[i]}, *s);
    });

    trace.metadata.model_hash = model::model_fingerprint(spec);
    trace.metadata.mode = "homogeneous";
    trace.metadata.control_detuning = control_detuning;
    return trace;
}

Eigen::MatrixXd ensemble_components(const LevelSystemSpec& spec, const std::vector<DetuningSample>& samples,
                                    const std::vector<double>& delta_grid, const SweepOptions& options) {
    require_increasing(delta_grid, "delta grid");
    const SpectrumEngine engine(spec);
    const auto rows = static_cast<Eigen::Index>(samples.size());
    const auto cols = static_cast<Eigen::Index>(delta_grid.size());
    Eigen::MatrixXd out(rows, cols);

    const int workers = resolve_workers(options.workers);
    std::vector<std::optional<SpectrumEngine::Scratch>> scratch(static_cast<std::size_t>(workers));
    parallel_for(samples.size(), workers, [&](int w, std::size_t k) {
        auto& s = scratch[static_cast<std::size_t>(w)];
        if (!s) s.emplace(engine.levels());
        for (Eigen::Index j = 0; j < cols; ++j) {
            out(static_cast<Eigen::Index>(k), j) =
                engine.absorbance(DetuningPoint{samples[k].detuning, delta_grid[static_cast<std::size_t>(j)]}, *s);
        }
    });
    return out;
}

std::vector<double> weighted_sum(const Eigen::MatrixXd& components, const std::vector<DetuningSample>& samples) {
    std::vector<double> out(static_cast<std::size_t>(components.cols()), 0.0);
    for (Eigen::Index k = 0; k < components.rows(); ++k) {
        const double w = samples[static_cast<std::size_t>(k)].weight;
        for (Eigen::Index j = 0; j < components.cols(); ++j) out[static_cast<std::size_t>(j)] += w * components(k, j);
    }
    return out;
}

SpectrumTrace inhomogeneous_spectrum(const LevelSystemSpec& spec, const InhomogeneitySpec& inhom,
                                     const std::vector<double>& delta_grid, const SweepOptions& options) {
    model::require_valid(spec);
    const double linewidth = model::excited_linewidth(spec);
    const auto samples = sample_detunings(inhom, linewidth);

    SpectrumTrace trace;
    trace.delta = delta_grid;
    trace.absorbance = weighted_sum(ensemble_components(spec, samples, delta_grid, options), samples);
    trace.metadata.model_hash = model::model_fingerprint(spec);
    trace.metadata.mode = "inhomogeneous";
    trace.metadata.inhomogeneity = inhom;
    trace.metadata.samples_used = static_cast<int>(samples.size());
    if (samples.size() > 2) {
        const std::size_t mid = samples.size() / 2;
        const double outer = samples[1].detuning - samples[0].detuning;
        const double inner = samples[mid + 1].detuning - samples[mid].detuning;
        trace.metadata.tiered_sampling = std::abs(outer - inner) > 1e-9 * outer;
    }

    if (options.check_convergence && samples.size() > 1) {
        InhomogeneitySpec doubled = inhom;
        doubled.n_samples = 2 * inhom.n_samples - 1;
        const auto fine_samples = sample_detunings(doubled, linewidth);
        SweepOptions inner = options;
        inner.check_convergence = false;
        const auto fine = weighted_sum(ensemble_components(spec, fine_samples, delta_grid, inner), fine_samples);
        double peak = 0.0;
        double change = 0.0;
        for (std::size_t i = 0; i < fine.size(); ++i) {
            peak = std::max(peak, std::abs(fine[i]));
            change = std::max(change, std::abs(fine[i] - trace.absorbance[i]));
        }
        const double relative = peak > 0.0 ? change / peak : 0.0;
        if (relative > 0.005) {
            std::ostringstream msg;
            msg << "inhomogeneous average not converged: doubling n_samples to " << doubled.n_samples
                << " changes the trace by " << 100.0 * relative << "% of its maximum";
            throw NonConvergedSampling(msg.str(), relative);
        }
    }
    return trace;
}

ThresholdReport eit_threshold(double omega_c, double delta_i, double gamma_g) {
    if (omega_c < 0.0 || delta_i < 0.0 || gamma_g < 0.0) throw Error("eit_threshold: inputs must be non-negative");
    ThresholdReport r;
    const double product = delta_i * gamma_g;
    r.min_omega_c = std::sqrt(product);
    if (product == 0.0) {
        r.satisfied = true;
        r.margin = std::numeric_limits<double>::infinity();
        return r;
    }
    r.margin = omega_c * omega_c / product;
    r.satisfied = omega_c * omega_c > product;
    return r;
}

double rabi_from_power(double power, double omega_ref, double power_ref) {
    if (!(power > 0.0) || !(power_ref > 0.0)) throw Error("rabi_from_power: powers must be positive");
    return omega_ref * std::sqrt(power / power_ref);
}

double power_for_rabi(double omega, double omega_ref, double power_ref) {
    if (!(omega_ref > 0.0) || !(power_ref > 0.0)) throw Error("power_for_rabi: calibration must be positive");
    const double ratio = omega / omega_ref;
    return power_ref * ratio * ratio;
}

LevelSystemSpec instantiate_levels(const LevelSystemSpec& template_spec, const spin::TransitionSet& levels) {
    LevelSystemSpec spec = template_spec;
    for (auto& level : spec.levels) {
        const auto& label = level.label;
        const bool ground = level.manifold == model::Manifold::ground;
        if (label.size() != 2 || label[0] != (ground ? 'g' : 'e') || label[1] < '1' || label[1] > '3') {
            throw InvalidModel("magneto-map templates label levels g1..g3 / e1..e3, got '" + label + "'");
        }
        const auto idx = static_cast<std::size_t>(label[1] - '1');
        level.energy = ground ? levels.ground[idx] : levels.excited[idx];
    }
    return spec;
}

MagnetoMap magneto_map(const LevelSystemSpec& template_spec, const spin::SpinModel& ground,
                       const spin::SpinModel& excited, const FieldRange& fields,
                       const std::vector<double>& difference_grid, const InhomogeneitySpec& inhom,
                       const SweepOptions& options) {
    require_increasing(difference_grid, "difference grid");
    if (!std::isfinite(fields.start) || !std::isfinite(fields.stop)) throw Error("field range must be finite");
    const int rows = fields.start == fields.stop ? 1 : fields.points;

    MagnetoMap map;
    map.difference_grid = difference_grid;
    map.b_grid = linspace(fields.start, fields.stop, rows);
    map.absorbance.resize(rows, static_cast<Eigen::Index>(difference_grid.size()));

    for (int r = 0; r < rows; ++r) {
        spin::SpinModel g = ground;
        spin::SpinModel e = excited;
        g.field = e.field = map.b_grid[static_cast<std::size_t>(r)];
        const LevelSystemSpec spec = instantiate_levels(template_spec, spin::level_structure(g, e));

        // x = f_probe - f_control; the reference two-photon resonance sits at
        // x = E(control ground) - E(probe ground), so delta = that - x.
        const auto lasers = model::laser_frequencies(spec, model::DetuningPoint{0.0, 0.0});
        const double resonance = lasers.probe - lasers.control;
        std::vector<double> delta(difference_grid.size());
        for (std::size_t j = 0; j < delta.size(); ++j) delta[delta.size() - 1 - j] = resonance - difference_grid[j];

        const auto trace = inhomogeneous_spectrum(spec, inhom, delta, options);
        for (std::size_t j = 0; j < delta.size(); ++j) {
            map.absorbance(r, static_cast<Eigen::Index>(j)) = trace.absorbance[delta.size() - 1 - j];
        }
    }
    return map;
}

}  // namespace eitsim::spectra
