#include "wflow/schemes.hpp"

#include "wflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <numeric>

namespace wflow {

void TrainConfig::validate() const {
    if (hidden.empty()) throw DomainError("at least one hidden layer is required");
    for (auto w : hidden) {
        if (w == 0) throw DomainError("hidden widths must be positive");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw DomainError("learning rate must be positive");
    if (first_iterations == 0 || iterations == 0) throw DomainError("iterations per step must be at least 1");
}

StepSchedule::StepSchedule(std::vector<Entry> entries) : entries_(std::move(entries)) {
    if (entries_.empty()) throw DomainError("step schedule is empty");
    if (entries_.front().activation != 0.0) throw DomainError("step schedule must start at time 0");
    for (std::size_t k = 0; k < entries_.size(); ++k) {
        if (!(entries_[k].tau > 0.0) || !std::isfinite(entries_[k].tau)) throw DomainError("step sizes must be positive");
        if (k > 0 && !(entries_[k].activation > entries_[k - 1].activation)) {
            throw DomainError("step schedule activation times must be strictly increasing");
        }
    }
}

std::size_t StepSchedule::segment_at(double t) const {
    const double slack = 1e-9 * std::max(1.0, std::abs(t));
    std::size_t seg = 0;
    for (std::size_t k = 1; k < entries_.size(); ++k) {
        if (entries_[k].activation <= t + slack) seg = k;
    }
    return seg;
}

// Initial configurations -----------------------------------------------------

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require_positive(double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError(std::string(what) + " must be positive");
}

void require_planar(const std::vector<double>& center, const char* what) {
    if (center.size() != 2) throw ShapeError(std::string(what) + " initializer is two-dimensional");
}

Eigen::Map<const Eigen::RowVectorXd> as_row(const std::vector<double>& v) {
    return {v.data(), static_cast<Eigen::Index>(v.size())};
}

}  // namespace

std::size_t initializer_dim(const Initializer& init) {
    return std::visit(overloaded{
                          [](const DiracSum& s) -> std::size_t {
                              if (s.centers.empty()) throw ShapeError("DiracSum needs at least one center");
                              return s.centers.front().size();
                          },
                          [](const SquareSum& s) -> std::size_t {
                              if (s.centers.empty()) throw ShapeError("SquareSum needs at least one center");
                              return s.centers.front().size();
                          },
                          [](const auto& other) -> std::size_t { return other.center.size(); },
                      },
                      init);
}

ParticleCloud make_uniform_squares(const std::vector<std::vector<double>>& centers, double radius, std::size_t n,
                                   RandomSource& rng) {
    if (centers.empty()) throw ShapeError("need at least one center");
    require_positive(radius, "radius");
    const std::size_t d = centers.front().size();
    if (d == 0) throw ShapeError("centers must have at least one coordinate");
    Points x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    const std::size_t per = n / centers.size();
    const std::size_t extra = n % centers.size();
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < centers.size(); ++c) {
        if (centers[c].size() != d) throw ShapeError("centers have different dimensions");
        const std::size_t count = per + (c < extra ? 1 : 0);
        for (std::size_t i = 0; i < count; ++i, ++row) {
            for (std::size_t k = 0; k < d; ++k) {
                x(row, static_cast<Eigen::Index>(k)) = centers[c][k] + radius * (2.0 * rng.uniform() - 1.0);
            }
        }
    }
    return ParticleCloud(std::move(x));
}

ParticleCloud make_initial(const Initializer& init, std::size_t n, RandomSource& rng) {
    if (n < 1) throw ShapeError("need at least one particle");
    const auto rows = static_cast<Eigen::Index>(n);
    return std::visit(
        overloaded{
            [&](const Dirac& s) { return ParticleCloud::filled(n, s.center); },
            [&](const DiracSum& s) {
                const std::size_t d = initializer_dim(s);
                Points x(rows, static_cast<Eigen::Index>(d));
                const std::size_t per = n / s.centers.size();
                const std::size_t extra = n % s.centers.size();
                Eigen::Index row = 0;
                for (std::size_t c = 0; c < s.centers.size(); ++c) {
                    if (s.centers[c].size() != d) throw ShapeError("centers have different dimensions");
                    const std::size_t count = per + (c < extra ? 1 : 0);
                    for (std::size_t i = 0; i < count; ++i) x.row(row++) = as_row(s.centers[c]);
                }
                return ParticleCloud(std::move(x));
            },
            [&](const UniformSquare& s) { return make_uniform_squares({s.center}, s.radius, n, rng); },
            [&](const SquareSum& s) { return make_uniform_squares(s.centers, s.radius, n, rng); },
            [&](const Circle& s) {
                require_planar(s.center, "Circle");
                require_positive(s.radius, "radius");
                Points x(rows, 2);
                for (Eigen::Index i = 0; i < rows; ++i) {
                    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
                    x(i, 0) = s.center[0] + s.radius * std::cos(a);
                    x(i, 1) = s.center[1] + s.radius * std::sin(a);
                }
                return ParticleCloud(std::move(x));
            },
            [&](const Gaussian& s) {
                require_positive(s.stddev, "stddev");
                const auto d = static_cast<Eigen::Index>(s.center.size());
                Points x(rows, d);
                for (Eigen::Index i = 0; i < rows; ++i) {
                    for (Eigen::Index k = 0; k < d; ++k) x(i, k) = s.center[static_cast<std::size_t>(k)] + s.stddev * rng.normal();
                }
                return ParticleCloud(std::move(x));
            },
            [&](const Ellipse& s) {
                require_planar(s.center, "Ellipse");
                if (s.semi_axes.size() != 2) throw ShapeError("Ellipse needs two semi-axes");
                require_positive(s.semi_axes[0], "semi-axis");
                require_positive(s.semi_axes[1], "semi-axis");
                Points x(rows, 2);
                for (Eigen::Index i = 0; i < rows; ++i) {
                    const double rho = std::sqrt(rng.uniform());
                    const double a = 2.0 * std::numbers::pi * rng.uniform();
                    x(i, 0) = s.center[0] + s.semi_axes[0] * rho * std::cos(a);
                    x(i, 1) = s.center[1] + s.semi_axes[1] * rho * std::sin(a);
                }
                return ParticleCloud(std::move(x));
            },
            [&](const Cross& s) {
                require_planar(s.center, "Cross");
                require_positive(s.radius, "radius");
                Points x(rows, 2);
                for (Eigen::Index i = 0; i < rows; ++i) {
                    const double u = s.radius * (2.0 * rng.uniform() - 1.0);
                    const bool horizontal = i % 2 == 0;
                    x(i, 0) = s.center[0] + (horizontal ? u : 0.0);
                    x(i, 1) = s.center[1] + (horizontal ? 0.0 : u);
                }
                return ParticleCloud(std::move(x));
            },
        },
        init);
}

// Neural steps ---------------------------------------------------------------

namespace {

// Per-step generators: network init, latent draws, batch selection.
struct StepStreams {
    explicit StepStreams(RandomSource& rng)
        : base(rng.next_u64()), init(base.split(0)), latent(base.split(1)), batch(base.split(2)) {}

    RandomSource base;
    RandomSource init;
    RandomSource latent;
    RandomSource batch;
};

std::size_t effective_batch(const TrainConfig& cfg, std::size_t n) {
    return cfg.batch == 0 || cfg.batch >= n ? n : cfg.batch;
}

// Uniform subset without replacement, in increasing index order.
std::vector<Eigen::Index> draw_subset(RandomSource& rng, std::size_t n, std::size_t k) {
    std::vector<Eigen::Index> pool(n);
    std::iota(pool.begin(), pool.end(), Eigen::Index{0});
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.index(n - i)]);
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

Points gather(const Points& x, const std::vector<Eigen::Index>& rows) {
    Points out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
    return out;
}

void check_tau(double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("time step must be positive");
}

}  // namespace

double backward_loss(const MlpParams& params, const Points& x, const Points& z, const Functional& f, double tau,
                     MlpParams* grad) {
    check_tau(tau);
    Tape tape;
    const TapeMlp net = record_parameters(tape, params);
    const Tape::Var xv = tape.constant(x);
    const Tape::Var out = record_forward(tape, net, x, z);
    const Tape::Var transport =
        tape.scale(tape.squared_norm(tape.sub(xv, out)), 1.0 / (2.0 * tau * static_cast<double>(x.rows())));
    const Tape::Var root = tape.add(transport, tape.energy(out, f));
    if (grad) {
        tape.backward(root);
        *grad = collect_gradients(tape, net);
    }
    return tape.scalar(root);
}

double forward_loss(const MlpParams& params, const Points& x, const Points& z, const DirectionalDerivativeModel& model,
                    MlpParams* grad) {
    Tape tape;
    const TapeMlp net = record_parameters(tape, params);
    const Tape::Var out = record_forward(tape, net, x, z);
    const Tape::Var second_moment = tape.scale(tape.squared_norm(out), 1.0 / static_cast<double>(x.rows()));
    if (!(tape.scalar(second_moment) > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    const Tape::Var root = tape.quotient(tape.directional(out, model), tape.sqrt(second_moment));
    if (grad) {
        tape.backward(root);
        *grad = collect_gradients(tape, net);
    }
    return tape.scalar(root);
}

BackwardResult backward_step(const ParticleCloud& c, const Functional& f, double tau, const TrainConfig& cfg,
                             std::size_t iterations, RandomSource& rng) {
    check_tau(tau);
    cfg.validate();
    validate(f);
    StepStreams streams(rng);
    const std::size_t n = c.size();
    const std::size_t d = c.dim();
    const std::size_t b = effective_batch(cfg, n);
    MlpParams params = init_mlp(streams.init, d, cfg.hidden);
    AdamState adam(params, cfg.learning_rate);
    double loss = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t it = 0; it < iterations; ++it) {
        Points x = b == n ? c.points() : gather(c.points(), draw_subset(streams.batch, n, b));
        const ParticleCloud z = sample_latent(streams.latent, b, d);
        MlpParams grad;
        loss = backward_loss(params, x, z.points(), f, tau, &grad);
        adam_step(params, grad, adam);
    }
    const ParticleCloud z = sample_latent(streams.latent, n, d);
    ParticleCloud moved = mlp_forward(params, c, z);
    return {std::move(moved), std::move(params), loss};
}

ForwardResult forward_step(const ParticleCloud& c, const Functional& f, double tau, const TrainConfig& cfg,
                           std::size_t iterations, RandomSource& rng) {
    check_tau(tau);
    cfg.validate();
    validate(f);
    StepStreams streams(rng);
    const std::size_t n = c.size();
    const std::size_t d = c.dim();
    const std::size_t b = effective_batch(cfg, n);
    const DirectionalDerivativeModel full_model(f, c);
    {
        // A generic direction exposes an unbounded derivative before any training.
        RandomSource probe = streams.base.split(3);
        const double probe_value = full_model.value(sample_latent(probe, n, d).points());
        if (probe_value == -std::numeric_limits<double>::infinity()) {
            throw SteepestDescentUndefined(
                "directional derivative is -inf; no steepest descent direction exists at this configuration");
        }
    }
    MlpParams params = init_mlp(streams.init, d, cfg.hidden);
    AdamState adam(params, cfg.learning_rate);
    double loss = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t it = 0; it < iterations; ++it) {
        std::optional<DirectionalDerivativeModel> batch_model;
        Points x;
        if (b == n) {
            x = c.points();
        } else {
            x = gather(c.points(), draw_subset(streams.batch, n, b));
            batch_model.emplace(f, ParticleCloud(x));
        }
        const DirectionalDerivativeModel& model = batch_model ? *batch_model : full_model;
        const ParticleCloud z = sample_latent(streams.latent, b, d);
        MlpParams grad;
        const double value = forward_loss(params, x, z.points(), model, &grad);
        if (std::isnan(value)) continue;
        loss = value;
        adam_step(params, grad, adam);
    }
    const ParticleCloud z = sample_latent(streams.latent, n, d);
    const ParticleCloud direction = mlp_forward(params, c, z);
    const double m = direction.points().squaredNorm() / static_cast<double>(n);
    double scale = 0.0;
    if (m > 0.0) {
        const double dd = full_model.value(direction.points());
        if (dd == -std::numeric_limits<double>::infinity()) {
            throw SteepestDescentUndefined("directional derivative of the learned direction is -inf");
        }
        scale = std::max(-dd / m, 0.0);
    }
    if (scale == 0.0) return {c, 0.0, loss};
    Points moved = c.points() + (tau * scale) * direction.points();
    return {ParticleCloud(std::move(moved)), scale, loss};
}

// Particle flow ----------------------------------------------------------------

std::optional<std::pair<std::size_t, std::size_t>> find_coincident(const ParticleCloud& c) {
    const Points& x = c.points();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    auto row_less = [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index k = 0; k < x.cols(); ++k) {
            if (x(a, k) != x(b, k)) return x(a, k) < x(b, k);
        }
        return a < b;
    };
    std::sort(order.begin(), order.end(), row_less);
    std::optional<std::pair<std::size_t, std::size_t>> first;
    for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        const Eigen::Index a = order[k];
        const Eigen::Index b = order[k + 1];
        if ((x.row(a).array() == x.row(b).array()).all()) {
            std::pair<std::size_t, std::size_t> hit{static_cast<std::size_t>(std::min(a, b)),
                                                    static_cast<std::size_t>(std::max(a, b))};
            if (!first || hit < *first) first = hit;
        }
    }
    return first;
}

ParticleCloud particle_flow_step(const ParticleCloud& c, const Functional& f, double tau) {
    check_tau(tau);
    validate(f);
    if (auto hit = find_coincident(c)) throw CoincidentParticles(hit->first, hit->second);
    const ParticleGradient g = particle_gradient(f, c);
    Points moved = c.points() - (tau * static_cast<double>(c.size())) * g.gradient;
    return ParticleCloud(std::move(moved));
}

// Runner -----------------------------------------------------------------------

const char* scheme_name(Scheme s) {
    switch (s) {
        case Scheme::backward: return "backward";
        case Scheme::forward: return "forward";
        case Scheme::particle: return "particle";
    }
    return "?";
}

std::optional<Scheme> parse_scheme(std::string_view name) {
    if (name == "backward") return Scheme::backward;
    if (name == "forward") return Scheme::forward;
    if (name == "particle") return Scheme::particle;
    return std::nullopt;
}

FlowTrace run_flow(Scheme scheme, const Functional& f, const ParticleCloud& start, const StepSchedule& schedule,
                   double horizon, const TrainConfig& cfg, RandomSource& rng, const StepCallback& on_step) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw DomainError("horizon must be positive");
    validate(f);
    if (scheme != Scheme::particle) cfg.validate();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const double stop = horizon - 1e-9 * std::max(1.0, horizon);

    FlowTrace trace;
    trace.snapshots.push_back({0.0, start});
    ParticleCloud current = start;
    double t = 0.0;
    std::size_t segment = 0;
    double segment_start = 0.0;
    std::size_t segment_count = 0;
    for (std::size_t step = 0; t < stop; ++step) {
        const std::size_t seg = schedule.segment_at(t);
        if (seg != segment) {
            segment = seg;
            segment_start = t;
            segment_count = 0;
        }
        const double tau = schedule.entries()[seg].tau;
        StepDiagnostics diag{segment_start + static_cast<double>(segment_count + 1) * tau, nan, nan, nan};
        try {
            switch (scheme) {
                case Scheme::backward: {
                    auto res = backward_step(current, f, tau, cfg, cfg.iterations_for(step), rng);
                    current = std::move(res.cloud);
                    diag.loss = res.loss;
                    break;
                }
                case Scheme::forward: {
                    auto res = forward_step(current, f, tau, cfg, cfg.iterations_for(step), rng);
                    current = std::move(res.cloud);
                    diag.scale = res.scale;
                    diag.loss = res.loss;
                    break;
                }
                case Scheme::particle: current = particle_flow_step(current, f, tau); break;
            }
            diag.functional_value = functional_value(f, current);
        } catch (const Error& e) {
            std::throw_with_nested(StepError(t, e.what()));
        }
        ++segment_count;
        t = diag.t;
        trace.snapshots.push_back({t, current});
        trace.diagnostics.push_back(diag);
        if (on_step) on_step(trace.snapshots.back(), diag);
    }
    return trace;
}

FlowTrace run_flow(Scheme scheme, const Functional& f, const Initializer& init, std::size_t n,
                   const StepSchedule& schedule, double horizon, const TrainConfig& cfg, RandomSource& rng,
                   const StepCallback& on_step) {
    RandomSource init_rng = rng.split(0x1417);
    const ParticleCloud start = make_initial(init, n, init_rng);
    return run_flow(scheme, f, start, schedule, horizon, cfg, rng, on_step);
}

}  // namespace wflow
