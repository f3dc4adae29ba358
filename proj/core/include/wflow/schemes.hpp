#pragma once

#include "wflow/functionals.hpp"
#include "wflow/measures.hpp"
#include "wflow/neural.hpp"

#include <functional>
#include <optional>
#include <variant>
#include <vector>

namespace wflow {

struct TrainConfig {
    std::vector<std::size_t> hidden{128, 128, 128};
    double learning_rate = 1e-3;
    /// Particles per Adam iteration; 0 or ≥ N means full batch.
    std::size_t batch = 0;
    std::uint64_t seed = 0;
    /// The first `first_steps` steps train for `first_iterations`, later ones for `iterations`.
    std::size_t first_steps = 0;
    std::size_t first_iterations = 1000;
    std::size_t iterations = 1000;

    std::size_t iterations_for(std::size_t step_index) const {
        return step_index < first_steps ? first_iterations : iterations;
    }
    void validate() const;
};

/// Piecewise-constant step size: τ_k is used from activation time t_k on.
class StepSchedule {
public:
    struct Entry {
        double activation;
        double tau;
    };

    explicit StepSchedule(std::vector<Entry> entries);
    static StepSchedule constant(double tau) { return StepSchedule({{0.0, tau}}); }

    const std::vector<Entry>& entries() const noexcept { return entries_; }
    /// Index of the entry active at time t.
    std::size_t segment_at(double t) const;
    double tau_at(double t) const { return entries_[segment_at(t)].tau; }

private:
    std::vector<Entry> entries_;
};

struct Snapshot {
    double t;
    ParticleCloud cloud;
};

struct StepDiagnostics {
    /// Time at the end of the step.
    double t;
    double functional_value;
    /// Rescaling factor of the forward scheme; NaN for the other schemes.
    double scale;
    /// Training loss of the last Adam iteration; NaN for the particle flow.
    double loss;
};

struct FlowTrace {
    std::vector<Snapshot> snapshots;
    std::vector<StepDiagnostics> diagnostics;
};

struct Dirac {
    std::vector<double> center;
};
/// Particles split evenly (first ones get the remainder) between the centers.
struct DiracSum {
    std::vector<std::vector<double>> centers;
};
/// Uniform in the axis-aligned cube of half-width `radius` around each center.
struct UniformSquare {
    std::vector<double> center;
    double radius;
};
/// Equispaced angles on a planar circle.
struct Circle {
    std::vector<double> center;
    double radius;
};
struct Gaussian {
    std::vector<double> center;
    double stddev;
};
/// Uniform inside a planar ellipse.
struct Ellipse {
    std::vector<double> center;
    std::vector<double> semi_axes;
};
/// Uniform on the union of the two axis-parallel segments of half-length `radius` through the center.
struct Cross {
    std::vector<double> center;
    double radius;
};

/// UniformSquare around several centers, particles split as in DiracSum.
struct SquareSum {
    std::vector<std::vector<double>> centers;
    double radius;
};

using Initializer = std::variant<Dirac, DiracSum, UniformSquare, Circle, Gaussian, Ellipse, Cross, SquareSum>;

std::size_t initializer_dim(const Initializer& init);
ParticleCloud make_initial(const Initializer& init, std::size_t n, RandomSource& rng);
ParticleCloud make_uniform_squares(const std::vector<std::vector<double>>& centers, double radius, std::size_t n,
                                   RandomSource& rng);

/// Backward loss (1/(2τb))Σ‖x_i − T(x_i,z_i)‖² + F(T) on one batch; fills `grad` when given.
double backward_loss(const MlpParams& params, const Points& x, const Points& z, const Functional& f, double tau,
                     MlpParams* grad = nullptr);

/// Forward loss D̂/√M̂ on one batch, with D̂ taken from `model` (built on the rows of x).
/// Returns NaN and leaves `grad` untouched when M̂ = 0.
double forward_loss(const MlpParams& params, const Points& x, const Points& z, const DirectionalDerivativeModel& model,
                    MlpParams* grad = nullptr);

struct BackwardResult {
    ParticleCloud cloud;
    MlpParams params;
    double loss;
};

/// One neural JKO step: minimizes (1/(2τN))Σ‖x_i − T(x_i,z_i)‖² + F(T) over the network.
BackwardResult backward_step(const ParticleCloud& c, const Functional& f, double tau, const TrainConfig& cfg,
                             std::size_t iterations, RandomSource& rng);

struct ForwardResult {
    ParticleCloud cloud;
    double scale;
    double loss;
};

/// One neural steepest-descent step: minimizes D̂/√M̂, rescales by (D̂/M̂)⁻ and moves by τ.
/// Throws SteepestDescentUndefined when the directional derivative is unbounded below.
ForwardResult forward_step(const ParticleCloud& c, const Functional& f, double tau, const TrainConfig& cfg,
                           std::size_t iterations, RandomSource& rng);

/// Explicit Euler step x_i − τ·N·∂F_N/∂x_i. Throws CoincidentParticles on equal rows.
ParticleCloud particle_flow_step(const ParticleCloud& c, const Functional& f, double tau);

/// First pair of bitwise-equal rows, if any.
std::optional<std::pair<std::size_t, std::size_t>> find_coincident(const ParticleCloud& c);

enum class Scheme { backward, forward, particle };

const char* scheme_name(Scheme s);
std::optional<Scheme> parse_scheme(std::string_view name);

using StepCallback = std::function<void(const Snapshot&, const StepDiagnostics&)>;

/// Iterates the scheme from t = 0 until t ≥ horizon, with a snapshot at every step boundary.
FlowTrace run_flow(Scheme scheme, const Functional& f, const ParticleCloud& start, const StepSchedule& schedule,
                   double horizon, const TrainConfig& cfg, RandomSource& rng, const StepCallback& on_step = {});

FlowTrace run_flow(Scheme scheme, const Functional& f, const Initializer& init, std::size_t n,
                   const StepSchedule& schedule, double horizon, const TrainConfig& cfg, RandomSource& rng,
                   const StepCallback& on_step = {});

}  // namespace wflow
