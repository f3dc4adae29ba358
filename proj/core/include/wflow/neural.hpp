#pragma once

#include "wflow/functionals.hpp"
#include "wflow/measures.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace wflow {

// ---------------------------------------------------------------------------
// Reverse-mode differentiation tape

/// Records one loss evaluation over dense matrices and replays it backwards.
///
/// Nodes are appended in evaluation order, so reverse index order is a reverse
/// topological order; `backward` visits every node once.
class Tape {
public:
    struct Var {
        std::size_t id;
    };

    Var constant(Points value);
    Var parameter(Points value);

    /// x·Wᵀ + b for x (N×in), W (out×in), b (1×out).
    Var affine(Var x, Var weight, Var bias);
    /// max(x, 0); the derivative at 0 is taken as 0.
    Var relu(Var x);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    /// Elementwise product of equal shapes.
    Var mul(Var a, Var b);
    Var scale(Var a, double factor);
    /// Σ x², as a 1×1 node.
    Var squared_norm(Var x);
    /// Mean of all entries, as a 1×1 node.
    Var mean(Var x);
    Var quotient(Var numerator, Var denominator);
    Var sqrt(Var a);
    /// F of the empirical measure on the rows of y (pairwise Riesz terms and friends).
    Var energy(Var y, const Functional& f);
    /// Directional derivative of F at the model's base cloud in direction `dir`.
    Var directional(Var dir, const DirectionalDerivativeModel& model);

    /// Fills gradients of `root` (which must be 1×1) with respect to every node.
    void backward(Var root);

    const Points& value(Var v) const { return nodes_.at(v.id).value; }
    const Points& grad(Var v) const { return nodes_.at(v.id).grad; }
    double scalar(Var v) const;
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Points value;
        Points grad;
        bool needs_grad = false;
        std::function<void(Tape&)> backprop;
    };

    Var push(Points value, bool needs_grad, std::function<void(Tape&)> backprop);
    Node& node(Var v) { return nodes_[v.id]; }
    bool needs(Var v) const { return nodes_[v.id].needs_grad; }
    void accumulate(Var v, const Points& g);

    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Conditional generator T_θ(x, z)

struct DenseLayer {
    Points weight;  // out × in
    Points bias;    // 1 × out
};

/// Fully connected rectifier network mapping (x, z) ∈ R^d × R^d to R^d.
struct MlpParams {
    std::vector<DenseLayer> layers;

    std::size_t input_dim() const;
    std::size_t output_dim() const;
    std::size_t parameter_count() const;

    /// Same shapes, all zeros.
    MlpParams zeros_like() const;
    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);
};

/// First/second moment accumulators of Adam, shaped like the parameters.
struct AdamState {
    explicit AdamState(const MlpParams& like, double learning_rate = 1e-3);

    MlpParams first_moment;
    MlpParams second_moment;
    std::uint64_t step = 0;
    double learning_rate;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// He-normal weights (variance 2/fan_in) and zero biases; layer sizes 2d → hidden... → d.
MlpParams init_mlp(RandomSource& rng, std::size_t d, const std::vector<std::size_t>& hidden);

/// T_θ applied row-wise to (x_i, z_i).
ParticleCloud mlp_forward(const MlpParams& p, const ParticleCloud& x, const ParticleCloud& z);

/// Bias-corrected Adam update in place.
void adam_step(MlpParams& p, const MlpParams& grad, AdamState& s);

/// Parameters registered on a tape, one (weight, bias) pair per layer.
struct TapeMlp {
    std::vector<std::pair<Tape::Var, Tape::Var>> layers;
};

TapeMlp record_parameters(Tape& tape, const MlpParams& p);
/// [x | z] pushed through the recorded network.
Tape::Var record_forward(Tape& tape, const TapeMlp& net, const Points& x, const Points& z);
MlpParams collect_gradients(const Tape& tape, const TapeMlp& net);

/// Central finite differences of `loss` in every parameter. Diagnostic oracle for the tape.
MlpParams finite_difference_gradient(const std::function<double(const MlpParams&)>& loss, const MlpParams& p,
                                     double h);

/// Checkpoint: a JSON shape header line followed by CSV rows of each weight matrix and bias.
void save_checkpoint(const std::filesystem::path& path, const MlpParams& p);
MlpParams load_checkpoint(const std::filesystem::path& path);

}  // namespace wflow
