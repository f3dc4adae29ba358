#pragma once

#include "wflow/measures.hpp"

#include <variant>
#include <vector>

namespace wflow {

enum class Norm { l2, l1 };

/// Riesz kernel K(x,y) = -‖x-y‖^r with r in (0,2).
///
/// The norm defaults to the Euclidean one; the 1-norm variant is selectable.
class RieszKernel {
public:
    explicit RieszKernel(double r, Norm norm = Norm::l2);

    double r() const noexcept { return r_; }
    Norm norm() const noexcept { return norm_; }

private:
    double r_;
    Norm norm_;
};

double kernel_eval(const RieszKernel& k, std::span<const double> x, std::span<const double> y);

/// Self-repulsion E_K(μ) = ½∫∫K dμ dμ.
struct InteractionEnergy {
    RieszKernel kernel;
};

/// F_ν = E_K + V_{K,ν}; equals D_K²(·,ν) up to the constant E_K(ν).
struct MmdToTarget {
    RieszKernel kernel;
    ParticleCloud target;
};

/// Planar energy whose flow collapses onto the x-axis and then branches:
/// ∫ 1_{x<0}|y| - x dμ  -  ½∫∫ 1_{x1≥0, x2≥0} |y1 - y2| dμ dμ.  Two-dimensional only.
struct BranchingEnergy {};

/// Σ α_k D_K²(μ, μ_k) with Σ α_k = 1.
struct BarycenterComponent {
    double weight;
    ParticleCloud cloud;
};
struct Barycenter {
    RieszKernel kernel;
    std::vector<BarycenterComponent> components;
};

/// F ≡ 0. Leaves only the transport term in the backward scheme.
struct ZeroFunctional {};

using Functional = std::variant<InteractionEnergy, MmdToTarget, BranchingEnergy, Barycenter, ZeroFunctional>;

/// Checks the invariants that the aggregate types cannot enforce by themselves
/// (barycenter weights sum to one and are nonnegative).
void validate(const Functional& f);

double interaction_energy(const RieszKernel& k, const ParticleCloud& c);
double potential_energy(const RieszKernel& k, const ParticleCloud& c, const ParticleCloud& target);
double mmd_squared(const RieszKernel& k, const ParticleCloud& a, const ParticleCloud& b);
/// O(N log N) evaluation of mmd_squared for r = 1 on the line.
double mmd_squared_1d_fast(const RieszKernel& k, const ParticleCloud& a, const ParticleCloud& b);

double functional_value(const Functional& f, const ParticleCloud& c);

struct ParticleGradient {
    Points gradient;
    /// Set when some coincident pair was assigned the zero subgradient at r ≤ 1.
    bool nondifferentiable = false;
};

struct ValueAndGradient {
    double value;
    Points gradient;
    bool nondifferentiable = false;
};

/// functional_value and particle_gradient in one pass over the pairs.
ValueAndGradient functional_value_and_gradient(const Functional& f, const ParticleCloud& c);

/// ∂F_N/∂x_i of F_N(x_1..x_N) = F((1/N) Σ δ_{x_i}). Coincident Riesz pairs contribute 0.
ParticleGradient particle_gradient(const Functional& f, const ParticleCloud& c);

/// Exact one-sided derivative lim_{t→0+} (F(x + t·dir) - F(x)) / t.
///
/// Returns ±infinity when a discontinuity or a t^r term with r < 1 dominates.
double directional_derivative(const Functional& f, const ParticleCloud& c, const Points& dir);

struct DirectionalDerivativeWithGradient {
    double value;
    /// ∂value/∂dir; coincident pairs whose directions also coincide get the zero subgradient.
    Points gradient;
};

/// Directional derivative together with its gradient in `dir`.
/// Throws SteepestDescentUndefined if the value is not finite.
DirectionalDerivativeWithGradient directional_derivative_with_gradient(const Functional& f, const ParticleCloud& c,
                                                                       const Points& dir);

/// Directional derivative at a fixed base cloud, as a function of the direction only.
///
/// For Euclidean Riesz functionals the derivative splits into ⟨∇F_N, dir⟩ over distinct
/// pairs plus t^r terms from coincident pairs (and particles sitting on target points),
/// so the O(N²) part is done once here and each evaluation costs O(N·d) plus the
/// coincident pairs. Other functionals fall back to the direct evaluation.
class DirectionalDerivativeModel {
public:
    DirectionalDerivativeModel(const Functional& f, const ParticleCloud& c);

    double value(const Points& dir) const;
    DirectionalDerivativeWithGradient value_and_gradient(const Points& dir) const;

private:
    DirectionalDerivativeWithGradient evaluate(const Points& dir, bool with_gradient) const;

    Functional functional_;
    ParticleCloud base_;
    bool exact_ = false;
    bool unit_ = true;
    double r_ = 1.0;
    double self_weight_ = 0.0;
    Points linear_;
    std::vector<std::vector<Eigen::Index>> clusters_;
    std::vector<double> target_weight_;
};

}  // namespace wflow
