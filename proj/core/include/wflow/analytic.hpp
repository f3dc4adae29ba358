#pragma once

#include "wflow/measures.hpp"

#include <variant>
#include <vector>

namespace wflow {

/// η* = ρ_s·U_{sB^d}: density A_s (s² − ‖x‖²)^exponent on the ball of radius s (Lebesgue density).
struct BallDensity {
    double s;
    double exponent;
    double normalizer;
};

/// η* = U_{cS^{d-1}}.
struct SphereUniform {
    double c;
};

/// Prox of the Riesz interaction energy at δ₀ with unit step.
struct EtaStar {
    std::size_t d;
    double r;
    std::variant<BallDensity, SphereUniform> law;

    bool is_ball() const noexcept { return std::holds_alternative<BallDensity>(law); }
    /// s or c.
    double radius() const noexcept;
};

EtaStar eta_star_params(std::size_t d, double r);

/// ₂F₁(a, b; c; 1) by Gauss's summation theorem; needs c − a − b > 0.
double hypergeometric_2f1_at_one(double a, double b, double c);

ParticleCloud sample_eta_star(const EtaStar& p, std::size_t n, RandomSource& rng);

/// Samples of γ(t) = (f(t)·Id)#η*, the limit flow of the interaction energy from δ₀.
ParticleCloud sample_limit_flow(const EtaStar& p, double t, std::size_t n, RandomSource& rng);

/// t ↦ s^{1/(2−r)} t^{(1−r)/(2−r)} − t + τ.
double jko_h(double r, double tau, double t, double s);

struct JkoTimeSequence {
    double r;
    double tau;
    /// values[0] = 0, values[1] = τ, ...
    std::vector<double> values;
};

JkoTimeSequence jko_time_sequence(double r, double tau, std::size_t n_max);

/// f(t) = ((2−r)t)^{1/(2−r)}.
double limit_curve_scale(double t, double r);

/// f_τ(t) = t_{τ,⌈t/τ⌉}^{1/(2−r)}; f_τ(0) = 0.
double scheme_scale_curve(double r, double tau, double t);
double scheme_scale_curve(const JkoTimeSequence& seq, double t);

/// Step index ⌈t/τ⌉, snapped to the nearest integer when t/τ is within rounding of it.
std::size_t step_index(double tau, double t);

/// r ≥ 1: τ(r−1)(1 + 1/(4−2r) + ln(n)/(4−2r)), an upper bound on t_{τ,n} − (2−r)τn.
/// r < 1: τ(1−r)(1 + 1/2 + ln(n)/2), an upper bound on (2−r)τn − t_{τ,n}.
double c6_bound(double r, double tau, std::size_t n);

/// Quantile function at level p of the exact MMD flow from δ_{−1} towards δ₀ on the line (r = 1).
double line_flow_quantile(double t, double p);

}  // namespace wflow
