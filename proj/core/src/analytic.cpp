#include "wflow/analytic.hpp"

#include "wflow/error.hpp"

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <numbers>

namespace wflow {

namespace {

void check_r(double r) {
    if (!(r > 0.0 && r < 2.0)) throw DomainError("Riesz exponent must lie in (0,2)");
}

void check_tau(double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("time step must be positive");
}

}  // namespace

double EtaStar::radius() const noexcept {
    if (const auto* b = std::get_if<BallDensity>(&law)) return b->s;
    return std::get<SphereUniform>(law).c;
}

double hypergeometric_2f1_at_one(double a, double b, double c) {
    if (!(c - a - b > 0.0)) throw DomainError("Gauss summation needs c - a - b > 0");
    // Γ(c)Γ(c−a−b) / (Γ(c−a)Γ(c−b)), with signs tracked since arguments may be negative.
    int s1 = 1, s2 = 1, s3 = 1, s4 = 1;
    using boost::math::lgamma;
    const double log_value = lgamma(c, &s1) + lgamma(c - a - b, &s2) - lgamma(c - a, &s3) - lgamma(c - b, &s4);
    return s1 * s2 * s3 * s4 * std::exp(log_value);
}

EtaStar eta_star_params(std::size_t d, double r) {
    check_r(r);
    if (d < 1) throw DomainError("dimension must be at least 1");
    const double dd = static_cast<double>(d);
    if (dd + r < 4.0) {
        const double log_s_base = std::lgamma(2.0 - r / 2.0) + std::lgamma((dd + r) / 2.0) + std::log(r) -
                                  std::log(dd / 2.0) - std::lgamma(dd / 2.0);
        const double s = std::exp(log_s_base / (2.0 - r));
        const double a = dd / 2.0;
        const double b = 2.0 - (r + dd) / 2.0;
        const double log_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
        const double normalizer = std::exp(std::lgamma(dd / 2.0) - (2.0 - r) * std::log(s) -
                                           (dd / 2.0) * std::log(std::numbers::pi) - log_beta);
        return {d, r, BallDensity{s, 1.0 - (r + dd) / 2.0, normalizer}};
    }
    const double f = hypergeometric_2f1_at_one(-r / 2.0, (2.0 - r - dd) / 2.0, dd / 2.0);
    return {d, r, SphereUniform{std::pow(r / 2.0 * f, 1.0 / (2.0 - r))}};
}

ParticleCloud sample_eta_star(const EtaStar& p, std::size_t n, RandomSource& rng) {
    if (n < 1) throw ShapeError("need at least one sample");
    const auto d = static_cast<Eigen::Index>(p.d);
    Points x(static_cast<Eigen::Index>(n), d);
    const auto* ball = std::get_if<BallDensity>(&p.law);
    const double a = static_cast<double>(p.d) / 2.0;
    const double b = 2.0 - (static_cast<double>(p.d) + p.r) / 2.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double norm2 = 0.0;
        do {
            for (Eigen::Index k = 0; k < d; ++k) x(i, k) = rng.normal();
            norm2 = x.row(i).squaredNorm();
        } while (norm2 == 0.0);
        double radius = p.radius();
        if (ball) radius = ball->s * std::sqrt(boost::math::ibeta_inv(a, b, rng.uniform()));
        x.row(i) *= radius / std::sqrt(norm2);
    }
    return ParticleCloud(std::move(x));
}

ParticleCloud sample_limit_flow(const EtaStar& p, double t, std::size_t n, RandomSource& rng) {
    const ParticleCloud eta = sample_eta_star(p, n, rng);
    return ParticleCloud(limit_curve_scale(t, p.r) * eta.points());
}

double jko_h(double r, double tau, double t, double s) {
    return std::pow(s, 1.0 / (2.0 - r)) * std::pow(t, (1.0 - r) / (2.0 - r)) - t + tau;
}

namespace {

// Root of t ↦ h(t, s) above s. h(s, s) = τ > 0 and h → −∞, with a unique crossing.
double next_jko_time(double r, double tau, double s) {
    const double e = (1.0 - r) / (2.0 - r);
    const double coeff = std::pow(s, 1.0 / (2.0 - r));
    auto h = [&](double t) { return coeff * std::pow(t, e) - t + tau; };
    auto dh = [&](double t) { return coeff * e * std::pow(t, e - 1.0) - 1.0; };
    double lo = s;
    double hi = s + 2.0 * (2.0 - r) * tau + tau;
    for (int widen = 0; h(hi) >= 0.0; ++widen) {
        if (widen > 200) throw Error("JKO time bracket could not be established");
        lo = hi;
        hi = s + 2.0 * (hi - s);
    }
    double t = 0.5 * (lo + hi);
    double best = t;
    double best_abs = std::abs(h(t));
    for (int it = 0; it < 200; ++it) {
        const double ht = h(t);
        if (std::abs(ht) < best_abs) {
            best = t;
            best_abs = std::abs(ht);
        }
        if (std::abs(ht) <= 1e-13) return t;
        if (ht > 0.0) lo = t; else hi = t;
        const double slope = dh(t);
        double next = slope != 0.0 ? t - ht / slope : lo - 1.0;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (next == t) break;
        t = next;
    }
    if (best_abs <= 1e-12) return best;
    throw Error("Newton iteration for the JKO time did not converge");
}

}  // namespace

JkoTimeSequence jko_time_sequence(double r, double tau, std::size_t n_max) {
    check_r(r);
    check_tau(tau);
    JkoTimeSequence seq{r, tau, {0.0}};
    seq.values.reserve(n_max + 1);
    if (n_max >= 1) seq.values.push_back(tau);
    for (std::size_t k = 2; k <= n_max; ++k) seq.values.push_back(next_jko_time(r, tau, seq.values.back()));
    return seq;
}

double limit_curve_scale(double t, double r) {
    check_r(r);
    if (!(t >= 0.0)) throw DomainError("time must be nonnegative");
    return std::pow((2.0 - r) * t, 1.0 / (2.0 - r));
}

std::size_t step_index(double tau, double t) {
    check_tau(tau);
    if (!(t >= 0.0)) throw DomainError("time must be nonnegative");
    const double k = t / tau;
    const double nearest = std::round(k);
    if (std::abs(k - nearest) <= 1e-9 * std::max(1.0, k)) return static_cast<std::size_t>(nearest);
    return static_cast<std::size_t>(std::ceil(k));
}

double scheme_scale_curve(const JkoTimeSequence& seq, double t) {
    const std::size_t n = step_index(seq.tau, t);
    if (n >= seq.values.size()) throw DomainError("time lies beyond the computed JKO sequence");
    return std::pow(seq.values[n], 1.0 / (2.0 - seq.r));
}

double scheme_scale_curve(double r, double tau, double t) {
    return scheme_scale_curve(jko_time_sequence(r, tau, step_index(tau, t)), t);
}

double c6_bound(double r, double tau, std::size_t n) {
    check_r(r);
    check_tau(tau);
    if (n < 1) throw DomainError("n must be at least 1");
    // r < 1: the increments satisfy t_k ≥ kτ instead of t_k ≥ (2−r)kτ, hence 2 in place of 4 − 2r.
    const double q = r >= 1.0 ? 4.0 - 2.0 * r : 2.0;
    return tau * std::abs(r - 1.0) * (1.0 + 1.0 / q + std::log(static_cast<double>(n)) / q);
}

double line_flow_quantile(double t, double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("quantile level must lie in (0,1)");
    if (!(t >= 0.0)) throw DomainError("time must be nonnegative");
    if (t == 0.0) return -1.0;
    if (t <= 0.5 || p <= 1.0 / (2.0 * t)) return -1.0 + 2.0 * t * p;
    return 0.0;
}

}  // namespace wflow
