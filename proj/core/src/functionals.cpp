#include "wflow/functionals.hpp"

#include "wflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace wflow {

RieszKernel::RieszKernel(double r, Norm norm) : r_(r), norm_(norm) {
    if (!(r > 0.0 && r < 2.0)) throw DomainError("Riesz exponent must lie in (0,2), got " + std::to_string(r));
}

namespace {

constexpr double infinity = std::numeric_limits<double>::infinity();

double sign(double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); }

// ‖·‖^r and its radial derivative for one kernel, with r = 1 kept free of pow().
struct RieszPower {
    double r;
    Norm norm;
    bool unit;

    explicit RieszPower(const RieszKernel& k) : r(k.r()), norm(k.norm()), unit(k.r() == 1.0) {}

    double distance(const double* a, const double* b, Eigen::Index d) const {
        double s = 0.0;
        if (norm == Norm::l2) {
            for (Eigen::Index k = 0; k < d; ++k) {
                const double diff = a[k] - b[k];
                s += diff * diff;
            }
            return std::sqrt(s);
        }
        for (Eigen::Index k = 0; k < d; ++k) s += std::abs(a[k] - b[k]);
        return s;
    }

    double length(const double* v, Eigen::Index d) const {
        double s = 0.0;
        if (norm == Norm::l2) {
            for (Eigen::Index k = 0; k < d; ++k) s += v[k] * v[k];
            return std::sqrt(s);
        }
        for (Eigen::Index k = 0; k < d; ++k) s += std::abs(v[k]);
        return s;
    }

    double power(double dist) const { return unit ? dist : std::pow(dist, r); }
    // d/d(dist) of dist^r.
    double slope(double dist) const { return unit ? 1.0 : r * std::pow(dist, r - 1.0); }

    // Adds c * ∇_a ‖a‖^r to out, with a = x - y ≠ 0 at distance dist and dslope = slope(dist).
    void add_gradient(const double* x, const double* y, Eigen::Index d, double dist, double dslope, double c,
                      double* out) const {
        if (norm == Norm::l2) {
            const double f = c * dslope / dist;
            for (Eigen::Index k = 0; k < d; ++k) out[k] += f * (x[k] - y[k]);
        } else {
            const double f = c * dslope;
            for (Eigen::Index k = 0; k < d; ++k) out[k] += f * sign(x[k] - y[k]);
        }
    }

    // dist^r and its derivative with one pow() call.
    void power_and_slope(double dist, double& value, double& dslope) const {
        if (unit) {
            value = dist;
            dslope = 1.0;
            return;
        }
        const double p = std::pow(dist, r - 1.0);
        value = p * dist;
        dslope = r * p;
    }
};

const double* row_ptr(const Points& p, Eigen::Index i) { return p.data() + i * p.cols(); }
double* row_ptr(Points& p, Eigen::Index i) { return p.data() + i * p.cols(); }

struct PairSums {
    double sum = 0.0;
    bool coincident = false;
};

// Euclidean pair sums, vectorized over the second index on coordinate-major copies.
class L2Sweep {
public:
    using Cols = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

    L2Sweep(const RieszPower& kp, Eigen::Index capacity) : kp_(kp), dist2_(capacity), w_(capacity), f_(capacity) {}

    // Σ_{j∈[begin,begin+m)} ‖xi − y_j‖^r; with gi, adds scale·∇_{xi} to gi; with gy, subtracts it from gy rows.
    PairSums row(const double* xi, const Cols& y, Eigen::Index begin, Eigen::Index m, double scale, double* gi,
                 Cols* gy) {
        PairSums out;
        if (m <= 0) return out;
        const Eigen::Index d = y.cols();
        auto d2 = dist2_.head(m);
        d2.setZero();
        for (Eigen::Index k = 0; k < d; ++k) d2 += (y.col(k).segment(begin, m) - xi[k]).square();
        auto w = w_.head(m);
        auto f = f_.head(m);
        const bool any_zero = (d2 == 0.0).any();
        out.coincident = any_zero;
        if (kp_.unit) {
            w = d2.sqrt();
            out.sum = w.sum();
            if (gi || gy) f = (d2 > 0.0).select(scale / w, 0.0);
        } else {
            // ‖·‖^r = exp(r/2 · log d²)
            const auto logs = d2.log();
            w = (d2 > 0.0).select((0.5 * kp_.r * logs).exp(), 0.0);
            out.sum = w.sum();
            if (gi || gy) f = (d2 > 0.0).select(scale * kp_.r * w / d2, 0.0);
        }
        if (!gi && !gy) return out;
        for (Eigen::Index k = 0; k < d; ++k) {
            auto yk = y.col(k).segment(begin, m);
            if (gi) gi[k] += (f * (xi[k] - yk)).sum();
            if (gy) gy->col(k).segment(begin, m) -= f * (xi[k] - yk);
        }
        return out;
    }

private:
    const RieszPower& kp_;
    Eigen::ArrayXd dist2_;
    Eigen::ArrayXd w_;
    Eigen::ArrayXd f_;
};

// Returns Σ_{i<j} ‖x_i - x_j‖^r and, with grad, adds scale * Σ_j ∇_{x_i} ‖x_i - x_j‖^r to grad_i.
PairSums self_terms(const RieszPower& kp, const Points& x, double scale, Points* grad) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    PairSums out;
    if (kp.norm == Norm::l2) {
        const L2Sweep::Cols cols = x.array();
        L2Sweep::Cols g;
        if (grad) g = L2Sweep::Cols::Zero(n, d);
        L2Sweep sweep(kp, n);
        std::vector<double> gi(static_cast<std::size_t>(d));
        for (Eigen::Index i = 0; i + 1 < n; ++i) {
            std::fill(gi.begin(), gi.end(), 0.0);
            const PairSums p = sweep.row(row_ptr(x, i), cols, i + 1, n - i - 1, scale, grad ? gi.data() : nullptr,
                                         grad ? &g : nullptr);
            if (grad) {
                for (Eigen::Index k = 0; k < d; ++k) g(i, k) += gi[static_cast<std::size_t>(k)];
            }
            out.sum += p.sum;
            out.coincident |= p.coincident;
        }
        if (grad) grad->array() += g;
        return out;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const double* xi = row_ptr(x, i);
        double partial = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double* xj = row_ptr(x, j);
            const double dist = kp.distance(xi, xj, d);
            if (dist == 0.0) {
                out.coincident = true;
                continue;
            }
            double value = 0.0;
            double dslope = 0.0;
            kp.power_and_slope(dist, value, dslope);
            partial += value;
            if (grad) {
                kp.add_gradient(xi, xj, d, dist, dslope, scale, row_ptr(*grad, i));
                kp.add_gradient(xj, xi, d, dist, dslope, scale, row_ptr(*grad, j));
            }
        }
        out.sum += partial;
    }
    return out;
}

// Returns Σ_{i,j} ‖x_i - y_j‖^r and, with grad, adds scale * Σ_j ∇_{x_i} ‖x_i - y_j‖^r to grad_i.
PairSums cross_terms(const RieszPower& kp, const Points& x, const Points& y, double scale, Points* grad) {
    const Eigen::Index d = x.cols();
    PairSums out;
    if (kp.norm == Norm::l2) {
        const L2Sweep::Cols cols = y.array();
        L2Sweep sweep(kp, y.rows());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const PairSums p =
                sweep.row(row_ptr(x, i), cols, 0, y.rows(), scale, grad ? row_ptr(*grad, i) : nullptr, nullptr);
            out.sum += p.sum;
            out.coincident |= p.coincident;
        }
        return out;
    }
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double* xi = row_ptr(x, i);
        double partial = 0.0;
        for (Eigen::Index j = 0; j < y.rows(); ++j) {
            const double* yj = row_ptr(y, j);
            const double dist = kp.distance(xi, yj, d);
            if (dist == 0.0) {
                out.coincident = true;
                continue;
            }
            double value = 0.0;
            double dslope = 0.0;
            kp.power_and_slope(dist, value, dslope);
            partial += value;
            if (grad) kp.add_gradient(xi, yj, d, dist, dslope, scale, row_ptr(*grad, i));
        }
        out.sum += partial;
    }
    return out;
}

// Σ_{i<j} ‖x_i - x_j‖^r
double self_pair_sum(const RieszPower& kp, const Points& x) { return self_terms(kp, x, 0.0, nullptr).sum; }

// Σ_{i,j} ‖x_i - y_j‖^r
double cross_pair_sum(const RieszPower& kp, const Points& x, const Points& y) {
    return cross_terms(kp, x, y, 0.0, nullptr).sum;
}

PairSums add_self_terms(const RieszPower& kp, const Points& x, double scale, Points& grad) {
    return self_terms(kp, x, scale, &grad);
}

PairSums add_cross_terms(const RieszPower& kp, const Points& x, const Points& y, double scale, Points& grad) {
    return cross_terms(kp, x, y, scale, &grad);
}

// One-sided expansion F(x + t v) = F(x) + linear·t + singular·t^r + o(·), plus jumps (t^0 terms).
struct OneSided {
    double linear = 0.0;
    double singular = 0.0;
    double jump = 0.0;

    double resolve(double r) const {
        if (jump != 0.0) return std::copysign(infinity, jump);
        if (singular != 0.0) {
            if (r < 1.0) return std::copysign(infinity, singular);
            if (r == 1.0) return linear + singular;
        }
        return linear;
    }
};

// Derivative at t=0+ of ‖a + t b‖^r, weighted, accumulated into `acc`.
// If grad_b is set, ∂/∂b of the finite contribution is added to it times `grad_scale`.
void pair_directional(const RieszPower& kp, const double* a, const double* b, Eigen::Index d, double weight,
                      OneSided& acc, double* grad_b) {
    const double dist = kp.length(a, d);
    if (dist == 0.0) {
        const double blen = kp.length(b, d);
        if (blen == 0.0) return;
        acc.singular += weight * kp.power(blen);
        if (grad_b && kp.unit) {
            if (kp.norm == Norm::l2) {
                for (Eigen::Index k = 0; k < d; ++k) grad_b[k] += weight * b[k] / blen;
            } else {
                for (Eigen::Index k = 0; k < d; ++k) grad_b[k] += weight * sign(b[k]);
            }
        }
        return;
    }
    if (kp.norm == Norm::l2) {
        const double c = weight * kp.slope(dist) / dist;
        double dot = 0.0;
        for (Eigen::Index k = 0; k < d; ++k) dot += a[k] * b[k];
        acc.linear += c * dot;
        if (grad_b) {
            for (Eigen::Index k = 0; k < d; ++k) grad_b[k] += c * a[k];
        }
        return;
    }
    // 1-norm: coordinates where a_k = 0 contribute |b_k|.
    const double c = weight * kp.slope(dist);
    double s = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) {
        s += a[k] != 0.0 ? sign(a[k]) * b[k] : std::abs(b[k]);
        if (grad_b) grad_b[k] += c * (a[k] != 0.0 ? sign(a[k]) : sign(b[k]));
    }
    acc.linear += c * s;
}

void self_directional(const RieszPower& kp, const Points& x, const Points& v, double weight, OneSided& acc,
                      Points* grad) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    std::vector<double> a(static_cast<std::size_t>(d)), b(static_cast<std::size_t>(d));
    std::vector<double> g(static_cast<std::size_t>(d));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            for (Eigen::Index k = 0; k < d; ++k) {
                a[static_cast<std::size_t>(k)] = x(i, k) - x(j, k);
                b[static_cast<std::size_t>(k)] = v(i, k) - v(j, k);
            }
            if (grad) std::fill(g.begin(), g.end(), 0.0);
            pair_directional(kp, a.data(), b.data(), d, weight, acc, grad ? g.data() : nullptr);
            if (grad) {
                for (Eigen::Index k = 0; k < d; ++k) {
                    (*grad)(i, k) += g[static_cast<std::size_t>(k)];
                    (*grad)(j, k) -= g[static_cast<std::size_t>(k)];
                }
            }
        }
    }
}

void cross_directional(const RieszPower& kp, const Points& x, const Points& v, const Points& y, double weight,
                       OneSided& acc, Points* grad) {
    const Eigen::Index d = x.cols();
    std::vector<double> a(static_cast<std::size_t>(d));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double* vi = row_ptr(v, i);
        double* gi = grad ? row_ptr(*grad, i) : nullptr;
        for (Eigen::Index j = 0; j < y.rows(); ++j) {
            for (Eigen::Index k = 0; k < d; ++k) a[static_cast<std::size_t>(k)] = x(i, k) - y(j, k);
            pair_directional(kp, a.data(), vi, d, weight, acc, gi);
        }
    }
}

void require_same_dim(const ParticleCloud& a, const ParticleCloud& b, const char* what) {
    if (a.dim() != b.dim()) {
        throw ShapeError(std::string(what) + ": dimension mismatch (" + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()) + ")");
    }
}

double nn(const ParticleCloud& c) { return static_cast<double>(c.size()); }

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};

// Branching energy --------------------------------------------------------

void require_planar(const ParticleCloud& c) {
    if (c.dim() != 2) throw ShapeError("the branching energy is defined for d = 2 only");
}

double branching_value(const ParticleCloud& c) {
    require_planar(c);
    const auto& p = c.points();
    const Eigen::Index n = p.rows();
    double single = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) single += (p(i, 0) < 0.0 ? std::abs(p(i, 1)) : 0.0) - p(i, 0);
    double pairs = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (p(i, 0) < 0.0) continue;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (p(j, 0) >= 0.0) pairs += std::abs(p(i, 1) - p(j, 1));
        }
    }
    const double N = nn(c);
    return single / N - pairs / (N * N);
}

ParticleGradient branching_gradient(const ParticleCloud& c) {
    require_planar(c);
    const auto& p = c.points();
    const Eigen::Index n = p.rows();
    const double N = nn(c);
    ParticleGradient out{Points::Zero(n, 2), false};
    for (Eigen::Index i = 0; i < n; ++i) {
        out.gradient(i, 0) = -1.0 / N;
        if (p(i, 0) < 0.0) {
            out.gradient(i, 1) += sign(p(i, 1)) / N;
            if (p(i, 1) == 0.0) out.nondifferentiable = true;
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (p(i, 0) < 0.0) continue;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (p(j, 0) < 0.0) continue;
            const double s = sign(p(i, 1) - p(j, 1));
            if (s == 0.0) out.nondifferentiable = true;
            out.gradient(i, 1) -= s / (N * N);
            out.gradient(j, 1) += s / (N * N);
        }
    }
    return out;
}

// x-coordinate stays in [0,∞) for small t > 0.
bool stays_nonnegative(double x, double vx) { return x > 0.0 || (x == 0.0 && vx >= 0.0); }

void branching_directional(const ParticleCloud& c, const Points& v, OneSided& acc, Points* grad) {
    require_planar(c);
    const auto& p = c.points();
    const Eigen::Index n = p.rows();
    const double N = nn(c);
    const double w1 = 1.0 / N;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = p(i, 0);
        const double y = p(i, 1);
        const double vx = v(i, 0);
        const double vy = v(i, 1);
        acc.linear -= w1 * vx;
        if (grad) (*grad)(i, 0) -= w1;
        const bool active_now = x < 0.0;
        const bool active_after = x < 0.0 || (x == 0.0 && vx < 0.0);
        if (active_after && !active_now) acc.jump += w1 * std::abs(y);
        if (active_after) {
            if (y != 0.0) {
                acc.linear += w1 * sign(y) * vy;
                if (grad) (*grad)(i, 1) += w1 * sign(y);
            } else {
                acc.linear += w1 * std::abs(vy);
                if (grad) (*grad)(i, 1) += w1 * sign(vy);
            }
        }
    }
    const double w2 = 1.0 / (N * N);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const bool now = p(i, 0) >= 0.0 && p(j, 0) >= 0.0;
            if (!now) continue;
            const bool after = stays_nonnegative(p(i, 0), v(i, 0)) && stays_nonnegative(p(j, 0), v(j, 0));
            const double dy = p(i, 1) - p(j, 1);
            if (!after) {
                // The pair leaves the interaction region: -w2|dy| disappears.
                acc.jump += w2 * std::abs(dy);
                continue;
            }
            const double dv = v(i, 1) - v(j, 1);
            const double s = dy != 0.0 ? sign(dy) : sign(dv);
            acc.linear -= w2 * (dy != 0.0 ? s * dv : std::abs(dv));
            if (grad) {
                (*grad)(i, 1) -= w2 * s;
                (*grad)(j, 1) += w2 * s;
            }
        }
    }
}

OneSided directional_expansion(const Functional& f, const ParticleCloud& c, const Points& dir, Points* grad,
                               double& r_out) {
    if (dir.rows() != c.points().rows() || dir.cols() != c.points().cols()) {
        throw ShapeError("direction must have the shape of the particle cloud");
    }
    OneSided acc;
    r_out = 1.0;
    const Points& x = c.points();
    std::visit(overloaded{
                   [&](const InteractionEnergy& e) {
                       RieszPower kp(e.kernel);
                       r_out = e.kernel.r();
                       self_directional(kp, x, dir, -1.0 / (nn(c) * nn(c)), acc, grad);
                   },
                   [&](const MmdToTarget& m) {
                       require_same_dim(c, m.target, "MMD functional");
                       RieszPower kp(m.kernel);
                       r_out = m.kernel.r();
                       self_directional(kp, x, dir, -1.0 / (nn(c) * nn(c)), acc, grad);
                       cross_directional(kp, x, dir, m.target.points(), 1.0 / (nn(c) * nn(m.target)), acc, grad);
                   },
                   [&](const BranchingEnergy&) { branching_directional(c, dir, acc, grad); },
                   [&](const Barycenter& b) {
                       RieszPower kp(b.kernel);
                       r_out = b.kernel.r();
                       self_directional(kp, x, dir, -1.0 / (nn(c) * nn(c)), acc, grad);
                       for (const auto& comp : b.components) {
                           require_same_dim(c, comp.cloud, "barycenter functional");
                           cross_directional(kp, x, dir, comp.cloud.points(),
                                             comp.weight / (nn(c) * nn(comp.cloud)), acc, grad);
                       }
                   },
                   [&](const ZeroFunctional&) {},
               },
               f);
    return acc;
}

}  // namespace

double kernel_eval(const RieszKernel& k, std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeError("kernel arguments differ in dimension");
    RieszPower kp(k);
    return -kp.power(kp.distance(x.data(), y.data(), static_cast<Eigen::Index>(x.size())));
}

void validate(const Functional& f) {
    if (const auto* b = std::get_if<Barycenter>(&f)) {
        if (b->components.empty()) throw DomainError("barycenter needs at least one component");
        double total = 0.0;
        for (const auto& comp : b->components) {
            if (!(comp.weight >= 0.0)) throw DomainError("barycenter weights must be nonnegative");
            if (comp.cloud.dim() != b->components.front().cloud.dim()) {
                throw ShapeError("barycenter components differ in dimension");
            }
            total += comp.weight;
        }
        if (std::abs(total - 1.0) > 1e-12) throw DomainError("barycenter weights must sum to 1");
    }
}

double interaction_energy(const RieszKernel& k, const ParticleCloud& c) {
    // ½ (1/N²) Σ_{i,j} K = -(1/N²) Σ_{i<j} ‖·‖^r
    return -self_pair_sum(RieszPower(k), c.points()) / (nn(c) * nn(c));
}

double potential_energy(const RieszKernel& k, const ParticleCloud& c, const ParticleCloud& target) {
    require_same_dim(c, target, "potential energy");
    return cross_pair_sum(RieszPower(k), c.points(), target.points()) / (nn(c) * nn(target));
}

double mmd_squared(const RieszKernel& k, const ParticleCloud& a, const ParticleCloud& b) {
    require_same_dim(a, b, "mmd_squared");
    return interaction_energy(k, a) + interaction_energy(k, b) + potential_energy(k, a, b);
}

namespace {

std::vector<double> sorted_values(const ParticleCloud& c) {
    std::vector<double> v(c.points().data(), c.points().data() + c.size());
    std::sort(v.begin(), v.end());
    return v;
}

// Σ_{i<j} |v_i - v_j| for sorted v.
double sorted_self_sum(const std::vector<double>& v) {
    double prefix = 0.0;
    double total = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
        total += static_cast<double>(j) * v[j] - prefix;
        prefix += v[j];
    }
    return total;
}

// Σ_{i,j} |a_i - b_j| for sorted a, b.
double sorted_cross_sum(const std::vector<double>& a, const std::vector<double>& b) {
    const double b_total = std::accumulate(b.begin(), b.end(), 0.0);
    const double m = static_cast<double>(b.size());
    double below_sum = 0.0;
    std::size_t below = 0;
    double total = 0.0;
    for (double ai : a) {
        while (below < b.size() && b[below] <= ai) below_sum += b[below++];
        const double k = static_cast<double>(below);
        total += (ai * k - below_sum) + ((b_total - below_sum) - ai * (m - k));
    }
    return total;
}

}  // namespace

double mmd_squared_1d_fast(const RieszKernel& k, const ParticleCloud& a, const ParticleCloud& b) {
    if (k.r() != 1.0) throw DomainError("mmd_squared_1d_fast needs r = 1");
    if (a.dim() != 1 || b.dim() != 1) throw ShapeError("mmd_squared_1d_fast needs one-dimensional clouds");
    const auto sa = sorted_values(a);
    const auto sb = sorted_values(b);
    const double n = nn(a);
    const double m = nn(b);
    return -sorted_self_sum(sa) / (n * n) - sorted_self_sum(sb) / (m * m) + sorted_cross_sum(sa, sb) / (n * m);
}

double functional_value(const Functional& f, const ParticleCloud& c) {
    return std::visit(overloaded{
                          [&](const InteractionEnergy& e) { return interaction_energy(e.kernel, c); },
                          [&](const MmdToTarget& m) {
                              return interaction_energy(m.kernel, c) + potential_energy(m.kernel, c, m.target);
                          },
                          [&](const BranchingEnergy&) { return branching_value(c); },
                          [&](const Barycenter& b) {
                              double total = 0.0;
                              for (const auto& comp : b.components) {
                                  total += comp.weight * mmd_squared(b.kernel, c, comp.cloud);
                              }
                              return total;
                          },
                          [&](const ZeroFunctional&) { return 0.0; },
                      },
                      f);
}

ValueAndGradient functional_value_and_gradient(const Functional& f, const ParticleCloud& c) {
    const Points& x = c.points();
    const double n = nn(c);
    const double self_weight = -1.0 / (n * n);
    return std::visit(
        overloaded{
            [&](const InteractionEnergy& e) {
                ValueAndGradient out{0.0, Points::Zero(x.rows(), x.cols()), false};
                const auto self = add_self_terms(RieszPower(e.kernel), x, self_weight, out.gradient);
                out.value = self_weight * self.sum;
                out.nondifferentiable = self.coincident && e.kernel.r() <= 1.0;
                return out;
            },
            [&](const MmdToTarget& m) {
                require_same_dim(c, m.target, "MMD functional");
                ValueAndGradient out{0.0, Points::Zero(x.rows(), x.cols()), false};
                RieszPower kp(m.kernel);
                const double cross_weight = 1.0 / (n * nn(m.target));
                const auto self = add_self_terms(kp, x, self_weight, out.gradient);
                const auto cross = add_cross_terms(kp, x, m.target.points(), cross_weight, out.gradient);
                out.value = self_weight * self.sum + cross_weight * cross.sum;
                out.nondifferentiable = (self.coincident || cross.coincident) && m.kernel.r() <= 1.0;
                return out;
            },
            [&](const BranchingEnergy&) {
                auto grad = branching_gradient(c);
                return ValueAndGradient{branching_value(c), std::move(grad.gradient), grad.nondifferentiable};
            },
            [&](const Barycenter& b) {
                ValueAndGradient out{0.0, Points::Zero(x.rows(), x.cols()), false};
                RieszPower kp(b.kernel);
                const auto self = add_self_terms(kp, x, self_weight, out.gradient);
                bool coincident = self.coincident;
                // Σ α_k (E(c) + E(μ_k) + V_k(c)) with Σ α_k = 1.
                double value = self_weight * self.sum;
                for (const auto& comp : b.components) {
                    require_same_dim(c, comp.cloud, "barycenter functional");
                    const double cross_weight = comp.weight / (n * nn(comp.cloud));
                    const auto cross = add_cross_terms(kp, x, comp.cloud.points(), cross_weight, out.gradient);
                    value += cross_weight * cross.sum + comp.weight * interaction_energy(b.kernel, comp.cloud);
                    coincident |= cross.coincident;
                }
                out.value = value;
                out.nondifferentiable = coincident && b.kernel.r() <= 1.0;
                return out;
            },
            [&](const ZeroFunctional&) {
                return ValueAndGradient{0.0, Points::Zero(x.rows(), x.cols()), false};
            },
        },
        f);
}

ParticleGradient particle_gradient(const Functional& f, const ParticleCloud& c) {
    auto vg = functional_value_and_gradient(f, c);
    return {std::move(vg.gradient), vg.nondifferentiable};
}

double directional_derivative(const Functional& f, const ParticleCloud& c, const Points& dir) {
    double r = 1.0;
    const OneSided acc = directional_expansion(f, c, dir, nullptr, r);
    return acc.resolve(r);
}

namespace {

[[noreturn]] void throw_unbounded(double value) {
    throw SteepestDescentUndefined("directional derivative is unbounded (" +
                                   std::string(value < 0 ? "-inf" : "+inf") +
                                   "); no steepest descent direction exists at this configuration");
}

}  // namespace

DirectionalDerivativeWithGradient directional_derivative_with_gradient(const Functional& f, const ParticleCloud& c,
                                                                       const Points& dir) {
    double r = 1.0;
    Points grad = Points::Zero(dir.rows(), dir.cols());
    const OneSided acc = directional_expansion(f, c, dir, &grad, r);
    const double value = acc.resolve(r);
    if (!std::isfinite(value)) throw_unbounded(value);
    return {value, std::move(grad)};
}

// DirectionalDerivativeModel ------------------------------------------------

namespace {

// Groups of row indices with bitwise-identical rows, only groups of size ≥ 2.
std::vector<std::vector<Eigen::Index>> coincident_clusters(const Points& x) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    auto row_less = [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index k = 0; k < x.cols(); ++k) {
            if (x(a, k) != x(b, k)) return x(a, k) < x(b, k);
        }
        return a < b;
    };
    auto row_equal = [&](Eigen::Index a, Eigen::Index b) { return (x.row(a).array() == x.row(b).array()).all(); };
    std::sort(order.begin(), order.end(), row_less);
    std::vector<std::vector<Eigen::Index>> clusters;
    std::size_t start = 0;
    while (start < order.size()) {
        std::size_t end = start + 1;
        while (end < order.size() && row_equal(order[start], order[end])) ++end;
        if (end - start >= 2) {
            std::vector<Eigen::Index> group(order.begin() + static_cast<std::ptrdiff_t>(start),
                                            order.begin() + static_cast<std::ptrdiff_t>(end));
            std::sort(group.begin(), group.end());
            clusters.push_back(std::move(group));
        }
        start = end;
    }
    return clusters;
}

// Number of rows of y equal to each row of x.
std::vector<std::size_t> coincident_counts(const Points& x, const Points& y) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(x.rows()), 0);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < y.rows(); ++j) {
            if ((x.row(i).array() == y.row(j).array()).all()) ++counts[static_cast<std::size_t>(i)];
        }
    }
    return counts;
}

}  // namespace

DirectionalDerivativeModel::DirectionalDerivativeModel(const Functional& f, const ParticleCloud& c)
    : functional_(f), base_(c) {
    const Points& x = c.points();
    const double n = nn(c);
    auto riesz_setup = [&](const RieszKernel& k) {
        exact_ = k.norm() == Norm::l2;
        r_ = k.r();
        unit_ = k.r() == 1.0;
        if (!exact_) return false;
        linear_ = particle_gradient(f, c).gradient;
        clusters_ = coincident_clusters(x);
        self_weight_ = -1.0 / (n * n);
        target_weight_.assign(static_cast<std::size_t>(x.rows()), 0.0);
        return true;
    };
    std::visit(overloaded{
                   [&](const InteractionEnergy& e) { riesz_setup(e.kernel); },
                   [&](const MmdToTarget& m) {
                       require_same_dim(c, m.target, "MMD functional");
                       if (!riesz_setup(m.kernel)) return;
                       const auto counts = coincident_counts(x, m.target.points());
                       for (std::size_t i = 0; i < counts.size(); ++i) {
                           target_weight_[i] += static_cast<double>(counts[i]) / (n * nn(m.target));
                       }
                   },
                   [&](const Barycenter& b) {
                       if (!riesz_setup(b.kernel)) return;
                       for (const auto& comp : b.components) {
                           require_same_dim(c, comp.cloud, "barycenter functional");
                           const auto counts = coincident_counts(x, comp.cloud.points());
                           for (std::size_t i = 0; i < counts.size(); ++i) {
                               target_weight_[i] += comp.weight * static_cast<double>(counts[i]) /
                                                    (n * nn(comp.cloud));
                           }
                       }
                   },
                   [&](const BranchingEnergy&) { exact_ = false; },
                   [&](const ZeroFunctional&) {
                       exact_ = true;
                       linear_ = Points::Zero(x.rows(), x.cols());
                       target_weight_.assign(static_cast<std::size_t>(x.rows()), 0.0);
                   },
               },
               f);
}

DirectionalDerivativeWithGradient DirectionalDerivativeModel::evaluate(const Points& dir, bool with_gradient) const {
    if (dir.rows() != linear_.rows() && exact_) throw ShapeError("direction must have the shape of the particle cloud");
    if (!exact_) {
        if (with_gradient) return directional_derivative_with_gradient(functional_, base_, dir);
        return {directional_derivative(functional_, base_, dir), Points()};
    }
    if (dir.cols() != linear_.cols()) throw ShapeError("direction must have the shape of the particle cloud");
    const Eigen::Index d = dir.cols();
    OneSided acc;
    acc.linear = (linear_.array() * dir.array()).sum();
    Points grad;
    if (with_gradient) grad = linear_;
    auto singular_term = [&](const double* v, double weight, double* gi, double* gj) {
        double len2 = 0.0;
        for (Eigen::Index k = 0; k < d; ++k) len2 += v[k] * v[k];
        if (len2 == 0.0) return;
        const double len = std::sqrt(len2);
        acc.singular += weight * (unit_ ? len : std::pow(len, r_));
        if (with_gradient && unit_) {
            for (Eigen::Index k = 0; k < d; ++k) {
                gi[k] += weight * v[k] / len;
                if (gj) gj[k] -= weight * v[k] / len;
            }
        }
    };
    // Within a cluster the t^r coefficient is the pair sum of the directions themselves.
    // For r > 1 it is dominated by the linear part and skipped.
    if (r_ <= 1.0) {
        const RieszPower kp{RieszKernel(r_)};
        for (const auto& cluster : clusters_) {
            Points sub(static_cast<Eigen::Index>(cluster.size()), d);
            for (std::size_t a = 0; a < cluster.size(); ++a) sub.row(static_cast<Eigen::Index>(a)) = dir.row(cluster[a]);
            const bool track = with_gradient && unit_;
            Points sub_grad;
            if (track) sub_grad = Points::Zero(sub.rows(), d);
            acc.singular += self_weight_ * self_terms(kp, sub, self_weight_, track ? &sub_grad : nullptr).sum;
            if (track) {
                for (std::size_t a = 0; a < cluster.size(); ++a) grad.row(cluster[a]) += sub_grad.row(static_cast<Eigen::Index>(a));
            }
        }
    }
    for (std::size_t i = 0; i < target_weight_.size(); ++i) {
        if (target_weight_[i] == 0.0) continue;
        const auto ii = static_cast<Eigen::Index>(i);
        singular_term(row_ptr(dir, ii), target_weight_[i], with_gradient ? row_ptr(grad, ii) : nullptr, nullptr);
    }
    const double value = acc.resolve(r_);
    if (with_gradient && !std::isfinite(value)) throw_unbounded(value);
    return {value, std::move(grad)};
}

double DirectionalDerivativeModel::value(const Points& dir) const { return evaluate(dir, false).value; }

DirectionalDerivativeWithGradient DirectionalDerivativeModel::value_and_gradient(const Points& dir) const {
    return evaluate(dir, true);
}

}  // namespace wflow
