#include <doctest.h>

#include <wflow/error.hpp>
#include <wflow/functionals.hpp>

#include <cmath>
#include <limits>

using namespace wflow;

namespace {

ParticleCloud line(std::initializer_list<double> xs) {
    Points p(static_cast<Eigen::Index>(xs.size()), 1);
    Eigen::Index i = 0;
    for (double x : xs) p(i++, 0) = x;
    return ParticleCloud(p);
}

Points uniform_points(RandomSource& rng, std::size_t n, std::size_t d, double scale = 1.0) {
    Points p(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index k = 0; k < p.cols(); ++k) p(i, k) = scale * (2 * rng.uniform() - 1);
    return p;
}

double brute_mmd_r1(const ParticleCloud& a, const ParticleCloud& b) {
    auto mean_abs = [](const ParticleCloud& u, const ParticleCloud& v) {
        double s = 0;
        for (std::size_t i = 0; i < u.size(); ++i)
            for (std::size_t j = 0; j < v.size(); ++j) s += std::abs(u(i, 0) - v(j, 0));
        return s / static_cast<double>(u.size() * v.size());
    };
    return mean_abs(a, b) - 0.5 * mean_abs(a, a) - 0.5 * mean_abs(b, b);
}

Points central_difference(const Functional& f, const ParticleCloud& c, double h) {
    Points g(c.points().rows(), c.points().cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index k = 0; k < g.cols(); ++k) {
            Points p = c.points(), m = c.points();
            p(i, k) += h;
            m(i, k) -= h;
            g(i, k) = (functional_value(f, ParticleCloud(p)) - functional_value(f, ParticleCloud(m))) / (2 * h);
        }
    return g;
}

double one_sided(const Functional& f, const ParticleCloud& c, const Points& dir, double t) {
    Points moved = c.points() + t * dir;
    return (functional_value(f, ParticleCloud(moved)) - functional_value(f, c)) / t;
}

// Coincident pairs add a t^r term, so the difference quotient carries a t^(r-1) bias;
// two step sizes cancel it. At r = 1 the quotient is already exact up to O(t).
double extrapolated(const Functional& f, const ParticleCloud& c, const Points& dir, double r) {
    const double t1 = 1e-4, t2 = 1e-5;
    const double q1 = one_sided(f, c, dir, t1), q2 = one_sided(f, c, dir, t2);
    if (r == 1.0) return q2;
    const double w1 = std::pow(t1, r - 1), w2 = std::pow(t2, r - 1);
    return (q2 * w1 - q1 * w2) / (w1 - w2);
}

// Clouds with particles stacked in small groups on a coarse lattice, so that
// coincident pairs and coincident-with-target points both occur.
ParticleCloud clustered(RandomSource& rng, std::size_t n, std::size_t d) {
    Points p(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index k = 0; k < p.cols(); ++k) p(i, k) = static_cast<double>(rng.index(3)) - 1.0;
    return ParticleCloud(p);
}

}  // namespace

TEST_CASE("riesz kernel range") {
    CHECK_THROWS_AS(RieszKernel(0.0), DomainError);
    CHECK_THROWS_AS(RieszKernel(2.0), DomainError);
    CHECK_THROWS_AS(RieszKernel(NAN), DomainError);
    CHECK_NOTHROW(RieszKernel(1.999));
}

TEST_CASE("kernel_eval examples") {
    const double o[2] = {0, 0}, p[2] = {3, 4};
    CHECK(kernel_eval(RieszKernel(1), o, p) == doctest::Approx(-5));
    const double a[1] = {0}, b[1] = {4};
    CHECK(kernel_eval(RieszKernel(0.5), a, b) == doctest::Approx(-2));
    CHECK(kernel_eval(RieszKernel(0.3), p, p) == 0.0);
    CHECK(kernel_eval(RieszKernel(1, Norm::l1), o, p) == doctest::Approx(-7));
    const double q[1] = {1};
    CHECK_THROWS_AS(kernel_eval(RieszKernel(1), o, q), ShapeError);
}

TEST_CASE("interaction_energy examples") {
    RieszKernel k(1);
    CHECK(interaction_energy(k, line({3})) == 0.0);
    CHECK(interaction_energy(k, line({0, 1})) == doctest::Approx(-0.25));
    CHECK(interaction_energy(k, line({0, 1, 2})) == doctest::Approx(-4.0 / 9.0));
}

TEST_CASE("potential_energy examples") {
    RieszKernel k(1);
    CHECK(potential_energy(k, line({0}), line({0})) == 0.0);
    CHECK(potential_energy(k, line({0}), line({1})) == doctest::Approx(1));
    CHECK(potential_energy(k, line({0, 2}), line({1})) == doctest::Approx(1));
    CHECK_THROWS_AS(potential_energy(k, line({0}), ParticleCloud::from_rows({{0, 0}})), ShapeError);
}

TEST_CASE("mmd_squared examples") {
    RieszKernel k(1);
    auto a = line({0, 0.5, 3});
    CHECK(std::abs(mmd_squared(k, a, a)) < 1e-15);
    CHECK(mmd_squared(k, line({0}), line({1})) == doctest::Approx(1));
    CHECK(mmd_squared(k, line({0, 2}), line({1})) == doctest::Approx(0.5));
    CHECK_THROWS_AS(mmd_squared(k, line({0}), ParticleCloud::from_rows({{0, 0}})), ShapeError);
}

TEST_CASE("mmd_squared properties on random clouds") {
    RandomSource rng(21);
    for (double r : {0.3, 1.0, 1.7}) {
        RieszKernel k(r);
        for (int trial = 0; trial < 20; ++trial) {
            auto a = ParticleCloud(uniform_points(rng, 1 + rng.index(30), 3));
            auto b = ParticleCloud(uniform_points(rng, 1 + rng.index(30), 3));
            const double ab = mmd_squared(k, a, b);
            CHECK(ab >= -1e-9);
            CHECK(ab == doctest::Approx(mmd_squared(k, b, a)).epsilon(1e-12));
            Eigen::RowVector3d shift(0.7, -3.0, 1.1);
            Points as = a.points().rowwise() + shift, bs = b.points().rowwise() + shift;
            CHECK(std::abs(mmd_squared(k, ParticleCloud(as), ParticleCloud(bs)) - ab) < 1e-10);
        }
    }
}

TEST_CASE("mmd_squared_1d_fast matches brute force") {
    RieszKernel k(1);
    CHECK(mmd_squared_1d_fast(k, line({0}), line({1})) == doctest::Approx(1));
    auto a = line({0.2, -1, 4});
    CHECK(std::abs(mmd_squared_1d_fast(k, a, a)) < 1e-15);

    RandomSource rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        auto x = ParticleCloud(uniform_points(rng, 1 + rng.index(512), 1, 3.0));
        auto y = ParticleCloud(uniform_points(rng, 1 + rng.index(512), 1, 2.0));
        const double brute = brute_mmd_r1(x, y);
        CHECK(std::abs(mmd_squared_1d_fast(k, x, y) - brute) <= 1e-9 * std::max(1.0, std::abs(brute)));
        CHECK(std::abs(mmd_squared(k, x, y) - brute) <= 1e-9 * std::max(1.0, std::abs(brute)));
    }
    auto x = ParticleCloud(uniform_points(rng, 512, 1));
    auto y = ParticleCloud(uniform_points(rng, 512, 1));
    CHECK(std::abs(mmd_squared_1d_fast(k, x, y) - brute_mmd_r1(x, y)) <= 1e-9);

    CHECK_THROWS_AS(mmd_squared_1d_fast(RieszKernel(1.5), x, y), DomainError);
    auto planar = ParticleCloud::from_rows({{0, 0}});
    CHECK_THROWS_AS(mmd_squared_1d_fast(k, planar, planar), ShapeError);
}

TEST_CASE("functional_value examples") {
    CHECK(functional_value(InteractionEnergy{RieszKernel(1)}, line({5})) == 0.0);
    auto c = ParticleCloud::from_rows({{0, 1}, {2, 2}});
    Functional bary = Barycenter{RieszKernel(1), {{1.0, c}}};
    CHECK(std::abs(functional_value(bary, c)) < 1e-15);
    CHECK(functional_value(BranchingEnergy{}, ParticleCloud::from_rows({{-1, 0.5}})) == doctest::Approx(1.5));
    CHECK_THROWS_AS(functional_value(BranchingEnergy{}, line({1})), ShapeError);
    CHECK(functional_value(ZeroFunctional{}, c) == 0.0);
}

TEST_CASE("barycenter validation") {
    auto c = line({0});
    CHECK_THROWS_AS(validate(Barycenter{RieszKernel(1), {{0.5, c}, {0.6, c}}}), DomainError);
    CHECK_THROWS_AS(validate(Barycenter{RieszKernel(1), {{1.5, c}, {-0.5, c}}}), DomainError);
    CHECK_THROWS_AS(validate(Barycenter{RieszKernel(1), {}}), DomainError);
    CHECK_NOTHROW(validate(Barycenter{RieszKernel(1), {{0.25, c}, {0.75, c}}}));
}

TEST_CASE("barycenter is the weighted sum of discrepancies") {
    RandomSource rng(4);
    RieszKernel k(1);
    auto x = ParticleCloud(uniform_points(rng, 9, 2));
    auto m1 = ParticleCloud(uniform_points(rng, 7, 2));
    auto m2 = ParticleCloud(uniform_points(rng, 5, 2));
    Functional f = Barycenter{k, {{0.3, m1}, {0.7, m2}}};
    CHECK(functional_value(f, x) == doctest::Approx(0.3 * mmd_squared(k, x, m1) + 0.7 * mmd_squared(k, x, m2)));
}

TEST_CASE("particle_gradient examples") {
    auto g = particle_gradient(InteractionEnergy{RieszKernel(1)}, ParticleCloud::from_rows({{0, 0}, {1, 0}}));
    CHECK(g.gradient(0, 0) == doctest::Approx(0.25));
    CHECK(g.gradient(0, 1) == 0.0);
    CHECK(g.gradient(1, 0) == doctest::Approx(-0.25));
    CHECK(g.gradient(1, 1) == 0.0);
    CHECK_FALSE(g.nondifferentiable);

    auto z = particle_gradient(InteractionEnergy{RieszKernel(1)}, ParticleCloud::from_rows({{0, 0}}));
    CHECK(z.gradient.isZero(0));

    auto m = particle_gradient(MmdToTarget{RieszKernel(1), line({1})}, line({0}));
    CHECK(m.gradient(0, 0) == doctest::Approx(-1));

    auto s = particle_gradient(InteractionEnergy{RieszKernel(1)}, line({0, 0}));
    CHECK(s.gradient.isZero(0));
    CHECK(s.nondifferentiable);
    CHECK_FALSE(particle_gradient(InteractionEnergy{RieszKernel(1.5)}, line({0, 0})).nondifferentiable);
    CHECK(particle_gradient(InteractionEnergy{RieszKernel(0.5)}, line({0, 0})).nondifferentiable);
}

TEST_CASE("particle_gradient matches central differences") {
    RandomSource rng(8);
    auto well_separated = [&](std::size_t n, std::size_t d) {
        for (;;) {
            Points p = uniform_points(rng, n, d, 2.0);
            double closest = 1e300;
            for (Eigen::Index i = 0; i < p.rows(); ++i)
                for (Eigen::Index j = 0; j < i; ++j) closest = std::min(closest, (p.row(i) - p.row(j)).norm());
            if (closest >= 1e-2) return ParticleCloud(p);
        }
    };
    std::vector<Functional> fs;
    for (double r : {0.4, 1.0, 1.6}) {
        fs.push_back(InteractionEnergy{RieszKernel(r)});
        fs.push_back(MmdToTarget{RieszKernel(r), well_separated(6, 2)});
        fs.push_back(Barycenter{RieszKernel(r), {{0.5, well_separated(4, 2)}, {0.5, well_separated(5, 2)}}});
    }
    fs.push_back(InteractionEnergy{RieszKernel(1.0, Norm::l1)});
    for (const auto& f : fs) {
        for (int trial = 0; trial < 3; ++trial) {
            auto c = well_separated(8, 2);
            auto g = particle_gradient(f, c).gradient;
            auto fd = central_difference(f, c, 1e-5);
            CHECK((g - fd).norm() <= 1e-5 * fd.norm());
            auto vg = functional_value_and_gradient(f, c);
            CHECK(vg.value == doctest::Approx(functional_value(f, c)).epsilon(1e-13));
            CHECK((vg.gradient - g).norm() <= 1e-13 * (1 + g.norm()));
        }
    }
}

TEST_CASE("branching gradient away from its kinks") {
    auto c = ParticleCloud::from_rows({{-1.0, 0.3}, {-0.5, -0.2}, {0.4, 0.1}, {0.8, -0.6}, {1.1, 0.9}});
    auto g = particle_gradient(BranchingEnergy{}, c).gradient;
    auto fd = central_difference(BranchingEnergy{}, c, 1e-6);
    CHECK((g - fd).norm() <= 1e-6 * fd.norm());
}

TEST_CASE("directional_derivative examples") {
    Points dir(2, 1);
    dir << 1, -1;
    CHECK(directional_derivative(InteractionEnergy{RieszKernel(1)}, line({0, 0}), dir) == doctest::Approx(-0.5));
    CHECK(directional_derivative(InteractionEnergy{RieszKernel(1.5)}, line({0, 0}), dir) == 0.0);
    CHECK(directional_derivative(InteractionEnergy{RieszKernel(0.5)}, line({0, 0}), dir) ==
          -std::numeric_limits<double>::infinity());
    Points d2(2, 1);
    d2 << 1, 0;
    CHECK(directional_derivative(InteractionEnergy{RieszKernel(1)}, line({0, 2}), d2) == doctest::Approx(0.25));
    Points same(2, 1);
    same << 1, 1;
    CHECK(directional_derivative(InteractionEnergy{RieszKernel(0.5)}, line({0, 0}), same) == 0.0);
    CHECK_THROWS_AS(directional_derivative(InteractionEnergy{RieszKernel(1)}, line({0, 0}), Points(3, 1)),
                    ShapeError);
}

TEST_CASE("directional_derivative matches one-sided differences") {
    RandomSource rng(13);
    for (double r : {1.0, 1.3, 1.8}) {
        for (int trial = 0; trial < 15; ++trial) {
            auto c = clustered(rng, 10, 2);
            auto target = clustered(rng, 6, 2);
            Points dir = uniform_points(rng, 10, 2);
            std::vector<Functional> fs = {InteractionEnergy{RieszKernel(r)}, MmdToTarget{RieszKernel(r), target},
                                          Barycenter{RieszKernel(r), {{0.5, target}, {0.5, clustered(rng, 4, 2)}}}};
            for (const auto& f : fs) {
                const double exact = directional_derivative(f, c, dir);
                CHECK(std::abs(exact - extrapolated(f, c, dir, r)) <= 1e-3);
                DirectionalDerivativeModel model(f, c);
                CHECK(model.value(dir) == doctest::Approx(exact).epsilon(1e-10));
            }
        }
    }
}

TEST_CASE("directional_derivative in the 1-norm and for branching") {
    RandomSource rng(17);
    for (int trial = 0; trial < 15; ++trial) {
        auto c = clustered(rng, 8, 2);
        Points dir = uniform_points(rng, 8, 2);
        Functional f = InteractionEnergy{RieszKernel(1, Norm::l1)};
        CHECK(std::abs(directional_derivative(f, c, dir) - one_sided(f, c, dir, 1e-6)) <= 1e-3);

        // x kept off the indicator switch at 0, y on a lattice so |y| kinks and coincidences occur
        Points p = clustered(rng, 8, 2).points();
        for (Eigen::Index i = 0; i < p.rows(); ++i) p(i, 0) = p(i, 0) >= 0 ? 1.0 : -1.0;
        Functional b = BranchingEnergy{};
        CHECK(std::abs(directional_derivative(b, ParticleCloud(p), dir) - one_sided(b, ParticleCloud(p), dir, 1e-7)) <=
              1e-3);
    }
    // crossing x = 0 switches the |y| term on: a jump upwards
    Points left(1, 2);
    left << -1, 0;
    CHECK(directional_derivative(BranchingEnergy{}, ParticleCloud::from_rows({{0, 0.5}}), left) ==
          std::numeric_limits<double>::infinity());
}

TEST_CASE("directional_derivative is positively homogeneous at r=1") {
    RandomSource rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        auto c = clustered(rng, 12, 3);
        Points dir = uniform_points(rng, 12, 3);
        Functional f = MmdToTarget{RieszKernel(1), clustered(rng, 5, 3)};
        const double v = directional_derivative(f, c, dir);
        CHECK(std::abs(directional_derivative(f, c, Points(2.0 * dir)) - 2.0 * v) <= 1e-12 * (1 + std::abs(v)));
    }
}

TEST_CASE("directional derivative gradient matches finite differences in the direction") {
    RandomSource rng(31);
    auto c = clustered(rng, 9, 2);
    Functional f = MmdToTarget{RieszKernel(1), clustered(rng, 5, 2)};
    DirectionalDerivativeModel model(f, c);
    Points dir = uniform_points(rng, 9, 2);
    auto vg = model.value_and_gradient(dir);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < dir.rows(); ++i)
        for (Eigen::Index k = 0; k < dir.cols(); ++k) {
            Points p = dir, m = dir;
            p(i, k) += h;
            m(i, k) -= h;
            CHECK(vg.gradient(i, k) == doctest::Approx((model.value(p) - model.value(m)) / (2 * h)).epsilon(1e-5));
        }
    CHECK_THROWS_AS(directional_derivative_with_gradient(InteractionEnergy{RieszKernel(0.5)}, line({0, 0}),
                                                         Points::Constant(2, 1, 1.0) - Points::Identity(2, 1) * 2),
                    SteepestDescentUndefined);
}
