#include <doctest.h>

#include <wflow/error.hpp>
#include <wflow/io.hpp>
#include <wflow/measures.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace wflow;

namespace {

ParticleCloud line(std::initializer_list<double> xs) {
    Points p(static_cast<Eigen::Index>(xs.size()), 1);
    Eigen::Index i = 0;
    for (double x : xs) p(i++, 0) = x;
    return ParticleCloud(p);
}

ParticleCloud random_line(RandomSource& rng, std::size_t n) {
    Points p(static_cast<Eigen::Index>(n), 1);
    for (Eigen::Index i = 0; i < p.rows(); ++i) p(i, 0) = 4.0 * rng.uniform() - 2.0;
    return ParticleCloud(p);
}

std::filesystem::path scratch(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / "wflow_unit";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("particle cloud rejects non-finite and empty input") {
    Points p(2, 2);
    p << 0, 1, NAN, 2;
    CHECK_THROWS_AS(ParticleCloud{p}, DomainError);
    CHECK_THROWS_AS(ParticleCloud{Points(0, 2)}, Error);
    CHECK_THROWS_AS(ParticleCloud{Points(3, 0)}, Error);
    auto c = ParticleCloud::from_rows({{1, 2}, {3, 4}});
    CHECK(c.size() == 2);
    CHECK(c.dim() == 2);
    CHECK(c.centroid()(1) == doctest::Approx(3.0));
}

TEST_CASE("w2_1d examples") {
    CHECK(w2_1d(line({0, 1}), line({1, 2})) == doctest::Approx(1.0));
    CHECK(w2_1d(line({0}), line({3})) == doctest::Approx(3.0));
    CHECK(w2_1d(line({-1, 1}), line({0, 0})) == doctest::Approx(1.0));
    CHECK(w2_1d(line({2, 0, 1}), line({1, 2, 0})) == 0.0);
}

TEST_CASE("w2_1d errors") {
    CHECK_THROWS_AS(w2_1d(line({0, 1}), line({0})), ShapeError);
    auto planar = ParticleCloud::from_rows({{0, 0}});
    CHECK_THROWS_AS(w2_1d(planar, planar), ShapeError);
}

TEST_CASE("w2_1d metric properties on random triples") {
    RandomSource rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.index(40);
        auto a = random_line(rng, n), b = random_line(rng, n), c = random_line(rng, n);
        const double ab = w2_1d(a, b), ba = w2_1d(b, a);
        CHECK(ab == doctest::Approx(ba).epsilon(1e-14));
        CHECK(w2_1d(a, c) <= ab + w2_1d(b, c) + 1e-12);
        CHECK(w2_1d(a, a) == 0.0);
        const double shift = rng.uniform() * 10 - 5;
        Points as = a.points().array() + shift, bs = b.points().array() + shift;
        CHECK(std::abs(w2_1d(ParticleCloud(as), ParticleCloud(bs)) - ab) <= 1e-12);
    }
}

TEST_CASE("radial_project examples") {
    CHECK(radial_project(ParticleCloud::from_rows({{3, 4}}))(0, 0) == 5.0);
    CHECK(radial_project(ParticleCloud::from_rows({{0, 0}}))(0, 0) == 0.0);
    auto r = radial_project(ParticleCloud::from_rows({{1, 0}, {0, -2}}));
    CHECK(r.dim() == 1);
    CHECK(r(0, 0) == 1.0);
    CHECK(r(1, 0) == 2.0);
}

TEST_CASE("radial_project is rotation invariant") {
    RandomSource rng(5);
    auto x = sample_latent(rng, 64, 3);
    // rotation about the z axis followed by a reflection
    const double a = 0.7;
    Eigen::Matrix3d q;
    q << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, -1;
    Points y = x.points() * q.transpose();
    auto rx = radial_project(x), ry = radial_project(ParticleCloud(y));
    for (std::size_t i = 0; i < rx.size(); ++i) CHECK(std::abs(rx(i, 0) - ry(i, 0)) <= 1e-12);
}

TEST_CASE("w2_radial examples") {
    Points circle(16, 2);
    for (int k = 0; k < 16; ++k) {
        const double t = 2 * std::numbers::pi * k / 16;
        circle(k, 0) = std::cos(t);
        circle(k, 1) = std::sin(t);
    }
    ParticleCloud a(circle);
    CHECK(w2_radial(a, a) == 0.0);
    CHECK(w2_radial(a, ParticleCloud(Points(2.0 * circle))) == doctest::Approx(1.0));
    CHECK(w2_radial(ParticleCloud::from_rows({{3, 4}}), ParticleCloud::from_rows({{0, 5}})) == 0.0);
    CHECK_THROWS_AS(w2_radial(a, ParticleCloud::from_rows({{1, 0}})), ShapeError);
}

TEST_CASE("sample_latent determinism and moments") {
    RandomSource r1(42), r2(42);
    CHECK(sample_latent(r1, 100, 3) == sample_latent(r2, 100, 3));

    RandomSource rng(7);
    auto z = sample_latent(rng, 100000, 2);
    auto mean = z.centroid();
    CHECK(std::abs(mean(0)) < 0.02);
    CHECK(std::abs(mean(1)) < 0.02);

    auto w = sample_latent(rng, 100000, 1);
    const double m = w.centroid()(0);
    const double var = (w.points().array() - m).square().sum() / (100000 - 1);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("random source splits are independent of parent position") {
    RandomSource a(3), b(3);
    (void)a.next_u64();
    CHECK(a.split(9).next_u64() == b.split(9).next_u64());
    CHECK(a.split(1).next_u64() != a.split(2).next_u64());
    for (int i = 0; i < 1000; ++i) {
        const double u = a.uniform();
        CHECK((u >= 0.0 && u < 1.0));
        CHECK(a.index(7) < 7);
    }
}

TEST_CASE("quantile curve") {
    auto g = QuantileCurve::midpoint_grid(4);
    CHECK(g == std::vector<double>{0.125, 0.375, 0.625, 0.875});
    auto q = QuantileCurve::of(line({3, 1, 2}));
    CHECK(q.values() == std::vector<double>{1, 2, 3});
    CHECK_THROWS_AS(QuantileCurve({0.5, 0.25}, {0, 1}), DomainError);
    CHECK_THROWS_AS(QuantileCurve({0.25, 0.5}, {1, 0}), DomainError);
    CHECK_THROWS_AS(QuantileCurve({0.0, 0.5}, {0, 1}), DomainError);
}

TEST_CASE("points csv round trip and ragged rows") {
    auto path = scratch("points.csv");
    auto c = ParticleCloud::from_rows({{0.1, -2.5}, {1e-300, 3.0}});
    write_points_csv(path, c);
    CHECK(read_points_csv(path) == c);
    {
        std::ofstream out(path);
        out << "x0,x1\n1,2\n3\n";
    }
    CHECK_THROWS_AS(read_points_csv(path), ParseError);
    {
        std::ofstream out(path);
        out << "a,b\n1,2\n";
    }
    CHECK_THROWS_AS(read_points_csv(path), ParseError);
}

TEST_CASE("format_double round trips") {
    RandomSource rng(1);
    for (int i = 0; i < 200; ++i) {
        const double x = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<int>(rng.index(40)) - 20);
        CHECK(std::stod(io::format_double(x)) == x);
    }
}
