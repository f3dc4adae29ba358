#include <doctest.h>

#include <wflow/error.hpp>
#include <wflow/neural.hpp>

#include <cmath>
#include <filesystem>

using namespace wflow;

namespace {

Points normal_points(RandomSource& rng, Eigen::Index n, Eigen::Index d) {
    Points p(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < d; ++k) p(i, k) = rng.normal();
    return p;
}

// Reference forward pass written out with explicit loops.
std::vector<double> loop_forward(const MlpParams& p, std::vector<double> v) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const auto& layer = p.layers[l];
        std::vector<double> out(static_cast<std::size_t>(layer.weight.rows()));
        for (Eigen::Index o = 0; o < layer.weight.rows(); ++o) {
            double s = layer.bias(0, o);
            for (Eigen::Index i = 0; i < layer.weight.cols(); ++i) s += layer.weight(o, i) * v[static_cast<std::size_t>(i)];
            out[static_cast<std::size_t>(o)] = (l + 1 < p.layers.size()) ? std::max(s, 0.0) : s;
        }
        v = std::move(out);
    }
    return v;
}

// Gradcheck of a scalar tape function of one input matrix.
double primitive_error(const Points& at, const std::function<Tape::Var(Tape&, Tape::Var)>& build) {
    Tape tape;
    auto x = tape.parameter(at);
    auto y = build(tape, x);
    tape.backward(y);
    Points g = tape.grad(x);
    Points fd(at.rows(), at.cols());
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < at.rows(); ++i)
        for (Eigen::Index k = 0; k < at.cols(); ++k) {
            Points p = at, m = at;
            p(i, k) += h;
            m(i, k) -= h;
            Tape tp, tm;
            const double fp = tp.scalar(build(tp, tp.constant(p)));
            const double fm = tm.scalar(build(tm, tm.constant(m)));
            fd(i, k) = (fp - fm) / (2 * h);
        }
    return (g - fd).norm() / std::max(fd.norm(), 1e-300);
}

// Entries kept at least 1e-2 away from zero so rectifier kinks are not crossed.
Points away_from_zero(RandomSource& rng, Eigen::Index n, Eigen::Index d) {
    Points p = normal_points(rng, n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < d; ++k)
            if (std::abs(p(i, k)) < 0.05) p(i, k) = p(i, k) < 0 ? -0.05 : 0.05;
    return p;
}

}  // namespace

TEST_CASE("mlp_forward with zero parameters is zero") {
    RandomSource rng(1);
    auto p = init_mlp(rng, 2, {5, 5}).zeros_like();
    auto x = ParticleCloud(normal_points(rng, 7, 2)), z = ParticleCloud(normal_points(rng, 7, 2));
    CHECK(mlp_forward(p, x, z).points().isZero(0));
}

TEST_CASE("single linear layer [I | 0] is the identity on x") {
    MlpParams p;
    Points w = Points::Zero(3, 6);
    w.leftCols(3) = Points::Identity(3, 3);
    p.layers.push_back({w, Points::Zero(1, 3)});
    RandomSource rng(2);
    auto x = ParticleCloud(normal_points(rng, 4, 3)), z = ParticleCloud(normal_points(rng, 4, 3));
    CHECK(mlp_forward(p, x, z) == x);
}

TEST_CASE("mlp_forward matches a loop oracle") {
    RandomSource rng(3);
    auto p = init_mlp(rng, 3, {9, 4, 6});
    for (auto& l : p.layers)
        for (Eigen::Index o = 0; o < l.bias.cols(); ++o) l.bias(0, o) = 0.1 * rng.normal();
    auto x = ParticleCloud(normal_points(rng, 5, 3)), z = ParticleCloud(normal_points(rng, 5, 3));
    auto y = mlp_forward(p, x, z);
    for (std::size_t i = 0; i < 5; ++i) {
        std::vector<double> in;
        for (std::size_t k = 0; k < 3; ++k) in.push_back(x(i, k));
        for (std::size_t k = 0; k < 3; ++k) in.push_back(z(i, k));
        auto ref = loop_forward(p, in);
        for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(ref[k] - y(i, k)) <= 1e-12);
    }
}

TEST_CASE("mlp_forward shape errors") {
    RandomSource rng(4);
    auto p = init_mlp(rng, 2, {4});
    auto x = ParticleCloud(normal_points(rng, 3, 2));
    CHECK_THROWS_AS(mlp_forward(p, x, ParticleCloud(normal_points(rng, 2, 2))), ShapeError);
    CHECK_THROWS_AS(mlp_forward(p, x, ParticleCloud(normal_points(rng, 3, 1))), ShapeError);
    auto x3 = ParticleCloud(normal_points(rng, 3, 3));
    CHECK_THROWS_AS(mlp_forward(p, x3, x3), ShapeError);
}

TEST_CASE("zero-bias network is positively homogeneous") {
    RandomSource rng(5);
    auto p = init_mlp(rng, 2, {16, 16});
    auto x = ParticleCloud(normal_points(rng, 10, 2)), z = ParticleCloud(normal_points(rng, 10, 2));
    auto y = mlp_forward(p, x, z);
    auto y3 = mlp_forward(p, ParticleCloud(Points(3.0 * x.points())), ParticleCloud(Points(3.0 * z.points())));
    CHECK((y3.points() - 3.0 * y.points()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("init_mlp shapes, reproducibility and variance") {
    RandomSource a(9), b(9);
    auto p = init_mlp(a, 2, {128, 128, 128});
    REQUIRE(p.layers.size() == 4);
    const std::pair<int, int> shapes[] = {{128, 4}, {128, 128}, {128, 128}, {2, 128}};
    for (std::size_t l = 0; l < 4; ++l) {
        CHECK(p.layers[l].weight.rows() == shapes[l].first);
        CHECK(p.layers[l].weight.cols() == shapes[l].second);
        CHECK(p.layers[l].bias.isZero(0));
    }
    CHECK(p.flatten() == init_mlp(b, 2, {128, 128, 128}).flatten());

    RandomSource c(10);
    auto wide = init_mlp(c, 1, {1024, 1024});
    const auto& w = wide.layers[1].weight;
    const double mean = w.mean();
    const double var = (w.array() - mean).square().sum() / static_cast<double>(w.size() - 1);
    CHECK(std::abs(var / (2.0 / 1024) - 1.0) < 0.2);
    CHECK_THROWS_AS(init_mlp(c, 2, {}), ShapeError);
}

TEST_CASE("adam step examples") {
    MlpParams p;
    p.layers.push_back({Points::Constant(1, 1, 1.0), Points::Zero(1, 1)});
    auto g = p.zeros_like();
    g.layers[0].weight(0, 0) = 2.0;
    AdamState s(p, 0.001);
    adam_step(p, g, s);
    CHECK(p.layers[0].weight(0, 0) == doctest::Approx(0.999).epsilon(1e-8));
    CHECK(p.layers[0].bias(0, 0) == 0.0);
    CHECK(s.step == 1);

    // from zero moments a zero gradient moves nothing
    MlpParams q;
    q.layers.push_back({Points::Constant(2, 3, 0.5), Points::Constant(1, 2, -1.0)});
    AdamState t(q);
    auto qb = q.flatten();
    adam_step(q, q.zeros_like(), t);
    CHECK(q.flatten() == qb);
    CHECK(t.step == 1);
}

TEST_CASE("adam with zero learning rate leaves parameters fixed") {
    RandomSource rng(6);
    auto p = init_mlp(rng, 2, {4});
    auto flat = p.flatten();
    AdamState s(p, 0.0);
    auto g = p.zeros_like();
    std::vector<double> gv(flat.size());
    for (auto& v : gv) v = rng.normal();
    g.assign(gv);
    for (int i = 0; i < 5; ++i) adam_step(p, g, s);
    CHECK(p.flatten() == flat);
}

TEST_CASE("adam runs are bit identical") {
    auto run = [] {
        RandomSource rng(12);
        auto p = init_mlp(rng, 2, {8, 8});
        AdamState s(p);
        for (int i = 0; i < 20; ++i) {
            auto g = p.zeros_like();
            std::vector<double> gv(p.parameter_count());
            for (auto& v : gv) v = rng.normal();
            g.assign(gv);
            adam_step(p, g, s);
        }
        return p.flatten();
    };
    CHECK(run() == run());
}

TEST_CASE("tape trivial gradients") {
    {
        Tape t;
        auto w = t.parameter(Points::Identity(3, 3));
        auto x = t.constant(Points::Constant(1, 3, 0.7));
        auto y = t.constant(Points::Constant(1, 3, 0.7));
        auto loss = t.squared_norm(t.sub(t.affine(x, w, t.constant(Points::Zero(1, 3))), y));
        t.backward(loss);
        CHECK(t.grad(w).isZero(0));
    }
    {
        Tape t;
        auto w = t.parameter(Points::Constant(2, 2, 1.0));
        auto c = t.constant(Points::Constant(1, 1, 4.0));
        t.backward(c);
        CHECK(t.grad(w).isZero(0));
    }
    {
        Tape t;
        auto w = t.parameter(Points::Constant(2, 2, 1.0));
        CHECK_THROWS_AS(t.backward(w), ShapeError);
    }
}

TEST_CASE("tape primitives pass gradcheck") {
    RandomSource rng(14);
    const Points at = away_from_zero(rng, 4, 3);
    const Points other = away_from_zero(rng, 4, 3);
    const Points weight = normal_points(rng, 2, 3);
    const Points bias = normal_points(rng, 1, 2);
    const double tol = 1e-6;

    CHECK(primitive_error(at, [&](Tape& t, Tape::Var x) {
              return t.squared_norm(t.affine(x, t.constant(weight), t.constant(bias)));
          }) <= tol);
    CHECK(primitive_error(weight, [&](Tape& t, Tape::Var w) {
              return t.squared_norm(t.affine(t.constant(at), w, t.constant(bias)));
          }) <= tol);
    CHECK(primitive_error(bias, [&](Tape& t, Tape::Var b) {
              return t.squared_norm(t.affine(t.constant(at), t.constant(weight), b));
          }) <= tol);
    CHECK(primitive_error(at, [&](Tape& t, Tape::Var x) {
              return t.squared_norm(t.add(t.relu(x), t.constant(other)));
          }) <= tol);
    CHECK(primitive_error(at, [&](Tape& t, Tape::Var x) {
              return t.mean(t.mul(t.mul(x, x), t.constant(other)));
          }) <= tol);
    CHECK(primitive_error(at, [&](Tape& t, Tape::Var x) {
              return t.scale(t.squared_norm(t.sub(t.constant(other), x)), -0.3);
          }) <= tol);
    CHECK(primitive_error(at, [&](Tape& t, Tape::Var x) {
              auto n = t.squared_norm(x);
              return t.quotient(t.mean(t.mul(x, t.constant(other))), t.sqrt(n));
          }) <= tol);
    CHECK(primitive_error(at, [&](Tape& t, Tape::Var x) {
              return t.quotient(t.sqrt(t.squared_norm(t.constant(other))), t.squared_norm(x));
          }) <= tol);

    for (double r : {0.5, 1.0, 1.5}) {
        auto target = ParticleCloud(normal_points(rng, 5, 3));
        Functional f = MmdToTarget{RieszKernel(r), target};
        CHECK(primitive_error(at, [&](Tape& t, Tape::Var y) { return t.energy(y, f); }) <= tol);
        Functional b = Barycenter{RieszKernel(r), {{0.4, target}, {0.6, ParticleCloud(other)}}};
        CHECK(primitive_error(at, [&](Tape& t, Tape::Var y) { return t.energy(y, b); }) <= tol);
    }

    // directional term at a base cloud with a coincident pair, directions kept apart
    Points base = normal_points(rng, 4, 3);
    base.row(1) = base.row(0);
    DirectionalDerivativeModel model(InteractionEnergy{RieszKernel(1)}, ParticleCloud(base));
    CHECK(primitive_error(at, [&](Tape& t, Tape::Var d) { return t.directional(d, model); }) <= tol);
}

TEST_CASE("checkpoint round trip") {
    RandomSource rng(15);
    auto p = init_mlp(rng, 2, {7, 3});
    p.layers[0].bias(0, 2) = 1.0 / 3.0;
    auto dir = std::filesystem::temp_directory_path() / "wflow_unit";
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "net.ckpt", p);
    auto q = load_checkpoint(dir / "net.ckpt");
    CHECK(q.flatten() == p.flatten());
    CHECK(q.layers[1].weight.rows() == 3);
}
