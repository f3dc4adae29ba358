#include "wflow/error.hpp"
#include "wflow/neural.hpp"

#include <cmath>

namespace wflow {

Tape::Var Tape::push(Points value, bool needs_grad, std::function<void(Tape&)> backprop) {
    nodes_.push_back(Node{std::move(value), Points(), needs_grad, std::move(backprop)});
    return Var{nodes_.size() - 1};
}

void Tape::accumulate(Var v, const Points& g) {
    Node& n = node(v);
    if (!n.needs_grad) return;
    n.grad += g;
}

double Tape::scalar(Var v) const {
    const Points& value = nodes_.at(v.id).value;
    if (value.rows() != 1 || value.cols() != 1) throw ShapeError("node is not a scalar");
    return value(0, 0);
}

Tape::Var Tape::constant(Points value) { return push(std::move(value), false, nullptr); }

Tape::Var Tape::parameter(Points value) { return push(std::move(value), true, nullptr); }

Tape::Var Tape::affine(Var x, Var weight, Var bias) {
    const Points& xv = value(x);
    const Points& wv = value(weight);
    const Points& bv = value(bias);
    if (xv.cols() != wv.cols() || bv.rows() != 1 || bv.cols() != wv.rows()) {
        throw ShapeError("affine: incompatible shapes");
    }
    Points out = xv * wv.transpose();
    out.rowwise() += bv.row(0);
    const Var self{nodes_.size()};
    return push(std::move(out), needs(x) || needs(weight) || needs(bias), [self, x, weight, bias](Tape& t) {
        const Points& g = t.nodes_[self.id].grad;
        if (t.needs(x)) t.accumulate(x, g * t.value(weight));
        if (t.needs(weight)) t.accumulate(weight, g.transpose() * t.value(x));
        if (t.needs(bias)) t.accumulate(bias, g.colwise().sum());
    });
}

Tape::Var Tape::relu(Var x) {
    Points out = value(x).cwiseMax(0.0);
    const Var self{nodes_.size()};
    return push(std::move(out), needs(x), [self, x](Tape& t) {
        const Points& g = t.nodes_[self.id].grad;
        Points masked = (t.value(x).array() > 0.0).select(g.array(), 0.0).matrix();
        t.accumulate(x, masked);
    });
}

namespace {

void require_same_shape(const Points& a, const Points& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": operand shapes differ");
    }
}

void require_scalar(const Points& a, const char* op) {
    if (a.rows() != 1 || a.cols() != 1) throw ShapeError(std::string(op) + ": operand must be 1x1");
}

Points scalar_matrix(double v) {
    Points m(1, 1);
    m(0, 0) = v;
    return m;
}

}  // namespace

Tape::Var Tape::add(Var a, Var b) {
    require_same_shape(value(a), value(b), "add");
    Points out = value(a) + value(b);
    const Var self{nodes_.size()};
    return push(std::move(out), needs(a) || needs(b), [self, a, b](Tape& t) {
        const Points& g = t.nodes_[self.id].grad;
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Tape::Var Tape::sub(Var a, Var b) {
    require_same_shape(value(a), value(b), "sub");
    Points out = value(a) - value(b);
    const Var self{nodes_.size()};
    return push(std::move(out), needs(a) || needs(b), [self, a, b](Tape& t) {
        const Points& g = t.nodes_[self.id].grad;
        t.accumulate(a, g);
        if (t.needs(b)) t.accumulate(b, -g);
    });
}

Tape::Var Tape::mul(Var a, Var b) {
    require_same_shape(value(a), value(b), "mul");
    Points out = value(a).cwiseProduct(value(b));
    const Var self{nodes_.size()};
    return push(std::move(out), needs(a) || needs(b), [self, a, b](Tape& t) {
        const Points& g = t.nodes_[self.id].grad;
        if (t.needs(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
        if (t.needs(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
    });
}

Tape::Var Tape::scale(Var a, double factor) {
    Points out = value(a) * factor;
    const Var self{nodes_.size()};
    return push(std::move(out), needs(a), [self, a, factor](Tape& t) {
        t.accumulate(a, t.nodes_[self.id].grad * factor);
    });
}

Tape::Var Tape::squared_norm(Var x) {
    const Var self{nodes_.size()};
    return push(scalar_matrix(value(x).squaredNorm()), needs(x), [self, x](Tape& t) {
        const double g = t.nodes_[self.id].grad(0, 0);
        t.accumulate(x, t.value(x) * (2.0 * g));
    });
}

Tape::Var Tape::mean(Var x) {
    const Points& xv = value(x);
    const double count = static_cast<double>(xv.size());
    const Var self{nodes_.size()};
    return push(scalar_matrix(xv.mean()), needs(x), [self, x, count](Tape& t) {
        const double g = t.nodes_[self.id].grad(0, 0);
        const Points& xv = t.value(x);
        t.accumulate(x, Points::Constant(xv.rows(), xv.cols(), g / count));
    });
}

Tape::Var Tape::quotient(Var numerator, Var denominator) {
    require_scalar(value(numerator), "quotient");
    require_scalar(value(denominator), "quotient");
    const double n = value(numerator)(0, 0);
    const double d = value(denominator)(0, 0);
    const Var self{nodes_.size()};
    return push(scalar_matrix(n / d), needs(numerator) || needs(denominator),
                [self, numerator, denominator, n, d](Tape& t) {
                    const double g = t.nodes_[self.id].grad(0, 0);
                    t.accumulate(numerator, scalar_matrix(g / d));
                    t.accumulate(denominator, scalar_matrix(-g * n / (d * d)));
                });
}

Tape::Var Tape::sqrt(Var a) {
    require_scalar(value(a), "sqrt");
    const double root = std::sqrt(value(a)(0, 0));
    const Var self{nodes_.size()};
    return push(scalar_matrix(root), needs(a), [self, a, root](Tape& t) {
        const double g = t.nodes_[self.id].grad(0, 0);
        t.accumulate(a, scalar_matrix(g / (2.0 * root)));
    });
}

Tape::Var Tape::energy(Var y, const Functional& f) {
    auto vg = functional_value_and_gradient(f, ParticleCloud(value(y)));
    const Var self{nodes_.size()};
    return push(scalar_matrix(vg.value), needs(y), [self, y, grad = std::move(vg.gradient)](Tape& t) {
        t.accumulate(y, grad * t.nodes_[self.id].grad(0, 0));
    });
}

Tape::Var Tape::directional(Var dir, const DirectionalDerivativeModel& model) {
    auto vg = model.value_and_gradient(value(dir));
    const Var self{nodes_.size()};
    return push(scalar_matrix(vg.value), needs(dir), [self, dir, grad = std::move(vg.gradient)](Tape& t) {
        t.accumulate(dir, grad * t.nodes_[self.id].grad(0, 0));
    });
}

void Tape::backward(Var root) {
    require_scalar(value(root), "backward");
    for (auto& n : nodes_) {
        if (n.needs_grad) n.grad = Points::Zero(n.value.rows(), n.value.cols());
    }
    if (!needs(root)) return;
    node(root).grad(0, 0) = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.needs_grad && n.backprop) n.backprop(*this);
    }
}

}  // namespace wflow
