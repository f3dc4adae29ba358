#include "wflow/error.hpp"
#include "wflow/io.hpp"
#include "wflow/neural.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <sstream>

namespace wflow {

std::size_t MlpParams::input_dim() const {
    if (layers.empty()) throw ShapeError("network has no layers");
    return static_cast<std::size_t>(layers.front().weight.cols());
}

std::size_t MlpParams::output_dim() const {
    if (layers.empty()) throw ShapeError("network has no layers");
    return static_cast<std::size_t>(layers.back().weight.rows());
}

std::size_t MlpParams::parameter_count() const {
    std::size_t count = 0;
    for (const auto& l : layers) count += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return count;
}

MlpParams MlpParams::zeros_like() const {
    MlpParams out;
    out.layers.reserve(layers.size());
    for (const auto& l : layers) {
        out.layers.push_back({Points::Zero(l.weight.rows(), l.weight.cols()), Points::Zero(1, l.bias.cols())});
    }
    return out;
}

std::vector<double> MlpParams::flatten() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const auto& l : layers) {
        flat.insert(flat.end(), l.weight.data(), l.weight.data() + l.weight.size());
        flat.insert(flat.end(), l.bias.data(), l.bias.data() + l.bias.size());
    }
    return flat;
}

void MlpParams::assign(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw ShapeError("flat parameter vector has the wrong length");
    std::size_t pos = 0;
    for (auto& l : layers) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.weight.size(), l.weight.data());
        pos += static_cast<std::size_t>(l.weight.size());
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.bias.size(), l.bias.data());
        pos += static_cast<std::size_t>(l.bias.size());
    }
}

AdamState::AdamState(const MlpParams& like, double lr)
    : first_moment(like.zeros_like()), second_moment(like.zeros_like()), learning_rate(lr) {}

MlpParams init_mlp(RandomSource& rng, std::size_t d, const std::vector<std::size_t>& hidden) {
    if (hidden.empty()) throw ShapeError("init_mlp needs at least one hidden layer");
    if (d < 1) throw ShapeError("init_mlp needs d >= 1");
    std::vector<std::size_t> widths{2 * d};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(d);
    MlpParams p;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const auto in = static_cast<Eigen::Index>(widths[l]);
        const auto out = static_cast<Eigen::Index>(widths[l + 1]);
        if (in < 1 || out < 1) throw ShapeError("layer widths must be positive");
        const double stddev = std::sqrt(2.0 / static_cast<double>(in));
        Points w(out, in);
        for (Eigen::Index i = 0; i < out; ++i) {
            for (Eigen::Index j = 0; j < in; ++j) w(i, j) = stddev * rng.normal();
        }
        p.layers.push_back({std::move(w), Points::Zero(1, out)});
    }
    return p;
}

namespace {

Points concat_columns(const Points& x, const Points& z) {
    Points input(x.rows(), x.cols() + z.cols());
    input.leftCols(x.cols()) = x;
    input.rightCols(z.cols()) = z;
    return input;
}

void check_network_input(const MlpParams& p, const Points& x, const Points& z) {
    if (x.rows() != z.rows()) throw ShapeError("x and z must have the same number of rows");
    if (x.cols() != z.cols()) throw ShapeError("latent dimension must equal the data dimension");
    if (static_cast<std::size_t>(x.cols() + z.cols()) != p.input_dim()) {
        throw ShapeError("network input dimension does not match 2d");
    }
    if (static_cast<std::size_t>(x.cols()) != p.output_dim()) {
        throw ShapeError("network output dimension does not match d");
    }
}

}  // namespace

ParticleCloud mlp_forward(const MlpParams& p, const ParticleCloud& x, const ParticleCloud& z) {
    check_network_input(p, x.points(), z.points());
    Points h = concat_columns(x.points(), z.points());
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        Points next = h * p.layers[l].weight.transpose();
        next.rowwise() += p.layers[l].bias.row(0);
        if (l + 1 < p.layers.size()) next = next.cwiseMax(0.0);
        h = std::move(next);
    }
    return ParticleCloud(std::move(h));
}

void adam_step(MlpParams& p, const MlpParams& grad, AdamState& s) {
    if (p.layers.size() != grad.layers.size() || p.layers.size() != s.first_moment.layers.size()) {
        throw ShapeError("adam_step: parameter, gradient and state shapes differ");
    }
    ++s.step;
    const double step = static_cast<double>(s.step);
    const double correction1 = 1.0 - std::pow(s.beta1, step);
    const double correction2 = 1.0 - std::pow(s.beta2, step);
    auto update = [&](Points& param, const Points& g, Points& m, Points& v) {
        if (param.rows() != g.rows() || param.cols() != g.cols()) throw ShapeError("adam_step: shape mismatch");
        m = s.beta1 * m + (1.0 - s.beta1) * g;
        v = s.beta2 * v + (1.0 - s.beta2) * g.cwiseProduct(g);
        param.array() -= s.learning_rate * (m.array() / correction1) /
                         ((v.array() / correction2).sqrt() + s.epsilon);
    };
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        update(p.layers[l].weight, grad.layers[l].weight, s.first_moment.layers[l].weight,
               s.second_moment.layers[l].weight);
        update(p.layers[l].bias, grad.layers[l].bias, s.first_moment.layers[l].bias, s.second_moment.layers[l].bias);
    }
}

TapeMlp record_parameters(Tape& tape, const MlpParams& p) {
    TapeMlp net;
    net.layers.reserve(p.layers.size());
    for (const auto& l : p.layers) net.layers.emplace_back(tape.parameter(l.weight), tape.parameter(l.bias));
    return net;
}

Tape::Var record_forward(Tape& tape, const TapeMlp& net, const Points& x, const Points& z) {
    if (net.layers.empty()) throw ShapeError("network has no layers");
    if (x.rows() != z.rows() || x.cols() != z.cols()) throw ShapeError("x and z must have equal shapes");
    Tape::Var h = tape.constant(concat_columns(x, z));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        h = tape.affine(h, net.layers[l].first, net.layers[l].second);
        if (l + 1 < net.layers.size()) h = tape.relu(h);
    }
    return h;
}

MlpParams collect_gradients(const Tape& tape, const TapeMlp& net) {
    MlpParams g;
    g.layers.reserve(net.layers.size());
    for (const auto& [w, b] : net.layers) {
        auto grad_or_zero = [&](Tape::Var v) {
            const Points& gv = tape.grad(v);
            if (gv.size() == 0) return Points(Points::Zero(tape.value(v).rows(), tape.value(v).cols()));
            return gv;
        };
        g.layers.push_back({grad_or_zero(w), grad_or_zero(b)});
    }
    return g;
}

MlpParams finite_difference_gradient(const std::function<double(const MlpParams&)>& loss, const MlpParams& p,
                                     double h) {
    std::vector<double> flat = p.flatten();
    std::vector<double> grad(flat.size());
    MlpParams probe = p;
    for (std::size_t k = 0; k < flat.size(); ++k) {
        const double saved = flat[k];
        flat[k] = saved + h;
        probe.assign(flat);
        const double up = loss(probe);
        flat[k] = saved - h;
        probe.assign(flat);
        const double down = loss(probe);
        flat[k] = saved;
        grad[k] = (up - down) / (2.0 * h);
    }
    MlpParams out = p.zeros_like();
    out.assign(grad);
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const MlpParams& p) {
    nlohmann::json header;
    header["format"] = "wflow-mlp";
    header["version"] = 1;
    header["layers"] = nlohmann::json::array();
    for (const auto& l : p.layers) header["layers"].push_back({{"out", l.weight.rows()}, {"in", l.weight.cols()}});
    std::string out = header.dump() + "\n";
    auto write_row = [&](const double* data, Eigen::Index count) {
        for (Eigen::Index k = 0; k < count; ++k) {
            if (k) out += ',';
            out += io::format_double(data[k]);
        }
        out += '\n';
    };
    for (const auto& l : p.layers) {
        for (Eigen::Index i = 0; i < l.weight.rows(); ++i) write_row(l.weight.data() + i * l.weight.cols(), l.weight.cols());
        write_row(l.bias.data(), l.bias.cols());
    }
    io::atomic_write(path, out);
}

MlpParams load_checkpoint(const std::filesystem::path& path) {
    const std::string text = io::read_file(path);
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty checkpoint", 0);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": bad header: " + e.what(), line_no);
    }
    if (header.value("format", "") != "wflow-mlp" || header.value("version", 0) != 1) {
        throw ParseError(path.string() + ": not a wflow-mlp v1 checkpoint", line_no);
    }
    auto read_row = [&](Eigen::Index count, double* dst) {
        if (!std::getline(in, line)) throw ParseError(path.string() + ": truncated checkpoint", line_no);
        ++line_no;
        std::istringstream row(line);
        std::string field;
        Eigen::Index k = 0;
        while (std::getline(row, field, ',')) {
            if (k >= count) throw ParseError(path.string() + ": too many values in row", line_no);
            try {
                dst[k++] = std::stod(field);
            } catch (const std::exception&) {
                throw ParseError(path.string() + ": not a number: '" + field + "'", line_no);
            }
        }
        if (k != count) throw ParseError(path.string() + ": too few values in row", line_no);
    };
    MlpParams p;
    for (const auto& shape : header.at("layers")) {
        const auto rows = shape.at("out").get<Eigen::Index>();
        const auto cols = shape.at("in").get<Eigen::Index>();
        DenseLayer layer{Points(rows, cols), Points(1, rows)};
        for (Eigen::Index i = 0; i < rows; ++i) read_row(cols, layer.weight.data() + i * cols);
        read_row(rows, layer.bias.data());
        p.layers.push_back(std::move(layer));
    }
    return p;
}

}  // namespace wflow
