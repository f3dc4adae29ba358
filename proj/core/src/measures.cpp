#include "wflow/measures.hpp"

#include "wflow/error.hpp"
#include "wflow/io.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace wflow {

ParticleCloud::ParticleCloud(Points points) : points_(std::move(points)) {
    if (points_.rows() < 1 || points_.cols() < 1) {
        throw ShapeError("a particle cloud needs at least one particle and one dimension");
    }
    if (!points_.allFinite()) throw DomainError("particle coordinates must be finite");
}

ParticleCloud ParticleCloud::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    if (rows.size() == 0) throw ShapeError("a particle cloud needs at least one particle");
    const auto d = rows.begin()->size();
    Points p(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
    Eigen::Index i = 0;
    for (const auto& row : rows) {
        if (row.size() != d) throw ShapeError("all particles must have the same dimension");
        Eigen::Index k = 0;
        for (double v : row) p(i, k++) = v;
        ++i;
    }
    return ParticleCloud(std::move(p));
}

ParticleCloud ParticleCloud::filled(std::size_t n, std::span<const double> point) {
    Points p(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(point.size()));
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        for (Eigen::Index k = 0; k < p.cols(); ++k) p(i, k) = point[static_cast<std::size_t>(k)];
    }
    return ParticleCloud(std::move(p));
}

Eigen::RowVectorXd ParticleCloud::centroid() const { return points_.colwise().mean(); }

bool ParticleCloud::operator==(const ParticleCloud& other) const {
    return points_.rows() == other.points_.rows() && points_.cols() == other.points_.cols() &&
           points_ == other.points_;
}

namespace {

__extension__ using uint128 = unsigned __int128;

constexpr std::uint64_t golden_gamma = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t RandomSource::next_u64() noexcept {
    ++counter_;
    return mix64(seed_ + counter_ * golden_gamma);
}

double RandomSource::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomSource::normal() noexcept {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    const double u1 = uniform_open_zero();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_normal_ = radius * std::sin(angle);
    has_cached_normal_ = true;
    return radius * std::cos(angle);
}

std::size_t RandomSource::index(std::size_t n) noexcept {
    // Multiply-shift; bias is below 2^-64 * n.
    const auto x = static_cast<uint128>(next_u64()) * n;
    return static_cast<std::size_t>(x >> 64);
}

RandomSource RandomSource::split(std::uint64_t stream) const noexcept {
    return RandomSource(mix64(seed_ ^ mix64(stream + golden_gamma)));
}

QuantileCurve::QuantileCurve(std::vector<double> grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
    if (grid_.size() != values_.size()) throw ShapeError("quantile grid and values differ in length");
    if (grid_.empty()) throw ShapeError("quantile curve needs at least one point");
    for (std::size_t i = 0; i < grid_.size(); ++i) {
        if (!(grid_[i] > 0.0 && grid_[i] < 1.0)) throw DomainError("quantile grid must lie in (0,1)");
        if (i > 0 && !(grid_[i] > grid_[i - 1])) throw DomainError("quantile grid must be strictly increasing");
        if (i > 0 && values_[i] < values_[i - 1]) throw DomainError("quantile values must be nondecreasing");
    }
}

std::vector<double> QuantileCurve::midpoint_grid(std::size_t n) {
    std::vector<double> grid(n);
    for (std::size_t k = 0; k < n; ++k) grid[k] = (static_cast<double>(k) + 0.5) / static_cast<double>(n);
    return grid;
}

QuantileCurve QuantileCurve::of(const ParticleCloud& cloud) {
    if (cloud.dim() != 1) throw ShapeError("quantile curves need a one-dimensional cloud");
    std::vector<double> values(cloud.points().data(), cloud.points().data() + cloud.size());
    std::sort(values.begin(), values.end());
    return QuantileCurve(midpoint_grid(cloud.size()), std::move(values));
}

ParticleCloud QuantileCurve::as_cloud() const {
    Points p(static_cast<Eigen::Index>(values_.size()), 1);
    for (std::size_t i = 0; i < values_.size(); ++i) p(static_cast<Eigen::Index>(i), 0) = values_[i];
    return ParticleCloud(std::move(p));
}

double w2_1d(const ParticleCloud& a, const ParticleCloud& b) {
    if (a.dim() != 1 || b.dim() != 1) throw ShapeError("w2_1d needs one-dimensional clouds");
    if (a.size() != b.size()) throw ShapeError("w2_1d needs clouds of equal size");
    std::vector<double> sa(a.points().data(), a.points().data() + a.size());
    std::vector<double> sb(b.points().data(), b.points().data() + b.size());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        const double diff = sa[i] - sb[i];
        sum += diff * diff;
    }
    return std::sqrt(sum / static_cast<double>(sa.size()));
}

ParticleCloud radial_project(const ParticleCloud& c) {
    Points norms(static_cast<Eigen::Index>(c.size()), 1);
    norms.col(0) = c.points().rowwise().norm();
    return ParticleCloud(std::move(norms));
}

double w2_radial(const ParticleCloud& a, const ParticleCloud& b) {
    if (a.dim() != b.dim()) throw ShapeError("w2_radial needs clouds of equal dimension");
    if (a.size() != b.size()) throw ShapeError("w2_radial needs clouds of equal size");
    return w2_1d(radial_project(a), radial_project(b));
}

ParticleCloud sample_latent(RandomSource& rng, std::size_t n, std::size_t d) {
    if (n < 1 || d < 1) throw ShapeError("sample_latent needs n >= 1 and d >= 1");
    Points p(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        for (Eigen::Index k = 0; k < p.cols(); ++k) p(i, k) = rng.normal();
    }
    return ParticleCloud(std::move(p));
}

ParticleCloud read_points_csv(const std::filesystem::path& path) {
    const auto table = io::read_csv(path);
    for (std::size_t k = 0; k < table.header.size(); ++k) {
        if (table.header[k] != "x" + std::to_string(k)) {
            throw ParseError(path.string() + ": expected header column x" + std::to_string(k) + ", got '" +
                                 table.header[k] + "'",
                             1);
        }
    }
    if (table.rows.empty()) throw ParseError(path.string() + ": no particles", 1);
    Points p(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(table.header.size()));
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        for (std::size_t k = 0; k < table.header.size(); ++k) {
            p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = table.rows[i][k];
        }
    }
    return ParticleCloud(std::move(p));
}

void write_points_csv(const std::filesystem::path& path, const ParticleCloud& cloud) {
    std::string out;
    for (std::size_t k = 0; k < cloud.dim(); ++k) {
        if (k) out += ',';
        out += "x" + std::to_string(k);
    }
    out += '\n';
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (std::size_t k = 0; k < cloud.dim(); ++k) {
            if (k) out += ',';
            out += io::format_double(cloud(i, k));
        }
        out += '\n';
    }
    io::atomic_write(path, out);
}

}  // namespace wflow
