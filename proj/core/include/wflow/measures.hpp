#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace wflow {

/// Row-major N×d storage: one particle per row.
using Points = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Empirical measure (1/N) Σ δ_{x_i} with uniform weights.
///
/// Immutable after construction. Every coordinate is finite and N, d ≥ 1.
class ParticleCloud {
public:
    explicit ParticleCloud(Points points);

    /// Convenience for small literal clouds, one inner list per particle.
    static ParticleCloud from_rows(std::initializer_list<std::initializer_list<double>> rows);
    /// N copies of `point`.
    static ParticleCloud filled(std::size_t n, std::span<const double> point);

    std::size_t size() const noexcept { return static_cast<std::size_t>(points_.rows()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(points_.cols()); }
    const Points& points() const noexcept { return points_; }
    auto row(std::size_t i) const { return points_.row(static_cast<Eigen::Index>(i)); }
    double operator()(std::size_t i, std::size_t k) const {
        return points_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    }

    /// Componentwise mean of the particles.
    Eigen::RowVectorXd centroid() const;

    bool operator==(const ParticleCloud& other) const;

private:
    Points points_;
};

/// Seeded counter-based generator (SplitMix64 over a counter).
///
/// Draw k of a source with seed s is a pure function of (s, k), so identical
/// seeds give identical sequences on every platform. A source is meant for a
/// single consumer; independent work takes a `split` child.
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed) noexcept : seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t next_u64() noexcept;
    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept;
    /// Uniform on (0, 1].
    double uniform_open_zero() noexcept { return 1.0 - uniform(); }
    /// Standard normal via Box–Muller; the second variate of each pair is cached.
    double normal() noexcept;
    /// Uniform index in [0, n).
    std::size_t index(std::size_t n) noexcept;

    /// Independent child stream; does not advance this source.
    RandomSource split(std::uint64_t stream) const noexcept;

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

/// Quantile function sampled on a strictly increasing grid in (0,1).
class QuantileCurve {
public:
    QuantileCurve(std::vector<double> grid, std::vector<double> values);

    /// Midpoint grid (k + 1/2)/n, k = 0..n-1.
    static std::vector<double> midpoint_grid(std::size_t n);
    /// Empirical quantiles of a 1D cloud on the midpoint grid of its own size.
    static QuantileCurve of(const ParticleCloud& cloud);

    const std::vector<double>& grid() const noexcept { return grid_; }
    const std::vector<double>& values() const noexcept { return values_; }

    /// Values as a 1D particle cloud.
    ParticleCloud as_cloud() const;

private:
    std::vector<double> grid_;
    std::vector<double> values_;
};

/// W2 between equal-size 1D clouds via sorted coupling.
double w2_1d(const ParticleCloud& a, const ParticleCloud& b);

/// Euclidean norm of each particle, as a 1D cloud.
ParticleCloud radial_project(const ParticleCloud& c);

/// W2 between the radial projections; the true W2 for orthogonally invariant measures.
double w2_radial(const ParticleCloud& a, const ParticleCloud& b);

/// n i.i.d. standard normal d-vectors.
ParticleCloud sample_latent(RandomSource& rng, std::size_t n, std::size_t d);

/// Point-cloud CSV with header `x0,...,x{d-1}`; ragged rows are rejected.
ParticleCloud read_points_csv(const std::filesystem::path& path);
void write_points_csv(const std::filesystem::path& path, const ParticleCloud& cloud);

}  // namespace wflow
