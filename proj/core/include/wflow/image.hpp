#pragma once

#include "wflow/measures.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace wflow {

/// Grayscale raster, row-major from the top-left pixel.
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::uint32_t maxval = 255;
    std::vector<std::uint16_t> pixels;

    std::uint16_t at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
};

/// Binary PGM (P5). Errors carry the byte offset where parsing stopped.
GrayImage parse_pgm(std::string_view bytes);
GrayImage read_pgm(const std::filesystem::path& path);
std::string encode_pgm(const GrayImage& image);

/// n points with density ∝ maxval − intensity (dark is dense), jittered within each pixel
/// and mapped to [−1,1]² with the aspect ratio kept and the y-axis pointing up.
ParticleCloud sample_image(const GrayImage& image, std::size_t n, RandomSource& rng);
ParticleCloud sample_image_target(const std::filesystem::path& path, std::size_t n, RandomSource& rng);

/// Axis-aligned plotting window.
struct Bounds {
    double xmin, xmax, ymin, ymax;
};

/// Coordinate range of the cloud padded by 5% on each side.
Bounds fit_bounds(const ParticleCloud& c);

/// 600×600 scatter plot, one circle per particle.
std::string render_svg(const ParticleCloud& c, const Bounds& bounds);
void emit_svg(const ParticleCloud& c, const std::optional<Bounds>& bounds, const std::filesystem::path& path);

}  // namespace wflow
