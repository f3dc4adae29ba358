#include "wflow/image.hpp"

#include "wflow/error.hpp"
#include "wflow/io.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

namespace wflow {

namespace {

class PgmReader {
public:
    explicit PgmReader(std::string_view bytes) : bytes_(bytes) {}

    // Skips whitespace and '#' comments before a header token.
    void skip_separators() {
        while (pos_ < bytes_.size()) {
            const auto c = static_cast<unsigned char>(bytes_[pos_]);
            if (std::isspace(c)) {
                ++pos_;
            } else if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::uint64_t number(const char* what) {
        skip_separators();
        const std::size_t start = pos_;
        std::uint64_t value = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            value = value * 10 + static_cast<std::uint64_t>(bytes_[pos_] - '0');
            if (value > (1ULL << 40)) throw ParseError(std::string("PGM ") + what + " is too large", start);
            ++pos_;
        }
        if (pos_ == start) throw ParseError(std::string("PGM header: expected ") + what, start);
        return value;
    }

    std::size_t pos_ = 0;
    std::string_view bytes_;
};

}  // namespace

GrayImage parse_pgm(std::string_view bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw ParseError("not a binary PGM (expected P5)", 0);
    PgmReader in(bytes);
    in.pos_ = 2;
    if (in.pos_ >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[in.pos_]))) {
        throw ParseError("PGM header: expected whitespace after magic", in.pos_);
    }
    GrayImage img;
    img.width = in.number("width");
    img.height = in.number("height");
    const std::size_t maxval_at = in.pos_;
    const std::uint64_t maxval = in.number("maxval");
    if (img.width == 0 || img.height == 0) throw ParseError("PGM image has zero size", maxval_at);
    if (maxval == 0 || maxval > 65535) throw ParseError("PGM maxval must lie in 1..65535", maxval_at);
    img.maxval = static_cast<std::uint32_t>(maxval);
    if (in.pos_ >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[in.pos_]))) {
        throw ParseError("PGM header: expected a single whitespace before the raster", in.pos_);
    }
    ++in.pos_;
    const std::size_t sample_bytes = maxval < 256 ? 1 : 2;
    const std::size_t count = img.width * img.height;
    const std::size_t need = count * sample_bytes;
    if (bytes.size() - in.pos_ < need) {
        throw ParseError("PGM raster truncated: expected " + std::to_string(need) + " bytes", bytes.size());
    }
    img.pixels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t at = in.pos_ + i * sample_bytes;
        std::uint32_t v = static_cast<unsigned char>(bytes[at]);
        if (sample_bytes == 2) v = (v << 8) | static_cast<unsigned char>(bytes[at + 1]);
        if (v > maxval) throw ParseError("PGM sample exceeds maxval", at);
        img.pixels[i] = static_cast<std::uint16_t>(v);
    }
    return img;
}

GrayImage read_pgm(const std::filesystem::path& path) { return parse_pgm(io::read_file(path)); }

std::string encode_pgm(const GrayImage& image) {
    if (image.pixels.size() != image.width * image.height) throw ShapeError("pixel count does not match the size");
    std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n" +
                      std::to_string(image.maxval) + "\n";
    for (auto v : image.pixels) {
        if (image.maxval >= 256) out += static_cast<char>(v >> 8);
        out += static_cast<char>(v & 0xff);
    }
    return out;
}

ParticleCloud sample_image(const GrayImage& image, std::size_t n, RandomSource& rng) {
    if (n < 1) throw ShapeError("need at least one sample");
    std::uint32_t heaviest = 0;
    for (auto v : image.pixels) heaviest = std::max(heaviest, image.maxval - v);
    if (heaviest == 0) throw DomainError("image has zero total mass (every pixel is white)");
    const double scale = 2.0 / static_cast<double>(std::max(image.width, image.height));
    const double half_w = 0.5 * static_cast<double>(image.width);
    const double half_h = 0.5 * static_cast<double>(image.height);
    const std::size_t pixels = image.pixels.size();
    Points x(static_cast<Eigen::Index>(n), 2);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (;;) {
            const std::size_t k = rng.index(pixels);
            const double weight = static_cast<double>(image.maxval - image.pixels[k]);
            if (rng.uniform() * heaviest >= weight) continue;
            const double col = static_cast<double>(k % image.width) + rng.uniform();
            const double row = static_cast<double>(k / image.width) + rng.uniform();
            x(i, 0) = (col - half_w) * scale;
            x(i, 1) = (half_h - row) * scale;
            break;
        }
    }
    return ParticleCloud(std::move(x));
}

ParticleCloud sample_image_target(const std::filesystem::path& path, std::size_t n, RandomSource& rng) {
    return sample_image(read_pgm(path), n, rng);
}

Bounds fit_bounds(const ParticleCloud& c) {
    if (c.dim() != 2) throw ShapeError("plots need two-dimensional clouds");
    const Points& x = c.points();
    Bounds b{x.col(0).minCoeff(), x.col(0).maxCoeff(), x.col(1).minCoeff(), x.col(1).maxCoeff()};
    auto pad = [](double& lo, double& hi) {
        const double span = hi - lo;
        const double p = span > 0.0 ? 0.05 * span : 0.5;
        lo -= p;
        hi += p;
    };
    pad(b.xmin, b.xmax);
    pad(b.ymin, b.ymax);
    return b;
}

std::string render_svg(const ParticleCloud& c, const Bounds& b) {
    if (c.dim() != 2) throw ShapeError("plots need two-dimensional clouds");
    if (!(b.xmax > b.xmin) || !(b.ymax > b.ymin)) throw DomainError("plot bounds are empty");
    constexpr double size = 600.0;
    std::string out =
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\" viewBox=\"0 0 600 600\">\n"
        "<rect width=\"600\" height=\"600\" fill=\"white\"/>\n";
    char buf[128];
    for (std::size_t i = 0; i < c.size(); ++i) {
        const double px = (c(i, 0) - b.xmin) / (b.xmax - b.xmin) * size;
        const double py = (b.ymax - c(i, 1)) / (b.ymax - b.ymin) * size;
        std::snprintf(buf, sizeof buf, "<circle cx=\"%.3f\" cy=\"%.3f\" r=\"1.5\" fill=\"#1f4e99\"/>\n", px, py);
        out += buf;
    }
    out += "</svg>\n";
    return out;
}

void emit_svg(const ParticleCloud& c, const std::optional<Bounds>& bounds, const std::filesystem::path& path) {
    io::atomic_write(path, render_svg(c, bounds ? *bounds : fit_bounds(c)));
}

}  // namespace wflow
