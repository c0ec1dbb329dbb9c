#include "irnet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "irnet/errors.hpp"

namespace irnet {

void AnnotatedImage::validate() const {
    if (height < 0 || width < 0)
        throw ShapeError("AnnotatedImage: negative dimensions " + std::to_string(width) + "x" +
                         std::to_string(height));
    if (!pixels.empty()) {
        if (static_cast<std::int64_t>(pixels.size()) != height * width)
            throw ShapeError("AnnotatedImage: pixel buffer size " +
                             std::to_string(pixels.size()) + " != " + std::to_string(width) +
                             "x" + std::to_string(height));
        for (double v : pixels)
            if (!(v >= 0.0 && v <= 1.0))
                throw ShapeError("AnnotatedImage: pixel value " + std::to_string(v) +
                                 " outside [0,1]");
    }
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const Box& b = boxes[i];
        if (!(b.x1 < b.x2) || !(b.y1 < b.y2))
            throw ShapeError("AnnotatedImage: box " + std::to_string(i) + " not well-ordered");
        if (height > 0 && width > 0 &&
            (b.x1 < 0 || b.y1 < 0 || b.x2 > static_cast<double>(width) ||
             b.y2 > static_cast<double>(height)))
            throw ShapeError("AnnotatedImage: box " + std::to_string(i) + " outside image");
    }
}

std::vector<std::uint8_t> encode_pgm(const AnnotatedImage& img) {
    if (static_cast<std::int64_t>(img.pixels.size()) != img.height * img.width)
        throw ShapeError("encode_pgm: image has no pixel data");
    std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                         "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + img.pixels.size());
    for (double v : img.pixels) {
        const double c = std::clamp(v, 0.0, 1.0);
        out.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0)));
    }
    return out;
}

namespace {

// PGM header tokenizer: skips whitespace and '#' comments, reads one decimal
// integer, reporting the byte offset on failure.
struct PgmCursor {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    bool eof() const { return pos >= bytes.size(); }
    std::uint8_t peek() const { return bytes[pos]; }

    void skip_space_and_comments() {
        while (!eof()) {
            const std::uint8_t c = peek();
            if (c == '#') {
                while (!eof() && peek() != '\n') ++pos;
            } else if (std::isspace(c)) {
                ++pos;
            } else {
                break;
            }
        }
    }

    std::int64_t read_int(const char* what) {
        skip_space_and_comments();
        if (eof() || !std::isdigit(peek()))
            throw IoError(std::string("pgm: expected ") + what,
                          static_cast<long long>(pos));
        std::int64_t v = 0;
        while (!eof() && std::isdigit(peek())) {
            v = v * 10 + (peek() - '0');
            if (v > (std::int64_t(1) << 31))
                throw IoError(std::string("pgm: ") + what + " out of range",
                              static_cast<long long>(pos));
            ++pos;
        }
        return v;
    }
};

} // namespace

AnnotatedImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        throw IoError("pgm: missing P5 magic", 0);
    PgmCursor cur{bytes, 2};
    const std::int64_t w = cur.read_int("width");
    const std::int64_t h = cur.read_int("height");
    const std::int64_t maxval = cur.read_int("maxval");
    if (w <= 0 || h <= 0)
        throw IoError("pgm: non-positive dimensions", static_cast<long long>(cur.pos));
    if (maxval <= 0 || maxval > 255)
        throw IoError("pgm: unsupported maxval " + std::to_string(maxval),
                      static_cast<long long>(cur.pos));
    if (cur.eof() || !std::isspace(cur.peek()))
        throw IoError("pgm: expected single whitespace before raster",
                      static_cast<long long>(cur.pos));
    ++cur.pos;
    const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (bytes.size() - cur.pos < need)
        throw IoError("pgm: raster truncated, need " + std::to_string(need) + " bytes, have " +
                          std::to_string(bytes.size() - cur.pos),
                      static_cast<long long>(bytes.size()));
    AnnotatedImage img;
    img.height = h;
    img.width = w;
    img.pixels.resize(need);
    for (std::size_t i = 0; i < need; ++i)
        img.pixels[i] = static_cast<double>(bytes[cur.pos + i]) / static_cast<double>(maxval);
    return img;
}

void write_pgm(const std::string& path, const AnnotatedImage& img) {
    const std::vector<std::uint8_t> bytes = encode_pgm(img);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write: " + path);
}

AnnotatedImage read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    AnnotatedImage img = decode_pgm(bytes);
    img.source = path;
    return img;
}

const char* upsample_method_name(UpsampleMethod m) {
    switch (m) {
    case UpsampleMethod::None: return "none";
    case UpsampleMethod::Nearest: return "nearest";
    case UpsampleMethod::Bilinear: return "bilinear";
    case UpsampleMethod::Bicubic: return "bicubic";
    }
    return "?";
}

UpsampleMethod parse_upsample_method(const std::string& name) {
    if (name == "none") return UpsampleMethod::None;
    if (name == "nearest") return UpsampleMethod::Nearest;
    if (name == "bilinear") return UpsampleMethod::Bilinear;
    if (name == "bicubic") return UpsampleMethod::Bicubic;
    throw ParseError("unknown upsample method '" + name +
                     "' (expected none|nearest|bilinear|bicubic)");
}

namespace {

double sample_clamped(const AnnotatedImage& in, std::int64_t y, std::int64_t x) {
    y = std::clamp<std::int64_t>(y, 0, in.height - 1);
    x = std::clamp<std::int64_t>(x, 0, in.width - 1);
    return in.px(y, x);
}

// Keys cubic convolution kernel, a = -0.5.
double cubic_weight(double t) {
    constexpr double a = -0.5;
    t = std::fabs(t);
    if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
    if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
    return 0.0;
}

} // namespace

AnnotatedImage upsample4x(const AnnotatedImage& in, UpsampleMethod method) {
    if (method == UpsampleMethod::None) return in;
    if (in.pixels.empty()) throw ShapeError("upsample4x: image has no pixel data");
    AnnotatedImage out;
    out.height = in.height * 4;
    out.width = in.width * 4;
    out.pixels.resize(static_cast<std::size_t>(out.height * out.width));
    out.source = in.source;
    out.scale_factor = in.scale_factor * 4;
    for (const Box& b : in.boxes)
        out.boxes.push_back({b.cls, b.x1 * 4, b.y1 * 4, b.x2 * 4, b.y2 * 4});

    for (std::int64_t y = 0; y < out.height; ++y) {
        for (std::int64_t x = 0; x < out.width; ++x) {
            double v = 0;
            switch (method) {
            case UpsampleMethod::Nearest:
                v = in.px(y / 4, x / 4);
                break;
            case UpsampleMethod::Bilinear: {
                const double sy = (static_cast<double>(y) + 0.5) / 4.0 - 0.5;
                const double sx = (static_cast<double>(x) + 0.5) / 4.0 - 0.5;
                const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
                const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
                const double fy = sy - static_cast<double>(y0);
                const double fx = sx - static_cast<double>(x0);
                v = (1 - fy) * ((1 - fx) * sample_clamped(in, y0, x0) +
                                fx * sample_clamped(in, y0, x0 + 1)) +
                    fy * ((1 - fx) * sample_clamped(in, y0 + 1, x0) +
                          fx * sample_clamped(in, y0 + 1, x0 + 1));
                break;
            }
            case UpsampleMethod::Bicubic: {
                const double sy = (static_cast<double>(y) + 0.5) / 4.0 - 0.5;
                const double sx = (static_cast<double>(x) + 0.5) / 4.0 - 0.5;
                const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
                const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
                v = 0;
                for (std::int64_t dy = -1; dy <= 2; ++dy) {
                    const double wy = cubic_weight(sy - static_cast<double>(y0 + dy));
                    if (wy == 0.0) continue;
                    double row = 0;
                    for (std::int64_t dx = -1; dx <= 2; ++dx) {
                        const double wx = cubic_weight(sx - static_cast<double>(x0 + dx));
                        if (wx == 0.0) continue;
                        row += wx * sample_clamped(in, y0 + dy, x0 + dx);
                    }
                    v += wy * row;
                }
                v = std::clamp(v, 0.0, 1.0); // cubic kernel can overshoot
                break;
            }
            case UpsampleMethod::None:
                break;
            }
            out.px(y, x) = v;
        }
    }
    return out;
}

AnnotatedImage overlay_boxes(const AnnotatedImage& in, const std::vector<Box>& boxes,
                             double value) {
    AnnotatedImage out = in;
    auto put = [&](std::int64_t y, std::int64_t x) {
        if (y >= 0 && y < out.height && x >= 0 && x < out.width) out.px(y, x) = value;
    };
    for (const Box& b : boxes) {
        const std::int64_t x1 = static_cast<std::int64_t>(std::lround(b.x1));
        const std::int64_t y1 = static_cast<std::int64_t>(std::lround(b.y1));
        const std::int64_t x2 = static_cast<std::int64_t>(std::lround(b.x2)) - 1;
        const std::int64_t y2 = static_cast<std::int64_t>(std::lround(b.y2)) - 1;
        for (std::int64_t x = x1; x <= x2; ++x) {
            put(y1, x);
            put(y2, x);
        }
        for (std::int64_t y = y1; y <= y2; ++y) {
            put(y, x1);
            put(y, x2);
        }
    }
    return out;
}

AnnotatedImage render_curve(const std::vector<double>& values, std::int64_t height,
                            std::int64_t width) {
    AnnotatedImage img;
    img.height = std::max<std::int64_t>(height, 2);
    img.width = std::max<std::int64_t>(width, 2);
    img.pixels.assign(static_cast<std::size_t>(img.height * img.width), 0.0);
    if (values.empty()) return img;
    double lo = values[0], hi = values[0];
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo < 1e-12) hi = lo + 1.0;
    auto to_row = [&](double v) {
        const double t = (v - lo) / (hi - lo);
        return static_cast<std::int64_t>(
            std::lround((1.0 - t) * static_cast<double>(img.height - 1)));
    };
    auto to_col = [&](std::size_t i) {
        if (values.size() == 1) return std::int64_t(0);
        return static_cast<std::int64_t>(std::lround(
            static_cast<double>(i) * static_cast<double>(img.width - 1) /
            static_cast<double>(values.size() - 1)));
    };
    img.px(to_row(values[0]), to_col(0)) = 1.0;
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
        const std::int64_t c0 = to_col(i), r0 = to_row(values[i]);
        const std::int64_t c1 = to_col(i + 1), r1 = to_row(values[i + 1]);
        const std::int64_t steps = std::max<std::int64_t>({std::llabs(c1 - c0),
                                                           std::llabs(r1 - r0), 1});
        for (std::int64_t s = 0; s <= steps; ++s) {
            const double t = static_cast<double>(s) / static_cast<double>(steps);
            const std::int64_t r = static_cast<std::int64_t>(
                std::lround(static_cast<double>(r0) + t * static_cast<double>(r1 - r0)));
            const std::int64_t c = static_cast<std::int64_t>(
                std::lround(static_cast<double>(c0) + t * static_cast<double>(c1 - c0)));
            img.px(std::clamp<std::int64_t>(r, 0, img.height - 1),
                   std::clamp<std::int64_t>(c, 0, img.width - 1)) = 1.0;
        }
    }
    return img;
}

} // namespace irnet
