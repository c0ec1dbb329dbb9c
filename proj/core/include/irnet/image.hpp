#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace irnet {

/// Axis-aligned box, 0-based half-open pixel coordinates: [x1,x2) x [y1,y2).
struct Box {
    int cls = 0;
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
};

/// Grayscale image with annotations. Pixel values live in [0,1].
struct AnnotatedImage {
    std::int64_t height = 0, width = 0;
    std::vector<double> pixels; // row-major, height*width (may be empty: metadata only)
    std::vector<Box> boxes;
    std::string source;
    int scale_factor = 1; // ×4 after super-resolution preprocessing

    double px(std::int64_t y, std::int64_t x) const {
        return pixels[static_cast<std::size_t>(y * width + x)];
    }
    double& px(std::int64_t y, std::int64_t x) {
        return pixels[static_cast<std::size_t>(y * width + x)];
    }

    /// Throws ShapeError unless pixels (when present) match height*width and
    /// lie in [0,1], and every box is well-ordered and inside the image.
    void validate() const;
};

/// Binary portable graymap (P5, maxval 255). encode/decode work on byte
/// buffers; read/write add file I/O. decode(encode(img)) preserves the
/// 8-bit quantized pixels; encode(decode(bytes)) is bit-exact for maxval-255
/// inputs. Malformed headers or truncated data raise IoError with the byte
/// offset where reading stopped.
std::vector<std::uint8_t> encode_pgm(const AnnotatedImage& img);
AnnotatedImage decode_pgm(const std::vector<std::uint8_t>& bytes);
void write_pgm(const std::string& path, const AnnotatedImage& img);
AnnotatedImage read_pgm(const std::string& path);

enum class UpsampleMethod { None, Nearest, Bilinear, Bicubic };
const char* upsample_method_name(UpsampleMethod m);
UpsampleMethod parse_upsample_method(const std::string& name); // throws ParseError

/// x4 super-resolution stand-in: pixel dimensions and box coordinates scale
/// by 4. Nearest replicates each source pixel into a 4x4 block (histogram
/// preserved); bilinear/bicubic use half-pixel-center source coordinates with
/// clamped borders. Method None returns the input unchanged.
AnnotatedImage upsample4x(const AnnotatedImage& img, UpsampleMethod method);

/// Burns 1-px box outlines into a copy of the image (default white).
AnnotatedImage overlay_boxes(const AnnotatedImage& img, const std::vector<Box>& boxes,
                             double value = 1.0);

/// Simple line chart of a series rendered as a graymap (for training plots).
AnnotatedImage render_curve(const std::vector<double>& values, std::int64_t height,
                            std::int64_t width);

} // namespace irnet
