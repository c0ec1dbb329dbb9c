#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "irnet/image.hpp"
#include "irnet/rng.hpp"

namespace irnet {

enum class AugOp { HFlip, VFlip, Translate, Scale, Brightness, Noise };

const char* aug_op_name(AugOp op);
std::vector<AugOp> parse_aug_ops(const std::string& csv); // throws ParseError

/// Parameters for the parameterized ops; flips need none.
struct AugmentParams {
    std::int64_t translate_x = 0, translate_y = 0; // pixels
    double scale = 1.0;                            // about the image center
    double brightness = 0.0;                       // additive, clipped to [0,1]
    double noise_stddev = 0.0;                     // white Gaussian, clipped
    std::uint64_t seed = 0;                        // for the noise op
};

/// Applies ops in order. Boxes are transformed with the pixels, clipped to
/// the image, and dropped when the clipped area falls below 1 px². Geometry
/// ops fill uncovered pixels with the nearest border value.
AnnotatedImage augment(const AnnotatedImage& img, const std::vector<AugOp>& ops,
                       const AugmentParams& params);

/// Training-time random chain: ops applied with moderate random parameters.
AnnotatedImage random_augment(const AnnotatedImage& img, Rng& rng);

} // namespace irnet
