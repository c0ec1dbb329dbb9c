#pragma once

#include <cstdint>

#include "irnet/image.hpp"

namespace irnet {

/// Synthetic infrared scene description. Targets are isotropic Gaussian
/// blobs; `size` is the diameter of the >=50%-of-peak region in pixels, which
/// is also what the ground-truth box encloses. The background is a base level
/// plus an optional smooth gradient, low-frequency clutter, and white noise.
struct SceneSpec {
    std::int64_t height = 256, width = 256;
    int min_targets = 1, max_targets = 3;     // uniform integer count
    double min_size = 2.0, max_size = 6.0;    // px, uniform
    double min_contrast = 0.3, max_contrast = 0.8;
    double background_level = 0.2;
    double gradient_amp = 0.1;   // peak-to-peak of the linear ramp
    double clutter_amp = 0.08;   // low-frequency correlated clutter
    double noise_stddev = 0.01;  // additive white Gaussian noise
    std::uint64_t seed = 0;

    void validate() const; // throws ShapeError on inconsistent ranges
};

/// Deterministic per seed (bit-identical pixels). Ground-truth boxes tightly
/// enclose each blob's >=50%-of-peak pixel region. Placement keeps boxes
/// disjoint (with a 2-px gap); a spec whose targets cannot all be placed
/// without overlap is rejected with ShapeError.
AnnotatedImage synthesize_scene(const SceneSpec& spec);

} // namespace irnet
