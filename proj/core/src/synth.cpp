#include "irnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "irnet/errors.hpp"
#include "irnet/rng.hpp"

namespace irnet {

void SceneSpec::validate() const {
    const std::int64_t margin =
        static_cast<std::int64_t>(std::ceil(max_size / 2.0)) + 4;
    if (height < 2 * margin || width < 2 * margin)
        throw ShapeError("SceneSpec: image " + std::to_string(width) + "x" +
                         std::to_string(height) + " too small for target size " +
                         std::to_string(max_size));
    if (min_targets < 0 || max_targets < min_targets)
        throw ShapeError("SceneSpec: bad target count range");
    if (min_size < 1.5 || max_size < min_size)
        throw ShapeError("SceneSpec: target size range must satisfy 1.5 <= min <= max");
    if (min_contrast <= 0 || max_contrast < min_contrast || max_contrast > 1)
        throw ShapeError("SceneSpec: contrast range must satisfy 0 < min <= max <= 1");
    if (background_level < 0 || background_level > 1)
        throw ShapeError("SceneSpec: background level outside [0,1]");
    if (gradient_amp < 0 || clutter_amp < 0 || noise_stddev < 0)
        throw ShapeError("SceneSpec: negative amplitude");
}

AnnotatedImage synthesize_scene(const SceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const std::int64_t H = spec.height, W = spec.width;

    AnnotatedImage img;
    img.height = H;
    img.width = W;
    img.source = "synth-" + std::to_string(spec.seed);
    img.pixels.assign(static_cast<std::size_t>(H * W), spec.background_level);

    // Smooth linear ramp in a random direction (drawn even when disabled so
    // the RNG stream, and hence target placement, is stable across amps).
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    if (spec.gradient_amp > 0) {
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x) {
                const double u = static_cast<double>(x) / static_cast<double>(W - 1) - 0.5;
                const double v = static_cast<double>(y) / static_cast<double>(H - 1) - 0.5;
                img.px(y, x) += spec.gradient_amp * (u * std::cos(phi) + v * std::sin(phi));
            }
    }

    // Correlated clutter: a handful of low-frequency cosine plane waves.
    constexpr int kWaves = 6;
    double freq_y[kWaves], freq_x[kWaves], phase[kWaves];
    for (int k = 0; k < kWaves; ++k) {
        freq_y[k] = rng.uniform(0.5, 3.0) / static_cast<double>(H);
        freq_x[k] = rng.uniform(0.5, 3.0) / static_cast<double>(W);
        phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    if (spec.clutter_amp > 0) {
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x) {
                double s = 0;
                for (int k = 0; k < kWaves; ++k)
                    s += std::cos(2.0 * std::numbers::pi *
                                      (freq_y[k] * static_cast<double>(y) +
                                       freq_x[k] * static_cast<double>(x)) +
                                  phase[k]);
                img.px(y, x) += spec.clutter_amp * 0.5 * s / kWaves;
            }
    }

    // Targets: Gaussian blobs whose >=50%-of-peak disc has diameter `size`.
    // Centers sit on a pixel with sub-pixel jitter <= 0.25 so the enclosing
    // box stays within +-1 px of the nominal size and the peak pixel stays
    // near background + contrast.
    const std::int64_t margin =
        static_cast<std::int64_t>(std::ceil(spec.max_size / 2.0)) + 3;
    const int count =
        spec.min_targets +
        static_cast<int>(rng.uniform_int(
            static_cast<std::uint64_t>(spec.max_targets - spec.min_targets + 1)));
    constexpr double kHalfWidthFactor = 2.3548200450309493; // 2*sqrt(2 ln 2)
    std::vector<Box> placed_padded;
    for (int t = 0; t < count; ++t) {
        const double size = rng.uniform(spec.min_size, spec.max_size);
        const double contrast = rng.uniform(spec.min_contrast, spec.max_contrast);
        const double sigma = size / kHalfWidthFactor;
        const double r_half = size / 2.0;

        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            const std::int64_t py =
                margin + static_cast<std::int64_t>(
                             rng.uniform_int(static_cast<std::uint64_t>(H - 2 * margin)));
            const std::int64_t px =
                margin + static_cast<std::int64_t>(
                             rng.uniform_int(static_cast<std::uint64_t>(W - 2 * margin)));
            const double cy = static_cast<double>(py) + rng.uniform(-0.25, 0.25);
            const double cx = static_cast<double>(px) + rng.uniform(-0.25, 0.25);

            // Bounding box of integer pixels within the half-peak disc.
            std::int64_t x_lo = W, x_hi = -1, y_lo = H, y_hi = -1;
            const std::int64_t reach = static_cast<std::int64_t>(std::ceil(r_half)) + 1;
            for (std::int64_t iy = py - reach; iy <= py + reach; ++iy)
                for (std::int64_t ix = px - reach; ix <= px + reach; ++ix) {
                    const double d2 = (static_cast<double>(iy) - cy) *
                                          (static_cast<double>(iy) - cy) +
                                      (static_cast<double>(ix) - cx) *
                                          (static_cast<double>(ix) - cx);
                    if (d2 <= r_half * r_half) {
                        x_lo = std::min(x_lo, ix);
                        x_hi = std::max(x_hi, ix);
                        y_lo = std::min(y_lo, iy);
                        y_hi = std::max(y_hi, iy);
                    }
                }
            if (x_hi < x_lo) continue; // cannot happen for size >= 1.5, defensive
            Box box{0, static_cast<double>(x_lo), static_cast<double>(y_lo),
                    static_cast<double>(x_hi + 1), static_cast<double>(y_hi + 1)};
            Box padded{0, box.x1 - 2, box.y1 - 2, box.x2 + 2, box.y2 + 2};
            bool overlaps = false;
            for (const Box& other : placed_padded)
                if (padded.x1 < other.x2 && other.x1 < padded.x2 && padded.y1 < other.y2 &&
                    other.y1 < padded.y2) {
                    overlaps = true;
                    break;
                }
            if (overlaps) continue;

            // Stamp the blob additively out to 4 sigma.
            const std::int64_t stamp = static_cast<std::int64_t>(std::ceil(4.0 * sigma)) + 1;
            for (std::int64_t iy = std::max<std::int64_t>(0, py - stamp);
                 iy <= std::min<std::int64_t>(H - 1, py + stamp); ++iy)
                for (std::int64_t ix = std::max<std::int64_t>(0, px - stamp);
                     ix <= std::min<std::int64_t>(W - 1, px + stamp); ++ix) {
                    const double d2 = (static_cast<double>(iy) - cy) *
                                          (static_cast<double>(iy) - cy) +
                                      (static_cast<double>(ix) - cx) *
                                          (static_cast<double>(ix) - cx);
                    img.px(iy, ix) += contrast * std::exp(-d2 / (2.0 * sigma * sigma));
                }
            img.boxes.push_back(box);
            placed_padded.push_back(padded);
            placed = true;
        }
        if (!placed)
            throw ShapeError("synthesize_scene: cannot place target " + std::to_string(t + 1) +
                             " of " + std::to_string(count) + " without overlap");
    }

    if (spec.noise_stddev > 0)
        for (double& p : img.pixels) p += spec.noise_stddev * rng.normal();

    for (double& p : img.pixels) p = std::clamp(p, 0.0, 1.0);
    img.validate();
    return img;
}

} // namespace irnet
