#include "irnet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "irnet/errors.hpp"

namespace irnet {

const char* aug_op_name(AugOp op) {
    switch (op) {
    case AugOp::HFlip: return "hflip";
    case AugOp::VFlip: return "vflip";
    case AugOp::Translate: return "translate";
    case AugOp::Scale: return "scale";
    case AugOp::Brightness: return "brightness";
    case AugOp::Noise: return "noise";
    }
    return "?";
}

std::vector<AugOp> parse_aug_ops(const std::string& csv) {
    std::vector<AugOp> ops;
    std::istringstream in(csv);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        if (tok.empty()) continue;
        if (tok == "hflip") ops.push_back(AugOp::HFlip);
        else if (tok == "vflip") ops.push_back(AugOp::VFlip);
        else if (tok == "translate") ops.push_back(AugOp::Translate);
        else if (tok == "scale") ops.push_back(AugOp::Scale);
        else if (tok == "brightness") ops.push_back(AugOp::Brightness);
        else if (tok == "noise") ops.push_back(AugOp::Noise);
        else
            throw ParseError("unknown augment op '" + tok +
                             "' (expected hflip|vflip|translate|scale|brightness|noise)");
    }
    return ops;
}

namespace {

void clip_and_filter_boxes(AnnotatedImage& img) {
    std::vector<Box> kept;
    for (Box b : img.boxes) {
        b.x1 = std::clamp(b.x1, 0.0, static_cast<double>(img.width));
        b.y1 = std::clamp(b.y1, 0.0, static_cast<double>(img.height));
        b.x2 = std::clamp(b.x2, 0.0, static_cast<double>(img.width));
        b.y2 = std::clamp(b.y2, 0.0, static_cast<double>(img.height));
        if (b.width() > 0 && b.height() > 0 && b.area() >= 1.0) kept.push_back(b);
    }
    img.boxes = std::move(kept);
}

double sample_replicate(const AnnotatedImage& in, std::int64_t y, std::int64_t x) {
    return in.px(std::clamp<std::int64_t>(y, 0, in.height - 1),
                 std::clamp<std::int64_t>(x, 0, in.width - 1));
}

AnnotatedImage apply_hflip(const AnnotatedImage& in) {
    AnnotatedImage out = in;
    for (std::int64_t y = 0; y < in.height; ++y)
        for (std::int64_t x = 0; x < in.width; ++x) out.px(y, x) = in.px(y, in.width - 1 - x);
    const double W = static_cast<double>(in.width);
    for (std::size_t i = 0; i < in.boxes.size(); ++i) {
        out.boxes[i].x1 = W - in.boxes[i].x2;
        out.boxes[i].x2 = W - in.boxes[i].x1;
    }
    return out;
}

AnnotatedImage apply_vflip(const AnnotatedImage& in) {
    AnnotatedImage out = in;
    for (std::int64_t y = 0; y < in.height; ++y)
        for (std::int64_t x = 0; x < in.width; ++x) out.px(y, x) = in.px(in.height - 1 - y, x);
    const double H = static_cast<double>(in.height);
    for (std::size_t i = 0; i < in.boxes.size(); ++i) {
        out.boxes[i].y1 = H - in.boxes[i].y2;
        out.boxes[i].y2 = H - in.boxes[i].y1;
    }
    return out;
}

AnnotatedImage apply_translate(const AnnotatedImage& in, std::int64_t tx, std::int64_t ty) {
    AnnotatedImage out = in;
    for (std::int64_t y = 0; y < in.height; ++y)
        for (std::int64_t x = 0; x < in.width; ++x)
            out.px(y, x) = sample_replicate(in, y - ty, x - tx);
    for (Box& b : out.boxes) {
        b.x1 += static_cast<double>(tx);
        b.x2 += static_cast<double>(tx);
        b.y1 += static_cast<double>(ty);
        b.y2 += static_cast<double>(ty);
    }
    clip_and_filter_boxes(out);
    return out;
}

// Scales about the image center in box coordinates (pixel p spans [p, p+1)).
AnnotatedImage apply_scale(const AnnotatedImage& in, double s) {
    if (!(s > 0)) throw ShapeError("augment: scale factor must be positive");
    AnnotatedImage out = in;
    const double cy = static_cast<double>(in.height) / 2.0;
    const double cx = static_cast<double>(in.width) / 2.0;
    for (std::int64_t y = 0; y < in.height; ++y) {
        const double sy = cy + (static_cast<double>(y) + 0.5 - cy) / s - 0.5;
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
        const double fy = sy - static_cast<double>(y0);
        for (std::int64_t x = 0; x < in.width; ++x) {
            const double sx = cx + (static_cast<double>(x) + 0.5 - cx) / s - 0.5;
            const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
            const double fx = sx - static_cast<double>(x0);
            out.px(y, x) = (1 - fy) * ((1 - fx) * sample_replicate(in, y0, x0) +
                                       fx * sample_replicate(in, y0, x0 + 1)) +
                           fy * ((1 - fx) * sample_replicate(in, y0 + 1, x0) +
                                 fx * sample_replicate(in, y0 + 1, x0 + 1));
        }
    }
    for (Box& b : out.boxes) {
        b.x1 = cx + (b.x1 - cx) * s;
        b.x2 = cx + (b.x2 - cx) * s;
        b.y1 = cy + (b.y1 - cy) * s;
        b.y2 = cy + (b.y2 - cy) * s;
    }
    clip_and_filter_boxes(out);
    return out;
}

} // namespace

AnnotatedImage augment(const AnnotatedImage& img, const std::vector<AugOp>& ops,
                       const AugmentParams& params) {
    if (img.pixels.empty()) throw ShapeError("augment: image has no pixel data");
    AnnotatedImage out = img;
    Rng noise_rng(params.seed);
    for (AugOp op : ops) {
        switch (op) {
        case AugOp::HFlip:
            out = apply_hflip(out);
            break;
        case AugOp::VFlip:
            out = apply_vflip(out);
            break;
        case AugOp::Translate:
            out = apply_translate(out, params.translate_x, params.translate_y);
            break;
        case AugOp::Scale:
            out = apply_scale(out, params.scale);
            break;
        case AugOp::Brightness:
            for (double& p : out.pixels) p = std::clamp(p + params.brightness, 0.0, 1.0);
            break;
        case AugOp::Noise:
            if (params.noise_stddev > 0)
                for (double& p : out.pixels)
                    p = std::clamp(p + params.noise_stddev * noise_rng.normal(), 0.0, 1.0);
            break;
        }
    }
    out.validate();
    return out;
}

AnnotatedImage random_augment(const AnnotatedImage& img, Rng& rng) {
    std::vector<AugOp> ops;
    AugmentParams p;
    p.seed = rng.next_u64();
    if (rng.uniform() < 0.5) ops.push_back(AugOp::HFlip);
    if (rng.uniform() < 0.25) ops.push_back(AugOp::VFlip);
    if (rng.uniform() < 0.5) {
        p.translate_x = static_cast<std::int64_t>(
            std::llround(rng.uniform(-0.08, 0.08) * static_cast<double>(img.width)));
        p.translate_y = static_cast<std::int64_t>(
            std::llround(rng.uniform(-0.08, 0.08) * static_cast<double>(img.height)));
        ops.push_back(AugOp::Translate);
    }
    if (rng.uniform() < 0.5) {
        p.scale = rng.uniform(0.9, 1.1);
        ops.push_back(AugOp::Scale);
    }
    if (rng.uniform() < 0.5) {
        p.brightness = rng.uniform(-0.05, 0.05);
        ops.push_back(AugOp::Brightness);
    }
    if (rng.uniform() < 0.3) {
        p.noise_stddev = rng.uniform(0.0, 0.01);
        ops.push_back(AugOp::Noise);
    }
    return augment(img, ops, p);
}

} // namespace irnet
