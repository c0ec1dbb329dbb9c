#include "irnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

#include "irnet/errors.hpp"
#include "irnet/rng.hpp"

namespace irnet {

SplitResult split_dataset(std::size_t count, std::array<double, 3> ratios, std::uint64_t seed) {
    const double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::fabs(sum - 1.0) > 1e-9)
        throw ShapeError("split_dataset: ratios sum to " + std::to_string(sum) + ", expected 1");
    for (double r : ratios)
        if (r < 0) throw ShapeError("split_dataset: negative ratio");

    // Largest-remainder apportionment: floor each share, then hand the
    // leftover items to the largest fractional parts (ties to earlier splits).
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double share = ratios[i] * static_cast<double>(count);
        sizes[i] = static_cast<std::size_t>(std::floor(share + 1e-9));
        frac[i] = share - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return frac[a] > frac[b]; });
    for (std::size_t left = count - assigned, k = 0; k < left; ++k)
        ++sizes[static_cast<std::size_t>(order[k % 3])];

    std::vector<std::size_t> indices(count);
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = count; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_int(i));
        std::swap(indices[i - 1], indices[j]);
    }

    SplitResult r;
    auto take = [&](std::size_t from, std::size_t n) {
        return std::vector<std::size_t>(indices.begin() + static_cast<std::ptrdiff_t>(from),
                                        indices.begin() + static_cast<std::ptrdiff_t>(from + n));
    };
    r.train = take(0, sizes[0]);
    r.val = take(sizes[0], sizes[1]);
    r.test = take(sizes[0] + sizes[1], sizes[2]);
    if (count > 0) {
        const char* names[3] = {"train", "val", "test"};
        for (int i = 0; i < 3; ++i)
            if (sizes[static_cast<std::size_t>(i)] == 0 && ratios[static_cast<std::size_t>(i)] > 0) {
                if (!r.warning.empty()) r.warning += "; ";
                r.warning += std::string("split '") + names[i] + "' is empty";
            }
    }
    return r;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::vector<ManifestEntry> entries = parse_manifest(read_text_file(path));
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    for (ManifestEntry& e : entries) {
        if (!base.empty()) {
            if (std::filesystem::path(e.image_path).is_relative())
                e.image_path = (base / e.image_path).string();
            if (std::filesystem::path(e.label_path).is_relative())
                e.label_path = (base / e.label_path).string();
        }
    }
    return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    write_text_file(path, format_manifest(entries));
}

AnnotatedImage load_sample(const ManifestEntry& entry) {
    AnnotatedImage img = read_pgm(entry.image_path);
    const std::string& lp = entry.label_path;
    if (lp.size() >= 4 && lp.substr(lp.size() - 4) == ".xml") {
        const AnnotatedImage meta = parse_voc_xml(read_text_file(lp));
        if (meta.width > 0 && meta.height > 0 &&
            (meta.width != img.width || meta.height != img.height))
            throw ParseError("label " + lp + " declares " + std::to_string(meta.width) + "x" +
                             std::to_string(meta.height) + " but image is " +
                             std::to_string(img.width) + "x" + std::to_string(img.height));
        img.boxes = meta.boxes;
    } else {
        img.boxes = parse_yolo_txt(read_text_file(lp), img.width, img.height);
    }
    img.validate();
    return img;
}

Tensor to_input_tensor(const std::vector<AnnotatedImage>& batch, Dtype dt) {
    if (batch.empty()) throw ShapeError("to_input_tensor: empty batch");
    const std::int64_t h = batch[0].height, w = batch[0].width;
    Tensor t = Tensor::zeros({static_cast<std::int64_t>(batch.size()), 1, h, w}, dt);
    for (std::size_t n = 0; n < batch.size(); ++n) {
        const AnnotatedImage& img = batch[n];
        if (img.height != h || img.width != w)
            throw ShapeError("to_input_tensor: image " + std::to_string(n) + " is " +
                             std::to_string(img.width) + "x" + std::to_string(img.height) +
                             ", batch is " + std::to_string(w) + "x" + std::to_string(h));
        if (static_cast<std::int64_t>(img.pixels.size()) != h * w)
            throw ShapeError("to_input_tensor: image " + std::to_string(n) + " has no pixels");
        const std::int64_t base = static_cast<std::int64_t>(n) * h * w;
        for (std::int64_t i = 0; i < h * w; ++i)
            t.set(base + i, img.pixels[static_cast<std::size_t>(i)]);
    }
    return t;
}

std::vector<std::array<double, 2>> kmeans_anchors(
    const std::vector<std::array<double, 2>>& sizes, int k, std::uint64_t seed) {
    if (k < 1) throw ShapeError("kmeans_anchors: k must be >= 1");
    if (sizes.empty()) throw ShapeError("kmeans_anchors: no box sizes");

    // Initialize centers at area quantiles for a deterministic, spread start.
    std::vector<std::array<double, 2>> sorted = sizes;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a[0] * a[1] < b[0] * b[1]; });
    std::vector<std::array<double, 2>> centers(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        const std::size_t idx = std::min(
            sorted.size() - 1,
            static_cast<std::size_t>((static_cast<double>(c) + 0.5) / k *
                                     static_cast<double>(sorted.size())));
        centers[static_cast<std::size_t>(c)] = sorted[idx];
    }

    Rng rng(seed);
    std::vector<int> assign(sizes.size(), 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double dw = sizes[i][0] - centers[static_cast<std::size_t>(c)][0];
                const double dh = sizes[i][1] - centers[static_cast<std::size_t>(c)][1];
                const double d = dw * dw + dh * dh;
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        std::vector<std::array<double, 2>> next(static_cast<std::size_t>(k), {0, 0});
        std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            next[static_cast<std::size_t>(assign[i])][0] += sizes[i][0];
            next[static_cast<std::size_t>(assign[i])][1] += sizes[i][1];
            ++counts[static_cast<std::size_t>(assign[i])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                next[static_cast<std::size_t>(c)][0] /=
                    static_cast<double>(counts[static_cast<std::size_t>(c)]);
                next[static_cast<std::size_t>(c)][1] /=
                    static_cast<double>(counts[static_cast<std::size_t>(c)]);
            } else {
                // empty cluster: restart at a random member
                next[static_cast<std::size_t>(c)] =
                    sizes[static_cast<std::size_t>(rng.uniform_int(sizes.size()))];
                changed = true;
            }
        }
        centers = std::move(next);
        if (!changed && iter > 0) break;
    }
    std::sort(centers.begin(), centers.end(),
              [](const auto& a, const auto& b) { return a[0] * a[1] < b[0] * b[1]; });
    return centers;
}

ImageTargets to_targets(const AnnotatedImage& img) {
    if (img.width <= 0 || img.height <= 0)
        throw ShapeError("to_targets: image has no dimensions");
    ImageTargets targets;
    const double W = static_cast<double>(img.width), H = static_cast<double>(img.height);
    for (const Box& b : img.boxes) {
        TargetBox t;
        t.cls = b.cls;
        t.cx = (b.x1 + b.x2) / 2 / W;
        t.cy = (b.y1 + b.y2) / 2 / H;
        t.w = b.width() / W;
        t.h = b.height() / H;
        targets.push_back(t);
    }
    return targets;
}

} // namespace irnet
