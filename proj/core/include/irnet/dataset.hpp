#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "irnet/image.hpp"
#include "irnet/labels.hpp"
#include "irnet/loss.hpp"
#include "irnet/tensor.hpp"

namespace irnet {

/// Deterministic shuffled split by largest-remainder apportionment.
/// Ratios must sum to 1 within 1e-9 (ShapeError otherwise). A ratio that
/// yields an empty split on a non-empty set is reported via `warning`, not an
/// error. The three index lists partition 0..count-1.
struct SplitResult {
    std::vector<std::size_t> train, val, test;
    std::string warning; // empty when all splits are non-empty
};
SplitResult split_dataset(std::size_t count, std::array<double, 3> ratios, std::uint64_t seed);

/// Manifest file I/O ("image-path<TAB>label-path" per line). Relative paths
/// in the manifest are resolved against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

/// Loads one sample: PGM pixels plus labels (.txt parsed as YOLO, .xml as
/// VOC, chosen by extension).
AnnotatedImage load_sample(const ManifestEntry& entry);

/// Conversion to model inputs. Images in a batch must share dimensions.
Tensor to_input_tensor(const std::vector<AnnotatedImage>& batch, Dtype dt);
ImageTargets to_targets(const AnnotatedImage& img); // normalized cx,cy,w,h

/// Lloyd k-means over (w,h) box sizes in pixels, deterministic per seed,
/// centers returned sorted by area. Used to recompute detection anchors from
/// a dataset's ground-truth boxes. Requires at least one size; k >= 1.
std::vector<std::array<double, 2>> kmeans_anchors(
    const std::vector<std::array<double, 2>>& sizes, int k, std::uint64_t seed);

} // namespace irnet
