#pragma once

#include <array>
#include <string>
#include <vector>

#include "irnet/model.hpp"

namespace irnet {

/// One decoded box. Pixel corner coordinates, 0-based half-open, x1<x2, y1<y2.
struct Detection {
    std::array<double, 4> box{}; // x1, y1, x2, y2
    double score = 0;            // confidence in [0,1] (see decode)
    int cls = 0;
    std::int64_t image = 0;
};

struct GroundTruth {
    std::array<double, 4> box{};
    int cls = 0;
    std::int64_t image = 0;
};

double iou(const std::array<double, 4>& a, const std::array<double, 4>& b);

/// YOLO decode of the raw prediction maps, mirroring the loss conventions:
///   center = (2*sigmoid(txy) - 0.5 + cell) * stride
///   extent = (2*sigmoid(twh))^2 * anchor (pixels)
/// Score is objectness * best-class confidence when num_classes > 1, and
/// objectness alone for single-class models (whose class term is untrained).
/// Detections with score below conf_threshold are dropped; boxes are clipped
/// to the image and degenerate clips discarded. Returns one list per batch
/// image (Detection.image = n).
std::vector<std::vector<Detection>> decode(const std::vector<Tensor>& preds,
                                           const ModelConfig& cfg, double conf_threshold,
                                           std::int64_t input_h, std::int64_t input_w);

/// Greedy per-class non-maximum suppression. Output sorted by descending
/// score; ties keep input order. A box is suppressed when its IoU with an
/// already-kept box of the same class exceeds iou_threshold.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

/// Per-class (class-agnostic within its inputs) average precision at one IoU
/// threshold: score-descending greedy matching, one detection per ground
/// truth, all-points monotone precision-recall envelope. Zero ground truths
/// make the value undefined (absent), not zero.
struct ApResult {
    bool defined = false;
    double value = 0;
};
ApResult average_precision(const std::vector<Detection>& dets,
                           const std::vector<GroundTruth>& gts, double iou_threshold);

struct ImageMatch {
    std::int64_t image = 0;
    std::int64_t tp = 0, fp = 0, gt = 0;
};

struct EvalResult {
    bool precision_defined = false; // no detections above the operating point
    double precision = 0;
    bool recall_defined = false; // no ground truths at all
    double recall = 0;
    std::vector<double> iou_thresholds; // 0.50 .. 0.95
    std::vector<double> ap_per_iou;     // class-averaged AP at each threshold
    bool map_defined = false;           // false when no class has ground truths
    double map50 = 0;
    double map5095 = 0;
    std::vector<ImageMatch> per_image; // matches at IoU 0.5, operating conf
};

/// Dataset-level evaluation: AP averaged over IoU in {0.50,...,0.95} and over
/// classes (classes without ground truths are excluded); precision/recall at
/// the fixed operating point (conf 0.15, IoU-match 0.5).
EvalResult map_range(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                     double operating_conf = 0.15);

std::string format_eval_kv(const EvalResult& r);    // line-oriented key=value
std::string format_eval_table(const EvalResult& r); // human-readable table

/// Median-of-iterations throughput of forward + decode + NMS on a seeded
/// random input. Warm-up iterations are excluded from timing.
struct FpsResult {
    int iterations = 0;
    double elapsed_seconds = 0;       // timed iterations only
    double fps_mean = 0;              // iterations / elapsed_seconds
    double fps_median = 0;            // 1 / median iteration time
    double median_iteration_seconds = 0;
};
FpsResult fps_benchmark(const Model& model, std::int64_t input_h, std::int64_t input_w,
                        int iterations, int warmup, double conf_threshold, double nms_iou);

} // namespace irnet
