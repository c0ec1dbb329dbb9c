#pragma once

#include <vector>

#include "irnet/model.hpp"

namespace irnet {

/// One ground-truth box, normalized center format (all in [0,1]).
struct TargetBox {
    int cls = 0;
    double cx = 0, cy = 0, w = 0, h = 0;
};
using ImageTargets = std::vector<TargetBox>;

struct LossResult {
    double total = 0, box = 0, obj = 0, cls = 0; // components already gain-weighted
    std::vector<Tensor> grads;                   // d total / d raw predictions, per scale
};

/// Scalar CIoU between a predicted and a target box (center format, any common
/// unit) with the full analytic gradient wrt the predicted box. alpha is not
/// treated as a constant, so the gradient matches finite differences of the
/// value as written.
struct CiouGrad {
    double ciou = 0;
    double dbx = 0, dby = 0, dbw = 0, dbh = 0;
};
CiouGrad ciou_with_grad(double bx, double by, double bw, double bh, double tx, double ty,
                        double tw, double th);

// stable binary cross-entropy on a logit; d/dz = sigmoid(z) - y, d/dy = -z
double bce_with_logits(double z, double y);

/// YOLOv5-convention detection loss on the raw prediction maps:
///   box  — (1 - CIoU), mean per scale over anchor-ratio-matched assignments
///          (threshold 4.0, neighbor-cell expansion), gain 0.05
///   obj  — BCE vs CIoU soft labels, mean per scale over all cells, balance
///          weights {4.0 stride 8, 1.0 stride 16}, gain 1.0
///   cls  — BCE vs one-hot, mean per scale, gain 0.5; skipped when num_classes==1
/// The returned grads are exact gradients of `total`, including the soft-label
/// path through CIoU.
LossResult compute_loss(const std::vector<Tensor>& preds,
                        const std::vector<ImageTargets>& targets, const ModelConfig& cfg,
                        std::int64_t input_h, std::int64_t input_w);

constexpr double kBoxGain = 0.05;
constexpr double kObjGain = 1.0;
constexpr double kClsGain = 0.5;
constexpr double kAnchorRatioThreshold = 4.0;
inline double objectness_balance(int scale_index) { return scale_index == 0 ? 4.0 : 1.0; }

} // namespace irnet
