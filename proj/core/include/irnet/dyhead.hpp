#pragma once

#include <string>
#include <utility>
#include <vector>

#include "irnet/layers.hpp"

namespace irnet {

/// Ordered multi-scale feature maps, finest grid first. DyHead's attentions
/// operate on the canonical resampled tensor (N, L, C, Hr, Wr) where
/// (Hr, Wr) is the grid of the reference (lower-median) level; its flattened
/// spatial axis is the S of the L x S x C view.
struct FeatureLevels {
    std::vector<Tensor> levels; // each (N, C, Hl, Wl), shared N and C

    static std::size_t ref_index(std::size_t level_count) { return (level_count - 1) / 2; }
};

using LevelSizes = std::vector<std::pair<std::int64_t, std::int64_t>>;

LevelSizes level_sizes(const std::vector<Tensor>& levels);

/// Resample every level onto the reference grid: nearest-neighbor upsample for
/// coarser levels, strided average-pool for finer ones. Deterministic, linear.
Tensor canonicalize(const std::vector<Tensor>& levels);
std::vector<Tensor> canonicalize_backward(const Tensor& grad_canon, const LevelSizes& sizes);

/// Resample the canonical tensor back to the native per-level grids.
std::vector<Tensor> decanonicalize(const Tensor& canon, const LevelSizes& sizes);
Tensor decanonicalize_backward(const std::vector<Tensor>& grad_levels);

// canonical-tensor level slice helpers: (N,L,C,H,W) <-> (N,C,H,W) at level l
Tensor slice_level(const Tensor& canon, std::int64_t l);
void scatter_level_add(Tensor& canon_grad, std::int64_t l, const Tensor& grad_slice);

/// Deformable K-point aggregation of Eq. (4), averaged over levels and
/// broadcast back to every level by the caller. Inputs:
///   canon   (N,L,C,H,W)  canonical features
///   offsets (N,2K,H,W)   fractional (dy,dx) per point, interleaved per k
///   mods    (N,K,H,W)    importance scalars (the block passes sigmoid outputs)
///   weights (K)          per-point scalars shared across channels (W_{1,K})
/// Output (N,C,H,W): (1/L) sum_l sum_k weights[k] * F(l; p + p_k + dp_k; c) * mods[k].
Tensor spatial_aggregate(const Tensor& canon, const Tensor& offsets, const Tensor& mods,
                         const Tensor& weights);
struct SpatialGrads {
    Tensor canon;
    Tensor offsets;
    Tensor mods;
    Tensor weights;
};
SpatialGrads spatial_aggregate_backward(const Tensor& canon, const Tensor& offsets,
                                        const Tensor& mods, const Tensor& weights,
                                        const Tensor& grad_agg);

/// Two-piece dynamic ReLU of Eq. (5): out = max(a1*F + b1, a2*F + b2) with
/// per-(sample, channel) coefficients `coeffs` (N,C,4) ordered [a1,a2,b1,b2].
Tensor task_apply(const Tensor& canon, const Tensor& coeffs);
struct TaskGrads {
    Tensor canon;
    Tensor coeffs;
};
TaskGrads task_apply_backward(const Tensor& canon, const Tensor& coeffs, const Tensor& grad_out);

/// One DyHead block: scale attention (Eq. 3), spatial attention (Eq. 4), task
/// attention (Eq. 5), composed per Eq. (2). Each *_stage maps the canonical
/// tensor (N,L,C,H,W) to the attended tensor of the same shape; the
/// *_stage_backward methods consume caches from the latest train forward and
/// accumulate parameter gradients.
class DyHeadBlock {
public:
    static constexpr int kPoints = 9;    // 3x3 deformable sampling grid
    static constexpr int kReduction = 4; // theta bottleneck ratio

    DyHeadBlock() = default;
    DyHeadBlock(std::int64_t channels, Dtype dt, Rng& rng);

    Tensor scale_stage(const Tensor& canon, bool train);
    Tensor scale_stage(const Tensor& canon) const;
    Tensor scale_stage_backward(const Tensor& grad_out);

    Tensor spatial_stage(const Tensor& canon, bool train);
    Tensor spatial_stage(const Tensor& canon) const;
    Tensor spatial_stage_backward(const Tensor& grad_out);

    Tensor task_stage(const Tensor& canon, bool train);
    Tensor task_stage(const Tensor& canon) const;
    Tensor task_stage_backward(const Tensor& grad_out);

    // Native-grid entry points: one canonicalize/decanonicalize round trip per
    // stage, so composition matches chaining the FeatureLevels-level ops bitwise.
    std::vector<Tensor> forward_levels(const std::vector<Tensor>& levels, bool train);
    std::vector<Tensor> forward_levels(const std::vector<Tensor>& levels) const;
    std::vector<Tensor> backward_levels(const std::vector<Tensor>& grad_levels);

    void collect(const std::string& prefix, std::vector<ParamRef>& out);
    std::int64_t channels() const { return channels_; }

    // introspection: per-(sample, level) scale gates for the given canonical input
    Tensor scale_gates(const Tensor& canon) const;
    // per-(sample, channel) task coefficients (N,C,4) [a1,a2,b1,b2]
    Tensor task_coefficients(const Tensor& canon) const;

    // learnables
    ConvLayer scale_fc;     // 1x1, C -> 1, linear (Eq. 3's f)
    ConvLayer offset_conv;  // 3x3, C -> 3K, linear; 2K offsets then K modulation logits
    Tensor spatial_weights; // (K)
    Linear theta_fc1;       // C -> C/r
    Linear theta_fc2;       // C/r -> 4C, zero weights + identity-biased bias at init

private:
    std::int64_t channels_ = 0;

    // train caches, one set per stage
    Tensor scale_in_, scale_z_, scale_gate_;
    Tensor spatial_in_, spatial_offsets_, spatial_modlogits_, spatial_mods_;
    Tensor task_in_, task_fc1_pre_, task_raw_, task_coeffs_;
    LevelSizes sizes_;

    Tensor theta_forward(const Tensor& canon, bool train);
    Tensor theta_forward(const Tensor& canon) const;
};

// Spec-level ops on FeatureLevels (inference paths; one canonical round trip each).
FeatureLevels scale_attention(const FeatureLevels& f, const DyHeadBlock& block);
FeatureLevels spatial_attention(const FeatureLevels& f, const DyHeadBlock& block);
FeatureLevels task_attention(const FeatureLevels& f, const DyHeadBlock& block);
FeatureLevels dyhead_block(const FeatureLevels& f, const DyHeadBlock& block);
FeatureLevels dyhead_stack(const FeatureLevels& f, const std::vector<DyHeadBlock>& blocks);

} // namespace irnet
