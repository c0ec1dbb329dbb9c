#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "irnet/dyhead.hpp"
#include "irnet/layers.hpp"
#include "irnet/msfa.hpp"

namespace irnet {

/// Architecture description; together with the seed it fully determines the
/// parameter vector (count and initial values).
struct ModelConfig {
    double width_mult = 0.25;
    int depth = 1; // bottlenecks per backbone stage
    std::vector<int> strides{8, 16};
    // anchor (w,h) in input pixels, anchors_per_scale() per scale, finest first
    std::vector<std::array<double, 2>> anchors{{4, 4},   {8, 8},   {12, 12},
                                               {16, 16}, {24, 24}, {32, 32}};
    int num_classes = 1;
    int dyhead_blocks = 2;
    std::vector<int> msfa_dilations{1, 3, 5};
    std::uint64_t seed = 7;
    Dtype dtype = Dtype::F32;

    int scale_count() const { return static_cast<int>(strides.size()); }
    int anchors_per_scale() const { return 3; }
    std::int64_t head_out_channels() const {
        return anchors_per_scale() * (5 + num_classes);
    }
    // backbone channel ladder: index 0 = stem (stride 2) .. 4 = tail (stride 32)
    std::int64_t stage_channels(int i) const;
    std::int64_t head_channels() const { return stage_channels(2); }

    void validate() const; // throws ShapeError with the offending field
};

ModelConfig parse_model_config(const std::string& text);
std::string serialize_model_config(const ModelConfig& cfg);

/// The detection network: reduced CSP-style backbone with an MSFA tail, the
/// two-output neck (stride-32 head removed, extra conv added on the retained
/// path), a DyHead stack, and two 1x1 prediction heads.
class Model {
public:
    Model() = default;
    explicit Model(const ModelConfig& cfg);

    // raw prediction maps, finest scale first: (N, 3*(5+nc), H/8, W/8) and (N, ., H/16, W/16)
    std::vector<Tensor> forward(const Tensor& batch, bool train);
    std::vector<Tensor> forward(const Tensor& batch) const;
    // consumes caches of the latest train forward; accumulates parameter
    // gradients and returns the gradient wrt the input batch
    Tensor backward(const std::vector<Tensor>& grad_preds);

    std::vector<ParamRef> parameters();
    std::int64_t parameter_count();
    void zero_grads();
    std::string describe(); // one line per layer: name, weight shape, param count

    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;

    struct Stage {
        ConvLayer down;
        std::vector<Bottleneck> blocks;
    };

    ConvLayer stem_;
    std::array<Stage, 4> stages_;
    MsfaBlock msfa_;
    ConvLayer lat4_, fuse4_, lat3_, fuse3_, extra_, down4_, fuse5_;
    ConvLayer proj3_, proj4_;
    std::vector<DyHeadBlock> dyhead_;
    ConvLayer head3_, head4_;

    void check_input(const Tensor& batch) const;
};

Model build_model(const ModelConfig& cfg); // validates, then constructs

} // namespace irnet
