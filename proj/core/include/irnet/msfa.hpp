#pragma once

#include <string>
#include <vector>

#include "irnet/layers.hpp"

namespace irnet {

// Multi-Scale Feature Aggregation: three parallel dilated 3x3 branches
// (SiLU-activated), each refined by a linear 1x1 convolution, summed.
class MsfaBlock {
public:
    MsfaBlock() = default;
    MsfaBlock(std::int64_t in_channels, std::int64_t mid_channels, std::int64_t out_channels,
              std::vector<int> dilations, Dtype dtype, Rng& rng);

    Tensor forward(const Tensor& input, bool train);
    Tensor forward(const Tensor& input) const;
    // Accumulates parameter gradients, returns grad wrt input.
    Tensor backward(const Tensor& grad_out);
    void collect(const std::string& prefix, std::vector<ParamRef>& out);

    std::int64_t in_channels() const { return in_ch_; }
    std::int64_t mid_channels() const { return mid_ch_; }
    std::int64_t out_channels() const { return out_ch_; }
    const std::vector<int>& dilations() const { return dilations_; }

    // Exposed so tests can install hand-crafted kernels (Dirac / zeroed branches).
    std::vector<ConvLayer> branch;
    std::vector<ConvLayer> point;

private:
    std::int64_t in_ch_ = 0;
    std::int64_t mid_ch_ = 0;
    std::int64_t out_ch_ = 0;
    std::vector<int> dilations_;
};

inline Tensor msfa_forward(const Tensor& input, const MsfaBlock& block) {
    return block.forward(input);
}

} // namespace irnet
