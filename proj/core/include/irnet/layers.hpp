#pragma once

#include <string>
#include <vector>

#include "irnet/ops.hpp"
#include "irnet/rng.hpp"
#include "irnet/tensor.hpp"

namespace irnet {

/// Named handle to a learnable tensor; gradients live in the tensor's grad slot.
struct ParamRef {
    std::string name;
    Tensor* tensor;
};

/// Convolution with optional SiLU, the building block of the whole network.
/// Training forwards cache what the backward needs; inference forwards with
/// train=false leave the layer untouched and are safe to share across threads.
class ConvLayer {
public:
    ConvLayer() = default;
    ConvLayer(std::int64_t cin, std::int64_t cout, int kernel, int stride, int padding,
              int dilation, bool act, Dtype dt, Rng& rng);

    Tensor forward(const Tensor& x, bool train);
    Tensor forward(const Tensor& x) const; // inference path, no caching
    // returns grad wrt input; accumulates weight/bias grads
    Tensor backward(const Tensor& grad_out);

    void collect(const std::string& prefix, std::vector<ParamRef>& out);

    ConvParams params;
    bool act = true;

private:
    Tensor cached_in_;
    Tensor cached_pre_; // pre-activation, kept only when act
};

/// Fully connected map on (N, In) -> (N, Out).
class Linear {
public:
    Linear() = default;
    Linear(std::int64_t in, std::int64_t out, Dtype dt, Rng& rng);

    Tensor forward(const Tensor& x, bool train);
    Tensor forward(const Tensor& x) const;
    Tensor backward(const Tensor& grad_out);

    void collect(const std::string& prefix, std::vector<ParamRef>& out);

    Tensor weight; // (Out, In)
    Tensor bias;   // (Out)

private:
    Tensor cached_in_;
};

/// Residual bottleneck: x + conv3x3(conv1x1(x)), both SiLU.
class Bottleneck {
public:
    Bottleneck() = default;
    Bottleneck(std::int64_t channels, Dtype dt, Rng& rng);

    Tensor forward(const Tensor& x, bool train);
    Tensor forward(const Tensor& x) const;
    Tensor backward(const Tensor& grad_out);

    void collect(const std::string& prefix, std::vector<ParamRef>& out);

    ConvLayer reduce;
    ConvLayer expand;
};

// Kaiming-uniform fan-in init used for every conv/linear weight.
void kaiming_uniform(Tensor& weight, std::int64_t fan_in, Rng& rng);

} // namespace irnet
