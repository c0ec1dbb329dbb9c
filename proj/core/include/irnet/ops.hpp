#pragma once

#include <array>
#include <utility>
#include <vector>

#include "irnet/tensor.hpp"

namespace irnet {

/// Weights of one 2-D convolution. Cross-correlation convention (no kernel
/// flip). weight is (Cout,Cin,Kh,Kw), bias is (Cout).
struct ConvParams {
    Tensor weight;
    Tensor bias;
    int stride = 1;
    int padding = 0;
    int dilation = 1;

    std::int64_t out_channels() const { return weight.dim(0); }
    std::int64_t in_channels() const { return weight.dim(1); }
};

struct ConvGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

// output spatial extent for one axis; throws if < 1
std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, int stride, int padding,
                             int dilation);

Tensor conv2d_forward(const Tensor& input, const ConvParams& params);
ConvGrads conv2d_backward(const Tensor& input, const ConvParams& params, const Tensor& grad_out);

/// Samples input (N,C,H,W) at fractional (y,x) points; output is (N,C,P).
/// Out-of-bounds reads are zero. Each value is a convex combination of the
/// four surrounding grid elements.
Tensor bilinear_sample(const Tensor& input, const std::vector<std::array<double, 2>>& points);

struct BilinearGrads {
    Tensor input;
    std::vector<std::array<double, 2>> points;
};
BilinearGrads bilinear_sample_backward(const Tensor& input,
                                       const std::vector<std::array<double, 2>>& points,
                                       const Tensor& grad_out);

// elementwise activations, each with a backward taking the forward input
Tensor silu(const Tensor& x);
Tensor silu_backward(const Tensor& x, const Tensor& grad_out);
Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);
Tensor sigmoid(const Tensor& x);
Tensor sigmoid_backward(const Tensor& x, const Tensor& grad_out);
// hard_sigmoid(x) = max(0, min(1, (x+1)/2))
Tensor hard_sigmoid(const Tensor& x);
Tensor hard_sigmoid_backward(const Tensor& x, const Tensor& grad_out);

/// Per-channel mean over space: (N,C,H,W) -> (N,C).
Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const std::vector<std::int64_t>& input_shape,
                                const Tensor& grad_out);

// resampling between dyadic grids (NCHW)
Tensor upsample_nearest(const Tensor& input, int factor);
Tensor upsample_nearest_backward(const Tensor& grad_out, int factor);
Tensor avg_pool(const Tensor& input, int factor);
Tensor avg_pool_backward(const Tensor& grad_out, int factor);

Tensor concat_channels(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_channels(const Tensor& grad, std::int64_t c_first);

Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& dst, const Tensor& src);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
void scale_inplace(Tensor& dst, double s);

namespace scalar {

template <class T> T sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <class T> T silu(T x) { return x * sigmoid(x); }

template <class T> T silu_grad(T x) {
    const T s = sigmoid(x);
    return s * (T(1) + x * (T(1) - s));
}

template <class T> T hard_sigmoid(T x) {
    const T y = (x + T(1)) / T(2);
    return y < T(0) ? T(0) : (y > T(1) ? T(1) : y);
}

template <class T> T hard_sigmoid_grad(T x) {
    return (x > T(-1) && x < T(1)) ? T(0.5) : T(0);
}

} // namespace scalar

} // namespace irnet
