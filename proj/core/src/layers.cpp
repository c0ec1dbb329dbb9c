#include "irnet/layers.hpp"

#include <cmath>

namespace irnet {

void kaiming_uniform(Tensor& weight, std::int64_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::int64_t>(1, fan_in)));
    for (std::int64_t i = 0; i < weight.numel(); ++i) weight.set(i, rng.uniform(-bound, bound));
}

ConvLayer::ConvLayer(std::int64_t cin, std::int64_t cout, int kernel, int stride, int padding,
                     int dilation, bool act_, Dtype dt, Rng& rng)
    : act(act_) {
    params.weight = Tensor::zeros({cout, cin, kernel, kernel}, dt);
    params.bias = Tensor::zeros({cout}, dt);
    params.stride = stride;
    params.padding = padding;
    params.dilation = dilation;
    kaiming_uniform(params.weight, cin * kernel * kernel, rng);
}

Tensor ConvLayer::forward(const Tensor& x, bool train) {
    Tensor pre = conv2d_forward(x, params);
    if (train) cached_in_ = x;
    if (!act) return pre;
    Tensor out = silu(pre);
    if (train) cached_pre_ = std::move(pre);
    return out;
}

Tensor ConvLayer::forward(const Tensor& x) const {
    Tensor pre = conv2d_forward(x, params);
    return act ? silu(pre) : pre;
}

Tensor ConvLayer::backward(const Tensor& grad_out) {
    const Tensor* g = &grad_out;
    Tensor g_pre;
    if (act) {
        g_pre = silu_backward(cached_pre_, grad_out);
        g = &g_pre;
    }
    ConvGrads cg = conv2d_backward(cached_in_, params, *g);
    add_inplace(params.weight.grad(), cg.weight);
    add_inplace(params.bias.grad(), cg.bias);
    return std::move(cg.input);
}

void ConvLayer::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight", &params.weight});
    out.push_back({prefix + ".bias", &params.bias});
}

Linear::Linear(std::int64_t in, std::int64_t out, Dtype dt, Rng& rng) {
    weight = Tensor::zeros({out, in}, dt);
    bias = Tensor::zeros({out}, dt);
    kaiming_uniform(weight, in, rng);
}

namespace {

template <class T>
void linear_fwd(const T* x, const T* w, const T* b, T* y, std::int64_t N, std::int64_t In,
                std::int64_t Out) {
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t o = 0; o < Out; ++o) {
            double acc = b[o];
            const T* xr = x + n * In;
            const T* wr = w + o * In;
            for (std::int64_t i = 0; i < In; ++i) acc += xr[i] * wr[i];
            y[n * Out + o] = static_cast<T>(acc);
        }
}

} // namespace

Tensor Linear::forward(const Tensor& x, bool train) {
    if (train) cached_in_ = x;
    return static_cast<const Linear*>(this)->forward(x);
}

Tensor Linear::forward(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != weight.dim(1))
        throw ShapeError("linear input " + x.shape_str() + " does not match weight " +
                         weight.shape_str());
    const auto N = x.dim(0), In = weight.dim(1), Out = weight.dim(0);
    Tensor y = Tensor::zeros({N, Out}, x.dtype());
    if (x.dtype() == Dtype::F64)
        linear_fwd<double>(x.data<double>(), weight.data<double>(), bias.data<double>(),
                           y.data<double>(), N, In, Out);
    else
        linear_fwd<float>(x.data<float>(), weight.data<float>(), bias.data<float>(),
                          y.data<float>(), N, In, Out);
    return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
    const auto N = cached_in_.dim(0), In = weight.dim(1), Out = weight.dim(0);
    if (grad_out.rank() != 2 || grad_out.dim(0) != N || grad_out.dim(1) != Out)
        throw ShapeError("linear grad_out " + grad_out.shape_str() + " must be (N,Out)");
    Tensor gx = Tensor::zeros(cached_in_.shape(), cached_in_.dtype());
    Tensor& gw = weight.grad();
    Tensor& gb = bias.grad();
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t o = 0; o < Out; ++o) {
            const double g = grad_out.at(n * Out + o);
            gb.set(o, gb.at(o) + g);
            for (std::int64_t i = 0; i < In; ++i) {
                gx.set(n * In + i, gx.at(n * In + i) + g * weight.at(o * In + i));
                gw.set(o * In + i, gw.at(o * In + i) + g * cached_in_.at(n * In + i));
            }
        }
    return gx;
}

void Linear::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
}

Bottleneck::Bottleneck(std::int64_t channels, Dtype dt, Rng& rng) {
    const std::int64_t mid = std::max<std::int64_t>(1, channels / 2);
    reduce = ConvLayer(channels, mid, 1, 1, 0, 1, true, dt, rng);
    expand = ConvLayer(mid, channels, 3, 1, 1, 1, true, dt, rng);
}

Tensor Bottleneck::forward(const Tensor& x, bool train) {
    return add(x, expand.forward(reduce.forward(x, train), train));
}

Tensor Bottleneck::forward(const Tensor& x) const {
    return add(x, expand.forward(reduce.forward(x)));
}

Tensor Bottleneck::backward(const Tensor& grad_out) {
    Tensor g = reduce.backward(expand.backward(grad_out));
    add_inplace(g, grad_out);
    return g;
}

void Bottleneck::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    reduce.collect(prefix + ".reduce", out);
    expand.collect(prefix + ".expand", out);
}

} // namespace irnet
