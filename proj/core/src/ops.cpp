#include "irnet/ops.hpp"

#include <algorithm>
#include <cmath>

#include "irnet/threading.hpp"

namespace irnet {

namespace {

template <class F> void dispatch(Dtype dt, F&& f) {
    if (dt == Dtype::F64)
        f(double{});
    else
        f(float{});
}

void require_rank4(const Tensor& t, const char* what) {
    if (t.rank() != 4)
        throw ShapeError(std::string(what) + " must be rank-4 NCHW, got " + t.shape_str());
}

// valid output range [lo, hi] on one axis for a fixed kernel tap, so the
// inner loops need no bounds checks
struct TapRange {
    std::int64_t lo, hi; // inclusive; empty if lo > hi
};

TapRange tap_range(std::int64_t in_extent, std::int64_t out_extent, int stride, int padding,
                   int dilation, std::int64_t k) {
    const std::int64_t shift = static_cast<std::int64_t>(padding) - k * dilation;
    std::int64_t lo = 0;
    if (shift > 0) lo = (shift + stride - 1) / stride;
    const std::int64_t num = in_extent - 1 + shift;
    if (num < 0) return {1, 0};
    const std::int64_t hi = std::min<std::int64_t>(out_extent - 1, num / stride);
    return {lo, hi};
}

template <class T>
void conv2d_forward_kernel(const T* in, const T* w, const T* b, T* out, std::int64_t N,
                           std::int64_t Cin, std::int64_t H, std::int64_t W, std::int64_t Cout,
                           std::int64_t Kh, std::int64_t Kw, std::int64_t Ho, std::int64_t Wo,
                           int stride, int padding, int dilation) {
    parallel_for(N * Cout, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t nc = lo; nc < hi; ++nc) {
            const std::int64_t n = nc / Cout;
            const std::int64_t co = nc % Cout;
            T* out_map = out + (n * Cout + co) * Ho * Wo;
            const T bias = b[co];
            for (std::int64_t i = 0; i < Ho * Wo; ++i) out_map[i] = bias;
            for (std::int64_t ci = 0; ci < Cin; ++ci) {
                const T* in_map = in + (n * Cin + ci) * H * W;
                const T* w_map = w + ((co * Cin + ci) * Kh) * Kw;
                for (std::int64_t kh = 0; kh < Kh; ++kh) {
                    const auto [h_lo, h_hi] = tap_range(H, Ho, stride, padding, dilation, kh);
                    for (std::int64_t kw = 0; kw < Kw; ++kw) {
                        const auto [w_lo, w_hi] = tap_range(W, Wo, stride, padding, dilation, kw);
                        const T wv = w_map[kh * Kw + kw];
                        if (wv == T(0)) continue;
                        for (std::int64_t ho = h_lo; ho <= h_hi; ++ho) {
                            const std::int64_t ih = ho * stride - padding + kh * dilation;
                            const T* in_row = in_map + ih * W - padding + kw * dilation;
                            T* out_row = out_map + ho * Wo;
                            for (std::int64_t wo = w_lo; wo <= w_hi; ++wo)
                                out_row[wo] += wv * in_row[wo * stride];
                        }
                    }
                }
            }
        }
    });
}

template <class T>
void conv2d_grad_input_kernel(const T* gout, const T* w, T* gin, std::int64_t N, std::int64_t Cin,
                              std::int64_t H, std::int64_t W, std::int64_t Cout, std::int64_t Kh,
                              std::int64_t Kw, std::int64_t Ho, std::int64_t Wo, int stride,
                              int padding, int dilation) {
    parallel_for(N, [&](std::int64_t n_lo, std::int64_t n_hi) {
        for (std::int64_t n = n_lo; n < n_hi; ++n) {
            for (std::int64_t co = 0; co < Cout; ++co) {
                const T* g_map = gout + (n * Cout + co) * Ho * Wo;
                for (std::int64_t ci = 0; ci < Cin; ++ci) {
                    T* gin_map = gin + (n * Cin + ci) * H * W;
                    const T* w_map = w + ((co * Cin + ci) * Kh) * Kw;
                    for (std::int64_t kh = 0; kh < Kh; ++kh) {
                        const auto [h_lo, h_hi] = tap_range(H, Ho, stride, padding, dilation, kh);
                        for (std::int64_t kw = 0; kw < Kw; ++kw) {
                            const auto [w_lo, w_hi] =
                                tap_range(W, Wo, stride, padding, dilation, kw);
                            const T wv = w_map[kh * Kw + kw];
                            if (wv == T(0)) continue;
                            for (std::int64_t ho = h_lo; ho <= h_hi; ++ho) {
                                const std::int64_t ih = ho * stride - padding + kh * dilation;
                                T* gin_row = gin_map + ih * W - padding + kw * dilation;
                                const T* g_row = g_map + ho * Wo;
                                for (std::int64_t wo = w_lo; wo <= w_hi; ++wo)
                                    gin_row[wo * stride] += wv * g_row[wo];
                            }
                        }
                    }
                }
            }
        }
    });
}

template <class T>
void conv2d_grad_weight_kernel(const T* in, const T* gout, T* gw, T* gb, std::int64_t N,
                               std::int64_t Cin, std::int64_t H, std::int64_t W, std::int64_t Cout,
                               std::int64_t Kh, std::int64_t Kw, std::int64_t Ho, std::int64_t Wo,
                               int stride, int padding, int dilation) {
    parallel_for(Cout, [&](std::int64_t co_lo, std::int64_t co_hi) {
        for (std::int64_t co = co_lo; co < co_hi; ++co) {
            T bias_acc = T(0);
            for (std::int64_t n = 0; n < N; ++n) {
                const T* g_map = gout + (n * Cout + co) * Ho * Wo;
                for (std::int64_t i = 0; i < Ho * Wo; ++i) bias_acc += g_map[i];
            }
            gb[co] = bias_acc;
            for (std::int64_t ci = 0; ci < Cin; ++ci) {
                T* gw_map = gw + ((co * Cin + ci) * Kh) * Kw;
                for (std::int64_t kh = 0; kh < Kh; ++kh) {
                    const auto [h_lo, h_hi] = tap_range(H, Ho, stride, padding, dilation, kh);
                    for (std::int64_t kw = 0; kw < Kw; ++kw) {
                        const auto [w_lo, w_hi] = tap_range(W, Wo, stride, padding, dilation, kw);
                        T acc = T(0);
                        for (std::int64_t n = 0; n < N; ++n) {
                            const T* g_map = gout + (n * Cout + co) * Ho * Wo;
                            const T* in_map = in + (n * Cin + ci) * H * W;
                            for (std::int64_t ho = h_lo; ho <= h_hi; ++ho) {
                                const std::int64_t ih = ho * stride - padding + kh * dilation;
                                const T* in_row = in_map + ih * W - padding + kw * dilation;
                                const T* g_row = g_map + ho * Wo;
                                for (std::int64_t wo = w_lo; wo <= w_hi; ++wo)
                                    acc += g_row[wo] * in_row[wo * stride];
                            }
                        }
                        gw_map[kh * Kw + kw] = acc;
                    }
                }
            }
        }
    });
}

void check_conv_args(const Tensor& input, const ConvParams& p) {
    require_rank4(input, "conv input");
    require_rank4(p.weight, "conv weight");
    if (p.bias.rank() != 1 || p.bias.dim(0) != p.weight.dim(0))
        throw ShapeError("conv bias " + p.bias.shape_str() + " does not match weight " +
                         p.weight.shape_str());
    if (input.dim(1) != p.weight.dim(1))
        throw ShapeError("conv channel mismatch: input " + input.shape_str() + " vs weight " +
                         p.weight.shape_str());
    if (p.stride < 1 || p.padding < 0 || p.dilation < 1)
        throw ShapeError("invalid conv stride/padding/dilation");
    if (input.dtype() != p.weight.dtype() || input.dtype() != p.bias.dtype())
        throw ShapeError("conv dtype mismatch");
}

} // namespace

std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, int stride, int padding,
                             int dilation) {
    const std::int64_t eff = static_cast<std::int64_t>(dilation) * (kernel - 1) + 1;
    const std::int64_t out = (in + 2 * static_cast<std::int64_t>(padding) - eff) / stride + 1;
    if (in + 2 * static_cast<std::int64_t>(padding) < eff || out < 1)
        throw ShapeError("conv output extent < 1 (input extent " + std::to_string(in) +
                         ", kernel " + std::to_string(kernel) + ", dilation " +
                         std::to_string(dilation) + ")");
    return out;
}

Tensor conv2d_forward(const Tensor& input, const ConvParams& params) {
    check_conv_args(input, params);
    const auto N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const auto Cout = params.weight.dim(0), Kh = params.weight.dim(2), Kw = params.weight.dim(3);
    const auto Ho = conv_out_extent(H, Kh, params.stride, params.padding, params.dilation);
    const auto Wo = conv_out_extent(W, Kw, params.stride, params.padding, params.dilation);
    Tensor out = Tensor::zeros({N, Cout, Ho, Wo}, input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        conv2d_forward_kernel<T>(input.data<T>(), params.weight.data<T>(), params.bias.data<T>(),
                                 out.data<T>(), N, Cin, H, W, Cout, Kh, Kw, Ho, Wo, params.stride,
                                 params.padding, params.dilation);
    });
    return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& params, const Tensor& grad_out) {
    check_conv_args(input, params);
    const auto N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const auto Cout = params.weight.dim(0), Kh = params.weight.dim(2), Kw = params.weight.dim(3);
    const auto Ho = conv_out_extent(H, Kh, params.stride, params.padding, params.dilation);
    const auto Wo = conv_out_extent(W, Kw, params.stride, params.padding, params.dilation);
    if (grad_out.rank() != 4 || grad_out.dim(0) != N || grad_out.dim(1) != Cout ||
        grad_out.dim(2) != Ho || grad_out.dim(3) != Wo)
        throw ShapeError("conv grad_out " + grad_out.shape_str() + " does not match output (" +
                         std::to_string(N) + "x" + std::to_string(Cout) + "x" +
                         std::to_string(Ho) + "x" + std::to_string(Wo) + ")");
    ConvGrads g;
    g.input = Tensor::zeros(input.shape(), input.dtype());
    g.weight = Tensor::zeros(params.weight.shape(), input.dtype());
    g.bias = Tensor::zeros(params.bias.shape(), input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        conv2d_grad_input_kernel<T>(grad_out.data<T>(), params.weight.data<T>(), g.input.data<T>(),
                                    N, Cin, H, W, Cout, Kh, Kw, Ho, Wo, params.stride,
                                    params.padding, params.dilation);
        conv2d_grad_weight_kernel<T>(input.data<T>(), grad_out.data<T>(), g.weight.data<T>(),
                                     g.bias.data<T>(), N, Cin, H, W, Cout, Kh, Kw, Ho, Wo,
                                     params.stride, params.padding, params.dilation);
    });
    return g;
}

namespace {

// the four taps of one bilinear read; weights sum to 1, off-grid taps dropped
struct BilinearTaps {
    std::int64_t y0, x0;
    double dy, dx;
};

inline BilinearTaps bilinear_taps(double y, double x) {
    const double fy = std::floor(y), fx = std::floor(x);
    return {static_cast<std::int64_t>(fy), static_cast<std::int64_t>(fx), y - fy, x - fx};
}

} // namespace

Tensor bilinear_sample(const Tensor& input, const std::vector<std::array<double, 2>>& points) {
    require_rank4(input, "bilinear_sample input");
    const auto N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const auto P = static_cast<std::int64_t>(points.size());
    Tensor out = Tensor::zeros({N, C, P}, input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = input.data<T>();
        T* o = out.data<T>();
        for (std::int64_t p = 0; p < P; ++p) {
            const auto t = bilinear_taps(points[static_cast<std::size_t>(p)][0],
                                         points[static_cast<std::size_t>(p)][1]);
            const double w00 = (1 - t.dy) * (1 - t.dx), w01 = (1 - t.dy) * t.dx;
            const double w10 = t.dy * (1 - t.dx), w11 = t.dy * t.dx;
            for (std::int64_t n = 0; n < N; ++n) {
                for (std::int64_t c = 0; c < C; ++c) {
                    const T* map = in + (n * C + c) * H * W;
                    double acc = 0.0;
                    if (t.y0 >= 0 && t.y0 < H) {
                        if (t.x0 >= 0 && t.x0 < W) acc += w00 * map[t.y0 * W + t.x0];
                        if (t.x0 + 1 >= 0 && t.x0 + 1 < W) acc += w01 * map[t.y0 * W + t.x0 + 1];
                    }
                    if (t.y0 + 1 >= 0 && t.y0 + 1 < H) {
                        if (t.x0 >= 0 && t.x0 < W) acc += w10 * map[(t.y0 + 1) * W + t.x0];
                        if (t.x0 + 1 >= 0 && t.x0 + 1 < W)
                            acc += w11 * map[(t.y0 + 1) * W + t.x0 + 1];
                    }
                    o[(n * C + c) * P + p] = static_cast<T>(acc);
                }
            }
        }
    });
    return out;
}

BilinearGrads bilinear_sample_backward(const Tensor& input,
                                       const std::vector<std::array<double, 2>>& points,
                                       const Tensor& grad_out) {
    require_rank4(input, "bilinear_sample input");
    const auto N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const auto P = static_cast<std::int64_t>(points.size());
    if (grad_out.rank() != 3 || grad_out.dim(0) != N || grad_out.dim(1) != C ||
        grad_out.dim(2) != P)
        throw ShapeError("bilinear grad_out " + grad_out.shape_str() + " must be (N,C,P)");
    BilinearGrads g;
    g.input = Tensor::zeros(input.shape(), input.dtype());
    g.points.assign(points.size(), {0.0, 0.0});
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = input.data<T>();
        const T* go = grad_out.data<T>();
        T* gi = g.input.data<T>();
        for (std::int64_t p = 0; p < P; ++p) {
            const auto t = bilinear_taps(points[static_cast<std::size_t>(p)][0],
                                         points[static_cast<std::size_t>(p)][1]);
            const double w00 = (1 - t.dy) * (1 - t.dx), w01 = (1 - t.dy) * t.dx;
            const double w10 = t.dy * (1 - t.dx), w11 = t.dy * t.dx;
            double gy = 0.0, gx = 0.0;
            for (std::int64_t n = 0; n < N; ++n) {
                for (std::int64_t c = 0; c < C; ++c) {
                    T* gmap = gi + (n * C + c) * H * W;
                    const T* map = in + (n * C + c) * H * W;
                    const double gv = go[(n * C + c) * P + p];
                    double v00 = 0, v01 = 0, v10 = 0, v11 = 0;
                    if (t.y0 >= 0 && t.y0 < H) {
                        if (t.x0 >= 0 && t.x0 < W) {
                            v00 = map[t.y0 * W + t.x0];
                            gmap[t.y0 * W + t.x0] += static_cast<T>(gv * w00);
                        }
                        if (t.x0 + 1 >= 0 && t.x0 + 1 < W) {
                            v01 = map[t.y0 * W + t.x0 + 1];
                            gmap[t.y0 * W + t.x0 + 1] += static_cast<T>(gv * w01);
                        }
                    }
                    if (t.y0 + 1 >= 0 && t.y0 + 1 < H) {
                        if (t.x0 >= 0 && t.x0 < W) {
                            v10 = map[(t.y0 + 1) * W + t.x0];
                            gmap[(t.y0 + 1) * W + t.x0] += static_cast<T>(gv * w10);
                        }
                        if (t.x0 + 1 >= 0 && t.x0 + 1 < W) {
                            v11 = map[(t.y0 + 1) * W + t.x0 + 1];
                            gmap[(t.y0 + 1) * W + t.x0 + 1] += static_cast<T>(gv * w11);
                        }
                    }
                    gy += gv * (-(1 - t.dx) * v00 - t.dx * v01 + (1 - t.dx) * v10 + t.dx * v11);
                    gx += gv * (-(1 - t.dy) * v00 + (1 - t.dy) * v01 - t.dy * v10 + t.dy * v11);
                }
            }
            g.points[static_cast<std::size_t>(p)] = {gy, gx};
        }
    });
    return g;
}

namespace {

template <class Fwd>
Tensor elementwise(const Tensor& x, Fwd fwd) {
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* xs = x.data<T>();
        T* os = out.data<T>();
        const std::int64_t n = x.numel();
        for (std::int64_t i = 0; i < n; ++i) os[i] = fwd(xs[i]);
    });
    return out;
}

template <class Grad>
Tensor elementwise_backward(const Tensor& x, const Tensor& gout, Grad grad) {
    if (!x.same_shape(gout))
        throw ShapeError("grad_out " + gout.shape_str() + " does not match input " +
                         x.shape_str());
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* xs = x.data<T>();
        const T* gs = gout.data<T>();
        T* os = out.data<T>();
        const std::int64_t n = x.numel();
        for (std::int64_t i = 0; i < n; ++i) os[i] = gs[i] * grad(xs[i]);
    });
    return out;
}

} // namespace

Tensor silu(const Tensor& x) {
    return elementwise(x, [](auto v) { return scalar::silu(v); });
}
Tensor silu_backward(const Tensor& x, const Tensor& grad_out) {
    return elementwise_backward(x, grad_out, [](auto v) { return scalar::silu_grad(v); });
}
Tensor relu(const Tensor& x) {
    return elementwise(x, [](auto v) { return v > decltype(v)(0) ? v : decltype(v)(0); });
}
Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
    return elementwise_backward(x, grad_out,
                                [](auto v) { return v > decltype(v)(0) ? decltype(v)(1) : decltype(v)(0); });
}
Tensor sigmoid(const Tensor& x) {
    return elementwise(x, [](auto v) { return scalar::sigmoid(v); });
}
Tensor sigmoid_backward(const Tensor& x, const Tensor& grad_out) {
    return elementwise_backward(x, grad_out, [](auto v) {
        const auto s = scalar::sigmoid(v);
        return s * (decltype(v)(1) - s);
    });
}
Tensor hard_sigmoid(const Tensor& x) {
    return elementwise(x, [](auto v) { return scalar::hard_sigmoid(v); });
}
Tensor hard_sigmoid_backward(const Tensor& x, const Tensor& grad_out) {
    return elementwise_backward(x, grad_out, [](auto v) { return scalar::hard_sigmoid_grad(v); });
}

Tensor global_avg_pool(const Tensor& input) {
    require_rank4(input, "global_avg_pool input");
    const auto N = input.dim(0), C = input.dim(1), S = input.dim(2) * input.dim(3);
    if (S < 1) throw ShapeError("global_avg_pool needs H*W >= 1");
    Tensor out = Tensor::zeros({N, C}, input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = input.data<T>();
        T* o = out.data<T>();
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
            double acc = 0.0;
            const T* map = in + nc * S;
            for (std::int64_t i = 0; i < S; ++i) acc += map[i];
            o[nc] = static_cast<T>(acc / static_cast<double>(S));
        }
    });
    return out;
}

Tensor global_avg_pool_backward(const std::vector<std::int64_t>& input_shape,
                                const Tensor& grad_out) {
    if (input_shape.size() != 4) throw ShapeError("global_avg_pool input shape must be rank-4");
    const auto N = input_shape[0], C = input_shape[1], S = input_shape[2] * input_shape[3];
    if (grad_out.rank() != 2 || grad_out.dim(0) != N || grad_out.dim(1) != C)
        throw ShapeError("global_avg_pool grad_out " + grad_out.shape_str() + " must be (N,C)");
    Tensor out = Tensor::zeros(input_shape, grad_out.dtype());
    dispatch(grad_out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* g = grad_out.data<T>();
        T* o = out.data<T>();
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
            const T v = static_cast<T>(g[nc] / static_cast<double>(S));
            T* map = o + nc * S;
            for (std::int64_t i = 0; i < S; ++i) map[i] = v;
        }
    });
    return out;
}

Tensor upsample_nearest(const Tensor& input, int factor) {
    require_rank4(input, "upsample input");
    if (factor < 1) throw ShapeError("upsample factor must be >= 1");
    const auto N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    Tensor out = Tensor::zeros({N, C, H * factor, W * factor}, input.dtype());
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = input.data<T>();
        T* o = out.data<T>();
        const std::int64_t Wo = W * factor;
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
            const T* im = in + nc * H * W;
            T* om = o + nc * H * factor * Wo;
            for (std::int64_t h = 0; h < H * factor; ++h)
                for (std::int64_t w = 0; w < Wo; ++w)
                    om[h * Wo + w] = im[(h / factor) * W + (w / factor)];
        }
    });
    return out;
}

Tensor upsample_nearest_backward(const Tensor& grad_out, int factor) {
    require_rank4(grad_out, "upsample grad_out");
    const auto N = grad_out.dim(0), C = grad_out.dim(1), Ho = grad_out.dim(2),
               Wo = grad_out.dim(3);
    if (Ho % factor || Wo % factor)
        throw ShapeError("upsample grad_out extent not divisible by factor");
    const auto H = Ho / factor, W = Wo / factor;
    Tensor out = Tensor::zeros({N, C, H, W}, grad_out.dtype());
    dispatch(grad_out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* g = grad_out.data<T>();
        T* o = out.data<T>();
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
            const T* gm = g + nc * Ho * Wo;
            T* om = o + nc * H * W;
            for (std::int64_t h = 0; h < Ho; ++h)
                for (std::int64_t w = 0; w < Wo; ++w)
                    om[(h / factor) * W + (w / factor)] += gm[h * Wo + w];
        }
    });
    return out;
}

Tensor avg_pool(const Tensor& input, int factor) {
    require_rank4(input, "avg_pool input");
    const auto N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (factor < 1 || H % factor || W % factor)
        throw ShapeError("avg_pool input extent not divisible by factor");
    const auto Ho = H / factor, Wo = W / factor;
    Tensor out = Tensor::zeros({N, C, Ho, Wo}, input.dtype());
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    dispatch(input.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* in = input.data<T>();
        T* o = out.data<T>();
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
            const T* im = in + nc * H * W;
            T* om = o + nc * Ho * Wo;
            for (std::int64_t ho = 0; ho < Ho; ++ho)
                for (std::int64_t wo = 0; wo < Wo; ++wo) {
                    double acc = 0.0;
                    for (int a = 0; a < factor; ++a)
                        for (int b = 0; b < factor; ++b)
                            acc += im[(ho * factor + a) * W + wo * factor + b];
                    om[ho * Wo + wo] = static_cast<T>(acc * inv);
                }
        }
    });
    return out;
}

Tensor avg_pool_backward(const Tensor& grad_out, int factor) {
    require_rank4(grad_out, "avg_pool grad_out");
    const auto N = grad_out.dim(0), C = grad_out.dim(1), Ho = grad_out.dim(2),
               Wo = grad_out.dim(3);
    Tensor out = Tensor::zeros({N, C, Ho * factor, Wo * factor}, grad_out.dtype());
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    dispatch(grad_out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* g = grad_out.data<T>();
        T* o = out.data<T>();
        const std::int64_t H = Ho * factor, W = Wo * factor;
        for (std::int64_t nc = 0; nc < N * C; ++nc) {
            const T* gm = g + nc * Ho * Wo;
            T* om = o + nc * H * W;
            for (std::int64_t h = 0; h < H; ++h)
                for (std::int64_t w = 0; w < W; ++w)
                    om[h * W + w] = static_cast<T>(gm[(h / factor) * Wo + (w / factor)] * inv);
        }
    });
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_rank4(a, "concat input");
    require_rank4(b, "concat input");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3) ||
        a.dtype() != b.dtype())
        throw ShapeError("concat mismatch: " + a.shape_str() + " vs " + b.shape_str());
    const auto N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    Tensor out = Tensor::zeros({N, Ca + Cb, H, W}, a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        const T* pb = b.data<T>();
        T* o = out.data<T>();
        const std::int64_t S = H * W;
        for (std::int64_t n = 0; n < N; ++n) {
            std::copy(pa + n * Ca * S, pa + (n + 1) * Ca * S, o + n * (Ca + Cb) * S);
            std::copy(pb + n * Cb * S, pb + (n + 1) * Cb * S, o + n * (Ca + Cb) * S + Ca * S);
        }
    });
    return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& grad, std::int64_t c_first) {
    require_rank4(grad, "split input");
    const auto N = grad.dim(0), C = grad.dim(1), H = grad.dim(2), W = grad.dim(3);
    if (c_first < 0 || c_first > C) throw ShapeError("split point out of range");
    Tensor a = Tensor::zeros({N, c_first, H, W}, grad.dtype());
    Tensor b = Tensor::zeros({N, C - c_first, H, W}, grad.dtype());
    dispatch(grad.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* g = grad.data<T>();
        T* pa = a.data<T>();
        T* pb = b.data<T>();
        const std::int64_t S = H * W, Ca = c_first, Cb = C - c_first;
        for (std::int64_t n = 0; n < N; ++n) {
            std::copy(g + n * C * S, g + n * C * S + Ca * S, pa + n * Ca * S);
            std::copy(g + n * C * S + Ca * S, g + (n + 1) * C * S, pb + n * Cb * S);
        }
    });
    return {std::move(a), std::move(b)};
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b) || a.dtype() != b.dtype())
        throw ShapeError("add mismatch: " + a.shape_str() + " vs " + b.shape_str());
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        const T* pb = b.data<T>();
        T* o = out.data<T>();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) o[i] = pa[i] + pb[i];
    });
    return out;
}

void add_inplace(Tensor& dst, const Tensor& src) {
    if (!dst.same_shape(src) || dst.dtype() != src.dtype())
        throw ShapeError("add_inplace mismatch: " + dst.shape_str() + " vs " + src.shape_str());
    dispatch(dst.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* d = dst.data<T>();
        const T* s = src.data<T>();
        const std::int64_t n = dst.numel();
        for (std::int64_t i = 0; i < n; ++i) d[i] += s[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b) || a.dtype() != b.dtype())
        throw ShapeError("mul mismatch: " + a.shape_str() + " vs " + b.shape_str());
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        const T* pb = b.data<T>();
        T* o = out.data<T>();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) o[i] = pa[i] * pb[i];
    });
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    scale_inplace(out, s);
    return out;
}

void scale_inplace(Tensor& dst, double s) {
    dispatch(dst.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* d = dst.data<T>();
        const std::int64_t n = dst.numel();
        for (std::int64_t i = 0; i < n; ++i) d[i] = static_cast<T>(d[i] * s);
    });
}

} // namespace irnet
