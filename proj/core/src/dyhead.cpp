#include "irnet/dyhead.hpp"

#include <cmath>
#include <cstring>

#include "irnet/errors.hpp"
#include "irnet/threading.hpp"

namespace irnet {

namespace {

template <class F> void dispatch(Dtype dt, F&& f) {
    if (dt == Dtype::F32)
        f(float{});
    else
        f(double{});
}

void require_canon(const Tensor& canon, const char* what) {
    if (canon.rank() != 5)
        throw ShapeError(std::string(what) + " expects a canonical (N,L,C,H,W) tensor, got " +
                         canon.shape_str());
}

// identity-bias magnitude for theta's alpha-1 slot: 2*sigmoid(4)-1 ~= 0.964
constexpr double kIdentityBias = 4.0;

} // namespace

LevelSizes level_sizes(const std::vector<Tensor>& levels) {
    LevelSizes sizes;
    sizes.reserve(levels.size());
    for (const Tensor& t : levels) {
        if (t.rank() != 4)
            throw ShapeError("feature level must be (N,C,H,W), got " + t.shape_str());
        sizes.emplace_back(t.dim(2), t.dim(3));
    }
    return sizes;
}

namespace {

// factor between a level grid and the reference grid; positive means the level
// is coarser (upsample into canon), negative means finer (avg-pool into canon)
int level_factor(std::int64_t hl, std::int64_t wl, std::int64_t hr, std::int64_t wr) {
    if (hl == hr && wl == wr) return 1;
    if (hr > hl) {
        if (hr % hl != 0 || wr != wl * (hr / hl))
            throw ShapeError("level grid " + std::to_string(hl) + "x" + std::to_string(wl) +
                             " is not an integer divisor of reference " + std::to_string(hr) +
                             "x" + std::to_string(wr));
        return static_cast<int>(hr / hl);
    }
    if (hl % hr != 0 || wl != wr * (hl / hr))
        throw ShapeError("level grid " + std::to_string(hl) + "x" + std::to_string(wl) +
                         " is not an integer multiple of reference " + std::to_string(hr) + "x" +
                         std::to_string(wr));
    return -static_cast<int>(hl / hr);
}

} // namespace

Tensor slice_level(const Tensor& canon, std::int64_t l) {
    require_canon(canon, "slice_level");
    const auto N = canon.dim(0), L = canon.dim(1), C = canon.dim(2), H = canon.dim(3),
               W = canon.dim(4);
    Tensor out = Tensor::zeros({N, C, H, W}, canon.dtype());
    const std::int64_t chunk = C * H * W;
    dispatch(canon.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = canon.data<T>();
        T* dst = out.data<T>();
        for (std::int64_t n = 0; n < N; ++n)
            std::memcpy(dst + n * chunk, src + (n * L + l) * chunk,
                        static_cast<std::size_t>(chunk) * sizeof(T));
    });
    return out;
}

void scatter_level_add(Tensor& canon_grad, std::int64_t l, const Tensor& grad_slice) {
    require_canon(canon_grad, "scatter_level_add");
    const auto N = canon_grad.dim(0), L = canon_grad.dim(1), C = canon_grad.dim(2),
               H = canon_grad.dim(3), W = canon_grad.dim(4);
    if (grad_slice.rank() != 4 || grad_slice.dim(0) != N || grad_slice.dim(1) != C ||
        grad_slice.dim(2) != H || grad_slice.dim(3) != W)
        throw ShapeError("scatter_level_add slice " + grad_slice.shape_str() +
                         " does not match canon " + canon_grad.shape_str());
    const std::int64_t chunk = C * H * W;
    dispatch(canon_grad.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* dst = canon_grad.data<T>();
        const T* src = grad_slice.data<T>();
        for (std::int64_t n = 0; n < N; ++n) {
            T* d = dst + (n * L + l) * chunk;
            const T* s = src + n * chunk;
            for (std::int64_t i = 0; i < chunk; ++i) d[i] += s[i];
        }
    });
}

Tensor canonicalize(const std::vector<Tensor>& levels) {
    if (levels.empty()) throw ShapeError("canonicalize requires at least one level");
    const LevelSizes sizes = level_sizes(levels);
    const auto L = static_cast<std::int64_t>(levels.size());
    const auto ref = static_cast<std::int64_t>(FeatureLevels::ref_index(levels.size()));
    const auto N = levels[0].dim(0), C = levels[0].dim(1);
    const auto Hr = sizes[static_cast<std::size_t>(ref)].first,
               Wr = sizes[static_cast<std::size_t>(ref)].second;
    Tensor canon = Tensor::zeros({N, L, C, Hr, Wr}, levels[0].dtype());
    const std::int64_t chunk = C * Hr * Wr;
    for (std::int64_t l = 0; l < L; ++l) {
        const Tensor& lvl = levels[static_cast<std::size_t>(l)];
        if (lvl.dim(0) != N || lvl.dim(1) != C || lvl.dtype() != levels[0].dtype())
            throw ShapeError("feature levels must share N, C and dtype; level " +
                             std::to_string(l) + " is " + lvl.shape_str());
        const int f = level_factor(lvl.dim(2), lvl.dim(3), Hr, Wr);
        Tensor r = f == 1 ? lvl : (f > 1 ? upsample_nearest(lvl, f) : avg_pool(lvl, -f));
        dispatch(canon.dtype(), [&](auto tag) {
            using T = decltype(tag);
            T* dst = canon.data<T>();
            const T* src = r.data<T>();
            for (std::int64_t n = 0; n < N; ++n)
                std::memcpy(dst + (n * L + l) * chunk, src + n * chunk,
                            static_cast<std::size_t>(chunk) * sizeof(T));
        });
    }
    return canon;
}

std::vector<Tensor> canonicalize_backward(const Tensor& grad_canon, const LevelSizes& sizes) {
    require_canon(grad_canon, "canonicalize_backward");
    const auto L = grad_canon.dim(1);
    if (static_cast<std::size_t>(L) != sizes.size())
        throw ShapeError("canonicalize_backward: level count mismatch");
    const auto ref = static_cast<std::int64_t>(FeatureLevels::ref_index(sizes.size()));
    const auto Hr = sizes[static_cast<std::size_t>(ref)].first,
               Wr = sizes[static_cast<std::size_t>(ref)].second;
    std::vector<Tensor> grads;
    grads.reserve(sizes.size());
    for (std::int64_t l = 0; l < L; ++l) {
        const auto [hl, wl] = sizes[static_cast<std::size_t>(l)];
        const int f = level_factor(hl, wl, Hr, Wr);
        Tensor slice = slice_level(grad_canon, l);
        grads.push_back(f == 1 ? std::move(slice)
                               : (f > 1 ? upsample_nearest_backward(slice, f)
                                        : avg_pool_backward(slice, -f)));
    }
    return grads;
}

std::vector<Tensor> decanonicalize(const Tensor& canon, const LevelSizes& sizes) {
    require_canon(canon, "decanonicalize");
    const auto L = canon.dim(1);
    if (static_cast<std::size_t>(L) != sizes.size())
        throw ShapeError("decanonicalize: level count mismatch");
    const auto Hr = canon.dim(3), Wr = canon.dim(4);
    std::vector<Tensor> out;
    out.reserve(sizes.size());
    for (std::int64_t l = 0; l < L; ++l) {
        const auto [hl, wl] = sizes[static_cast<std::size_t>(l)];
        const int f = level_factor(hl, wl, Hr, Wr);
        Tensor slice = slice_level(canon, l);
        out.push_back(f == 1 ? std::move(slice)
                             : (f > 1 ? avg_pool(slice, f) : upsample_nearest(slice, -f)));
    }
    return out;
}

Tensor decanonicalize_backward(const std::vector<Tensor>& grad_levels) {
    if (grad_levels.empty()) throw ShapeError("decanonicalize_backward requires levels");
    const LevelSizes sizes = level_sizes(grad_levels);
    const auto L = static_cast<std::int64_t>(grad_levels.size());
    const auto ref = static_cast<std::int64_t>(FeatureLevels::ref_index(grad_levels.size()));
    const auto N = grad_levels[0].dim(0), C = grad_levels[0].dim(1);
    const auto Hr = sizes[static_cast<std::size_t>(ref)].first,
               Wr = sizes[static_cast<std::size_t>(ref)].second;
    Tensor grad_canon = Tensor::zeros({N, L, C, Hr, Wr}, grad_levels[0].dtype());
    for (std::int64_t l = 0; l < L; ++l) {
        const Tensor& g = grad_levels[static_cast<std::size_t>(l)];
        const int f = level_factor(g.dim(2), g.dim(3), Hr, Wr);
        Tensor slice = f == 1 ? g
                              : (f > 1 ? avg_pool_backward(g, f) : upsample_nearest_backward(g, -f));
        scatter_level_add(grad_canon, l, slice);
    }
    return grad_canon;
}

namespace {

Tensor broadcast_levels(const Tensor& agg, std::int64_t L) {
    const auto N = agg.dim(0), C = agg.dim(1), H = agg.dim(2), W = agg.dim(3);
    Tensor out = Tensor::zeros({N, L, C, H, W}, agg.dtype());
    const std::int64_t chunk = C * H * W;
    dispatch(agg.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* dst = out.data<T>();
        const T* src = agg.data<T>();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t l = 0; l < L; ++l)
                std::memcpy(dst + (n * L + l) * chunk, src + n * chunk,
                            static_cast<std::size_t>(chunk) * sizeof(T));
    });
    return out;
}

Tensor reduce_levels(const Tensor& grad_out) {
    const auto N = grad_out.dim(0), L = grad_out.dim(1), C = grad_out.dim(2), H = grad_out.dim(3),
               W = grad_out.dim(4);
    Tensor out = Tensor::zeros({N, C, H, W}, grad_out.dtype());
    const std::int64_t chunk = C * H * W;
    dispatch(grad_out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* dst = out.data<T>();
        const T* src = grad_out.data<T>();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t l = 0; l < L; ++l) {
                T* d = dst + n * chunk;
                const T* s = src + (n * L + l) * chunk;
                for (std::int64_t i = 0; i < chunk; ++i) d[i] += s[i];
            }
    });
    return out;
}

struct Taps {
    std::int64_t y0, x0;
    double dy, dx;
};

inline Taps taps_at(double y, double x) {
    const double fy = std::floor(y), fx = std::floor(x);
    return {static_cast<std::int64_t>(fy), static_cast<std::int64_t>(fx), y - fy, x - fx};
}

void require_spatial_args(const Tensor& canon, const Tensor& offsets, const Tensor& mods,
                          const Tensor& weights) {
    require_canon(canon, "spatial_aggregate");
    const auto N = canon.dim(0), H = canon.dim(3), W = canon.dim(4);
    if (weights.rank() != 1)
        throw ShapeError("spatial weights must be rank 1, got " + weights.shape_str());
    const auto K = weights.dim(0);
    if (K != DyHeadBlock::kPoints)
        throw ShapeError("spatial aggregation uses a 3x3 grid (K=9), got K=" + std::to_string(K));
    if (offsets.rank() != 4 || offsets.dim(0) != N || offsets.dim(1) != 2 * K ||
        offsets.dim(2) != H || offsets.dim(3) != W)
        throw ShapeError("offsets " + offsets.shape_str() + " must be (N,2K,H,W)");
    if (mods.rank() != 4 || mods.dim(0) != N || mods.dim(1) != K || mods.dim(2) != H ||
        mods.dim(3) != W)
        throw ShapeError("mods " + mods.shape_str() + " must be (N,K,H,W)");
}

} // namespace

Tensor spatial_aggregate(const Tensor& canon, const Tensor& offsets, const Tensor& mods,
                         const Tensor& weights) {
    require_spatial_args(canon, offsets, mods, weights);
    const auto N = canon.dim(0), L = canon.dim(1), C = canon.dim(2), H = canon.dim(3),
               W = canon.dim(4);
    const auto K = weights.dim(0);
    const double inv_l = 1.0 / static_cast<double>(L);
    Tensor agg = Tensor::zeros({N, C, H, W}, canon.dtype());
    dispatch(canon.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* cn = canon.data<T>();
        const T* off = offsets.data<T>();
        const T* md = mods.data<T>();
        const T* wk = weights.data<T>();
        T* out = agg.data<T>();
        const std::int64_t hw = H * W;
        parallel_for(N * H, [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t row = lo; row < hi; ++row) {
                const std::int64_t n = row / H, h = row % H;
                for (std::int64_t w = 0; w < W; ++w) {
                    for (std::int64_t k = 0; k < K; ++k) {
                        const double y = static_cast<double>(h) + static_cast<double>(k / 3 - 1) +
                                         off[((n * 2 * K + 2 * k) * H + h) * W + w];
                        const double x = static_cast<double>(w) + static_cast<double>(k % 3 - 1) +
                                         off[((n * 2 * K + 2 * k + 1) * H + h) * W + w];
                        const Taps t = taps_at(y, x);
                        const bool y0_in = t.y0 >= 0 && t.y0 < H;
                        const bool y1_in = t.y0 + 1 >= 0 && t.y0 + 1 < H;
                        const bool x0_in = t.x0 >= 0 && t.x0 < W;
                        const bool x1_in = t.x0 + 1 >= 0 && t.x0 + 1 < W;
                        if (!((y0_in || y1_in) && (x0_in || x1_in))) continue;
                        const double w00 = (1 - t.dy) * (1 - t.dx), w01 = (1 - t.dy) * t.dx;
                        const double w10 = t.dy * (1 - t.dx), w11 = t.dy * t.dx;
                        const double f =
                            wk[k] * md[((n * K + k) * H + h) * W + w] * inv_l;
                        for (std::int64_t l = 0; l < L; ++l) {
                            const T* plane0 = cn + (n * L + l) * C * hw;
                            for (std::int64_t c = 0; c < C; ++c) {
                                const T* plane = plane0 + c * hw;
                                double v = 0.0;
                                if (y0_in) {
                                    if (x0_in) v += w00 * plane[t.y0 * W + t.x0];
                                    if (x1_in) v += w01 * plane[t.y0 * W + t.x0 + 1];
                                }
                                if (y1_in) {
                                    if (x0_in) v += w10 * plane[(t.y0 + 1) * W + t.x0];
                                    if (x1_in) v += w11 * plane[(t.y0 + 1) * W + t.x0 + 1];
                                }
                                out[(n * C + c) * hw + h * W + w] += static_cast<T>(f * v);
                            }
                        }
                    }
                }
            }
        });
    });
    return agg;
}

SpatialGrads spatial_aggregate_backward(const Tensor& canon, const Tensor& offsets,
                                        const Tensor& mods, const Tensor& weights,
                                        const Tensor& grad_agg) {
    require_spatial_args(canon, offsets, mods, weights);
    const auto N = canon.dim(0), L = canon.dim(1), C = canon.dim(2), H = canon.dim(3),
               W = canon.dim(4);
    const auto K = weights.dim(0);
    if (grad_agg.rank() != 4 || grad_agg.dim(0) != N || grad_agg.dim(1) != C ||
        grad_agg.dim(2) != H || grad_agg.dim(3) != W)
        throw ShapeError("grad_agg " + grad_agg.shape_str() + " must be (N,C,H,W)");
    const double inv_l = 1.0 / static_cast<double>(L);
    SpatialGrads g;
    g.canon = Tensor::zeros(canon.shape(), canon.dtype());
    g.offsets = Tensor::zeros(offsets.shape(), offsets.dtype());
    g.mods = Tensor::zeros(mods.shape(), mods.dtype());
    g.weights = Tensor::zeros(weights.shape(), weights.dtype());
    Tensor w_partial = Tensor::zeros({N, K}, Dtype::F64);
    dispatch(canon.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* cn = canon.data<T>();
        const T* off = offsets.data<T>();
        const T* md = mods.data<T>();
        const T* wk = weights.data<T>();
        const T* ga = grad_agg.data<T>();
        T* gc = g.canon.data<T>();
        T* go = g.offsets.data<T>();
        T* gm = g.mods.data<T>();
        double* gwp = w_partial.data<double>();
        const std::int64_t hw = H * W;
        parallel_for(N, [&](std::int64_t nlo, std::int64_t nhi) {
            for (std::int64_t n = nlo; n < nhi; ++n) {
                for (std::int64_t h = 0; h < H; ++h)
                    for (std::int64_t w = 0; w < W; ++w)
                        for (std::int64_t k = 0; k < K; ++k) {
                            const std::int64_t oy = ((n * 2 * K + 2 * k) * H + h) * W + w;
                            const std::int64_t ox = ((n * 2 * K + 2 * k + 1) * H + h) * W + w;
                            const std::int64_t mi = ((n * K + k) * H + h) * W + w;
                            const double y = static_cast<double>(h) +
                                             static_cast<double>(k / 3 - 1) + off[oy];
                            const double x = static_cast<double>(w) +
                                             static_cast<double>(k % 3 - 1) + off[ox];
                            const Taps t = taps_at(y, x);
                            const bool y0_in = t.y0 >= 0 && t.y0 < H;
                            const bool y1_in = t.y0 + 1 >= 0 && t.y0 + 1 < H;
                            const bool x0_in = t.x0 >= 0 && t.x0 < W;
                            const bool x1_in = t.x0 + 1 >= 0 && t.x0 + 1 < W;
                            if (!((y0_in || y1_in) && (x0_in || x1_in))) continue;
                            const double w00 = (1 - t.dy) * (1 - t.dx), w01 = (1 - t.dy) * t.dx;
                            const double w10 = t.dy * (1 - t.dx), w11 = t.dy * t.dx;
                            const double m = md[mi];
                            const double f = wk[k] * m * inv_l;
                            double sum_gv = 0.0, gy = 0.0, gx = 0.0;
                            for (std::int64_t l = 0; l < L; ++l) {
                                const std::int64_t base = (n * L + l) * C * hw;
                                for (std::int64_t c = 0; c < C; ++c) {
                                    const T* plane = cn + base + c * hw;
                                    T* gplane = gc + base + c * hw;
                                    const double gv = ga[(n * C + c) * hw + h * W + w];
                                    double v00 = 0, v01 = 0, v10 = 0, v11 = 0;
                                    if (y0_in) {
                                        if (x0_in) {
                                            v00 = plane[t.y0 * W + t.x0];
                                            gplane[t.y0 * W + t.x0] += static_cast<T>(gv * f * w00);
                                        }
                                        if (x1_in) {
                                            v01 = plane[t.y0 * W + t.x0 + 1];
                                            gplane[t.y0 * W + t.x0 + 1] +=
                                                static_cast<T>(gv * f * w01);
                                        }
                                    }
                                    if (y1_in) {
                                        if (x0_in) {
                                            v10 = plane[(t.y0 + 1) * W + t.x0];
                                            gplane[(t.y0 + 1) * W + t.x0] +=
                                                static_cast<T>(gv * f * w10);
                                        }
                                        if (x1_in) {
                                            v11 = plane[(t.y0 + 1) * W + t.x0 + 1];
                                            gplane[(t.y0 + 1) * W + t.x0 + 1] +=
                                                static_cast<T>(gv * f * w11);
                                        }
                                    }
                                    const double v = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11;
                                    sum_gv += gv * v;
                                    gy += gv * (-(1 - t.dx) * v00 - t.dx * v01 +
                                                (1 - t.dx) * v10 + t.dx * v11);
                                    gx += gv * (-(1 - t.dy) * v00 + (1 - t.dy) * v01 -
                                                t.dy * v10 + t.dy * v11);
                                }
                            }
                            go[oy] += static_cast<T>(gy * f);
                            go[ox] += static_cast<T>(gx * f);
                            gm[mi] += static_cast<T>(sum_gv * wk[k] * inv_l);
                            gwp[n * K + k] += sum_gv * m * inv_l;
                        }
            }
        });
        T* gw = g.weights.data<T>();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t k = 0; k < K; ++k) gw[k] += static_cast<T>(gwp[n * K + k]);
    });
    return g;
}

Tensor task_apply(const Tensor& canon, const Tensor& coeffs) {
    require_canon(canon, "task_apply");
    const auto N = canon.dim(0), L = canon.dim(1), C = canon.dim(2), H = canon.dim(3),
               W = canon.dim(4);
    if (coeffs.rank() != 3 || coeffs.dim(0) != N || coeffs.dim(1) != C || coeffs.dim(2) != 4)
        throw ShapeError("task coefficients " + coeffs.shape_str() + " must be (N,C,4)");
    Tensor out = Tensor::zeros(canon.shape(), canon.dtype());
    dispatch(canon.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* cn = canon.data<T>();
        const T* cf = coeffs.data<T>();
        T* o = out.data<T>();
        const std::int64_t hw = H * W;
        parallel_for(N * L, [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t nl = lo; nl < hi; ++nl) {
                const std::int64_t n = nl / L;
                for (std::int64_t c = 0; c < C; ++c) {
                    const double a1 = cf[(n * C + c) * 4 + 0], a2 = cf[(n * C + c) * 4 + 1];
                    const double b1 = cf[(n * C + c) * 4 + 2], b2 = cf[(n * C + c) * 4 + 3];
                    const T* src = cn + (nl * C + c) * hw;
                    T* dst = o + (nl * C + c) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) {
                        const double v = src[i];
                        dst[i] = static_cast<T>(std::max(a1 * v + b1, a2 * v + b2));
                    }
                }
            }
        });
    });
    return out;
}

TaskGrads task_apply_backward(const Tensor& canon, const Tensor& coeffs, const Tensor& grad_out) {
    require_canon(canon, "task_apply_backward");
    if (!grad_out.same_shape(canon))
        throw ShapeError("task grad_out " + grad_out.shape_str() + " does not match input " +
                         canon.shape_str());
    const auto N = canon.dim(0), L = canon.dim(1), C = canon.dim(2), H = canon.dim(3),
               W = canon.dim(4);
    if (coeffs.rank() != 3 || coeffs.dim(0) != N || coeffs.dim(1) != C || coeffs.dim(2) != 4)
        throw ShapeError("task coefficients " + coeffs.shape_str() + " must be (N,C,4)");
    TaskGrads g;
    g.canon = Tensor::zeros(canon.shape(), canon.dtype());
    g.coeffs = Tensor::zeros(coeffs.shape(), coeffs.dtype());
    dispatch(canon.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* cn = canon.data<T>();
        const T* cf = coeffs.data<T>();
        const T* go = grad_out.data<T>();
        T* gc = g.canon.data<T>();
        T* gf = g.coeffs.data<T>();
        const std::int64_t hw = H * W;
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t c = 0; c < C; ++c) {
                const double a1 = cf[(n * C + c) * 4 + 0], a2 = cf[(n * C + c) * 4 + 1];
                const double b1 = cf[(n * C + c) * 4 + 2], b2 = cf[(n * C + c) * 4 + 3];
                double ga1 = 0, ga2 = 0, gb1 = 0, gb2 = 0;
                for (std::int64_t l = 0; l < L; ++l) {
                    const std::int64_t base = ((n * L + l) * C + c) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) {
                        const double v = cn[base + i];
                        const double gv = go[base + i];
                        if (a1 * v + b1 >= a2 * v + b2) {
                            gc[base + i] += static_cast<T>(gv * a1);
                            ga1 += gv * v;
                            gb1 += gv;
                        } else {
                            gc[base + i] += static_cast<T>(gv * a2);
                            ga2 += gv * v;
                            gb2 += gv;
                        }
                    }
                }
                gf[(n * C + c) * 4 + 0] = static_cast<T>(ga1);
                gf[(n * C + c) * 4 + 1] = static_cast<T>(ga2);
                gf[(n * C + c) * 4 + 2] = static_cast<T>(gb1);
                gf[(n * C + c) * 4 + 3] = static_cast<T>(gb2);
            }
    });
    return g;
}

DyHeadBlock::DyHeadBlock(std::int64_t channels, Dtype dt, Rng& rng) : channels_(channels) {
    scale_fc = ConvLayer(channels, 1, 1, 1, 0, 1, /*act=*/false, dt, rng);
    offset_conv = ConvLayer(channels, 3 * kPoints, 3, 1, 1, 1, /*act=*/false, dt, rng);
    // zero init: the block starts as a plain (modulated 0.5) grid aggregation
    offset_conv.params.weight.fill(0.0);
    offset_conv.params.bias.fill(0.0);
    spatial_weights = Tensor::full({kPoints}, 1.0 / kPoints, dt);
    const std::int64_t mid = std::max<std::int64_t>(1, channels / kReduction);
    theta_fc1 = Linear(channels, mid, dt, rng);
    theta_fc2 = Linear(mid, 4 * channels, dt, rng);
    theta_fc2.weight.fill(0.0);
    theta_fc2.bias.fill(0.0);
    // bias alpha-1 toward 1 so the task attention starts as ~ReLU
    for (std::int64_t c = 0; c < channels; ++c) theta_fc2.bias.set(4 * c, kIdentityBias);
}

namespace {

// per-(n,l) broadcast multiply: out[n,l,...] = canon[n,l,...] * g[n*L+l]
Tensor mul_per_level(const Tensor& canon, const Tensor& gate_flat) {
    const auto N = canon.dim(0), L = canon.dim(1);
    const std::int64_t chunk = canon.numel() / (N * L);
    Tensor out = Tensor::zeros(canon.shape(), canon.dtype());
    dispatch(canon.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = canon.data<T>();
        T* dst = out.data<T>();
        for (std::int64_t nl = 0; nl < N * L; ++nl) {
            const double gv = gate_flat.at(nl);
            const T* s = src + nl * chunk;
            T* d = dst + nl * chunk;
            for (std::int64_t i = 0; i < chunk; ++i) d[i] = static_cast<T>(s[i] * gv);
        }
    });
    return out;
}

// per-(n,l) dot products: r[n*L+l] = sum(a[n,l,...] * b[n,l,...])
Tensor dot_per_level(const Tensor& a, const Tensor& b) {
    const auto N = a.dim(0), L = a.dim(1);
    const std::int64_t chunk = a.numel() / (N * L);
    Tensor r = Tensor::zeros({N * L, 1, 1, 1}, a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        const T* pb = b.data<T>();
        for (std::int64_t nl = 0; nl < N * L; ++nl) {
            double acc = 0.0;
            const T* s = pa + nl * chunk;
            const T* t = pb + nl * chunk;
            for (std::int64_t i = 0; i < chunk; ++i) acc += static_cast<double>(s[i]) * t[i];
            r.set(nl, acc);
        }
    });
    return r;
}

// mean over level and space per channel: (N,L,C,H,W) -> (N,C)
Tensor pool_task(const Tensor& canon) {
    const auto N = canon.dim(0), L = canon.dim(1), C = canon.dim(2), H = canon.dim(3),
               W = canon.dim(4);
    const double inv = 1.0 / static_cast<double>(L * H * W);
    Tensor out = Tensor::zeros({N, C}, canon.dtype());
    dispatch(canon.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = canon.data<T>();
        T* dst = out.data<T>();
        const std::int64_t hw = H * W;
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t l = 0; l < L; ++l)
                for (std::int64_t c = 0; c < C; ++c) {
                    const T* s = src + ((n * L + l) * C + c) * hw;
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < hw; ++i) acc += s[i];
                    dst[n * C + c] += static_cast<T>(acc * inv);
                }
    });
    return out;
}

// adds g[n,c] * scale to every (l,h,w) slot of dst
void spread_task_grad(Tensor& dst, const Tensor& g, double s) {
    const auto N = dst.dim(0), L = dst.dim(1), C = dst.dim(2), H = dst.dim(3), W = dst.dim(4);
    dispatch(dst.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* d = dst.data<T>();
        const T* gs = g.data<T>();
        const std::int64_t hw = H * W;
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t l = 0; l < L; ++l)
                for (std::int64_t c = 0; c < C; ++c) {
                    const double add = static_cast<double>(gs[n * C + c]) * s;
                    T* p = d + ((n * L + l) * C + c) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) p[i] += static_cast<T>(add);
                }
    });
}

// adds g[n*L+l][c] / (H*W) to every spatial slot (mean backward)
void spread_scale_grad(Tensor& dst, const Tensor& gpooled) {
    const auto N = dst.dim(0), L = dst.dim(1), C = dst.dim(2), H = dst.dim(3), W = dst.dim(4);
    const double inv = 1.0 / static_cast<double>(H * W);
    dispatch(dst.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* d = dst.data<T>();
        const std::int64_t hw = H * W;
        for (std::int64_t nl = 0; nl < N * L; ++nl)
            for (std::int64_t c = 0; c < C; ++c) {
                const double add = gpooled.at(nl * C + c) * inv;
                T* p = d + (nl * C + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) p[i] += static_cast<T>(add);
            }
    });
}

} // namespace

Tensor DyHeadBlock::scale_stage(const Tensor& canon, bool train) {
    require_canon(canon, "scale_stage");
    const auto N = canon.dim(0), L = canon.dim(1), C = canon.dim(2), H = canon.dim(3),
               W = canon.dim(4);
    if (C != channels_)
        throw ShapeError("scale_stage channels " + std::to_string(C) + " != block channels " +
                         std::to_string(channels_));
    Tensor pooled = global_avg_pool(canon.reshaped({N * L, C, H, W}));
    Tensor z = scale_fc.forward(pooled.reshaped({N * L, C, 1, 1}), train);
    Tensor gate = hard_sigmoid(z);
    Tensor out = mul_per_level(canon, gate);
    if (train) {
        scale_in_ = canon;
        scale_z_ = z;
        scale_gate_ = std::move(gate);
    }
    return out;
}

Tensor DyHeadBlock::scale_stage(const Tensor& canon) const {
    require_canon(canon, "scale_stage");
    const auto N = canon.dim(0), L = canon.dim(1), C = canon.dim(2), H = canon.dim(3),
               W = canon.dim(4);
    Tensor pooled = global_avg_pool(canon.reshaped({N * L, C, H, W}));
    Tensor gate = hard_sigmoid(scale_fc.forward(pooled.reshaped({N * L, C, 1, 1})));
    return mul_per_level(canon, gate);
}

Tensor DyHeadBlock::scale_gates(const Tensor& canon) const {
    require_canon(canon, "scale_gates");
    const auto N = canon.dim(0), L = canon.dim(1), C = canon.dim(2), H = canon.dim(3),
               W = canon.dim(4);
    Tensor pooled = global_avg_pool(canon.reshaped({N * L, C, H, W}));
    Tensor gate = hard_sigmoid(scale_fc.forward(pooled.reshaped({N * L, C, 1, 1})));
    return gate.reshaped({N, L});
}

Tensor DyHeadBlock::scale_stage_backward(const Tensor& grad_out) {
    Tensor ggate = dot_per_level(grad_out, scale_in_);
    Tensor gcanon = mul_per_level(grad_out, scale_gate_);
    Tensor gz = hard_sigmoid_backward(scale_z_, ggate);
    Tensor gpooled = scale_fc.backward(gz); // (N*L, C, 1, 1)
    spread_scale_grad(gcanon, gpooled);
    return gcanon;
}

Tensor DyHeadBlock::spatial_stage(const Tensor& canon, bool train) {
    require_canon(canon, "spatial_stage");
    const auto L = canon.dim(1);
    const auto ref = static_cast<std::int64_t>(
        FeatureLevels::ref_index(static_cast<std::size_t>(L)));
    Tensor med = slice_level(canon, ref);
    Tensor raw = offset_conv.forward(med, train);
    auto [offsets, modlogits] = split_channels(raw, 2 * kPoints);
    Tensor mods = sigmoid(modlogits);
    Tensor agg = spatial_aggregate(canon, offsets, mods, spatial_weights);
    if (train) {
        spatial_in_ = canon;
        spatial_offsets_ = std::move(offsets);
        spatial_modlogits_ = std::move(modlogits);
        spatial_mods_ = mods;
        return broadcast_levels(agg, L);
    }
    return broadcast_levels(agg, L);
}

Tensor DyHeadBlock::spatial_stage(const Tensor& canon) const {
    require_canon(canon, "spatial_stage");
    const auto L = canon.dim(1);
    const auto ref = static_cast<std::int64_t>(
        FeatureLevels::ref_index(static_cast<std::size_t>(L)));
    Tensor raw = offset_conv.forward(slice_level(canon, ref));
    auto [offsets, modlogits] = split_channels(raw, 2 * kPoints);
    Tensor agg = spatial_aggregate(canon, offsets, sigmoid(modlogits), spatial_weights);
    return broadcast_levels(agg, L);
}

Tensor DyHeadBlock::spatial_stage_backward(const Tensor& grad_out) {
    const auto L = spatial_in_.dim(1);
    const auto ref = static_cast<std::int64_t>(
        FeatureLevels::ref_index(static_cast<std::size_t>(L)));
    Tensor gagg = reduce_levels(grad_out);
    SpatialGrads sg = spatial_aggregate_backward(spatial_in_, spatial_offsets_, spatial_mods_,
                                                 spatial_weights, gagg);
    add_inplace(spatial_weights.grad(), sg.weights);
    Tensor gmodlogits = sigmoid_backward(spatial_modlogits_, sg.mods);
    Tensor graw = concat_channels(sg.offsets, gmodlogits);
    Tensor gmed = offset_conv.backward(graw);
    scatter_level_add(sg.canon, ref, gmed);
    return std::move(sg.canon);
}

Tensor DyHeadBlock::theta_forward(const Tensor& canon, bool train) {
    const auto N = canon.dim(0), C = canon.dim(2);
    Tensor pooled = pool_task(canon);
    Tensor fc1_pre = theta_fc1.forward(pooled, train);
    Tensor raw = theta_fc2.forward(relu(fc1_pre), train);
    Tensor coeffs = sigmoid(raw);
    scale_inplace(coeffs, 2.0);
    Tensor minus_one = Tensor::full(coeffs.shape(), -1.0, coeffs.dtype());
    add_inplace(coeffs, minus_one);
    if (train) {
        task_fc1_pre_ = std::move(fc1_pre);
        task_raw_ = std::move(raw);
    }
    return coeffs.reshaped({N, C, 4});
}

Tensor DyHeadBlock::theta_forward(const Tensor& canon) const {
    const auto N = canon.dim(0), C = canon.dim(2);
    Tensor pooled = pool_task(canon);
    Tensor raw = theta_fc2.forward(relu(theta_fc1.forward(pooled)));
    Tensor coeffs = sigmoid(raw);
    scale_inplace(coeffs, 2.0);
    Tensor minus_one = Tensor::full(coeffs.shape(), -1.0, coeffs.dtype());
    add_inplace(coeffs, minus_one);
    return coeffs.reshaped({N, C, 4});
}

Tensor DyHeadBlock::task_coefficients(const Tensor& canon) const {
    require_canon(canon, "task_coefficients");
    return theta_forward(canon);
}

Tensor DyHeadBlock::task_stage(const Tensor& canon, bool train) {
    require_canon(canon, "task_stage");
    Tensor coeffs = theta_forward(canon, train);
    Tensor out = task_apply(canon, coeffs);
    if (train) {
        task_in_ = canon;
        task_coeffs_ = std::move(coeffs);
    }
    return out;
}

Tensor DyHeadBlock::task_stage(const Tensor& canon) const {
    require_canon(canon, "task_stage");
    return task_apply(canon, theta_forward(canon));
}

Tensor DyHeadBlock::task_stage_backward(const Tensor& grad_out) {
    const auto N = task_in_.dim(0), L = task_in_.dim(1), C = task_in_.dim(2), H = task_in_.dim(3),
               W = task_in_.dim(4);
    TaskGrads tg = task_apply_backward(task_in_, task_coeffs_, grad_out);
    Tensor graw = sigmoid_backward(task_raw_, tg.coeffs.reshaped({N, 4 * C}));
    scale_inplace(graw, 2.0);
    Tensor gh = theta_fc2.backward(graw);
    Tensor gpool = theta_fc1.backward(relu_backward(task_fc1_pre_, gh));
    spread_task_grad(tg.canon, gpool, 1.0 / static_cast<double>(L * H * W));
    return std::move(tg.canon);
}

std::vector<Tensor> DyHeadBlock::forward_levels(const std::vector<Tensor>& levels, bool train) {
    sizes_ = level_sizes(levels);
    std::vector<Tensor> cur = levels;
    for (int stage = 0; stage < 3; ++stage) {
        Tensor canon = canonicalize(cur);
        Tensor attended = stage == 0   ? scale_stage(canon, train)
                          : stage == 1 ? spatial_stage(canon, train)
                                       : task_stage(canon, train);
        cur = decanonicalize(attended, sizes_);
    }
    return cur;
}

std::vector<Tensor> DyHeadBlock::forward_levels(const std::vector<Tensor>& levels) const {
    const LevelSizes sizes = level_sizes(levels);
    std::vector<Tensor> cur = levels;
    for (int stage = 0; stage < 3; ++stage) {
        Tensor canon = canonicalize(cur);
        Tensor attended = stage == 0   ? scale_stage(canon)
                          : stage == 1 ? spatial_stage(canon)
                                       : task_stage(canon);
        cur = decanonicalize(attended, sizes);
    }
    return cur;
}

std::vector<Tensor> DyHeadBlock::backward_levels(const std::vector<Tensor>& grad_levels) {
    std::vector<Tensor> g = grad_levels;
    for (int stage = 2; stage >= 0; --stage) {
        Tensor gcanon = decanonicalize_backward(g);
        Tensor gin = stage == 0   ? scale_stage_backward(gcanon)
                     : stage == 1 ? spatial_stage_backward(gcanon)
                                  : task_stage_backward(gcanon);
        g = canonicalize_backward(gin, sizes_);
    }
    return g;
}

void DyHeadBlock::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    scale_fc.collect(prefix + ".scale_fc", out);
    offset_conv.collect(prefix + ".offset_conv", out);
    out.push_back({prefix + ".spatial_weights", &spatial_weights});
    theta_fc1.collect(prefix + ".theta_fc1", out);
    theta_fc2.collect(prefix + ".theta_fc2", out);
}

namespace {

template <class StageFn>
FeatureLevels apply_stage(const FeatureLevels& f, StageFn&& stage) {
    const LevelSizes sizes = level_sizes(f.levels);
    Tensor attended = stage(canonicalize(f.levels));
    return FeatureLevels{decanonicalize(attended, sizes)};
}

} // namespace

FeatureLevels scale_attention(const FeatureLevels& f, const DyHeadBlock& block) {
    return apply_stage(f, [&](const Tensor& c) { return block.scale_stage(c); });
}

FeatureLevels spatial_attention(const FeatureLevels& f, const DyHeadBlock& block) {
    return apply_stage(f, [&](const Tensor& c) { return block.spatial_stage(c); });
}

FeatureLevels task_attention(const FeatureLevels& f, const DyHeadBlock& block) {
    return apply_stage(f, [&](const Tensor& c) { return block.task_stage(c); });
}

FeatureLevels dyhead_block(const FeatureLevels& f, const DyHeadBlock& block) {
    return task_attention(spatial_attention(scale_attention(f, block), block), block);
}

FeatureLevels dyhead_stack(const FeatureLevels& f, const std::vector<DyHeadBlock>& blocks) {
    if (blocks.empty()) throw ShapeError("dyhead_stack requires at least one block");
    FeatureLevels cur = f;
    for (const DyHeadBlock& b : blocks) cur = dyhead_block(cur, b);
    return cur;
}

} // namespace irnet
