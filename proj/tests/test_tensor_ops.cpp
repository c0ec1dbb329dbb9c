#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "irnet/errors.hpp"
#include "irnet/gradcheck.hpp"
#include "irnet/gradcheck_suite.hpp"
#include "irnet/ops.hpp"
#include "irnet/rng.hpp"
#include "irnet/tensor.hpp"

using namespace irnet;

namespace {

// Independent six-loop cross-correlation oracle with explicit bounds checks.
Tensor conv_oracle(const Tensor& input, const ConvParams& p) {
    const std::int64_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2),
                       W = input.dim(3);
    const std::int64_t Cout = p.weight.dim(0), Kh = p.weight.dim(2), Kw = p.weight.dim(3);
    const std::int64_t Ho =
        (H + 2 * p.padding - p.dilation * (Kh - 1) - 1) / p.stride + 1;
    const std::int64_t Wo =
        (W + 2 * p.padding - p.dilation * (Kw - 1) - 1) / p.stride + 1;
    Tensor out = Tensor::zeros({N, Cout, Ho, Wo}, Dtype::F64);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t co = 0; co < Cout; ++co)
            for (std::int64_t oy = 0; oy < Ho; ++oy)
                for (std::int64_t ox = 0; ox < Wo; ++ox) {
                    double acc = p.bias.at(co);
                    for (std::int64_t ci = 0; ci < Cin; ++ci)
                        for (std::int64_t ky = 0; ky < Kh; ++ky)
                            for (std::int64_t kx = 0; kx < Kw; ++kx) {
                                const std::int64_t iy =
                                    oy * p.stride - p.padding + ky * p.dilation;
                                const std::int64_t ix =
                                    ox * p.stride - p.padding + kx * p.dilation;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += input.at(((n * Cin + ci) * H + iy) * W + ix) *
                                       p.weight.at(((co * Cin + ci) * Kh + ky) * Kw + kx);
                            }
                    out.set(((n * Cout + co) * Ho + oy) * Wo + ox, acc);
                }
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double m = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(a.at(i) - b.at(i)));
    return m;
}

ConvParams random_conv(Rng& rng, std::int64_t cin, std::int64_t cout, int k, int stride,
                       int padding, int dilation) {
    ConvParams p;
    p.weight = Tensor::rand_uniform({cout, cin, k, k}, rng, -1.0, 1.0, Dtype::F64);
    p.bias = Tensor::rand_uniform({cout}, rng, -1.0, 1.0, Dtype::F64);
    p.stride = stride;
    p.padding = padding;
    p.dilation = dilation;
    return p;
}

} // namespace

TEST_CASE("tensor basics: factories, dtype, reshape, finiteness") {
    Tensor z = Tensor::zeros({2, 3}, Dtype::F32);
    CHECK(z.numel() == 6);
    CHECK(z.dtype() == Dtype::F32);
    CHECK(z.at(5) == 0.0);

    Tensor f = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(f.at(3) == 4.0);
    CHECK(f.all_finite());

    Tensor r = f.reshaped({4});
    CHECK(r.dim(0) == 4);
    CHECK(r.at(2) == 3.0);
    CHECK_THROWS_AS(f.reshaped({3}), ShapeError);

    Tensor g = f.to(Dtype::F32).to(Dtype::F64);
    CHECK(g.at(1) == doctest::Approx(2.0));

    f.set(0, std::nan(""));
    CHECK_FALSE(f.all_finite());
}

TEST_CASE("conv2d: all-ones 3x3, padding 1 gives center 9 and corners 4") {
    Tensor input = Tensor::full({1, 1, 3, 3}, 1.0, Dtype::F64);
    ConvParams p;
    p.weight = Tensor::full({1, 1, 3, 3}, 1.0, Dtype::F64);
    p.bias = Tensor::zeros({1}, Dtype::F64);
    p.padding = 1;
    Tensor out = conv2d_forward(input, p);
    REQUIRE(out.dim(2) == 3);
    REQUIRE(out.dim(3) == 3);
    CHECK(out.at(4) == doctest::Approx(9.0)); // center
    CHECK(out.at(0) == doctest::Approx(4.0)); // corners
    CHECK(out.at(2) == doctest::Approx(4.0));
    CHECK(out.at(6) == doctest::Approx(4.0));
    CHECK(out.at(8) == doctest::Approx(4.0));
}

TEST_CASE("conv2d: 1x1 identity kernel passes input through") {
    Rng rng(11);
    Tensor input = Tensor::rand_uniform({2, 1, 4, 5}, rng, -2.0, 2.0, Dtype::F64);
    ConvParams p;
    p.weight = Tensor::full({1, 1, 1, 1}, 1.0, Dtype::F64);
    p.bias = Tensor::zeros({1}, Dtype::F64);
    Tensor out = conv2d_forward(input, p);
    CHECK(max_abs_diff(out, input) == 0.0);
}

TEST_CASE("conv2d: spec dilation-3 example matches the brute-force oracle") {
    Rng rng(12);
    Tensor input = Tensor::rand_uniform({1, 2, 8, 8}, rng, -1.0, 1.0, Dtype::F64);
    ConvParams p = random_conv(rng, 2, 3, 3, 1, 3, 3);
    CHECK(max_abs_diff(conv2d_forward(input, p), conv_oracle(input, p)) < 1e-12);
}

TEST_CASE("conv2d: 100 randomized instances match the oracle to 1e-10") {
    Rng rng(13);
    for (int inst = 0; inst < 100; ++inst) {
        const std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform_int(2));
        const std::int64_t cin = 1 + static_cast<std::int64_t>(rng.uniform_int(3));
        const std::int64_t cout = 1 + static_cast<std::int64_t>(rng.uniform_int(3));
        const int k = rng.uniform() < 0.4 ? 1 : 3;
        const int stride = 1 + static_cast<int>(rng.uniform_int(2));
        const int dilation = k == 1 ? 1 : 1 + static_cast<int>(rng.uniform_int(3));
        const std::int64_t hw =
            dilation * (k - 1) + 1 + static_cast<std::int64_t>(rng.uniform_int(6));
        const int padding = static_cast<int>(rng.uniform_int(
            static_cast<std::uint64_t>(dilation * (k - 1) + 1)));
        Tensor input = Tensor::rand_uniform({n, cin, hw, hw}, rng, -1.0, 1.0, Dtype::F64);
        ConvParams p = random_conv(rng, cin, cout, k, stride, padding, dilation);
        CAPTURE(inst);
        CHECK(max_abs_diff(conv2d_forward(input, p), conv_oracle(input, p)) < 1e-10);
    }
}

TEST_CASE("conv2d: linearity in the input with zero bias") {
    Rng rng(14);
    Tensor x = Tensor::rand_uniform({1, 2, 6, 6}, rng, -1.0, 1.0, Dtype::F64);
    Tensor y = Tensor::rand_uniform({1, 2, 6, 6}, rng, -1.0, 1.0, Dtype::F64);
    ConvParams p = random_conv(rng, 2, 2, 3, 1, 1, 1);
    p.bias.fill(0.0);
    const double a = 1.7, b = -0.4;
    Tensor mix = add(scale(x, a), scale(y, b));
    Tensor lhs = conv2d_forward(mix, p);
    Tensor rhs = add(scale(conv2d_forward(x, p), a), scale(conv2d_forward(y, p), b));
    CHECK(max_abs_diff(lhs, rhs) < 1e-10);
}

TEST_CASE("conv2d: impulse response support width is d*(k-1)+1") {
    // k=3, d=5 -> width 11
    Tensor input = Tensor::zeros({1, 1, 31, 31}, Dtype::F64);
    input.set((15 * 31) + 15, 1.0);
    ConvParams p;
    p.weight = Tensor::full({1, 1, 3, 3}, 1.0, Dtype::F64);
    p.bias = Tensor::zeros({1}, Dtype::F64);
    p.padding = 5;
    p.dilation = 5;
    Tensor out = conv2d_forward(input, p);
    std::int64_t lo = 31, hi = -1;
    for (std::int64_t y = 0; y < out.dim(2); ++y)
        for (std::int64_t x = 0; x < out.dim(3); ++x)
            if (out.at(y * out.dim(3) + x) != 0.0) {
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
    CHECK(hi - lo + 1 == 11);
}

TEST_CASE("conv2d: shape mismatch diagnostics name both shapes") {
    Tensor input = Tensor::zeros({1, 2, 4, 4}, Dtype::F64);
    ConvParams p;
    p.weight = Tensor::zeros({1, 3, 3, 3}, Dtype::F64);
    p.bias = Tensor::zeros({1}, Dtype::F64);
    CHECK_THROWS_AS(conv2d_forward(input, p), ShapeError);
    try {
        conv2d_forward(input, p);
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2") != std::string::npos);
        CHECK(msg.find("3") != std::string::npos);
    }
}

TEST_CASE("conv2d_backward: zero grad_out yields zero gradients; 1x1 identity passes grads") {
    Rng rng(15);
    Tensor input = Tensor::rand_uniform({1, 2, 5, 5}, rng, -1.0, 1.0, Dtype::F64);
    ConvParams p = random_conv(rng, 2, 2, 3, 1, 1, 1);
    Tensor gout = Tensor::zeros({1, 2, 5, 5}, Dtype::F64);
    ConvGrads g = conv2d_backward(input, p, gout);
    CHECK(max_abs_diff(g.input, Tensor::zeros(input.shape(), Dtype::F64)) == 0.0);
    CHECK(max_abs_diff(g.weight, Tensor::zeros(p.weight.shape(), Dtype::F64)) == 0.0);
    CHECK(max_abs_diff(g.bias, Tensor::zeros({2}, Dtype::F64)) == 0.0);

    ConvParams id;
    id.weight = Tensor::full({1, 1, 1, 1}, 1.0, Dtype::F64);
    id.bias = Tensor::zeros({1}, Dtype::F64);
    Tensor gi = Tensor::rand_uniform({1, 1, 4, 4}, rng, -1.0, 1.0, Dtype::F64);
    Tensor x = Tensor::rand_uniform({1, 1, 4, 4}, rng, -1.0, 1.0, Dtype::F64);
    ConvGrads g2 = conv2d_backward(x, id, gi);
    CHECK(max_abs_diff(g2.input, gi) == 0.0);
}

TEST_CASE("conv2d_backward: grad_bias sums grad_out over batch and space") {
    Rng rng(16);
    Tensor input = Tensor::rand_uniform({2, 1, 4, 4}, rng, -1.0, 1.0, Dtype::F64);
    ConvParams p = random_conv(rng, 1, 3, 3, 1, 1, 1);
    Tensor gout = Tensor::rand_uniform({2, 3, 4, 4}, rng, -1.0, 1.0, Dtype::F64);
    ConvGrads g = conv2d_backward(input, p, gout);
    for (std::int64_t c = 0; c < 3; ++c) {
        double want = 0;
        for (std::int64_t n = 0; n < 2; ++n)
            for (std::int64_t i = 0; i < 16; ++i) want += gout.at((n * 3 + c) * 16 + i);
        CHECK(g.bias.at(c) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("bilinear_sample: integer grid points return stored values; center average") {
    Tensor patch = Tensor::from({1, 1, 2, 2}, {0, 1, 2, 3});
    Tensor center = bilinear_sample(patch, {{0.5, 0.5}});
    CHECK(center.at(0) == doctest::Approx(1.5));
    Tensor grid = bilinear_sample(patch, {{0.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}, {1.0, 1.0}});
    CHECK(grid.at(0) == doctest::Approx(0.0));
    CHECK(grid.at(1) == doctest::Approx(1.0));
    CHECK(grid.at(2) == doctest::Approx(2.0));
    CHECK(grid.at(3) == doctest::Approx(3.0));
}

TEST_CASE("bilinear_sample: out-of-bounds reads are zero; convex combination bound") {
    Rng rng(17);
    Tensor input = Tensor::rand_uniform({1, 1, 4, 4}, rng, 0.0, 1.0, Dtype::F64);
    Tensor oob = bilinear_sample(input, {{-5.0, -5.0}, {100.0, 2.0}});
    CHECK(oob.at(0) == 0.0);
    CHECK(oob.at(1) == 0.0);
    for (int i = 0; i < 50; ++i) {
        Tensor v = bilinear_sample(input, {{rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0)}});
        CHECK(v.at(0) >= 0.0);
        CHECK(v.at(0) <= 1.0);
    }
}

TEST_CASE("activations: stated values and hard-sigmoid range/monotonicity") {
    Tensor x = Tensor::from({5}, {-3.0, -1.0, 0.0, 1.0, 3.0});
    Tensor hs = hard_sigmoid(x);
    CHECK(hs.at(0) == 0.0);
    CHECK(hs.at(1) == 0.0);
    CHECK(hs.at(2) == 0.5);
    CHECK(hs.at(3) == 1.0);
    CHECK(hs.at(4) == 1.0);

    Tensor r = relu(x);
    CHECK(r.at(0) == 0.0);
    CHECK(r.at(4) == 3.0);

    Tensor s = sigmoid(Tensor::from({1}, {0.0}));
    CHECK(s.at(0) == doctest::Approx(0.5));
    Tensor sl = silu(Tensor::from({1}, {0.0}));
    CHECK(sl.at(0) == 0.0);

    Rng rng(18);
    Tensor big = Tensor::rand_uniform({1000}, rng, -10.0, 10.0, Dtype::F64);
    Tensor hb = hard_sigmoid(big);
    double prev = -1;
    std::vector<double> vals;
    for (std::int64_t i = 0; i < hb.numel(); ++i) {
        CHECK(hb.at(i) >= 0.0);
        CHECK(hb.at(i) <= 1.0);
        vals.push_back(big.at(i));
    }
    std::sort(vals.begin(), vals.end());
    for (double v : vals) {
        Tensor one = hard_sigmoid(Tensor::from({1}, {v}));
        CHECK(one.at(0) >= prev);
        prev = one.at(0);
    }
}

TEST_CASE("global_avg_pool: constant and 2x2 examples, summation oracle") {
    Tensor c = Tensor::full({2, 3, 4, 4}, 0.7, Dtype::F64);
    Tensor pc = global_avg_pool(c);
    for (std::int64_t i = 0; i < pc.numel(); ++i) CHECK(pc.at(i) == doctest::Approx(0.7));

    Tensor q = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(global_avg_pool(q).at(0) == doctest::Approx(2.5));

    Rng rng(19);
    Tensor r = Tensor::rand_uniform({2, 4, 3, 5}, rng, -1.0, 1.0, Dtype::F64);
    Tensor p = global_avg_pool(r);
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t ch = 0; ch < 4; ++ch) {
            double sum = 0;
            for (std::int64_t i = 0; i < 15; ++i) sum += r.at((n * 4 + ch) * 15 + i);
            CHECK(p.at(n * 4 + ch) == doctest::Approx(sum / 15.0).epsilon(1e-12));
        }
}

TEST_CASE("upsample_nearest/avg_pool: adjoint pair and shape round trip") {
    Rng rng(20);
    Tensor x = Tensor::rand_uniform({1, 2, 3, 4}, rng, -1.0, 1.0, Dtype::F64);
    Tensor up = upsample_nearest(x, 2);
    CHECK(up.dim(2) == 6);
    CHECK(up.dim(3) == 8);
    for (std::int64_t y = 0; y < 6; ++y)
        for (std::int64_t xx = 0; xx < 8; ++xx)
            CHECK(up.at((0 * 2 + 0) * 48 + y * 8 + xx) ==
                  x.at((0 * 2 + 0) * 12 + (y / 2) * 4 + xx / 2));

    // <upsample(x), y> == <x, upsample_backward(y)>
    Tensor y = Tensor::rand_uniform({1, 2, 6, 8}, rng, -1.0, 1.0, Dtype::F64);
    double lhs = 0, rhs = 0;
    Tensor ub = upsample_nearest_backward(y, 2);
    for (std::int64_t i = 0; i < up.numel(); ++i) lhs += up.at(i) * y.at(i);
    for (std::int64_t i = 0; i < x.numel(); ++i) rhs += x.at(i) * ub.at(i);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

    Tensor pooled = avg_pool(y, 2);
    CHECK(pooled.dim(2) == 3);
    CHECK(pooled.dim(3) == 4);
    Tensor pb = avg_pool_backward(x, 2);
    double lhs2 = 0, rhs2 = 0;
    for (std::int64_t i = 0; i < pooled.numel(); ++i) lhs2 += pooled.at(i) * x.at(i);
    for (std::int64_t i = 0; i < y.numel(); ++i) rhs2 += y.at(i) * pb.at(i);
    CHECK(lhs2 == doctest::Approx(rhs2).epsilon(1e-12));
}

TEST_CASE("purity: repeated conv calls are bit-identical") {
    Rng rng(21);
    Tensor input = Tensor::rand_uniform({1, 3, 7, 7}, rng, -1.0, 1.0, Dtype::F64);
    ConvParams p = random_conv(rng, 3, 2, 3, 1, 1, 2);
    Tensor a = conv2d_forward(input, p);
    Tensor b = conv2d_forward(input, p);
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("gradcheck: linear 1x1 conv is exact to 1e-8") {
    Rng rng(22);
    Tensor input = Tensor::rand_uniform({1, 2, 3, 3}, rng, -1.0, 1.0, Dtype::F64);
    ConvParams p = random_conv(rng, 2, 2, 1, 1, 0, 1);
    GradCheckOptions opts;
    opts.tolerance = 1e-8;
    GradCheckReport rep = gradcheck(
        "conv1x1", {{"input", &input}, {"weight", &p.weight}, {"bias", &p.bias}},
        [&]() { return conv2d_forward(input, p); },
        [&](const Tensor& cot) {
            ConvGrads g = conv2d_backward(input, p, cot);
            return std::vector<Tensor>{g.input, g.weight, g.bias};
        },
        opts);
    CHECK(rep.pass);
}

TEST_CASE("gradcheck: primitive backwards match finite differences below 1e-4") {
    // the standard matrix's primitive section, spot-checked here for locality
    const std::vector<GradCheckReport> reports = gradcheck_suite(5);
    int primitives_seen = 0;
    for (const GradCheckReport& r : reports) {
        if (r.op_name.rfind("conv2d", 0) == 0 || r.op_name == "bilinear_sample" ||
            r.op_name == "silu" || r.op_name == "relu" || r.op_name == "sigmoid" ||
            r.op_name == "hard_sigmoid" || r.op_name == "global_avg_pool" ||
            r.op_name == "avg_pool" || r.op_name == "upsample_nearest" ||
            r.op_name == "linear") {
            ++primitives_seen;
            CAPTURE(r.op_name);
            CHECK(r.pass);
            for (const auto& g : r.groups) CHECK(g.max_rel_err < 1e-4);
        }
    }
    CHECK(primitives_seen >= 10);
}

TEST_CASE("gradcheck: a wrong-sign backward is caught (sentinel)") {
    Rng rng(23);
    Tensor input = Tensor::rand_uniform({2, 3}, rng, 0.2, 1.0, Dtype::F64);
    GradCheckReport rep = gradcheck(
        "broken_square", {{"input", &input}},
        [&]() { return mul(input, input); },
        [&](const Tensor& cot) {
            // wrong sign: should be +2*x*cot
            Tensor g = mul(input, cot);
            scale_inplace(g, -2.0);
            return std::vector<Tensor>{g};
        });
    CHECK_FALSE(rep.pass);
}
