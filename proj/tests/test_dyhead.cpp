#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "irnet/dyhead.hpp"
#include "irnet/ops.hpp"
#include "irnet/rng.hpp"

using namespace irnet;

namespace {

double bilin_zero_pad(const Tensor& canon, std::int64_t n, std::int64_t l, std::int64_t c,
                      double y, double x) {
    const std::int64_t L = canon.dim(1), C = canon.dim(2), H = canon.dim(3), W = canon.dim(4);
    const double fy = std::floor(y), fx = std::floor(x);
    const std::int64_t y0 = static_cast<std::int64_t>(fy), x0 = static_cast<std::int64_t>(fx);
    const double dy = y - fy, dx = x - fx;
    auto read = [&](std::int64_t yy, std::int64_t xx) -> double {
        if (yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0;
        return canon.at((((n * L + l) * C + c) * H + yy) * W + xx);
    };
    return (1 - dy) * (1 - dx) * read(y0, x0) + (1 - dy) * dx * read(y0, x0 + 1) +
           dy * (1 - dx) * read(y0 + 1, x0) + dy * dx * read(y0 + 1, x0 + 1);
}

// Direct transcription of Eq. (4): K-point deformable aggregation averaged
// over levels, zero-padded bilinear reads, 3x3 base grid.
Tensor spatial_oracle(const Tensor& canon, const Tensor& offsets, const Tensor& mods,
                      const Tensor& weights) {
    const std::int64_t N = canon.dim(0), L = canon.dim(1), C = canon.dim(2), H = canon.dim(3),
                       W = canon.dim(4);
    const std::int64_t K = weights.dim(0);
    Tensor out = Tensor::zeros({N, C, H, W}, Dtype::F64);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t h = 0; h < H; ++h)
                for (std::int64_t w = 0; w < W; ++w) {
                    double acc = 0;
                    for (std::int64_t k = 0; k < K; ++k) {
                        const double dy = offsets.at(((n * 2 * K + 2 * k) * H + h) * W + w);
                        const double dx =
                            offsets.at(((n * 2 * K + 2 * k + 1) * H + h) * W + w);
                        const double y = static_cast<double>(h + k / 3 - 1) + dy;
                        const double x = static_cast<double>(w + k % 3 - 1) + dx;
                        const double m = mods.at(((n * K + k) * H + h) * W + w);
                        for (std::int64_t l = 0; l < L; ++l)
                            acc += weights.at(k) * m * bilin_zero_pad(canon, n, l, c, y, x) /
                                   static_cast<double>(L);
                    }
                    out.set(((n * C + c) * H + h) * W + w, acc);
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

void jitter(DyHeadBlock& block, Rng& rng, double s = 0.05) {
    auto wiggle = [&](Tensor& t) {
        for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, t.at(i) + rng.normal() * s);
    };
    wiggle(block.offset_conv.params.weight);
    wiggle(block.offset_conv.params.bias);
    wiggle(block.theta_fc2.weight);
    wiggle(block.theta_fc2.bias);
    wiggle(block.scale_fc.params.weight);
    wiggle(block.scale_fc.params.bias);
}

std::vector<Tensor> random_levels(Rng& rng, std::int64_t n, std::int64_t c, double amp = 1.0) {
    std::vector<Tensor> lv;
    lv.push_back(Tensor::rand_uniform({n, c, 6, 6}, rng, -amp, amp, Dtype::F64));
    lv.push_back(Tensor::rand_uniform({n, c, 3, 3}, rng, -amp, amp, Dtype::F64));
    return lv;
}

} // namespace

TEST_CASE("dyhead: canonical reference level is the lower median") {
    CHECK(FeatureLevels::ref_index(1) == 0);
    CHECK(FeatureLevels::ref_index(2) == 0);
    CHECK(FeatureLevels::ref_index(3) == 1);
    CHECK(FeatureLevels::ref_index(4) == 1);
    CHECK(FeatureLevels::ref_index(5) == 2);
}

TEST_CASE("dyhead: canonicalize shape and coarse-level round trip") {
    Rng rng(41);
    std::vector<Tensor> lv = random_levels(rng, 2, 3);
    Tensor canon = canonicalize(lv);
    REQUIRE(canon.rank() == 5);
    CHECK(canon.dim(0) == 2);
    CHECK(canon.dim(1) == 2);
    CHECK(canon.dim(2) == 3);
    CHECK(canon.dim(3) == 6); // reference grid = finest of the two
    CHECK(canon.dim(4) == 6);

    // reference level is copied verbatim
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t i = 0; i < 36; ++i)
                CHECK(canon.at((((n * 2 + 0) * 3 + c) * 36) + i) ==
                      lv[0].at((n * 3 + c) * 36 + i));

    // nearest-up then avg-pool-down recovers the coarse level bit-exactly
    std::vector<Tensor> back = decanonicalize(canon, level_sizes(lv));
    REQUIRE(back.size() == 2);
    CHECK(max_abs_diff(back[0], lv[0]) == 0.0);
    CHECK(max_abs_diff(back[1], lv[1]) == 0.0);
}

TEST_CASE("dyhead: scale stage multiplies each level by its scalar gate") {
    Rng rng(42);
    DyHeadBlock block(4, Dtype::F64, rng);
    jitter(block, rng, 0.3);
    Tensor canon = Tensor::rand_uniform({2, 3, 4, 5, 5}, rng, -1.0, 1.0, Dtype::F64);
    Tensor gates = block.scale_gates(canon);
    REQUIRE(gates.dim(0) == 2);
    REQUIRE(gates.dim(1) == 3);
    Tensor out = block.scale_stage(canon);
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t l = 0; l < 3; ++l) {
            const double g = gates.at(n * 3 + l);
            for (std::int64_t i = 0; i < 4 * 25; ++i) {
                const std::int64_t flat = ((n * 3 + l) * 4 * 25) + i;
                CHECK(out.at(flat) == doctest::Approx(g * canon.at(flat)).epsilon(1e-12));
            }
        }
}

TEST_CASE("dyhead: criterion ranges — gates in [0,1], task coefficients in [-1,1]") {
    Rng rng(43);
    std::int64_t checked = 0;
    for (int inst = 0; inst < 160; ++inst) {
        DyHeadBlock block(8, Dtype::F64, rng);
        jitter(block, rng, inst % 4 == 0 ? 2.0 : 0.2); // include extreme parameters
        const double amp = inst % 3 == 0 ? 50.0 : 1.0; // and extreme inputs
        Tensor canon = Tensor::rand_uniform({2, 3, 8, 5, 5}, rng, -amp, amp, Dtype::F64);
        Tensor gates = block.scale_gates(canon);
        for (std::int64_t i = 0; i < gates.numel(); ++i) {
            CHECK(gates.at(i) >= 0.0);
            CHECK(gates.at(i) <= 1.0);
            ++checked;
        }
        Tensor coeffs = block.task_coefficients(canon);
        REQUIRE(coeffs.rank() == 3);
        REQUIRE(coeffs.dim(2) == 4);
        for (std::int64_t i = 0; i < coeffs.numel(); ++i) {
            CHECK(coeffs.at(i) >= -1.0);
            CHECK(coeffs.at(i) <= 1.0);
            ++checked;
        }
    }
    CHECK(checked >= 10000);
}

TEST_CASE("dyhead: task_apply with alpha1=1, alpha2=0, betas 0 is exactly ReLU") {
    Rng rng(44);
    Tensor canon = Tensor::rand_uniform({1, 2, 3, 4, 4}, rng, -2.0, 2.0, Dtype::F64);
    Tensor coeffs = Tensor::zeros({1, 3, 4}, Dtype::F64);
    for (std::int64_t c = 0; c < 3; ++c) coeffs.set(c * 4 + 0, 1.0); // a1 slot
    Tensor out = task_apply(canon, coeffs);
    for (std::int64_t i = 0; i < canon.numel(); ++i)
        CHECK(out.at(i) == std::max(canon.at(i), 0.0)); // bitwise, no tolerance
}

TEST_CASE("dyhead: task_apply matches the two-piece max formula on random coefficients") {
    Rng rng(45);
    Tensor canon = Tensor::rand_uniform({2, 2, 3, 3, 3}, rng, -2.0, 2.0, Dtype::F64);
    Tensor coeffs = Tensor::rand_uniform({2, 3, 4}, rng, -1.0, 1.0, Dtype::F64);
    Tensor out = task_apply(canon, coeffs);
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t l = 0; l < 2; ++l)
            for (std::int64_t c = 0; c < 3; ++c)
                for (std::int64_t i = 0; i < 9; ++i) {
                    const double f = canon.at((((n * 2 + l) * 3 + c) * 9) + i);
                    const double a1 = coeffs.at((n * 3 + c) * 4 + 0);
                    const double a2 = coeffs.at((n * 3 + c) * 4 + 1);
                    const double b1 = coeffs.at((n * 3 + c) * 4 + 2);
                    const double b2 = coeffs.at((n * 3 + c) * 4 + 3);
                    CHECK(out.at((((n * 2 + l) * 3 + c) * 9) + i) ==
                          doctest::Approx(std::max(a1 * f + b1, a2 * f + b2)).epsilon(1e-12));
                }
}

TEST_CASE("dyhead: theta init is the near-identity point of the dynamic ReLU") {
    Rng rng(46);
    DyHeadBlock block(6, Dtype::F64, rng);
    Tensor canon = Tensor::rand_uniform({1, 2, 6, 4, 4}, rng, -3.0, 3.0, Dtype::F64);
    Tensor coeffs = block.task_coefficients(canon);
    const double a1_init = 2.0 / (1.0 + std::exp(-4.0)) - 1.0; // shifted sigmoid of the bias
    for (std::int64_t n = 0; n < coeffs.dim(0); ++n)
        for (std::int64_t c = 0; c < 6; ++c) {
            CHECK(coeffs.at((n * 6 + c) * 4 + 0) == doctest::Approx(a1_init).epsilon(1e-12));
            CHECK(coeffs.at((n * 6 + c) * 4 + 1) == doctest::Approx(0.0));
            CHECK(coeffs.at((n * 6 + c) * 4 + 2) == doctest::Approx(0.0));
            CHECK(coeffs.at((n * 6 + c) * 4 + 3) == doctest::Approx(0.0));
        }
}

TEST_CASE("dyhead: spatial_aggregate matches brute-force oracle on 100 instances") {
    Rng rng(47);
    for (int inst = 0; inst < 100; ++inst) {
        const std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform_int(2));
        const std::int64_t l = 1 + static_cast<std::int64_t>(rng.uniform_int(3));
        const std::int64_t c = 1 + static_cast<std::int64_t>(rng.uniform_int(3));
        const std::int64_t hw = 3 + static_cast<std::int64_t>(rng.uniform_int(4));
        Tensor canon = Tensor::rand_uniform({n, l, c, hw, hw}, rng, -1.0, 1.0, Dtype::F64);
        Tensor offsets = Tensor::rand_uniform({n, 18, hw, hw}, rng, -2.0, 2.0, Dtype::F64);
        Tensor mods = Tensor::rand_uniform({n, 9, hw, hw}, rng, 0.0, 1.0, Dtype::F64);
        Tensor weights = Tensor::rand_uniform({9}, rng, -1.0, 1.0, Dtype::F64);
        CAPTURE(inst);
        CHECK(max_abs_diff(spatial_aggregate(canon, offsets, mods, weights),
                           spatial_oracle(canon, offsets, mods, weights)) < 1e-12);
    }
}

TEST_CASE("dyhead: block composition equals chaining the three attention stages bitwise") {
    Rng rng(48);
    DyHeadBlock block(8, Dtype::F64, rng);
    jitter(block, rng);
    FeatureLevels f;
    f.levels = random_levels(rng, 1, 8);

    FeatureLevels composed = dyhead_block(f, block);
    FeatureLevels chained = task_attention(spatial_attention(scale_attention(f, block), block), block);
    REQUIRE(composed.levels.size() == 2);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < composed.levels[i].numel(); ++j)
            CHECK(composed.levels[i].at(j) == chained.levels[i].at(j));
}

TEST_CASE("dyhead: stack applies blocks in order; empty stack is rejected") {
    Rng rng(49);
    DyHeadBlock a(8, Dtype::F64, rng), b(8, Dtype::F64, rng);
    jitter(a, rng);
    jitter(b, rng);
    FeatureLevels f;
    f.levels = random_levels(rng, 1, 8);

    FeatureLevels stacked = dyhead_stack(f, {a, b});
    FeatureLevels manual = dyhead_block(dyhead_block(f, a), b);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < stacked.levels[i].numel(); ++j)
            CHECK(stacked.levels[i].at(j) == manual.levels[i].at(j));

    CHECK_THROWS_AS(dyhead_stack(f, {}), ShapeError);
    FeatureLevels empty;
    CHECK_THROWS_AS(dyhead_stack(empty, {a}), ShapeError);
}

TEST_CASE("dyhead: forward_levels train path matches inference path") {
    Rng rng(50);
    DyHeadBlock block(8, Dtype::F64, rng);
    jitter(block, rng);
    std::vector<Tensor> lv = random_levels(rng, 2, 8);
    std::vector<Tensor> train_out = block.forward_levels(lv, true);
    std::vector<Tensor> infer_out = block.forward_levels(lv);
    REQUIRE(train_out.size() == infer_out.size());
    for (std::size_t i = 0; i < train_out.size(); ++i)
        CHECK(max_abs_diff(train_out[i], infer_out[i]) == 0.0);
}

TEST_CASE("dyhead: mismatched level channel counts are rejected") {
    Rng rng(51);
    DyHeadBlock block(8, Dtype::F64, rng);
    std::vector<Tensor> lv;
    lv.push_back(Tensor::zeros({1, 8, 6, 6}, Dtype::F64));
    lv.push_back(Tensor::zeros({1, 4, 3, 3}, Dtype::F64));
    CHECK_THROWS_AS(block.forward_levels(lv, false), ShapeError);
}
