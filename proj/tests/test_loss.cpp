#include <doctest.h>

#include <cmath>
#include <set>

#include "irnet/gradcheck.hpp"
#include "irnet/loss.hpp"
#include "irnet/rng.hpp"

using namespace irnet;

namespace {

constexpr double kLn2 = 0.6931471805599453;

ModelConfig loss_config(int nc = 1) {
    ModelConfig cfg;
    cfg.num_classes = nc;
    cfg.dtype = Dtype::F64;
    return cfg;
}

// anchors chosen so only the first (2x2) anchor can match small targets
ModelConfig spread_anchor_config(int nc = 1) {
    ModelConfig cfg = loss_config(nc);
    cfg.anchors = {{2, 2}, {40, 40}, {44, 44}, {48, 48}, {52, 52}, {56, 56}};
    return cfg;
}

std::vector<Tensor> zero_preds(const ModelConfig& cfg, std::int64_t n, std::int64_t input) {
    std::vector<Tensor> preds;
    for (int s : cfg.strides)
        preds.push_back(
            Tensor::zeros({n, cfg.head_out_channels(), input / s, input / s}, Dtype::F64));
    return preds;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

} // namespace

TEST_CASE("loss: zero logits and no targets give the closed form (4+1)*ln2") {
    ModelConfig cfg = loss_config();
    std::vector<Tensor> preds = zero_preds(cfg, 1, 32);
    LossResult r = compute_loss(preds, {{}}, cfg, 32, 32);
    CHECK(r.box == 0.0);
    CHECK(r.cls == 0.0);
    CHECK(r.obj == doctest::Approx(5.0 * kLn2).epsilon(1e-12));
    CHECK(r.total == doctest::Approx(5.0 * kLn2).epsilon(1e-12));
    REQUIRE(r.grads.size() == 2);
    CHECK(r.grads[0].same_shape(preds[0]));
    CHECK(r.grads[1].same_shape(preds[1]));
}

TEST_CASE("loss: one objectness logit moves the total by the per-scale-mean closed form") {
    ModelConfig cfg = loss_config();
    const double z = 1.3;
    auto bce = [](double zz, double y) { return bce_with_logits(zz, y); };
    {
        std::vector<Tensor> preds = zero_preds(cfg, 1, 32);
        preds[0].set(((0 * 18 + 4) * 4 + 1) * 4 + 2, z); // anchor 0, obj channel, cell (1,2)
        LossResult r = compute_loss(preds, {{}}, cfg, 32, 32);
        const double want = 4.0 * (47.0 * kLn2 + bce(z, 0.0)) / 48.0 + kLn2;
        CHECK(r.total == doctest::Approx(want).epsilon(1e-12));
    }
    {
        std::vector<Tensor> preds = zero_preds(cfg, 1, 32);
        preds[1].set(((0 * 18 + 4) * 2 + 0) * 2 + 0, z); // same but on the stride-16 scale
        LossResult r = compute_loss(preds, {{}}, cfg, 32, 32);
        const double want = 4.0 * kLn2 + 1.0 * (11.0 * kLn2 + bce(z, 0.0)) / 12.0;
        CHECK(r.total == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("loss: exactly decoded assignments zero the box term") {
    ModelConfig cfg = spread_anchor_config();
    // target center at grid (1.75, 1.75) on the stride-8 4x4 grid, size == anchor 0
    std::vector<ImageTargets> targets(1);
    targets[0].push_back({0, 14.0 / 32.0, 14.0 / 32.0, 2.0 / 32.0, 2.0 / 32.0});
    std::vector<Tensor> preds = zero_preds(cfg, 1, 32);

    auto set_cell = [&](std::int64_t j, std::int64_t i, double tx, double ty) {
        preds[0].set(((0 * 18 + 0) * 4 + j) * 4 + i, tx);
        preds[0].set(((0 * 18 + 1) * 4 + j) * 4 + i, ty);
        // tw = th = 0 already: (2*sigmoid(0))^2 * anchor == anchor == target size
    };
    // primary cell (1,1): offset 0.75 each axis; neighbors need -0.25 on their axis
    set_cell(1, 1, logit(0.625), logit(0.625));
    set_cell(1, 2, logit(0.125), logit(0.625));
    set_cell(2, 1, logit(0.625), logit(0.125));

    LossResult r = compute_loss(preds, targets, cfg, 32, 32);
    CHECK(r.box == doctest::Approx(0.0).epsilon(1e-9));
    // BCE(0, y) = ln2 for every label y, so obj keeps its closed form
    CHECK(r.obj == doctest::Approx(5.0 * kLn2).epsilon(1e-9));
}

TEST_CASE("loss: anchor ratio threshold 4.0 is exclusive") {
    ModelConfig cfg = spread_anchor_config();
    std::vector<Tensor> preds = zero_preds(cfg, 1, 32);
    {
        // 8 px target vs 2 px anchor: worst ratio exactly 4 -> no assignment anywhere
        std::vector<ImageTargets> targets(1);
        targets[0].push_back({0, 0.4375, 0.4375, 8.0 / 32.0, 8.0 / 32.0});
        LossResult r = compute_loss(preds, targets, cfg, 32, 32);
        CHECK(r.box == 0.0);
        CHECK(r.obj == doctest::Approx(5.0 * kLn2).epsilon(1e-12));
    }
    {
        // 7.9 px: worst ratio 3.95 < 4 -> assigned, imperfect zero-logit decode
        std::vector<ImageTargets> targets(1);
        targets[0].push_back({0, 0.4375, 0.4375, 7.9 / 32.0, 7.9 / 32.0});
        LossResult r = compute_loss(preds, targets, cfg, 32, 32);
        CHECK(r.box > 0.0);
    }
}

TEST_CASE("loss: neighbor expansion assigns the primary cell plus one per axis") {
    ModelConfig cfg = spread_anchor_config();
    std::vector<ImageTargets> targets(1);
    targets[0].push_back({0, 14.0 / 32.0, 14.0 / 32.0, 2.0 / 32.0, 2.0 / 32.0});
    std::vector<Tensor> preds = zero_preds(cfg, 1, 32);
    LossResult r = compute_loss(preds, targets, cfg, 32, 32);

    std::set<std::pair<std::int64_t, std::int64_t>> cells;
    for (int ch = 0; ch < 4; ++ch) // tx, ty, tw, th planes of anchor 0
        for (std::int64_t j = 0; j < 4; ++j)
            for (std::int64_t i = 0; i < 4; ++i)
                if (r.grads[0].at(((0 * 18 + ch) * 4 + j) * 4 + i) != 0.0) cells.insert({j, i});
    const std::set<std::pair<std::int64_t, std::int64_t>> want{{1, 1}, {1, 2}, {2, 1}};
    CHECK(cells == want);

    // fraction below 0.5 flips the x neighbor to the left cell
    std::vector<ImageTargets> left(1);
    left[0].push_back({0, 10.0 / 32.0, 14.0 / 32.0, 2.0 / 32.0, 2.0 / 32.0}); // gx = 1.25
    LossResult rl = compute_loss(preds, left, cfg, 32, 32);
    cells.clear();
    for (int ch = 0; ch < 4; ++ch)
        for (std::int64_t j = 0; j < 4; ++j)
            for (std::int64_t i = 0; i < 4; ++i)
                if (rl.grads[0].at(((0 * 18 + ch) * 4 + j) * 4 + i) != 0.0) cells.insert({j, i});
    const std::set<std::pair<std::int64_t, std::int64_t>> want_left{{1, 1}, {1, 0}, {2, 1}};
    CHECK(cells == want_left);
}

TEST_CASE("loss: multi-class closed form and gradient locality") {
    ModelConfig cfg = spread_anchor_config(2);
    std::vector<ImageTargets> targets(1);
    targets[0].push_back({1, 14.0 / 32.0, 14.0 / 32.0, 2.0 / 32.0, 2.0 / 32.0});
    std::vector<Tensor> preds = zero_preds(cfg, 1, 32); // per = 7 channels now
    LossResult r = compute_loss(preds, targets, cfg, 32, 32);
    // zero logits: every assignment contributes BCE(0,1)+BCE(0,0) = 2 ln2 over 2 classes
    CHECK(r.cls == doctest::Approx(0.5 * kLn2).epsilon(1e-12));
    // cls gradients live only on the assigned cells' class channels
    for (std::int64_t j = 0; j < 4; ++j)
        for (std::int64_t i = 0; i < 4; ++i) {
            const bool assigned = (j == 1 && i == 1) || (j == 1 && i == 2) || (j == 2 && i == 1);
            for (int c = 0; c < 2; ++c) {
                const double g = r.grads[0].at(((0 * 21 + 5 + c) * 4 + j) * 4 + i);
                if (assigned)
                    CHECK(g != 0.0);
                else
                    CHECK(g == 0.0);
            }
        }
}

TEST_CASE("bce_with_logits: matches the naive formula and survives extreme logits") {
    Rng rng(71);
    for (int i = 0; i < 200; ++i) {
        const double z = rng.uniform(-8.0, 8.0);
        const double y = rng.uniform();
        const double s = 1.0 / (1.0 + std::exp(-z));
        const double naive = -(y * std::log(s) + (1.0 - y) * std::log(1.0 - s));
        CHECK(bce_with_logits(z, y) == doctest::Approx(naive).epsilon(1e-9));
    }
    CHECK(std::isfinite(bce_with_logits(800.0, 0.0)));
    CHECK(bce_with_logits(800.0, 0.0) == doctest::Approx(800.0));
    CHECK(std::isfinite(bce_with_logits(-800.0, 1.0)));
    CHECK(bce_with_logits(-800.0, 1.0) == doctest::Approx(800.0));
    CHECK(bce_with_logits(0.0, 0.5) == doctest::Approx(kLn2).epsilon(1e-12));

    // derivative sigma(z) - y via central differences
    for (int i = 0; i < 50; ++i) {
        const double z = rng.uniform(-4.0, 4.0);
        const double y = rng.uniform();
        const double h = 1e-6;
        const double fd = (bce_with_logits(z + h, y) - bce_with_logits(z - h, y)) / (2 * h);
        const double s = 1.0 / (1.0 + std::exp(-z));
        CHECK(fd == doctest::Approx(s - y).epsilon(1e-5));
    }
}

TEST_CASE("ciou_with_grad: identity gives 1; value is bounded; gradient matches FD") {
    // identical boxes: iou = A/(A + kEps), so equality holds to the
    // regularizer's scale rather than exactly
    CiouGrad same = ciou_with_grad(1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0);
    CHECK(same.ciou == doctest::Approx(1.0).epsilon(1e-7));

    Rng rng(72);
    for (int i = 0; i < 100; ++i) {
        const double bx = rng.uniform(-2.0, 2.0), by = rng.uniform(-2.0, 2.0);
        const double bw = rng.uniform(0.5, 3.0), bh = rng.uniform(0.5, 3.0);
        const double tx = rng.uniform(-2.0, 2.0), ty = rng.uniform(-2.0, 2.0);
        const double tw = rng.uniform(0.5, 3.0), th = rng.uniform(0.5, 3.0);
        CiouGrad g = ciou_with_grad(bx, by, bw, bh, tx, ty, tw, th);
        CHECK(g.ciou <= 1.0);
        CHECK(std::isfinite(g.ciou));
        const double h = 1e-6;
        auto val = [&](double x, double y, double w, double hh) {
            return ciou_with_grad(x, y, w, hh, tx, ty, tw, th).ciou;
        };
        CAPTURE(i);
        CHECK(g.dbx == doctest::Approx((val(bx + h, by, bw, bh) - val(bx - h, by, bw, bh)) /
                                       (2 * h)).epsilon(1e-4));
        CHECK(g.dby == doctest::Approx((val(bx, by + h, bw, bh) - val(bx, by - h, bw, bh)) /
                                       (2 * h)).epsilon(1e-4));
        CHECK(g.dbw == doctest::Approx((val(bx, by, bw + h, bh) - val(bx, by, bw - h, bh)) /
                                       (2 * h)).epsilon(1e-4));
        CHECK(g.dbh == doctest::Approx((val(bx, by, bw, bh + h) - val(bx, by, bw, bh - h)) /
                                       (2 * h)).epsilon(1e-4));
    }
}

TEST_CASE("loss: returned grads match finite differences of the total") {
    ModelConfig cfg = loss_config();
    Rng rng(73);
    std::vector<Tensor> preds;
    preds.push_back(Tensor::rand_uniform({1, 18, 4, 4}, rng, -2.0, 2.0, Dtype::F64));
    preds.push_back(Tensor::rand_uniform({1, 18, 2, 2}, rng, -2.0, 2.0, Dtype::F64));
    std::vector<ImageTargets> targets(1);
    targets[0].push_back({0, 0.30, 0.40, 0.12, 0.10});
    targets[0].push_back({0, 0.70, 0.60, 0.20, 0.16});

    GradCheckOptions opts;
    opts.tolerance = 1e-3;
    opts.max_entries_per_group = 150;
    opts.seed = 73;
    GradCheckReport rep = gradcheck(
        "compute_loss", {{"preds8", &preds[0]}, {"preds16", &preds[1]}},
        [&]() {
            LossResult r = compute_loss(preds, targets, cfg, 32, 32);
            return Tensor::from({1}, {r.total});
        },
        [&](const Tensor& cot) {
            LossResult r = compute_loss(preds, targets, cfg, 32, 32);
            for (Tensor& g : r.grads) scale_inplace(g, cot.at(0));
            return r.grads;
        },
        opts);
    CHECK(rep.pass);
}

TEST_CASE("loss: multi-class grads also match finite differences") {
    ModelConfig cfg = loss_config(3);
    Rng rng(74);
    std::vector<Tensor> preds;
    preds.push_back(Tensor::rand_uniform({1, 24, 4, 4}, rng, -2.0, 2.0, Dtype::F64));
    preds.push_back(Tensor::rand_uniform({1, 24, 2, 2}, rng, -2.0, 2.0, Dtype::F64));
    std::vector<ImageTargets> targets(1);
    targets[0].push_back({2, 0.55, 0.45, 0.25, 0.20});

    GradCheckOptions opts;
    opts.tolerance = 1e-3;
    opts.max_entries_per_group = 120;
    opts.seed = 74;
    GradCheckReport rep = gradcheck(
        "compute_loss_nc3", {{"preds8", &preds[0]}, {"preds16", &preds[1]}},
        [&]() {
            LossResult r = compute_loss(preds, targets, cfg, 32, 32);
            return Tensor::from({1}, {r.total});
        },
        [&](const Tensor& cot) {
            LossResult r = compute_loss(preds, targets, cfg, 32, 32);
            for (Tensor& g : r.grads) scale_inplace(g, cot.at(0));
            return r.grads;
        },
        opts);
    CHECK(rep.pass);
}

TEST_CASE("loss: batch of two images averages consistently") {
    // loss with batch {A, B} relates to singles through the per-scale means:
    // box means over pooled assignments, obj means over pooled cells
    ModelConfig cfg = loss_config();
    Rng rng(75);
    std::vector<Tensor> pa, pb, pj;
    for (auto dims : {std::vector<std::int64_t>{1, 18, 4, 4}, {1, 18, 2, 2}}) {
        pa.push_back(Tensor::rand_uniform(dims, rng, -1.0, 1.0, Dtype::F64));
        pb.push_back(Tensor::rand_uniform(dims, rng, -1.0, 1.0, Dtype::F64));
        std::vector<std::int64_t> jd = dims;
        jd[0] = 2;
        Tensor joint = Tensor::zeros(jd, Dtype::F64);
        for (std::int64_t i = 0; i < pa.back().numel(); ++i) {
            joint.set(i, pa.back().at(i));
            joint.set(pa.back().numel() + i, pb.back().at(i));
        }
        pj.push_back(joint);
    }
    std::vector<ImageTargets> ta(1), tb(1);
    ta[0].push_back({0, 0.3, 0.3, 0.12, 0.12});
    tb[0].push_back({0, 0.7, 0.7, 0.2, 0.2});
    std::vector<ImageTargets> tj{ta[0], tb[0]};

    LossResult ra = compute_loss(pa, ta, cfg, 32, 32);
    LossResult rb = compute_loss(pb, tb, cfg, 32, 32);
    LossResult rj = compute_loss(pj, tj, cfg, 32, 32);
    CHECK(rj.obj == doctest::Approx((ra.obj + rb.obj) / 2.0).epsilon(1e-9));
    CHECK(rj.total > 0.0);
    CHECK(rj.grads[0].all_finite());
}
