#include "irnet/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "irnet/dyhead.hpp"
#include "irnet/loss.hpp"
#include "irnet/model.hpp"
#include "irnet/msfa.hpp"
#include "irnet/ops.hpp"

namespace irnet {

namespace {

// Uniform magnitudes in [lo, hi] with random signs: keeps samples away from
// the kink at zero for relu-like ops.
Tensor rand_away_from_zero(const std::vector<std::int64_t>& shape, Rng& rng, double lo,
                           double hi) {
    Tensor t = Tensor::zeros(shape, Dtype::F64);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        const double mag = rng.uniform(lo, hi);
        t.set(i, rng.uniform() < 0.5 ? -mag : mag);
    }
    return t;
}

Tensor pack(const std::vector<Tensor>& ts) {
    std::int64_t total = 0;
    for (const Tensor& t : ts) total += t.numel();
    Tensor out = Tensor::zeros({total}, Dtype::F64);
    std::int64_t pos = 0;
    for (const Tensor& t : ts)
        for (std::int64_t i = 0; i < t.numel(); ++i) out.set(pos++, t.at(i));
    return out;
}

std::vector<Tensor> unpack(const Tensor& flat, const std::vector<Tensor>& like) {
    std::vector<Tensor> out;
    std::int64_t pos = 0;
    for (const Tensor& t : like) {
        Tensor g = Tensor::zeros(t.shape(), Dtype::F64);
        for (std::int64_t i = 0; i < g.numel(); ++i) g.set(i, flat.at(pos++));
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<std::pair<std::string, Tensor*>> param_groups(std::vector<ParamRef>& refs) {
    std::vector<std::pair<std::string, Tensor*>> groups;
    for (ParamRef& r : refs) groups.emplace_back(r.name, r.tensor);
    return groups;
}

void randomize_params(std::vector<ParamRef>& refs, Rng& rng, double scale) {
    for (ParamRef& r : refs)
        for (std::int64_t i = 0; i < r.tensor->numel(); ++i)
            r.tensor->set(i, r.tensor->at(i) + scale * rng.normal());
}

GradCheckReport check_conv(const std::string& name, std::int64_t n, std::int64_t cin,
                           std::int64_t cout, int k, int stride, int padding, int dilation,
                           std::int64_t hw, std::uint64_t seed) {
    Rng rng(seed);
    Tensor input = Tensor::rand_uniform({n, cin, hw, hw}, rng, -1.0, 1.0, Dtype::F64);
    ConvParams p;
    p.weight = Tensor::rand_uniform({cout, cin, k, k}, rng, -0.5, 0.5, Dtype::F64);
    p.bias = Tensor::rand_uniform({cout}, rng, -0.5, 0.5, Dtype::F64);
    p.stride = stride;
    p.padding = padding;
    p.dilation = dilation;
    GradCheckOptions opts;
    opts.seed = seed;
    return gradcheck(
        name,
        {{"input", &input}, {"weight", &p.weight}, {"bias", &p.bias}},
        [&]() { return conv2d_forward(input, p); },
        [&](const Tensor& cot) {
            ConvGrads g = conv2d_backward(input, p, cot);
            return std::vector<Tensor>{g.input, g.weight, g.bias};
        },
        opts);
}

GradCheckReport check_activation(const std::string& name, std::uint64_t seed) {
    Rng rng(seed);
    Tensor input;
    if (name == "relu") {
        input = rand_away_from_zero({2, 3, 4, 4}, rng, 0.05, 1.5);
    } else if (name == "hard_sigmoid") {
        // keep clear of the kinks at +-1
        input = Tensor::rand_uniform({2, 3, 4, 4}, rng, -0.9, 0.9, Dtype::F64);
    } else {
        input = Tensor::rand_uniform({2, 3, 4, 4}, rng, -2.0, 2.0, Dtype::F64);
    }
    auto fwd = [&]() {
        if (name == "silu") return silu(input);
        if (name == "relu") return relu(input);
        if (name == "sigmoid") return sigmoid(input);
        return hard_sigmoid(input);
    };
    auto bwd = [&](const Tensor& cot) {
        Tensor g;
        if (name == "silu") g = silu_backward(input, cot);
        else if (name == "relu") g = relu_backward(input, cot);
        else if (name == "sigmoid") g = sigmoid_backward(input, cot);
        else g = hard_sigmoid_backward(input, cot);
        return std::vector<Tensor>{g};
    };
    GradCheckOptions opts;
    opts.seed = seed;
    return gradcheck(name, {{"input", &input}}, fwd, bwd, opts);
}

GradCheckReport check_bilinear(std::uint64_t seed) {
    Rng rng(seed);
    Tensor input = Tensor::rand_uniform({2, 3, 6, 6}, rng, -1.0, 1.0, Dtype::F64);
    std::vector<std::array<double, 2>> points;
    for (int i = 0; i < 7; ++i)
        points.push_back({rng.uniform(0.3, 4.7), rng.uniform(0.3, 4.7)});
    GradCheckOptions opts;
    opts.seed = seed;
    return gradcheck(
        "bilinear_sample", {{"input", &input}},
        [&]() { return bilinear_sample(input, points); },
        [&](const Tensor& cot) {
            return std::vector<Tensor>{bilinear_sample_backward(input, points, cot).input};
        },
        opts);
}

GradCheckReport check_pools(const std::string& which, std::uint64_t seed) {
    Rng rng(seed);
    GradCheckOptions opts;
    opts.seed = seed;
    if (which == "global_avg_pool") {
        Tensor input = Tensor::rand_uniform({2, 5, 4, 6}, rng, -1.0, 1.0, Dtype::F64);
        return gradcheck(
            which, {{"input", &input}}, [&]() { return global_avg_pool(input); },
            [&](const Tensor& cot) {
                return std::vector<Tensor>{global_avg_pool_backward(input.shape(), cot)};
            },
            opts);
    }
    if (which == "avg_pool") {
        Tensor input = Tensor::rand_uniform({1, 3, 6, 6}, rng, -1.0, 1.0, Dtype::F64);
        return gradcheck(
            which, {{"input", &input}}, [&]() { return avg_pool(input, 2); },
            [&](const Tensor& cot) {
                return std::vector<Tensor>{avg_pool_backward(cot, 2)};
            },
            opts);
    }
    Tensor input = Tensor::rand_uniform({1, 3, 5, 4}, rng, -1.0, 1.0, Dtype::F64);
    return gradcheck(
        "upsample_nearest", {{"input", &input}},
        [&]() { return upsample_nearest(input, 2); },
        [&](const Tensor& cot) {
            return std::vector<Tensor>{upsample_nearest_backward(cot, 2)};
        },
        opts);
}

GradCheckReport check_linear(std::uint64_t seed) {
    Rng rng(seed);
    Linear lin(6, 4, Dtype::F64, rng);
    Tensor input = Tensor::rand_uniform({3, 6}, rng, -1.0, 1.0, Dtype::F64);
    std::vector<ParamRef> refs;
    lin.collect("linear", refs);
    auto groups = param_groups(refs);
    groups.insert(groups.begin(), {"input", &input});
    GradCheckOptions opts;
    opts.seed = seed;
    return gradcheck(
        "linear", groups, [&]() { return lin.forward(input); },
        [&](const Tensor& cot) {
            for (ParamRef& r : refs) r.tensor->zero_grad();
            (void)lin.forward(input, true);
            std::vector<Tensor> grads;
            grads.push_back(lin.backward(cot));
            for (ParamRef& r : refs) grads.push_back(r.tensor->grad());
            return grads;
        },
        opts);
}

GradCheckReport check_bottleneck(std::uint64_t seed) {
    Rng rng(seed);
    Bottleneck block(4, Dtype::F64, rng);
    Tensor input = Tensor::rand_uniform({1, 4, 5, 5}, rng, -1.0, 1.0, Dtype::F64);
    std::vector<ParamRef> refs;
    block.collect("bottleneck", refs);
    auto groups = param_groups(refs);
    groups.insert(groups.begin(), {"input", &input});
    GradCheckOptions opts;
    opts.seed = seed;
    opts.tolerance = 1e-3; // composite
    return gradcheck(
        "bottleneck", groups, [&]() { return block.forward(input); },
        [&](const Tensor& cot) {
            for (ParamRef& r : refs) r.tensor->zero_grad();
            (void)block.forward(input, true);
            std::vector<Tensor> grads;
            grads.push_back(block.backward(cot));
            for (ParamRef& r : refs) grads.push_back(r.tensor->grad());
            return grads;
        },
        opts);
}

GradCheckReport check_msfa(std::uint64_t seed) {
    Rng rng(seed);
    MsfaBlock block(3, 4, 5, {1, 3, 5}, Dtype::F64, rng);
    Tensor input = Tensor::rand_uniform({1, 3, 9, 9}, rng, -1.0, 1.0, Dtype::F64);
    std::vector<ParamRef> refs;
    block.collect("msfa", refs);
    auto groups = param_groups(refs);
    groups.insert(groups.begin(), {"input", &input});
    GradCheckOptions opts;
    opts.seed = seed;
    opts.tolerance = 1e-3;
    return gradcheck(
        "msfa_block", groups, [&]() { return block.forward(input); },
        [&](const Tensor& cot) {
            for (ParamRef& r : refs) r.tensor->zero_grad();
            (void)block.forward(input, true);
            std::vector<Tensor> grads;
            grads.push_back(block.backward(cot));
            for (ParamRef& r : refs) grads.push_back(r.tensor->grad());
            return grads;
        },
        opts);
}

GradCheckReport check_dyhead(std::uint64_t seed) {
    Rng rng(seed);
    DyHeadBlock block(8, Dtype::F64, rng);
    // Zero-initialized offsets put every deformable sample on a bilinear
    // lattice kink; randomize so finite differences are valid.
    std::vector<ParamRef> jitter_refs;
    block.offset_conv.collect("offset", jitter_refs);
    block.theta_fc2.collect("theta2", jitter_refs);
    randomize_params(jitter_refs, rng, 0.05);
    std::vector<Tensor> levels;
    levels.push_back(Tensor::rand_uniform({1, 8, 6, 6}, rng, -1.0, 1.0, Dtype::F64));
    levels.push_back(Tensor::rand_uniform({1, 8, 3, 3}, rng, -1.0, 1.0, Dtype::F64));
    std::vector<ParamRef> refs;
    block.collect("dyhead", refs);
    auto groups = param_groups(refs);
    groups.insert(groups.begin(), {"level1", &levels[1]});
    groups.insert(groups.begin(), {"level0", &levels[0]});
    GradCheckOptions opts;
    opts.seed = seed;
    opts.tolerance = 1e-3;
    opts.max_entries_per_group = 24;
    return gradcheck(
        "dyhead_block", groups, [&]() { return pack(block.forward_levels(levels)); },
        [&](const Tensor& cot) {
            for (ParamRef& r : refs) r.tensor->zero_grad();
            const std::vector<Tensor> outs = block.forward_levels(levels, true);
            const std::vector<Tensor> grad_levels = unpack(cot, outs);
            const std::vector<Tensor> grad_in = block.backward_levels(grad_levels);
            std::vector<Tensor> grads;
            grads.push_back(grad_in[0]);
            grads.push_back(grad_in[1]);
            for (ParamRef& r : refs) grads.push_back(r.tensor->grad());
            return grads;
        },
        opts);
}

GradCheckReport check_model_loss(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.width_mult = 0.125;
    cfg.dyhead_blocks = 1;
    cfg.num_classes = 1;
    cfg.seed = seed;
    cfg.dtype = Dtype::F64;
    Model model = build_model(cfg);
    std::vector<ParamRef> refs = model.parameters();
    {
        // Same kink-avoidance as the DyHead case for the zero-init offsets.
        Rng jitter(seed ^ 0xabcdef);
        std::vector<ParamRef> offrefs;
        for (ParamRef& r : refs)
            if (r.name.find("offset") != std::string::npos) offrefs.push_back(r);
        randomize_params(offrefs, jitter, 0.05);
    }
    Rng rng(seed + 1);
    Tensor input = Tensor::rand_uniform({1, 1, 32, 32}, rng, 0.0, 1.0, Dtype::F64);
    std::vector<ImageTargets> targets(1);
    targets[0].push_back({0, 0.30, 0.40, 0.12, 0.10});
    targets[0].push_back({0, 0.70, 0.60, 0.20, 0.16});

    auto loss_value = [&]() {
        const std::vector<Tensor> preds = model.forward(input);
        const LossResult r = compute_loss(preds, targets, cfg, 32, 32);
        Tensor t = Tensor::zeros({1}, Dtype::F64);
        t.set(0, r.total);
        return t;
    };
    auto groups = param_groups(refs);
    groups.insert(groups.begin(), {"input", &input});
    GradCheckOptions opts;
    opts.seed = seed;
    opts.tolerance = 1e-3;
    opts.max_entries_per_group = 3;
    return gradcheck(
        "model_loss", groups, loss_value,
        [&](const Tensor& cot) {
            const double c = cot.at(0);
            model.zero_grads();
            const std::vector<Tensor> preds = model.forward(input, true);
            const LossResult r = compute_loss(preds, targets, cfg, 32, 32);
            Tensor ginput = model.backward(r.grads);
            std::vector<Tensor> grads;
            scale_inplace(ginput, c);
            grads.push_back(ginput);
            for (ParamRef& ref : refs) {
                Tensor g = ref.tensor->grad();
                scale_inplace(g, c);
                grads.push_back(g);
            }
            return grads;
        },
        opts);
}

} // namespace

std::vector<GradCheckReport> gradcheck_suite(std::uint64_t seed) {
    std::vector<GradCheckReport> reports;
    reports.push_back(check_conv("conv2d k3 s1 p1 d1 (2,3,6,6)", 2, 3, 4, 3, 1, 1, 1, 6, seed));
    reports.push_back(check_conv("conv2d k3 s2 p2 d2 (1,2,9,9)", 1, 2, 3, 3, 2, 2, 2, 9, seed + 1));
    reports.push_back(check_conv("conv2d k1 s1 p0 d1 (2,4,5,5)", 2, 4, 6, 1, 1, 0, 1, 5, seed + 2));
    reports.push_back(check_conv("conv2d k3 s1 p5 d5 (1,3,9,9)", 1, 3, 2, 3, 1, 5, 5, 9, seed + 3));
    reports.push_back(check_bilinear(seed + 4));
    reports.push_back(check_activation("silu", seed + 5));
    reports.push_back(check_activation("relu", seed + 6));
    reports.push_back(check_activation("sigmoid", seed + 7));
    reports.push_back(check_activation("hard_sigmoid", seed + 8));
    reports.push_back(check_pools("global_avg_pool", seed + 9));
    reports.push_back(check_pools("avg_pool", seed + 10));
    reports.push_back(check_pools("upsample_nearest", seed + 11));
    reports.push_back(check_linear(seed + 12));
    reports.push_back(check_bottleneck(seed + 13));
    reports.push_back(check_msfa(seed + 14));
    reports.push_back(check_dyhead(seed + 15));
    reports.push_back(check_model_loss(seed + 16));
    return reports;
}

bool gradcheck_suite_passes(const std::vector<GradCheckReport>& reports) {
    return std::all_of(reports.begin(), reports.end(),
                       [](const GradCheckReport& r) { return r.pass; });
}

std::string format_gradcheck_table(const std::vector<GradCheckReport>& reports) {
    std::ostringstream os;
    os << "op                               group                max_rel_err  pass\n";
    os << "-------------------------------  -------------------  -----------  ----\n";
    os.setf(std::ios::scientific);
    os.precision(3);
    for (const GradCheckReport& r : reports) {
        for (const auto& g : r.groups) {
            os << r.op_name;
            for (std::size_t i = r.op_name.size(); i < 33; ++i) os << ' ';
            os << g.name;
            for (std::size_t i = g.name.size(); i < 21; ++i) os << ' ';
            os << g.max_rel_err << "    " << (g.pass ? "pass" : "FAIL");
            if (!g.note.empty()) os << "  [" << g.note << "]";
            os << "\n";
        }
    }
    return os.str();
}

} // namespace irnet
