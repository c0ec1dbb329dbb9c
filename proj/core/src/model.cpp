#include "irnet/model.hpp"

#include <cmath>
#include <sstream>

#include "irnet/errors.hpp"

namespace irnet {

namespace {

constexpr std::array<int, 5> kBaseChannels{16, 32, 64, 128, 256};

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

std::int64_t ModelConfig::stage_channels(int i) const {
    const double raw = kBaseChannels.at(static_cast<std::size_t>(i)) * width_mult;
    return std::max<std::int64_t>(2, std::llround(raw));
}

void ModelConfig::validate() const {
    if (width_mult <= 0.0) throw ShapeError("model config: width_mult must be positive");
    if (depth < 0) throw ShapeError("model config: depth must be >= 0");
    if (strides != std::vector<int>{8, 16})
        throw ShapeError("model config: exactly two detection scales with strides 8,16 are "
                         "supported (the stride-32 large-target head is removed by design)");
    if (static_cast<int>(anchors.size()) != anchors_per_scale() * scale_count())
        throw ShapeError("model config: expected " +
                         std::to_string(anchors_per_scale() * scale_count()) +
                         " anchors (3 per scale), got " + std::to_string(anchors.size()));
    for (const auto& a : anchors)
        if (a[0] <= 0.0 || a[1] <= 0.0)
            throw ShapeError("model config: anchor sizes must be positive");
    if (num_classes < 1) throw ShapeError("model config: num_classes must be >= 1");
    if (dyhead_blocks < 0) throw ShapeError("model config: dyhead_blocks must be >= 0");
    if (msfa_dilations.empty()) throw ShapeError("model config: msfa_dilations must be non-empty");
    for (int d : msfa_dilations)
        if (d < 1) throw ShapeError("model config: msfa dilation rates must be >= 1");
}

ModelConfig parse_model_config(const std::string& text) {
    ModelConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ParseError("model config: expected key=value, got '" + t + "'", lineno);
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        try {
            if (key == "width_mult") {
                cfg.width_mult = std::stod(val);
            } else if (key == "depth") {
                cfg.depth = std::stoi(val);
            } else if (key == "num_classes") {
                cfg.num_classes = std::stoi(val);
            } else if (key == "dyhead_blocks") {
                cfg.dyhead_blocks = std::stoi(val);
            } else if (key == "seed") {
                cfg.seed = std::stoull(val);
            } else if (key == "dtype") {
                if (val == "f32")
                    cfg.dtype = Dtype::F32;
                else if (val == "f64")
                    cfg.dtype = Dtype::F64;
                else
                    throw ParseError("model config: dtype must be f32 or f64", lineno);
            } else if (key == "strides") {
                cfg.strides.clear();
                for (const std::string& p : split(val, ','))
                    cfg.strides.push_back(std::stoi(trim(p)));
            } else if (key == "msfa_dilations") {
                cfg.msfa_dilations.clear();
                for (const std::string& p : split(val, ','))
                    cfg.msfa_dilations.push_back(std::stoi(trim(p)));
            } else if (key == "anchors") {
                cfg.anchors.clear();
                for (const std::string& pair : split(val, ';')) {
                    const auto parts = split(pair, ',');
                    if (parts.size() != 2)
                        throw ParseError("model config: anchor entries are 'w,h' pairs", lineno);
                    cfg.anchors.push_back({std::stod(trim(parts[0])), std::stod(trim(parts[1]))});
                }
            } else {
                throw ParseError("model config: unknown key '" + key + "'", lineno);
            }
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception&) {
            throw ParseError("model config: cannot parse value '" + val + "' for key '" + key +
                             "'", lineno);
        }
    }
    return cfg;
}

std::string serialize_model_config(const ModelConfig& cfg) {
    std::ostringstream out;
    out << "width_mult=" << cfg.width_mult << "\n";
    out << "depth=" << cfg.depth << "\n";
    out << "strides=";
    for (std::size_t i = 0; i < cfg.strides.size(); ++i)
        out << (i ? "," : "") << cfg.strides[i];
    out << "\n";
    out << "anchors=";
    for (std::size_t i = 0; i < cfg.anchors.size(); ++i)
        out << (i ? ";" : "") << cfg.anchors[i][0] << "," << cfg.anchors[i][1];
    out << "\n";
    out << "num_classes=" << cfg.num_classes << "\n";
    out << "dyhead_blocks=" << cfg.dyhead_blocks << "\n";
    out << "msfa_dilations=";
    for (std::size_t i = 0; i < cfg.msfa_dilations.size(); ++i)
        out << (i ? "," : "") << cfg.msfa_dilations[i];
    out << "\n";
    out << "seed=" << cfg.seed << "\n";
    out << "dtype=" << dtype_name(cfg.dtype) << "\n";
    return out.str();
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const Dtype dt = cfg_.dtype;
    const std::int64_t c0 = cfg_.stage_channels(0), c1 = cfg_.stage_channels(1),
                       c2 = cfg_.stage_channels(2), c3 = cfg_.stage_channels(3),
                       c4 = cfg_.stage_channels(4);

    stem_ = ConvLayer(1, c0, 3, 2, 1, 1, true, dt, rng);
    const std::array<std::int64_t, 5> ladder{c0, c1, c2, c3, c4};
    for (int s = 0; s < 4; ++s) {
        stages_[static_cast<std::size_t>(s)].down =
            ConvLayer(ladder[static_cast<std::size_t>(s)], ladder[static_cast<std::size_t>(s + 1)],
                      3, 2, 1, 1, true, dt, rng);
        for (int d = 0; d < cfg_.depth; ++d)
            stages_[static_cast<std::size_t>(s)].blocks.emplace_back(
                ladder[static_cast<std::size_t>(s + 1)], dt, rng);
    }
    msfa_ = MsfaBlock(c4, std::max<std::int64_t>(2, c4 / 2), c4, cfg_.msfa_dilations, dt, rng);

    lat4_ = ConvLayer(c4, c3, 1, 1, 0, 1, true, dt, rng);
    fuse4_ = ConvLayer(2 * c3, c3, 3, 1, 1, 1, true, dt, rng);
    lat3_ = ConvLayer(c3, c2, 1, 1, 0, 1, true, dt, rng);
    fuse3_ = ConvLayer(2 * c2, c2, 3, 1, 1, 1, true, dt, rng);
    extra_ = ConvLayer(c2, c2, 3, 1, 1, 1, true, dt, rng); // the added conv of the reduced neck
    down4_ = ConvLayer(c2, c3, 3, 2, 1, 1, true, dt, rng);
    fuse5_ = ConvLayer(2 * c3, c3, 3, 1, 1, 1, true, dt, rng);

    const std::int64_t hc = cfg_.head_channels();
    proj3_ = ConvLayer(c2, hc, 1, 1, 0, 1, true, dt, rng);
    proj4_ = ConvLayer(c3, hc, 1, 1, 0, 1, true, dt, rng);
    for (int b = 0; b < cfg_.dyhead_blocks; ++b) dyhead_.emplace_back(hc, dt, rng);

    const std::int64_t ho = cfg_.head_out_channels();
    head3_ = ConvLayer(hc, ho, 1, 1, 0, 1, false, dt, rng);
    head4_ = ConvLayer(hc, ho, 1, 1, 0, 1, false, dt, rng);
    // objectness priors start strongly negative: near-empty IR scenes
    const std::int64_t per = 5 + cfg_.num_classes;
    for (int a = 0; a < cfg_.anchors_per_scale(); ++a) {
        head3_.params.bias.set(a * per + 4, -5.0);
        head4_.params.bias.set(a * per + 4, -5.0);
    }
}

void Model::check_input(const Tensor& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != 1)
        throw ShapeError("model input must be (N,1,H,W) grayscale, got " + batch.shape_str());
    const auto H = batch.dim(2), W = batch.dim(3);
    if (H % 32 != 0 || W % 32 != 0) {
        const auto ph = (H + 31) / 32 * 32, pw = (W + 31) / 32 * 32;
        throw ShapeError("input " + std::to_string(H) + "x" + std::to_string(W) +
                         " is not divisible by 32; pad to " + std::to_string(ph) + "x" +
                         std::to_string(pw));
    }
}

std::vector<Tensor> Model::forward(const Tensor& batch, bool train) {
    check_input(batch);
    Tensor s0 = stem_.forward(batch, train);
    std::array<Tensor, 4> feats;
    Tensor cur = std::move(s0);
    for (int s = 0; s < 4; ++s) {
        Stage& st = stages_[static_cast<std::size_t>(s)];
        cur = st.down.forward(cur, train);
        for (Bottleneck& b : st.blocks) cur = b.forward(cur, train);
        feats[static_cast<std::size_t>(s)] = cur;
    }
    Tensor m = msfa_.forward(feats[3], train);
    Tensor u4 = upsample_nearest(lat4_.forward(m, train), 2);
    Tensor t4 = fuse4_.forward(concat_channels(u4, feats[2]), train);
    Tensor u3 = upsample_nearest(lat3_.forward(t4, train), 2);
    Tensor t3 = fuse3_.forward(concat_channels(u3, feats[1]), train);
    Tensor e3 = extra_.forward(t3, train);
    Tensor d4 = down4_.forward(e3, train);
    Tensor o4 = fuse5_.forward(concat_channels(d4, t4), train);
    std::vector<Tensor> levels;
    levels.push_back(proj3_.forward(e3, train));
    levels.push_back(proj4_.forward(o4, train));
    for (DyHeadBlock& blk : dyhead_) levels = blk.forward_levels(levels, train);
    std::vector<Tensor> preds;
    preds.push_back(head3_.forward(levels[0], train));
    preds.push_back(head4_.forward(levels[1], train));
    return preds;
}

std::vector<Tensor> Model::forward(const Tensor& batch) const {
    check_input(batch);
    Tensor cur = stem_.forward(batch);
    std::array<Tensor, 4> feats;
    for (int s = 0; s < 4; ++s) {
        const Stage& st = stages_[static_cast<std::size_t>(s)];
        cur = st.down.forward(cur);
        for (const Bottleneck& b : st.blocks) cur = b.forward(cur);
        feats[static_cast<std::size_t>(s)] = cur;
    }
    Tensor m = msfa_.forward(feats[3]);
    Tensor u4 = upsample_nearest(lat4_.forward(m), 2);
    Tensor t4 = fuse4_.forward(concat_channels(u4, feats[2]));
    Tensor u3 = upsample_nearest(lat3_.forward(t4), 2);
    Tensor t3 = fuse3_.forward(concat_channels(u3, feats[1]));
    Tensor e3 = extra_.forward(t3);
    Tensor d4 = down4_.forward(e3);
    Tensor o4 = fuse5_.forward(concat_channels(d4, t4));
    std::vector<Tensor> levels;
    levels.push_back(proj3_.forward(e3));
    levels.push_back(proj4_.forward(o4));
    for (const DyHeadBlock& blk : dyhead_) levels = blk.forward_levels(levels);
    std::vector<Tensor> preds;
    preds.push_back(head3_.forward(levels[0]));
    preds.push_back(head4_.forward(levels[1]));
    return preds;
}

Tensor Model::backward(const std::vector<Tensor>& grad_preds) {
    if (grad_preds.size() != 2)
        throw ShapeError("model backward expects two prediction gradients, got " +
                         std::to_string(grad_preds.size()));
    const std::int64_t c2 = cfg_.stage_channels(2), c3 = cfg_.stage_channels(3);

    std::vector<Tensor> glevels;
    glevels.push_back(head3_.backward(grad_preds[0]));
    glevels.push_back(head4_.backward(grad_preds[1]));
    for (auto it = dyhead_.rbegin(); it != dyhead_.rend(); ++it)
        glevels = it->backward_levels(glevels);

    Tensor ge3 = proj3_.backward(glevels[0]);
    Tensor go4 = proj4_.backward(glevels[1]);

    auto [gd4, gt4] = split_channels(fuse5_.backward(go4), c3);
    add_inplace(ge3, down4_.backward(gd4));
    Tensor gt3 = extra_.backward(ge3);
    auto [gu3, gs2] = split_channels(fuse3_.backward(gt3), c2);
    add_inplace(gt4, lat3_.backward(upsample_nearest_backward(gu3, 2)));
    auto [gu4, gs3] = split_channels(fuse4_.backward(gt4), c3);
    Tensor gm = lat4_.backward(upsample_nearest_backward(gu4, 2));
    Tensor gs4 = msfa_.backward(gm);

    // backbone, with neck taps joining at stages 2 and 1 (0-indexed feats)
    std::array<Tensor*, 4> taps{nullptr, &gs2, &gs3, nullptr};
    Tensor g = std::move(gs4);
    for (int s = 3; s >= 0; --s) {
        Stage& st = stages_[static_cast<std::size_t>(s)];
        if (taps[static_cast<std::size_t>(s)]) add_inplace(g, *taps[static_cast<std::size_t>(s)]);
        for (auto it = st.blocks.rbegin(); it != st.blocks.rend(); ++it) g = it->backward(g);
        g = st.down.backward(g);
    }
    return stem_.backward(g);
}

std::vector<ParamRef> Model::parameters() {
    std::vector<ParamRef> out;
    stem_.collect("stem", out);
    for (int s = 0; s < 4; ++s) {
        Stage& st = stages_[static_cast<std::size_t>(s)];
        const std::string p = "stage" + std::to_string(s + 1);
        st.down.collect(p + ".down", out);
        for (std::size_t b = 0; b < st.blocks.size(); ++b)
            st.blocks[b].collect(p + ".block" + std::to_string(b), out);
    }
    msfa_.collect("msfa", out);
    lat4_.collect("neck.lat4", out);
    fuse4_.collect("neck.fuse4", out);
    lat3_.collect("neck.lat3", out);
    fuse3_.collect("neck.fuse3", out);
    extra_.collect("neck.extra", out);
    down4_.collect("neck.down4", out);
    fuse5_.collect("neck.fuse5", out);
    proj3_.collect("neck.proj3", out);
    proj4_.collect("neck.proj4", out);
    for (std::size_t b = 0; b < dyhead_.size(); ++b)
        dyhead_[b].collect("dyhead" + std::to_string(b), out);
    head3_.collect("head3", out);
    head4_.collect("head4", out);
    return out;
}

std::int64_t Model::parameter_count() {
    std::int64_t n = 0;
    for (const ParamRef& p : parameters()) n += p.tensor->numel();
    return n;
}

void Model::zero_grads() {
    for (const ParamRef& p : parameters()) p.tensor->zero_grad();
}

std::string Model::describe() {
    std::ostringstream out;
    std::int64_t total = 0;
    for (const ParamRef& p : parameters()) {
        out << p.name << " " << p.tensor->shape_str() << " " << p.tensor->numel() << "\n";
        total += p.tensor->numel();
    }
    out << "total_parameters " << total << "\n";
    return out.str();
}

Model build_model(const ModelConfig& cfg) {
    cfg.validate();
    return Model(cfg);
}

} // namespace irnet
