#include "irnet/loss.hpp"

#include <cmath>
#include <unordered_map>

#include "irnet/errors.hpp"

namespace irnet {

namespace {

constexpr double kEps = 1e-9;
constexpr double kPi = 3.14159265358979323846;

double sigmoid_d(double x) { return scalar::sigmoid(x); }

} // namespace

double bce_with_logits(double z, double y) {
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

CiouGrad ciou_with_grad(double bx, double by, double bw, double bh, double tx, double ty,
                        double tw, double th) {
    const double px1 = bx - bw / 2, px2 = bx + bw / 2;
    const double py1 = by - bh / 2, py2 = by + bh / 2;
    const double qx1 = tx - tw / 2, qx2 = tx + tw / 2;
    const double qy1 = ty - th / 2, qy2 = ty + th / 2;

    const double iw = std::min(px2, qx2) - std::max(px1, qx1);
    const double ih = std::min(py2, qy2) - std::max(py1, qy1);
    const bool active = iw > 0 && ih > 0;
    const double inter = active ? iw * ih : 0.0;
    const double uni = bw * bh + tw * th - inter + kEps;
    const double iou = inter / uni;

    // d(inter)/d(pred corner) indicators; zero when the boxes do not overlap
    double di_px1 = 0, di_px2 = 0, di_py1 = 0, di_py2 = 0;
    if (active) {
        di_px1 = (px1 > qx1) ? -ih : 0.0;
        di_px2 = (px2 < qx2) ? ih : 0.0;
        di_py1 = (py1 > qy1) ? -iw : 0.0;
        di_py2 = (py2 < qy2) ? iw : 0.0;
    }
    const double di_bx = di_px1 + di_px2;
    const double di_bw = 0.5 * (di_px2 - di_px1);
    const double di_by = di_py1 + di_py2;
    const double di_bh = 0.5 * (di_py2 - di_py1);

    const double du_bx = -di_bx, du_by = -di_by;
    const double du_bw = bh - di_bw, du_bh = bw - di_bh;

    const double uni2 = uni * uni;
    const double diou_bx = (di_bx * uni - inter * du_bx) / uni2;
    const double diou_by = (di_by * uni - inter * du_by) / uni2;
    const double diou_bw = (di_bw * uni - inter * du_bw) / uni2;
    const double diou_bh = (di_bh * uni - inter * du_bh) / uni2;

    // enclosing box diagonal
    const double cw = std::max(px2, qx2) - std::min(px1, qx1);
    const double ch = std::max(py2, qy2) - std::min(py1, qy1);
    const double c2 = cw * cw + ch * ch + kEps;
    const double dcw_px1 = (px1 < qx1) ? -1.0 : 0.0, dcw_px2 = (px2 > qx2) ? 1.0 : 0.0;
    const double dch_py1 = (py1 < qy1) ? -1.0 : 0.0, dch_py2 = (py2 > qy2) ? 1.0 : 0.0;
    const double dcw_bx = dcw_px1 + dcw_px2, dcw_bw = 0.5 * (dcw_px2 - dcw_px1);
    const double dch_by = dch_py1 + dch_py2, dch_bh = 0.5 * (dch_py2 - dch_py1);
    const double dc2_bx = 2 * cw * dcw_bx, dc2_bw = 2 * cw * dcw_bw;
    const double dc2_by = 2 * ch * dch_by, dc2_bh = 2 * ch * dch_bh;

    // center distance
    const double rho2 = (bx - tx) * (bx - tx) + (by - ty) * (by - ty);
    const double drho2_bx = 2 * (bx - tx), drho2_by = 2 * (by - ty);

    // aspect-ratio consistency term; alpha is differentiated, not detached
    const double q = std::atan(tw / th) - std::atan(bw / bh);
    const double v = (4.0 / (kPi * kPi)) * q * q;
    const double wh2 = bw * bw + bh * bh;
    const double dv_bw = -(8.0 * q / (kPi * kPi)) * bh / wh2;
    const double dv_bh = (8.0 * q / (kPi * kPi)) * bw / wh2;

    const double denom = 1.0 - iou + v + kEps;
    const double alpha = v / denom;
    // d(alpha)/d* = (dv*(1 - iou + eps) + v*diou) / denom^2
    const double denom2 = denom * denom;
    const double da_bx = (v * diou_bx) / denom2;
    const double da_by = (v * diou_by) / denom2;
    const double da_bw = (dv_bw * (1.0 - iou + kEps) + v * diou_bw) / denom2;
    const double da_bh = (dv_bh * (1.0 - iou + kEps) + v * diou_bh) / denom2;

    CiouGrad g;
    g.ciou = iou - rho2 / c2 - alpha * v;
    const double c4 = c2 * c2;
    g.dbx = diou_bx - (drho2_bx * c2 - rho2 * dc2_bx) / c4 - da_bx * v;
    g.dby = diou_by - (drho2_by * c2 - rho2 * dc2_by) / c4 - da_by * v;
    g.dbw = diou_bw - (-rho2 * dc2_bw) / c4 - (da_bw * v + alpha * dv_bw);
    g.dbh = diou_bh - (-rho2 * dc2_bh) / c4 - (da_bh * v + alpha * dv_bh);
    return g;
}

namespace {

struct Assign {
    std::int64_t n;
    int a;
    std::int64_t gj, gi;
    double tgx, tgy, tgw, tgh; // target box in grid units
    int cls;
};

} // namespace

LossResult compute_loss(const std::vector<Tensor>& preds,
                        const std::vector<ImageTargets>& targets, const ModelConfig& cfg,
                        std::int64_t input_h, std::int64_t input_w) {
    if (preds.size() != static_cast<std::size_t>(cfg.scale_count()))
        throw ShapeError("compute_loss expects " + std::to_string(cfg.scale_count()) +
                         " prediction maps, got " + std::to_string(preds.size()));
    const auto N = preds[0].dim(0);
    if (targets.size() != static_cast<std::size_t>(N))
        throw ShapeError("compute_loss: target list count " + std::to_string(targets.size()) +
                         " does not match batch " + std::to_string(N));
    const int A = cfg.anchors_per_scale();
    const std::int64_t per = 5 + cfg.num_classes;

    LossResult res;
    double lbox = 0, lobj = 0, lcls = 0;
    res.grads.reserve(preds.size());

    for (std::size_t s = 0; s < preds.size(); ++s) {
        const Tensor& P = preds[s];
        const int stride = cfg.strides[s];
        const auto Gh = P.dim(2), Gw = P.dim(3);
        if (P.dim(0) != N || P.dim(1) != cfg.head_out_channels() || Gh * stride != input_h ||
            Gw * stride != input_w)
            throw ShapeError("prediction map " + P.shape_str() + " inconsistent with input " +
                             std::to_string(input_h) + "x" + std::to_string(input_w) +
                             " at stride " + std::to_string(stride));
        Tensor G = Tensor::zeros(P.shape(), P.dtype());
        const auto idx = [&](std::int64_t n, std::int64_t ch, std::int64_t j, std::int64_t i) {
            return ((n * cfg.head_out_channels() + ch) * Gh + j) * Gw + i;
        };

        // 1) anchor-ratio matching with neighbor-cell expansion
        std::vector<Assign> assigns;
        for (std::int64_t n = 0; n < N; ++n) {
            for (const TargetBox& t : targets[static_cast<std::size_t>(n)]) {
                const double tw_px = t.w * static_cast<double>(input_w);
                const double th_px = t.h * static_cast<double>(input_h);
                for (int a = 0; a < A; ++a) {
                    const auto& anc = cfg.anchors[s * static_cast<std::size_t>(A) +
                                                  static_cast<std::size_t>(a)];
                    const double rw = tw_px / anc[0], rh = th_px / anc[1];
                    const double worst =
                        std::max(std::max(rw, 1.0 / rw), std::max(rh, 1.0 / rh));
                    if (worst >= kAnchorRatioThreshold) continue;
                    const double gx = t.cx * static_cast<double>(Gw);
                    const double gy = t.cy * static_cast<double>(Gh);
                    const double tgw = t.w * static_cast<double>(Gw);
                    const double tgh = t.h * static_cast<double>(Gh);
                    const std::int64_t gi0 = std::min<std::int64_t>(
                        Gw - 1, std::max<std::int64_t>(0, static_cast<std::int64_t>(gx)));
                    const std::int64_t gj0 = std::min<std::int64_t>(
                        Gh - 1, std::max<std::int64_t>(0, static_cast<std::int64_t>(gy)));
                    std::vector<std::pair<std::int64_t, std::int64_t>> cells{{gj0, gi0}};
                    const double fx = gx - std::floor(gx), fy = gy - std::floor(gy);
                    const std::int64_t gi_n = fx < 0.5 ? gi0 - 1 : gi0 + 1;
                    const std::int64_t gj_n = fy < 0.5 ? gj0 - 1 : gj0 + 1;
                    if (gi_n >= 0 && gi_n < Gw) cells.emplace_back(gj0, gi_n);
                    if (gj_n >= 0 && gj_n < Gh) cells.emplace_back(gj_n, gi0);
                    for (const auto& [cj, ci] : cells)
                        assigns.push_back({n, a, cj, ci, gx, gy, tgw, tgh, t.cls});
                }
            }
        }

        // 2) per-assignment CIoU; last writer owns a cell's objectness label
        std::unordered_map<std::int64_t, std::size_t> owner;
        std::vector<CiouGrad> cgs(assigns.size());
        std::vector<std::array<double, 4>> sig(assigns.size()); // sigmoid(tx,ty,tw,th)
        double lbox_sum = 0;
        for (std::size_t i = 0; i < assigns.size(); ++i) {
            const Assign& as = assigns[i];
            const double ztx = P.at(idx(as.n, as.a * per + 0, as.gj, as.gi));
            const double zty = P.at(idx(as.n, as.a * per + 1, as.gj, as.gi));
            const double ztw = P.at(idx(as.n, as.a * per + 2, as.gj, as.gi));
            const double zth = P.at(idx(as.n, as.a * per + 3, as.gj, as.gi));
            const double sx = sigmoid_d(ztx), sy = sigmoid_d(zty), sw = sigmoid_d(ztw),
                         sh = sigmoid_d(zth);
            sig[i] = {sx, sy, sw, sh};
            const auto& anc = cfg.anchors[s * static_cast<std::size_t>(A) +
                                          static_cast<std::size_t>(as.a)];
            const double bx = 2 * sx - 0.5 + static_cast<double>(as.gi);
            const double by = 2 * sy - 0.5 + static_cast<double>(as.gj);
            const double bw = 4 * sw * sw * (anc[0] / stride);
            const double bh = 4 * sh * sh * (anc[1] / stride);
            cgs[i] = ciou_with_grad(bx, by, bw, bh, as.tgx, as.tgy, as.tgw, as.tgh);
            lbox_sum += 1.0 - cgs[i].ciou;
            owner[idx(as.n, as.a * per + 4, as.gj, as.gi)] = i;
        }
        const double nb = static_cast<double>(assigns.size());
        if (!assigns.empty()) lbox += lbox_sum / nb;

        // 3) objectness over every cell; CIoU soft labels on owned cells
        const double cells_total = static_cast<double>(N * A * Gh * Gw);
        const double obj_coeff = kObjGain * objectness_balance(static_cast<int>(s)) / cells_total;
        std::vector<double> dl_dciou(assigns.size(), 0.0);
        if (!assigns.empty())
            for (std::size_t i = 0; i < assigns.size(); ++i)
                dl_dciou[i] = -kBoxGain / nb; // box term d(1-ciou)/dciou
        double lobj_sum = 0;
        for (std::int64_t n = 0; n < N; ++n)
            for (int a = 0; a < A; ++a)
                for (std::int64_t j = 0; j < Gh; ++j)
                    for (std::int64_t i = 0; i < Gw; ++i) {
                        const std::int64_t zi = idx(n, a * per + 4, j, i);
                        const double z = P.at(zi);
                        double tobj = 0.0;
                        const auto it = owner.find(zi);
                        if (it != owner.end()) tobj = std::max(0.0, cgs[it->second].ciou);
                        lobj_sum += bce_with_logits(z, tobj);
                        G.set(zi, G.at(zi) + (sigmoid_d(z) - tobj) * obj_coeff);
                        if (it != owner.end() && cgs[it->second].ciou > 0.0)
                            dl_dciou[it->second] += obj_coeff * (-z);
                    }
        lobj += objectness_balance(static_cast<int>(s)) * lobj_sum / cells_total;

        // 4) route box+soft-label gradients into the raw logits
        for (std::size_t i = 0; i < assigns.size(); ++i) {
            const Assign& as = assigns[i];
            const CiouGrad& cg = cgs[i];
            const auto& anc = cfg.anchors[s * static_cast<std::size_t>(A) +
                                          static_cast<std::size_t>(as.a)];
            const double d = dl_dciou[i];
            const double dsx = sig[i][0] * (1 - sig[i][0]), dsy = sig[i][1] * (1 - sig[i][1]);
            const double dsw = sig[i][2] * (1 - sig[i][2]), dsh = sig[i][3] * (1 - sig[i][3]);
            const std::int64_t base = idx(as.n, as.a * per, as.gj, as.gi);
            const std::int64_t plane = Gh * Gw;
            G.set(base, G.at(base) + d * cg.dbx * 2 * dsx);
            G.set(base + plane, G.at(base + plane) + d * cg.dby * 2 * dsy);
            G.set(base + 2 * plane,
                  G.at(base + 2 * plane) + d * cg.dbw * 8 * sig[i][2] * dsw * (anc[0] / stride));
            G.set(base + 3 * plane,
                  G.at(base + 3 * plane) + d * cg.dbh * 8 * sig[i][3] * dsh * (anc[1] / stride));
        }

        // 5) classification (skipped for single-class models)
        if (cfg.num_classes > 1 && !assigns.empty()) {
            const double denom = nb * cfg.num_classes;
            double lcls_sum = 0;
            for (std::size_t i = 0; i < assigns.size(); ++i) {
                const Assign& as = assigns[i];
                for (int c = 0; c < cfg.num_classes; ++c) {
                    const std::int64_t zi = idx(as.n, as.a * per + 5 + c, as.gj, as.gi);
                    const double z = P.at(zi);
                    const double y = (c == as.cls) ? 1.0 : 0.0;
                    lcls_sum += bce_with_logits(z, y);
                    G.set(zi, G.at(zi) + (sigmoid_d(z) - y) * kClsGain / denom);
                }
            }
            lcls += lcls_sum / denom;
        }

        res.grads.push_back(std::move(G));
    }

    res.box = kBoxGain * lbox;
    res.obj = kObjGain * lobj;
    res.cls = kClsGain * lcls;
    res.total = res.box + res.obj + res.cls;
    return res;
}

} // namespace irnet
