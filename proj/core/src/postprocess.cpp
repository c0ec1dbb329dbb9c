#include "irnet/postprocess.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "irnet/errors.hpp"

namespace irnet {

double iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    const double ix1 = std::max(a[0], b[0]);
    const double iy1 = std::max(a[1], b[1]);
    const double ix2 = std::min(a[2], b[2]);
    const double iy2 = std::min(a[3], b[3]);
    const double iw = std::max(0.0, ix2 - ix1);
    const double ih = std::max(0.0, iy2 - iy1);
    const double inter = iw * ih;
    const double area_a = std::max(0.0, a[2] - a[0]) * std::max(0.0, a[3] - a[1]);
    const double area_b = std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]);
    const double uni = area_a + area_b - inter;
    if (uni <= 0) return 0;
    return inter / uni;
}

std::vector<std::vector<Detection>> decode(const std::vector<Tensor>& preds,
                                           const ModelConfig& cfg, double conf_threshold,
                                           std::int64_t input_h, std::int64_t input_w) {
    cfg.validate();
    if (preds.size() != cfg.strides.size())
        throw ShapeError("decode: expected " + std::to_string(cfg.strides.size()) +
                         " prediction maps, got " + std::to_string(preds.size()));
    const std::int64_t na = cfg.anchors_per_scale();
    const std::int64_t nc = cfg.num_classes;
    const std::int64_t per_anchor = 5 + nc;

    const std::int64_t batch = preds.empty() ? 0 : preds[0].dim(0);
    std::vector<std::vector<Detection>> out(static_cast<std::size_t>(batch));

    for (std::size_t s = 0; s < preds.size(); ++s) {
        const Tensor& p = preds[s];
        if (p.rank() != 4 || p.dim(0) != batch || p.dim(1) != na * per_anchor)
            throw ShapeError("decode: bad prediction shape " + p.shape_str() + " at scale " +
                             std::to_string(s));
        const std::int64_t stride = cfg.strides[s];
        const std::int64_t gh = p.dim(2), gw = p.dim(3);
        if (gh * stride != input_h || gw * stride != input_w)
            throw ShapeError("decode: grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                             " at stride " + std::to_string(stride) +
                             " does not cover input " + std::to_string(input_h) + "x" +
                             std::to_string(input_w));
        for (std::int64_t n = 0; n < batch; ++n) {
            for (std::int64_t a = 0; a < na; ++a) {
                const auto& anc = cfg.anchors[static_cast<std::size_t>(
                    static_cast<std::int64_t>(s) * na + a)];
                for (std::int64_t gj = 0; gj < gh; ++gj) {
                    for (std::int64_t gi = 0; gi < gw; ++gi) {
                        auto ch = [&](std::int64_t k) {
                            return p.at(((n * (na * per_anchor) + a * per_anchor + k) * gh + gj) *
                                            gw +
                                        gi);
                        };
                        const double obj = scalar::sigmoid(ch(4));
                        if (obj < conf_threshold) continue; // cheap reject: score <= obj
                        int best_cls = 0;
                        // Single class: the class term carries no trained signal
                        // (the loss skips class BCE when nc == 1), so the score
                        // is objectness alone.
                        double best_conf = 1.0;
                        if (nc > 1) {
                            best_conf = 0.0;
                            for (std::int64_t c = 0; c < nc; ++c) {
                                const double pc = scalar::sigmoid(ch(5 + c));
                                if (pc > best_conf) {
                                    best_conf = pc;
                                    best_cls = static_cast<int>(c);
                                }
                            }
                        }
                        const double score = obj * best_conf;
                        if (score < conf_threshold) continue;
                        const double sx = scalar::sigmoid(ch(0));
                        const double sy = scalar::sigmoid(ch(1));
                        const double sw = scalar::sigmoid(ch(2));
                        const double sh = scalar::sigmoid(ch(3));
                        const double bx = (2.0 * sx - 0.5 + static_cast<double>(gi)) *
                                          static_cast<double>(stride);
                        const double by = (2.0 * sy - 0.5 + static_cast<double>(gj)) *
                                          static_cast<double>(stride);
                        const double bw = (2.0 * sw) * (2.0 * sw) * anc[0];
                        const double bh = (2.0 * sh) * (2.0 * sh) * anc[1];
                        Detection d;
                        d.box = {bx - bw / 2, by - bh / 2, bx + bw / 2, by + bh / 2};
                        d.box[0] = std::clamp(d.box[0], 0.0, static_cast<double>(input_w));
                        d.box[1] = std::clamp(d.box[1], 0.0, static_cast<double>(input_h));
                        d.box[2] = std::clamp(d.box[2], 0.0, static_cast<double>(input_w));
                        d.box[3] = std::clamp(d.box[3], 0.0, static_cast<double>(input_h));
                        if (d.box[2] - d.box[0] <= 0 || d.box[3] - d.box[1] <= 0) continue;
                        d.score = score;
                        d.cls = best_cls;
                        d.image = n;
                        out[static_cast<std::size_t>(n)].push_back(d);
                    }
                }
            }
        }
    }
    return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<Detection> kept;
    kept.reserve(dets.size());
    for (const Detection& d : dets) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (k.cls != d.cls) continue;
            if (iou(k.box, d.box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

namespace {

struct MatchCounts {
    std::int64_t tp = 0, fp = 0;
};

// Greedy score-descending matching at one IoU threshold. Returns, per
// detection (in score order), whether it was a true positive, plus optional
// per-image tallies.
std::vector<char> greedy_match(const std::vector<Detection>& sorted_dets,
                               const std::vector<GroundTruth>& gts, double iou_threshold,
                               std::map<std::int64_t, MatchCounts>* per_image) {
    std::vector<char> is_tp(sorted_dets.size(), 0);
    std::vector<char> gt_used(gts.size(), 0);
    // Index ground truths by image for linear-time candidate lookup.
    std::map<std::int64_t, std::vector<std::size_t>> by_image;
    for (std::size_t g = 0; g < gts.size(); ++g) by_image[gts[g].image].push_back(g);
    for (std::size_t i = 0; i < sorted_dets.size(); ++i) {
        const Detection& d = sorted_dets[i];
        double best = 0;
        std::size_t best_g = gts.size();
        auto it = by_image.find(d.image);
        if (it != by_image.end()) {
            for (std::size_t g : it->second) {
                if (gt_used[g]) continue;
                const double v = iou(d.box, gts[g].box);
                if (v >= iou_threshold && v > best) {
                    best = v;
                    best_g = g;
                }
            }
        }
        if (best_g < gts.size()) {
            gt_used[best_g] = 1;
            is_tp[i] = 1;
        }
        if (per_image) {
            auto& mc = (*per_image)[d.image];
            if (is_tp[i]) ++mc.tp;
            else ++mc.fp;
        }
    }
    return is_tp;
}

std::vector<Detection> sort_by_score(std::vector<Detection> dets) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    return dets;
}

double envelope_area(const std::vector<double>& recall, const std::vector<double>& precision) {
    // All-points interpolation: monotone non-increasing precision envelope,
    // integrated over recall.
    std::vector<double> mrec, mpre;
    mrec.reserve(recall.size() + 2);
    mpre.reserve(precision.size() + 2);
    mrec.push_back(0.0);
    mpre.push_back(1.0);
    for (std::size_t i = 0; i < recall.size(); ++i) {
        mrec.push_back(recall[i]);
        mpre.push_back(precision[i]);
    }
    mrec.push_back(1.0);
    mpre.push_back(0.0);
    for (std::size_t i = mpre.size() - 1; i-- > 0;) mpre[i] = std::max(mpre[i], mpre[i + 1]);
    double ap = 0;
    for (std::size_t i = 0; i + 1 < mrec.size(); ++i)
        ap += (mrec[i + 1] - mrec[i]) * mpre[i + 1];
    return ap;
}

} // namespace

ApResult average_precision(const std::vector<Detection>& dets,
                           const std::vector<GroundTruth>& gts, double iou_threshold) {
    ApResult r;
    if (gts.empty()) return r; // undefined, not zero
    r.defined = true;
    if (dets.empty()) {
        r.value = 0;
        return r;
    }
    const std::vector<Detection> sorted = sort_by_score(dets);
    const std::vector<char> is_tp = greedy_match(sorted, gts, iou_threshold, nullptr);
    std::vector<double> recall(sorted.size()), precision(sorted.size());
    double tp = 0, fp = 0;
    const double total_gt = static_cast<double>(gts.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (is_tp[i]) ++tp;
        else ++fp;
        recall[i] = tp / total_gt;
        precision[i] = tp / (tp + fp);
    }
    r.value = envelope_area(recall, precision);
    return r;
}

EvalResult map_range(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                     double operating_conf) {
    EvalResult r;
    for (int t = 0; t < 10; ++t) r.iou_thresholds.push_back(0.50 + 0.05 * t);

    std::set<int> classes;
    for (const GroundTruth& g : gts) classes.insert(g.cls);

    // AP per IoU threshold, averaged over classes that have ground truths.
    r.ap_per_iou.assign(r.iou_thresholds.size(), 0.0);
    r.map_defined = !classes.empty();
    if (r.map_defined) {
        std::map<int, std::vector<Detection>> dets_by_cls;
        std::map<int, std::vector<GroundTruth>> gts_by_cls;
        for (const Detection& d : dets) dets_by_cls[d.cls].push_back(d);
        for (const GroundTruth& g : gts) gts_by_cls[g.cls].push_back(g);
        for (std::size_t t = 0; t < r.iou_thresholds.size(); ++t) {
            double total = 0;
            for (int c : classes) {
                const auto dit = dets_by_cls.find(c);
                static const std::vector<Detection> kNoDets;
                const ApResult ap = average_precision(
                    dit == dets_by_cls.end() ? kNoDets : dit->second, gts_by_cls[c],
                    r.iou_thresholds[t]);
                total += ap.value;
            }
            r.ap_per_iou[t] = total / static_cast<double>(classes.size());
        }
        r.map50 = r.ap_per_iou[0];
        r.map5095 =
            std::accumulate(r.ap_per_iou.begin(), r.ap_per_iou.end(), 0.0) /
            static_cast<double>(r.ap_per_iou.size());
    }

    // Operating-point precision/recall at IoU 0.5, class-aware matching.
    std::vector<Detection> operating;
    for (const Detection& d : dets)
        if (d.score >= operating_conf) operating.push_back(d);
    std::map<std::int64_t, MatchCounts> per_image;
    std::int64_t tp = 0;
    {
        // Class-aware: match within each class, pool the counts.
        std::map<int, std::vector<Detection>> dets_by_cls;
        std::map<int, std::vector<GroundTruth>> gts_by_cls;
        for (const Detection& d : operating) dets_by_cls[d.cls].push_back(d);
        for (const GroundTruth& g : gts) gts_by_cls[g.cls].push_back(g);
        for (const auto& [c, cd] : dets_by_cls) {
            const auto git = gts_by_cls.find(c);
            static const std::vector<GroundTruth> kNoGts;
            const std::vector<Detection> sorted = sort_by_score(cd);
            const std::vector<char> is_tp = greedy_match(
                sorted, git == gts_by_cls.end() ? kNoGts : git->second, 0.5, &per_image);
            for (char v : is_tp) tp += v;
        }
    }
    for (const GroundTruth& g : gts) per_image[g.image]; // ensure images with only GT appear
    for (auto& [img, mc] : per_image) {
        ImageMatch m;
        m.image = img;
        m.tp = mc.tp;
        m.fp = mc.fp;
        for (const GroundTruth& g : gts)
            if (g.image == img) ++m.gt;
        r.per_image.push_back(m);
    }
    const std::int64_t nd = static_cast<std::int64_t>(operating.size());
    r.precision_defined = nd > 0;
    if (r.precision_defined)
        r.precision = static_cast<double>(tp) / static_cast<double>(nd);
    r.recall_defined = !gts.empty();
    if (r.recall_defined)
        r.recall = static_cast<double>(tp) / static_cast<double>(gts.size());
    return r;
}

std::string format_eval_kv(const EvalResult& r) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(6);
    os << "precision=";
    if (r.precision_defined) os << r.precision;
    else os << "absent";
    os << "\nrecall=";
    if (r.recall_defined) os << r.recall;
    else os << "absent";
    os << "\nmap50=";
    if (r.map_defined) os << r.map50;
    else os << "absent";
    os << "\nmap50_95=";
    if (r.map_defined) os << r.map5095;
    else os << "absent";
    os << "\n";
    for (std::size_t t = 0; t < r.iou_thresholds.size(); ++t) {
        os << "ap@";
        os.precision(2);
        os << r.iou_thresholds[t];
        os.precision(6);
        os << "=";
        if (r.map_defined) os << r.ap_per_iou[t];
        else os << "absent";
        os << "\n";
    }
    return os.str();
}

std::string format_eval_table(const EvalResult& r) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "metric        value\n";
    os << "------------  ------\n";
    auto row = [&](const char* name, bool defined, double v) {
        os << name;
        for (std::size_t i = std::string(name).size(); i < 14; ++i) os << ' ';
        if (defined) os << v;
        else os << "absent";
        os << "\n";
    };
    row("precision", r.precision_defined, r.precision);
    row("recall", r.recall_defined, r.recall);
    row("mAP@0.5", r.map_defined, r.map50);
    row("mAP@0.5:0.95", r.map_defined, r.map5095);
    os << "\nimage  tp  fp  gt\n";
    for (const ImageMatch& m : r.per_image)
        os << m.image << "  " << m.tp << "  " << m.fp << "  " << m.gt << "\n";
    return os.str();
}

FpsResult fps_benchmark(const Model& model, std::int64_t input_h, std::int64_t input_w,
                        int iterations, int warmup, double conf_threshold, double nms_iou) {
    if (iterations < 1) throw ShapeError("fps_benchmark: iterations must be >= 1");
    Rng rng(12345);
    const Tensor input =
        Tensor::rand_uniform({1, 1, input_h, input_w}, rng, 0.0, 1.0, model.config().dtype);
    auto run_once = [&]() {
        const std::vector<Tensor> preds = model.forward(input);
        const auto per_image = decode(preds, model.config(), conf_threshold, input_h, input_w);
        for (const auto& dets : per_image) (void)nms(dets, nms_iou);
    };
    for (int i = 0; i < warmup; ++i) run_once();
    std::vector<double> times(static_cast<std::size_t>(iterations));
    const auto t_all0 = std::chrono::steady_clock::now();
    for (int i = 0; i < iterations; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        run_once();
        const auto t1 = std::chrono::steady_clock::now();
        times[static_cast<std::size_t>(i)] =
            std::chrono::duration<double>(t1 - t0).count();
    }
    const auto t_all1 = std::chrono::steady_clock::now();

    FpsResult r;
    r.iterations = iterations;
    r.elapsed_seconds = std::chrono::duration<double>(t_all1 - t_all0).count();
    r.fps_mean = static_cast<double>(iterations) / r.elapsed_seconds;
    std::vector<double> sorted = times;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    r.median_iteration_seconds = (sorted.size() % 2 == 1)
                                     ? sorted[mid]
                                     : 0.5 * (sorted[mid - 1] + sorted[mid]);
    r.fps_median = r.median_iteration_seconds > 0 ? 1.0 / r.median_iteration_seconds : 0.0;
    return r;
}

} // namespace irnet
