// irnet: synthesize datasets, train, evaluate, gradient-check and benchmark
// the infrared small-target detector from the command line.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "irnet/augment.hpp"
#include "irnet/checkpoint.hpp"
#include "irnet/dataset.hpp"
#include "irnet/errors.hpp"
#include "irnet/gradcheck_suite.hpp"
#include "irnet/image.hpp"
#include "irnet/labels.hpp"
#include "irnet/loss.hpp"
#include "irnet/model.hpp"
#include "irnet/postprocess.hpp"
#include "irnet/rng.hpp"
#include "irnet/synth.hpp"
#include "irnet/train.hpp"

namespace fs = std::filesystem;
using namespace irnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct RunConfig {
    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 7;
    int epochs = 50;
    int batch = 8; // desk default; the paper's 48 is available via --batch
    double lr = 1e-3;
    double conf = 0.15;
    double nms_iou = 0.45;
    std::string upsample = "none";
    std::string scales;      // override: comma-separated strides
    int dyhead_blocks = -1;  // override when >= 0
    double width_mult = -1;  // override when > 0

    // synth
    int count = 32;
    std::int64_t height = 64, width = 64;
    double size_min = 2.0, size_max = 6.0;
    int targets_min = 1, targets_max = 3;
    std::string label_format = "yolo";
    std::string split; // e.g. "0.6,0.2,0.2"

    // train
    std::string manifest;
    std::string val_manifest;
    std::string resume;
    bool augment = false;
    bool recompute_anchors = false;
    int eval_every = 1;

    // eval / detect / bench
    std::string ckpt;
    std::string image_path;
    int iters = 30;
};

std::vector<std::int64_t> parse_csv_i64(const std::string& csv, const char* what) {
    std::vector<std::int64_t> out;
    std::istringstream in(csv);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoll(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ParseError(std::string(what) + ": bad integer '" + tok + "'");
        }
    }
    return out;
}

std::array<double, 3> parse_ratios(const std::string& csv) {
    std::array<double, 3> r{};
    std::istringstream in(csv);
    std::string tok;
    int i = 0;
    while (std::getline(in, tok, ',')) {
        if (i >= 3) throw ParseError("--split: expected three ratios");
        try {
            r[static_cast<std::size_t>(i++)] = std::stod(tok);
        } catch (const std::exception&) {
            throw ParseError("--split: bad ratio '" + tok + "'");
        }
    }
    if (i != 3) throw ParseError("--split: expected three ratios");
    return r;
}

ModelConfig resolve_model_config(const RunConfig& rc) {
    ModelConfig cfg;
    if (!rc.config_path.empty()) cfg = parse_model_config(read_text_file(rc.config_path));
    if (!rc.scales.empty()) {
        cfg.strides.clear();
        for (std::int64_t s : parse_csv_i64(rc.scales, "--scales"))
            cfg.strides.push_back(static_cast<int>(s));
    }
    if (rc.dyhead_blocks >= 0) cfg.dyhead_blocks = rc.dyhead_blocks;
    if (rc.width_mult > 0) cfg.width_mult = rc.width_mult;
    cfg.seed = rc.seed;
    cfg.validate();
    return cfg;
}

std::vector<AnnotatedImage> load_dataset(const std::string& manifest_path,
                                         UpsampleMethod method) {
    std::vector<AnnotatedImage> images;
    for (const ManifestEntry& e : read_manifest(manifest_path))
        images.push_back(upsample4x(load_sample(e), method));
    return images;
}

struct EvalOutputs {
    EvalResult metrics;
    std::vector<std::vector<Detection>> per_image;
};

EvalOutputs evaluate(const Model& model, const std::vector<AnnotatedImage>& images,
                     double conf, double nms_iou) {
    EvalOutputs out;
    std::vector<Detection> all_dets;
    std::vector<GroundTruth> all_gts;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Tensor input = to_input_tensor({images[i]}, model.config().dtype);
        const std::vector<Tensor> preds = model.forward(input);
        std::vector<Detection> dets =
            nms(decode(preds, model.config(), conf, images[i].height, images[i].width)[0],
                nms_iou);
        for (Detection& d : dets) d.image = static_cast<std::int64_t>(i);
        for (const Box& b : images[i].boxes)
            all_gts.push_back({{b.x1, b.y1, b.x2, b.y2}, b.cls, static_cast<std::int64_t>(i)});
        all_dets.insert(all_dets.end(), dets.begin(), dets.end());
        out.per_image.push_back(std::move(dets));
    }
    out.metrics = map_range(all_dets, all_gts, conf);
    return out;
}

std::string format_detections_tsv(const std::vector<std::vector<Detection>>& per_image) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    for (std::size_t i = 0; i < per_image.size(); ++i)
        for (const Detection& d : per_image[i])
            os << i << "\t" << d.cls << "\t" << d.score << "\t" << d.box[0] << "\t" << d.box[1]
               << "\t" << d.box[2] << "\t" << d.box[3] << "\n";
    return os.str();
}

int cmd_synth(const RunConfig& rc) {
    const fs::path out(rc.out_dir);
    fs::create_directories(out / "images");
    fs::create_directories(out / "labels");

    std::vector<ManifestEntry> entries;
    for (int i = 0; i < rc.count; ++i) {
        SceneSpec spec;
        spec.height = rc.height;
        spec.width = rc.width;
        spec.min_targets = rc.targets_min;
        spec.max_targets = rc.targets_max;
        spec.min_size = rc.size_min;
        spec.max_size = rc.size_max;
        spec.seed = rc.seed + static_cast<std::uint64_t>(i);
        AnnotatedImage img = synthesize_scene(spec);

        char name[32];
        std::snprintf(name, sizeof(name), "scene_%04d", i);
        const std::string image_rel = std::string("images/") + name + ".pgm";
        img.source = std::string(name) + ".pgm";
        write_pgm((out / image_rel).string(), img);

        std::string label_rel;
        if (rc.label_format == "voc") {
            label_rel = std::string("labels/") + name + ".xml";
            write_text_file((out / label_rel).string(), format_voc_xml(img));
        } else if (rc.label_format == "yolo") {
            label_rel = std::string("labels/") + name + ".txt";
            write_text_file((out / label_rel).string(),
                            format_yolo_txt(img.boxes, img.width, img.height));
        } else {
            throw ParseError("--label-format must be yolo or voc, got '" + rc.label_format +
                             "'");
        }
        entries.push_back({image_rel, label_rel});
    }
    write_manifest((out / "manifest.tsv").string(), entries);

    if (!rc.split.empty()) {
        const SplitResult sr = split_dataset(entries.size(), parse_ratios(rc.split), rc.seed);
        if (!sr.warning.empty()) std::cerr << "warning: " << sr.warning << "\n";
        auto subset = [&](const std::vector<std::size_t>& idx) {
            std::vector<ManifestEntry> sub;
            for (std::size_t k : idx) sub.push_back(entries[k]);
            return sub;
        };
        write_manifest((out / "manifest_train.tsv").string(), subset(sr.train));
        write_manifest((out / "manifest_val.tsv").string(), subset(sr.val));
        write_manifest((out / "manifest_test.tsv").string(), subset(sr.test));
    }
    std::cout << "scenes=" << rc.count << "\nout=" << out.string() << "\n";
    return kExitOk;
}

int cmd_train(const RunConfig& rc) {
    if (rc.manifest.empty()) throw ParseError("--manifest is required for train");
    const UpsampleMethod up = parse_upsample_method(rc.upsample);
    const std::vector<AnnotatedImage> images = load_dataset(rc.manifest, up);
    if (images.empty()) throw ParseError("train: manifest " + rc.manifest + " is empty");
    const std::vector<AnnotatedImage> val_images =
        rc.val_manifest.empty() ? images : load_dataset(rc.val_manifest, up);

    ModelConfig cfg;
    Adam adam(AdamConfig{rc.lr, 0.9, 0.999, 1e-8});
    std::uint64_t step = 0;
    Model model;
    if (!rc.resume.empty()) {
        const Checkpoint ckpt = load_checkpoint(rc.resume);
        cfg = parse_model_config(ckpt.config_text);
        model = build_model(cfg);
        restore(model, &adam, ckpt);
        step = ckpt.step;
    } else {
        cfg = resolve_model_config(rc);
        if (rc.recompute_anchors) {
            std::vector<std::array<double, 2>> sizes;
            for (const AnnotatedImage& img : images)
                for (const Box& b : img.boxes) sizes.push_back({b.width(), b.height()});
            cfg.anchors = kmeans_anchors(sizes, 6, rc.seed);
            // keep k-means centers strictly positive and usably sized
            for (auto& a : cfg.anchors) {
                a[0] = std::max(a[0], 1.0);
                a[1] = std::max(a[1], 1.0);
            }
        }
        model = build_model(cfg);
    }

    const fs::path out(rc.out_dir);
    fs::create_directories(out);
    write_text_file((out / "model_config.txt").string(), serialize_model_config(cfg));

    std::vector<ImageTargets> base_targets;
    base_targets.reserve(images.size());
    for (const AnnotatedImage& img : images) base_targets.push_back(to_targets(img));

    std::ostringstream log;
    std::vector<double> loss_curve, map_curve;
    double best_map = -1.0;
    const int batch_size = std::max(1, rc.batch);

    for (int epoch = 1; epoch <= rc.epochs; ++epoch) {
        std::vector<std::size_t> order(images.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng erng(rc.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
        erng.shuffle(order.begin(), order.end());

        double sum_total = 0, sum_box = 0, sum_obj = 0, sum_cls = 0;
        int batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
            const std::size_t end = std::min(order.size(), begin + batch_size);
            std::vector<AnnotatedImage> batch_imgs;
            std::vector<ImageTargets> batch_targets;
            for (std::size_t k = begin; k < end; ++k) {
                if (rc.augment) {
                    AnnotatedImage aug = random_augment(images[order[k]], erng);
                    batch_targets.push_back(to_targets(aug));
                    batch_imgs.push_back(std::move(aug));
                } else {
                    batch_imgs.push_back(images[order[k]]);
                    batch_targets.push_back(base_targets[order[k]]);
                }
            }
            const Tensor input = to_input_tensor(batch_imgs, cfg.dtype);
            const TrainStepResult r = train_step(model, adam, input, batch_targets);
            if (!r.stepped)
                throw NumericError("train aborted at epoch " + std::to_string(epoch) +
                                   ", step " + std::to_string(step) + ": " + r.note +
                                   " (last good checkpoint retained)");
            ++step;
            sum_total += r.loss.total;
            sum_box += r.loss.box;
            sum_obj += r.loss.obj;
            sum_cls += r.loss.cls;
            ++batches;
        }
        const double mean_total = sum_total / batches;
        loss_curve.push_back(mean_total);

        std::string val_text = "absent";
        const bool do_eval =
            rc.eval_every > 0 && (epoch % rc.eval_every == 0 || epoch == rc.epochs);
        if (do_eval) {
            const EvalOutputs ev = evaluate(model, val_images, rc.conf, rc.nms_iou);
            if (ev.metrics.map_defined) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.6f", ev.metrics.map50);
                val_text = buf;
                map_curve.push_back(ev.metrics.map50);
                if (ev.metrics.map50 >= best_map) {
                    best_map = ev.metrics.map50;
                    save_checkpoint(snapshot(model, &adam, step), (out / "best.ckpt").string());
                }
            }
        }

        std::ostringstream line;
        line.setf(std::ios::fixed);
        line.precision(6);
        line << "epoch=" << epoch << " step=" << step << " loss=" << mean_total
             << " box=" << sum_box / batches << " obj=" << sum_obj / batches
             << " cls=" << sum_cls / batches << " val_map50=" << val_text;
        std::cout << line.str() << "\n";
        log << line.str() << "\n";

        save_checkpoint(snapshot(model, &adam, step), (out / "last.ckpt").string());
    }

    write_text_file((out / "train_log.txt").string(), log.str());
    write_pgm((out / "loss_curve.pgm").string(), render_curve(loss_curve, 128, 256));
    if (!map_curve.empty())
        write_pgm((out / "map_curve.pgm").string(), render_curve(map_curve, 128, 256));
    return kExitOk;
}

int cmd_eval(const RunConfig& rc) {
    if (rc.ckpt.empty()) throw ParseError("--ckpt is required for eval");
    if (rc.manifest.empty()) throw ParseError("--manifest is required for eval");
    const fs::path out(rc.out_dir);
    fs::create_directories(out / "overlays");

    const std::vector<ManifestEntry> entries = read_manifest(rc.manifest);
    if (entries.empty()) {
        std::cerr << "warning: empty manifest " << rc.manifest << "\n";
        write_text_file((out / "metrics.txt").string(), "samples=0\n");
        return kExitOk;
    }

    const Checkpoint ckpt = load_checkpoint(rc.ckpt);
    ModelConfig cfg = parse_model_config(ckpt.config_text);
    if (!rc.config_path.empty()) {
        const std::string given =
            serialize_model_config(parse_model_config(read_text_file(rc.config_path)));
        if (given != serialize_model_config(cfg))
            throw ParseError("eval: --config disagrees with the checkpoint's model config");
    }
    Model model = build_model(cfg);
    restore(model, nullptr, ckpt);

    const UpsampleMethod up = parse_upsample_method(rc.upsample);
    std::vector<AnnotatedImage> images;
    for (const ManifestEntry& e : entries) images.push_back(upsample4x(load_sample(e), up));

    const EvalOutputs ev = evaluate(model, images, rc.conf, rc.nms_iou);

    const std::string kv = format_eval_kv(ev.metrics);
    write_text_file((out / "metrics.txt").string(), kv + "\n" + format_eval_table(ev.metrics));
    write_text_file((out / "detections.tsv").string(), format_detections_tsv(ev.per_image));
    for (std::size_t i = 0; i < images.size(); ++i) {
        std::vector<Box> pred_boxes;
        for (const Detection& d : ev.per_image[i])
            pred_boxes.push_back({d.cls, d.box[0], d.box[1], d.box[2], d.box[3]});
        char name[32];
        std::snprintf(name, sizeof(name), "overlay_%04zu.pgm", i);
        write_pgm((out / "overlays" / name).string(), overlay_boxes(images[i], pred_boxes));
    }
    std::cout << kv;
    return kExitOk;
}

int cmd_gradcheck(const RunConfig& rc) {
    const std::vector<GradCheckReport> reports = gradcheck_suite(rc.seed);
    std::cout << format_gradcheck_table(reports);
    const bool ok = gradcheck_suite_passes(reports);
    std::cout << (ok ? "gradcheck=pass" : "gradcheck=FAIL") << "\n";
    return ok ? kExitOk : kExitNumeric;
}

int cmd_bench(const RunConfig& rc) {
    Model model;
    if (!rc.ckpt.empty()) {
        const Checkpoint ckpt = load_checkpoint(rc.ckpt);
        model = build_model(parse_model_config(ckpt.config_text));
        restore(model, nullptr, ckpt);
    } else {
        model = build_model(resolve_model_config(rc));
    }
    const int iters = std::max(rc.iters, 30); // spec floor: >=30 timed iterations
    const FpsResult r =
        fps_benchmark(model, rc.height, rc.width, iters, 5, rc.conf, rc.nms_iou);
    std::cout.setf(std::ios::fixed);
    std::cout.precision(6);
    std::cout << "input=" << rc.width << "x" << rc.height << "\n"
              << "iterations=" << r.iterations << "\n"
              << "elapsed_seconds=" << r.elapsed_seconds << "\n"
              << "median_iteration_seconds=" << r.median_iteration_seconds << "\n"
              << "fps_median=" << r.fps_median << "\n"
              << "fps_mean=" << r.fps_mean << "\n";
    return kExitOk;
}

int cmd_detect(const RunConfig& rc) {
    if (rc.ckpt.empty()) throw ParseError("--ckpt is required for detect");
    if (rc.image_path.empty()) throw ParseError("--image is required for detect");
    const Checkpoint ckpt = load_checkpoint(rc.ckpt);
    Model model = build_model(parse_model_config(ckpt.config_text));
    restore(model, nullptr, ckpt);

    AnnotatedImage img =
        upsample4x(read_pgm(rc.image_path), parse_upsample_method(rc.upsample));
    const Tensor input = to_input_tensor({img}, model.config().dtype);
    const std::vector<Detection> dets =
        nms(decode(model.forward(input), model.config(), rc.conf, img.height, img.width)[0],
            rc.nms_iou);

    std::cout.setf(std::ios::fixed);
    std::cout.precision(3);
    for (const Detection& d : dets)
        std::cout << d.cls << " " << d.score << " " << d.box[0] << " " << d.box[1] << " "
                  << d.box[2] << " " << d.box[3] << "\n";
    if (!rc.out_dir.empty()) {
        fs::create_directories(rc.out_dir);
        std::vector<Box> pred_boxes;
        for (const Detection& d : dets)
            pred_boxes.push_back({d.cls, d.box[0], d.box[1], d.box[2], d.box[3]});
        write_pgm((fs::path(rc.out_dir) / "detect_overlay.pgm").string(),
                  overlay_boxes(img, pred_boxes));
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    RunConfig rc;
    CLI::App app{"infrared small-target detector"};
    app.require_subcommand(1);

    // shared flags (spec: --config --seed --out --epochs --batch --lr --conf
    // --nms-iou --upsample --scales --dyhead-blocks)
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", rc.config_path, "model config file (key=value)");
        sub->add_option("--seed", rc.seed, "RNG seed");
        sub->add_option("--out", rc.out_dir, "output directory");
        sub->add_option("--conf", rc.conf, "confidence threshold (default 0.15)");
        sub->add_option("--nms-iou", rc.nms_iou, "NMS IoU threshold (default 0.45)");
        sub->add_option("--upsample", rc.upsample, "none|nearest|bilinear|bicubic");
        sub->add_option("--scales", rc.scales, "detection strides, comma separated");
        sub->add_option("--dyhead-blocks", rc.dyhead_blocks, "DyHead blocks in the stack");
        sub->add_option("--width-mult", rc.width_mult, "backbone width multiplier");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth);
    synth->add_option("--n", rc.count, "number of scenes");
    synth->add_option("--height", rc.height, "scene height");
    synth->add_option("--width", rc.width, "scene width");
    synth->add_option("--size-min", rc.size_min, "min target size (px)");
    synth->add_option("--size-max", rc.size_max, "max target size (px)");
    synth->add_option("--targets-min", rc.targets_min, "min targets per scene");
    synth->add_option("--targets-max", rc.targets_max, "max targets per scene");
    synth->add_option("--label-format", rc.label_format, "yolo|voc");
    synth->add_option("--split", rc.split, "train,val,test ratios (e.g. 0.6,0.2,0.2)");

    CLI::App* train = app.add_subcommand("train", "train on a manifest");
    add_common(train);
    train->add_option("--manifest", rc.manifest, "training manifest");
    train->add_option("--val-manifest", rc.val_manifest,
                      "validation manifest (default: training manifest)");
    train->add_option("--epochs", rc.epochs, "epochs");
    train->add_option("--batch", rc.batch, "batch size (desk default 8)");
    train->add_option("--lr", rc.lr, "Adam learning rate");
    train->add_option("--resume", rc.resume, "resume from checkpoint");
    train->add_flag("--augment", rc.augment, "random augmentation chain per sample");
    train->add_flag("--recompute-anchors", rc.recompute_anchors,
                    "k-means anchors over the training boxes");
    train->add_option("--eval-every", rc.eval_every, "epochs between val evals (0 = never)");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    add_common(eval);
    eval->add_option("--ckpt", rc.ckpt, "checkpoint path");
    eval->add_option("--manifest", rc.manifest, "evaluation manifest");

    CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference op matrix");
    add_common(grad);

    CLI::App* bench = app.add_subcommand("bench", "throughput benchmark");
    add_common(bench);
    bench->add_option("--ckpt", rc.ckpt, "checkpoint path (default: fresh model)");
    bench->add_option("--height", rc.height, "input height");
    bench->add_option("--width", rc.width, "input width");
    bench->add_option("--iters", rc.iters, "timed iterations (floor 30)");

    CLI::App* detect = app.add_subcommand("detect", "run detection on one image");
    add_common(detect);
    detect->add_option("--ckpt", rc.ckpt, "checkpoint path");
    detect->add_option("--image", rc.image_path, "input PGM image");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(rc);
        if (train->parsed()) return cmd_train(rc);
        if (eval->parsed()) return cmd_eval(rc);
        if (grad->parsed()) return cmd_gradcheck(rc);
        if (bench->parsed()) return cmd_bench(rc);
        if (detect->parsed()) return cmd_detect(rc);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitData;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
