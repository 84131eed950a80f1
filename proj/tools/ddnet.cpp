// Command-line front end: data generation, two-stage training, prediction,
// metric evaluation, polar transform utilities, equivariance verification,
// and a gradient-check suite. Exit code 0 iff every internal check passed.

#include <CLI11.hpp>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ddnet/checkpoint.hpp"
#include "ddnet/config.hpp"
#include "ddnet/data.hpp"
#include "ddnet/equivariance.hpp"
#include "ddnet/metrics.hpp"
#include "ddnet/model.hpp"
#include "ddnet/train.hpp"

namespace fs = std::filesystem;
using namespace ddnet;

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string item_name(const char* prefix, std::size_t i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%04zu.%s", prefix, i, ext);
    return buf;
}

RunConfig load_config(const std::string& config_file,
                      const std::vector<std::string>& overrides) {
    RunConfig cfg;
    if (!config_file.empty()) cfg = RunConfig::from_file(config_file);
    for (const std::string& kv : overrides) {
        std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got '" + kv +
                                        "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

std::string mask_name_of(const std::string& image_name) {
    std::string n = image_name;
    auto pos = n.rfind("img_");
    if (pos != std::string::npos) n.replace(pos, 4, "mask_");
    pos = n.rfind(".ppm");
    if (pos != std::string::npos) n.replace(pos, 4, ".pgm");
    return n;
}

std::vector<Sample> load_dataset(const std::string& dir) {
    auto manifest = read_manifest(dir + "/manifest.csv");
    std::vector<Sample> out;
    for (const auto& e : manifest) {
        Sample s;
        s.image = load_ppm(dir + "/images/" + e.filename);
        s.mask = load_pgm_mask(dir + "/masks/" + mask_name_of(e.filename));
        s.true_cdr = e.true_cdr;
        out.push_back(std::move(s));
    }
    if (out.empty()) throw std::runtime_error("empty dataset in " + dir);
    return out;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << content;
}

// Trace the region boundary of `region` in color (r,g,b) over image bytes.
void draw_contour(std::vector<unsigned char>& rgb, int h, int w,
                  const std::vector<std::uint8_t>& region, unsigned char r,
                  unsigned char g, unsigned char b) {
    auto at = [&](int i, int j) {
        return (i >= 0 && i < h && j >= 0 && j < w)
                   ? region[static_cast<std::size_t>(i) * w + j]
                   : std::uint8_t{0};
    };
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            if (at(i, j) && (!at(i - 1, j) || !at(i + 1, j) || !at(i, j - 1) ||
                             !at(i, j + 1))) {
                std::size_t p = (static_cast<std::size_t>(i) * w + j) * 3;
                rgb[p] = r;
                rgb[p + 1] = g;
                rgb[p + 2] = b;
            }
}

void save_overlay(const std::string& path, const Tensor& image,
                  const SegMask& gt, const SegMask& pred) {
    const int h = image.dim(1), w = image.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<unsigned char> rgb(plane * 3);
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c)
            rgb[i * 3 + static_cast<std::size_t>(c)] = static_cast<unsigned char>(
                std::lround(std::clamp(image.data()[static_cast<std::size_t>(c) * plane + i],
                                       0.0, 1.0) * 255.0));
    // ground truth in red, prediction in green; disc and cup contours each
    draw_contour(rgb, h, w, region_of(gt, Region::Disc), 255, 0, 0);
    draw_contour(rgb, h, w, region_of(gt, Region::Cup), 255, 0, 0);
    draw_contour(rgb, h, w, region_of(pred, Region::Disc), 0, 255, 0);
    draw_contour(rgb, h, w, region_of(pred, Region::Cup), 0, 255, 0);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()),
              static_cast<std::streamsize>(rgb.size()));
}

std::string metrics_csv(const MetricsReport& rep) {
    std::string csv = "index,e_disc,e_cup,e_rim,ble_disc,ble_cup,cdr_error\n";
    for (std::size_t i = 0; i < rep.per_image.size(); ++i) {
        const ImageMetrics& m = rep.per_image[i];
        csv += std::to_string(i) + "," + num(m.e_disc) + "," + num(m.e_cup) +
               "," + num(m.e_rim) + "," + num(m.ble_disc) + "," +
               num(m.ble_cup) + "," + num(m.cdr_error) + "\n";
    }
    csv += "mean," + num(rep.mean_e_disc) + "," + num(rep.mean_e_cup) + "," +
           num(rep.mean_e_rim) + "," + num(rep.mean_ble_disc) + "," +
           num(rep.mean_ble_cup) + "," + num(rep.mean_cdr_error) + "\n";
    return csv;
}

int cmd_generate(const RunConfig& cfg, const std::string& out_dir, int count,
                 std::uint64_t seed) {
    fs::create_directories(out_dir + "/images");
    fs::create_directories(out_dir + "/masks");
    SynthParams p;
    p.size = cfg.size;
    p.seed = seed;
    auto samples = generate(p, count);
    std::vector<ManifestEntry> manifest;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::string img = item_name("img", i, "ppm");
        save_ppm(out_dir + "/images/" + img, samples[i].image);
        save_pgm_mask(out_dir + "/masks/" + item_name("mask", i, "pgm"),
                      samples[i].mask);
        manifest.push_back({img, seed + i, samples[i].true_cdr});
    }
    write_manifest(out_dir + "/manifest.csv", manifest);
    std::cout << "wrote " << samples.size() << " samples to " << out_dir << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir,
              const std::string& out_dir) {
    auto data = load_dataset(data_dir);
    fs::create_directories(out_dir);
    std::cout << "resolved config:\n" << cfg.resolved();
    TwoStageResult r = train_two_stage(data, cfg);
    save_checkpoint(out_dir + "/checkpoint.bin", r.model.named_parameters());
    write_text(out_dir + "/config.txt", cfg.resolved());
    std::string csv = "stage,iteration,loss\n";
    for (std::size_t i = 0; i < r.cart_curve.size(); ++i)
        csv += "a_cartesian," + std::to_string(i) + "," + num(r.cart_curve[i]) + "\n";
    for (std::size_t i = 0; i < r.polar_curve.size(); ++i)
        csv += "a_polar," + std::to_string(i) + "," + num(r.polar_curve[i]) + "\n";
    for (std::size_t i = 0; i < r.stage_b_curve.size(); ++i)
        csv += "b," + std::to_string(i) + "," + num(r.stage_b_curve[i]) + "\n";
    write_text(out_dir + "/loss.csv", csv);
    if (!r.stage_b_curve.empty())
        std::cout << "final stage-B loss: " << num(r.stage_b_curve.back()) << "\n";
    std::cout << "checkpoint written to " << out_dir << "/checkpoint.bin\n";
    return 0;
}

DdnetModel load_model(const std::string& checkpoint,
                      const std::string& model_config) {
    std::string cfg_path = model_config.empty()
                               ? (fs::path(checkpoint).parent_path() / "config.txt").string()
                               : model_config;
    RunConfig cfg = RunConfig::from_file(cfg_path);
    DdnetModel model = init_model(encoder_config_of(cfg), 0);
    load_checkpoint_into(checkpoint, model.named_parameters());
    return model;
}

int cmd_predict(const std::string& data_dir, const std::string& checkpoint,
                const std::string& model_config, const std::string& out_dir,
                bool overlay) {
    DdnetModel model = load_model(checkpoint, model_config);
    auto data = load_dataset(data_dir);
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < data.size(); ++i) {
        Tensor x({1, 3, data[i].image.dim(1), data[i].image.dim(2)});
        x.data() = data[i].image.data();
        tape_clear();
        SegMask pred = predict(x, model);
        save_pgm_mask(out_dir + "/" + item_name("pred", i, "pgm"), pred);
        if (overlay)
            save_overlay(out_dir + "/" + item_name("overlay", i, "ppm"),
                         data[i].image, data[i].mask, pred);
    }
    tape_clear();
    std::cout << "wrote " << data.size() << " predictions to " << out_dir << "\n";
    return 0;
}

int cmd_metrics(const std::string& data_dir, const std::string& pred_dir,
                const std::string& out_file) {
    auto data = load_dataset(data_dir);
    std::vector<SegMask> preds, gts;
    std::vector<double> cdrs;
    for (std::size_t i = 0; i < data.size(); ++i) {
        preds.push_back(load_pgm_mask(pred_dir + "/" + item_name("pred", i, "pgm")));
        gts.push_back(data[i].mask);
        cdrs.push_back(data[i].true_cdr);
    }
    MetricsReport rep = evaluate(preds, gts, &cdrs);
    std::string csv = metrics_csv(rep);
    if (out_file.empty())
        std::cout << csv;
    else
        write_text(out_file, csv);
    std::cout << "mean E_disc=" << num(rep.mean_e_disc)
              << " E_cup=" << num(rep.mean_e_cup)
              << " CDR_err=" << num(rep.mean_cdr_error) << "\n";
    return 0;
}

int cmd_transform(const std::string& in_file, const std::string& out_file,
                  bool inverse, bool is_mask) {
    if (is_mask) {
        SegMask m = load_pgm_mask(in_file);
        PolarGridSpec spec = PolarGridSpec::defaults(m.h, m.w);
        save_pgm_mask(out_file, inverse ? inverse_polar_transform_labels(m, spec)
                                        : polar_transform_labels(m, spec));
    } else {
        Tensor img = load_ppm(in_file);
        PolarGridSpec spec = PolarGridSpec::defaults(img.dim(1), img.dim(2));
        Tensor batched({1, 3, img.dim(1), img.dim(2)});
        batched.data() = img.data();
        Tensor t = inverse ? inverse_polar_transform(batched, spec)
                           : polar_transform(batched, spec);
        Tensor flat({3, t.dim(2), t.dim(3)});
        flat.data() = t.data();
        save_ppm(out_file, flat);
    }
    std::cout << "wrote " << out_file << "\n";
    return 0;
}

int cmd_verify_equivariance(int seeds, int size) {
    EncoderConfig cfg;
    cfg.valid_padding = true;
    bool all_pass = true;
    std::printf("%-8s %-6s %-6s %-14s %-14s %-10s %s\n", "property", "seed",
                "stage", "max_err", "mean_err", "tol", "status");
    auto show = [&](std::uint64_t seed, const EquivarianceReport& r) {
        all_pass = all_pass && r.pass;
        std::printf("%-8s %-6" PRIu64 " %-6d %-14.3e %-14.3e %-10.0e %s\n",
                    r.property.c_str(), seed, r.stage, r.max_abs_error,
                    r.mean_abs_error, r.tolerance, r.pass ? "pass" : "FAIL");
    };
    for (std::uint64_t seed = 0; seed < static_cast<std::uint64_t>(seeds); ++seed) {
        auto enc = init_encoder(cfg, seed);
        std::mt19937_64 rng(seed + 5000);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        Tensor x({1, 3, size, size});
        for (double& v : x.data()) v = dist(rng);
        int turns = 1 + static_cast<int>(seed % 3);
        for (const auto& r : check_eq4(enc, cfg, x, 4, -4)) show(seed, r);
        show(seed, check_eq5(x, turns));
        for (const auto& r : check_eq6(enc, cfg, x, turns)) show(seed, r);
    }
    std::printf("equivariance: %s\n", all_pass ? "all checks passed" : "FAILURES");
    return all_pass ? 0 : 1;
}

int cmd_grad_check(int seeds) {
    bool all_pass = true;
    for (std::uint64_t seed = 0; seed < static_cast<std::uint64_t>(seeds); ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        EncoderConfig ecfg;
        ecfg.channels = {8, 16};
        DdnetModel model = init_model(ecfg, seed);
        Tensor x({1, 3, 16, 16});
        for (double& v : x.data()) v = dist(rng);
        SegMask target(16, 16);
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j)
                target.at(i, j) = static_cast<std::uint8_t>((i / 6) % 3);
        auto loss = [&](const Tensor&) { return ce_loss(forward(x, model), target); };
        double worst = 0;
        for (auto& [name, t] : model.named_parameters())
            if (t.numel() <= 64) worst = std::max(worst, grad_check(loss, t));
        double err_x = grad_check([&](const Tensor& t) {
            return ce_loss(forward(t, model), target);
        }, x);
        worst = std::max(worst, err_x);
        bool pass = worst < 1e-4;
        all_pass = all_pass && pass;
        std::printf("seed %" PRIu64 ": max grad error %.3e %s\n", seed, worst,
                    pass ? "pass" : "FAIL");
    }
    std::printf("grad-check: %s\n", all_pass ? "all checks passed" : "FAILURES");
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-domain optic disc/cup segmentation toolkit"};
    app.require_subcommand(1);

    std::string config_file, data_dir, out_dir = ".", out_file, checkpoint;
    std::string model_config, in_file;
    std::vector<std::string> overrides;
    int count = 10, seeds = 10, size = 64;
    std::uint64_t seed = 0;
    bool overlay = false, inverse = false, is_mask = false;

    app.add_option("--config", config_file, "key=value config file")
        ->check(CLI::ExistingFile);
    app.add_option("--set", overrides, "config override key=value (repeatable)");

    auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
    gen->add_option("--count", count, "number of samples");
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* train = app.add_subcommand("train", "two-stage training");
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", out_dir, "output directory")->required();

    auto* predict = app.add_subcommand("predict", "write predicted masks");
    predict->add_option("--data", data_dir, "dataset directory")->required();
    predict->add_option("--checkpoint", checkpoint, "model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    predict->add_option("--model-config", model_config,
                        "architecture config (default: config.txt next to the checkpoint)");
    predict->add_option("--out", out_dir, "output directory")->required();
    predict->add_flag("--overlay", overlay, "also write contour overlays");

    auto* metrics = app.add_subcommand("metrics", "score predictions");
    metrics->add_option("--data", data_dir, "dataset directory")->required();
    metrics->add_option("--pred", out_dir, "prediction directory")->required();
    metrics->add_option("--out", out_file, "report CSV (default: stdout)");

    auto* transform = app.add_subcommand("transform", "polar transform a file");
    transform->add_option("--in", in_file, "input PPM/PGM")->required()
        ->check(CLI::ExistingFile);
    transform->add_option("--out", out_file, "output file")->required();
    transform->add_flag("--inverse", inverse, "apply the inverse transform");
    transform->add_flag("--mask", is_mask, "treat input as a PGM label mask");

    auto* verify = app.add_subcommand("verify-equivariance",
                                      "run the equivariance checks");
    verify->add_option("--seeds", seeds, "number of random seeds");
    verify->add_option("--size", size, "input size");

    auto* gradcheck = app.add_subcommand("grad-check", "run the gradient checks");
    gradcheck->add_option("--seeds", seeds, "number of random seeds");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = load_config(config_file, overrides);
        if (gen->parsed()) return cmd_generate(cfg, out_dir, count, seed);
        if (train->parsed()) return cmd_train(cfg, data_dir, out_dir);
        if (predict->parsed())
            return cmd_predict(data_dir, checkpoint, model_config, out_dir, overlay);
        if (metrics->parsed()) return cmd_metrics(data_dir, out_dir, out_file);
        if (transform->parsed())
            return cmd_transform(in_file, out_file, inverse, is_mask);
        if (verify->parsed()) return cmd_verify_equivariance(seeds, size);
        if (gradcheck->parsed()) return cmd_grad_check(seeds);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
