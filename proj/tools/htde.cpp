// htde: train / eval / infer / gen-data / ablate for the hybrid-transformer
// depth estimator. Exit codes: 0 ok, 2 config, 3 data, 4 checkpoint.
#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "htdepth/trainer.hpp"

namespace fs = std::filesystem;
using namespace htd;

namespace {

// Every run records what it was asked to do before doing it.
void write_run_manifest(const std::string& subcommand, const Config& resolved,
                        uint64_t seed, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    nlohmann::json m;
    m["subcommand"] = subcommand;
    m["seed"] = seed;
    m["config_hash"] = resolved.hash_hex();
    m["out_dir"] = out_dir.string();
    nlohmann::json cfg = nlohmann::json::object();
    for (const auto& [k, v] : resolved.values()) cfg[k] = v;
    m["config"] = cfg;
    std::ofstream os(out_dir / "run_manifest.json");
    if (!os) throw DataError("cannot write run manifest in " + out_dir.string());
    os << m.dump(2) << "\n";
}

std::array<int, 4> parse_blocks(const std::string& s, const std::string& key) {
    std::array<int, 4> out{};
    std::istringstream is(s);
    std::string tok;
    size_t i = 0;
    while (std::getline(is, tok, ',')) {
        if (i >= 4) throw ConfigError(key + ": want 4 comma-separated ints, got '" + s + "'");
        try {
            out[i++] = std::stoi(tok);
        } catch (const std::exception&) {
            throw ConfigError(key + ": bad integer '" + tok + "'");
        }
    }
    if (i != 4) throw ConfigError(key + ": want 4 comma-separated ints, got '" + s + "'");
    return out;
}

TrainConfig train_config_from(const Config& c) {
    TrainConfig cfg;
    cfg.lr = c.get_double("train.lr", cfg.lr);
    cfg.lr_decay = c.get_double("train.lr_decay", cfg.lr_decay);
    cfg.steps = int(c.get_int("train.steps", cfg.steps));
    cfg.steps_per_epoch = int(c.get_int("train.steps_per_epoch", cfg.steps_per_epoch));
    cfg.checkpoint_every = int(c.get_int("train.checkpoint_every", cfg.checkpoint_every));
    cfg.seed = uint64_t(c.get_int("train.seed", 1));
    cfg.width = int(c.get_int("train.width", cfg.width));
    cfg.height = int(c.get_int("train.height", cfg.height));
    cfg.ablation = AblationFlags::net(int(c.get_int("train.net", 5)));
    cfg.decoder_blocks = int(c.get_int("train.decoder_blocks", cfg.decoder_blocks));
    cfg.encoder.base_channels = int(c.get_int("encoder.base_channels", cfg.encoder.base_channels));
    cfg.encoder.heads = int(c.get_int("encoder.heads", cfg.encoder.heads));
    if (c.has("encoder.tg_blocks"))
        cfg.encoder.tg_blocks_per_level = parse_blocks(c.get("encoder.tg_blocks", ""), "encoder.tg_blocks");
    cfg.encoder.lrl_blocks_per_level = int(c.get_int("encoder.lrl_blocks", cfg.encoder.lrl_blocks_per_level));
    cfg.encoder.hrl_blocks_per_stream = int(c.get_int("encoder.hrl_blocks", cfg.encoder.hrl_blocks_per_stream));
    cfg.loss.alpha = c.get_double("loss.alpha", cfg.loss.alpha);
    cfg.loss.beta = c.get_double("loss.beta", cfg.loss.beta);
    cfg.loss.scales = int(c.get_int("loss.scales", cfg.loss.scales));
    cfg.loss.enable_automask = c.get_bool("loss.automask", cfg.loss.enable_automask);
    cfg.loss.enable_min_reprojection = c.get_bool("loss.min_reprojection", cfg.loss.enable_min_reprojection);
    cfg.validate();
    return cfg;
}

std::vector<TrainBatch<float>> batches_from(const Config& c, const TrainConfig& cfg) {
    if (c.has("data.root")) {
        std::string root = c.get("data.root", "");
        std::string list = c.get("data.list", root + "/triplets.txt");
        return load_triplets<float>(root, list, cfg.width, cfg.height,
                                    c.get_bool("data.augment", false), uint32_t(cfg.seed));
    }
    int scenes = int(c.get_int("data.scenes", 4));
    int frames = int(c.get_int("data.frames_per_scene", 6));
    std::vector<TrainBatch<float>> out;
    for (int s = 0; s < scenes; ++s) {
        auto scene = make_default_scene(uint32_t(cfg.seed * 1000 + uint64_t(s)), frames,
                                        cfg.width, cfg.height);
        auto b = scene_triplets<float>(scene, cfg.height, cfg.width);
        out.insert(out.end(), b.begin(), b.end());
    }
    if (out.empty()) throw DataError("no training batches (check [data] settings)");
    return out;
}

// Replicate-pad an image tensor on the bottom/right to the next multiple of 8.
Tensor<float> pad_to_multiple_of_8(const Tensor<float>& t) {
    int H = t.dim(2), W = t.dim(3);
    int H8 = (H + 7) / 8 * 8, W8 = (W + 7) / 8 * 8;
    if (H8 == H && W8 == W) return t;
    std::cerr << "warning: input " << W << "x" << H << " not divisible by 8; padding to " << W8
              << "x" << H8 << " and cropping the output back\n";
    std::vector<float> v(size_t(3) * H8 * W8);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H8; ++y)
            for (int x = 0; x < W8; ++x)
                v[size_t((int64_t(c) * H8 + y) * W8 + x)] =
                    t.data()[size_t((int64_t(c) * H + std::min(y, H - 1)) * W + std::min(x, W - 1))];
    return Tensor<float>::from_data({1, 3, H8, W8}, std::move(v));
}

Tensor<float> crop_map(const Tensor<float>& m, int H, int W) {
    if (m.dim(2) == H && m.dim(3) == W) return m;
    std::vector<float> v(size_t(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) v[size_t(int64_t(y) * W + x)] = m.data()[size_t(int64_t(y) * m.dim(3) + x)];
    return Tensor<float>::from_data({1, 1, H, W}, std::move(v));
}

// 16-bit depth PNG convention: value = round(depth * 256).
constexpr double kDepthPngScale = 256.0;

void save_depth_png(const Tensor<float>& depth, const std::string& path) {
    Image16 img;
    img.width = depth.dim(3);
    img.height = depth.dim(2);
    img.pixels.resize(size_t(img.width) * img.height);
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        double v = std::clamp(double(depth.data()[i]) * kDepthPngScale, 0.0, 65535.0);
        img.pixels[i] = uint16_t(std::lround(v));
    }
    save_png16(img, path);
}

Tensor<float> load_depth_png(const std::string& path) {
    Image16 img = load_png16(path);
    std::vector<float> v(img.pixels.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = float(img.pixels[i] / kDepthPngScale);
    return Tensor<float>::from_data({1, 1, img.height, img.width}, std::move(v));
}

std::string frame_name(const char* stem, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03d.png", stem, i);
    return buf;
}

int cmd_train(const std::string& config_path, std::string out_dir, int64_t seed, int64_t steps) {
    Config c = Config::load(config_path);
    if (seed >= 0) c.set("train.seed", std::to_string(seed));
    if (steps > 0) c.set("train.steps", std::to_string(steps));
    TrainConfig cfg = train_config_from(c);
    if (out_dir.empty()) out_dir = "run";
    write_run_manifest("train", c, cfg.seed, out_dir);

    auto batches = batches_from(c, cfg);
    Trainer<float> tr(cfg);
    tr.train(batches, out_dir);
    write_loss_csv(tr.history, out_dir + "/loss.csv");
    std::cout << "trained " << tr.step << " steps; final loss " << tr.history.back().total << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& out_csv,
             bool no_median_scale) {
    fs::path out_path(out_csv);
    fs::path out_dir = out_path.has_parent_path() ? out_path.parent_path() : fs::path(".");
    Config resolved;
    resolved.set("eval.checkpoint", checkpoint);
    resolved.set("eval.data", data_dir);
    resolved.set("eval.median_scale", no_median_scale ? "false" : "true");
    write_run_manifest("eval", resolved, 0, out_dir);

    auto net = load_depth_net<float>(checkpoint);
    std::vector<std::string> frames;
    if (fs::is_directory(data_dir))
        for (const auto& e : fs::directory_iterator(data_dir)) {
            auto name = e.path().filename().string();
            if (name.rfind("frame_", 0) == 0 && e.path().extension() == ".png")
                frames.push_back(name);
        }
    std::sort(frames.begin(), frames.end());
    if (frames.empty()) throw DataError("no frame_*.png images in " + data_dir);

    NoGradGuard ng;
    std::ofstream os(out_csv);
    if (!os) throw DataError("cannot write " + out_csv);
    os << "image," << DepthMetrics::csv_header() << "\n";
    DepthMetrics agg;
    for (const auto& f : frames) {
        std::string depth_file = "depth" + f.substr(5);  // frame_XXX.png -> depth_XXX.png
        auto gt = load_depth_png((fs::path(data_dir) / depth_file).string());
        auto img = image_to_tensor<float>(load_png((fs::path(data_dir) / f).string()));
        auto disp = net.infer(pad_to_multiple_of_8(img));
        auto depth = disp_to_depth(crop_map(disp, gt.dim(2), gt.dim(3)), net.min_depth, net.max_depth);
        auto m = evaluate(depth, gt, 1e-3, 80.0, !no_median_scale);
        os << f << ',' << m.csv_row() << "\n";
        agg.abs_rel += m.abs_rel;
        agg.sq_rel += m.sq_rel;
        agg.rmse += m.rmse;
        agg.rmse_log += m.rmse_log;
        agg.a1 += m.a1;
        agg.a2 += m.a2;
        agg.a3 += m.a3;
    }
    double n = double(frames.size());
    agg.abs_rel /= n;
    agg.sq_rel /= n;
    agg.rmse /= n;
    agg.rmse_log /= n;
    agg.a1 /= n;
    agg.a2 /= n;
    agg.a3 /= n;
    os << "aggregate," << agg.csv_row() << "\n";
    std::cout << "aggregate abs_rel " << agg.abs_rel << ", a1 " << agg.a1 << " over "
              << frames.size() << " images\n";
    return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& image_path, const std::string& out_png,
              const std::string& preview_png) {
    fs::path out_path(out_png);
    fs::path out_dir = out_path.has_parent_path() ? out_path.parent_path() : fs::path(".");
    Config resolved;
    resolved.set("infer.checkpoint", checkpoint);
    resolved.set("infer.image", image_path);
    write_run_manifest("infer", resolved, 0, out_dir);

    auto net = load_depth_net<float>(checkpoint);
    auto img = image_to_tensor<float>(load_png(image_path));
    int H = img.dim(2), W = img.dim(3);
    NoGradGuard ng;
    auto disp = crop_map(net.infer(pad_to_multiple_of_8(img)), H, W);

    Image16 out;
    out.width = W;
    out.height = H;
    out.pixels.resize(size_t(W) * H);
    for (size_t i = 0; i < out.pixels.size(); ++i)
        out.pixels[i] = uint16_t(std::lround(std::clamp(double(disp.data()[i]), 0.0, 1.0) * 65535.0));
    save_png16(out, out_png);
    if (!preview_png.empty()) save_png(colorize_disparity(disp), preview_png);
    std::cout << "wrote " << out_png << " (" << W << "x" << H << ")\n";
    return 0;
}

int cmd_gen_data(const std::string& spec_path, int frames, int64_t seed, const std::string& out_dir) {
    SyntheticScene scene = spec_path.empty()
                               ? make_default_scene(uint32_t(seed < 0 ? 1 : seed), frames > 0 ? frames : 8)
                               : load_scene_spec(spec_path);
    if (frames > 0 && !spec_path.empty()) {
        if (frames > int(scene.trajectory.size()))
            throw ConfigError("--frames " + std::to_string(frames) + " exceeds the " +
                              std::to_string(scene.trajectory.size()) + "-frame trajectory in " + spec_path);
        scene.trajectory.resize(size_t(frames));
    }
    scene.validate();
    int n = int(scene.trajectory.size());

    Config resolved;
    resolved.set("gen-data.spec", spec_path.empty() ? "<default>" : spec_path);
    resolved.set("gen-data.frames", std::to_string(n));
    resolved.set("gen-data.seed", std::to_string(scene.seed));
    write_run_manifest("gen-data", resolved, scene.seed, out_dir);

    const auto& K = scene.intrinsics;
    std::ofstream poses(fs::path(out_dir) / "poses.txt");
    if (!poses) throw DataError("cannot write poses.txt in " + out_dir);
    poses.precision(9);
    std::ofstream triplets(fs::path(out_dir) / "triplets.txt");
    for (int i = 0; i < n; ++i) {
        auto [img, dep] = render<float>(scene, scene.trajectory[size_t(i)], K, K.height, K.width);
        save_png(tensor_to_image(img), (fs::path(out_dir) / frame_name("frame", i)).string());
        save_depth_png(dep, (fs::path(out_dir) / frame_name("depth", i)).string());
        Mat4 T = scene.trajectory[size_t(i)].to_matrix();  // camera-to-world, 3x4 row-major
        for (int r = 0; r < 3; ++r)
            for (int cidx = 0; cidx < 4; ++cidx) poses << T[size_t(r)][size_t(cidx)] << (r == 2 && cidx == 3 ? '\n' : ' ');
        if (i >= 1 && i + 1 < n)
            triplets << frame_name("frame", i - 1) << ' ' << frame_name("frame", i) << ' '
                     << frame_name("frame", i + 1) << '\n';
    }
    save_intrinsics(K, (fs::path(out_dir) / "intrinsics.txt").string());
    std::cout << "wrote " << n << " frames to " << out_dir << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir) {
    Config c = Config::load(config_path);
    TrainConfig cfg = train_config_from(c);
    write_run_manifest("ablate", c, cfg.seed, out_dir);
    auto batches = batches_from(c, cfg);
    auto rows = ablation_suite<float>(cfg, batches);
    write_ablation_csv(rows, out_dir + "/ablation.csv");
    for (const auto& r : rows)
        std::cout << "Net" << r.net << ": rmse " << r.metrics.rmse << ", abs_rel "
                  << r.metrics.abs_rel << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hybrid-transformer self-supervised monocular depth estimation"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint, data_dir, out_file, image_path, preview, spec_path;
    int64_t seed = -1, steps = -1;
    int frames = -1;
    bool no_median_scale = false;

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", config_path, "config file")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--seed", seed, "override train.seed");
    train->add_option("--steps", steps, "override train.steps");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against ground truth");
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    eval_cmd->add_option("--data", data_dir, "gen-data output directory")->required();
    eval_cmd->add_option("--out", out_file, "metrics CSV path")->required();
    eval_cmd->add_flag("--no-median-scale", no_median_scale, "disable median scaling");

    auto* infer = app.add_subcommand("infer", "single-image disparity inference");
    infer->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    infer->add_option("--image", image_path, "input PNG")->required();
    infer->add_option("--out", out_file, "16-bit disparity PNG")->required();
    infer->add_option("--preview", preview, "8-bit turbo-colormap preview PNG");

    auto* gen = app.add_subcommand("gen-data", "render a synthetic scene to disk");
    gen->add_option("--spec", spec_path, "scene spec file (omit for a built-in scene)");
    gen->add_option("--frames", frames, "frame count");
    gen->add_option("--seed", seed, "seed for the built-in scene");
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* ablate = app.add_subcommand("ablate", "train and evaluate Net1..Net5");
    ablate->add_option("--config", config_path, "config file")->required();
    ablate->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(train)) return cmd_train(config_path, out_dir, seed, steps);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(checkpoint, data_dir, out_file, no_median_scale);
        if (app.got_subcommand(infer)) return cmd_infer(checkpoint, image_path, out_file, preview);
        if (app.got_subcommand(gen)) return cmd_gen_data(spec_path, frames, seed, out_dir);
        if (app.got_subcommand(ablate)) return cmd_ablate(config_path, out_dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
