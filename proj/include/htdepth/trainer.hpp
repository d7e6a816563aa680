#pragma once

// Training loop: Adam updates over the depth and pose networks, geometric
// learning-rate decay, loss-history CSV, manifest-format checkpoints, and
// the five-configuration ablation suite.

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "config.hpp"
#include "data.hpp"
#include "loss.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace htd {

template <typename S>
class Adam {
public:
    static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

    explicit Adam(NamedTensors<S> params) : params_(std::move(params)) {
        // Moments are kept in S so a checkpoint round trip is lossless.
        for (auto& [name, t] : params_) {
            m_.emplace_back(t.numel(), S(0));
            v_.emplace_back(t.numel(), S(0));
        }
    }

    void zero_grad() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    void step(double lr) {
        ++t_;
        double bc1 = 1.0 - std::pow(kBeta1, double(t_));
        double bc2 = 1.0 - std::pow(kBeta2, double(t_));
        for (size_t p = 0; p < params_.size(); ++p) {
            auto& w = params_[p].second.data();
            const auto g = params_[p].second.grad();
            for (size_t i = 0; i < w.size(); ++i) {
                double grad = g[i];
                m_[p][i] = S(kBeta1 * double(m_[p][i]) + (1 - kBeta1) * grad);
                v_[p][i] = S(kBeta2 * double(v_[p][i]) + (1 - kBeta2) * grad * grad);
                w[i] -= S(lr * (double(m_[p][i]) / bc1) / (std::sqrt(double(v_[p][i]) / bc2) + kEps));
            }
        }
    }

    int64_t steps_taken() const { return t_; }

    // Optimizer state as named tensors (for checkpointing).
    NamedTensors<S> state_tensors() const {
        NamedTensors<S> out;
        for (size_t p = 0; p < params_.size(); ++p) {
            Shape shape = params_[p].second.shape();
            std::vector<S> m(m_[p].begin(), m_[p].end()), v(v_[p].begin(), v_[p].end());
            out.push_back({"adam.m." + params_[p].first, Tensor<S>::from_data(shape, std::move(m))});
            out.push_back({"adam.v." + params_[p].first, Tensor<S>::from_data(shape, std::move(v))});
        }
        return out;
    }

    void restore_state(const std::map<std::string, Tensor<S>>& state, int64_t steps) {
        t_ = steps;
        for (size_t p = 0; p < params_.size(); ++p) {
            auto m_it = state.find("adam.m." + params_[p].first);
            auto v_it = state.find("adam.v." + params_[p].first);
            if (m_it == state.end() || v_it == state.end())
                throw DataError("checkpoint missing optimizer state for '" + params_[p].first + "'");
            m_[p].assign(m_it->second.data().begin(), m_it->second.data().end());
            v_[p].assign(v_it->second.data().begin(), v_it->second.data().end());
        }
    }

private:
    NamedTensors<S> params_;
    std::vector<std::vector<S>> m_, v_;
    int64_t t_ = 0;
};

struct TrainConfig {
    double lr = 1e-4;
    double lr_decay = 0.9;      // geometric, applied once per epoch
    int steps = 200;
    int steps_per_epoch = 100;  // epoch boundary for the decay schedule
    int checkpoint_every = 0;   // 0: only at the end
    uint64_t seed = 1;
    int width = 128, height = 64;
    EncoderConfig encoder;
    AblationFlags ablation;
    LossConfig loss;
    int decoder_blocks = 1;
    std::vector<int> pose_widths = {16, 32, 64, 128};

    void validate() const {
        if (lr <= 0) throw ConfigError("train: lr must be positive");
        if (lr_decay <= 0 || lr_decay > 1) throw ConfigError("train: lr_decay must be in (0,1]");
        if (steps < 1) throw ConfigError("train: steps must be positive");
        ablation.validate();
        loss.validate();
    }

    double lr_at_step(int step) const {  // step is 0-based
        return lr * std::pow(lr_decay, double(step / steps_per_epoch));
    }
};

struct StepRecord {
    int step = 0;
    double total = 0, photometric = 0, smoothness = 0, lr = 0, masked_fraction = 0;
};

inline void write_loss_csv(const std::vector<StepRecord>& history, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write loss history: " + path);
    os << "step,total,photometric,smoothness,lr\n";
    os.precision(8);
    for (const auto& r : history)
        os << r.step << ',' << r.total << ',' << r.photometric << ',' << r.smoothness << ',' << r.lr
           << '\n';
}

template <typename S>
struct Trainer {
    TrainConfig cfg;
    DepthNet<S> depth_net;
    PoseNet<S> pose_net;
    NamedTensors<S> params;
    std::unique_ptr<Adam<S>> opt;
    std::vector<StepRecord> history;
    int step = 0;

    explicit Trainer(const TrainConfig& c) : cfg(c) {
        cfg.validate();
        Rng rng(cfg.seed);
        depth_net = DepthNet<S>::init(rng, cfg.encoder, cfg.ablation, cfg.decoder_blocks);
        pose_net = PoseNet<S>::init(rng, cfg.pose_widths);
        depth_net.collect(params, "depth");
        pose_net.collect(params, "pose");
        opt = std::make_unique<Adam<S>>(params);
    }

    // One optimizer step on one batch; returns the diagnostics.
    LossDiagnostics<S> train_step(const TrainBatch<S>& batch) {
        opt->zero_grad();
        auto disps = depth_net.forward(batch.net_target);
        std::vector<Tensor<S>> poses;
        for (const auto& src : batch.net_sources) poses.push_back(pose_net.forward(batch.net_target, src));
        auto diag = total_loss(batch.target, batch.sources, disps, poses, batch.intrinsics, cfg.loss);

        double total = double(diag.total.item());
        if (std::isnan(total) || std::isinf(total)) {
            std::string term = std::isnan(diag.photometric) ? "photometric"
                               : std::isnan(diag.smoothness) ? "smoothness"
                                                             : "total";
            throw ContractError("NaN loss at step " + std::to_string(step + 1) + " in term " + term);
        }
        diag.total.backward();
        double lr = cfg.lr_at_step(step);
        opt->step(lr);
        history.push_back({step + 1, total, diag.photometric, diag.smoothness, lr,
                           diag.masked_fraction});
        ++step;
        return diag;
    }

    // Full run over a batch list, cycling; checkpoints into out_dir when set.
    void train(const std::vector<TrainBatch<S>>& batches, const std::string& out_dir = "") {
        if (batches.empty()) throw DataError("train: no batches");
        while (step < cfg.steps) {
            train_step(batches[size_t(step) % batches.size()]);
            if (!out_dir.empty() && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 &&
                step < cfg.steps)
                save_checkpoint(out_dir + "/checkpoint_" + std::to_string(step));
        }
        if (!out_dir.empty()) save_checkpoint(out_dir + "/checkpoint_final");
    }

    void save_checkpoint(const std::string& dir) const {
        std::filesystem::create_directories(dir);
        NamedTensors<S> all = params;
        auto state = opt->state_tensors();
        all.insert(all.end(), state.begin(), state.end());
        save_manifest(all, dir);

        nlohmann::json meta;
        meta["step"] = step;
        meta["seed"] = cfg.seed;
        meta["lr"] = cfg.lr;
        meta["width"] = cfg.width;
        meta["height"] = cfg.height;
        meta["base_channels"] = cfg.encoder.base_channels;
        meta["heads"] = cfg.encoder.heads;
        meta["tg_blocks"] = cfg.encoder.tg_blocks_per_level;
        meta["lrl_blocks"] = cfg.encoder.lrl_blocks_per_level;
        meta["hrl_blocks"] = cfg.encoder.hrl_blocks_per_stream;
        meta["decoder_blocks"] = cfg.decoder_blocks;
        meta["pose_widths"] = cfg.pose_widths;
        meta["ablation"] = {{"use_tg", cfg.ablation.use_tg},
                            {"use_lrl", cfg.ablation.use_lrl},
                            {"use_hrl", cfg.ablation.use_hrl},
                            {"sum_fusion", cfg.ablation.fusion_mode == FusionMode::Sum},
                            {"use_mask", cfg.ablation.use_mask}};
        std::ofstream os(dir + "/meta.json");
        if (!os) throw DataError("cannot write checkpoint metadata: " + dir);
        os << meta.dump(2) << "\n";
    }

    void load_checkpoint(const std::string& dir) {
        std::ifstream meta_is(dir + "/meta.json");
        if (!meta_is) throw DataError("checkpoint metadata missing: " + dir + "/meta.json");
        nlohmann::json meta = nlohmann::json::parse(meta_is, nullptr, false);
        if (meta.is_discarded()) throw DataError("corrupt checkpoint metadata: " + dir);

        auto stored = load_manifest<S>(dir);
        for (auto& [name, t] : params) {
            auto it = stored.find(name);
            if (it == stored.end())
                throw DataError("checkpoint missing parameter '" + name + "' in " + dir);
            if (it->second.shape() != t.shape())
                throw DataError("checkpoint shape mismatch for '" + name + "' in " + dir);
            t.data() = it->second.data();
        }
        step = meta.value("step", 0);
        opt->restore_state(stored, step);
    }
};

inline nlohmann::json read_checkpoint_meta(const std::string& dir) {
    std::ifstream is(dir + "/meta.json");
    if (!is) throw CheckpointError("checkpoint metadata missing: " + dir + "/meta.json");
    nlohmann::json meta = nlohmann::json::parse(is, nullptr, false);
    if (meta.is_discarded()) throw CheckpointError("corrupt checkpoint metadata: " + dir);
    return meta;
}

inline TrainConfig config_from_meta(const nlohmann::json& meta) {
    TrainConfig cfg;
    cfg.seed = meta.value("seed", uint64_t(1));
    cfg.width = meta.value("width", 128);
    cfg.height = meta.value("height", 64);
    cfg.encoder.base_channels = meta.value("base_channels", 32);
    cfg.encoder.heads = meta.value("heads", 4);
    if (meta.contains("tg_blocks"))
        for (size_t i = 0; i < 4; ++i) cfg.encoder.tg_blocks_per_level[i] = meta["tg_blocks"][i];
    cfg.encoder.lrl_blocks_per_level = meta.value("lrl_blocks", 2);
    cfg.encoder.hrl_blocks_per_stream = meta.value("hrl_blocks", 4);
    cfg.decoder_blocks = meta.value("decoder_blocks", 1);
    if (meta.contains("pose_widths")) cfg.pose_widths = meta["pose_widths"].get<std::vector<int>>();
    if (meta.contains("ablation")) {
        const auto& ab = meta["ablation"];
        cfg.ablation.use_tg = ab.value("use_tg", true);
        cfg.ablation.use_lrl = ab.value("use_lrl", true);
        cfg.ablation.use_hrl = ab.value("use_hrl", true);
        cfg.ablation.fusion_mode = ab.value("sum_fusion", false) ? FusionMode::Sum : FusionMode::Atrous;
        cfg.ablation.use_mask = ab.value("use_mask", false);
    }
    return cfg;
}

// Rebuilds just the depth network from a checkpoint; pose weights may be
// absent (inference never needs them).
template <typename S>
DepthNet<S> load_depth_net(const std::string& dir) {
    auto cfg = config_from_meta(read_checkpoint_meta(dir));
    Rng rng(cfg.seed);
    auto net = DepthNet<S>::init(rng, cfg.encoder, cfg.ablation, cfg.decoder_blocks);
    NamedTensors<S> params;
    net.collect(params, "depth");
    std::map<std::string, Tensor<S>> stored;
    try {
        stored = load_manifest<S>(dir);
    } catch (const DataError& e) {
        throw CheckpointError(e.what());
    }
    for (auto& [name, t] : params) {
        auto it = stored.find(name);
        if (it == stored.end()) throw CheckpointError("checkpoint missing parameter '" + name + "' in " + dir);
        if (it->second.shape() != t.shape())
            throw CheckpointError("checkpoint shape mismatch for '" + name + "' in " + dir);
        t.data() = it->second.data();
    }
    return net;
}

// Ablation matrix over Net1..Net5 at identical seed and data; evaluates each
// trained model against ground-truth depth.
template <typename S>
struct AblationRow {
    int net = 0;
    int64_t param_count = 0;
    DepthMetrics metrics;
};

template <typename S>
std::vector<AblationRow<S>> ablation_suite(const TrainConfig& base,
                                           const std::vector<TrainBatch<S>>& batches) {
    std::vector<AblationRow<S>> rows;
    for (int net = 1; net <= 5; ++net) {
        TrainConfig cfg = base;
        cfg.ablation = AblationFlags::net(net);
        Trainer<S> tr(cfg);
        tr.train(batches);

        AblationRow<S> row;
        row.net = net;
        row.param_count = tr.depth_net.param_count();
        DepthMetrics agg;
        int count = 0;
        NoGradGuard no_grad;
        for (const auto& b : batches) {
            if (!b.gt_depth) continue;
            auto disp = tr.depth_net.infer(b.net_target);
            auto depth = disp_to_depth(disp, cfg.loss.min_depth, cfg.loss.max_depth);
            auto m = evaluate(depth, *b.gt_depth, 1e-3, 80.0, /*median_scale=*/true);
            agg.abs_rel += m.abs_rel;
            agg.sq_rel += m.sq_rel;
            agg.rmse += m.rmse;
            agg.rmse_log += m.rmse_log;
            agg.a1 += m.a1;
            agg.a2 += m.a2;
            agg.a3 += m.a3;
            ++count;
        }
        if (count == 0) throw ContractError("ablation_suite: no ground-truth depth in batches");
        agg.abs_rel /= count;
        agg.sq_rel /= count;
        agg.rmse /= count;
        agg.rmse_log /= count;
        agg.a1 /= count;
        agg.a2 /= count;
        agg.a3 /= count;
        row.metrics = agg;
        rows.push_back(row);
    }
    return rows;
}

template <typename S>
void write_ablation_csv(const std::vector<AblationRow<S>>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write ablation table: " + path);
    os << "net,params,abs_rel,sq_rel,rmse,rmse_log\n";
    os.precision(8);
    for (const auto& r : rows)
        os << "Net" << r.net << ',' << r.param_count << ',' << r.metrics.abs_rel << ','
           << r.metrics.sq_rel << ',' << r.metrics.rmse << ',' << r.metrics.rmse_log << '\n';
}

}  // namespace htd
