#pragma once

// Training objective: SSIM+L1 photometric error, edge-aware smoothness on
// mean-normalized disparity, per-pixel minimum reprojection over source
// views, stationary-pixel auto-masking, multi-scale aggregation.

#include "decoder.hpp"
#include "geometry.hpp"

namespace htd {

struct LossConfig {
    double alpha = 0.85;       // SSIM weight in the photometric term
    double beta = 1e-3;        // smoothness weight
    int ssim_window = 3;       // 3x3 mean pooling
    int scales = 4;
    bool enable_automask = true;
    bool enable_min_reprojection = true;
    double min_depth = 0.1;
    double max_depth = 100.0;

    void validate() const {
        if (alpha < 0 || alpha > 1) throw ConfigError("loss: alpha must be in [0,1]");
        if (beta < 0) throw ConfigError("loss: beta must be >= 0");
        if (ssim_window != 3) throw ConfigError("loss: only the 3x3 ssim window is supported");
    }
};

// Per-pixel SSIM in [-1,1] with 3x3 mean pooling, C1=0.01^2, C2=0.03^2.
template <typename S>
Tensor<S> ssim(const Tensor<S>& a, const Tensor<S>& b) {
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    auto mu_a = avg_pool3x3_same(a);
    auto mu_b = avg_pool3x3_same(b);
    auto sigma_a = sub(avg_pool3x3_same(mul(a, a)), mul(mu_a, mu_a));
    auto sigma_b = sub(avg_pool3x3_same(mul(b, b)), mul(mu_b, mu_b));
    auto cov = sub(avg_pool3x3_same(mul(a, b)), mul(mu_a, mu_b));
    auto num = mul(add_scalar(mul_scalar(mul(mu_a, mu_b), 2.0), C1), add_scalar(mul_scalar(cov, 2.0), C2));
    auto den = mul(add_scalar(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), C1), add_scalar(add(sigma_a, sigma_b), C2));
    return div(num, den);
}

// R_p = (alpha/2)(1 - SSIM) + (1-alpha)|i0 - i_warp|, channel-averaged to
// one map per pixel.
template <typename S>
Tensor<S> photometric(const Tensor<S>& i0, const Tensor<S>& i_warp, double alpha) {
    auto ssim_term = mean_channels(add_scalar(neg(ssim(i0, i_warp)), 1.0));
    auto l1_term = mean_channels(htd::abs(sub(i0, i_warp)));
    return add(mul_scalar(ssim_term, alpha * 0.5), mul_scalar(l1_term, 1.0 - alpha));
}

// Edge-aware smoothness on mean-normalized disparity; forward differences,
// image gradients channel-averaged.
template <typename S>
Tensor<S> smoothness(const Tensor<S>& disp, const Tensor<S>& image) {
    int W = disp.dim(3), H = disp.dim(2);
    auto d = div(disp, add_scalar(mean_all(disp), 1e-6));
    auto dx = htd::abs(sub(slice(d, 3, 1, W - 1), slice(d, 3, 0, W - 1)));
    auto dy = htd::abs(sub(slice(d, 2, 1, H - 1), slice(d, 2, 0, H - 1)));
    auto ix = mean_channels(htd::abs(sub(slice(image, 3, 1, W - 1), slice(image, 3, 0, W - 1))));
    auto iy = mean_channels(htd::abs(sub(slice(image, 2, 1, H - 1), slice(image, 2, 0, H - 1))));
    return add(mean_all(mul(dx, htd::exp(neg(ix)))), mean_all(mul(dy, htd::exp(neg(iy)))));
}

template <typename S>
struct LossDiagnostics {
    Tensor<S> total;
    double photometric = 0;
    double smoothness = 0;
    double masked_fraction = 0;  // fraction of pixels the auto-mask keeps
};

// Full objective over all scales. `sources` and `pose_vecs` pair up: pose
// vector i is T_{0->i} for source i.
template <typename S>
LossDiagnostics<S> total_loss(const Tensor<S>& target, const std::vector<Tensor<S>>& sources,
                              const DisparitySet<S>& disps, const std::vector<Tensor<S>>& pose_vecs,
                              const CameraIntrinsics& K, const LossConfig& cfg) {
    cfg.validate();
    if (sources.size() != pose_vecs.size() || sources.empty())
        throw ContractError("total_loss: need one pose per source view");
    int H = target.dim(2), W = target.dim(3);

    std::vector<Tensor<S>> transforms;
    for (const auto& pv : pose_vecs) transforms.push_back(pose_to_matrix(pv));

    // Identity reprojection (unwarped sources) for the stationary-pixel mask.
    Tensor<S> min_identity;
    if (cfg.enable_automask) {
        std::vector<Tensor<S>> ids;
        for (const auto& src : sources) ids.push_back(photometric(target, detach(src), cfg.alpha));
        min_identity = add_scalar(minimum(ids), 1e-5);  // tie-break on the identity term
    }

    LossDiagnostics<S> out;
    std::vector<Tensor<S>> scale_losses;
    double photo_acc = 0, smooth_acc = 0, mask_acc = 0;
    for (int s = 0; s < cfg.scales; ++s) {
        auto d_full = upsample_to(disps.disp[static_cast<size_t>(s)], H, W);
        auto depth = disp_to_depth(d_full, cfg.min_depth, cfg.max_depth);

        std::vector<Tensor<S>> rp;
        for (size_t i = 0; i < sources.size(); ++i) {
            auto warp = synthesize_view(sources[i], depth, transforms[i], K);
            rp.push_back(photometric(target, warp, cfg.alpha));
        }
        Tensor<S> combined;
        if (cfg.enable_min_reprojection) {
            combined = minimum(rp);
        } else {
            combined = rp[0];
            for (size_t i = 1; i < rp.size(); ++i) combined = add(combined, rp[i]);
            combined = mul_scalar(combined, 1.0 / double(rp.size()));
        }

        Tensor<S> photo_term;
        double kept = 1.0;
        if (cfg.enable_automask) {
            auto mask = less_than(detach(combined), min_identity);
            auto mask_sum = sum_all(mask);
            kept = double(mask_sum.item()) / double(combined.numel());
            photo_term = div(sum_all(mul(combined, mask)), add_scalar(mask_sum, 1e-7));
        } else {
            photo_term = mean_all(combined);
        }

        // Smoothness on the raw scale: image pooled down to match.
        Tensor<S> img_s = target;
        for (int p = 0; p < s; ++p) img_s = avg_pool2x2(img_s);
        auto smooth_term = smoothness(disps.disp[static_cast<size_t>(s)], img_s);

        scale_losses.push_back(add(photo_term, mul_scalar(smooth_term, cfg.beta / double(1 << s))));
        photo_acc += double(photo_term.item());
        smooth_acc += double(smooth_term.item());
        mask_acc += kept;
    }
    Tensor<S> total = scale_losses[0];
    for (size_t i = 1; i < scale_losses.size(); ++i) total = add(total, scale_losses[i]);
    out.total = mul_scalar(total, 1.0 / double(scale_losses.size()));
    out.photometric = photo_acc / cfg.scales;
    out.smoothness = smooth_acc / cfg.scales;
    out.masked_fraction = mask_acc / cfg.scales;
    return out;
}

}  // namespace htd
