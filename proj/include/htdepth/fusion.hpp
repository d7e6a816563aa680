#pragma once

// Mask-guided multi-scale fusion. Per level: the two local branches are
// gated by sigmoid spatial masks, all three branches go through parallel
// dilated convolutions (rates 1,3,5,7) merged by 1x1, then pairwise
// concat + 1x1 fusion: first TG with LRL, then HRL.

#include "blocks.hpp"
#include "encoder.hpp"

namespace htd {

enum class FusionMode { Atrous, Sum };

inline constexpr std::array<int, 4> kAtrousRates = {1, 3, 5, 7};

namespace fusion_detail {

// Shrink a conv's random weights and stamp identity taps so a fresh fusion
// level starts out close to plain branch addition; the mixing weights are
// then learned rather than imposed at random scale from step one.
template <typename S>
void toward_identity(Conv2dLayer<S>& l, double keep, const std::vector<int>& identity_srcs) {
    auto& w = l.weight.data();
    for (auto& v : w) v = S(double(v) * keep);
    const auto& sh = l.weight.shape();
    int cout = int(sh[0]), cin = int(sh[1]), k = int(sh[2]), center = (k / 2) * k + k / 2;
    for (int o = 0; o < cout; ++o)
        for (int src : identity_srcs)
            w[size_t(((o * cin) + (src * cout + o)) * k * k + center)] += S(1);
}

}  // namespace fusion_detail

template <typename S>
struct AtrousMultiscale {
    std::array<Conv2dLayer<S>, 4> branches;  // 3x3, padding = rate
    Conv2dLayer<S> merge;                    // 1x1: 4C -> C

    static AtrousMultiscale init(Rng& rng, int channels) {
        AtrousMultiscale a;
        for (size_t i = 0; i < 4; ++i) {
            int r = kAtrousRates[i];
            a.branches[i] = Conv2dLayer<S>::init(rng, channels, channels, 3, 1, r, r);
            fusion_detail::toward_identity(a.branches[i], 0.1, i == 0 ? std::vector<int>{0} : std::vector<int>{});
        }
        a.merge = Conv2dLayer<S>::init(rng, channels, 4 * channels, 1);
        fusion_detail::toward_identity(a.merge, 0.1, {0});
        return a;
    }

    Tensor<S> forward(const Tensor<S>& y) const {
        std::vector<Tensor<S>> outs;
        outs.reserve(4);
        for (const auto& b : branches) outs.push_back(b.forward(y));
        return merge.forward(concat(outs, 1));
    }

    void collect(NamedTensors<S>& out, const std::string& prefix) {
        for (size_t i = 0; i < 4; ++i)
            branches[i].collect(out, prefix + ".rate" + std::to_string(kAtrousRates[i]));
        merge.collect(out, prefix + ".merge");
    }
};

template <typename S>
struct SpatialMaskResult {
    Tensor<S> masked;
    Tensor<S> mask;
};

template <typename S>
SpatialMaskResult<S> spatial_mask(const Tensor<S>& y, const Conv2dLayer<S>& mask_conv) {
    auto mask = sigmoid(mask_conv.forward(y));
    return {mul(y, mask), mask};
}

template <typename S>
struct FusionLevel {
    int channels = 0;
    bool use_mask = true;
    Conv2dLayer<S> lrl_mask_conv, hrl_mask_conv;  // 3x3
    AtrousMultiscale<S> tg_atrous, lrl_atrous, hrl_atrous;
    Conv2dLayer<S> fuse_tg_lrl, fuse_with_hrl;  // 1x1: 2C -> C each

    static FusionLevel init(Rng& rng, int channels, bool use_mask) {
        FusionLevel f;
        f.channels = channels;
        f.use_mask = use_mask;
        if (use_mask) {
            // Zero weights + positive bias: masks open near 1 (the gated
            // pipeline starts out unmasked) and the gates consume no RNG
            // draws, so the shared layers match the unmasked variant.
            for (auto* mc : {&f.lrl_mask_conv, &f.hrl_mask_conv}) {
                mc->weight = Tensor<S>::zeros({channels, channels, 3, 3}, true);
                mc->bias = Tensor<S>::filled({channels}, S(4), true);
                mc->stride = 1;
                mc->padding = 1;
            }
        }
        f.tg_atrous = AtrousMultiscale<S>::init(rng, channels);
        f.lrl_atrous = AtrousMultiscale<S>::init(rng, channels);
        f.hrl_atrous = AtrousMultiscale<S>::init(rng, channels);
        f.fuse_tg_lrl = Conv2dLayer<S>::init(rng, channels, 2 * channels, 1);
        f.fuse_with_hrl = Conv2dLayer<S>::init(rng, channels, 2 * channels, 1);
        fusion_detail::toward_identity(f.fuse_tg_lrl, 0.1, {0, 1});
        fusion_detail::toward_identity(f.fuse_with_hrl, 0.1, {0, 1});
        return f;
    }

    Tensor<S> forward(const Tensor<S>& tg, const Tensor<S>& lrl, const Tensor<S>& hrl,
                      Tensor<S>* lrl_mask_out = nullptr, Tensor<S>* hrl_mask_out = nullptr) const {
        if (tg.shape() != lrl.shape() || tg.shape() != hrl.shape())
            throw DimensionError("fuse_level: branch shapes differ: " + shape_str(tg.shape()) +
                                 " / " + shape_str(lrl.shape()) + " / " + shape_str(hrl.shape()));
        Tensor<S> lrl_in = lrl, hrl_in = hrl;
        if (use_mask) {
            auto lm = spatial_mask(lrl, lrl_mask_conv);
            auto hm = spatial_mask(hrl, hrl_mask_conv);
            lrl_in = lm.masked;
            hrl_in = hm.masked;
            if (lrl_mask_out) *lrl_mask_out = lm.mask;
            if (hrl_mask_out) *hrl_mask_out = hm.mask;
        }
        auto z_tg = tg_atrous.forward(tg);  // the global branch is never masked
        auto z_lrl = lrl_atrous.forward(lrl_in);
        auto z_hrl = hrl_atrous.forward(hrl_in);
        auto first = fuse_tg_lrl.forward(concat<S>({z_tg, z_lrl}, 1));
        return fuse_with_hrl.forward(concat<S>({first, z_hrl}, 1));
    }

    void collect(NamedTensors<S>& out, const std::string& prefix) {
        if (use_mask) {
            lrl_mask_conv.collect(out, prefix + ".lrl_mask");
            hrl_mask_conv.collect(out, prefix + ".hrl_mask");
        }
        tg_atrous.collect(out, prefix + ".tg_atrous");
        lrl_atrous.collect(out, prefix + ".lrl_atrous");
        hrl_atrous.collect(out, prefix + ".hrl_atrous");
        fuse_tg_lrl.collect(out, prefix + ".fuse_tg_lrl");
        fuse_with_hrl.collect(out, prefix + ".fuse_hrl");
    }
};

// Sum-fusion ablation: plain addition of the three branches.
template <typename S>
Tensor<S> fuse_level_sum(const Tensor<S>& tg, const Tensor<S>& lrl, const Tensor<S>& hrl) {
    if (tg.shape() != lrl.shape() || tg.shape() != hrl.shape())
        throw DimensionError("fuse_level_sum: branch shapes differ");
    return add(add(tg, lrl), hrl);
}

}  // namespace htd
