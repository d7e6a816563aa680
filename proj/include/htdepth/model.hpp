#pragma once

// Full depth network: enabled encoder branches, per-level fusion, decoder.
// Branch toggles, sum-vs-atrous fusion, and mask toggle reproduce the
// ablation configurations Net1..Net5.

#include <optional>

#include "decoder.hpp"
#include "encoder.hpp"
#include "fusion.hpp"

namespace htd {

struct AblationFlags {
    bool use_tg = true;
    bool use_lrl = true;
    bool use_hrl = true;
    FusionMode fusion_mode = FusionMode::Atrous;
    bool use_mask = true;

    int branch_count() const { return int(use_tg) + int(use_lrl) + int(use_hrl); }

    void validate() const {
        if (branch_count() == 0) throw ConfigError("at least one encoder branch must be enabled");
        if (fusion_mode == FusionMode::Sum && branch_count() != 3)
            throw ConfigError("sum fusion requires all three encoder branches");
    }

    static AblationFlags net(int id) {
        switch (id) {
            case 1: return {true, false, false, FusionMode::Atrous, false};
            case 2: return {true, true, false, FusionMode::Atrous, false};
            case 3: return {true, true, true, FusionMode::Atrous, false};
            case 4: return {true, true, true, FusionMode::Sum, false};
            case 5: return {true, true, true, FusionMode::Atrous, true};
            default: throw ConfigError("ablation id must be 1..5");
        }
    }
};

// Fusion for two enabled branches: optional mask on the local one, atrous on
// both, single pairwise 1x1.
template <typename S>
struct PairFusionLevel {
    bool mask_second = false;
    Conv2dLayer<S> mask_conv;
    AtrousMultiscale<S> first_atrous, second_atrous;
    Conv2dLayer<S> fuse;

    static PairFusionLevel init(Rng& rng, int channels, bool mask_second) {
        PairFusionLevel f;
        f.mask_second = mask_second;
        if (mask_second) f.mask_conv = Conv2dLayer<S>::init(rng, channels, channels, 3, 1, 1);
        f.first_atrous = AtrousMultiscale<S>::init(rng, channels);
        f.second_atrous = AtrousMultiscale<S>::init(rng, channels);
        f.fuse = Conv2dLayer<S>::init(rng, channels, 2 * channels, 1);
        return f;
    }

    Tensor<S> forward(const Tensor<S>& a, const Tensor<S>& b) const {
        Tensor<S> b_in = mask_second ? spatial_mask(b, mask_conv).masked : b;
        return fuse.forward(concat<S>({first_atrous.forward(a), second_atrous.forward(b_in)}, 1));
    }

    void collect(NamedTensors<S>& out, const std::string& prefix) {
        if (mask_second) mask_conv.collect(out, prefix + ".mask");
        first_atrous.collect(out, prefix + ".a_atrous");
        second_atrous.collect(out, prefix + ".b_atrous");
        fuse.collect(out, prefix + ".fuse");
    }
};

template <typename S>
struct DepthNet {
    EncoderConfig enc_cfg;
    AblationFlags flags;
    double min_depth = 0.1, max_depth = 100.0;

    std::optional<GlobalEncoder<S>> tg;
    std::optional<LrlEncoder<S>> lrl;
    std::optional<HrlEncoder<S>> hrl;
    std::vector<FusionLevel<S>> fusion3;      // three-branch atrous fusion per level
    std::vector<PairFusionLevel<S>> fusion2;  // two-branch fusion per level
    Decoder<S> decoder;

    static DepthNet init(Rng& rng, const EncoderConfig& enc_cfg, const AblationFlags& flags,
                         int decoder_blocks = 1) {
        flags.validate();
        DepthNet m;
        m.enc_cfg = enc_cfg;
        m.flags = flags;
        if (flags.use_tg) m.tg = GlobalEncoder<S>::init(rng, enc_cfg);
        if (flags.use_lrl) m.lrl = LrlEncoder<S>::init(rng, enc_cfg);
        if (flags.use_hrl) m.hrl = HrlEncoder<S>::init(rng, enc_cfg);
        if (flags.fusion_mode == FusionMode::Atrous) {
            if (flags.branch_count() == 3)
                for (int e = 1; e <= 4; ++e)
                    m.fusion3.push_back(FusionLevel<S>::init(rng, enc_cfg.level_channels(e), flags.use_mask));
            else if (flags.branch_count() == 2)
                for (int e = 1; e <= 4; ++e)
                    m.fusion2.push_back(PairFusionLevel<S>::init(rng, enc_cfg.level_channels(e),
                                                                 /*mask_second=*/flags.use_mask));
        }
        m.decoder = Decoder<S>::init(rng, enc_cfg, decoder_blocks);
        return m;
    }

    FeaturePyramid<S> encode(const Tensor<S>& image) const {
        std::vector<FeaturePyramid<S>> pyramids;
        if (tg) pyramids.push_back(tg->forward(image));
        if (lrl) pyramids.push_back(lrl->forward(image));
        if (hrl) pyramids.push_back(hrl->forward(image));

        if (pyramids.size() == 1) return pyramids[0];

        FeaturePyramid<S> fused;
        for (int e = 1; e <= 4; ++e) {
            size_t i = static_cast<size_t>(e - 1);
            if (flags.fusion_mode == FusionMode::Sum) {
                fused.levels[i] = fuse_level_sum(pyramids[0].levels[i], pyramids[1].levels[i],
                                                 pyramids[2].levels[i]);
            } else if (pyramids.size() == 3) {
                fused.levels[i] = fusion3[i].forward(pyramids[0].levels[i], pyramids[1].levels[i],
                                                     pyramids[2].levels[i]);
            } else {
                fused.levels[i] = fusion2[i].forward(pyramids[0].levels[i], pyramids[1].levels[i]);
            }
        }
        return fused;
    }

    DisparitySet<S> forward(const Tensor<S>& image) const { return decoder.forward(encode(image)); }
    Tensor<S> infer(const Tensor<S>& image) const { return decoder.infer(encode(image)); }

    void collect(NamedTensors<S>& out, const std::string& prefix = "depth") {
        if (tg) tg->collect(out, prefix + ".tg");
        if (lrl) lrl->collect(out, prefix + ".lrl");
        if (hrl) hrl->collect(out, prefix + ".hrl");
        for (size_t i = 0; i < fusion3.size(); ++i)
            fusion3[i].collect(out, prefix + ".fusion.l" + std::to_string(i + 1));
        for (size_t i = 0; i < fusion2.size(); ++i)
            fusion2[i].collect(out, prefix + ".fusion.l" + std::to_string(i + 1));
        decoder.collect(out, prefix + ".dec");
    }

    int64_t param_count() {
        NamedTensors<S> all;
        collect(all);
        int64_t n = 0;
        for (auto& [name, t] : all) n += t.numel();
        return n;
    }
};

}  // namespace htd
