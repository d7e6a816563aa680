#pragma once

// The three parallel encoder branches. Each emits a four-level pyramid with
// C*e channels at H/2^(e-1) x W/2^(e-1).

#include <array>

#include "blocks.hpp"

namespace htd {

struct EncoderConfig {
    int base_channels = 32;
    std::array<int, 4> tg_blocks_per_level = {2, 2, 2, 4};
    int lrl_blocks_per_level = 2;
    int hrl_blocks_per_stream = 4;
    int heads = 4;

    int level_channels(int level) const { return base_channels * level; }  // level in 1..4

    void check_input(int H, int W) const {
        if (H % 8 != 0 || W % 8 != 0)
            throw ConfigError("encoder input " + std::to_string(W) + "x" + std::to_string(H) +
                              " must be divisible by 8");
    }
};

template <typename S>
struct FeaturePyramid {
    std::array<Tensor<S>, 4> levels;  // levels[e-1] has C*e channels at H/2^(e-1)

    const Tensor<S>& level(int e) const { return levels[static_cast<size_t>(e - 1)]; }
};

// ---------------------------------------------------------------------------
// Global transformer branch: stem conv, transformer blocks per level,
// pixel-unshuffle downsampling with 1x1 channel remap between levels.
// ---------------------------------------------------------------------------

template <typename S>
struct GlobalEncoder {
    EncoderConfig cfg;
    Conv2dLayer<S> stem;
    std::array<std::vector<TransformerBlock<S>>, 4> blocks;
    std::array<Conv2dLayer<S>, 3> down_remap;  // 4*C*e -> C*(e+1)

    static GlobalEncoder init(Rng& rng, const EncoderConfig& cfg) {
        GlobalEncoder e;
        e.cfg = cfg;
        int C = cfg.base_channels;
        e.stem = Conv2dLayer<S>::init(rng, C, 3, 3, 1, 1);
        for (int lvl = 1; lvl <= 4; ++lvl) {
            int ch = cfg.level_channels(lvl);
            int heads = std::min(cfg.heads, ch);
            for (int b = 0; b < cfg.tg_blocks_per_level[static_cast<size_t>(lvl - 1)]; ++b)
                e.blocks[static_cast<size_t>(lvl - 1)].push_back(TransformerBlock<S>::init(rng, ch, heads));
            if (lvl < 4)
                e.down_remap[static_cast<size_t>(lvl - 1)] =
                    Conv2dLayer<S>::init(rng, cfg.level_channels(lvl + 1), 4 * ch, 1);
        }
        return e;
    }

    FeaturePyramid<S> forward(const Tensor<S>& image) const {
        cfg.check_input(image.dim(2), image.dim(3));
        FeaturePyramid<S> out;
        Tensor<S> x = stem.forward(image);
        for (int lvl = 1; lvl <= 4; ++lvl) {
            for (const auto& blk : blocks[static_cast<size_t>(lvl - 1)]) x = blk.forward(x);
            out.levels[static_cast<size_t>(lvl - 1)] = x;
            if (lvl < 4)
                x = down_remap[static_cast<size_t>(lvl - 1)].forward(pixel_unshuffle(x, 2));
        }
        return out;
    }

    void collect(NamedTensors<S>& out, const std::string& prefix) {
        stem.collect(out, prefix + ".stem");
        for (int lvl = 0; lvl < 4; ++lvl) {
            for (size_t b = 0; b < blocks[static_cast<size_t>(lvl)].size(); ++b)
                blocks[static_cast<size_t>(lvl)][b].collect(
                    out, prefix + ".l" + std::to_string(lvl + 1) + ".blk" + std::to_string(b));
            if (lvl < 3) down_remap[static_cast<size_t>(lvl)].collect(out, prefix + ".down" + std::to_string(lvl + 1));
        }
    }
};

// ---------------------------------------------------------------------------
// Low-resolution local branch: stem is level 1; each later level is a strided
// pool followed by residual conv blocks.
// ---------------------------------------------------------------------------

template <typename S>
struct LrlEncoder {
    EncoderConfig cfg;
    Conv2dLayer<S> stem;
    std::array<std::vector<ResidualConvBlock<S>>, 3> blocks;  // levels 2..4

    static LrlEncoder init(Rng& rng, const EncoderConfig& cfg) {
        LrlEncoder e;
        e.cfg = cfg;
        e.stem = Conv2dLayer<S>::init(rng, cfg.base_channels, 3, 3, 1, 1);
        for (int lvl = 2; lvl <= 4; ++lvl) {
            int cin = cfg.level_channels(lvl - 1);
            int cout = cfg.level_channels(lvl);
            auto& vec = e.blocks[static_cast<size_t>(lvl - 2)];
            vec.push_back(ResidualConvBlock<S>::init(rng, cin, cout));
            for (int b = 1; b < cfg.lrl_blocks_per_level; ++b)
                vec.push_back(ResidualConvBlock<S>::init(rng, cout, cout));
        }
        return e;
    }

    FeaturePyramid<S> forward(const Tensor<S>& image) const {
        cfg.check_input(image.dim(2), image.dim(3));
        FeaturePyramid<S> out;
        Tensor<S> x = stem.forward(image);
        out.levels[0] = x;
        for (int lvl = 2; lvl <= 4; ++lvl) {
            x = max_pool2x2(x);
            for (const auto& blk : blocks[static_cast<size_t>(lvl - 2)]) x = blk.forward(x);
            out.levels[static_cast<size_t>(lvl - 1)] = x;
        }
        return out;
    }

    void collect(NamedTensors<S>& out, const std::string& prefix) {
        stem.collect(out, prefix + ".stem");
        for (int lvl = 2; lvl <= 4; ++lvl)
            for (size_t b = 0; b < blocks[static_cast<size_t>(lvl - 2)].size(); ++b)
                blocks[static_cast<size_t>(lvl - 2)][b].collect(
                    out, prefix + ".l" + std::to_string(lvl) + ".blk" + std::to_string(b));
    }
};

// ---------------------------------------------------------------------------
// High-resolution local branch: four parallel constant-resolution streams.
// Stream e taps the shared full-resolution stem through e-1 strided convs,
// then applies residual blocks with no downsampling inside the stream.
// ---------------------------------------------------------------------------

template <typename S>
struct HrlEncoder {
    EncoderConfig cfg;
    Conv2dLayer<S> stem;
    std::array<std::vector<Conv2dLayer<S>>, 4> entry;  // stride-2 chains per stream
    std::array<std::vector<ResidualConvBlock<S>>, 4> blocks;

    static HrlEncoder init(Rng& rng, const EncoderConfig& cfg) {
        HrlEncoder e;
        e.cfg = cfg;
        int C = cfg.base_channels;
        e.stem = Conv2dLayer<S>::init(rng, C, 3, 3, 1, 1);
        for (int s = 1; s <= 4; ++s) {
            for (int d = 1; d < s; ++d)
                e.entry[static_cast<size_t>(s - 1)].push_back(
                    Conv2dLayer<S>::init(rng, cfg.level_channels(d + 1), cfg.level_channels(d), 3, 2, 1));
            int ch = cfg.level_channels(s);
            for (int b = 0; b < cfg.hrl_blocks_per_stream; ++b)
                e.blocks[static_cast<size_t>(s - 1)].push_back(ResidualConvBlock<S>::init(rng, ch, ch));
        }
        return e;
    }

    FeaturePyramid<S> forward(const Tensor<S>& image) const {
        cfg.check_input(image.dim(2), image.dim(3));
        FeaturePyramid<S> out;
        Tensor<S> base = stem.forward(image);
        for (int s = 1; s <= 4; ++s) {
            Tensor<S> x = base;
            for (const auto& conv : entry[static_cast<size_t>(s - 1)]) x = conv.forward(x);
            for (const auto& blk : blocks[static_cast<size_t>(s - 1)]) x = blk.forward(x);
            out.levels[static_cast<size_t>(s - 1)] = x;
        }
        return out;
    }

    void collect(NamedTensors<S>& out, const std::string& prefix) {
        stem.collect(out, prefix + ".stem");
        for (int s = 1; s <= 4; ++s) {
            for (size_t d = 0; d < entry[static_cast<size_t>(s - 1)].size(); ++d)
                entry[static_cast<size_t>(s - 1)][d].collect(
                    out, prefix + ".s" + std::to_string(s) + ".entry" + std::to_string(d));
            for (size_t b = 0; b < blocks[static_cast<size_t>(s - 1)].size(); ++b)
                blocks[static_cast<size_t>(s - 1)][b].collect(
                    out, prefix + ".s" + std::to_string(s) + ".blk" + std::to_string(b));
        }
    }
};

}  // namespace htd
