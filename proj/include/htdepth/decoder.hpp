#pragma once

// Transformer decoder: refines the deepest fused features, walks back up the
// pyramid with bilinear upsampling and encoder skips, and emits a sigmoid
// disparity map at every level. Inference keeps only the full-scale map.

#include "blocks.hpp"
#include "encoder.hpp"

namespace htd {

template <typename S>
struct DisparitySet {
    // disp[s] has shape [N,1,H/2^s,W/2^s]; disp[0] is full resolution.
    std::array<Tensor<S>, 4> disp;
};

template <typename S>
struct Decoder {
    EncoderConfig cfg;
    int blocks_per_level = 1;
    std::array<std::vector<TransformerBlock<S>>, 4> blocks;  // index e-1
    std::array<Conv2dLayer<S>, 3> reduce;                    // C*(e+1) -> C*e before skip concat
    std::array<Conv2dLayer<S>, 3> merge;                     // 2*C*e -> C*e after skip concat
    std::array<Conv2dLayer<S>, 4> disp_head;                 // 3x3 conv -> 1 channel, sigmoid

    static Decoder init(Rng& rng, const EncoderConfig& cfg, int blocks_per_level = 1) {
        Decoder d;
        d.cfg = cfg;
        d.blocks_per_level = blocks_per_level;
        for (int e = 1; e <= 4; ++e) {
            int ch = cfg.level_channels(e);
            int heads = std::min(cfg.heads, ch);
            for (int b = 0; b < blocks_per_level; ++b)
                d.blocks[static_cast<size_t>(e - 1)].push_back(TransformerBlock<S>::init(rng, ch, heads));
            d.disp_head[static_cast<size_t>(e - 1)] = Conv2dLayer<S>::init(rng, 1, ch, 3, 1, 1);
            if (e < 4) {
                d.reduce[static_cast<size_t>(e - 1)] = Conv2dLayer<S>::init(rng, ch, cfg.level_channels(e + 1), 1);
                d.merge[static_cast<size_t>(e - 1)] = Conv2dLayer<S>::init(rng, ch, 2 * ch, 1);
            }
        }
        return d;
    }

    DisparitySet<S> forward(const FeaturePyramid<S>& enc) const {
        for (int e = 1; e <= 4; ++e) {
            const auto& t = enc.level(e);
            if (t.rank() != 4 || t.dim(1) != cfg.level_channels(e))
                throw DimensionError("decode: pyramid level " + std::to_string(e) + " has shape " +
                                     shape_str(t.shape()));
        }
        DisparitySet<S> out;
        Tensor<S> x = enc.level(4);
        for (int e = 4; e >= 1; --e) {
            for (const auto& blk : blocks[static_cast<size_t>(e - 1)]) x = blk.forward(x);
            out.disp[static_cast<size_t>(e - 1)] =
                sigmoid(disp_head[static_cast<size_t>(e - 1)].forward(x));
            if (e > 1) {
                x = reduce[static_cast<size_t>(e - 2)].forward(upsample_bilinear_x2(x));
                x = merge[static_cast<size_t>(e - 2)].forward(concat<S>({x, enc.level(e - 1)}, 1));
            }
        }
        return out;
    }

    // Inference path: full-scale disparity only.
    Tensor<S> infer(const FeaturePyramid<S>& enc) const {
        Tensor<S> x = enc.level(4);
        for (int e = 4; e >= 1; --e) {
            for (const auto& blk : blocks[static_cast<size_t>(e - 1)]) x = blk.forward(x);
            if (e > 1) {
                x = reduce[static_cast<size_t>(e - 2)].forward(upsample_bilinear_x2(x));
                x = merge[static_cast<size_t>(e - 2)].forward(concat<S>({x, enc.level(e - 1)}, 1));
            }
        }
        return sigmoid(disp_head[0].forward(x));
    }

    void collect(NamedTensors<S>& out, const std::string& prefix) {
        for (int e = 1; e <= 4; ++e) {
            for (size_t b = 0; b < blocks[static_cast<size_t>(e - 1)].size(); ++b)
                blocks[static_cast<size_t>(e - 1)][b].collect(
                    out, prefix + ".l" + std::to_string(e) + ".blk" + std::to_string(b));
            disp_head[static_cast<size_t>(e - 1)].collect(out, prefix + ".head" + std::to_string(e));
            if (e < 4) {
                reduce[static_cast<size_t>(e - 1)].collect(out, prefix + ".reduce" + std::to_string(e));
                merge[static_cast<size_t>(e - 1)].collect(out, prefix + ".merge" + std::to_string(e));
            }
        }
    }
};

// Maps sigmoid disparity in (0,1) to metric depth in (min_depth, max_depth).
template <typename S>
Tensor<S> disp_to_depth(const Tensor<S>& disp, double min_depth, double max_depth) {
    if (!(0 < min_depth && min_depth < max_depth))
        throw ConfigError("disp_to_depth: need 0 < min_depth < max_depth");
    double lo = 1.0 / max_depth, hi = 1.0 / min_depth;
    auto scaled = add_scalar(mul_scalar(disp, hi - lo), lo);
    return div(Tensor<S>::scalar(S(1)), scaled);
}

}  // namespace htd
