#pragma once

// Reusable network blocks: the transposed-attention transformer block with
// gated feed-forward, and the residual convolution block used by the local
// branches. Parameters init from a seeded RNG: weights uniform in
// +-1/sqrt(fan_in), biases zero.

#include "nn_ops.hpp"
#include "serialize.hpp"
#include "tensor.hpp"

namespace htd {

template <typename S>
struct Conv2dLayer {
    Tensor<S> weight;  // [Cout, Cin, k, k]
    Tensor<S> bias;    // [Cout]
    int stride = 1, padding = 0, dilation = 1;

    static Conv2dLayer init(Rng& rng, int cout, int cin, int k, int stride = 1,
                            int padding = 0, int dilation = 1) {
        Conv2dLayer l;
        double bound = 1.0 / std::sqrt(double(cin) * k * k);
        l.weight = rng.uniform_tensor<S>({cout, cin, k, k}, -bound, bound, true);
        l.bias = Tensor<S>::zeros({cout}, true);
        l.stride = stride;
        l.padding = padding;
        l.dilation = dilation;
        return l;
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        return conv2d(x, weight, bias, stride, padding, dilation);
    }

    void collect(NamedTensors<S>& out, const std::string& prefix) {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

template <typename S>
struct LayerNormParams {
    Tensor<S> gamma, beta;

    static LayerNormParams init(int channels) {
        return {Tensor<S>::filled({channels}, S(1), true), Tensor<S>::zeros({channels}, true)};
    }
    Tensor<S> forward(const Tensor<S>& x) const { return layer_norm(x, gamma, beta); }
    void collect(NamedTensors<S>& out, const std::string& prefix) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

// Transformer block with channel-wise (transposed) attention: the attention
// map is d_head x d_head, independent of spatial size.
template <typename S>
struct TransformerBlock {
    int channels = 0, heads = 1, d_q = 0, d_v = 0;
    LayerNormParams<S> ln_attn, ln_ff;
    Conv2dLayer<S> q_proj, k_proj, v_proj, out_proj;
    Tensor<S> temperature;  // [heads], learnable scale on QK^T
    Conv2dLayer<S> ff_gate_conv, ff_value_conv;

    static TransformerBlock init(Rng& rng, int channels, int heads, int d_q = -1, int d_v = -1) {
        if (d_q < 0) d_q = channels;
        if (d_v < 0) d_v = channels;
        if (d_q % heads != 0 || d_v % heads != 0)
            throw ConfigError("transformer block: d_q and d_v must be divisible by heads");
        if (d_q / heads != d_v / heads)
            throw ConfigError("transformer block: per-head query and value widths must match");
        TransformerBlock b;
        b.channels = channels;
        b.heads = heads;
        b.d_q = d_q;
        b.d_v = d_v;
        b.ln_attn = LayerNormParams<S>::init(channels);
        b.ln_ff = LayerNormParams<S>::init(channels);
        b.q_proj = Conv2dLayer<S>::init(rng, d_q, channels, 1);
        b.k_proj = Conv2dLayer<S>::init(rng, d_q, channels, 1);
        b.v_proj = Conv2dLayer<S>::init(rng, d_v, channels, 1);
        b.out_proj = Conv2dLayer<S>::init(rng, channels, d_v, 1);
        b.temperature = Tensor<S>::filled({heads}, S(1), true);
        b.ff_gate_conv = Conv2dLayer<S>::init(rng, channels, channels, 3, 1, 1);
        b.ff_value_conv = Conv2dLayer<S>::init(rng, channels, channels, 3, 1, 1);
        return b;
    }

    // attn_out, when given, receives the softmaxed attention map
    // [N, heads, d_head, d_head].
    Tensor<S> transposed_attention(const Tensor<S>& x, Tensor<S>* attn_out = nullptr) const {
        if (x.dim(1) != channels)
            throw ConfigError("transposed_attention: expected " + std::to_string(channels) +
                              " channels, got " + std::to_string(x.dim(1)));
        int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        int hw = H * W;
        int ch = d_q / heads;

        auto xn = ln_attn.forward(x);
        auto q = reshape(q_proj.forward(xn), {N * heads, ch, hw});
        auto k = reshape(k_proj.forward(xn), {N * heads, ch, hw});
        auto v = reshape(v_proj.forward(xn), {N * heads, ch, hw});

        auto logits = reshape(matmul(q, k, false, true), {N, heads, ch, ch});
        auto scale = reshape(temperature, {1, heads, 1, 1});
        auto attn = softmax(mul(logits, scale), 3);
        if (attn_out) *attn_out = attn;

        auto mixed = matmul(reshape(attn, {N * heads, ch, ch}), v);  // [N*heads, ch, hw]
        auto y = out_proj.forward(reshape(mixed, {N, d_v, H, W}));
        return add(x, y);
    }

    Tensor<S> gated_feed_forward(const Tensor<S>& y) const {
        auto yn = ln_ff.forward(y);
        auto gate = gelu(ff_gate_conv.forward(yn));
        auto value = ff_value_conv.forward(yn);
        return add(y, mul(gate, value));
    }

    Tensor<S> forward(const Tensor<S>& x, Tensor<S>* attn_out = nullptr) const {
        return gated_feed_forward(transposed_attention(x, attn_out));
    }

    void collect(NamedTensors<S>& out, const std::string& prefix) {
        ln_attn.collect(out, prefix + ".ln_attn");
        ln_ff.collect(out, prefix + ".ln_ff");
        q_proj.collect(out, prefix + ".q_proj");
        k_proj.collect(out, prefix + ".k_proj");
        v_proj.collect(out, prefix + ".v_proj");
        out_proj.collect(out, prefix + ".out_proj");
        out.push_back({prefix + ".temperature", temperature});
        ff_gate_conv.collect(out, prefix + ".ff_gate");
        ff_value_conv.collect(out, prefix + ".ff_value");
    }
};

// conv -> ReLU -> conv plus identity skip (1x1 projection on channel change).
template <typename S>
struct ResidualConvBlock {
    int in_channels = 0, out_channels = 0;
    Conv2dLayer<S> conv1, conv2;
    Conv2dLayer<S> proj;  // used only when channels differ
    bool has_proj = false;

    static ResidualConvBlock init(Rng& rng, int cin, int cout) {
        ResidualConvBlock b;
        b.in_channels = cin;
        b.out_channels = cout;
        b.conv1 = Conv2dLayer<S>::init(rng, cout, cin, 3, 1, 1);
        b.conv2 = Conv2dLayer<S>::init(rng, cout, cout, 3, 1, 1);
        if (cin != cout) {
            b.proj = Conv2dLayer<S>::init(rng, cout, cin, 1);
            b.has_proj = true;
        }
        return b;
    }

    Tensor<S> forward(const Tensor<S>& x) const {
        auto y = conv2.forward(relu(conv1.forward(x)));
        auto skip = has_proj ? proj.forward(x) : x;
        return add(y, skip);
    }

    void collect(NamedTensors<S>& out, const std::string& prefix) {
        conv1.collect(out, prefix + ".conv1");
        conv2.collect(out, prefix + ".conv2");
        if (has_proj) proj.collect(out, prefix + ".proj");
    }
};

// Zeroes every value in a named-parameter list whose name contains `needle`.
template <typename S>
void zero_params_matching(NamedTensors<S>& params, const std::string& needle) {
    for (auto& [name, t] : params)
        if (name.find(needle) != std::string::npos)
            std::fill(t.data().begin(), t.data().end(), S(0));
}

}  // namespace htd
