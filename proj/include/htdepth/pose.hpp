#pragma once

// 6-DoF relative pose: plain Euler/translation struct with SE(3) matrix
// helpers, a differentiable pose-vector-to-matrix path for training, and the
// convolutional pose network.

#include <array>

#include "blocks.hpp"

namespace htd {

using Mat4 = std::array<std::array<double, 4>, 4>;

struct Pose6DoF {
    // rotation about x, then y, then z (radians); translation in scene units
    std::array<double, 3> rotation{0, 0, 0};
    std::array<double, 3> translation{0, 0, 0};

    // R = Rz(g) * Ry(b) * Rx(a)
    Mat4 to_matrix() const {
        double a = rotation[0], b = rotation[1], g = rotation[2];
        double ca = std::cos(a), sa = std::sin(a);
        double cb = std::cos(b), sb = std::sin(b);
        double cg = std::cos(g), sg = std::sin(g);
        Mat4 T{};
        T[0] = {cg * cb, cg * sb * sa - sg * ca, cg * sb * ca + sg * sa, translation[0]};
        T[1] = {sg * cb, sg * sb * sa + cg * ca, sg * sb * ca - cg * sa, translation[1]};
        T[2] = {-sb, cb * sa, cb * ca, translation[2]};
        T[3] = {0, 0, 0, 1};
        return T;
    }
};

inline Mat4 mat4_mul(const Mat4& a, const Mat4& b) {
    Mat4 c{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double acc = 0;
            for (int k = 0; k < 4; ++k) acc += a[i][k] * b[k][j];
            c[i][j] = acc;
        }
    return c;
}

// Rigid-transform inverse: [R^T, -R^T t].
inline Mat4 mat4_rigid_inverse(const Mat4& T) {
    Mat4 inv{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) inv[i][j] = T[j][i];
    for (int i = 0; i < 3; ++i) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) acc += T[k][i] * T[k][3];
        inv[i][3] = -acc;
    }
    inv[3] = {0, 0, 0, 1};
    return inv;
}

// Differentiable pose vector [N,6] (rx,ry,rz,tx,ty,tz) -> transform [N,4,4].
template <typename S>
Tensor<S> pose_to_matrix(const Tensor<S>& pose) {
    if (pose.rank() != 2 || pose.dim(1) != 6)
        throw DimensionError("pose_to_matrix expects [N,6], got " + shape_str(pose.shape()));
    int N = pose.dim(0);
    std::vector<Tensor<S>> rows;
    auto zero = Tensor<S>::scalar(S(0));
    auto one = Tensor<S>::scalar(S(1));
    for (int n = 0; n < N; ++n) {
        auto rx = select(pose, int64_t(n) * 6 + 0);
        auto ry = select(pose, int64_t(n) * 6 + 1);
        auto rz = select(pose, int64_t(n) * 6 + 2);
        auto tx = select(pose, int64_t(n) * 6 + 3);
        auto ty = select(pose, int64_t(n) * 6 + 4);
        auto tz = select(pose, int64_t(n) * 6 + 5);
        auto ca = htd::cos(rx), sa = htd::sin(rx);
        auto cb = htd::cos(ry), sb = htd::sin(ry);
        auto cg = htd::cos(rz), sg = htd::sin(rz);
        std::vector<Tensor<S>> entries = {
            mul(cg, cb), sub(mul(mul(cg, sb), sa), mul(sg, ca)), add(mul(mul(cg, sb), ca), mul(sg, sa)), tx,
            mul(sg, cb), add(mul(mul(sg, sb), sa), mul(cg, ca)), sub(mul(mul(sg, sb), ca), mul(cg, sa)), ty,
            neg(sb), mul(cb, sa), mul(cb, ca), tz,
            zero, zero, zero, one};
        rows.push_back(reshape(concat(entries, 0), {1, 4, 4}));
    }
    return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

// Pose estimation network: target and source frames stacked to 6 channels,
// four strided residual stages, 1x1 head to 6 channels, global average.
// Output is scaled by 0.01 to keep early warps small.
template <typename S>
struct PoseNet {
    static constexpr double kOutputScale = 0.01;
    std::vector<Conv2dLayer<S>> down;          // stride-2 convs
    std::vector<ResidualConvBlock<S>> blocks;  // one per stage
    Conv2dLayer<S> head;                       // 1x1 -> 6 channels

    static PoseNet init(Rng& rng, const std::vector<int>& widths = {16, 32, 64, 128}) {
        PoseNet p;
        int cin = 6;
        for (int w : widths) {
            p.down.push_back(Conv2dLayer<S>::init(rng, w, cin, 3, 2, 1));
            p.blocks.push_back(ResidualConvBlock<S>::init(rng, w, w));
            cin = w;
        }
        p.head = Conv2dLayer<S>::init(rng, 6, cin, 1);
        return p;
    }

    // Returns [N,6] pose vectors for T_target->source.
    Tensor<S> forward(const Tensor<S>& target, const Tensor<S>& source) const {
        if (target.shape() != source.shape())
            throw DimensionError("estimate_pose: target/source shape mismatch");
        Tensor<S> x = concat<S>({target, source}, 1);
        for (size_t i = 0; i < down.size(); ++i) x = blocks[i].forward(down[i].forward(x));
        return mul_scalar(spatial_mean(head.forward(x)), kOutputScale);
    }

    void collect(NamedTensors<S>& out, const std::string& prefix = "pose") {
        for (size_t i = 0; i < down.size(); ++i) {
            down[i].collect(out, prefix + ".down" + std::to_string(i));
            blocks[i].collect(out, prefix + ".blk" + std::to_string(i));
        }
        head.collect(out, prefix + ".head");
    }
};

// Plain (non-tracked) extraction of per-batch poses from the network output.
template <typename S>
std::vector<Pose6DoF> pose_vectors_to_structs(const Tensor<S>& pose) {
    std::vector<Pose6DoF> out;
    for (int n = 0; n < pose.dim(0); ++n) {
        Pose6DoF p;
        for (int i = 0; i < 3; ++i) {
            p.rotation[static_cast<size_t>(i)] = double(pose.data()[size_t(n) * 6 + i]);
            p.translation[static_cast<size_t>(i)] = double(pose.data()[size_t(n) * 6 + 3 + i]);
        }
        out.push_back(p);
    }
    return out;
}

}  // namespace htd
