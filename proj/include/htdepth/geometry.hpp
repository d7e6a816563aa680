#pragma once

// Differentiable view synthesis: backprojection through the pinhole model,
// rigid transform, projection to a normalized sampling grid, bilinear warp.
// Pixel-center convention; grid coords in [-1,1] with (-1,-1) at the
// top-left pixel center.

#include <fstream>
#include <sstream>

#include "nn_ops.hpp"
#include "pose.hpp"

namespace htd {

struct CameraIntrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const {
        if (fx <= 0 || fy <= 0) throw ConfigError("intrinsics: fx, fy must be positive");
        if (cx < 0 || cx >= width || cy < 0 || cy >= height)
            throw ConfigError("intrinsics: principal point outside image");
    }

    CameraIntrinsics scaled(int new_w, int new_h) const {
        CameraIntrinsics k = *this;
        double sx = double(new_w) / width, sy = double(new_h) / height;
        k.fx *= sx;
        k.cx *= sx;
        k.fy *= sy;
        k.cy *= sy;
        k.width = new_w;
        k.height = new_h;
        return k;
    }
};

// Reads one "fx fy cx cy" line; image size supplied by the caller.
inline CameraIntrinsics load_intrinsics(const std::string& path, int width, int height) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open intrinsics file: " + path);
    CameraIntrinsics k;
    if (!(is >> k.fx >> k.fy >> k.cx >> k.cy))
        throw DataError("malformed intrinsics file (want 'fx fy cx cy'): " + path);
    k.width = width;
    k.height = height;
    k.validate();
    return k;
}

inline void save_intrinsics(const CameraIntrinsics& k, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write intrinsics file: " + path);
    os << k.fx << " " << k.fy << " " << k.cx << " " << k.cy << "\n";
}

// depth [N,1,H,W] -> homogeneous camera-frame points [N,4,H,W].
template <typename S>
Tensor<S> backproject(const Tensor<S>& depth, const CameraIntrinsics& K) {
    if (depth.rank() != 4 || depth.dim(1) != 1)
        throw DimensionError("backproject expects [N,1,H,W] depth");
    for (S v : depth.data())
        if (!(v > S(0))) throw ContractError("backproject: depth must be positive everywhere");
    int N = depth.dim(0), H = depth.dim(2), W = depth.dim(3);
    std::vector<S> gx(size_t(H) * W), gy(size_t(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            gx[size_t(y) * W + x] = static_cast<S>((x - K.cx) / K.fx);
            gy[size_t(y) * W + x] = static_cast<S>((y - K.cy) / K.fy);
        }
    auto ray_x = Tensor<S>::from_data({1, 1, H, W}, std::move(gx));
    auto ray_y = Tensor<S>::from_data({1, 1, H, W}, std::move(gy));
    auto ones = Tensor<S>::filled({N, 1, H, W}, S(1));
    return concat<S>({mul(depth, ray_x), mul(depth, ray_y), depth, ones}, 1);
}

// points [N,4,H,W], transform [N,4,4] (or [1,4,4] shared) -> normalized
// sampling grid [N,2,H,W]. z is clamped below at 1e-3 before division.
template <typename S>
Tensor<S> project(const Tensor<S>& points, const Tensor<S>& transform, const CameraIntrinsics& K) {
    if (points.rank() != 4 || points.dim(1) != 4)
        throw DimensionError("project expects [N,4,H,W] points");
    int N = points.dim(0), H = points.dim(2), W = points.dim(3);
    Tensor<S> T = transform;
    if (T.rank() != 3 || T.dim(1) != 4 || T.dim(2) != 4)
        throw DimensionError("project expects [N,4,4] transform");
    if (T.dim(0) == 1 && N > 1) {
        std::vector<Tensor<S>> copies(static_cast<size_t>(N), T);
        T = concat(copies, 0);
    }
    auto cam = matmul(T, reshape(points, {N, 4, H * W}));  // [N,4,HW]
    auto px = slice(cam, 1, 0, 1);
    auto py = slice(cam, 1, 1, 1);
    auto pz = clamp_min(slice(cam, 1, 2, 1), 1e-3);
    auto u = add_scalar(mul_scalar(div(px, pz), K.fx), K.cx);
    auto v = add_scalar(mul_scalar(div(py, pz), K.fy), K.cy);
    // pixel -> [-1,1] with (-1,-1) at the top-left pixel center
    auto gu = add_scalar(mul_scalar(u, 2.0 / (K.width - 1)), -1.0);
    auto gv = add_scalar(mul_scalar(v, 2.0 / (K.height - 1)), -1.0);
    return reshape(concat<S>({gu, gv}, 1), {N, 2, H, W});
}

// The grid that samples every pixel from itself.
template <typename S>
Tensor<S> identity_grid(int N, int H, int W) {
    std::vector<S> g(size_t(2) * H * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            g[size_t(y) * W + x] = static_cast<S>(2.0 * x / (W - 1) - 1.0);
            g[size_t(H) * W + size_t(y) * W + x] = static_cast<S>(2.0 * y / (H - 1) - 1.0);
        }
    auto one = Tensor<S>::from_data({1, 2, H, W}, std::move(g));
    if (N == 1) return one;
    std::vector<Tensor<S>> copies(static_cast<size_t>(N), one);
    return concat(copies, 0);
}

// 1 where the grid stays inside [-1,1] in both coordinates; constant.
template <typename S>
Tensor<S> in_view_mask(const Tensor<S>& grid) {
    int N = grid.dim(0), H = grid.dim(2), W = grid.dim(3);
    std::vector<S> m(size_t(N) * H * W);
    int64_t hw = int64_t(H) * W;
    for (int n = 0; n < N; ++n)
        for (int64_t i = 0; i < hw; ++i) {
            S u = grid.data()[size_t(int64_t(n) * 2 * hw + i)];
            S v = grid.data()[size_t((int64_t(n) * 2 + 1) * hw + i)];
            m[size_t(int64_t(n) * hw + i)] =
                (u >= S(-1) && u <= S(1) && v >= S(-1) && v <= S(1)) ? S(1) : S(0);
        }
    return Tensor<S>::from_data({N, 1, H, W}, std::move(m));
}

template <typename S>
Tensor<S> mat4_to_tensor(const Mat4& T) {
    std::vector<S> v;
    v.reserve(16);
    for (const auto& row : T)
        for (double x : row) v.push_back(static_cast<S>(x));
    return Tensor<S>::from_data({1, 4, 4}, std::move(v));
}

// I'_{i->0}: warps the source image into the target view given the target
// depth and the relative transform T_{0->i}.
template <typename S>
Tensor<S> synthesize_view(const Tensor<S>& source_img, const Tensor<S>& depth_target,
                          const Tensor<S>& transform, const CameraIntrinsics& K,
                          Tensor<S>* valid_mask = nullptr) {
    auto grid = project(backproject(depth_target, K), transform, K);
    if (valid_mask) *valid_mask = in_view_mask(grid);
    return bilinear_sample(source_img, grid);
}

template <typename S>
Tensor<S> synthesize_view(const Tensor<S>& source_img, const Tensor<S>& depth_target,
                          const Pose6DoF& pose, const CameraIntrinsics& K,
                          Tensor<S>* valid_mask = nullptr) {
    return synthesize_view(source_img, depth_target, mat4_to_tensor<S>(pose.to_matrix()), K, valid_mask);
}

}  // namespace htd
