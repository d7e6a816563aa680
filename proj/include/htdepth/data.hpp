#pragma once

// Synthetic training scenes with exact ground truth (textured planes and
// axis-aligned boxes rendered by ray casting), the scene-spec text format,
// and a directory loader for real image triplets.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "geometry.hpp"
#include "image.hpp"

namespace htd {

// ---------------------------------------------------------------------------
// Procedural texture: seeded value noise.
// ---------------------------------------------------------------------------

namespace noise_detail {

inline uint32_t hash_u32(uint32_t x) {
    x ^= x >> 16;
    x *= 0x7feb352du;
    x ^= x >> 15;
    x *= 0x846ca68bu;
    x ^= x >> 16;
    return x;
}

inline double lattice(int ix, int iy, uint32_t seed) {
    uint32_t h = hash_u32(uint32_t(ix) * 0x9e3779b9u ^ uint32_t(iy) * 0x85ebca6bu ^ seed);
    return h * (1.0 / 4294967296.0);
}

inline double value_noise(double u, double v, uint32_t seed) {
    int ix = int(std::floor(u)), iy = int(std::floor(v));
    double fu = u - ix, fv = v - iy;
    double su = fu * fu * (3 - 2 * fu), sv = fv * fv * (3 - 2 * fv);
    double a = lattice(ix, iy, seed), b = lattice(ix + 1, iy, seed);
    double c = lattice(ix, iy + 1, seed), d = lattice(ix + 1, iy + 1, seed);
    return (a * (1 - su) + b * su) * (1 - sv) + (c * (1 - su) + d * su) * sv;
}

// two octaves, mapped into a mid-range band so photometric values stay tame
inline double texture(double u, double v, uint32_t seed) {
    double n = 0.7 * value_noise(u, v, seed) + 0.3 * value_noise(2 * u + 17.3, 2 * v - 9.1, seed ^ 0xabcdu);
    return 0.15 + 0.7 * n;
}

}  // namespace noise_detail

// ---------------------------------------------------------------------------
// Scene geometry.
// ---------------------------------------------------------------------------

// Plane z = z0 + sx*x + sy*y over an (x,y) rectangle; fronto-parallel when
// sx = sy = 0.
struct ScenePlane {
    double z0 = 5, sx = 0, sy = 0;
    double xmin = -10, xmax = 10, ymin = -10, ymax = 10;
};

struct SceneBox {
    std::array<double, 3> lo{-1, -1, 4};
    std::array<double, 3> hi{1, 1, 5};
};

struct SyntheticScene {
    uint32_t seed = 1;
    double texture_scale = 1.2;  // noise lattice frequency in world units
    std::vector<ScenePlane> planes;
    std::vector<SceneBox> boxes;
    std::vector<Pose6DoF> trajectory;  // camera-to-world per frame
    CameraIntrinsics intrinsics;

    void validate() const {
        if (planes.empty() && boxes.empty()) throw ConfigError("scene: no geometry");
        if (trajectory.empty()) throw ConfigError("scene: empty trajectory");
        for (size_t i = 1; i < trajectory.size(); ++i) {
            double t2 = 0;
            for (int k = 0; k < 3; ++k) {
                double dt = trajectory[i].translation[size_t(k)] - trajectory[i - 1].translation[size_t(k)];
                t2 += dt * dt;
                double dr = std::abs(trajectory[i].rotation[size_t(k)] - trajectory[i - 1].rotation[size_t(k)]);
                if (dr > 0.035)
                    throw ConfigError("scene: rotation step " + std::to_string(i) + " exceeds 2 degrees");
            }
            if (std::sqrt(t2) > 0.05 * scene_scale())
                throw ConfigError("scene: translation step " + std::to_string(i) + " too large");
        }
    }

    double scene_scale() const {
        double z = 0;
        for (const auto& p : planes) z = std::max(z, p.z0);
        for (const auto& b : boxes) z = std::max(z, b.hi[2]);
        return std::max(z, 1.0);
    }
};

namespace render_detail {

struct Hit {
    double depth = 1e30;  // camera-frame z
    double u = 0, v = 0;  // texture coordinates on the surface
    uint32_t tex_seed = 0;
};

inline bool camera_inside_box(const std::array<double, 3>& o, const SceneBox& b) {
    for (int k = 0; k < 3; ++k)
        if (o[size_t(k)] < b.lo[size_t(k)] || o[size_t(k)] > b.hi[size_t(k)]) return false;
    return true;
}

}  // namespace render_detail

// Ray-cast render from the given camera-to-world pose. The returned image is
// [3,H,W] in [0,1]; depth is the camera-frame z, strictly positive.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> render(const SyntheticScene& scene, const Pose6DoF& pose,
                                       const CameraIntrinsics& K, int H, int W) {
    Mat4 C = pose.to_matrix();  // camera-to-world
    std::array<double, 3> origin = {C[0][3], C[1][3], C[2][3]};
    for (const auto& b : scene.boxes)
        if (render_detail::camera_inside_box(origin, b))
            throw DataError("render: camera is inside scene geometry");

    std::vector<S> img(size_t(3) * H * W), dep(size_t(H) * W);
    int64_t hw = int64_t(H) * W;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            // ray direction with unit camera-frame z, so the ray parameter is
            // the camera-frame depth
            double dcx = (x - K.cx) / K.fx, dcy = (y - K.cy) / K.fy;
            std::array<double, 3> d{};
            for (int i = 0; i < 3; ++i) d[size_t(i)] = C[i][0] * dcx + C[i][1] * dcy + C[i][2];

            render_detail::Hit best;
            for (size_t pi = 0; pi < scene.planes.size(); ++pi) {
                const auto& p = scene.planes[pi];
                double denom = d[2] - p.sx * d[0] - p.sy * d[1];
                if (std::abs(denom) < 1e-12) continue;
                double t = (p.z0 + p.sx * origin[0] + p.sy * origin[1] - origin[2]) / denom;
                if (t <= 1e-6 || t >= best.depth) continue;
                double px = origin[0] + t * d[0], py = origin[1] + t * d[1];
                if (px < p.xmin || px > p.xmax || py < p.ymin || py > p.ymax) continue;
                best = {t, px, py, scene.seed + uint32_t(pi) * 131u};
            }
            for (size_t bi = 0; bi < scene.boxes.size(); ++bi) {
                const auto& b = scene.boxes[bi];
                double t0 = 1e-6, t1 = best.depth;
                int axis = -1;
                for (int k = 0; k < 3; ++k) {
                    if (std::abs(d[size_t(k)]) < 1e-12) {
                        if (origin[size_t(k)] < b.lo[size_t(k)] || origin[size_t(k)] > b.hi[size_t(k)]) {
                            t0 = 1e30;
                            break;
                        }
                        continue;
                    }
                    double ta = (b.lo[size_t(k)] - origin[size_t(k)]) / d[size_t(k)];
                    double tb = (b.hi[size_t(k)] - origin[size_t(k)]) / d[size_t(k)];
                    if (ta > tb) std::swap(ta, tb);
                    if (ta > t0) {
                        t0 = ta;
                        axis = k;
                    }
                    t1 = std::min(t1, tb);
                }
                if (t0 < t1 && t0 < best.depth && axis >= 0) {
                    double hx = origin[0] + t0 * d[0], hy = origin[1] + t0 * d[1],
                           hz = origin[2] + t0 * d[2];
                    double u = axis == 0 ? hy : hx;
                    double v = axis == 2 ? hy : hz;
                    best = {t0, u, v, scene.seed + 7919u + uint32_t(bi) * 131u};
                }
            }
            if (best.depth >= 1e29)
                throw DataError("render: ray escaped the scene at pixel (" + std::to_string(x) +
                                "," + std::to_string(y) + ")");
            int64_t p = int64_t(y) * W + x;
            dep[size_t(p)] = static_cast<S>(best.depth);
            for (int c = 0; c < 3; ++c)
                img[size_t(int64_t(c) * hw + p)] = static_cast<S>(noise_detail::texture(
                    best.u * scene.texture_scale, best.v * scene.texture_scale,
                    best.tex_seed + uint32_t(c) * 977u));
        }
    return {Tensor<S>::from_data({1, 3, H, W}, std::move(img)),
            Tensor<S>::from_data({1, 1, H, W}, std::move(dep))};
}

// ---------------------------------------------------------------------------
// Scene-spec text format: line-oriented `key = value`.
// ---------------------------------------------------------------------------

// Recognized keys:
//   seed = N
//   plane = z0 sx sy xmin xmax ymin ymax
//   box = xmin ymin zmin xmax ymax zmax
//   intrinsics = fx fy cx cy
//   size = W H
//   frames = N
//   start = tx ty tz rx ry rz
//   motion = tx ty tz rx ry rz       (per-frame increment)
inline SyntheticScene parse_scene_spec(std::istream& is, const std::string& origin = "scene spec") {
    SyntheticScene scene;
    Pose6DoF start;
    std::array<double, 6> motion{};
    int frames = 3;
    int width = 128, height = 64;
    bool have_intrinsics = false;

    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& msg) {
        throw ConfigError(origin + " line " + std::to_string(line_no) + ": " + msg);
    };
    while (std::getline(is, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) fail("expected 'key = value'");
        std::istringstream key_s(line.substr(0, eq)), val(line.substr(eq + 1));
        std::string key;
        key_s >> key;

        if (key == "seed") {
            if (!(val >> scene.seed)) fail("seed wants one integer");
        } else if (key == "texture_scale") {
            if (!(val >> scene.texture_scale)) fail("texture_scale wants one number");
        } else if (key == "plane") {
            ScenePlane p;
            if (!(val >> p.z0 >> p.sx >> p.sy >> p.xmin >> p.xmax >> p.ymin >> p.ymax))
                fail("plane wants 7 numbers: z0 sx sy xmin xmax ymin ymax");
            scene.planes.push_back(p);
        } else if (key == "box") {
            SceneBox b;
            if (!(val >> b.lo[0] >> b.lo[1] >> b.lo[2] >> b.hi[0] >> b.hi[1] >> b.hi[2]))
                fail("box wants 6 numbers: xmin ymin zmin xmax ymax zmax");
            scene.boxes.push_back(b);
        } else if (key == "intrinsics") {
            if (!(val >> scene.intrinsics.fx >> scene.intrinsics.fy >> scene.intrinsics.cx >>
                  scene.intrinsics.cy))
                fail("intrinsics wants 4 numbers: fx fy cx cy");
            have_intrinsics = true;
        } else if (key == "size") {
            if (!(val >> width >> height)) fail("size wants 2 integers: W H");
        } else if (key == "frames") {
            if (!(val >> frames) || frames < 1) fail("frames wants a positive integer");
        } else if (key == "start") {
            if (!(val >> start.translation[0] >> start.translation[1] >> start.translation[2] >>
                  start.rotation[0] >> start.rotation[1] >> start.rotation[2]))
                fail("start wants 6 numbers: tx ty tz rx ry rz");
        } else if (key == "motion") {
            if (!(val >> motion[0] >> motion[1] >> motion[2] >> motion[3] >> motion[4] >> motion[5]))
                fail("motion wants 6 numbers: tx ty tz rx ry rz");
        } else {
            fail("unknown key '" + key + "'");
        }
    }

    scene.intrinsics.width = width;
    scene.intrinsics.height = height;
    if (!have_intrinsics) {
        scene.intrinsics.fx = scene.intrinsics.fy = 0.9 * width;
        scene.intrinsics.cx = width / 2.0 - 0.5;
        scene.intrinsics.cy = height / 2.0 - 0.5;
    }
    scene.intrinsics.validate();
    for (int f = 0; f < frames; ++f) {
        Pose6DoF p;
        for (int k = 0; k < 3; ++k) {
            p.translation[size_t(k)] = start.translation[size_t(k)] + f * motion[size_t(k)];
            p.rotation[size_t(k)] = start.rotation[size_t(k)] + f * motion[size_t(k) + 3];
        }
        scene.trajectory.push_back(p);
    }
    scene.validate();
    return scene;
}

inline SyntheticScene load_scene_spec(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open scene spec: " + path);
    return parse_scene_spec(is, path);
}

// A varied default scene: background plane, slanted wall, ground-ish slab,
// and boxes at different depths; the per-seed RNG jitters the layout.
inline SyntheticScene make_default_scene(uint32_t seed, int frames = 8, int width = 128,
                                         int height = 64) {
    Rng rng(seed);
    SyntheticScene scene;
    scene.seed = seed;
    scene.intrinsics.fx = scene.intrinsics.fy = 0.9 * width;
    scene.intrinsics.cx = width / 2.0 - 0.5;
    scene.intrinsics.cy = height / 2.0 - 0.5;
    scene.intrinsics.width = width;
    scene.intrinsics.height = height;

    scene.planes.push_back({8.0 + rng.uniform(-0.5, 0.5), 0, 0, -40, 40, -40, 40});
    scene.planes.push_back({6.0 + rng.uniform(-0.3, 0.3), rng.uniform(0.2, 0.4), 0, -8, 0, -8, 8});
    scene.planes.push_back({5.5, 0, rng.uniform(-0.35, -0.2), -8, 8, 0.5, 8});
    for (int i = 0; i < 3; ++i) {
        double cx = rng.uniform(-2.5, 2.5), cy = rng.uniform(-1.2, 1.2);
        double z = rng.uniform(3.0, 6.0), s = rng.uniform(0.3, 0.8);
        scene.boxes.push_back({{cx - s, cy - s, z}, {cx + s, cy + s, z + 2 * s}});
    }
    for (int f = 0; f < frames; ++f) {
        Pose6DoF p;
        p.translation = {0.12 * f, 0.02 * f, 0.05 * f};
        p.rotation = {0, 0.004 * f, 0};
        scene.trajectory.push_back(p);
    }
    scene.validate();
    return scene;
}

// ---------------------------------------------------------------------------
// Training batches.
// ---------------------------------------------------------------------------

template <typename S>
struct TrainBatch {
    Tensor<S> target;                  // loss target I0, un-jittered
    std::vector<Tensor<S>> sources;    // I_{-1}, I_{+1}, un-jittered
    Tensor<S> net_target;              // color-jittered network inputs
    std::vector<Tensor<S>> net_sources;
    CameraIntrinsics intrinsics;
    std::optional<Tensor<S>> gt_depth;           // target-frame depth
    std::vector<Tensor<S>> gt_transforms;        // T_{0->i}, [1,4,4] per source
};

// Relative transform taking target-camera points into source-camera frame.
inline Mat4 relative_transform(const Pose6DoF& target_c2w, const Pose6DoF& source_c2w) {
    return mat4_mul(mat4_rigid_inverse(source_c2w.to_matrix()), target_c2w.to_matrix());
}

// Renders all frames of a scene and assembles consecutive triplets.
template <typename S>
std::vector<TrainBatch<S>> scene_triplets(const SyntheticScene& scene, int H, int W,
                                          bool with_ground_truth = true) {
    auto K = scene.intrinsics.scaled(W, H);
    std::vector<Tensor<S>> images, depths;
    for (const auto& pose : scene.trajectory) {
        auto [img, dep] = render<S>(scene, pose, K, H, W);
        images.push_back(img);
        depths.push_back(dep);
    }
    std::vector<TrainBatch<S>> out;
    for (size_t i = 1; i + 1 < scene.trajectory.size(); ++i) {
        TrainBatch<S> b;
        b.target = images[i];
        b.sources = {images[i - 1], images[i + 1]};
        b.net_target = b.target;
        b.net_sources = b.sources;
        b.intrinsics = K;
        if (with_ground_truth) {
            b.gt_depth = depths[i];
            b.gt_transforms = {
                mat4_to_tensor<S>(relative_transform(scene.trajectory[i], scene.trajectory[i - 1])),
                mat4_to_tensor<S>(relative_transform(scene.trajectory[i], scene.trajectory[i + 1]))};
        }
        out.push_back(std::move(b));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Real-image triplet loader.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> hflip(const Tensor<S>& t) {
    int C = t.dim(1), H = t.dim(2), W = t.dim(3);
    std::vector<S> v(t.data().size());
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                v[size_t((int64_t(c) * H + y) * W + x)] =
                    t.data()[size_t((int64_t(c) * H + y) * W + (W - 1 - x))];
    return Tensor<S>::from_data(t.shape(), std::move(v));
}

// Loads triplets from a list file whose lines are "prev target next" image
// paths relative to root. Images are resized to W x H and normalized to
// [0,1]. Augmentation: per-triplet horizontal flip (p=0.5) applied to all
// frames, and brightness jitter +-0.2 applied to the network inputs only.
template <typename S>
std::vector<TrainBatch<S>> load_triplets(const std::string& root, const std::string& list_file,
                                         int W, int H, bool augment = false, uint64_t seed = 0) {
    namespace fs = std::filesystem;
    std::ifstream list(list_file);
    if (!list) throw DataError("cannot open triplet list: " + list_file);

    auto K = load_intrinsics((fs::path(root) / "intrinsics.txt").string(), W, H);

    std::vector<std::array<std::string, 3>> rows;
    std::string line;
    while (std::getline(list, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ss(line);
        std::array<std::string, 3> row;
        if (!(ss >> row[0] >> row[1] >> row[2]))
            throw DataError("triplet list line wants 3 paths: " + line);
        rows.push_back(row);
    }

    Rng rng(seed);
    if (augment) {  // deterministic shuffle
        for (size_t i = rows.size(); i > 1; --i)
            std::swap(rows[i - 1], rows[size_t(rng.next_u32() % uint32_t(i))]);
    }

    std::vector<TrainBatch<S>> out;
    for (const auto& row : rows) {
        TrainBatch<S> b;
        b.intrinsics = K;
        std::vector<Tensor<S>> frames;
        for (const auto& name : row) {
            auto path = (fs::path(root) / name).string();
            if (!fs::exists(path)) throw DataError("missing frame: " + path);
            auto img = load_png(path);
            if (img.width != W || img.height != H) img = resize_bilinear(img, W, H);
            frames.push_back(image_to_tensor<S>(img));
        }
        bool flip = augment && rng.uniform() < 0.5;
        double brightness = augment ? rng.uniform(-0.2, 0.2) : 0.0;
        if (flip)
            for (auto& f : frames) f = hflip(f);
        b.target = frames[1];
        b.sources = {frames[0], frames[2]};
        auto jitter = [&](const Tensor<S>& t) {
            return brightness == 0.0 ? t : clamp_max(clamp_min(add_scalar(t, brightness), 0.0), 1.0);
        };
        b.net_target = jitter(b.target);
        b.net_sources = {jitter(b.sources[0]), jitter(b.sources[1])};
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace htd
