#pragma once

// Standard depth-evaluation metrics over valid ground-truth pixels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace htd {

struct DepthMetrics {
    double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
    double a1 = 0, a2 = 0, a3 = 0;
    int64_t valid_pixels = 0;

    static std::string csv_header() { return "abs_rel,sq_rel,rmse,rmse_log,a1,a2,a3"; }
    std::string csv_row() const {
        std::ostringstream os;
        os.precision(8);
        os << abs_rel << ',' << sq_rel << ',' << rmse << ',' << rmse_log << ',' << a1 << ',' << a2
           << ',' << a3;
        return os.str();
    }
};

namespace detail {
inline double median(std::vector<double> v) {
    size_t n = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<int64_t>(n), v.end());
    double hi = v[n];
    if (v.size() % 2 == 1) return hi;
    return (*std::max_element(v.begin(), v.begin() + static_cast<int64_t>(n)) + hi) / 2.0;
}
}  // namespace detail

// Evaluates predicted depth against ground truth.  A pixel contributes when
// valid_mask (same numel, nonzero = valid) allows it and gt lies in
// [min_depth, max_depth].  With median_scale the prediction is multiplied by
// median(gt)/median(pred) first; both are then clamped to the depth range.
template <typename S>
DepthMetrics evaluate(const Tensor<S>& pred, const Tensor<S>& gt, const std::vector<uint8_t>& valid_mask,
                      double min_depth, double max_depth, bool median_scale) {
    if (pred.shape() != gt.shape())
        throw DimensionError("metrics: pred shape " + shape_str(pred.shape()) + " vs gt " +
                             shape_str(gt.shape()));
    if (!valid_mask.empty() && static_cast<int64_t>(valid_mask.size()) != gt.numel())
        throw DimensionError("metrics: valid_mask size mismatch");

    std::vector<double> p, g;
    for (int64_t i = 0; i < gt.numel(); ++i) {
        if (!valid_mask.empty() && !valid_mask[static_cast<size_t>(i)]) continue;
        double gv = gt.data()[i];
        if (gv < min_depth || gv > max_depth) continue;
        p.push_back(pred.data()[i]);
        g.push_back(gv);
    }
    if (p.empty()) throw ContractError("metrics: no valid ground-truth pixels");

    double scale = 1.0;
    if (median_scale) scale = detail::median(g) / std::max(detail::median(p), 1e-12);

    DepthMetrics m;
    m.valid_pixels = static_cast<int64_t>(p.size());
    for (size_t i = 0; i < p.size(); ++i) {
        double pv = std::clamp(p[i] * scale, min_depth, max_depth);
        double gv = g[i];
        double diff = pv - gv;
        m.abs_rel += std::abs(diff) / gv;
        m.sq_rel += diff * diff / gv;
        m.rmse += diff * diff;
        double dl = std::log(pv) - std::log(gv);
        m.rmse_log += dl * dl;
        double ratio = std::max(pv / gv, gv / pv);
        if (ratio < 1.25) m.a1 += 1;
        if (ratio < 1.25 * 1.25) m.a2 += 1;
        if (ratio < 1.25 * 1.25 * 1.25) m.a3 += 1;
    }
    double n = double(p.size());
    m.abs_rel /= n;
    m.sq_rel /= n;
    m.rmse = std::sqrt(m.rmse / n);
    m.rmse_log = std::sqrt(m.rmse_log / n);
    m.a1 /= n;
    m.a2 /= n;
    m.a3 /= n;
    return m;
}

template <typename S>
DepthMetrics evaluate(const Tensor<S>& pred, const Tensor<S>& gt, double min_depth, double max_depth,
                      bool median_scale) {
    return evaluate(pred, gt, std::vector<uint8_t>{}, min_depth, max_depth, median_scale);
}

}  // namespace htd
