#ifndef RGBD_EVALKIT_HPP
#define RGBD_EVALKIT_HPP

#include <array>
#include <utility>

#include "rgbd/tensor.hpp"

namespace rgbd {
namespace evalkit {

struct DepthMetrics {
    double abs_rel = 0;
    double delta1 = 0;
    double rmse = 0;
};

// Least-squares scale/shift over masked pixels (relative-depth protocol).
std::pair<double, double> align_coeffs(const Tensor& pred, const Tensor& gt, const Tensor& mask);

// Returns s*pred + t. For positive-ranged ground truth the result is clamped
// to a small positive floor (1e-4 of the gt range) so ratio metrics stay
// defined; signed ground truth is left untouched.
Tensor align_depth(const Tensor& pred, const Tensor& gt, const Tensor& mask);

// AbsRel / delta1(1.25) / RMSE restricted to the mask. Ground truth must be
// positive under the mask; use the shifted variant for signed maps.
DepthMetrics depth_metrics(const Tensor& pred_aligned, const Tensor& gt, const Tensor& mask);

// Shifts both maps so the masked gt minimum lands at 0.1 of the gt range
// before the ratio metrics (for signed normalized representations).
DepthMetrics depth_metrics_shifted(const Tensor& pred_aligned, const Tensor& gt,
                                   const Tensor& mask);

// Signed error in [-range, range] on a diverging colormap, white at zero,
// neutral gray outside the mask. Output [3,H,W] in [-1,1], file-ready.
Tensor error_map(const Tensor& pred_aligned, const Tensor& gt, const Tensor& mask,
                 double range = 0.1);

// Central differences on an orthographic height field; pixel_size converts
// pixel steps to depth units. Normals are unit length, z toward the viewer.
// The input is an elevation map (larger = closer to the viewer); convert a
// hit-distance depth map with elevation_from_depth first.
Tensor normals_from_depth(const Tensor& depth, double pixel_size = 1.0);

inline Tensor elevation_from_depth(const Tensor& depth, double far) {
    Tensor out(depth.shape);
    for (int64_t i = 0; i < depth.numel(); i++) out[i] = (float)(far - (double)depth[i]);
    return out;
}

// Diffuse relight in display space: out = rgb * (ambient + (1-ambient) *
// max(0, n.l)), clamped to [0,1]. rgb is [3,H,W] in [0,1].
Tensor relight(const Tensor& rgb01, const Tensor& normals, const std::array<double, 3>& light,
               double ambient = 0.2);

}  // namespace evalkit
}  // namespace rgbd

#endif
