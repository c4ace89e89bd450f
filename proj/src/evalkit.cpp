#include "rgbd/evalkit.hpp"

#include <algorithm>
#include <cmath>

namespace rgbd {
namespace evalkit {

namespace {

void check_triplet(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
    require(pred.same_shape(gt) && pred.same_shape(mask),
            "depth evaluation: pred/gt/mask shapes differ");
    require(pred.rank() == 2, "depth evaluation expects [H,W] maps");
}

}  // namespace

std::pair<double, double> align_coeffs(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
    check_triplet(pred, gt, mask);
    double sp = 0, sg = 0, spp = 0, spg = 0;
    int64_t n = 0;
    double gmin = 1e300, gmax = -1e300;
    for (int64_t i = 0; i < pred.numel(); i++) {
        if (mask[i] == 0.0f) continue;
        double p = pred[i], g = gt[i];
        sp += p;
        sg += g;
        spp += p * p;
        spg += p * g;
        gmin = std::min(gmin, g);
        gmax = std::max(gmax, g);
        n++;
    }
    if (n < 2 || gmax <= gmin)
        throw NumericError("degenerate alignment: fewer than two distinct ground-truth values "
                           "under the mask");
    double det = (double)n * spp - sp * sp;
    if (std::abs(det) < 1e-12 * std::max(1.0, spp * (double)n))
        throw NumericError("degenerate alignment: constant prediction under the mask");
    double s = ((double)n * spg - sp * sg) / det;
    double t = (sg - s * sp) / (double)n;
    return {s, t};
}

Tensor align_depth(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
    auto [s, t] = align_coeffs(pred, gt, mask);
    double gmin = 1e300, gmax = -1e300;
    for (int64_t i = 0; i < gt.numel(); i++) {
        if (mask[i] == 0.0f) continue;
        gmin = std::min(gmin, (double)gt[i]);
        gmax = std::max(gmax, (double)gt[i]);
    }
    Tensor out(pred.shape);
    double floor = gmin > 0 ? 1e-4 * (gmax - gmin) : -1e300;
    for (int64_t i = 0; i < pred.numel(); i++) {
        double v = s * (double)pred[i] + t;
        out[i] = (float)std::max(v, floor);
    }
    return out;
}

DepthMetrics depth_metrics(const Tensor& pred_aligned, const Tensor& gt, const Tensor& mask) {
    check_triplet(pred_aligned, gt, mask);
    double abs_rel = 0, sq = 0;
    int64_t n = 0, hits = 0;
    for (int64_t i = 0; i < gt.numel(); i++) {
        if (mask[i] == 0.0f) continue;
        double p = pred_aligned[i], g = gt[i];
        require(g > 0, "ratio metrics need positive ground truth; use the shifted variant");
        double pp = std::max(p, 1e-12);
        abs_rel += std::abs(p - g) / g;
        sq += (p - g) * (p - g);
        if (std::max(pp / g, g / pp) < 1.25) hits++;
        n++;
    }
    require(n > 0, "depth metrics: empty mask");
    DepthMetrics m;
    m.abs_rel = abs_rel / (double)n;
    m.delta1 = (double)hits / (double)n;
    m.rmse = std::sqrt(sq / (double)n);
    return m;
}

DepthMetrics depth_metrics_shifted(const Tensor& pred_aligned, const Tensor& gt,
                                   const Tensor& mask) {
    check_triplet(pred_aligned, gt, mask);
    double gmin = 1e300, gmax = -1e300;
    int64_t n = 0;
    for (int64_t i = 0; i < gt.numel(); i++) {
        if (mask[i] == 0.0f) continue;
        gmin = std::min(gmin, (double)gt[i]);
        gmax = std::max(gmax, (double)gt[i]);
        n++;
    }
    require(n > 0, "depth metrics: empty mask");
    require(gmax > gmin, "depth metrics: constant ground truth");
    double shift = 0.1 * (gmax - gmin) - gmin;  // gt minimum lands at 0.1 of range
    Tensor p2(pred_aligned.shape), g2(gt.shape);
    for (int64_t i = 0; i < gt.numel(); i++) {
        p2[i] = (float)((double)pred_aligned[i] + shift);
        g2[i] = (float)((double)gt[i] + shift);
    }
    return depth_metrics(p2, g2, mask);
}

Tensor error_map(const Tensor& pred_aligned, const Tensor& gt, const Tensor& mask, double range) {
    check_triplet(pred_aligned, gt, mask);
    require(range > 0, "error_map: range must be positive");
    int64_t h = gt.shape[0], w = gt.shape[1];
    Tensor out({3, h, w});
    for (int64_t i = 0; i < h * w; i++) {
        float r, g, b;
        if (mask[i] == 0.0f) {
            r = g = b = 0.5f;  // neutral gray outside the mask
        } else {
            double e = std::clamp(((double)pred_aligned[i] - (double)gt[i]) / range, -1.0, 1.0);
            float t = (float)std::abs(e);
            if (e >= 0) {  // white -> red
                r = 1.0f;
                g = 1.0f - t;
                b = 1.0f - t;
            } else {  // white -> blue
                r = 1.0f - t;
                g = 1.0f - t;
                b = 1.0f;
            }
        }
        out[0 * h * w + i] = r * 2.0f - 1.0f;
        out[1 * h * w + i] = g * 2.0f - 1.0f;
        out[2 * h * w + i] = b * 2.0f - 1.0f;
    }
    return out;
}

Tensor normals_from_depth(const Tensor& depth, double pixel_size) {
    require(depth.rank() == 2, "normals_from_depth expects [H,W]");
    require(pixel_size > 0, "normals_from_depth: pixel size must be positive");
    int64_t h = depth.shape[0], w = depth.shape[1];
    Tensor out({3, h, w});
    for (int64_t i = 0; i < h; i++)
        for (int64_t j = 0; j < w; j++) {
            int64_t jm = std::max<int64_t>(j - 1, 0), jp = std::min(j + 1, w - 1);
            int64_t im = std::max<int64_t>(i - 1, 0), ip = std::min(i + 1, h - 1);
            double du = ((double)depth[i * w + jp] - (double)depth[i * w + jm]) /
                        ((double)(jp - jm) * pixel_size);
            double dv = ((double)depth[ip * w + j] - (double)depth[im * w + j]) /
                        ((double)(ip - im) * pixel_size);
            double nx = -du, ny = -dv, nz = 1.0;
            double nn = std::sqrt(nx * nx + ny * ny + nz * nz);
            out[0 * h * w + i * w + j] = (float)(nx / nn);
            out[1 * h * w + i * w + j] = (float)(ny / nn);
            out[2 * h * w + i * w + j] = (float)(nz / nn);
        }
    return out;
}

Tensor relight(const Tensor& rgb01, const Tensor& normals, const std::array<double, 3>& light,
               double ambient) {
    require(rgb01.rank() == 3 && rgb01.shape[0] == 3, "relight expects rgb [3,H,W]");
    require(normals.same_shape(rgb01), "relight: normals/rgb shape mismatch");
    double ln = std::sqrt(light[0] * light[0] + light[1] * light[1] + light[2] * light[2]);
    require(ln > 0, "relight: zero light vector");
    double lx = light[0] / ln, ly = light[1] / ln, lz = light[2] / ln;
    int64_t hw = rgb01.shape[1] * rgb01.shape[2];
    Tensor out(rgb01.shape);
    for (int64_t i = 0; i < hw; i++) {
        double ndl = (double)normals[i] * lx + (double)normals[hw + i] * ly +
                     (double)normals[2 * hw + i] * lz;
        double shade = ambient + (1.0 - ambient) * std::max(0.0, ndl);
        for (int64_t c = 0; c < 3; c++)
            out[c * hw + i] = (float)std::clamp((double)rgb01[c * hw + i] * shade, 0.0, 1.0);
    }
    return out;
}

}  // namespace evalkit
}  // namespace rgbd
