#include "rgbd/synthdata.hpp"

#include <algorithm>
#include <cmath>

namespace rgbd {
namespace synth {

namespace {

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
Vec3 normalized(Vec3 a) {
    double n = norm(a);
    require(n > 0, "zero vector cannot be normalized");
    return a * (1.0 / n);
}

struct Rot {
    // columns of the local->world rotation R = Ry(yaw) * Rx(pitch)
    Vec3 cx, cy, cz;

    static Rot from_angles(double yaw_deg, double pitch_deg) {
        double ya = yaw_deg * M_PI / 180.0, pa = pitch_deg * M_PI / 180.0;
        double cyw = std::cos(ya), syw = std::sin(ya);
        double cp = std::cos(pa), sp = std::sin(pa);
        // Ry * Rx applied to basis vectors
        Rot r;
        r.cx = {cyw, 0, -syw};
        r.cy = {syw * sp, cp, cyw * sp};
        r.cz = {syw * cp, -sp, cyw * cp};
        return r;
    }
    Vec3 to_world(Vec3 l) const { return cx * l.x + cy * l.y + cz * l.z; }
    Vec3 to_local(Vec3 w) const { return {dot(w, cx), dot(w, cy), dot(w, cz)}; }
};

// superellipsoid implicit value at a local point
double skull_f(const HeadParams& hp, Vec3 q) {
    double p = hp.exponent;
    return std::pow(std::abs(q.x / hp.ax), p) + std::pow(std::abs(q.y / hp.ay), p) +
           std::pow(std::abs(q.z / hp.az), p) - 1.0;
}

Vec3 skull_grad(const HeadParams& hp, Vec3 q) {
    double p = hp.exponent;
    auto g = [p](double v, double a) {
        double t = std::abs(v / a);
        double d = p / a * std::pow(t, p - 1.0);
        return v < 0 ? -d : d;
    };
    return {g(q.x, hp.ax), g(q.y, hp.ay), g(q.z, hp.az)};
}

// z of the skull surface on the front (-z) side at local (x, y); NaN-free:
// returns false when outside the silhouette
bool skull_front_z(const HeadParams& hp, double x, double y, double* z) {
    double p = hp.exponent;
    double r = 1.0 - std::pow(std::abs(x / hp.ax), p) - std::pow(std::abs(y / hp.ay), p);
    if (r <= 0) return false;
    *z = -hp.az * std::pow(r, 1.0 / p);
    return true;
}

// bracketed bisection for the skull along the local ray o + t*d
bool march_skull(const HeadParams& hp, Vec3 o, Vec3 d, double t0, double t1, double* t_hit) {
    const int kSteps = 64;
    double dt = (t1 - t0) / kSteps;
    double prev_t = t0, prev_f = skull_f(hp, o + d * t0);
    if (prev_f <= 0) {  // started inside
        *t_hit = t0;
        return true;
    }
    for (int i = 1; i <= kSteps; i++) {
        double t = t0 + dt * i;
        double f = skull_f(hp, o + d * t);
        if (f <= 0) {
            double lo = prev_t, hi = t;
            for (int it = 0; it < 60; it++) {
                double mid = 0.5 * (lo + hi);
                if (skull_f(hp, o + d * mid) <= 0)
                    hi = mid;
                else
                    lo = mid;
            }
            *t_hit = 0.5 * (lo + hi);
            return true;
        }
        prev_t = t;
        prev_f = f;
    }
    (void)prev_f;
    return false;
}

// closed-form ray/ellipsoid intersection (center c, semi-axes a) in local frame
bool hit_ellipsoid(Vec3 o, Vec3 d, Vec3 c, Vec3 a, double* t_hit, Vec3* n_out) {
    Vec3 ro = {(o.x - c.x) / a.x, (o.y - c.y) / a.y, (o.z - c.z) / a.z};
    Vec3 rd = {d.x / a.x, d.y / a.y, d.z / a.z};
    double A = dot(rd, rd), B = 2.0 * dot(ro, rd), C = dot(ro, ro) - 1.0;
    double disc = B * B - 4 * A * C;
    if (disc < 0) return false;
    double sq = std::sqrt(disc);
    double t = (-B - sq) / (2 * A);
    if (t < 0) t = (-B + sq) / (2 * A);
    if (t < 0) return false;
    *t_hit = t;
    Vec3 q = o + d * t;
    *n_out = normalized({(q.x - c.x) / (a.x * a.x), (q.y - c.y) / (a.y * a.y),
                         (q.z - c.z) / (a.z * a.z)});
    return true;
}

enum class Region { background, skin, nose, eye, mouth };

}  // namespace

HeadParams identity_params(int64_t identity_id) {
    Rng rng(fnv1a64(&identity_id, sizeof(identity_id), 0x9e3779b97f4a7c15ULL));
    HeadParams hp;
    hp.ax = 0.40 + rng.uniform(-0.05, 0.05);
    hp.ay = 0.54 + rng.uniform(-0.05, 0.05);
    hp.az = 0.46 + rng.uniform(-0.04, 0.04);
    hp.exponent = rng.uniform(2.0, 2.8);
    hp.center_z = 1.2 + rng.uniform(-0.04, 0.04);
    hp.nose_y = 0.04 + rng.uniform(-0.02, 0.02);
    hp.nose_ax = 0.085 + rng.uniform(-0.015, 0.015);
    hp.nose_ay = 0.17 + rng.uniform(-0.03, 0.03);
    hp.nose_az = 0.13 + rng.uniform(-0.02, 0.02);
    hp.eye_x = 0.17 + rng.uniform(-0.02, 0.02);
    hp.eye_y = -0.16 + rng.uniform(-0.02, 0.02);
    hp.eye_r = 0.085 + rng.uniform(-0.012, 0.012);
    hp.mouth_y = 0.30 + rng.uniform(-0.02, 0.02);
    hp.mouth_half_w = 0.16 + rng.uniform(-0.03, 0.03);
    hp.skin = {(float)rng.uniform(0.6, 0.9), (float)rng.uniform(0.45, 0.72),
               (float)rng.uniform(0.35, 0.62)};
    hp.eye_color = {(float)rng.uniform(0.75, 0.95), (float)rng.uniform(0.78, 0.95),
                    (float)rng.uniform(0.82, 0.98)};
    hp.mouth_color = {(float)rng.uniform(0.38, 0.55), (float)rng.uniform(0.10, 0.2),
                      (float)rng.uniform(0.10, 0.2)};
    hp.background = {(float)(0.12 + rng.uniform(-0.03, 0.03)),
                     (float)(0.13 + rng.uniform(-0.03, 0.03)),
                     (float)(0.16 + rng.uniform(-0.03, 0.03))};
    return hp;
}

RGBDSample render_with(const HeadParams& hp, int64_t identity_id, double yaw_deg,
                       double pitch_deg, double expression, const std::array<double, 3>& light,
                       int size) {
    require_cfg(size == 32 || size == 64 || size == 128 || size == 256,
                strf("render size %d unsupported (32/64/128/256)", size));
    require_cfg(std::abs(yaw_deg) <= 45.0 && std::abs(pitch_deg) <= 45.0,
                "pose must stay within +/-45 degrees");
    require_cfg(expression >= 0.0 && expression <= 1.0, "expression must lie in [0,1]");
    Vec3 l = normalized({light[0], light[1], light[2]});

    RGBDSample s;
    s.rgb = Tensor({3, size, size});
    s.depth = Tensor({(int64_t)size, (int64_t)size}, (float)kFarPlane);
    s.valid = Tensor({(int64_t)size, (int64_t)size});
    s.identity_id = identity_id;
    s.yaw = yaw_deg;
    s.pitch = pitch_deg;
    s.expression = expression;

    Rot rot = Rot::from_angles(yaw_deg, pitch_deg);
    Vec3 center = {0, 0, hp.center_z};
    double bound = std::max({hp.ax, hp.ay, hp.az}) + std::max(hp.nose_az, hp.eye_r) + 0.02;
    double mh = hp.mouth_min_h + (hp.mouth_max_h - hp.mouth_min_h) * expression;

    for (int i = 0; i < size; i++) {
        double v = (2.0 * (i + 0.5) / size) - 1.0;
        for (int j = 0; j < size; j++) {
            double u = (2.0 * (j + 0.5) / size) - 1.0;
            // bounding-sphere reject in world coordinates
            double rr = u * u + v * v;
            if (rr > bound * bound) {
                for (int c = 0; c < 3; c++)
                    s.rgb[(c * size + i) * size + j] = hp.background[(size_t)c] * 2.0f - 1.0f;
                continue;
            }
            Vec3 o_l = rot.to_local(Vec3{u, v, 0} - center);
            Vec3 d_l = rot.to_local({0, 0, 1});

            double best_t = 1e30;
            Region region = Region::background;
            Vec3 n_l{};

            double t0 = hp.center_z - bound, t1 = hp.center_z + bound;
            double t_sk;
            if (march_skull(hp, o_l, d_l, t0, t1, &t_sk)) {
                best_t = t_sk;
                region = Region::skin;
                n_l = normalized(skull_grad(hp, o_l + d_l * t_sk));
            }
            // nose ridge
            if (hp.nose_ax > 0) {
                double zs;
                if (skull_front_z(hp, 0.0, hp.nose_y, &zs)) {
                    Vec3 nc = {0, hp.nose_y, zs + 0.35 * hp.nose_az};
                    double t;
                    Vec3 n;
                    if (hit_ellipsoid(o_l, d_l, nc, {hp.nose_ax, hp.nose_ay, hp.nose_az}, &t,
                                      &n) &&
                        t < best_t) {
                        best_t = t;
                        region = Region::nose;
                        n_l = n;
                    }
                }
            }
            // eyes
            for (int e = -1; hp.eye_r > 0 && e <= 1; e += 2) {
                double zs;
                if (!skull_front_z(hp, e * hp.eye_x, hp.eye_y, &zs)) continue;
                Vec3 ec = {e * hp.eye_x, hp.eye_y, zs + 0.55 * hp.eye_r};
                double t;
                Vec3 n;
                if (hit_ellipsoid(o_l, d_l, ec, {hp.eye_r, hp.eye_r, hp.eye_r}, &t, &n) &&
                    t < best_t) {
                    best_t = t;
                    region = Region::eye;
                    n_l = n;
                }
            }

            if (region == Region::background) {
                for (int c = 0; c < 3; c++)
                    s.rgb[(c * size + i) * size + j] = hp.background[(size_t)c] * 2.0f - 1.0f;
                continue;
            }

            double depth = best_t;
            const std::array<float, 3>* base = &hp.skin;
            if (region == Region::nose) base = &hp.skin;
            if (region == Region::eye) base = &hp.eye_color;

            double cavity = 0.0;
            if (region == Region::skin && hp.mouth_half_w > 0) {
                Vec3 q = o_l + d_l * best_t;
                if (q.z < 0) {
                    double ex = q.x / hp.mouth_half_w;
                    double ey = (q.y - hp.mouth_y) / mh;
                    double re2 = ex * ex + ey * ey;
                    if (re2 <= 1.0) {
                        // recessed cavity, deepest at the mouth center
                        cavity = hp.mouth_depth * expression * (1.0 - re2);
                        depth += cavity;
                        base = &hp.mouth_color;
                        region = Region::mouth;
                    }
                }
            }

            // shading in camera space (z toward the viewer)
            Vec3 n_w = rot.to_world(n_l);
            Vec3 n_cam = {n_w.x, n_w.y, -n_w.z};
            double shade = 0.2 + 0.8 * std::max(0.0, dot(n_cam, l));
            if (region == Region::mouth) shade *= 1.0 - 0.55 * (cavity / hp.mouth_depth);

            s.depth[i * (int64_t)size + j] = (float)depth;
            s.valid[i * (int64_t)size + j] = 1.0f;
            for (int c = 0; c < 3; c++) {
                double col = (double)(*base)[(size_t)c] * shade;
                col = col < 0 ? 0 : (col > 1 ? 1 : col);
                s.rgb[(c * size + i) * size + j] = (float)(col * 2.0 - 1.0);
            }
        }
    }
    return s;
}

RGBDSample render_sample(int64_t identity_id, double yaw_deg, double pitch_deg, double expression,
                         const std::array<double, 3>& light, int size) {
    return render_with(identity_params(identity_id), identity_id, yaw_deg, pitch_deg, expression,
                       light, size);
}

std::array<int, 4> mouth_box(const HeadParams& hp, int size) {
    // frontal projection: local x,y are image u,v
    double x0 = -hp.mouth_half_w * 1.15, x1 = hp.mouth_half_w * 1.15;
    double y0 = hp.mouth_y - hp.mouth_max_h * 1.3, y1 = hp.mouth_y + hp.mouth_max_h * 1.3;
    auto to_px = [size](double t) {
        int p = (int)std::floor((t + 1.0) * 0.5 * size);
        return std::clamp(p, 0, size - 1);
    };
    return {to_px(y0), to_px(y1) + 1, to_px(x0), to_px(x1) + 1};
}

WildCorruption sample_corruption(Rng& rng, const WildConfig& cfg) {
    WildCorruption c;
    c.bias_amp = rng.uniform(cfg.bias_amp_min, cfg.bias_amp_max);
    for (auto& f : c.bias_freq) f = rng.uniform(1.5, 4.5);
    for (auto& p : c.bias_phase) p = rng.uniform(0, 2 * M_PI);
    c.scale = 1.0 + rng.uniform(-cfg.scale_jitter, cfg.scale_jitter);
    c.shift = rng.uniform(-cfg.shift_jitter, cfg.shift_jitter);
    c.mouth_smooth_iters = cfg.mouth_smooth_iters;
    for (int i = 0; i < 3; i++) {
        c.gain[(size_t)i] = (float)(1.0 + rng.uniform(-cfg.color_jitter, cfg.color_jitter));
        c.offset[(size_t)i] = (float)rng.uniform(-cfg.color_jitter * 0.5, cfg.color_jitter * 0.5);
    }
    c.replace_background = cfg.replace_background;
    for (int i = 0; i < 3; i++) {
        c.bg_top[(size_t)i] = (float)rng.uniform(0.1, 0.9);
        c.bg_bottom[(size_t)i] = (float)rng.uniform(0.1, 0.9);
    }
    return c;
}

RGBDSample apply_corruption(const RGBDSample& studio, const WildCorruption& c) {
    RGBDSample w = studio;
    w.split = "wild";
    int64_t h = studio.depth.shape[0], ww = studio.depth.shape[1];

    // head depth range under the valid mask
    double dmin = 1e30, dmax = -1e30;
    for (int64_t i = 0; i < studio.depth.numel(); i++)
        if (studio.valid[i] != 0.0f) {
            dmin = std::min(dmin, (double)studio.depth[i]);
            dmax = std::max(dmax, (double)studio.depth[i]);
        }
    double range = dmax > dmin ? dmax - dmin : 1.0;
    double mean_d = 0.5 * (dmin + dmax);

    for (int64_t i = 0; i < h; i++) {
        double v = (2.0 * ((double)i + 0.5) / (double)h) - 1.0;
        for (int64_t j = 0; j < ww; j++) {
            double u = (2.0 * ((double)j + 0.5) / (double)ww) - 1.0;
            int64_t idx = i * ww + j;
            if (studio.valid[idx] == 0.0f) continue;
            double bias = c.bias_amp * range *
                          (0.5 * std::cos(c.bias_freq[0] * u + c.bias_freq[1] * v + c.bias_phase[0]) +
                           0.3 * std::cos(c.bias_freq[2] * u - c.bias_freq[3] * v + c.bias_phase[1]) +
                           0.2 * std::cos(c.bias_freq[4] * (u + v) + c.bias_phase[2]));
            double d = (double)studio.depth[idx];
            d = mean_d + ((d - mean_d) * c.scale) + c.shift * range + bias;
            w.depth[idx] = (float)d;
        }
    }

    // mouth-region geometric smoothing (lower-central face area)
    for (int it = 0; it < c.mouth_smooth_iters; it++) {
        Tensor src = w.depth;
        int64_t r0 = (int64_t)(0.55 * (double)h), r1 = (int64_t)(0.9 * (double)h);
        int64_t c0 = (int64_t)(0.25 * (double)ww), c1 = (int64_t)(0.75 * (double)ww);
        for (int64_t i = std::max<int64_t>(r0, 1); i < std::min(r1, h - 1); i++)
            for (int64_t j = std::max<int64_t>(c0, 1); j < std::min(c1, ww - 1); j++) {
                if (w.valid[i * ww + j] == 0.0f) continue;
                double acc = 0;
                int cnt = 0;
                for (int di = -1; di <= 1; di++)
                    for (int dj = -1; dj <= 1; dj++) {
                        int64_t idx = (i + di) * ww + (j + dj);
                        if (w.valid[idx] == 0.0f) continue;
                        acc += src[idx];
                        cnt++;
                    }
                w.depth[i * ww + j] = (float)(acc / cnt);
            }
    }

    for (int64_t ch = 0; ch < 3; ch++)
        for (int64_t i = 0; i < h; i++)
            for (int64_t j = 0; j < ww; j++) {
                int64_t idx = (ch * h + i) * ww + j;
                if (studio.valid[i * ww + j] != 0.0f) {
                    double p01 = ((double)w.rgb[idx] + 1.0) * 0.5;
                    p01 = p01 * c.gain[(size_t)ch] + c.offset[(size_t)ch];
                    p01 = std::clamp(p01, 0.0, 1.0);
                    w.rgb[idx] = (float)(p01 * 2.0 - 1.0);
                } else if (c.replace_background) {
                    double t = ((double)i + 0.5) / (double)h;
                    double p01 = (1.0 - t) * c.bg_top[(size_t)ch] + t * c.bg_bottom[(size_t)ch];
                    w.rgb[idx] = (float)(p01 * 2.0 - 1.0);
                }
            }
    return w;
}

RGBDSample make_wild_sample(const RGBDSample& studio, Rng& rng, const WildConfig& cfg) {
    return apply_corruption(studio, sample_corruption(rng, cfg));
}

Tensor audio_features_from_signal(const std::vector<float>& signal, Rng& rng,
                                  double noise_sigma) {
    require(!signal.empty(), "audio provider: empty driving signal");
    Tensor feats({(int64_t)signal.size(), (int64_t)kAudioDim});
    // fixed sinusoid bank; channel 0 is monotone in the signal on [0,1]
    for (size_t t = 0; t < signal.size(); t++) {
        double s = signal[t];
        for (int a = 0; a < kAudioDim; a++) {
            double freq = a == 0 ? 1.2 : 0.8 + 0.45 * a;
            double phase = a == 0 ? -0.6 : 0.9 * a;
            double v = std::sin(freq * s + phase);
            feats[(int64_t)t * kAudioDim + a] = (float)(v + noise_sigma * rng.normal());
        }
    }
    return feats;
}

ClipSample make_clip(int64_t identity_id, int t_frames, int size, Rng& rng, bool wild_style,
                     bool pose_drift) {
    require_cfg(t_frames >= 1, "clip length must be positive");
    ClipSample clip;
    // smoothed uniform random walk clipped to [0,1]
    std::vector<float> walk((size_t)t_frames);
    double x = rng.uniform();
    for (int t = 0; t < t_frames; t++) {
        x = std::clamp(x + rng.uniform(-0.25, 0.25), 0.0, 1.0);
        walk[(size_t)t] = (float)x;
    }
    clip.driving_signal.resize((size_t)t_frames);
    for (int t = 0; t < t_frames; t++) {
        double acc = 0;
        for (int k = -2; k <= 2; k++) {
            int idx = std::clamp(t + k, 0, t_frames - 1);
            acc += walk[(size_t)idx];
        }
        clip.driving_signal[(size_t)t] = (float)(acc / 5.0);
    }
    clip.audio.features = audio_features_from_signal(clip.driving_signal, rng);
    clip.audio.frame_rate = 25.0f;

    WildCorruption corr = sample_corruption(rng);
    double yaw = pose_drift ? rng.uniform(-8.0, 8.0) : 0.0;
    double pitch = pose_drift ? rng.uniform(-6.0, 6.0) : 0.0;
    std::array<double, 3> light = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.1), 1.0};

    for (int t = 0; t < t_frames; t++) {
        if (pose_drift) {
            yaw = std::clamp(yaw + rng.uniform(-0.8, 0.8), -12.0, 12.0);
            pitch = std::clamp(pitch + rng.uniform(-0.5, 0.5), -8.0, 8.0);
        }
        RGBDSample f = render_sample(identity_id, yaw, pitch,
                                     (double)clip.driving_signal[(size_t)t], light, size);
        clip.frames.push_back(wild_style ? apply_corruption(f, corr) : f);
        clip.frames.back().expression = clip.driving_signal[(size_t)t];
    }
    clip.mouth_box = mouth_box(identity_params(identity_id), size);
    return clip;
}

}  // namespace synth
}  // namespace rgbd
