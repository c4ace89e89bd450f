#ifndef RGBD_SYNTHDATA_HPP
#define RGBD_SYNTHDATA_HPP

#include <array>
#include <string>
#include <vector>

#include "rgbd/rng.hpp"
#include "rgbd/tensor.hpp"

namespace rgbd {
namespace synth {

// Procedural head: superellipsoid skull, two eye spheres, a nose-ridge
// ellipsoid and a mouth ellipse whose vertical opening is the expression
// scalar. All positions in head-local units (x right, y down, z into the
// scene; the face looks along -z toward the camera).
struct HeadParams {
    double ax = 0.40, ay = 0.54, az = 0.46;  // skull semi-axes
    double exponent = 2.2;                   // superellipsoid exponent
    double center_z = 1.2;                   // head center distance

    double nose_y = 0.04;
    double nose_ax = 0.085, nose_ay = 0.17, nose_az = 0.13;
    double eye_x = 0.17, eye_y = -0.16, eye_r = 0.085;
    double mouth_y = 0.30, mouth_half_w = 0.16;
    double mouth_min_h = 0.015, mouth_max_h = 0.11;
    double mouth_depth = 0.085;  // cavity depth at full opening

    std::array<float, 3> skin{0.78f, 0.62f, 0.52f};
    std::array<float, 3> eye_color{0.85f, 0.88f, 0.92f};
    std::array<float, 3> mouth_color{0.45f, 0.16f, 0.15f};
    std::array<float, 3> background{0.12f, 0.13f, 0.16f};
};

// Deterministic geometry/palette from the identity id.
HeadParams identity_params(int64_t identity_id);

struct RGBDSample {
    Tensor rgb;    // [3,H,W] in [-1,1]
    Tensor depth;  // [H,W] length units; background at the far plane
    Tensor valid;  // [H,W] 1 where geometry was hit
    int64_t identity_id = 0;
    double yaw = 0, pitch = 0;  // degrees
    double expression = 0;      // mouth opening in [0,1]
    std::string split = "studio";
};

constexpr double kFarPlane = 2.0;
constexpr double kNearPlane = 0.5;

// Orthographic ray-cast render. light_dir is in camera space (x right,
// y down, z toward the viewer) and is normalized internally.
RGBDSample render_sample(int64_t identity_id, double yaw_deg, double pitch_deg, double expression,
                         const std::array<double, 3>& light_dir, int size);
// test hook with explicit geometry
RGBDSample render_with(const HeadParams& hp, int64_t identity_id, double yaw_deg,
                       double pitch_deg, double expression,
                       const std::array<double, 3>& light_dir, int size);

// mouth footprint (row0,row1,col0,col1) of the frontal pose at `size`
std::array<int, 4> mouth_box(const HeadParams& hp, int size);

// Structured depth corruption emulating tracked pseudo ground truth, plus
// mild photometric change and background replacement.
struct WildConfig {
    double bias_amp_min = 0.006, bias_amp_max = 0.016;  // fraction of head depth range
    double scale_jitter = 0.005;
    double shift_jitter = 0.005;  // fraction of head depth range
    int mouth_smooth_iters = 1;
    double color_jitter = 0.1;
    bool replace_background = true;
};

// one clip-stable draw of corruption parameters
struct WildCorruption {
    double bias_amp = 0;
    std::array<double, 6> bias_freq{};
    std::array<double, 3> bias_phase{};
    double scale = 1.0, shift = 0.0;
    int mouth_smooth_iters = 0;
    std::array<float, 3> gain{1, 1, 1}, offset{0, 0, 0};
    bool replace_background = false;
    std::array<float, 3> bg_top{}, bg_bottom{};
};

WildCorruption sample_corruption(Rng& rng, const WildConfig& cfg = {});
RGBDSample apply_corruption(const RGBDSample& studio, const WildCorruption& c);
RGBDSample make_wild_sample(const RGBDSample& studio, Rng& rng, const WildConfig& cfg = {});

// ---------------------------------------------------------------- clips

struct AudioTrack {
    Tensor features;  // [T, A]
    float frame_rate = 25.0f;
};

constexpr int kAudioDim = 16;

struct ClipSample {
    std::vector<RGBDSample> frames;
    AudioTrack audio;
    std::vector<float> driving_signal;  // mouth-open trajectory, one per frame
    std::array<int, 4> mouth_box{};     // frontal mouth footprint
};

// Sinusoid-bank audio features evaluated at the driving signal; channel 0 is
// near-linear in the signal so the audio->mouth mapping is learnable.
Tensor audio_features_from_signal(const std::vector<float>& signal, Rng& rng,
                                  double noise_sigma = 0.05);

ClipSample make_clip(int64_t identity_id, int t_frames, int size, Rng& rng,
                     bool wild_style = true, bool pose_drift = true);

}  // namespace synth
}  // namespace rgbd

#endif
