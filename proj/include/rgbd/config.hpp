#ifndef RGBD_CONFIG_HPP
#define RGBD_CONFIG_HPP

#include <map>
#include <string>
#include <vector>

#include "rgbd/common.hpp"

namespace rgbd {
namespace cli {

// flat section/key=value text; '#' comments; unknown keys are hard errors
struct IniFile {
    std::map<std::string, std::map<std::string, std::string>> sections;
    static IniFile parse_string(const std::string& text);
    static IniFile parse_file(const std::string& path);
};

struct RunConfig {
    std::string stage;  // vae | rgb | joint | inpaint | motion
    std::string data_manifest;
    std::string out_dir = "runs/out";
    uint64_t seed = 1;
    int image_size = 64;

    // model
    int vae_base = 32;
    int base_channels = 64;
    std::vector<int> channel_mults = {1, 2, 4};
    std::vector<int> attn_resolutions = {8, 4};
    int head_dim = 32;

    // schedule
    int levels = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.02;

    // train
    int steps = 5000;
    int batch = 32;
    double lr = 1e-5;
    double lambda_kl = 1e-6;
    int log_every = 50;
    int sample_every = 0;
    int workers = 0;  // loader threads; results are bitwise-independent of it
    std::string ckpt_out;
    std::string parent;

    // motion
    int frames_per_seq = 14;
    int n_motion = 4;
    int audio_window = 5;

    static RunConfig from_ini(const IniFile& ini);
    static RunConfig from_file(const std::string& path);
    std::string canonical_text() const;  // deterministic; hashed into checkpoints
    std::string config_hash() const;
};

// the documented per-stage training defaults
RunConfig default_config(const std::string& stage);

}  // namespace cli
}  // namespace rgbd

#endif
