#ifndef RGBD_DATASET_HPP
#define RGBD_DATASET_HPP

#include <array>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "rgbd/synthdata.hpp"

namespace rgbd {
namespace synth {

struct DatasetConfig {
    std::string out_dir;
    int size = 64;
    int studio_ids = 64, studio_per_id = 40;
    int wild_ids = 32, wild_per_id = 40;
    int clips = 64, clip_frames = 56;
    int eval_ids = 8, eval_per_id = 8;
    uint64_t seed = 7;
};

struct SampleRecord {
    std::string base;  // path prefix relative to the dataset root
    int64_t identity = 0;
    double yaw = 0, pitch = 0, expression = 0;
    std::string split;
};

struct ClipRecord {
    std::string dir;
    int64_t identity = 0;
    int frames = 0;
    std::array<int, 4> mouth_box{};
};

struct Dataset {
    std::string root;
    nlohmann::json manifest;
    int size = 64;
    double near = kNearPlane, far = kFarPlane;
    std::vector<SampleRecord> train;  // studio + wild mixture
    std::vector<SampleRecord> eval_studio;
    std::vector<SampleRecord> eval_wild;
    std::vector<ClipRecord> clips;
    std::map<int64_t, std::vector<size_t>> by_identity;  // train indices

    RGBDSample load_sample(const SampleRecord& r) const;
    // clip frame i of record c plus the audio track
    RGBDSample load_clip_frame(const ClipRecord& c, int i) const;
    AudioTrack load_clip_audio(const ClipRecord& c) const;
    std::vector<float> clip_driving_signal(const ClipRecord& c) const;
};

// Renders and writes the whole corpus; returns the manifest. Deterministic:
// the same config regenerates byte-identical files.
nlohmann::json build_dataset(const DatasetConfig& cfg);

Dataset load_dataset(const std::string& manifest_path);

}  // namespace synth
}  // namespace rgbd

#endif
