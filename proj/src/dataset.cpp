#include "rgbd/dataset.hpp"

#include <filesystem>
#include <fstream>

#include "rgbd/image_io.hpp"

namespace rgbd {
namespace synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// identity id namespaces keep train and eval disjoint by construction
constexpr int64_t kStudioBase = 0;
constexpr int64_t kWildBase = 10000;
constexpr int64_t kEvalBase = 20000;
constexpr int64_t kClipBase = 30000;

void write_sample(const std::string& root, const std::string& base, const RGBDSample& s) {
    io::write_ppm(root + "/" + base + ".rgb.ppm", s.rgb);
    io::write_pgm16(root + "/" + base + ".depth.pgm", s.depth, (float)kNearPlane,
                    (float)kFarPlane);
    io::write_pbm(root + "/" + base + ".mask.pbm", s.valid);
}

json sample_entry(const std::string& base, const RGBDSample& s) {
    json e;
    e["base"] = base;
    e["identity"] = s.identity_id;
    e["yaw"] = s.yaw;
    e["pitch"] = s.pitch;
    e["expression"] = s.expression;
    e["split"] = s.split;
    return e;
}

std::array<double, 3> draw_light(Rng& rng) {
    return {rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.15), 1.0};
}

RGBDSample draw_studio(int64_t id, int size, Rng& rng) {
    return render_sample(id, rng.uniform(-30, 30), rng.uniform(-20, 20), rng.uniform(0, 1),
                         draw_light(rng), size);
}

}  // namespace

json build_dataset(const DatasetConfig& cfg) {
    require_cfg(cfg.studio_per_id >= 2 && cfg.eval_per_id >= 2,
                "each identity needs at least two samples so reference pairs exist");
    require_cfg(cfg.clip_frames >= 1, "clips need at least one frame");
    fs::create_directories(cfg.out_dir);

    Rng master(cfg.seed);
    Rng studio_rng = master.fork(1);
    Rng wild_rng = master.fork(2);
    Rng clip_rng = master.fork(3);
    Rng eval_rng = master.fork(4);

    json manifest;
    manifest["size"] = cfg.size;
    manifest["near"] = kNearPlane;
    manifest["far"] = kFarPlane;
    manifest["seed"] = cfg.seed;
    manifest["config_hash"] =
        strf("%016llx",
             (unsigned long long)fnv1a64(strf(
                 "%d|%d|%d|%d|%d|%d|%d|%d|%d|%llu", cfg.size, cfg.studio_ids, cfg.studio_per_id,
                 cfg.wild_ids, cfg.wild_per_id, cfg.clips, cfg.clip_frames, cfg.eval_ids,
                 cfg.eval_per_id, (unsigned long long)cfg.seed)));
    manifest["audio_dim"] = kAudioDim;
    manifest["frame_rate"] = 25.0;
    manifest["counts"] = {{"studio_ids", cfg.studio_ids},
                          {"studio_per_id", cfg.studio_per_id},
                          {"wild_ids", cfg.wild_ids},
                          {"wild_per_id", cfg.wild_per_id},
                          {"clips", cfg.clips},
                          {"clip_frames", cfg.clip_frames},
                          {"eval_ids", cfg.eval_ids},
                          {"eval_per_id", cfg.eval_per_id}};

    json train = json::array();
    for (int i = 0; i < cfg.studio_ids; i++) {
        int64_t id = kStudioBase + i;
        fs::create_directories(strf("%s/studio/id_%04d", cfg.out_dir.c_str(), i));
        for (int k = 0; k < cfg.studio_per_id; k++) {
            RGBDSample s = draw_studio(id, cfg.size, studio_rng);
            std::string base = strf("studio/id_%04d/s_%03d", i, k);
            write_sample(cfg.out_dir, base, s);
            train.push_back(sample_entry(base, s));
        }
    }
    for (int i = 0; i < cfg.wild_ids; i++) {
        int64_t id = kWildBase + i;
        fs::create_directories(strf("%s/wild/id_%04d", cfg.out_dir.c_str(), i));
        for (int k = 0; k < cfg.wild_per_id; k++) {
            RGBDSample s = make_wild_sample(draw_studio(id, cfg.size, wild_rng), wild_rng);
            std::string base = strf("wild/id_%04d/s_%03d", i, k);
            write_sample(cfg.out_dir, base, s);
            train.push_back(sample_entry(base, s));
        }
    }
    manifest["train"] = train;

    json eval_studio = json::array(), eval_wild = json::array();
    for (int i = 0; i < cfg.eval_ids; i++) {
        int64_t id = kEvalBase + i;
        fs::create_directories(strf("%s/eval/id_%04d", cfg.out_dir.c_str(), i));
        fs::create_directories(strf("%s/eval_wild/id_%04d", cfg.out_dir.c_str(), i));
        for (int k = 0; k < cfg.eval_per_id; k++) {
            RGBDSample s = draw_studio(id, cfg.size, eval_rng);
            std::string base = strf("eval/id_%04d/s_%03d", i, k);
            write_sample(cfg.out_dir, base, s);
            eval_studio.push_back(sample_entry(base, s));
            RGBDSample w = make_wild_sample(s, eval_rng);
            std::string wbase = strf("eval_wild/id_%04d/s_%03d", i, k);
            write_sample(cfg.out_dir, wbase, w);
            eval_wild.push_back(sample_entry(wbase, w));
        }
    }
    manifest["eval_studio"] = eval_studio;
    manifest["eval_wild"] = eval_wild;

    json clips = json::array();
    for (int ci = 0; ci < cfg.clips; ci++) {
        int64_t id = kClipBase + ci;
        std::string dir = strf("clips/c_%04d", ci);
        fs::create_directories(cfg.out_dir + "/" + dir);
        ClipSample clip = make_clip(id, cfg.clip_frames, cfg.size, clip_rng);
        for (int t = 0; t < cfg.clip_frames; t++)
            write_sample(cfg.out_dir, strf("%s/f_%03d", dir.c_str(), t),
                         clip.frames[(size_t)t]);
        io::write_audio_features(cfg.out_dir + "/" + dir + "/audio.audf", clip.audio.features,
                                 clip.audio.frame_rate);
        json e;
        e["dir"] = dir;
        e["identity"] = id;
        e["frames"] = cfg.clip_frames;
        e["mouth_box"] = clip.mouth_box;
        e["driving_signal"] = clip.driving_signal;
        clips.push_back(e);
    }
    manifest["clips"] = clips;

    std::ofstream f(cfg.out_dir + "/manifest.json");
    if (!f) throw IoError("cannot write manifest under " + cfg.out_dir);
    f << manifest.dump(1) << "\n";
    return manifest;
}

namespace {

SampleRecord record_of(const json& e) {
    SampleRecord r;
    r.base = e.at("base").get<std::string>();
    r.identity = e.at("identity").get<int64_t>();
    r.yaw = e.at("yaw").get<double>();
    r.pitch = e.at("pitch").get<double>();
    r.expression = e.at("expression").get<double>();
    r.split = e.at("split").get<std::string>();
    return r;
}

}  // namespace

Dataset load_dataset(const std::string& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw IoError("cannot open dataset manifest: " + manifest_path);
    Dataset d;
    f >> d.manifest;
    d.root = fs::path(manifest_path).parent_path().string();
    if (d.root.empty()) d.root = ".";
    d.size = d.manifest.at("size").get<int>();
    d.near = d.manifest.at("near").get<double>();
    d.far = d.manifest.at("far").get<double>();
    for (auto& e : d.manifest.at("train")) d.train.push_back(record_of(e));
    for (auto& e : d.manifest.at("eval_studio")) d.eval_studio.push_back(record_of(e));
    for (auto& e : d.manifest.at("eval_wild")) d.eval_wild.push_back(record_of(e));
    for (auto& e : d.manifest.at("clips")) {
        ClipRecord c;
        c.dir = e.at("dir").get<std::string>();
        c.identity = e.at("identity").get<int64_t>();
        c.frames = e.at("frames").get<int>();
        auto mb = e.at("mouth_box").get<std::vector<int>>();
        for (int i = 0; i < 4; i++) c.mouth_box[(size_t)i] = mb[(size_t)i];
        d.clips.push_back(c);
    }
    for (size_t i = 0; i < d.train.size(); i++)
        d.by_identity[d.train[i].identity].push_back(i);
    return d;
}

RGBDSample Dataset::load_sample(const SampleRecord& r) const {
    RGBDSample s;
    s.rgb = io::read_ppm(root + "/" + r.base + ".rgb.ppm");
    s.depth = io::read_pgm16(root + "/" + r.base + ".depth.pgm", (float)near, (float)far);
    s.valid = io::read_pbm(root + "/" + r.base + ".mask.pbm");
    s.identity_id = r.identity;
    s.yaw = r.yaw;
    s.pitch = r.pitch;
    s.expression = r.expression;
    s.split = r.split;
    return s;
}

RGBDSample Dataset::load_clip_frame(const ClipRecord& c, int i) const {
    SampleRecord r;
    r.base = strf("%s/f_%03d", c.dir.c_str(), i);
    r.identity = c.identity;
    r.split = "wild";
    return load_sample(r);
}

AudioTrack Dataset::load_clip_audio(const ClipRecord& c) const {
    auto [feats, rate] = io::read_audio_features(root + "/" + c.dir + "/audio.audf");
    AudioTrack t;
    t.features = std::move(feats);
    t.frame_rate = rate;
    return t;
}

std::vector<float> Dataset::clip_driving_signal(const ClipRecord& c) const {
    for (auto& e : manifest.at("clips"))
        if (e.at("dir").get<std::string>() == c.dir)
            return e.at("driving_signal").get<std::vector<float>>();
    throw IoError("clip not in manifest: " + c.dir);
}

}  // namespace synth
}  // namespace rgbd
