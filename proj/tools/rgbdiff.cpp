// rgbdiff: joint RGB+depth latent diffusion for portrait-proxy images.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "rgbd/image_io.hpp"
#include "rgbd/inpaint.hpp"
#include "rgbd/motion.hpp"
#include "rgbd/opregistry.hpp"
#include "rgbd/trainer.hpp"

using namespace rgbd;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// RGBDIFF_OUT_ROOT re-roots relative output paths
std::string out_path(const std::string& p) {
    const char* root = std::getenv("RGBDIFF_OUT_ROOT");
    if (!root || !*root || fs::path(p).is_absolute()) return p;
    return (fs::path(root) / p).string();
}

void write_depth_outputs(const std::string& dir, const std::string& stem, const Tensor& depth,
                         const vae::DepthNormalization& norm) {
    io::write_pgm16(dir + "/" + stem + ".pgm", depth, (float)norm.near, (float)norm.far);
    // grayscale preview
    Tensor vis({3, depth.shape[0], depth.shape[1]});
    for (int64_t i = 0; i < depth.numel(); i++) {
        float v = norm.normalize(depth[i]);
        for (int64_t c = 0; c < 3; c++) vis[c * depth.numel() + i] = v;
    }
    io::write_ppm(dir + "/" + stem + "_vis.ppm", vis);
}

int cmd_synthdata(const synth::DatasetConfig& cfg) {
    auto manifest = synth::build_dataset(cfg);
    std::printf("dataset written to %s (%zu train, %zu eval, %zu clips)\n", cfg.out_dir.c_str(),
                manifest.at("train").size(), manifest.at("eval_studio").size(),
                manifest.at("clips").size());
    return 0;
}

int cmd_train(const std::string& config_path) {
    auto cfg = cli::RunConfig::from_file(config_path);
    cfg.out_dir = out_path(cfg.out_dir);
    auto res = train::run_stage(cfg);
    std::printf("stage %s done: loss %.5f -> %.5f, checkpoint %s\n", cfg.stage.c_str(),
                res.first_loss, res.last_loss, res.ckpt_path.c_str());
    return 0;
}

int cmd_sample(const std::string& ckpt, const std::string& ref_path, const std::string& out_dir,
               int count, int steps, uint64_t seed) {
    auto bundle = ckpt::load_bundle(ckpt);
    Tensor ref = io::read_ppm(ref_path);
    fs::create_directories(out_dir);
    for (int i = 0; i < count; i++) {
        auto s = inpaint::sample_joint(ref, bundle, steps, seed + (uint64_t)i);
        io::write_ppm(strf("%s/sample_%03d.rgb.ppm", out_dir.c_str(), i), s.rgb);
        write_depth_outputs(out_dir, strf("sample_%03d.depth", i), s.depth, bundle.norm);
    }
    std::printf("wrote %d joint samples to %s\n", count, out_dir.c_str());
    return 0;
}

int cmd_predict_depth(const std::string& ckpt, const std::string& image, const std::string& out_dir,
                      int steps, uint64_t seed) {
    auto bundle = ckpt::load_bundle(ckpt);
    Tensor rgb = io::read_ppm(image);
    fs::create_directories(out_dir);
    auto res = inpaint::predict_depth(rgb, bundle, steps, seed);
    write_depth_outputs(out_dir, "depth", res.depth, bundle.norm);
    io::write_ppm(out_dir + "/appearance_roundtrip.ppm", res.appearance);
    std::printf("depth written to %s/depth.pgm\n", out_dir.c_str());
    return 0;
}

int cmd_depth2image(const std::string& ckpt, const std::string& depth_path,
                    const std::string& ref_path, const std::string& out_dir, int steps,
                    uint64_t seed) {
    auto bundle = ckpt::load_bundle(ckpt);
    Tensor depth = io::read_pgm16(depth_path, (float)bundle.norm.near, (float)bundle.norm.far);
    Tensor ref = io::read_ppm(ref_path);
    fs::create_directories(out_dir);
    Tensor rgb = inpaint::generate_from_depth(depth, ref, bundle, steps, seed);
    io::write_ppm(out_dir + "/generated.ppm", rgb);
    std::printf("image written to %s/generated.ppm\n", out_dir.c_str());
    return 0;
}

int cmd_animate(const std::string& ckpt, const std::string& ref_path, const std::string& audio_path,
                int frames, const std::string& out_dir, int steps, uint64_t seed) {
    auto c = ckpt::load_checkpoint(ckpt);
    auto bundle = ckpt::bundle_from_checkpoint(c);
    if (bundle.stage != "motion")
        throw ConfigError("animate needs a motion-stage checkpoint, got '" + bundle.stage + "'");
    auto motion_mod = ckpt::motion_from_checkpoint(c, bundle);
    // the motion checkpoint stores the joint backbone
    Tensor ref = io::read_ppm(ref_path);
    auto [feats, rate] = io::read_audio_features(audio_path);
    motion::AudioTrack track{std::move(feats), rate};
    fs::create_directories(out_dir);
    auto res = motion::animate(ref, track, bundle, motion_mod, frames, steps, seed);
    json manifest;
    manifest["frames"] = frames;
    manifest["frame_rate"] = rate;
    json files = json::array();
    for (int t = 0; t < frames; t++) {
        std::string rgb_name = strf("frame_%04d.rgb.ppm", t);
        io::write_ppm(out_dir + "/" + rgb_name, res.rgb[(size_t)t]);
        write_depth_outputs(out_dir, strf("frame_%04d.depth", t), res.depth[(size_t)t],
                            bundle.norm);
        files.push_back(rgb_name);
    }
    manifest["rgb_files"] = files;
    std::ofstream mf(out_dir + "/clip_manifest.json");
    mf << manifest.dump(1) << "\n";
    std::printf("wrote %d RGBD frames to %s\n", frames, out_dir.c_str());
    return 0;
}

int cmd_relight(const std::string& image, const std::string& depth_path, double near, double far,
                const std::string& light_arg, double ambient, const std::string& out_dir) {
    Tensor rgb = io::read_ppm(image);
    Tensor depth = io::read_pgm16(depth_path, (float)near, (float)far);
    std::array<double, 3> light{0, 0, 1};
    if (std::sscanf(light_arg.c_str(), "%lf,%lf,%lf", &light[0], &light[1], &light[2]) != 3)
        throw ConfigError("light must be given as x,y,z");
    // display-space rgb in [0,1]
    Tensor rgb01(rgb.shape);
    for (int64_t i = 0; i < rgb.numel(); i++) rgb01[i] = (rgb[i] + 1.0f) * 0.5f;
    double pixel_size = 2.0 / (double)depth.shape[1];
    Tensor normals =
        evalkit::normals_from_depth(evalkit::elevation_from_depth(depth, far), pixel_size);
    Tensor lit01 = evalkit::relight(rgb01, normals, light, ambient);
    Tensor lit(rgb.shape);
    for (int64_t i = 0; i < lit.numel(); i++) lit[i] = lit01[i] * 2.0f - 1.0f;
    fs::create_directories(out_dir);
    io::write_ppm(out_dir + "/relit.ppm", lit);
    // normal visualization
    Tensor nvis(normals.shape);
    for (int64_t i = 0; i < normals.numel(); i++) nvis[i] = normals[i];
    io::write_ppm(out_dir + "/normals.ppm", nvis);
    std::printf("relit image written to %s/relit.ppm\n", out_dir.c_str());
    return 0;
}

int cmd_eval_depth(const std::string& ckpt, const std::string& manifest, const std::string& split,
                   int steps, uint64_t seed, const std::string& out_dir) {
    auto bundle = ckpt::load_bundle(ckpt);
    auto data = synth::load_dataset(manifest);
    const auto& records = split == "eval_wild" ? data.eval_wild : data.eval_studio;
    auto summary = train::eval_depth_split(bundle, data, records, steps, seed, out_dir);
    std::printf("split %-10s  (%zu samples; rmse normalized by the near/far range)\n",
                split.c_str(), summary.rows.size());
    std::printf("%-12s %8s %8s %8s\n", "method", "AbsRel", "delta1", "RMSE");
    std::printf("%-12s %8.3f %8.3f %8.3f\n", "ours", summary.mean.abs_rel, summary.mean.delta1,
                summary.mean.rmse);
    return 0;
}

int cmd_gradcheck(int seeds) {
    bool ok = true;
    for (const auto& name : nn::OpRegistry::instance().names()) {
        double worst = 0;
        for (uint64_t s = 1; s <= (uint64_t)seeds; s++) {
            auto rep = nn::grad_check(name, s);
            worst = std::max(worst, rep.max_rel_err);
        }
        bool pass = worst < 1e-4;
        ok = ok && pass;
        std::printf("%-18s max_rel_err %.3e  %s\n", name.c_str(), worst,
                    pass ? "ok" : "FAIL");
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"joint RGB+depth latent diffusion for portrait-proxy images"};
    app.require_subcommand(1);

    // synthdata
    auto* sd = app.add_subcommand("synthdata", "generate the procedural RGBD dataset");
    synth::DatasetConfig dcfg;
    sd->add_option("--out", dcfg.out_dir, "output directory")->required();
    sd->add_option("--size", dcfg.size, "image size (32/64/128/256)");
    sd->add_option("--studio-ids", dcfg.studio_ids);
    sd->add_option("--studio-per-id", dcfg.studio_per_id);
    sd->add_option("--wild-ids", dcfg.wild_ids);
    sd->add_option("--wild-per-id", dcfg.wild_per_id);
    sd->add_option("--clips", dcfg.clips);
    sd->add_option("--clip-frames", dcfg.clip_frames);
    sd->add_option("--eval-ids", dcfg.eval_ids);
    sd->add_option("--eval-per-id", dcfg.eval_per_id);
    sd->add_option("--seed", dcfg.seed);

    // train
    auto* tr = app.add_subcommand("train", "run one training stage from a config file");
    std::string config_path;
    tr->add_option("--config", config_path, "INI config")->required();

    // expand
    auto* ex = app.add_subcommand("expand", "expand an rgb checkpoint to the joint init");
    std::string ex_in, ex_out;
    ex->add_option("--in", ex_in, "rgb-stage checkpoint")->required();
    ex->add_option("--out", ex_out, "output checkpoint")->required();

    // shared sampling options
    std::string ckpt_path, ref_path, image_path, depth_path, audio_path, out_dir, split =
        "eval_studio";
    int steps = 50, count = 4, frames = 28;
    uint64_t seed = 0;

    auto* sa = app.add_subcommand("sample", "reference-conditioned joint RGBD sampling");
    sa->add_option("--ckpt", ckpt_path)->required();
    sa->add_option("--ref", ref_path, "reference image (ppm)")->required();
    sa->add_option("--out", out_dir)->required();
    sa->add_option("--count", count);
    sa->add_option("--steps", steps);
    sa->add_option("--seed", seed);

    auto* pd = app.add_subcommand("predict-depth", "monocular depth via masked inpainting");
    pd->add_option("--ckpt", ckpt_path)->required();
    pd->add_option("--image", image_path)->required();
    pd->add_option("--out", out_dir)->required();
    pd->add_option("--steps", steps);
    pd->add_option("--seed", seed);

    auto* d2 = app.add_subcommand("depth2image", "depth-conditioned portrait generation");
    d2->add_option("--ckpt", ckpt_path)->required();
    d2->add_option("--depth", depth_path, "16-bit pgm depth")->required();
    d2->add_option("--ref", ref_path)->required();
    d2->add_option("--out", out_dir)->required();
    d2->add_option("--steps", steps);
    d2->add_option("--seed", seed);

    auto* an = app.add_subcommand("animate", "audio-driven RGBD clip generation");
    an->add_option("--ckpt", ckpt_path)->required();
    an->add_option("--ref", ref_path)->required();
    an->add_option("--audio", audio_path, "audio feature file")->required();
    an->add_option("--frames", frames);
    an->add_option("--out", out_dir)->required();
    an->add_option("--steps", steps);
    an->add_option("--seed", seed);

    auto* rl = app.add_subcommand("relight", "diffuse relighting from a depth map");
    double near = 0.5, far = 2.0, ambient = 0.2;
    std::string light_arg = "0.5,-0.3,0.8";
    rl->add_option("--image", image_path)->required();
    rl->add_option("--depth", depth_path)->required();
    rl->add_option("--near", near);
    rl->add_option("--far", far);
    rl->add_option("--light", light_arg, "light direction x,y,z");
    rl->add_option("--ambient", ambient);
    rl->add_option("--out", out_dir)->required();

    auto* ed = app.add_subcommand("eval-depth", "depth metrics over an eval split");
    ed->add_option("--ckpt", ckpt_path)->required();
    ed->add_option("--data", config_path, "dataset manifest")->required();
    ed->add_option("--split", split, "eval_studio | eval_wild");
    ed->add_option("--steps", steps);
    ed->add_option("--seed", seed);
    ed->add_option("--out", out_dir, "metrics/error-map directory");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference checks for all registered ops");
    int gc_seeds = 5;
    gc->add_option("--seeds", gc_seeds);

    CLI11_PARSE(app, argc, argv);

    try {
        if (sd->parsed()) {
            dcfg.out_dir = out_path(dcfg.out_dir);
            return cmd_synthdata(dcfg);
        }
        if (tr->parsed()) return cmd_train(config_path);
        if (ex->parsed()) {
            train::cmd_expand(ex_in, out_path(ex_out));
            std::printf("expanded checkpoint written to %s\n", out_path(ex_out).c_str());
            return 0;
        }
        if (sa->parsed()) return cmd_sample(ckpt_path, ref_path, out_path(out_dir), count, steps,
                                            seed);
        if (pd->parsed())
            return cmd_predict_depth(ckpt_path, image_path, out_path(out_dir), steps, seed);
        if (d2->parsed())
            return cmd_depth2image(ckpt_path, depth_path, ref_path, out_path(out_dir), steps,
                                   seed);
        if (an->parsed())
            return cmd_animate(ckpt_path, ref_path, audio_path, frames, out_path(out_dir), steps,
                               seed);
        if (rl->parsed())
            return cmd_relight(image_path, depth_path, near, far, light_arg, ambient,
                               out_path(out_dir));
        if (ed->parsed())
            return cmd_eval_depth(ckpt_path, config_path, split, steps, seed,
                                  out_dir.empty() ? "" : out_path(out_dir));
        if (gc->parsed()) return cmd_gradcheck(gc_seeds);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
