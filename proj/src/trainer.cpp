#include "rgbd/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <thread>

#include "rgbd/image_io.hpp"
#include "rgbd/inpaint.hpp"
#include "rgbd/workqueue.hpp"

namespace rgbd {
namespace train {

namespace fs = std::filesystem;
using cli::RunConfig;
using nlohmann::json;
using pipeline::Bundle;
using synth::Dataset;

namespace {

struct LossLog {
    std::ofstream file;
    double first = -1, last = 0;

    explicit LossLog(const std::string& path) : file(path) {
        if (!file) throw IoError("cannot open loss log: " + path);
    }
    void record(int step, double loss, json extra = json::object()) {
        if (first < 0) first = loss;
        last = loss;
        extra["step"] = step;
        extra["loss"] = loss;
        file << extra.dump() << "\n";
    }
};

Dataset load_data(const RunConfig& cfg) {
    require_cfg(!cfg.data_manifest.empty(), "config: data.manifest is required");
    Dataset d = synth::load_dataset(cfg.data_manifest);
    require_cfg(d.size == cfg.image_size,
                strf("config image_size %d != dataset size %d", cfg.image_size, d.size));
    return d;
}

Bundle load_parent(const RunConfig& cfg, const std::string& required_stage) {
    if (cfg.parent.empty())
        throw ConfigError("stage '" + cfg.stage + "' requires a parent checkpoint from the '" +
                          required_stage + "' stage (set train.parent)");
    Bundle b = ckpt::load_bundle(cfg.parent);
    if (b.stage != required_stage)
        throw ConfigError("stage '" + cfg.stage + "' requires a '" + required_stage +
                          "' checkpoint, got '" + b.stage + "' from " + cfg.parent);
    return b;
}

std::string ckpt_path_for(const RunConfig& cfg) {
    if (!cfg.ckpt_out.empty()) return cfg.ckpt_out;
    return cfg.out_dir + "/" + cfg.stage + ".ckpt";
}

// replicated, normalized depth as a 3-channel image
Tensor depth_as_image(const Tensor& depth, const vae::DepthNormalization& norm) {
    Tensor n = norm.normalize_map(depth);
    Tensor rep({3, depth.shape[0], depth.shape[1]});
    for (int c = 0; c < 3; c++)
        std::copy(n.data.begin(), n.data.end(), rep.data.begin() + (int64_t)c * n.numel());
    return rep;
}

struct LatentCache {
    std::vector<Tensor> zx, zd;  // scaled latents per train record
};

LatentCache build_latent_cache(const Bundle& bundle, const Dataset& data, bool want_depth) {
    nn::NoGradGuard ng;
    LatentCache cache;
    cache.zx.reserve(data.train.size());
    for (size_t i = 0; i < data.train.size(); i++) {
        auto s = data.load_sample(data.train[i]);
        cache.zx.push_back(bundle.encode_image_scaled(s.rgb));
        if (want_depth) cache.zd.push_back(bundle.encode_depth_scaled(s.depth));
        if ((i + 1) % 512 == 0)
            std::printf("  encoded %zu/%zu training samples\n", i + 1, data.train.size());
    }
    return cache;
}

size_t pick_reference(const Dataset& data, size_t idx, Rng& rng) {
    const auto& peers = data.by_identity.at(data.train[idx].identity);
    if (peers.size() < 2) return idx;
    size_t pick;
    do {
        pick = peers[(size_t)rng.randint(0, (int64_t)peers.size() - 1)];
    } while (pick == idx);
    return pick;
}

Tensor stack_batch(const std::vector<Tensor>& items) {
    std::vector<int64_t> shape = items[0].shape;
    shape.insert(shape.begin(), (int64_t)items.size());
    Tensor out(shape);
    int64_t stride = items[0].numel();
    for (size_t i = 0; i < items.size(); i++)
        std::copy(items[i].data.begin(), items[i].data.end(),
                  out.data.begin() + (int64_t)i * stride);
    return out;
}

void save_sample_grid(const Bundle& bundle, const Tensor& ref_rgb, const std::string& path,
                      uint64_t seed) {
    auto out = inpaint::sample_joint(ref_rgb, bundle, 20, seed);
    int64_t h = out.rgb.shape[1], w = out.rgb.shape[2];
    Tensor grid({3, h, 3 * w});
    auto blit = [&](const Tensor& img, int64_t xoff) {
        for (int64_t c = 0; c < 3; c++)
            for (int64_t i = 0; i < h; i++)
                for (int64_t j = 0; j < w; j++)
                    grid[(c * h + i) * 3 * w + xoff + j] = img[(c * h + i) * w + j];
    };
    blit(ref_rgb, 0);
    blit(out.rgb, w);
    Tensor dvis({3, h, w});
    vae::DepthNormalization n = bundle.norm;
    for (int64_t i = 0; i < h * w; i++) {
        float v = n.normalize(out.depth[i]);
        for (int64_t c = 0; c < 3; c++) dvis[c * h * w + i] = v;
    }
    blit(dvis, 2 * w);
    io::write_ppm(path, grid);
}

json expand_probe_entry(const backbone::DenoiserModel& rgb_model, int latent_size) {
    Rng rng(0xC0FFEE);
    Tensor zx = randn_tensor<float>({1, 4, latent_size, latent_size}, rng);
    int level = 500;
    auto out = rgb_model.forward(nn::make_leaf(zx), {level}, backbone::RefFeatures::none());
    json probe;
    probe["seed"] = 0xC0FFEE;
    probe["level"] = level;
    std::vector<float> head(out->value.data.begin(),
                            out->value.data.begin() + std::min<int64_t>(16, out->value.numel()));
    probe["values"] = head;
    return probe;
}

void verify_expand_probe(const Bundle& bundle, const json& probe) {
    nn::NoGradGuard ng;
    int lat = bundle.unet.cfg.latent_size;
    Rng rng(probe.at("seed").get<uint64_t>());
    Tensor zx = randn_tensor<float>({1, 4, lat, lat}, rng);
    Tensor zd = randn_tensor<float>({1, 4, lat, lat}, rng);  // arbitrary depth input
    Tensor zjoint({1, 8, lat, lat});
    std::copy(zx.data.begin(), zx.data.end(), zjoint.data.begin());
    std::copy(zd.data.begin(), zd.data.end(), zjoint.data.begin() + zx.numel());
    int level = probe.at("level").get<int>();
    auto out =
        bundle.unet.forward(nn::make_leaf(zjoint), {level}, backbone::RefFeatures::none());
    auto expect = probe.at("values").get<std::vector<float>>();
    for (size_t i = 0; i < expect.size(); i++) {
        if (std::abs(out->value[(int64_t)i] - expect[i]) > 1e-6f)
            throw NumericError("expand init-equivalence probe failed on load; the checkpoint "
                               "does not preserve the zero-init expansion");
    }
}

backbone::UNetConfig unet_config_from(const RunConfig& cfg) {
    backbone::UNetConfig uc;
    uc.in_groups = {4};
    uc.out_channels = 4;
    uc.base_channels = cfg.base_channels;
    uc.channel_mults = cfg.channel_mults;
    uc.attn_resolutions = cfg.attn_resolutions;
    uc.latent_size = cfg.image_size / 8;
    uc.head_dim = cfg.head_dim;
    return uc;
}

// ----------------------------------------------------------------- stages

StageResult train_vae_stage(const RunConfig& cfg, const Dataset& data) {
    Bundle bundle;
    bundle.stage = "vae";
    bundle.image_size = cfg.image_size;
    bundle.norm = vae::DepthNormalization{data.near, data.far};
    bundle.sched = schedule::make_schedule(cfg.levels, cfg.beta_min, cfg.beta_max);
    vae::VAEConfig vc;
    vc.base_channels = cfg.vae_base;
    Rng init_rng(cfg.seed);
    bundle.vae = vae::build_vae(vc, init_rng);

    nn::Adam opt(cfg.lr);
    Rng rng(cfg.seed + 1);
    LossLog log(cfg.out_dir + "/train_log.jsonl");

    // The whole sampling plan is drawn up front so training results are
    // bitwise-independent of the loader thread count.
    struct Pick {
        size_t idx;
        bool as_depth;
    };
    std::vector<Pick> plan((size_t)cfg.steps * (size_t)cfg.batch);
    for (auto& p : plan)
        p = {(size_t)rng.randint(0, (int64_t)data.train.size() - 1), rng.uniform() >= 0.5};
    auto load_batch = [&](int step) {
        std::vector<Tensor> batch;
        for (int b = 0; b < cfg.batch; b++) {
            const Pick& p = plan[(size_t)(step - 1) * (size_t)cfg.batch + (size_t)b];
            auto s = data.load_sample(data.train[p.idx]);
            // RGB and replicated-depth images are mixed into VAE training
            batch.push_back(p.as_depth ? depth_as_image(s.depth, bundle.norm) : s.rgb);
        }
        return batch;
    };
    BoundedQueue<std::vector<Tensor>> queue(4);
    std::thread producer;
    if (cfg.workers > 0)
        producer = std::thread([&] {
            for (int step = 1; step <= cfg.steps; step++) queue.push(load_batch(step));
            queue.close();
        });
    for (int step = 1; step <= cfg.steps; step++) {
        std::vector<Tensor> batch =
            cfg.workers > 0 ? std::move(*queue.pop()) : load_batch(step);
        auto r = vae::vae_train_step(bundle.vae, batch, opt, rng, cfg.lambda_kl);
        double total = r.recon_loss + cfg.lambda_kl * r.kl_loss;
        log.record(step, total, {{"recon", r.recon_loss}, {"kl", r.kl_loss}});
        if (step % cfg.log_every == 0 || step == 1)
            std::printf("[vae %d/%d] recon %.5f kl %.3f\n", step, cfg.steps, r.recon_loss,
                        r.kl_loss);
    }
    if (producer.joinable()) producer.join();

    // empirical latent std over a sample of both domains
    {
        nn::NoGradGuard ng;
        double acc = 0;
        int64_t n = 0;
        int take = std::min<int>(256, (int)data.train.size());
        for (int i = 0; i < take; i++) {
            const auto& rec = data.train[(size_t)rng.randint(0, (int64_t)data.train.size() - 1)];
            auto s = data.load_sample(rec);
            Tensor z = i % 2 == 0 ? bundle.vae.encode(s.rgb).values
                                  : bundle.vae.encode_depth(s.depth, bundle.norm).values;
            for (auto v : z.data) {
                acc += (double)v * v;
                n++;
            }
        }
        bundle.latent_scale = (float)std::sqrt(acc / (double)n);
        std::printf("[vae] latent scale %.4f\n", bundle.latent_scale);
    }

    StageResult res;
    res.first_loss = log.first;
    res.last_loss = log.last;
    res.ckpt_path = ckpt_path_for(cfg);
    ckpt::save_bundle(res.ckpt_path, bundle, nullptr, cfg.config_hash(), "", json::object());
    return res;
}

StageResult train_rgb_stage(const RunConfig& cfg, const Dataset& data) {
    Bundle bundle = load_parent(cfg, "vae");
    bundle.stage = "rgb";
    bundle.sched = schedule::make_schedule(cfg.levels, cfg.beta_min, cfg.beta_max);
    Rng init_rng(cfg.seed);
    bundle.unet = backbone::build_unet(unet_config_from(cfg), init_rng, "unet");

    std::printf("[rgb] encoding training latents\n");
    LatentCache cache = build_latent_cache(bundle, data, false);

    nn::Adam opt(cfg.lr);
    Rng rng(cfg.seed + 1);
    LossLog log(cfg.out_dir + "/train_log.jsonl");
    int lat = bundle.unet.cfg.latent_size;
    for (int step = 1; step <= cfg.steps; step++) {
        std::vector<Tensor> xs, es;
        std::vector<int> levels;
        for (int b = 0; b < cfg.batch; b++) {
            size_t idx = (size_t)rng.randint(0, (int64_t)data.train.size() - 1);
            int l = (int)rng.randint(1, bundle.sched.levels);
            Tensor eps = randn_tensor<float>({4, lat, lat}, rng);
            xs.push_back(schedule::add_noise(bundle.sched, cache.zx[idx], eps, l));
            es.push_back(eps);
            levels.push_back(l);
        }
        auto x = nn::make_leaf(stack_batch(xs));
        auto target = nn::make_leaf(stack_batch(es));
        auto loss = nn::mse(bundle.unet.forward(x, levels, backbone::RefFeatures::none()),
                            target);
        bundle.unet.params.zero_grad();
        nn::backward(loss);
        opt.step(bundle.unet.params);
        log.record(step, loss->value[0]);
        if (step % cfg.log_every == 0 || step == 1)
            std::printf("[rgb %d/%d] loss %.5f\n", step, cfg.steps, (double)loss->value[0]);
    }

    StageResult res;
    res.first_loss = log.first;
    res.last_loss = log.last;
    res.ckpt_path = ckpt_path_for(cfg);
    json extra;
    extra["parent_path"] = cfg.parent;
    ckpt::save_bundle(res.ckpt_path, bundle, nullptr, cfg.config_hash(),
                      ckpt::file_crc_hex(cfg.parent), extra);
    return res;
}

// builds batched reference features for a batch of reference latents
backbone::RefFeatures batch_reference(const Bundle& bundle, const std::vector<Tensor>& refs) {
    Tensor stacked = stack_batch(refs);
    return backbone::reference_features(bundle.refnet, stacked);
}

StageResult train_joint_stage(const RunConfig& cfg, const Dataset& data) {
    Bundle bundle = load_parent(cfg, "expand");
    auto parent_ckpt = ckpt::load_checkpoint(cfg.parent);
    if (parent_ckpt.manifest.contains("expand_probe"))
        verify_expand_probe(bundle, parent_ckpt.manifest.at("expand_probe"));
    bundle.stage = "joint";

    std::printf("[joint] encoding training latents\n");
    LatentCache cache = build_latent_cache(bundle, data, true);

    nn::Adam opt_unet(cfg.lr), opt_ref(cfg.lr);
    Rng rng(cfg.seed + 1);
    LossLog log(cfg.out_dir + "/train_log.jsonl");
    int lat = bundle.unet.cfg.latent_size;
    for (int step = 1; step <= cfg.steps; step++) {
        std::vector<Tensor> xs, es, refs;
        std::vector<int> levels;
        for (int b = 0; b < cfg.batch; b++) {
            size_t idx = (size_t)rng.randint(0, (int64_t)data.train.size() - 1);
            size_t ref_idx = pick_reference(data, idx, rng);
            int l = (int)rng.randint(1, bundle.sched.levels);
            auto [zl, eps] =
                schedule::add_noise_joint(bundle.sched, cache.zx[idx], cache.zd[idx], l, rng);
            xs.push_back(cat_channels({&zl.zx, &zl.zd}));
            es.push_back(cat_channels({&eps.ex, &eps.ed}));
            refs.push_back(cache.zx[ref_idx]);
            levels.push_back(l);
        }
        auto ref_feats = batch_reference(bundle, refs);
        auto x = nn::make_leaf(stack_batch(xs));
        auto target = nn::make_leaf(stack_batch(es));
        auto loss = nn::mse(bundle.unet.forward(x, levels, ref_feats), target);
        bundle.unet.params.zero_grad();
        bundle.refnet.params.zero_grad();
        nn::backward(loss);
        opt_unet.step(bundle.unet.params);
        opt_ref.step(bundle.refnet.params);
        log.record(step, loss->value[0]);
        if (step % cfg.log_every == 0 || step == 1)
            std::printf("[joint %d/%d] loss %.5f\n", step, cfg.steps, (double)loss->value[0]);
        if (cfg.sample_every > 0 && step % cfg.sample_every == 0) {
            auto s = data.load_sample(data.train[0]);
            save_sample_grid(bundle, s.rgb, strf("%s/sample_%06d.ppm", cfg.out_dir.c_str(), step),
                             cfg.seed);
        }
    }

    StageResult res;
    res.first_loss = log.first;
    res.last_loss = log.last;
    res.ckpt_path = ckpt_path_for(cfg);
    json extra;
    extra["parent_path"] = cfg.parent;
    ckpt::save_bundle(res.ckpt_path, bundle, nullptr, cfg.config_hash(),
                      ckpt::file_crc_hex(cfg.parent), extra);
    return res;
}

StageResult train_inpaint_stage(const RunConfig& cfg, const Dataset& data) {
    Bundle bundle = load_parent(cfg, "joint");
    bundle.stage = "inpaint";
    bundle.unet = backbone::expand_input_channels(bundle.unet, 10);

    std::printf("[inpaint] encoding training latents\n");
    LatentCache cache = build_latent_cache(bundle, data, true);

    nn::Adam opt_unet(cfg.lr), opt_ref(cfg.lr);
    Rng rng(cfg.seed + 1);
    LossLog log(cfg.out_dir + "/train_log.jsonl");
    int lat = bundle.unet.cfg.latent_size;
    for (int step = 1; step <= cfg.steps; step++) {
        std::vector<Tensor> xs, es, refs;
        std::vector<int> levels;
        for (int b = 0; b < cfg.batch; b++) {
            size_t idx = (size_t)rng.randint(0, (int64_t)data.train.size() - 1);
            size_t ref_idx = pick_reference(data, idx, rng);
            int l = (int)rng.randint(1, bundle.sched.levels);
            auto [zl, eps] =
                schedule::add_noise_joint(bundle.sched, cache.zx[idx], cache.zd[idx], l, rng);
            auto masks = inpaint::make_mask_pair(inpaint::MaskMode::random_training, lat, lat,
                                                 rng);
            schedule::JointLatent known{cache.zx[idx], cache.zd[idx], 0};
            xs.push_back(inpaint::inpaint_condition(zl, known, masks));
            es.push_back(cat_channels({&eps.ex, &eps.ed}));
            refs.push_back(cache.zx[ref_idx]);
            levels.push_back(l);
        }
        auto ref_feats = batch_reference(bundle, refs);
        auto x = nn::make_leaf(stack_batch(xs));
        auto target = nn::make_leaf(stack_batch(es));
        auto loss = nn::mse(bundle.unet.forward(x, levels, ref_feats), target);
        bundle.unet.params.zero_grad();
        bundle.refnet.params.zero_grad();
        nn::backward(loss);
        opt_unet.step(bundle.unet.params);
        opt_ref.step(bundle.refnet.params);
        log.record(step, loss->value[0]);
        if (step % cfg.log_every == 0 || step == 1)
            std::printf("[inpaint %d/%d] loss %.5f\n", step, cfg.steps, (double)loss->value[0]);
    }

    StageResult res;
    res.first_loss = log.first;
    res.last_loss = log.last;
    res.ckpt_path = ckpt_path_for(cfg);
    json extra;
    extra["parent_path"] = cfg.parent;
    ckpt::save_bundle(res.ckpt_path, bundle, nullptr, cfg.config_hash(),
                      ckpt::file_crc_hex(cfg.parent), extra);
    return res;
}

StageResult train_motion_stage(const RunConfig& cfg, const Dataset& data) {
    Bundle bundle = load_parent(cfg, "joint");
    bundle.stage = "motion";
    require_cfg(!data.clips.empty(), "motion stage needs clips in the dataset");

    // stage-1 parameters stay frozen; only the motion modules train
    for (auto& v : bundle.unet.params.vars) v->requires_grad = false;
    for (auto& v : bundle.refnet.params.vars) v->requires_grad = false;

    motion::MotionConfig mc;
    mc.frames_per_seq = cfg.frames_per_seq;
    mc.n_motion = cfg.n_motion;
    mc.audio_window = cfg.audio_window;
    mc.audio_dim = data.manifest.value("audio_dim", synth::kAudioDim);
    Rng init_rng(cfg.seed);
    auto motion_mod = motion::build_motion_modules(bundle.unet, mc, init_rng);

    int f = mc.frames_per_seq, n = mc.n_motion;
    for (auto& c : data.clips)
        require_cfg(c.frames >= f + n,
                    strf("clip %s too short: %d frames < %d motion + %d generated",
                         c.dir.c_str(), c.frames, n, f));

    // per-clip latents and audio, encoded once (only wild-style clips train
    // this stage, mirroring the stage-3 data restriction)
    std::printf("[motion] encoding clip latents\n");
    std::vector<std::vector<Tensor>> clip_zx(data.clips.size()), clip_zd(data.clips.size());
    std::vector<motion::AudioTrack> clip_audio(data.clips.size());
    {
        nn::NoGradGuard ng;
        for (size_t c = 0; c < data.clips.size(); c++) {
            for (int t = 0; t < data.clips[c].frames; t++) {
                auto s = data.load_clip_frame(data.clips[c], t);
                clip_zx[c].push_back(bundle.encode_image_scaled(s.rgb));
                clip_zd[c].push_back(bundle.encode_depth_scaled(s.depth));
            }
            clip_audio[c] = data.load_clip_audio(data.clips[c]);
        }
    }

    nn::Adam opt(cfg.lr);
    Rng rng(cfg.seed + 1);
    LossLog log(cfg.out_dir + "/train_log.jsonl");
    int lat = bundle.unet.cfg.latent_size;
    for (int step = 1; step <= cfg.steps; step++) {
        size_t c = (size_t)rng.randint(0, (int64_t)data.clips.size() - 1);
        int start = (int)rng.randint(n, data.clips[c].frames - f);
        int l = (int)rng.randint(1, bundle.sched.levels);

        std::vector<Tensor> ctx(clip_zx[c].begin() + (start - n),
                                clip_zx[c].begin() + start);
        auto mctx = motion::motion_context_features(bundle.refnet, ctx);
        auto ref1 = backbone::reference_features(bundle.refnet, unsqueeze0(clip_zx[c][0]));
        backbone::RefFeatures ref_f;
        for (auto& s : ref1.sites) ref_f.sites.push_back(nn::repeat_batch(s, f));
        ref_f.shapes = ref1.shapes;

        Tensor z({(int64_t)f, 8, lat, lat});
        Tensor eps({(int64_t)f, 8, lat, lat});
        for (int t = 0; t < f; t++) {
            auto [zl, ep] = schedule::add_noise_joint(bundle.sched, clip_zx[c][(size_t)(start + t)],
                                                      clip_zd[c][(size_t)(start + t)], l, rng);
            Tensor zcat = cat_channels({&zl.zx, &zl.zd});
            Tensor ecat = cat_channels({&ep.ex, &ep.ed});
            std::copy(zcat.data.begin(), zcat.data.end(),
                      z.data.begin() + (int64_t)t * zcat.numel());
            std::copy(ecat.data.begin(), ecat.data.end(),
                      eps.data.begin() + (int64_t)t * ecat.numel());
        }
        Tensor audio = motion::audio_window_batch(clip_audio[c], start, f, mc.audio_window);
        auto out = motion::motion_forward(bundle, motion_mod, nn::make_leaf(z), l, ref_f,
                                          nn::make_leaf(audio), &mctx);
        auto loss = nn::mse(out, nn::make_leaf(eps));
        motion_mod.params.zero_grad();
        nn::backward(loss);
        opt.step(motion_mod.params);
        log.record(step, loss->value[0]);
        if (step % cfg.log_every == 0 || step == 1)
            std::printf("[motion %d/%d] loss %.5f\n", step, cfg.steps, (double)loss->value[0]);
    }

    StageResult res;
    res.first_loss = log.first;
    res.last_loss = log.last;
    res.ckpt_path = ckpt_path_for(cfg);
    json extra;
    extra["parent_path"] = cfg.parent;
    ckpt::save_bundle(res.ckpt_path, bundle, &motion_mod, cfg.config_hash(),
                      ckpt::file_crc_hex(cfg.parent), extra);
    return res;
}

}  // namespace

StageResult run_stage(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    Dataset data = load_data(cfg);
    if (cfg.stage == "vae") return train_vae_stage(cfg, data);
    if (cfg.stage == "rgb") return train_rgb_stage(cfg, data);
    if (cfg.stage == "joint") return train_joint_stage(cfg, data);
    if (cfg.stage == "inpaint") return train_inpaint_stage(cfg, data);
    if (cfg.stage == "motion") return train_motion_stage(cfg, data);
    throw ConfigError("unknown stage '" + cfg.stage + "'");
}

std::string cmd_expand(const std::string& rgb_ckpt_path, const std::string& out_path) {
    Bundle bundle = ckpt::load_bundle(rgb_ckpt_path);
    if (bundle.stage != "rgb")
        throw ConfigError("expand needs an rgb-stage checkpoint, got '" + bundle.stage + "'");
    json probe = expand_probe_entry(bundle.unet, bundle.unet.cfg.latent_size);
    backbone::DenoiserModel rgb_model = std::move(bundle.unet);
    bundle.unet = backbone::expand_channels(rgb_model);
    bundle.refnet = backbone::clone_model(rgb_model, "refnet");
    bundle.has_refnet = true;
    bundle.stage = "expand";
    json extra;
    extra["expand_probe"] = probe;
    extra["parent_path"] = rgb_ckpt_path;
    ckpt::save_bundle(out_path, bundle, nullptr, "", ckpt::file_crc_hex(rgb_ckpt_path), extra);
    // immediate self-check of the stored probe
    verify_expand_probe(ckpt::load_bundle(out_path), probe);
    return out_path;
}

evalkit::DepthMetrics eval_depth_pair(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                                      double near, double far) {
    Tensor aligned = evalkit::align_depth(pred, gt, mask);
    auto m = evalkit::depth_metrics(aligned, gt, mask);
    m.rmse /= (far - near);
    return m;
}

EvalSummary eval_depth_split(const Bundle& bundle, const Dataset& data,
                             const std::vector<synth::SampleRecord>& split, int steps,
                             uint64_t seed, const std::string& out_dir) {
    require_cfg(!split.empty(), "depth evaluation: empty split");
    std::ofstream jsonl;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        jsonl.open(out_dir + "/depth_metrics.jsonl");
    }
    EvalSummary summary;
    double ar = 0, d1 = 0, rm = 0;
    for (size_t i = 0; i < split.size(); i++) {
        auto s = data.load_sample(split[i]);
        auto pred = inpaint::predict_depth(s.rgb, bundle, steps, seed + i);
        auto m = eval_depth_pair(pred.depth, s.depth, s.valid, data.near, data.far);
        summary.rows.push_back({split[i].base, m});
        ar += m.abs_rel;
        d1 += m.delta1;
        rm += m.rmse;
        if (jsonl) {
            json row = {{"base", split[i].base},
                        {"abs_rel", m.abs_rel},
                        {"delta1", m.delta1},
                        {"rmse", m.rmse}};
            jsonl << row.dump() << "\n";
        }
        if (!out_dir.empty()) {
            Tensor aligned = evalkit::align_depth(pred.depth, s.depth, s.valid);
            // error maps in normalized units, +-0.1 range
            Tensor pn = bundle.norm.normalize_map(aligned);
            Tensor gn = bundle.norm.normalize_map(s.depth);
            Tensor em = evalkit::error_map(pn, gn, s.valid, 0.2);  // 0.1 of the [0,1] scale
            std::string name = split[i].base;
            for (auto& ch : name)
                if (ch == '/') ch = '_';
            io::write_ppm(out_dir + "/error_" + name + ".ppm", em);
        }
    }
    summary.mean.abs_rel = ar / (double)split.size();
    summary.mean.delta1 = d1 / (double)split.size();
    summary.mean.rmse = rm / (double)split.size();
    return summary;
}

}  // namespace train
}  // namespace rgbd
