// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Trained-pipeline criteria reuse checkpoints in --workdir when the
// stored config hashes still match.
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rgbd/image_io.hpp"
#include "rgbd/inpaint.hpp"
#include "rgbd/motion.hpp"
#include "rgbd/opregistry.hpp"
#include "rgbd/trainer.hpp"

using namespace rgbd;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d: %-38s %s\n", pass ? "PASS" : "FAIL", criterion, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) g_failures++;
}

void info(const std::string& name, const std::string& detail) {
    std::printf("[INFO] %-52s %s\n", name.c_str(), detail.c_str());
    std::fflush(stdout);
}

double elapsed_s(std::clock_t t0) { return (double)(std::clock() - t0) / CLOCKS_PER_SEC; }

// ------------------------------------------------------------- scale config

struct AcceptScale {
    int size = 32;  // 4x4 latents; the CPU-scale point of the desk defaults
    synth::DatasetConfig data_cfg(const std::string& dir) const {
        synth::DatasetConfig d;
        d.out_dir = dir;
        d.size = size;
        d.studio_ids = 24;
        d.studio_per_id = 24;
        d.wild_ids = 12;
        d.wild_per_id = 24;
        d.clips = 12;
        d.clip_frames = 40;
        d.eval_ids = 8;
        d.eval_per_id = 4;
        d.seed = 77;
        return d;
    }
    cli::RunConfig stage_cfg(const std::string& stage, const std::string& workdir,
                             const std::string& manifest, const std::string& tag = "") const {
        cli::RunConfig c = cli::default_config(stage);
        c.data_manifest = manifest;
        c.image_size = size;
        c.out_dir = workdir + "/" + stage + tag;
        c.seed = 1;
        c.vae_base = 32;
        c.base_channels = 48;
        c.channel_mults = {1, 2};
        c.attn_resolutions = {4, 2};
        c.head_dim = 24;
        c.levels = 1000;
        c.log_every = 100;
        if (stage == "vae") {
            c.steps = 2500;
            c.batch = 16;
            c.lr = 1e-3;
        } else if (stage == "rgb") {
            c.steps = 1500;
            c.batch = 16;
            c.lr = 2e-4;
        } else if (stage == "joint") {
            c.steps = 3000;
            c.batch = 16;
            c.lr = 1e-4;
        } else if (stage == "inpaint") {
            c.steps = 1500;
            c.batch = 16;
            c.lr = 1e-4;
        } else if (stage == "motion") {
            c.steps = 1200;
            c.batch = 1;
            c.lr = 1e-4;
        }
        return c;
    }
};

// ------------------------------------------------------- pipeline plumbing

bool ckpt_reusable(const std::string& path, const std::string& config_hash) {
    if (!fs::exists(path)) return false;
    try {
        auto c = ckpt::load_checkpoint(path);
        return c.manifest.value("config_hash", "") == config_hash;
    } catch (...) {
        return false;
    }
}

std::string ensure_stage(const cli::RunConfig& cfg) {
    std::string path = cfg.out_dir + "/" + cfg.stage + ".ckpt";
    if (ckpt_reusable(path, cfg.config_hash())) {
        std::printf("  [reuse] %s\n", path.c_str());
        return path;
    }
    std::clock_t t0 = std::clock();
    auto res = train::run_stage(cfg);
    std::printf("  [done] %s in %.0fs (loss %.4f -> %.4f)\n", path.c_str(), elapsed_s(t0),
                res.first_loss, res.last_loss);
    return res.ckpt_path;
}

std::string ensure_expand(const std::string& rgb_ckpt, const std::string& out_path) {
    if (fs::exists(out_path)) {
        auto c = ckpt::load_checkpoint(out_path);
        if (c.manifest.value("parent_hash", "") == ckpt::file_crc_hex(rgb_ckpt)) {
            std::printf("  [reuse] %s\n", out_path.c_str());
            return out_path;
        }
    }
    return train::cmd_expand(rgb_ckpt, out_path);
}

std::string ensure_dataset(const synth::DatasetConfig& cfg) {
    std::string manifest = cfg.out_dir + "/manifest.json";
    std::string hash = strf(
        "%016llx", (unsigned long long)fnv1a64(strf(
                       "%d|%d|%d|%d|%d|%d|%d|%d|%d|%llu", cfg.size, cfg.studio_ids,
                       cfg.studio_per_id, cfg.wild_ids, cfg.wild_per_id, cfg.clips,
                       cfg.clip_frames, cfg.eval_ids, cfg.eval_per_id,
                       (unsigned long long)cfg.seed)));
    if (fs::exists(manifest)) {
        try {
            auto d = synth::load_dataset(manifest);
            if (d.manifest.value("config_hash", "") == hash) {
                std::printf("  [reuse] %s\n", manifest.c_str());
                return manifest;
            }
        } catch (...) {
        }
    }
    std::clock_t t0 = std::clock();
    synth::build_dataset(cfg);
    std::printf("  [done] dataset in %.0fs\n", elapsed_s(t0));
    return manifest;
}

// studio-only manifest referencing the same files (for the ablation)
std::string write_studio_only_manifest(const std::string& manifest_path) {
    auto d = synth::load_dataset(manifest_path);
    nlohmann::json m = d.manifest;
    nlohmann::json train = nlohmann::json::array();
    for (auto& e : m.at("train"))
        if (e.at("split").get<std::string>() == "studio") train.push_back(e);
    m["train"] = train;
    m["config_hash"] = m.value("config_hash", "") + "-studio";
    std::string path = fs::path(manifest_path).parent_path() / "manifest_studio.json";
    std::ofstream f(path);
    f << m.dump(1) << "\n";
    return path;
}

double mean_abs_frame_diff(const Tensor& a, const Tensor& b) {
    double acc = 0;
    for (int64_t i = 0; i < a.numel(); i++) acc += std::abs((double)a[i] - (double)b[i]);
    return acc / (double)a.numel();
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); i++) {
        ma += a[i];
        mb += b[i];
    }
    ma /= (double)a.size();
    mb /= (double)b.size();
    double saa = 0, sbb = 0, sab = 0;
    for (size_t i = 0; i < a.size(); i++) {
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
        sab += (a[i] - ma) * (b[i] - mb);
    }
    return sab / std::sqrt(std::max(saa * sbb, 1e-30));
}

// --------------------------------------------------------- fast criteria

void criterion_1_gradients() {
    std::clock_t t0 = std::clock();
    double worst = 0;
    std::string worst_op;
    for (const auto& name : nn::OpRegistry::instance().names()) {
        for (uint64_t seed = 1; seed <= 5; seed++) {
            auto rep = nn::grad_check(name, seed);
            if (rep.max_rel_err > worst) {
                worst = rep.max_rel_err;
                worst_op = name;
            }
        }
    }
    double secs = elapsed_s(t0);
    report(1, "gradient integrity (all ops, 5 seeds)", worst < 1e-4 && secs < 300,
           strf("worst %.2e (%s), %.1fs", worst, worst_op.c_str(), secs));
}

void criterion_2_expansion() {
    backbone::UNetConfig cfg;  // the 64x64 desk-scale reference config
    cfg.in_groups = {4};
    cfg.out_channels = 4;
    cfg.base_channels = 64;
    cfg.channel_mults = {1, 2, 4};
    cfg.attn_resolutions = {8, 4};
    cfg.latent_size = 8;
    Rng rng(21);
    auto rgb = backbone::build_unet(cfg, rng);
    auto joint = backbone::expand_channels(rgb);
    Rng rx(22);
    double worst_app = 0, worst_dup = 0;
    for (int probe = 0; probe < 20; probe++) {
        Tensor zx = randn_tensor<float>({1, 4, 8, 8}, rx);
        Tensor zd = randn_tensor<float>({1, 4, 8, 8}, rx);
        int l = (int)rx.randint(1, 1000);
        Tensor zj({1, 8, 8, 8});
        std::copy(zx.data.begin(), zx.data.end(), zj.data.begin());
        std::copy(zd.data.begin(), zd.data.end(), zj.data.begin() + zx.numel());
        auto yr = rgb.forward(nn::make_leaf(zx), {l}, backbone::RefFeatures::none());
        auto yj = joint.forward(nn::make_leaf(zj), {l}, backbone::RefFeatures::none());
        for (int64_t c = 0; c < 4; c++)
            for (int64_t i = 0; i < 64; i++) {
                double app = yj->value.at4(0, c, i / 8, i % 8);
                worst_app = std::max(
                    worst_app, std::abs(app - (double)yr->value.at4(0, c, i / 8, i % 8)));
                worst_dup = std::max(
                    worst_dup, std::abs(app - (double)yj->value.at4(0, c + 4, i / 8, i % 8)));
            }
    }
    report(2, "channel-expansion equivalence", worst_app < 1e-6 && worst_dup < 1e-6,
           strf("appearance diff %.2e, duplicate diff %.2e", worst_app, worst_dup));
}

void criterion_3_forward_stats() {
    auto s = schedule::make_schedule(1000, 1e-4, 0.02);
    Rng rng(33);
    int64_t n = 100000;
    bool ok = true;
    std::string detail;
    Tensor z0({n}, 1.0f);
    for (int l : {250, 500, 1000}) {
        Tensor eps = randn_tensor<float>({n}, rng);
        Tensor zl = schedule::add_noise(s, z0, eps, l);
        double abar = s.alpha_bar_at(l);
        double mean = 0;
        for (int64_t i = 0; i < n; i++) mean += zl[i];
        mean /= (double)n;
        double var = 0;
        for (int64_t i = 0; i < n; i++) var += (zl[i] - mean) * (zl[i] - mean);
        var /= (double)n;
        double mean_ref = std::sqrt(abar), var_ref = 1.0 - abar;
        bool mean_ok = std::abs(mean - mean_ref) <= 0.05 * std::max(mean_ref, 0.02);
        bool var_ok = std::abs(var - var_ref) <= 0.05 * var_ref;
        ok = ok && mean_ok && var_ok;
        if (l == 500) detail = strf("l=500 mean %.4f/%.4f var %.4f/%.4f", mean, mean_ref, var,
                                    var_ref);
    }
    Tensor zx0({n}, 0.0f), zd0({n}, 0.0f);
    auto [zl, eps] = schedule::add_noise_joint(s, zx0, zd0, 500, rng);
    double sx = 0, sd = 0, sxx = 0, sdd = 0, sxd = 0;
    for (int64_t i = 0; i < n; i++) {
        sx += eps.ex[i];
        sd += eps.ed[i];
        sxx += (double)eps.ex[i] * eps.ex[i];
        sdd += (double)eps.ed[i] * eps.ed[i];
        sxd += (double)eps.ex[i] * eps.ed[i];
    }
    double corr = (sxd / n - sx / n * sd / n) /
                  std::sqrt((sxx / n - sx / n * sx / n) * (sdd / n - sd / n * sd / n));
    ok = ok && std::abs(corr) < 0.02;
    report(3, "forward-process statistics", ok, detail + strf(", corr %.4f", corr));
}

void criterion_4_samplers() {
    auto s = schedule::make_schedule(1000, 1e-4, 0.02);
    Rng rng(44);
    Tensor z0 = randn_tensor<float>({4, 16, 16}, rng);
    auto oracle_eps = [&](const Tensor& z, int l) {
        double abar = s.alpha_bar_at(l);
        Tensor e(z.shape);
        for (int64_t i = 0; i < z.numel(); i++)
            e[i] = (float)(((double)z[i] - std::sqrt(abar) * z0[i]) / std::sqrt(1.0 - abar));
        return e;
    };
    // full DDPM
    Tensor z = randn_tensor<float>({4, 16, 16}, rng);
    for (int l = 1000; l >= 1; l--) z = schedule::ddpm_update(s, z, oracle_eps(z, l), l, rng);
    double ddpm_err = max_abs_diff(z, z0);
    // 50-step DDIM
    Tensor zd = randn_tensor<float>({4, 16, 16}, rng);
    auto seq = schedule::ddim_level_sequence(1000, 50);
    for (size_t i = 0; i + 1 < seq.size(); i++)
        zd = schedule::ddim_update(s, zd, oracle_eps(zd, seq[i]), seq[i], seq[i + 1]);
    double ddim_err = max_abs_diff(zd, z0);
    report(4, "oracle sampler recovery", ddpm_err < 1e-4 && ddim_err < 1e-4,
           strf("ddpm %.2e, ddim %.2e", ddpm_err, ddim_err));
}

void criterion_5_metric_oracles() {
    Rng rng(55);
    // alignment vs closed-form normal equations
    Tensor gt({12, 12}), pred({12, 12}), mask({12, 12});
    for (int64_t i = 0; i < gt.numel(); i++) {
        gt[i] = (float)rng.uniform(0.5, 2.0);
        pred[i] = (float)rng.uniform(-1.0, 1.0);
        mask[i] = rng.uniform() < 0.8 ? 1.0f : 0.0f;
    }
    auto [sc, tc] = evalkit::align_coeffs(pred, gt, mask);
    double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0;
    for (int64_t i = 0; i < gt.numel(); i++) {
        if (mask[i] == 0.0f) continue;
        a11 += (double)pred[i] * pred[i];
        a12 += pred[i];
        a22 += 1.0;
        b1 += (double)pred[i] * gt[i];
        b2 += gt[i];
    }
    double det = a11 * a22 - a12 * a12;
    double align_err = std::max(std::abs(sc - (b1 * a22 - a12 * b2) / det),
                                std::abs(tc - (a11 * b2 - a12 * b1) / det));

    // metrics vs scalar loop
    Tensor p2(gt.shape);
    for (int64_t i = 0; i < gt.numel(); i++) p2[i] = (float)(gt[i] + rng.uniform(-0.2, 0.2));
    auto m = evalkit::depth_metrics(p2, gt, mask);
    double ar = 0, sq = 0;
    int64_t cnt = 0, hits = 0;
    for (int64_t i = 0; i < gt.numel(); i++) {
        if (mask[i] == 0.0f) continue;
        double p = p2[i], g = gt[i];
        ar += std::abs(p - g) / g;
        sq += (p - g) * (p - g);
        hits += std::max(p / g, g / p) < 1.25 ? 1 : 0;
        cnt++;
    }
    double metric_err = std::max({std::abs(m.abs_rel - ar / (double)cnt),
                                  std::abs(m.delta1 - (double)hits / (double)cnt),
                                  std::abs(m.rmse - std::sqrt(sq / (double)cnt))});

    // affine family: float-exact data so the alignment recovers gt bitwise
    Tensor g3({8, 8}), p3({8, 8}), m3({8, 8}, 1.0f);
    for (int64_t i = 0; i < g3.numel(); i++) {
        g3[i] = 0.5f + (float)(i % 32) / 32.0f;  // exactly representable
        p3[i] = 2.0f * g3[i] + 5.0f;             // exact in float
    }
    auto aligned = evalkit::align_depth(p3, g3, m3);
    double affine_absrel = evalkit::depth_metrics(aligned, g3, m3).abs_rel;

    report(5, "depth-metric oracle equivalence",
           align_err < 1e-8 && metric_err < 1e-9 && affine_absrel == 0.0,
           strf("align %.1e, metrics %.1e, affine AbsRel %g", align_err, metric_err,
                affine_absrel));
}

void criterion_10_relight_normals() {
    // flat plane: exact closed form
    Tensor flat({6, 6}, 1.3f);
    Tensor nf = evalkit::normals_from_depth(flat);
    bool flat_ok = true;
    for (int64_t i = 0; i < 36; i++)
        flat_ok = flat_ok && nf[i] == 0.0f && nf[36 + i] == 0.0f && nf[72 + i] == 1.0f;

    // tilted plane d = a*u with float-exact slope
    double a = 0.25;
    Tensor tilt({6, 6});
    for (int64_t i = 0; i < 6; i++)
        for (int64_t j = 0; j < 6; j++) tilt[i * 6 + j] = (float)(a * (double)j);
    Tensor nt = evalkit::normals_from_depth(tilt);
    double nn = std::sqrt(a * a + 1.0);
    bool tilt_ok = true;
    for (int64_t i = 0; i < 36; i++) {
        tilt_ok = tilt_ok && nt[i] == (float)(-a / nn) && nt[36 + i] == 0.0f &&
                  nt[72 + i] == (float)(1.0 / nn);
    }

    // sphere elevation field vs analytic normals
    int hw = 64;
    double r = 0.6, px = 2.0 / hw;
    Tensor depth({hw, hw}, 0.0f);
    Tensor mask({hw, hw});
    for (int i = 0; i < hw; i++)
        for (int j = 0; j < hw; j++) {
            double v = (2.0 * (i + 0.5) / hw) - 1.0;
            double u = (2.0 * (j + 0.5) / hw) - 1.0;
            double rr = u * u + v * v;
            if (rr < r * r) {
                depth[i * hw + j] = (float)std::sqrt(r * r - rr);
                if (rr < 0.8 * 0.8 * r * r) mask[i * hw + j] = 1.0f;
            }
        }
    Tensor n = evalkit::normals_from_depth(depth, px);
    double err = 0;
    int64_t cnt = 0;
    for (int i = 0; i < hw; i++)
        for (int j = 0; j < hw; j++) {
            if (mask[i * hw + j] == 0.0f) continue;
            double v = (2.0 * (i + 0.5) / hw) - 1.0;
            double u = (2.0 * (j + 0.5) / hw) - 1.0;
            double nz = std::sqrt(r * r - u * u - v * v) / r;
            double dot = n[i * hw + j] * (u / r) + n[hw * hw + i * hw + j] * (v / r) +
                         n[2 * hw * hw + i * hw + j] * nz;
            err += std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / M_PI;
            cnt++;
        }
    double sphere_err = err / (double)cnt;

    // ambient = 1 relight is the identity
    Rng rng(10);
    Tensor rgb({3, 6, 6});
    for (auto& v : rgb.data) v = (float)rng.uniform(0.0, 1.0);
    Tensor lit = evalkit::relight(rgb, nf, {0.4, -0.2, 0.9}, 1.0);
    double relight_err = max_abs_diff(lit, rgb);

    report(10, "relighting and normals", flat_ok && tilt_ok && sphere_err < 3.0 &&
                                             relight_err == 0.0,
           strf("flat %s tilt %s sphere %.2f deg ambient-1 diff %g", flat_ok ? "exact" : "FAIL",
                tilt_ok ? "exact" : "FAIL", sphere_err, relight_err));
}

// ------------------------------------------------ trained-pipeline criteria

struct Pipeline {
    std::string dataset_manifest;
    std::string vae_ckpt, rgb_ckpt, expand_ckpt, joint_ckpt, inpaint_ckpt, motion_ckpt;
};

Pipeline run_pipeline(const AcceptScale& scale, const std::string& workdir,
                      const std::string& manifest, const std::string& tag, bool with_motion) {
    Pipeline p;
    p.dataset_manifest = manifest;
    auto vae_cfg = scale.stage_cfg("vae", workdir, manifest, tag);
    p.vae_ckpt = ensure_stage(vae_cfg);

    auto rgb_cfg = scale.stage_cfg("rgb", workdir, manifest, tag);
    rgb_cfg.parent = p.vae_ckpt;
    p.rgb_ckpt = ensure_stage(rgb_cfg);

    p.expand_ckpt = ensure_expand(p.rgb_ckpt, workdir + "/expand" + tag + ".ckpt");

    auto joint_cfg = scale.stage_cfg("joint", workdir, manifest, tag);
    joint_cfg.parent = p.expand_ckpt;
    p.joint_ckpt = ensure_stage(joint_cfg);

    auto inpaint_cfg = scale.stage_cfg("inpaint", workdir, manifest, tag);
    inpaint_cfg.parent = p.joint_ckpt;
    p.inpaint_ckpt = ensure_stage(inpaint_cfg);

    if (with_motion) {
        auto motion_cfg = scale.stage_cfg("motion", workdir, manifest, tag);
        motion_cfg.parent = p.joint_ckpt;
        p.motion_ckpt = ensure_stage(motion_cfg);
    }
    return p;
}

void vae_quality_info(const pipeline::Bundle& bundle, const synth::Dataset& data) {
    // round-trip quality of the trained VAE on held-out samples
    double mse = 0, absrel = 0;
    int64_t n = 0;
    int count = 0;
    for (auto& rec : data.eval_studio) {
        auto s = data.load_sample(rec);
        Tensor rec_rgb = bundle.vae.decode(bundle.vae.encode(s.rgb));
        for (int64_t i = 0; i < s.rgb.numel(); i++) {
            double d = (double)rec_rgb[i] - (double)s.rgb[i];
            mse += d * d;
            n++;
        }
        Tensor rec_d =
            bundle.vae.decode_depth(bundle.vae.encode_depth(s.depth, bundle.norm), bundle.norm);
        auto m = train::eval_depth_pair(rec_d, s.depth, s.valid, bundle.norm.near,
                                        bundle.norm.far);
        absrel += m.abs_rel;
        count++;
        if (count >= 16) break;
    }
    double psnr = 10.0 * std::log10(4.0 / (mse / (double)n));
    info("vae round-trip", strf("PSNR %.1f dB (target >= 28), depth AbsRel %.4f (target <= 0.05)",
                                psnr, absrel / count));
}

void criterion_6_depth_estimation(const Pipeline& p, const synth::Dataset& data) {
    auto bundle = ckpt::load_bundle(p.inpaint_ckpt);
    vae_quality_info(bundle, data);
    auto summary = train::eval_depth_split(bundle, data, data.eval_studio, 50, 900, "");
    report(6, "end-to-end depth estimation",
           summary.mean.abs_rel <= 0.10 && summary.mean.delta1 >= 0.80,
           strf("AbsRel %.4f (<= 0.10), delta1 %.3f (>= 0.80), rmse %.4f over %zu held-out "
                "samples",
                summary.mean.abs_rel, summary.mean.delta1, summary.mean.rmse,
                summary.rows.size()));
}

void criterion_7_ablation(const Pipeline& mixed, const Pipeline& studio_only,
                          const synth::Dataset& data) {
    auto mixed_bundle = ckpt::load_bundle(mixed.inpaint_ckpt);
    auto studio_bundle = ckpt::load_bundle(studio_only.inpaint_ckpt);
    auto m_mixed = train::eval_depth_split(mixed_bundle, data, data.eval_wild, 50, 901, "");
    auto m_studio = train::eval_depth_split(studio_bundle, data, data.eval_wild, 50, 901, "");
    report(7, "mixed-data ablation direction",
           m_mixed.mean.abs_rel <= m_studio.mean.abs_rel,
           strf("wild-eval AbsRel mixed %.4f <= studio-only %.4f", m_mixed.mean.abs_rel,
                m_studio.mean.abs_rel));
}

void criterion_8_inpaint_exactness(const Pipeline& p, const synth::Dataset& data) {
    auto bundle = ckpt::load_bundle(p.inpaint_ckpt);
    // bit-exact appearance round-trip in image_to_depth mode
    auto sample_a = data.load_sample(data.eval_studio[0]);
    auto pd = inpaint::predict_depth(sample_a.rgb, bundle, 50, 77);
    Tensor roundtrip = bundle.decode_image_scaled(bundle.encode_image_scaled(sample_a.rgb));
    double bit_diff = max_abs_diff(pd.appearance, roundtrip);

    // closed loop: depth A + reference B -> image; re-estimated depth matches A
    auto sample_b = data.load_sample(data.eval_studio[data.eval_studio.size() - 1]);
    Tensor gen = inpaint::generate_from_depth(sample_a.depth, sample_b.rgb, bundle, 50, 78);
    auto re = inpaint::predict_depth(gen, bundle, 50, 79);
    auto m = train::eval_depth_pair(re.depth, sample_a.depth, sample_a.valid, data.near,
                                    data.far);

    // identity-palette proximity of the generated face (informational)
    auto face_mean = [&](const Tensor& rgb, const Tensor& valid) {
        double r = 0, g = 0, b = 0;
        int64_t n = 0, hw = valid.numel();
        for (int64_t i = 0; i < hw; i++) {
            if (valid[i] == 0.0f) continue;
            r += rgb[i];
            g += rgb[hw + i];
            b += rgb[2 * hw + i];
            n++;
        }
        return std::array<double, 3>{r / n, g / n, b / n};
    };
    auto dist = [](std::array<double, 3> x, std::array<double, 3> y) {
        return std::sqrt((x[0] - y[0]) * (x[0] - y[0]) + (x[1] - y[1]) * (x[1] - y[1]) +
                         (x[2] - y[2]) * (x[2] - y[2]));
    };
    auto gen_mean = face_mean(gen, sample_a.valid);
    double to_b = dist(gen_mean, face_mean(sample_b.rgb, sample_b.valid));
    double to_a = dist(gen_mean, face_mean(sample_a.rgb, sample_a.valid));
    info("depth2image identity palette", strf("distance to reference %.3f vs source %.3f", to_b,
                                              to_a));

    // depth-edit locality: displace the mouth region of A's depth and
    // regenerate with the same seed; the change mass should stay inside the
    // edited region's 8-px dilation
    {
        auto hp = synth::identity_params(sample_a.identity_id);
        auto box = synth::mouth_box(hp, bundle.image_size);
        Tensor edited = sample_a.depth;
        for (int i = box[0]; i < box[1]; i++)
            for (int j = box[2]; j < box[3]; j++) edited[i * bundle.image_size + j] += 0.1f;
        Tensor gen2 = inpaint::generate_from_depth(edited, sample_b.rgb, bundle, 50, 78);
        int64_t hw = bundle.image_size;
        double inside = 0, total = 0;
        for (int64_t i = 0; i < hw; i++)
            for (int64_t j = 0; j < hw; j++) {
                double d = 0;
                for (int64_t c = 0; c < 3; c++)
                    d += std::abs((double)gen2[(c * hw + i) * hw + j] -
                                  (double)gen[(c * hw + i) * hw + j]);
                total += d;
                bool in_dilated = i >= box[0] - 8 && i < box[1] + 8 && j >= box[2] - 8 &&
                                  j < box[3] + 8;
                if (in_dilated) inside += d;
            }
        info("depth-edit locality",
             strf("%.0f%% of change mass inside the edited region's 8-px dilation (target >= "
                  "70%%)",
                  100.0 * inside / std::max(total, 1e-12)));
    }

    report(8, "inpainting exactness", bit_diff == 0.0 && m.abs_rel <= 0.1,
           strf("appearance round-trip diff %g (bit-exact), closed-loop AbsRel %.4f (<= 0.1)",
                bit_diff, m.abs_rel));
}

void criterion_9_motion(const Pipeline& p, const synth::Dataset& data, const AcceptScale& scale) {
    // init transparency with freshly zero-initialized modules
    auto joint_bundle = ckpt::load_bundle(p.joint_ckpt);
    motion::MotionConfig mc;
    mc.audio_dim = synth::kAudioDim;
    Rng mr(5);
    auto fresh = motion::build_motion_modules(joint_bundle.unet, mc, mr);
    Rng rng(6);
    int f = 4, lat = joint_bundle.latent_size();
    Tensor z = randn_tensor<float>({(int64_t)f, 8, lat, lat}, rng);
    Tensor zref = randn_tensor<float>({4, lat, lat}, rng);
    auto ref1 = backbone::reference_features(joint_bundle.refnet, unsqueeze0(zref));
    backbone::RefFeatures ref_f;
    for (auto& s : ref1.sites) ref_f.sites.push_back(nn::repeat_batch(s, f));
    std::vector<Tensor> ctx(4, zref);
    auto mctx = motion::motion_context_features(joint_bundle.refnet, ctx);
    Tensor audio = randn_tensor<float>({(int64_t)f, 5, (int64_t)synth::kAudioDim}, rng);
    auto with_m = motion::motion_forward(joint_bundle, fresh, nn::make_leaf(z), 40, ref_f,
                                         nn::make_leaf(audio), &mctx);
    std::vector<int> levels((size_t)f, 40);
    auto without = joint_bundle.unet.forward(nn::make_leaf(z), levels, ref_f);
    double init_diff = max_abs_diff(with_m->value, without->value);

    // trained model: audio/mouth-depth correlation + chunk continuity on
    // held-out clips
    auto c = ckpt::load_checkpoint(p.motion_ckpt);
    auto bundle = ckpt::bundle_from_checkpoint(c);
    auto motion_mod = ckpt::motion_from_checkpoint(c, bundle);

    double corr_sum = 0;
    double boundary_sum = 0, within_sum = 0;
    int clips_n = 3;
    int T = 28;
    for (int k = 0; k < clips_n; k++) {
        Rng crng(5000 + k);  // held-out: unseen identity and driving signal
        auto clip = synth::make_clip(40000 + k, T, scale.size, crng, false, false);
        motion::AudioTrack track = clip.audio;
        auto res = motion::animate(clip.frames[0].rgb, track, bundle, motion_mod, T, 20,
                                   7000 + k);
        std::vector<double> mouth, drive;
        for (int t = 0; t < T; t++) {
            double acc = 0;
            int64_t n = 0;
            for (int i = clip.mouth_box[0]; i < clip.mouth_box[1]; i++)
                for (int j = clip.mouth_box[2]; j < clip.mouth_box[3]; j++) {
                    acc += res.depth[(size_t)t][i * scale.size + j];
                    n++;
                }
            mouth.push_back(acc / (double)n);
            drive.push_back(clip.driving_signal[(size_t)t]);
        }
        corr_sum += pearson(mouth, drive);
        // chunk boundary at frames_per_seq (14): boundary diff vs within-chunk
        double within = 0;
        int wn = 0;
        for (int t = 1; t < T; t++) {
            double d = mean_abs_frame_diff(res.rgb[(size_t)t], res.rgb[(size_t)t - 1]);
            if (t == 14)
                boundary_sum += d;
            else {
                within += d;
                wn++;
            }
        }
        within_sum += within / wn;
    }
    double corr = corr_sum / clips_n;
    double continuity = boundary_sum / clips_n / (within_sum / clips_n);
    report(9, "motion stage",
           init_diff < 1e-6 && corr >= 0.6 && continuity <= 2.0,
           strf("init diff %.2e (< 1e-6), audio/mouth corr %.3f (>= 0.6), boundary ratio %.2f "
                "(<= 2)",
                init_diff, corr, continuity));
}

}  // namespace

int main(int argc, char** argv) {
    std::string workdir = "acceptance_work";
    bool fast_only = false;
    for (int i = 1; i < argc; i++) {
        if (std::strcmp(argv[i], "--workdir") == 0 && i + 1 < argc) workdir = argv[++i];
        if (std::strcmp(argv[i], "--fast-only") == 0) fast_only = true;
    }
    fs::create_directories(workdir);
    std::printf("acceptance workdir: %s\n", fs::absolute(workdir).string().c_str());

    try {
        criterion_1_gradients();
        criterion_2_expansion();
        criterion_3_forward_stats();
        criterion_4_samplers();
        criterion_5_metric_oracles();
        criterion_10_relight_normals();

        if (!fast_only) {
            AcceptScale scale;
            std::printf("-- desk-scale pipeline (vae -> rgb -> expand -> joint -> inpaint -> "
                        "motion) --\n");
            std::string manifest = ensure_dataset(scale.data_cfg(workdir + "/data"));
            auto data = synth::load_dataset(manifest);
            Pipeline mixed = run_pipeline(scale, workdir, manifest, "", true);

            std::printf("-- studio-only ablation pipeline --\n");
            std::string studio_manifest = write_studio_only_manifest(manifest);
            Pipeline studio_only = run_pipeline(scale, workdir, studio_manifest, "_studio",
                                                false);

            criterion_6_depth_estimation(mixed, data);
            criterion_7_ablation(mixed, studio_only, data);
            criterion_8_inpaint_exactness(mixed, data);
            criterion_9_motion(mixed, data, scale);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "acceptance aborted: %s\n", e.what());
        return 2;
    }

    std::printf("%d criterion failure(s)\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
