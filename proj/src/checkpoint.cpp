#include "rgbd/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace rgbd {
namespace ckpt {

namespace {

constexpr char kMagic[8] = {'R', 'G', 'B', 'D', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

const uint32_t* crc_table() {
    static uint32_t table[256];
    static bool init = [] {
        for (uint32_t i = 0; i < 256; i++) {
            uint32_t c = i;
            for (int k = 0; k < 8; k++) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        return true;
    }();
    (void)init;
    return table;
}

std::string hex32(uint32_t v) { return strf("%08x", v); }

}  // namespace

uint32_t crc32_bytes(const void* data, size_t n, uint32_t seed) {
    const uint8_t* p = (const uint8_t*)data;
    uint32_t c = seed ^ 0xFFFFFFFFu;
    const uint32_t* t = crc_table();
    for (size_t i = 0; i < n; i++) c = t[(c ^ p[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

std::string file_crc_hex(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for hashing: " + path);
    uint32_t c = 0;
    char buf[65536];
    bool first = true;
    uint32_t run = 0xFFFFFFFFu;
    const uint32_t* t = crc_table();
    (void)first;
    while (f) {
        f.read(buf, sizeof(buf));
        std::streamsize got = f.gcount();
        for (std::streamsize i = 0; i < got; i++)
            run = t[(run ^ (uint8_t)buf[i]) & 0xFF] ^ (run >> 8);
    }
    c = run ^ 0xFFFFFFFFu;
    return hex32(c);
}

void save_checkpoint(const std::string& path, json manifest,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    json index = json::object();
    uint64_t offset = 0;
    for (auto& [name, t] : tensors) {
        json e;
        e["shape"] = t->shape;
        e["offset"] = offset;
        e["crc32"] = hex32(crc32_bytes(t->ptr(), (size_t)t->numel() * 4));
        index[name] = e;
        offset += (uint64_t)t->numel() * 4;
    }
    manifest["tensors"] = index;
    std::string mtext = manifest.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(kMagic, 8);
    f.write((const char*)&kVersion, 4);
    uint64_t mlen = mtext.size();
    f.write((const char*)&mlen, 8);
    f.write(mtext.data(), (std::streamsize)mtext.size());
    for (auto& [name, t] : tensors)
        f.write((const char*)t->ptr(), (std::streamsize)(t->numel() * 4));
    if (!f) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("not a checkpoint file: " + path);
    uint32_t version = 0;
    f.read((char*)&version, 4);
    if (version != kVersion) throw IoError(strf("unsupported checkpoint version %u", version));
    uint64_t mlen = 0;
    f.read((char*)&mlen, 8);
    std::string mtext(mlen, '\0');
    f.read(mtext.data(), (std::streamsize)mlen);
    if (!f) throw IoError("truncated checkpoint manifest: " + path);

    Checkpoint c;
    c.manifest = json::parse(mtext);
    uint64_t payload_start = 8 + 4 + 8 + mlen;
    for (auto& [name, e] : c.manifest.at("tensors").items()) {
        std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
        Tensor t(shape);
        f.seekg((std::streamoff)(payload_start + e.at("offset").get<uint64_t>()));
        f.read((char*)t.ptr(), (std::streamsize)(t.numel() * 4));
        if (!f) throw IoError("truncated checkpoint payload at tensor " + name);
        std::string crc = hex32(crc32_bytes(t.ptr(), (size_t)t.numel() * 4));
        if (crc != e.at("crc32").get<std::string>())
            throw IoError("checksum mismatch for tensor " + name + " in " + path);
        c.tensors.emplace(name, std::move(t));
    }
    return c;
}

void save_bundle(const std::string& path, const pipeline::Bundle& bundle,
                 const motion::MotionModules* motion, const std::string& config_hash,
                 const std::string& parent_hash, json extra) {
    json m = std::move(extra);
    m["stage"] = bundle.stage;
    m["image_size"] = bundle.image_size;
    m["latent_scale"] = bundle.latent_scale;
    m["depth_near"] = bundle.norm.near;
    m["depth_far"] = bundle.norm.far;
    m["schedule"] = {{"levels", bundle.sched.levels},
                     {"beta_min", bundle.sched.levels ? bundle.sched.beta.front() : 0.0},
                     {"beta_max", bundle.sched.levels ? bundle.sched.beta.back() : 0.0}};
    m["vae"] = {{"base_channels", bundle.vae.cfg.base_channels},
                {"latent_channels", bundle.vae.cfg.latent_channels},
                {"groups", bundle.vae.cfg.groups}};
    bool has_unet = !bundle.unet.params.vars.empty();
    m["has_unet"] = has_unet;
    m["has_refnet"] = bundle.has_refnet;
    if (has_unet) {
        const auto& uc = bundle.unet.cfg;
        m["unet"] = {{"in_groups", uc.in_groups},
                     {"out_channels", uc.out_channels},
                     {"base_channels", uc.base_channels},
                     {"channel_mults", uc.channel_mults},
                     {"attn_resolutions", uc.attn_resolutions},
                     {"latent_size", uc.latent_size},
                     {"head_dim", uc.head_dim},
                     {"groups", uc.groups}};
    }
    if (motion) {
        m["motion"] = {{"frames_per_seq", motion->cfg.frames_per_seq},
                       {"n_motion", motion->cfg.n_motion},
                       {"audio_window", motion->cfg.audio_window},
                       {"audio_dim", motion->cfg.audio_dim}};
    }
    m["config_hash"] = config_hash;
    m["parent_hash"] = parent_hash;

    std::vector<std::pair<std::string, const Tensor*>> tensors;
    auto add_store = [&](const nn::ParamStore& ps) {
        for (size_t i = 0; i < ps.vars.size(); i++)
            tensors.emplace_back(ps.names[i], &ps.vars[i]->value);
    };
    add_store(bundle.vae.params);
    if (has_unet) add_store(bundle.unet.params);
    if (bundle.has_refnet) add_store(bundle.refnet.params);
    if (motion) add_store(motion->params);
    save_checkpoint(path, std::move(m), tensors);
}

namespace {

void fill_store(nn::ParamStore& ps, const Checkpoint& c) {
    for (size_t i = 0; i < ps.vars.size(); i++) {
        auto it = c.tensors.find(ps.names[i]);
        if (it == c.tensors.end())
            throw IoError("checkpoint is missing tensor " + ps.names[i]);
        require(it->second.same_shape(ps.vars[i]->value),
                "checkpoint tensor shape mismatch at " + ps.names[i]);
        ps.vars[i]->value = it->second;
    }
}

}  // namespace

pipeline::Bundle bundle_from_checkpoint(const Checkpoint& c) {
    const json& m = c.manifest;
    pipeline::Bundle b;
    b.stage = m.at("stage").get<std::string>();
    b.image_size = m.at("image_size").get<int>();
    b.latent_scale = m.at("latent_scale").get<float>();
    b.norm.near = m.at("depth_near").get<double>();
    b.norm.far = m.at("depth_far").get<double>();
    b.sched = schedule::make_schedule(m.at("schedule").at("levels").get<int>(),
                                      m.at("schedule").at("beta_min").get<double>(),
                                      m.at("schedule").at("beta_max").get<double>());
    vae::VAEConfig vc;
    vc.base_channels = m.at("vae").at("base_channels").get<int>();
    vc.latent_channels = m.at("vae").at("latent_channels").get<int>();
    vc.groups = m.at("vae").at("groups").get<int>();
    Rng r0(0);
    b.vae = vae::build_vae(vc, r0);
    fill_store(b.vae.params, c);

    if (m.at("has_unet").get<bool>()) {
        backbone::UNetConfig uc;
        uc.in_groups = m.at("unet").at("in_groups").get<std::vector<int>>();
        uc.out_channels = m.at("unet").at("out_channels").get<int>();
        uc.base_channels = m.at("unet").at("base_channels").get<int>();
        uc.channel_mults = m.at("unet").at("channel_mults").get<std::vector<int>>();
        uc.attn_resolutions = m.at("unet").at("attn_resolutions").get<std::vector<int>>();
        uc.latent_size = m.at("unet").at("latent_size").get<int>();
        uc.head_dim = m.at("unet").at("head_dim").get<int>();
        uc.groups = m.at("unet").at("groups").get<int>();
        Rng r1(0);
        b.unet = backbone::build_unet(uc, r1, "unet");
        fill_store(b.unet.params, c);
        if (m.at("has_refnet").get<bool>()) {
            backbone::UNetConfig rc = uc;
            rc.in_groups = {4};
            rc.out_channels = 4;
            Rng r2(0);
            b.refnet = backbone::build_unet(rc, r2, "refnet");
            fill_store(b.refnet.params, c);
            b.has_refnet = true;
        }
    }
    return b;
}

pipeline::Bundle load_bundle(const std::string& path) {
    return bundle_from_checkpoint(load_checkpoint(path));
}

motion::MotionModules motion_from_checkpoint(const Checkpoint& c,
                                             const pipeline::Bundle& bundle) {
    require(c.manifest.contains("motion"), "checkpoint has no motion modules");
    motion::MotionConfig mc;
    mc.frames_per_seq = c.manifest.at("motion").at("frames_per_seq").get<int>();
    mc.n_motion = c.manifest.at("motion").at("n_motion").get<int>();
    mc.audio_window = c.manifest.at("motion").at("audio_window").get<int>();
    mc.audio_dim = c.manifest.at("motion").at("audio_dim").get<int>();
    Rng r(0);
    auto m = motion::build_motion_modules(bundle.unet, mc, r);
    fill_store(m.params, c);
    return m;
}

bool verify_stage_chain(const std::string& path, std::string* err) {
    namespace fs = std::filesystem;
    std::string cur = path;
    for (int hops = 0; hops < 16; hops++) {
        Checkpoint c;
        try {
            c = load_checkpoint(cur);
        } catch (const std::exception& e) {
            if (err) *err = e.what();
            return false;
        }
        std::string stage = c.manifest.at("stage").get<std::string>();
        std::string parent_hash = c.manifest.value("parent_hash", "");
        std::string parent_path = c.manifest.value("parent_path", "");
        if (stage == "vae") return true;
        if (parent_hash.empty() || parent_path.empty()) {
            if (err) *err = "stage " + stage + " checkpoint has no parent link";
            return false;
        }
        fs::path pp(parent_path);
        if (pp.is_relative()) pp = fs::path(cur).parent_path() / pp;
        if (!fs::exists(pp)) {
            if (err) *err = "parent checkpoint missing: " + pp.string();
            return false;
        }
        if (file_crc_hex(pp.string()) != parent_hash) {
            if (err) *err = "parent checkpoint hash mismatch at " + pp.string();
            return false;
        }
        cur = pp.string();
    }
    if (err) *err = "stage chain too deep";
    return false;
}

}  // namespace ckpt
}  // namespace rgbd
