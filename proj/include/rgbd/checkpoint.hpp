#ifndef RGBD_CHECKPOINT_HPP
#define RGBD_CHECKPOINT_HPP

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "rgbd/motion.hpp"
#include "rgbd/pipeline.hpp"

namespace rgbd {
namespace ckpt {

using nlohmann::json;

uint32_t crc32_bytes(const void* data, size_t n, uint32_t seed = 0);
std::string file_crc_hex(const std::string& path);

// Single-archive checkpoint: 8-byte magic, u32 version, u64 manifest length,
// JSON manifest, then raw little-endian f32 tensor payload. The manifest
// indexes every tensor by name with shape, byte offset and crc32.
struct Checkpoint {
    json manifest;
    std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::string& path, json manifest,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors);
Checkpoint load_checkpoint(const std::string& path);  // verifies every checksum

// Stage checkpoints are self-contained: VAE + denoiser (+ ReferenceNet,
// + motion modules) + schedule + latent scaling.
void save_bundle(const std::string& path, const pipeline::Bundle& bundle,
                 const motion::MotionModules* motion, const std::string& config_hash,
                 const std::string& parent_hash, json extra = json::object());

pipeline::Bundle load_bundle(const std::string& path);
pipeline::Bundle bundle_from_checkpoint(const Checkpoint& c);
motion::MotionModules motion_from_checkpoint(const Checkpoint& c,
                                             const pipeline::Bundle& bundle);

// walks parent_hash links through sibling files until the vae stage
bool verify_stage_chain(const std::string& path, std::string* err);

}  // namespace ckpt
}  // namespace rgbd

#endif
