#ifndef RGBD_TRAINER_HPP
#define RGBD_TRAINER_HPP

#include "rgbd/checkpoint.hpp"
#include "rgbd/config.hpp"
#include "rgbd/dataset.hpp"
#include "rgbd/evalkit.hpp"

namespace rgbd {
namespace train {

struct StageResult {
    double first_loss = 0;
    double last_loss = 0;
    std::string ckpt_path;
};

// Runs one training stage per the config; enforces parent-stage ordering and
// writes a self-contained checkpoint plus a JSONL loss log to out_dir.
StageResult run_stage(const cli::RunConfig& cfg);

// Channel expansion of an rgb-stage checkpoint into the joint init
// checkpoint; ReferenceNet weights are initialized from the denoiser. A
// seeded init-equivalence probe is stored in the manifest and re-verified
// when the joint stage loads the result.
std::string cmd_expand(const std::string& rgb_ckpt_path, const std::string& out_path);

// aligned, masked depth metrics for one prediction; RMSE is reported in
// normalized (near/far range) units
evalkit::DepthMetrics eval_depth_pair(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                                      double near, double far);

struct EvalRow {
    std::string base;
    evalkit::DepthMetrics metrics;
};

struct EvalSummary {
    std::vector<EvalRow> rows;
    evalkit::DepthMetrics mean;
};

// predict_depth over a whole split; writes per-sample JSONL records and
// error maps when out_dir is non-empty
EvalSummary eval_depth_split(const pipeline::Bundle& bundle,
                             const synth::Dataset& data,
                             const std::vector<synth::SampleRecord>& split, int steps,
                             uint64_t seed, const std::string& out_dir);

}  // namespace train
}  // namespace rgbd

#endif
