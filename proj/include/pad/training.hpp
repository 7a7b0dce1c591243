#pragma once

#include <map>
#include <string>

#include "pad/data.hpp"
#include "pad/models.hpp"
#include "pad/nn.hpp"

namespace pad::train {

using ag::NodePtr;
using pad::i64;
using pad::Tensor;

struct TrainConfig {
    i64 steps = 5000;
    i64 batch_size = 64;
    nn::CosineSchedule schedule{3e-4, 3e-5, 5000};
    std::uint64_t seed = 0;
    bool use_projector = true;
    i64 checkpoint_every = 1000;
    double loss_delta = 1.0;  // smooth-L1 transition point
    double grad_clip = 10.0;  // global-norm clip
    nn::AdamWConfig adamw;
};

struct MetricsRow {
    i64 step = 0;
    double loss = 0.0;
    std::vector<double> step_losses;  // one per refinement step
    double energy_init = 0.0;         // batch-mean energy at the first refinement
    double energy_final = 0.0;        // batch-mean energy at the last refinement
    double eta = 0.0;
    double lr = 0.0;
    double ms_per_step = 0.0;
};

std::string metrics_header(i64 refine_steps);
std::string metrics_line(const MetricsRow& row);

struct DenoiseResult {
    NodePtr loss;  // scalar
    std::vector<double> step_losses;
    double energy_init_sum = 0.0;   // summed over the batch
    double energy_final_sum = 0.0;
};

/// The refinement loop of the training procedure: starting from z0, run
/// `refine_steps` gradient-and-project updates, accumulate the smooth-L1
/// denoising loss against z_clean after each step, and stop the gradient on
/// the iterate between steps. With `second_order=false` the within-step
/// energy gradient is treated as a constant w.r.t. parameters (ablation /
/// oracle hook); the full path requires `second_order=true`.
DenoiseResult denoising_refine_loss(NodePtr z0, NodePtr z_clean, const models::EnergyFn& energy,
                                    const models::ProjectFn* projector, const NodePtr& eta,
                                    i64 refine_steps, double delta, bool second_order);

struct StepDebug {
    NodePtr z_clean_pre_stop;  // encoder output on the future window, before stop-gradient
    NodePtr loss;
};

/// One full training step on a batch: encode, corrupt, refine, backpropagate
/// (second order through the refinement gradient), clip, AdamW update,
/// eta clamp. Throws NumericalError and leaves all state unchanged when the
/// loss is non-finite.
MetricsRow train_step(models::PadModels& models, nn::AdamW& opt, const data::Batch& batch,
                      const TrainConfig& cfg, i64 step, bool second_order = true,
                      StepDebug* dbg = nullptr);

struct TrainResult {
    i64 final_step = 0;
    std::string checkpoint_path;
    std::string metrics_path;
};

/// Deterministic training loop with rolling checkpoints and per-step metrics.
/// `start_step > 0` resumes (the caller must have restored the checkpoint).
/// `config_json` is embedded into checkpoints for compatibility checks.
TrainResult train_loop(models::PadModels& models, nn::AdamW& opt, const data::Dataset& ds,
                       const TrainConfig& cfg, const std::string& run_dir, i64 start_step = 0,
                       const std::string& config_json = "");

struct InvdynConfig {
    i64 steps = 3000;
    i64 batch_size = 256;
    nn::CosineSchedule schedule{1e-3, 1e-4, 3000};
    std::uint64_t seed = 0;
    nn::AdamWConfig adamw;
};

/// Supervised regression of actions from consecutive encoded states. The
/// encoder is used through stop-gradient and only the inverse-dynamics
/// registry is updated.
TrainResult train_invdyn(models::PadModels& models, nn::AdamW& opt, const data::Dataset& ds,
                         const InvdynConfig& cfg, const std::string& run_dir);

// -- checkpoints --------------------------------------------------------------

struct Checkpoint {
    std::string kind;         // "planner" or "invdyn"
    std::string config_json;  // canonical config snapshot
    std::map<std::string, Tensor> params;
    i64 adam_step = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> moments;
    i64 train_step = 0;
    std::uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint make_checkpoint(const std::string& kind, const std::string& config_json,
                           const nn::Registry& reg, const nn::AdamW& opt, i64 train_step,
                           std::uint64_t seed);
/// Restores parameter values and optimizer state; rejects name/shape or
/// config mismatches (expected_config_json empty = skip the config check).
void restore_checkpoint(const Checkpoint& ckpt, nn::Registry& reg, nn::AdamW* opt,
                        const std::string& expected_config_json);

}  // namespace pad::train
