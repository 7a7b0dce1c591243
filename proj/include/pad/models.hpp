#pragma once

#include <functional>
#include <optional>

#include "pad/nn.hpp"

namespace pad::models {

using ag::NodePtr;
using pad::i64;
using pad::Tensor;

struct PadConfig {
    i64 state_dim = 2;
    i64 action_dim = 2;
    i64 latent_dim = 32;  // d
    i64 past_len = 8;     // P_max
    i64 horizon = 32;     // H, must be divisible by 4
    i64 conv_ch1 = 64;
    i64 conv_ch2 = 96;  // equals transformer width
    i64 blocks = 3;
    i64 heads = 4;
    i64 width = 96;
    i64 mlp_ratio = 2;
    i64 refine_steps = 2;  // T
    double eta_init = 2.5;
    i64 proj_hidden = 64;
    i64 lambda_dim = 64;  // 32 log-spaced frequencies
    i64 enc_hidden = 64;
    i64 invdyn_hidden = 64;
    double ln_eps = 1e-5;

    void validate() const;
    i64 token_count() const;  // conv tokens + goal + lambda
    bool operator==(const PadConfig&) const = default;
};

/// Conditioning for one batched energy evaluation.
struct PlanContextBatch {
    NodePtr z_past;  // [P_max, B, d]
    NodePtr goal;    // [B, state_dim]
    NodePtr lambda;  // [B], each in [0,1]
};

/// Encoder f, energy E, projector p and step size eta share one registry
/// (the planner parameters); inverse dynamics g lives in its own registry so
/// its training can never touch the planner.
class PadModels {
public:
    static PadModels create(const PadConfig& cfg, std::uint64_t seed);

    const PadConfig& config() const { return cfg_; }
    nn::Registry& planner_params() { return planner_; }
    const nn::Registry& planner_params() const { return planner_; }
    nn::Registry& invdyn_params() { return invdyn_reg_; }
    const nn::Registry& invdyn_params() const { return invdyn_reg_; }
    const NodePtr& eta() const { return eta_; }

    /// Per-state encoding (no temporal mixing): [T, B, S] -> [T, B, d].
    NodePtr encode_states(const NodePtr& states) const;
    /// [B, S] -> [B, d].
    NodePtr encode_state(const NodePtr& state) const;

    /// Per-sample energies: z_future [H, B, d] -> [B].
    NodePtr energy(const NodePtr& z_future, const PlanContextBatch& ctx) const;
    /// Sum over the batch (per-sample energies are independent, so the
    /// gradient of the sum w.r.t. z_future carries the per-sample gradients).
    NodePtr energy_sum(const NodePtr& z_future, const PlanContextBatch& ctx) const;

    /// Position-wise projector: [H, B, d] -> [H, B, d].
    NodePtr project(const NodePtr& z) const;

    /// Inverse dynamics on latent pairs: [B, d] x [B, d] -> [B, action_dim].
    NodePtr decode_action(const NodePtr& z_t, const NodePtr& z_next) const;

    /// Clamp eta to >= 0 (applied after optimizer updates).
    void clamp_eta();

private:
    PadConfig cfg_;
    nn::Registry planner_;
    nn::Registry invdyn_reg_;
    nn::Mlp encoder_;
    nn::Conv1d conv1_, conv2_;
    nn::Mlp goal_mlp_, lambda_mlp_;
    NodePtr pos_embed_;
    std::vector<nn::TransformerBlock> blocks_;
    nn::LayerNormAffine final_ln_;
    nn::Linear readout_;
    nn::Mlp projector_;
    nn::Mlp invdyn_;
    NodePtr eta_;
};

using EnergyFn = std::function<NodePtr(const NodePtr&)>;
using ProjectFn = std::function<NodePtr(const NodePtr&)>;

struct RefineInfo {
    double energy_sum = 0.0;
    double grad_norm = 0.0;
};

/// One refinement step: z' = project(z - eta * dE/dz), or the raw step when
/// `projector` is null. The gradient is taken with respect to z only. With
/// `differentiable=true` the returned iterate can be differentiated through
/// the gradient itself (second order). Non-finite energies or gradients are
/// rejected with diagnostics.
NodePtr refine_step(const NodePtr& z, const EnergyFn& energy_sum, const ProjectFn* projector,
                    const NodePtr& eta, bool differentiable, RefineInfo* info = nullptr);

}  // namespace pad::models
