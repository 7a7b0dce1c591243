#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pad/rng.hpp"
#include "pad/tensor.hpp"

namespace pad::data {

struct Trajectory {
    i64 state_dim = 0;
    i64 action_dim = 0;                // 0 when actions are absent
    std::vector<double> states;        // length * state_dim
    std::vector<double> actions;       // (length-1) * action_dim

    i64 length() const { return state_dim ? static_cast<i64>(states.size()) / state_dim : 0; }
    const double* state(i64 t) const { return states.data() + t * state_dim; }
    const double* action(i64 t) const { return actions.data() + t * action_dim; }
    void validate() const;
};

struct DatasetMeta {
    std::string env_name;
    std::string generator_kind;
    std::uint64_t seed = 0;
};

struct Dataset {
    i64 state_dim = 0;
    i64 action_dim = 0;
    std::vector<Trajectory> trajectories;
    DatasetMeta meta;
};

/// Inverse-CDF transform of the truncated arccos density
/// p(r) = (2/pi) (1 - r^2)^(-1/2): r = sin(pi u / 2).
double arccos_transform(double u);
/// CDF F(r) = (2/pi) asin(r) on [0,1].
double arccos_cdf(double r);
double sample_arccos(RngStream& rng);

/// P_past = 1 + round(r * (P_max - 1)), round-half-to-even.
i64 arccos_to_past_len(double r, i64 p_max);
/// G = round(G_min + lambda * (H - G_min)) with G_min = min(P_max, H-1);
/// 1-indexed offset into the future window.
i64 lambda_to_goal_offset(double lambda, i64 p_max, i64 horizon);

struct HindsightSample {
    Tensor s_past;     // [P_max, S], left replicate-padded
    Tensor s_future;   // [H, S]
    Tensor goal;       // [S], bit-exact copy of the future state at the offset
    double lambda = 0.0;
    i64 p_past = 0;       // real (unpadded) past length in [1, P_max]
    i64 goal_offset = 0;  // G
    i64 window_start = 0; // index of the first (real) past state
};

/// Draw order is fixed: r, then the window start, then lambda.
HindsightSample hindsight_sample(const Trajectory& traj, i64 p_max, i64 horizon,
                                 RngStream& rng);

/// sqrt(beta) * z_clean + sqrt(1-beta) * eps, with exact identities at the
/// endpoints (beta=1 returns z_clean bit-exactly, beta=0 returns eps).
Tensor corrupt(const Tensor& z_clean, double beta, const Tensor& eps);

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);
/// Path of the JSON sidecar for a dataset path (same stem, ".meta.json").
std::string meta_path_for(const std::string& path);

/// Indices of trajectories long enough to train on (length >= P_max + H).
std::vector<i64> trainable_indices(const Dataset& ds, i64 p_max, i64 horizon);

struct Batch {
    Tensor s_past;    // [P_max, B, S]
    Tensor s_future;  // [H, B, S]
    Tensor goal;      // [B, S]
    Tensor lambda;    // [B]
    Tensor beta;      // [B]
    Tensor eps;       // [H, B, d]
};

/// Deterministic batch for a given (seed, step): every random draw comes from
/// counter streams keyed by (seed, purpose, step, slot), so assembly order
/// and scheduling cannot change the result. Trajectories are sampled
/// uniformly with replacement among the trainable ones.
Batch assemble_batch(const Dataset& ds, const std::vector<i64>& trainable, i64 p_max,
                     i64 horizon, i64 latent_dim, i64 batch_size, std::uint64_t seed, i64 step);

}  // namespace pad::data
