#pragma once

#include <deque>
#include <functional>

#include "pad/env.hpp"
#include "pad/models.hpp"

namespace pad::plan {

using pad::i64;
using pad::Tensor;

struct PlanParams {
    i64 candidates = 128;  // B
    i64 top_k = 5;         // K
    i64 refine_steps = 2;  // T
    bool use_projector = true;
};

struct CandidateDiag {
    double lambda = 0.0;
    double energy = 0.0;
    bool chosen = false;
};

struct Plan {
    Tensor latents;  // [H, d], the chosen candidate after refinement
    i64 chosen_index = -1;
    double chosen_energy = 0.0;
    double chosen_lambda = 0.0;
    std::vector<CandidateDiag> candidates;  // all B, in candidate order
};

struct PlanRequest {
    std::vector<std::vector<double>> past;  // up to P_max recent states, oldest first
    std::vector<double> goal;
    std::uint64_t seed = 0;
    /// Stream slot of the first candidate; candidate b draws from
    /// (seed, kPlanCandidate, slot0 + b), which makes candidates independent
    /// of batching (B=2 equals two B=1 calls with slots 0 and 1).
    i64 slot0 = 0;
};

/// Candidate initialization, T shared refinement steps, final-energy scoring,
/// top-K selection and the lambda-biased categorical choice. Candidates with
/// non-finite final energy are excluded; if none survives, NumericalError.
Plan plan(const PlanRequest& req, const models::PadModels& models, const PlanParams& params);

/// Indices of the k smallest energies, ascending by (energy, index); ties
/// break toward the lower index. All energies must be finite and k <= size.
std::vector<i64> select_top_k(const std::vector<double>& energies, i64 k);

/// Softmax probabilities of logits -lambda (selection distribution over a
/// top-K set).
std::vector<double> lambda_choice_probs(const std::vector<double>& lambdas);

/// Index drawn from a categorical distribution by CDF walk over `probs` in
/// index order, using the uniform draw `u` in [0,1).
i64 sample_categorical(const std::vector<double>& probs, double u);

/// First action pairs the encoded current observation with the first planned
/// latent; subsequent actions decode consecutive planned latents.
std::vector<std::vector<double>> decode_plan_actions(const std::vector<double>& current_state,
                                                     const Plan& plan, i64 n,
                                                     const models::PadModels& models);

using DiagSink = std::function<void(i64 replan_idx, const Plan&)>;

/// Policy for env::evaluate: keeps a past window of the states observed at
/// replanning instants, replans every `replan_interval` executed actions and
/// resamples temporal hypotheses each time.
env::PolicyMaker planner_policy(const models::PadModels& models, const PlanParams& params,
                                i64 replan_interval, DiagSink diag = nullptr);

/// One plan-execute-replan episode; writes per-replan candidate diagnostics
/// (replan_idx, candidate_idx, lambda, energy, chosen) when a path is given.
env::EpisodeOutcome run_episode(const env::Env& e, const env::GoalTask& task,
                                const models::PadModels& models, const PlanParams& params,
                                i64 replan_interval, std::uint64_t seed,
                                const std::string& diag_csv_path = "");

}  // namespace pad::plan
