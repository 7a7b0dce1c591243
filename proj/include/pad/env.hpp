#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pad/data.hpp"
#include "pad/rng.hpp"

namespace pad::env {

struct GoalTask {
    std::vector<double> init_state;
    std::vector<double> goal_state;
    double eps = 0.05;
    i64 max_steps = 200;
};

/// Deterministic goal-reaching environment. Transitions are pure functions
/// of (state, action); goals are full states.
class Env {
public:
    virtual ~Env() = default;
    virtual std::string name() const = 0;
    virtual i64 state_dim() const = 0;
    virtual i64 action_dim() const = 0;
    virtual std::vector<double> step(const std::vector<double>& state,
                                     const std::vector<double>& action) const = 0;
    /// Max-norm distance on the task-relevant coordinates, strictly below eps.
    virtual bool success(const std::vector<double>& state, const std::vector<double>& goal,
                         double eps) const = 0;
    virtual i64 num_task_families() const { return 5; }
    virtual GoalTask sample_task(i64 family, RngStream& rng) const = 0;
    /// Markovian scripted controller used by the generators and as the
    /// solvability oracle.
    virtual std::vector<double> expert_action(const std::vector<double>& state,
                                              const std::vector<double>& goal) const = 0;
};

std::unique_ptr<Env> make_env(const std::string& name);  // "pointmass" | "pickplace"

enum class Regime { Expert, Noisy };
Regime parse_regime(const std::string& s);
std::string regime_name(Regime r);

struct GenStats {
    double success_fraction = 0.0;  // episodes whose final state satisfies the task
    double coverage = 0.0;          // occupied cells of a 20x20 grid over [-1,1]^2
};

/// Offline data generation. Expert: scripted controller + AR(1) action noise
/// (rho 0.9, sigma 0.005), high success and narrow coverage. Noisy: the same
/// goal-biased controller with per-episode Gaussian noise sigma_e ~
/// U(0.01, 0.05) applied i.i.d. per step (scaled per action dimension by its
/// range), broad coverage and frequent failure. Episodes run for a fixed
/// length so every trajectory is trainable.
data::Dataset generate_dataset(const Env& env, Regime regime, i64 episodes,
                               std::uint64_t seed, i64 episode_len = 120,
                               GenStats* stats = nullptr);

/// Fraction of 20x20 grid cells over [-1,1]^2 visited by the first two state
/// coordinates (coverage diagnostic).
double state_coverage(const data::Dataset& ds);

/// A policy returns one or more actions (concatenated action_dim chunks) to
/// execute open loop; it is re-invoked when the queue is exhausted.
using Policy = std::function<std::vector<double>(const std::vector<double>& state)>;
using PolicyMaker = std::function<Policy(const GoalTask& task, std::uint64_t episode_seed)>;

struct EpisodeOutcome {
    bool success = false;
    i64 steps = 0;        // environment steps executed
    i64 invocations = 0;  // policy invocations
    std::string fail_reason;
};

EpisodeOutcome run_policy_episode(const Env& env, const GoalTask& task, const Policy& policy);

struct ReportRow {
    i64 task = 0;
    std::uint64_t seed = 0;
    double success_rate = 0.0;
    double mean_steps = 0.0;  // over successful rollouts
    double std_steps = 0.0;
    i64 n_success = 0;
};

struct EvalResult {
    std::vector<ReportRow> rows;            // one per (task, seed)
    std::vector<i64> success_lengths;       // pooled successful episode lengths
    double mean_success_rate = 0.0;         // over rows
    i64 total_episodes = 0;
    i64 total_invocations = 0;
    i64 total_steps = 0;
};

/// Multi-goal protocol: for each task family and seed, runs
/// `episodes_per_task` episodes with randomized start/goal. The policy maker
/// receives a per-episode seed derived from (seed, task, episode).
EvalResult evaluate(const Env& env, const PolicyMaker& make_policy, i64 episodes_per_task,
                    const std::vector<std::uint64_t>& seeds,
                    const std::string& episode_log_path = "");

}  // namespace pad::env
