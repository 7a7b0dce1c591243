#pragma once

#include <string>
#include <vector>

#include "pad/models.hpp"
#include "pad/training.hpp"

namespace pad::config {

/// Everything a run needs; parsed from a sectioned key-value file (see the
/// README for the grammar). Unknown sections or keys are rejected.
struct RunConfig {
    // [run]
    std::string env = "pointmass";
    std::string regime = "noisy";
    std::uint64_t seed = 0;
    std::string run_root = "runs";  // PAD_RUN_DIR overrides

    // [data]
    i64 episodes = 500;
    i64 episode_len = 120;
    std::string dataset_path;  // empty = derived

    // [model]
    models::PadConfig model;

    // [train]
    train::TrainConfig train;

    // [invdyn]
    train::InvdynConfig invdyn;

    // [plan]
    i64 plan_candidates = 128;  // B
    i64 plan_top_k = 5;         // K
    i64 replan_interval = 1;    // N

    // [eval]
    i64 eval_episodes_per_task = 20;
    std::vector<std::uint64_t> eval_seeds{0, 1, 2};

    /// Canonical serialization (stable ordering); reparsing reproduces the
    /// config exactly.
    std::string to_string() const;
    /// Canonical text of the sections that determine the planner checkpoint
    /// (run, data, model, train); embedded in checkpoints and compared on
    /// load.
    std::string planner_config_string() const;
    /// 16-hex-digit hash of planner_config_string(): inverse-dynamics,
    /// planning and evaluation knobs do not move the run directory.
    std::string hash() const;
    /// Directory for this run: <root>/<hash>-<seed>.
    std::string run_dir() const;
    /// Default dataset path when none is configured.
    std::string default_dataset_path() const;

    /// Fill dims that derive from the environment and mirror shared fields
    /// (seed, schedule totals). Call after parsing and overrides.
    void finalize();
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);
/// Applies a `key=value` override using the same `section.key` names as the
/// file (e.g. "train.steps=100").
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace pad::config
