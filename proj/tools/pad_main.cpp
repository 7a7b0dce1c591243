// pad: data generation, training, evaluation and plan inspection for the
// latent energy planner. Every subcommand is deterministic given the config
// file and seed.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pad/config.hpp"
#include "pad/env.hpp"
#include "pad/errors.hpp"
#include "pad/planning.hpp"
#include "pad/report.hpp"
#include "pad/training.hpp"

namespace fs = std::filesystem;
using pad::i64;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct CliArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string env, regime, dataset, out;
    i64 episodes = -1;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool force = false;
    bool resume = false;
    bool no_projector = false;
    std::vector<i64> n_sweep, k_sweep;
    std::string eval_out = "report";
    std::string dbg_start, dbg_goal;
    i64 dbg_family = 0;
};

pad::config::RunConfig resolve_config(const CliArgs& a) {
    pad::config::RunConfig cfg;
    if (!a.config_path.empty()) cfg = pad::config::load_config_file(a.config_path);
    for (const auto& ov : a.overrides) pad::config::apply_override(cfg, ov);
    if (!a.env.empty()) cfg.env = a.env;
    if (!a.regime.empty()) cfg.regime = a.regime;
    if (!a.dataset.empty()) cfg.dataset_path = a.dataset;
    if (a.episodes >= 0) cfg.episodes = a.episodes;
    if (a.seed_set) cfg.seed = a.seed;
    if (a.no_projector) cfg.train.use_projector = false;
    cfg.finalize();
    return cfg;
}

std::string dataset_path_for(const pad::config::RunConfig& cfg) {
    return cfg.dataset_path.empty() ? cfg.default_dataset_path() : cfg.dataset_path;
}

int cmd_gen_data(const pad::config::RunConfig& cfg, const CliArgs& a) {
    std::string path = !a.out.empty() ? a.out : dataset_path_for(cfg);
    if (fs::exists(path) && !a.force) {
        std::cerr << "error: " << path << " exists (use --force to overwrite)\n";
        return kExitData;
    }
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    auto env = pad::env::make_env(cfg.env);
    pad::env::GenStats stats;
    pad::data::Dataset ds = pad::env::generate_dataset(
        *env, pad::env::parse_regime(cfg.regime), cfg.episodes, cfg.seed, cfg.episode_len,
        &stats);
    pad::data::save_dataset(path, ds);
    std::printf("wrote %s: %lld episodes of length %lld (%s regime)\n", path.c_str(),
                static_cast<long long>(cfg.episodes), static_cast<long long>(cfg.episode_len),
                cfg.regime.c_str());
    std::printf("generator success fraction: %.3f, state coverage: %.3f\n",
                stats.success_fraction, stats.coverage);
    return 0;
}

int cmd_train(const pad::config::RunConfig& cfg, const CliArgs& a) {
    pad::data::Dataset ds = pad::data::load_dataset(dataset_path_for(cfg));
    auto models = pad::models::PadModels::create(cfg.model, cfg.seed);
    pad::nn::AdamW opt(models.planner_params(), cfg.train.adamw);
    std::string run_dir = cfg.run_dir();
    fs::create_directories(run_dir);
    {
        std::ofstream cf(run_dir + "/config.txt", std::ios::trunc);
        cf << cfg.to_string();
    }
    i64 start_step = 0;
    std::string ckpt_path = run_dir + "/checkpoint.padck";
    if (a.resume) {
        if (!fs::exists(ckpt_path)) {
            std::cerr << "error: --resume but no checkpoint at " << ckpt_path << "\n";
            return kExitData;
        }
        auto ck = pad::train::load_checkpoint(ckpt_path);
        pad::train::restore_checkpoint(ck, models.planner_params(), &opt,
                                       cfg.planner_config_string());
        start_step = ck.train_step;
        std::printf("resuming from step %lld\n", static_cast<long long>(start_step));
    }
    auto res = pad::train::train_loop(models, opt, ds, cfg.train, run_dir, start_step,
                                      cfg.planner_config_string());
    std::printf("trained to step %lld; checkpoint: %s\n",
                static_cast<long long>(res.final_step), res.checkpoint_path.c_str());
    return 0;
}

int cmd_train_invdyn(const pad::config::RunConfig& cfg, const CliArgs&) {
    pad::data::Dataset ds = pad::data::load_dataset(dataset_path_for(cfg));
    auto models = pad::models::PadModels::create(cfg.model, cfg.seed);
    pad::nn::AdamW opt(models.invdyn_params(), cfg.invdyn.adamw);
    auto res = pad::train::train_invdyn(models, opt, ds, cfg.invdyn, cfg.run_dir());
    std::printf("inverse dynamics trained for %lld steps; checkpoint: %s\n",
                static_cast<long long>(res.final_step), res.checkpoint_path.c_str());
    return 0;
}

pad::models::PadModels load_models_for_eval(const pad::config::RunConfig& cfg,
                                            const std::string& run_dir) {
    auto models = pad::models::PadModels::create(cfg.model, cfg.seed);
    std::string planner_path = run_dir + "/checkpoint.padck";
    std::string invdyn_path = run_dir + "/invdyn.padck";
    if (!fs::exists(planner_path))
        throw pad::DataError("missing planner checkpoint " + planner_path);
    if (!fs::exists(invdyn_path))
        throw pad::DataError("missing inverse-dynamics checkpoint " + invdyn_path);
    auto pc = pad::train::load_checkpoint(planner_path);
    pad::train::restore_checkpoint(pc, models.planner_params(), nullptr,
                                   cfg.planner_config_string());
    auto ic = pad::train::load_checkpoint(invdyn_path);
    pad::train::restore_checkpoint(ic, models.invdyn_params(), nullptr, "");
    return models;
}

int cmd_eval(const pad::config::RunConfig& cfg, const CliArgs& a) {
    std::string run_dir = cfg.run_dir();
    auto models = load_models_for_eval(cfg, run_dir);
    auto env = pad::env::make_env(cfg.env);
    std::vector<i64> n_sweep = a.n_sweep.empty() ? std::vector<i64>{cfg.replan_interval}
                                                 : a.n_sweep;
    std::vector<i64> k_sweep = a.k_sweep.empty() ? std::vector<i64>{cfg.plan_top_k} : a.k_sweep;

    std::vector<pad::report::SweepRow> sweep_rows;
    std::vector<i64> pooled_lengths;
    for (i64 n : n_sweep) {
        for (i64 k : k_sweep) {
            pad::plan::PlanParams params;
            params.candidates = cfg.plan_candidates;
            params.top_k = k;
            params.refine_steps = cfg.model.refine_steps;
            params.use_projector = cfg.train.use_projector;
            auto maker = pad::plan::planner_policy(models, params, n);
            std::string log_path = run_dir + "/episodes-N" + std::to_string(n) + "-K" +
                                   std::to_string(k) + "-" + a.eval_out + ".jsonl";
            auto result = pad::env::evaluate(*env, maker, cfg.eval_episodes_per_task,
                                             cfg.eval_seeds, log_path);
            for (const auto& row : result.rows) sweep_rows.push_back({n, k, row});
            pooled_lengths.insert(pooled_lengths.end(), result.success_lengths.begin(),
                                  result.success_lengths.end());
            std::printf("N=%lld K=%lld: success %.3f over %lld episodes "
                        "(%lld invocations, %lld env steps)\n",
                        static_cast<long long>(n), static_cast<long long>(k),
                        result.mean_success_rate, static_cast<long long>(result.total_episodes),
                        static_cast<long long>(result.total_invocations),
                        static_cast<long long>(result.total_steps));
        }
    }
    std::string csv = run_dir + "/" + a.eval_out + ".csv";
    pad::report::write_sweep_csv(csv, sweep_rows);
    pad::report::write_histogram_svg(run_dir + "/" + a.eval_out + "-lengths.svg", pooled_lengths,
                                     "episode lengths over successful rollouts (" + cfg.env +
                                         ", " + cfg.regime + ")");
    std::printf("report: %s\n", csv.c_str());
    return 0;
}

int cmd_plan_debug(const pad::config::RunConfig& cfg, const CliArgs& a) {
    std::string run_dir = cfg.run_dir();
    auto models = load_models_for_eval(cfg, run_dir);
    auto env = pad::env::make_env(cfg.env);

    auto parse_state = [&](const std::string& text) {
        std::vector<double> v;
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
        if (static_cast<i64>(v.size()) != env->state_dim())
            throw pad::DataError("state '" + text + "' must have " +
                                 std::to_string(env->state_dim()) + " components");
        return v;
    };

    pad::RngStream task_rng(cfg.seed, pad::mix_stream({pad::stream_tag::kEpisode, 0xDB}));
    pad::env::GoalTask task = env->sample_task(a.dbg_family, task_rng);
    if (!a.dbg_start.empty()) task.init_state = parse_state(a.dbg_start);
    if (!a.dbg_goal.empty()) task.goal_state = parse_state(a.dbg_goal);

    pad::plan::PlanParams params;
    params.candidates = cfg.plan_candidates;
    params.top_k = cfg.plan_top_k;
    params.refine_steps = cfg.model.refine_steps;
    params.use_projector = cfg.train.use_projector;

    std::string diag_csv = run_dir + "/plan-debug.csv";
    std::vector<pad::report::ScatterPoint> points;
    std::ofstream diag_file(diag_csv, std::ios::trunc);
    if (!diag_file) throw pad::DataError("cannot open " + diag_csv);
    diag_file << "replan_idx,candidate_idx,lambda,energy,chosen\n";
    pad::plan::DiagSink sink = [&](i64 replan_idx, const pad::plan::Plan& p) {
        for (const auto& c : p.candidates)
            points.push_back({replan_idx, c.lambda, c.energy, c.chosen});
        char buf[160];
        for (size_t c = 0; c < p.candidates.size(); ++c) {
            const auto& cand = p.candidates[c];
            std::snprintf(buf, sizeof(buf), "%lld,%zu,%.17g,%.17g,%d\n",
                          static_cast<long long>(replan_idx), c, cand.lambda, cand.energy,
                          cand.chosen ? 1 : 0);
            diag_file << buf;
        }
    };
    auto maker = pad::plan::planner_policy(models, params, cfg.replan_interval, sink);
    auto outcome = pad::env::run_policy_episode(*env, task, maker(task, cfg.seed));

    pad::report::write_lambda_energy_svg(run_dir + "/plan-debug.svg", points,
                                         "candidate energy vs lambda per replanning step");
    std::printf("episode: success=%d steps=%lld invocations=%lld\n", outcome.success ? 1 : 0,
                static_cast<long long>(outcome.steps),
                static_cast<long long>(outcome.invocations));
    std::printf("diagnostics: %s and plan-debug.svg\n", diag_csv.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pad: goal-conditioned latent energy planning"};
    app.require_subcommand(1);
    CliArgs a;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", a.config_path, "Config file (sectioned key=value)");
        cmd->add_option("--set", a.overrides,
                        "Override config keys, e.g. --set train.steps=100");
        cmd->add_option("--seed", a.seed, "Seed override")
            ->each([&](const std::string&) { a.seed_set = true; });
    };

    auto* gen = app.add_subcommand("gen-data", "Generate an offline dataset");
    add_common(gen);
    gen->add_option("--env", a.env, "Environment: pointmass | pickplace");
    gen->add_option("--regime", a.regime, "Data regime: expert | noisy");
    gen->add_option("--episodes", a.episodes, "Episode count");
    gen->add_option("--out", a.out, "Output dataset path");
    gen->add_flag("--force", a.force, "Overwrite an existing dataset file");

    auto* tr = app.add_subcommand("train", "Train the planner");
    add_common(tr);
    tr->add_option("--dataset", a.dataset, "Dataset path");
    tr->add_flag("--resume", a.resume, "Resume from the run directory checkpoint");
    tr->add_flag("--no-projector", a.no_projector, "Ablation: disable the projector");

    auto* ti = app.add_subcommand("train-invdyn", "Train the inverse-dynamics decoder");
    add_common(ti);
    ti->add_option("--dataset", a.dataset, "Dataset path");

    auto* ev = app.add_subcommand("eval", "Evaluate the trained planner (multi-goal protocol)");
    add_common(ev);
    ev->add_option("--replan-interval", a.n_sweep, "Sweep of replanning intervals N");
    ev->add_option("--top-k", a.k_sweep, "Sweep of top-K values");
    ev->add_option("--out", a.eval_out, "Report stem (default 'report')");
    ev->add_flag("--no-projector", a.no_projector,
                 "Ablation: plan without the projector (matching checkpoint required)");

    auto* dbg = app.add_subcommand("plan-debug", "Run one episode and dump plan diagnostics");
    add_common(dbg);
    dbg->add_option("--start", a.dbg_start, "Start state, comma separated");
    dbg->add_option("--goal", a.dbg_goal, "Goal state, comma separated");
    dbg->add_option("--task", a.dbg_family, "Task family when start/goal are not given");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(resolve_config(a), a);
        if (tr->parsed()) return cmd_train(resolve_config(a), a);
        if (ti->parsed()) return cmd_train_invdyn(resolve_config(a), a);
        if (ev->parsed()) return cmd_eval(resolve_config(a), a);
        if (dbg->parsed()) return cmd_plan_debug(resolve_config(a), a);
    } catch (const pad::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const pad::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitUsage;
}
