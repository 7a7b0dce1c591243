#include "pad/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pad/errors.hpp"

namespace pad::env {

namespace {

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

constexpr double kAMax = 0.05;

class PointMass2D final : public Env {
public:
    std::string name() const override { return "pointmass"; }
    i64 state_dim() const override { return 2; }
    i64 action_dim() const override { return 2; }

    std::vector<double> step(const std::vector<double>& s,
                             const std::vector<double>& a) const override {
        double ax = clampd(a[0], -kAMax, kAMax);
        double ay = clampd(a[1], -kAMax, kAMax);
        return {clampd(s[0] + ax, -1.0, 1.0), clampd(s[1] + ay, -1.0, 1.0)};
    }

    bool success(const std::vector<double>& s, const std::vector<double>& g,
                 double eps) const override {
        return std::max(std::fabs(s[0] - g[0]), std::fabs(s[1] - g[1])) < eps;
    }

    GoalTask sample_task(i64 family, RngStream& rng) const override {
        // Five movement families: two diagonals, anti-diagonal, horizontal,
        // vertical. Boxes keep start/goal far enough apart that the scripted
        // controller needs a few dozen steps.
        auto box = [&](double x0, double x1, double y0, double y1) {
            return std::vector<double>{x0 + (x1 - x0) * rng.uniform(),
                                       y0 + (y1 - y0) * rng.uniform()};
        };
        GoalTask t;
        switch (family % 5) {
            case 0: t.init_state = box(-0.95, -0.5, -0.95, -0.5); t.goal_state = box(0.5, 0.95, 0.5, 0.95); break;
            case 1: t.init_state = box(0.5, 0.95, 0.5, 0.95); t.goal_state = box(-0.95, -0.5, -0.95, -0.5); break;
            case 2: t.init_state = box(-0.95, -0.5, 0.5, 0.95); t.goal_state = box(0.5, 0.95, -0.95, -0.5); break;
            case 3: t.init_state = box(-0.95, -0.6, -0.4, 0.4); t.goal_state = box(0.6, 0.95, -0.4, 0.4); break;
            default: t.init_state = box(-0.4, 0.4, -0.95, -0.6); t.goal_state = box(-0.4, 0.4, 0.6, 0.95); break;
        }
        return t;
    }

    std::vector<double> expert_action(const std::vector<double>& s,
                                      const std::vector<double>& g) const override {
        constexpr double kp = 0.15;
        return {clampd(kp * (g[0] - s[0]), -kAMax, kAMax),
                clampd(kp * (g[1] - s[1]), -kAMax, kAMax)};
    }
};

// State: (gripper x, block x, holding). The block moves only while held.
class PickPlace1D final : public Env {
public:
    std::string name() const override { return "pickplace"; }
    i64 state_dim() const override { return 3; }
    i64 action_dim() const override { return 2; }

    static constexpr double kGraspDist = 0.02;

    std::vector<double> step(const std::vector<double>& s,
                             const std::vector<double>& a) const override {
        double dx = clampd(a[0], -kAMax, kAMax);
        double grip = clampd(a[1], -1.0, 1.0);
        double gx = clampd(s[0] + dx, -1.0, 1.0);
        double bx = s[1];
        double holding = s[2];
        if (holding > 0.5) {
            if (grip < 0.0)
                holding = 0.0;  // release: block stays where it was
            else
                bx = gx;  // carried
        } else if (std::fabs(gx - bx) < kGraspDist && grip > 0.0) {
            holding = 1.0;
        }
        return {gx, bx, holding};
    }

    bool success(const std::vector<double>& s, const std::vector<double>& g,
                 double eps) const override {
        // Only the block position counts; gripper pose and holding are ignored.
        return std::fabs(s[1] - g[1]) < eps;
    }

    GoalTask sample_task(i64 family, RngStream& rng) const override {
        auto u = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
        double block, target;
        switch (family % 5) {
            case 0: block = u(-0.8, -0.4); target = u(0.4, 0.8); break;
            case 1: block = u(0.4, 0.8); target = u(-0.8, -0.4); break;
            case 2: block = u(-0.2, 0.2); target = u(0.55, 0.9); break;
            case 3: block = u(-0.2, 0.2); target = u(-0.9, -0.55); break;
            default: block = u(-0.9, -0.55); target = u(-0.2, 0.2); break;
        }
        GoalTask t;
        t.init_state = {u(-0.9, 0.9), block, 0.0};
        // Goal gripper coordinate is set to the block target; success ignores it.
        t.goal_state = {target, target, 0.0};
        return t;
    }

    std::vector<double> expert_action(const std::vector<double>& s,
                                      const std::vector<double>& g) const override {
        constexpr double kp = 0.2;
        double gx = s[0], bx = s[1];
        bool holding = s[2] > 0.5;
        double target = g[1];
        if (!holding) {
            if (std::fabs(gx - bx) < 0.6 * kGraspDist) return {0.0, 1.0};  // grasp
            return {clampd(kp * (bx - gx), -kAMax, kAMax), -1.0};          // approach
        }
        if (std::fabs(bx - target) < 0.02) return {0.0, -1.0};  // release at target
        return {clampd(kp * (target - gx), -kAMax, kAMax), 1.0};           // carry
    }
};

}  // namespace

std::unique_ptr<Env> make_env(const std::string& name) {
    if (name == "pointmass") return std::make_unique<PointMass2D>();
    if (name == "pickplace") return std::make_unique<PickPlace1D>();
    throw DataError("unknown environment: " + name);
}

Regime parse_regime(const std::string& s) {
    if (s == "expert") return Regime::Expert;
    if (s == "noisy") return Regime::Noisy;
    throw DataError("unknown regime: " + s + " (expected expert|noisy)");
}

std::string regime_name(Regime r) { return r == Regime::Expert ? "expert" : "noisy"; }

data::Dataset generate_dataset(const Env& env, Regime regime, i64 episodes,
                               std::uint64_t seed, i64 episode_len, GenStats* stats) {
    if (episodes < 1) throw DataError("episodes must be >= 1");
    const i64 sd = env.state_dim(), ad = env.action_dim();
    data::Dataset ds;
    ds.state_dim = sd;
    ds.action_dim = ad;
    ds.meta.env_name = env.name();
    ds.meta.generator_kind = regime_name(regime);
    ds.meta.seed = seed;
    ds.trajectories.reserve(static_cast<size_t>(episodes));
    i64 n_success = 0;  // episodes that reach the goal at some step

    for (i64 ep = 0; ep < episodes; ++ep) {
        RngStream rng(seed, mix_stream({stream_tag::kDataGen, static_cast<std::uint64_t>(ep)}));
        GoalTask task = env.sample_task(ep % env.num_task_families(), rng);

        // Per-episode noise parameters.
        double sigma_e = 0.01 + 0.04 * rng.uniform();  // noisy regime
        std::vector<double> ar_state(static_cast<size_t>(ad), 0.0);

        data::Trajectory traj;
        traj.state_dim = sd;
        traj.action_dim = ad;
        traj.states.reserve(static_cast<size_t>((episode_len + 1) * sd));
        traj.actions.reserve(static_cast<size_t>(episode_len * ad));

        std::vector<double> s = task.init_state;
        bool reached = env.success(s, task.goal_state, task.eps);
        traj.states.insert(traj.states.end(), s.begin(), s.end());
        for (i64 t = 0; t < episode_len; ++t) {
            std::vector<double> a = env.expert_action(s, task.goal_state);
            if (regime == Regime::Expert) {
                for (i64 d = 0; d < ad; ++d) {
                    ar_state[static_cast<size_t>(d)] = 0.9 * ar_state[static_cast<size_t>(d)] +
                                                       0.005 * rng.normal();
                    a[static_cast<size_t>(d)] += ar_state[static_cast<size_t>(d)];
                }
            } else {
                // Noise scaled per action dimension by its range (position
                // deltas are bounded by a_max, the grip channel by 1).
                for (i64 d = 0; d < ad; ++d) {
                    double scale = (env.name() == "pickplace" && d == 1) ? (1.0 / kAMax) : 1.0;
                    a[static_cast<size_t>(d)] += sigma_e * scale * rng.normal();
                }
            }
            std::vector<double> s_next = env.step(s, a);
            // Record the executed action (post-clamp) so transitions stay
            // exactly invertible where dynamics allow it.
            std::vector<double> executed(static_cast<size_t>(ad));
            executed[0] = clampd(a[0], -kAMax, kAMax);
            if (ad > 1) {
                double hi = env.name() == "pickplace" ? 1.0 : kAMax;
                for (i64 d = 1; d < ad; ++d)
                    executed[static_cast<size_t>(d)] = clampd(a[static_cast<size_t>(d)], -hi, hi);
            }
            traj.actions.insert(traj.actions.end(), executed.begin(), executed.end());
            traj.states.insert(traj.states.end(), s_next.begin(), s_next.end());
            s = std::move(s_next);
            reached = reached || env.success(s, task.goal_state, task.eps);
        }
        traj.validate();
        if (reached) ++n_success;
        ds.trajectories.push_back(std::move(traj));
    }
    if (stats) {
        stats->success_fraction = static_cast<double>(n_success) / static_cast<double>(episodes);
        stats->coverage = state_coverage(ds);
    }
    return ds;
}

double state_coverage(const data::Dataset& ds) {
    constexpr i64 kGrid = 20;
    std::vector<char> hit(kGrid * kGrid, 0);
    for (const auto& t : ds.trajectories) {
        for (i64 i = 0; i < t.length(); ++i) {
            const double* s = t.state(i);
            double x = s[0];
            double y = t.state_dim > 1 ? s[1] : 0.0;
            i64 cx = std::min<i64>(kGrid - 1, static_cast<i64>((clampd(x, -1.0, 1.0) + 1.0) / 2.0 * kGrid));
            i64 cy = std::min<i64>(kGrid - 1, static_cast<i64>((clampd(y, -1.0, 1.0) + 1.0) / 2.0 * kGrid));
            hit[static_cast<size_t>(cy * kGrid + cx)] = 1;
        }
    }
    i64 n = 0;
    for (char c : hit) n += c;
    return static_cast<double>(n) / static_cast<double>(kGrid * kGrid);
}

EpisodeOutcome run_policy_episode(const Env& env, const GoalTask& task, const Policy& policy) {
    EpisodeOutcome out;
    std::vector<double> s = task.init_state;
    if (env.success(s, task.goal_state, task.eps)) {
        out.success = true;
        return out;  // degenerate task: already at the goal, zero steps
    }
    const i64 ad = env.action_dim();
    while (out.steps < task.max_steps) {
        std::vector<double> actions;
        try {
            actions = policy(s);
        } catch (const std::exception& e) {
            out.fail_reason = e.what();
            return out;
        }
        if (actions.empty() || actions.size() % static_cast<size_t>(ad) != 0) {
            out.fail_reason = "policy returned a malformed action block";
            return out;
        }
        ++out.invocations;
        const i64 count = static_cast<i64>(actions.size()) / ad;
        for (i64 i = 0; i < count && out.steps < task.max_steps; ++i) {
            std::vector<double> a(actions.begin() + i * ad, actions.begin() + (i + 1) * ad);
            s = env.step(s, a);
            ++out.steps;
            if (env.success(s, task.goal_state, task.eps)) {
                out.success = true;
                return out;
            }
        }
    }
    out.fail_reason = "step budget exhausted";
    return out;
}

EvalResult evaluate(const Env& env, const PolicyMaker& make_policy, i64 episodes_per_task,
                    const std::vector<std::uint64_t>& seeds,
                    const std::string& episode_log_path) {
    EvalResult res;
    std::ofstream log;
    if (!episode_log_path.empty()) {
        log.open(episode_log_path, std::ios::trunc);
        if (!log) throw DataError("cannot open episode log " + episode_log_path);
    }
    const i64 families = env.num_task_families();
    for (std::uint64_t run_seed : seeds) {
        for (i64 task = 0; task < families; ++task) {
            std::vector<i64> lengths;
            i64 n_success = 0;
            for (i64 ep = 0; ep < episodes_per_task; ++ep) {
                std::uint64_t ep_seed = mix_stream({stream_tag::kEval, run_seed,
                                                    static_cast<std::uint64_t>(task),
                                                    static_cast<std::uint64_t>(ep)});
                RngStream task_rng(run_seed, mix_stream({stream_tag::kEpisode,
                                                         static_cast<std::uint64_t>(task),
                                                         static_cast<std::uint64_t>(ep)}));
                GoalTask t = env.sample_task(task, task_rng);
                Policy policy = make_policy(t, ep_seed);
                EpisodeOutcome o = run_policy_episode(env, t, policy);
                res.total_episodes += 1;
                res.total_invocations += o.invocations;
                res.total_steps += o.steps;
                if (o.success) {
                    ++n_success;
                    lengths.push_back(o.steps);
                    res.success_lengths.push_back(o.steps);
                }
                if (log) {
                    nlohmann::json row{{"task", task},        {"seed", run_seed},
                                       {"episode", ep},       {"success", o.success},
                                       {"steps", o.steps},    {"invocations", o.invocations},
                                       {"fail_reason", o.fail_reason}};
                    log << row.dump() << "\n";
                }
            }
            ReportRow row;
            row.task = task;
            row.seed = run_seed;
            row.success_rate =
                static_cast<double>(n_success) / static_cast<double>(episodes_per_task);
            row.n_success = n_success;
            if (n_success > 0) {
                double mean = 0.0;
                for (i64 l : lengths) mean += static_cast<double>(l);
                mean /= static_cast<double>(n_success);
                double var = 0.0;
                for (i64 l : lengths) var += (static_cast<double>(l) - mean) * (static_cast<double>(l) - mean);
                var = n_success > 1 ? var / static_cast<double>(n_success - 1) : 0.0;
                row.mean_steps = mean;
                row.std_steps = std::sqrt(var);
            }
            res.rows.push_back(row);
        }
    }
    for (const auto& r : res.rows) res.mean_success_rate += r.success_rate;
    if (!res.rows.empty()) res.mean_success_rate /= static_cast<double>(res.rows.size());
    return res;
}

}  // namespace pad::env
