#include "pad/planning.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "pad/errors.hpp"

namespace pad::plan {

using namespace pad::ag;

namespace {

// Replicate-pad the observed past (oldest first) to exactly p_max states.
Tensor padded_past(const std::vector<std::vector<double>>& past, i64 p_max, i64 state_dim) {
    if (past.empty()) throw std::invalid_argument("plan: empty past window");
    if (static_cast<i64>(past.size()) > p_max)
        throw std::invalid_argument("plan: past window longer than P_max");
    Tensor out({p_max, 1, state_dim});
    const i64 have = static_cast<i64>(past.size());
    for (i64 t = 0; t < p_max; ++t) {
        const auto& src = t < p_max - have ? past.front()
                                           : past[static_cast<size_t>(t - (p_max - have))];
        if (static_cast<i64>(src.size()) != state_dim)
            throw std::invalid_argument("plan: past state has wrong dimension");
        std::memcpy(out.data() + t * state_dim, src.data(),
                    static_cast<size_t>(state_dim) * sizeof(double));
    }
    return out;
}

}  // namespace

std::vector<i64> select_top_k(const std::vector<double>& energies, i64 k) {
    for (double e : energies)
        if (!std::isfinite(e))
            throw std::invalid_argument("select_top_k: energies must be finite");
    if (k < 1 || k > static_cast<i64>(energies.size()))
        throw std::invalid_argument("select_top_k: k=" + std::to_string(k) + " with " +
                                    std::to_string(energies.size()) + " energies");
    std::vector<i64> idx(energies.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](i64 a, i64 b) {
        if (energies[static_cast<size_t>(a)] != energies[static_cast<size_t>(b)])
            return energies[static_cast<size_t>(a)] < energies[static_cast<size_t>(b)];
        return a < b;
    });
    idx.resize(static_cast<size_t>(k));
    return idx;
}

std::vector<double> lambda_choice_probs(const std::vector<double>& lambdas) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double l : lambdas) mx = std::max(mx, -l);
    double z = 0.0;
    std::vector<double> p(lambdas.size());
    for (size_t i = 0; i < lambdas.size(); ++i) {
        p[i] = std::exp(-lambdas[i] - mx);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

i64 sample_categorical(const std::vector<double>& probs, double u) {
    double acc = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<i64>(i);
    }
    return static_cast<i64>(probs.size()) - 1;
}

Plan plan(const PlanRequest& req, const models::PadModels& m, const PlanParams& params) {
    const auto& cfg = m.config();
    const i64 b = params.candidates;
    if (b < 1 || params.top_k < 1 || params.top_k > b)
        throw std::invalid_argument("plan: need 1 <= K <= B");
    if (params.refine_steps < 1) throw std::invalid_argument("plan: need T >= 1");
    if (static_cast<i64>(req.goal.size()) != cfg.state_dim)
        throw std::invalid_argument("plan: goal has wrong dimension");

    // Candidate draws: z0 first, then lambda, one counter stream per slot.
    Tensor z0({cfg.horizon, b, cfg.latent_dim});
    Tensor lambda({b});
    for (i64 c = 0; c < b; ++c) {
        RngStream rng(req.seed, mix_stream({stream_tag::kPlanCandidate,
                                            static_cast<std::uint64_t>(req.slot0 + c)}));
        std::vector<double> buf(static_cast<size_t>(cfg.horizon * cfg.latent_dim));
        rng.fill_normal(buf.data(), static_cast<i64>(buf.size()));
        for (i64 t = 0; t < cfg.horizon; ++t)
            std::memcpy(z0.data() + (t * b + c) * cfg.latent_dim,
                        buf.data() + t * cfg.latent_dim,
                        static_cast<size_t>(cfg.latent_dim) * sizeof(double));
        lambda[c] = rng.uniform();
    }

    NodePtr z_past_one = m.encode_states(constant(padded_past(req.past, cfg.past_len,
                                                              cfg.state_dim)));
    NodePtr z_past = broadcast_to(std::move(z_past_one), {cfg.past_len, b, cfg.latent_dim});
    Tensor goal_b({b, cfg.state_dim});
    for (i64 c = 0; c < b; ++c)
        std::memcpy(goal_b.data() + c * cfg.state_dim, req.goal.data(),
                    static_cast<size_t>(cfg.state_dim) * sizeof(double));
    models::PlanContextBatch ctx{std::move(z_past), constant(std::move(goal_b)),
                                 constant(lambda.clone())};

    models::EnergyFn efn = [&](const NodePtr& z) { return m.energy_sum(z, ctx); };
    models::ProjectFn pfn = [&](const NodePtr& z) { return m.project(z); };
    const models::ProjectFn* proj = params.use_projector ? &pfn : nullptr;

    // Candidates whose latents blow up are excluded and their columns zeroed
    // so the batched evaluation stays finite for the survivors.
    std::vector<char> excluded(static_cast<size_t>(b), 0);
    auto mask_broken = [&](Tensor& latents) {
        const i64 h = latents.extent(0), d = latents.extent(2);
        bool any = false;
        for (i64 c = 0; c < b; ++c) {
            if (excluded[static_cast<size_t>(c)]) continue;
            bool bad = false;
            for (i64 t = 0; t < h && !bad; ++t)
                for (i64 i = 0; i < d; ++i) {
                    double v = latents[(t * b + c) * d + i];
                    if (!std::isfinite(v) || std::fabs(v) > 1e100) {
                        bad = true;
                        break;
                    }
                }
            if (bad) {
                excluded[static_cast<size_t>(c)] = 1;
                any = true;
            }
        }
        if (any)
            for (i64 c = 0; c < b; ++c) {
                if (!excluded[static_cast<size_t>(c)]) continue;
                for (i64 t = 0; t < h; ++t)
                    for (i64 i = 0; i < d; ++i) latents[(t * b + c) * d + i] = 0.0;
            }
        return std::count(excluded.begin(), excluded.end(), 1) == b;
    };

    NodePtr z = leaf(std::move(z0), true);
    for (i64 t = 0; t < params.refine_steps; ++t) {
        NodePtr next = models::refine_step(z, efn, proj, m.eta(), /*differentiable=*/false);
        // Detach between steps: inference never differentiates across them,
        // and dropping the edges lets the previous graph free early.
        Tensor latents = next->value.clone();
        if (mask_broken(latents))
            throw NumericalError("planning failure: every candidate diverged during refinement");
        z = leaf(std::move(latents), true);
    }
    Tensor final_energies = m.energy(z, ctx)->value;  // [B]

    Plan out;
    out.candidates.resize(static_cast<size_t>(b));
    std::vector<double> finite_e;
    std::vector<i64> finite_idx;
    for (i64 c = 0; c < b; ++c) {
        out.candidates[static_cast<size_t>(c)].lambda = lambda[c];
        out.candidates[static_cast<size_t>(c)].energy = final_energies[c];
        if (!excluded[static_cast<size_t>(c)] && std::isfinite(final_energies[c])) {
            finite_e.push_back(final_energies[c]);
            finite_idx.push_back(c);
        }
    }
    if (finite_e.empty())
        throw NumericalError("planning failure: every candidate has non-finite energy");

    const i64 k = std::min<i64>(params.top_k, static_cast<i64>(finite_e.size()));
    std::vector<i64> top = select_top_k(finite_e, k);

    std::vector<double> top_lambdas(top.size());
    for (size_t i = 0; i < top.size(); ++i)
        top_lambdas[i] = lambda[finite_idx[static_cast<size_t>(top[i])]];
    std::vector<double> probs = lambda_choice_probs(top_lambdas);

    RngStream choice(req.seed, mix_stream({stream_tag::kPlanChoice,
                                           static_cast<std::uint64_t>(req.slot0)}));
    const size_t pick = static_cast<size_t>(sample_categorical(probs, choice.uniform()));
    const i64 chosen = finite_idx[static_cast<size_t>(top[pick])];
    out.chosen_index = chosen;
    out.chosen_energy = final_energies[chosen];
    out.chosen_lambda = lambda[chosen];
    out.candidates[static_cast<size_t>(chosen)].chosen = true;

    out.latents = Tensor({cfg.horizon, cfg.latent_dim});
    const Tensor& zl = z->value;
    for (i64 t = 0; t < cfg.horizon; ++t)
        std::memcpy(out.latents.data() + t * cfg.latent_dim,
                    zl.data() + (t * b + chosen) * cfg.latent_dim,
                    static_cast<size_t>(cfg.latent_dim) * sizeof(double));
    return out;
}

std::vector<std::vector<double>> decode_plan_actions(const std::vector<double>& current_state,
                                                     const Plan& p, i64 n,
                                                     const models::PadModels& m) {
    const auto& cfg = m.config();
    if (n < 1 || n > p.latents.extent(0))
        throw std::invalid_argument("decode_plan_actions: need 1 <= N <= horizon");
    NoRecordScope norec;

    Tensor cur({1, cfg.state_dim});
    std::memcpy(cur.data(), current_state.data(),
                static_cast<size_t>(cfg.state_dim) * sizeof(double));
    Tensor z_now = m.encode_state(constant(std::move(cur)))->value;  // [1, d]

    // Stack the N (z_t, z_next) pairs and decode them in one pass.
    Tensor zt({n, cfg.latent_dim}), zn({n, cfg.latent_dim});
    std::memcpy(zt.data(), z_now.data(), static_cast<size_t>(cfg.latent_dim) * sizeof(double));
    for (i64 i = 1; i < n; ++i)
        std::memcpy(zt.data() + i * cfg.latent_dim, p.latents.data() + (i - 1) * cfg.latent_dim,
                    static_cast<size_t>(cfg.latent_dim) * sizeof(double));
    for (i64 i = 0; i < n; ++i)
        std::memcpy(zn.data() + i * cfg.latent_dim, p.latents.data() + i * cfg.latent_dim,
                    static_cast<size_t>(cfg.latent_dim) * sizeof(double));

    Tensor acts = m.decode_action(constant(std::move(zt)), constant(std::move(zn)))->value;
    std::vector<std::vector<double>> out(static_cast<size_t>(n));
    for (i64 i = 0; i < n; ++i) {
        out[static_cast<size_t>(i)].assign(acts.data() + i * cfg.action_dim,
                                           acts.data() + (i + 1) * cfg.action_dim);
    }
    return out;
}

env::PolicyMaker planner_policy(const models::PadModels& m, const PlanParams& params,
                                i64 replan_interval, DiagSink diag) {
    if (replan_interval < 1 || replan_interval > m.config().horizon)
        throw std::invalid_argument("replan interval must be in [1, horizon]");
    return [&m, params, replan_interval, diag](const env::GoalTask& task,
                                               std::uint64_t episode_seed) -> env::Policy {
        auto past = std::make_shared<std::deque<std::vector<double>>>();
        auto replan_idx = std::make_shared<i64>(0);
        return [&m, params, replan_interval, diag, task, episode_seed, past,
                replan_idx](const std::vector<double>& state) -> std::vector<double> {
            past->push_back(state);
            while (static_cast<i64>(past->size()) > m.config().past_len) past->pop_front();

            PlanRequest req;
            req.past.assign(past->begin(), past->end());
            req.goal = task.goal_state;
            req.seed = mix_stream({episode_seed, static_cast<std::uint64_t>(*replan_idx)});
            Plan p = plan(req, m, params);
            if (diag) diag(*replan_idx, p);
            ++*replan_idx;

            auto actions = decode_plan_actions(state, p, replan_interval, m);
            std::vector<double> flat;
            flat.reserve(actions.size() * static_cast<size_t>(m.config().action_dim));
            for (const auto& a : actions) flat.insert(flat.end(), a.begin(), a.end());
            return flat;
        };
    };
}

env::EpisodeOutcome run_episode(const env::Env& e, const env::GoalTask& task,
                                const models::PadModels& m, const PlanParams& params,
                                i64 replan_interval, std::uint64_t seed,
                                const std::string& diag_csv_path) {
    std::ofstream diag_file;
    DiagSink sink = nullptr;
    if (!diag_csv_path.empty()) {
        diag_file.open(diag_csv_path, std::ios::trunc);
        if (!diag_file) throw DataError("cannot open " + diag_csv_path);
        diag_file << "replan_idx,candidate_idx,lambda,energy,chosen\n";
        sink = [&diag_file](i64 replan_idx, const Plan& p) {
            char buf[128];
            for (size_t c = 0; c < p.candidates.size(); ++c) {
                const auto& cand = p.candidates[c];
                std::snprintf(buf, sizeof(buf), "%lld,%zu,%.17g,%.17g,%d\n",
                              static_cast<long long>(replan_idx), c, cand.lambda, cand.energy,
                              cand.chosen ? 1 : 0);
                diag_file << buf;
            }
        };
    }
    env::PolicyMaker maker = planner_policy(m, params, replan_interval, sink);
    return env::run_policy_episode(e, task, maker(task, seed));
}

}  // namespace pad::plan
