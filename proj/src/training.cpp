#include "pad/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "pad/errors.hpp"

namespace pad::train {

using namespace pad::ag;

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string metrics_header(i64 refine_steps) {
    std::string h = "step,loss";
    for (i64 t = 1; t <= refine_steps; ++t) h += ",loss_t" + std::to_string(t);
    h += ",energy_init,energy_final,eta,lr,ms_per_step";
    return h;
}

std::string metrics_line(const MetricsRow& row) {
    std::string s = std::to_string(row.step) + "," + fmt_double(row.loss);
    for (double l : row.step_losses) s += "," + fmt_double(l);
    s += "," + fmt_double(row.energy_init) + "," + fmt_double(row.energy_final) + "," +
         fmt_double(row.eta) + "," + fmt_double(row.lr) + "," + fmt_double(row.ms_per_step);
    return s;
}

DenoiseResult denoising_refine_loss(NodePtr z0, NodePtr z_clean, const models::EnergyFn& energy,
                                    const models::ProjectFn* projector, const NodePtr& eta,
                                    i64 refine_steps, double delta, bool second_order) {
    DenoiseResult out;
    NodePtr z = std::move(z0);
    for (i64 t = 1; t <= refine_steps; ++t) {
        models::RefineInfo info;
        z = models::refine_step(z, energy, projector, eta, second_order, &info);
        if (t == 1) out.energy_init_sum = info.energy_sum;
        out.energy_final_sum = info.energy_sum;
        NodePtr step_loss = mean_all(smooth_l1(z, z_clean, delta));
        out.step_losses.push_back(step_loss->value.item());
        out.loss = out.loss ? add(out.loss, std::move(step_loss)) : std::move(step_loss);
        if (t < refine_steps) z = stop_gradient(std::move(z));
    }
    return out;
}

namespace {

// Per-sample corruption of the clean latents; columns are samples.
Tensor corrupt_batch(const Tensor& z_clean, const Tensor& beta, const Tensor& eps) {
    const i64 h = z_clean.extent(0), b = z_clean.extent(1), d = z_clean.extent(2);
    Tensor out(z_clean.shape());
    for (i64 slot = 0; slot < b; ++slot) {
        const double bv = beta[slot];
        if (!(bv >= 0.0 && bv <= 1.0))
            throw std::invalid_argument("corrupt: beta outside [0,1]");
        const double sb = std::sqrt(bv), se = std::sqrt(1.0 - bv);
        for (i64 t = 0; t < h; ++t) {
            const i64 off = (t * b + slot) * d;
            if (bv == 1.0)
                std::memcpy(out.data() + off, z_clean.data() + off,
                            static_cast<size_t>(d) * sizeof(double));
            else if (bv == 0.0)
                std::memcpy(out.data() + off, eps.data() + off,
                            static_cast<size_t>(d) * sizeof(double));
            else
                for (i64 i = 0; i < d; ++i)
                    out[off + i] = sb * z_clean[off + i] + se * eps[off + i];
        }
    }
    return out;
}

}  // namespace

MetricsRow train_step(models::PadModels& models, nn::AdamW& opt, const data::Batch& batch,
                      const TrainConfig& cfg, i64 step, bool second_order, StepDebug* dbg) {
    const auto t_start = std::chrono::steady_clock::now();
    const i64 bsz = batch.goal.extent(0);

    NodePtr s_past = constant(batch.s_past);
    NodePtr s_future = constant(batch.s_future);
    NodePtr z_past = models.encode_states(s_past);
    NodePtr z_clean_raw = models.encode_states(s_future);
    NodePtr z_clean = stop_gradient(z_clean_raw);

    NodePtr z0 = constant(corrupt_batch(z_clean->value, batch.beta, batch.eps));

    models::PlanContextBatch ctx{z_past, constant(batch.goal), constant(batch.lambda)};
    models::EnergyFn efn = [&](const NodePtr& z) { return models.energy_sum(z, ctx); };
    models::ProjectFn pfn = [&](const NodePtr& z) { return models.project(z); };

    DenoiseResult dr = denoising_refine_loss(z0, z_clean, efn, cfg.use_projector ? &pfn : nullptr,
                                             models.eta(), models.config().refine_steps,
                                             cfg.loss_delta, second_order);
    if (dbg) {
        dbg->z_clean_pre_stop = z_clean_raw;
        dbg->loss = dr.loss;
    }
    if (!std::isfinite(dr.loss->value.item())) {
        std::string diag = "non-finite loss at step " + std::to_string(step) +
                           " (energy_init_sum=" + std::to_string(dr.energy_init_sum) +
                           ", energy_final_sum=" + std::to_string(dr.energy_final_sum) + ")";
        throw NumericalError(diag);
    }

    nn::Registry& reg = models.planner_params();
    GradientMap grads = grad(dr.loss, reg.nodes(), false);
    const double norm = nn::global_grad_norm(reg, grads);
    if (!std::isfinite(norm))
        throw NumericalError("non-finite gradient norm at step " + std::to_string(step));
    const double scale = (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) ? cfg.grad_clip / norm : 1.0;
    const double lr = nn::cosine_lr(step, cfg.schedule);
    opt.step(reg, grads, lr, scale);
    models.clamp_eta();

    MetricsRow row;
    row.step = step;
    row.loss = dr.loss->value.item();
    row.step_losses = dr.step_losses;
    row.energy_init = dr.energy_init_sum / static_cast<double>(bsz);
    row.energy_final = dr.energy_final_sum / static_cast<double>(bsz);
    row.eta = models.eta()->value.item();
    row.lr = lr;
    row.ms_per_step =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
            .count();
    return row;
}

TrainResult train_loop(models::PadModels& models, nn::AdamW& opt, const data::Dataset& ds,
                       const TrainConfig& cfg, const std::string& run_dir, i64 start_step,
                       const std::string& config_json) {
    const auto& mc = models.config();
    if (ds.state_dim != mc.state_dim)
        throw DataError("dataset state_dim " + std::to_string(ds.state_dim) +
                        " does not match model state_dim " + std::to_string(mc.state_dim));
    auto trainable = data::trainable_indices(ds, mc.past_len, mc.horizon);
    if (trainable.empty())
        throw DataError("dataset has no trajectory of length >= " +
                        std::to_string(mc.past_len + mc.horizon));

    std::filesystem::create_directories(run_dir);
    TrainResult res;
    res.metrics_path = run_dir + "/metrics.csv";
    res.checkpoint_path = run_dir + "/checkpoint.padck";

    std::ofstream metrics;
    if (start_step == 0) {
        metrics.open(res.metrics_path, std::ios::trunc);
        metrics << metrics_header(mc.refine_steps) << "\n";
    } else {
        metrics.open(res.metrics_path, std::ios::app);
    }
    if (!metrics) throw DataError("cannot open " + res.metrics_path);

    for (i64 step = start_step; step < cfg.steps; ++step) {
        data::Batch batch = data::assemble_batch(ds, trainable, mc.past_len, mc.horizon,
                                                 mc.latent_dim, cfg.batch_size, cfg.seed, step);
        MetricsRow row = train_step(models, opt, batch, cfg, step);
        metrics << metrics_line(row) << "\n";
        if ((step + 1) % 50 == 0) metrics.flush();
        if (cfg.checkpoint_every > 0 &&
            ((step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.steps)) {
            Checkpoint ck = make_checkpoint("planner", config_json, models.planner_params(),
                                            opt, step + 1, cfg.seed);
            save_checkpoint(res.checkpoint_path, ck);
        }
        res.final_step = step + 1;
    }
    return res;
}

TrainResult train_invdyn(models::PadModels& models, nn::AdamW& opt, const data::Dataset& ds,
                         const InvdynConfig& cfg, const std::string& run_dir) {
    if (ds.action_dim <= 0) throw DataError("inverse dynamics needs an action-labeled dataset");
    const auto& mc = models.config();
    if (ds.state_dim != mc.state_dim || ds.action_dim != mc.action_dim)
        throw DataError("dataset dims do not match the model configuration");

    std::vector<i64> usable;
    for (size_t i = 0; i < ds.trajectories.size(); ++i)
        if (ds.trajectories[i].length() >= 2) usable.push_back(static_cast<i64>(i));
    if (usable.empty()) throw DataError("no trajectory with a transition");

    std::filesystem::create_directories(run_dir);
    TrainResult res;
    res.metrics_path = run_dir + "/invdyn_metrics.csv";
    res.checkpoint_path = run_dir + "/invdyn.padck";
    std::ofstream metrics(res.metrics_path, std::ios::trunc);
    metrics << "step,loss,lr,ms_per_step\n";

    const i64 sdim = ds.state_dim, adim = ds.action_dim;
    for (i64 step = 0; step < cfg.steps; ++step) {
        const auto t_start = std::chrono::steady_clock::now();
        Tensor s_t({cfg.batch_size, sdim}), s_next({cfg.batch_size, sdim});
        Tensor act({cfg.batch_size, adim});
        for (i64 slot = 0; slot < cfg.batch_size; ++slot) {
            RngStream rng(cfg.seed,
                          mix_stream({stream_tag::kBatch, 0xD1, static_cast<std::uint64_t>(step),
                                      static_cast<std::uint64_t>(slot)}));
            const auto& traj =
                ds.trajectories[static_cast<size_t>(usable[rng.uniform_int(usable.size())])];
            const i64 t = static_cast<i64>(rng.uniform_int(
                static_cast<std::uint64_t>(traj.length() - 1)));
            std::memcpy(s_t.data() + slot * sdim, traj.state(t),
                        static_cast<size_t>(sdim) * sizeof(double));
            std::memcpy(s_next.data() + slot * sdim, traj.state(t + 1),
                        static_cast<size_t>(sdim) * sizeof(double));
            std::memcpy(act.data() + slot * adim, traj.action(t),
                        static_cast<size_t>(adim) * sizeof(double));
        }
        NodePtr z_t = stop_gradient(models.encode_state(constant(std::move(s_t))));
        NodePtr z_next = stop_gradient(models.encode_state(constant(std::move(s_next))));
        NodePtr diff = sub(models.decode_action(z_t, z_next), constant(std::move(act)));
        NodePtr loss = mean_all(mul(diff, diff));
        if (!std::isfinite(loss->value.item()))
            throw NumericalError("non-finite inverse-dynamics loss at step " +
                                 std::to_string(step));
        GradientMap grads = grad(loss, models.invdyn_params().nodes(), false);
        const double lr = nn::cosine_lr(step, cfg.schedule);
        opt.step(models.invdyn_params(), grads, lr);

        MetricsRow row;
        row.step = step;
        row.loss = loss->value.item();
        row.lr = lr;
        row.ms_per_step =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
                .count();
        metrics << row.step << "," << fmt_double(row.loss) << "," << fmt_double(row.lr) << ","
                << fmt_double(row.ms_per_step) << "\n";
        res.final_step = step + 1;
    }
    Checkpoint ck = make_checkpoint("invdyn", "", models.invdyn_params(), opt, cfg.steps,
                                    cfg.seed);
    save_checkpoint(res.checkpoint_path, ck);
    return res;
}

// -- checkpoint io ------------------------------------------------------------

namespace {

constexpr char kCkptMagic[6] = {'P', 'A', 'D', 'C', 'K', '1'};
constexpr std::uint32_t kCkptVersion = 1;

void wr(std::ofstream& f, const void* p, size_t n) {
    f.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void wr_u32(std::ofstream& f, std::uint32_t v) { wr(f, &v, sizeof(v)); }
void wr_u64(std::ofstream& f, std::uint64_t v) { wr(f, &v, sizeof(v)); }

void wr_string(std::ofstream& f, const std::string& s) {
    wr_u64(f, s.size());
    wr(f, s.data(), s.size());
}

void wr_tensor(std::ofstream& f, const Tensor& t) {
    wr_u32(f, static_cast<std::uint32_t>(t.rank()));
    for (i64 e : t.shape()) wr_u64(f, static_cast<std::uint64_t>(e));
    wr(f, t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
}

struct CkReader {
    std::ifstream f;
    std::uint64_t offset = 0;
    explicit CkReader(const std::string& path) : f(path, std::ios::binary) {}
    void read(void* dst, size_t n, const char* what) {
        f.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(f.gcount()) != n)
            throw DataError(std::string("checkpoint truncated while reading ") + what +
                            " at byte offset " + std::to_string(offset));
        offset += n;
    }
    std::uint32_t u32(const char* what) {
        std::uint32_t v;
        read(&v, sizeof(v), what);
        return v;
    }
    std::uint64_t u64(const char* what) {
        std::uint64_t v;
        read(&v, sizeof(v), what);
        return v;
    }
    std::string str(const char* what) {
        std::uint64_t n = u64(what);
        if (n > (1ull << 32)) throw DataError("implausible string length in checkpoint");
        std::string s(n, '\0');
        read(s.data(), n, what);
        return s;
    }
    Tensor tensor(const char* what) {
        std::uint32_t rank = u32(what);
        if (rank > 8) throw DataError("implausible tensor rank in checkpoint");
        Shape shape(rank);
        for (auto& e : shape) e = static_cast<i64>(u64(what));
        Tensor t(shape);
        read(t.data(), static_cast<size_t>(t.numel()) * sizeof(double), what);
        return t;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + path + " for writing");
    wr(f, kCkptMagic, sizeof(kCkptMagic));
    wr_u32(f, kCkptVersion);
    wr_string(f, ckpt.kind);
    wr_string(f, ckpt.config_json);
    wr_u64(f, static_cast<std::uint64_t>(ckpt.train_step));
    wr_u64(f, ckpt.seed);
    wr_u32(f, static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& [name, t] : ckpt.params) {
        wr_string(f, name);
        wr_tensor(f, t);
    }
    wr_u64(f, static_cast<std::uint64_t>(ckpt.adam_step));
    wr_u32(f, static_cast<std::uint32_t>(ckpt.moments.size()));
    for (const auto& [name, mv] : ckpt.moments) {
        wr_string(f, name);
        wr_tensor(f, mv.first);
        wr_tensor(f, mv.second);
    }
    if (!f) throw DataError("write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    CkReader r(path);
    if (!r.f) throw DataError("cannot open " + path);
    char magic[6];
    r.read(magic, sizeof(magic), "magic");
    if (std::memcmp(magic, kCkptMagic, sizeof(kCkptMagic)) != 0)
        throw DataError("bad checkpoint magic in " + path);
    if (r.u32("version") != kCkptVersion) throw DataError("unsupported checkpoint version");
    Checkpoint ck;
    ck.kind = r.str("kind");
    ck.config_json = r.str("config");
    ck.train_step = static_cast<i64>(r.u64("train_step"));
    ck.seed = r.u64("seed");
    const std::uint32_t n_params = r.u32("param count");
    for (std::uint32_t i = 0; i < n_params; ++i) {
        std::string name = r.str("param name");
        ck.params.emplace(std::move(name), r.tensor("param tensor"));
    }
    ck.adam_step = static_cast<i64>(r.u64("adam_step"));
    const std::uint32_t n_moments = r.u32("moment count");
    for (std::uint32_t i = 0; i < n_moments; ++i) {
        std::string name = r.str("moment name");
        Tensor m = r.tensor("moment m");
        Tensor v = r.tensor("moment v");
        ck.moments.emplace(std::move(name), std::make_pair(std::move(m), std::move(v)));
    }
    // Reject trailing garbage so tampering is detectable.
    char probe;
    r.f.read(&probe, 1);
    if (r.f.gcount() != 0) throw DataError("trailing bytes after checkpoint payload in " + path);
    return ck;
}

Checkpoint make_checkpoint(const std::string& kind, const std::string& config_json,
                           const nn::Registry& reg, const nn::AdamW& opt, i64 train_step,
                           std::uint64_t seed) {
    Checkpoint ck;
    ck.kind = kind;
    ck.config_json = config_json;
    ck.params = reg.snapshot();
    ck.adam_step = opt.step_count();
    for (const auto& [name, mv] : opt.moments())
        ck.moments.emplace(name, std::make_pair(mv.first.clone(), mv.second.clone()));
    ck.train_step = train_step;
    ck.seed = seed;
    return ck;
}

void restore_checkpoint(const Checkpoint& ckpt, nn::Registry& reg, nn::AdamW* opt,
                        const std::string& expected_config_json) {
    if (!expected_config_json.empty() && !ckpt.config_json.empty() &&
        ckpt.config_json != expected_config_json)
        throw DataError("checkpoint config mismatch.\n-- checkpoint:\n" + ckpt.config_json +
                        "\n-- expected:\n" + expected_config_json);
    if (ckpt.params.size() != reg.entries().size())
        throw DataError("checkpoint has " + std::to_string(ckpt.params.size()) +
                        " parameters, registry expects " + std::to_string(reg.entries().size()));
    for (const auto& [name, t] : ckpt.params) {
        const auto& node = reg.at(name);
        if (!node->value.same_shape(t))
            throw DataError("checkpoint parameter " + name + " has shape " + t.shape_str() +
                            ", expected " + node->value.shape_str());
        node->value = t.clone();
    }
    if (opt) {
        opt->set_step_count(ckpt.adam_step);
        for (const auto& [name, mv] : ckpt.moments) {
            auto it = opt->moments().find(name);
            if (it == opt->moments().end())
                throw DataError("checkpoint moment for unknown parameter " + name);
            it->second.first = mv.first.clone();
            it->second.second = mv.second.clone();
        }
    }
}

}  // namespace pad::train
