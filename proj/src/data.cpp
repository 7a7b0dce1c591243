#include "pad/data.hpp"

#include <cfenv>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "pad/errors.hpp"

namespace pad::data {

namespace {

constexpr char kMagic[6] = {'P', 'A', 'D', 'D', 'S', '1'};

i64 round_half_even(double x) { return static_cast<i64>(std::nearbyint(x)); }

}  // namespace

void Trajectory::validate() const {
    if (state_dim <= 0) throw DataError("trajectory state_dim must be positive");
    if (states.size() % static_cast<size_t>(state_dim) != 0)
        throw DataError("trajectory state buffer not a multiple of state_dim");
    i64 len = length();
    if (len < 1) throw DataError("trajectory must contain at least one state");
    if (action_dim > 0) {
        if (actions.size() != static_cast<size_t>((len - 1) * action_dim))
            throw DataError("action count " + std::to_string(actions.size()) +
                            " not aligned to transitions of a length-" + std::to_string(len) +
                            " trajectory");
    } else if (!actions.empty()) {
        throw DataError("actions present but action_dim is 0");
    }
    for (double v : states)
        if (!std::isfinite(v)) throw DataError("non-finite state value in trajectory");
    for (double v : actions)
        if (!std::isfinite(v)) throw DataError("non-finite action value in trajectory");
}

double arccos_transform(double u) { return std::sin(M_PI * u / 2.0); }

double arccos_cdf(double r) { return 2.0 / M_PI * std::asin(r); }

double sample_arccos(RngStream& rng) { return arccos_transform(rng.uniform()); }

i64 arccos_to_past_len(double r, i64 p_max) {
    i64 p = 1 + round_half_even(r * static_cast<double>(p_max - 1));
    if (p < 1) p = 1;
    if (p > p_max) p = p_max;
    return p;
}

i64 lambda_to_goal_offset(double lambda, i64 p_max, i64 horizon) {
    i64 g_min = std::min(p_max, horizon - 1);
    i64 g = g_min + round_half_even(lambda * static_cast<double>(horizon - g_min));
    if (g < g_min) g = g_min;
    if (g > horizon) g = horizon;
    return g;
}

HindsightSample hindsight_sample(const Trajectory& traj, i64 p_max, i64 horizon,
                                 RngStream& rng) {
    const i64 len = traj.length();
    if (len < p_max + horizon)
        throw DataError("trajectory of length " + std::to_string(len) +
                        " too short for past " + std::to_string(p_max) + " + horizon " +
                        std::to_string(horizon));
    const i64 s = traj.state_dim;

    const double r = sample_arccos(rng);
    const i64 p_past = arccos_to_past_len(r, p_max);
    const i64 t0 = static_cast<i64>(rng.uniform_int(
        static_cast<std::uint64_t>(len - horizon - p_past + 1)));
    const double lambda = rng.uniform();
    const i64 goal_offset = lambda_to_goal_offset(lambda, p_max, horizon);

    HindsightSample out;
    out.lambda = lambda;
    out.p_past = p_past;
    out.goal_offset = goal_offset;
    out.window_start = t0;
    out.s_past = Tensor({p_max, s});
    out.s_future = Tensor({horizon, s});
    out.goal = Tensor({s});

    // Left replicate padding: slots before the real window repeat the
    // earliest real state.
    for (i64 i = 0; i < p_max; ++i) {
        i64 src = i < p_max - p_past ? t0 : t0 + (i - (p_max - p_past));
        std::memcpy(out.s_past.data() + i * s, traj.state(src),
                    static_cast<size_t>(s) * sizeof(double));
    }
    const i64 fut0 = t0 + p_past;
    std::memcpy(out.s_future.data(), traj.state(fut0),
                static_cast<size_t>(horizon * s) * sizeof(double));
    std::memcpy(out.goal.data(), traj.state(fut0 + goal_offset - 1),
                static_cast<size_t>(s) * sizeof(double));
    return out;
}

Tensor corrupt(const Tensor& z_clean, double beta, const Tensor& eps) {
    if (!(beta >= 0.0 && beta <= 1.0))
        throw std::invalid_argument("corrupt: beta " + std::to_string(beta) +
                                    " outside [0,1]");
    if (!z_clean.same_shape(eps))
        throw std::invalid_argument("corrupt: shape mismatch " + z_clean.shape_str() + " vs " +
                                    eps.shape_str());
    if (beta == 1.0) return z_clean.clone();
    if (beta == 0.0) return eps.clone();
    const double sb = std::sqrt(beta), se = std::sqrt(1.0 - beta);
    Tensor out(z_clean.shape());
    for (i64 i = 0; i < out.numel(); ++i) out[i] = sb * z_clean[i] + se * eps[i];
    return out;
}

namespace {

void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_doubles(std::ofstream& f, const double* p, size_t n) {
    f.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

struct Reader {
    std::ifstream f;
    std::uint64_t offset = 0;

    explicit Reader(const std::string& path) : f(path, std::ios::binary) {}

    void read(void* dst, size_t n, const char* what) {
        f.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(f.gcount()) != n)
            throw DataError(std::string("dataset truncated while reading ") + what +
                            " at byte offset " + std::to_string(offset));
        offset += n;
    }
    std::uint32_t u32(const char* what) {
        std::uint32_t v;
        read(&v, sizeof(v), what);
        return v;
    }
};

}  // namespace

std::string meta_path_for(const std::string& path) {
    std::filesystem::path p(path);
    p.replace_extension(".meta.json");
    return p.string();
}

void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + path + " for writing");
    f.write(kMagic, sizeof(kMagic));
    write_u32(f, static_cast<std::uint32_t>(ds.state_dim));
    write_u32(f, static_cast<std::uint32_t>(ds.action_dim));
    write_u32(f, static_cast<std::uint32_t>(ds.trajectories.size()));
    for (const auto& t : ds.trajectories) {
        if (t.state_dim != ds.state_dim || t.action_dim != ds.action_dim)
            throw DataError("trajectory dims disagree with dataset header");
        write_u32(f, static_cast<std::uint32_t>(t.length()));
        write_doubles(f, t.states.data(), t.states.size());
        if (ds.action_dim > 0) write_doubles(f, t.actions.data(), t.actions.size());
    }
    if (!f) throw DataError("write failure on " + path);
    f.close();

    nlohmann::json meta{{"env", ds.meta.env_name},
                        {"generator", ds.meta.generator_kind},
                        {"seed", ds.meta.seed}};
    std::ofstream mf(meta_path_for(path), std::ios::trunc);
    if (!mf) throw DataError("cannot open " + meta_path_for(path) + " for writing");
    mf << meta.dump(2) << "\n";
}

Dataset load_dataset(const std::string& path) {
    Reader r(path);
    if (!r.f) throw DataError("cannot open " + path);
    char magic[6];
    r.read(magic, sizeof(magic), "magic");
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("bad magic in " + path + " at byte offset 0");
    Dataset ds;
    ds.state_dim = r.u32("state_dim");
    ds.action_dim = r.u32("action_dim");
    if (ds.state_dim <= 0) throw DataError("dataset state_dim must be positive");
    const std::uint32_t count = r.u32("trajectory count");
    ds.trajectories.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Trajectory t;
        t.state_dim = ds.state_dim;
        t.action_dim = ds.action_dim;
        const std::uint32_t len = r.u32("trajectory length");
        if (len == 0) throw DataError("zero-length trajectory at byte offset " +
                                      std::to_string(r.offset));
        t.states.resize(static_cast<size_t>(len) * ds.state_dim);
        r.read(t.states.data(), t.states.size() * sizeof(double), "states");
        if (ds.action_dim > 0) {
            t.actions.resize(static_cast<size_t>(len - 1) * ds.action_dim);
            r.read(t.actions.data(), t.actions.size() * sizeof(double), "actions");
        }
        t.validate();
        ds.trajectories.push_back(std::move(t));
    }

    std::ifstream mf(meta_path_for(path));
    if (mf) {
        try {
            nlohmann::json meta = nlohmann::json::parse(mf);
            ds.meta.env_name = meta.value("env", "");
            ds.meta.generator_kind = meta.value("generator", "");
            ds.meta.seed = meta.value("seed", std::uint64_t{0});
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed sidecar " + meta_path_for(path) + ": " + e.what());
        }
    }
    return ds;
}

std::vector<i64> trainable_indices(const Dataset& ds, i64 p_max, i64 horizon) {
    std::vector<i64> out;
    for (size_t i = 0; i < ds.trajectories.size(); ++i)
        if (ds.trajectories[i].length() >= p_max + horizon) out.push_back(static_cast<i64>(i));
    return out;
}

Batch assemble_batch(const Dataset& ds, const std::vector<i64>& trainable, i64 p_max,
                     i64 horizon, i64 latent_dim, i64 batch_size, std::uint64_t seed,
                     i64 step) {
    if (trainable.empty()) throw DataError("no trainable trajectory in dataset");
    const i64 s = ds.state_dim;
    Batch b;
    b.s_past = Tensor({p_max, batch_size, s});
    b.s_future = Tensor({horizon, batch_size, s});
    b.goal = Tensor({batch_size, s});
    b.lambda = Tensor({batch_size});
    b.beta = Tensor({batch_size});
    b.eps = Tensor({horizon, batch_size, latent_dim});

    for (i64 slot = 0; slot < batch_size; ++slot) {
        RngStream pick(seed, mix_stream({stream_tag::kBatch, static_cast<std::uint64_t>(step),
                                         static_cast<std::uint64_t>(slot)}));
        const i64 ti = trainable[pick.uniform_int(trainable.size())];
        RngStream hs(seed, mix_stream({stream_tag::kHindsight, static_cast<std::uint64_t>(step),
                                       static_cast<std::uint64_t>(slot)}));
        HindsightSample sample = hindsight_sample(ds.trajectories[static_cast<size_t>(ti)],
                                                  p_max, horizon, hs);
        for (i64 t = 0; t < p_max; ++t)
            std::memcpy(b.s_past.data() + (t * batch_size + slot) * s,
                        sample.s_past.data() + t * s, static_cast<size_t>(s) * sizeof(double));
        for (i64 t = 0; t < horizon; ++t)
            std::memcpy(b.s_future.data() + (t * batch_size + slot) * s,
                        sample.s_future.data() + t * s, static_cast<size_t>(s) * sizeof(double));
        std::memcpy(b.goal.data() + slot * s, sample.goal.data(),
                    static_cast<size_t>(s) * sizeof(double));
        b.lambda[slot] = sample.lambda;

        RngStream cr(seed, mix_stream({stream_tag::kCorruption, static_cast<std::uint64_t>(step),
                                       static_cast<std::uint64_t>(slot)}));
        b.beta[slot] = cr.uniform();
        for (i64 t = 0; t < horizon; ++t)
            cr.fill_normal(b.eps.data() + (t * batch_size + slot) * latent_dim, latent_dim);
    }
    return b;
}

}  // namespace pad::data
