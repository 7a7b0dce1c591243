#include "pad/models.hpp"

#include <cmath>
#include <stdexcept>

#include "pad/errors.hpp"

namespace pad::models {

using namespace pad::ag;

void PadConfig::validate() const {
    if (latent_dim <= 0) throw DataError("latent_dim must be positive");
    if (past_len < 1) throw DataError("past_len must be >= 1");
    if (horizon < 1 || horizon % 4 != 0)
        throw DataError("horizon must be positive and divisible by 4, got " +
                        std::to_string(horizon));
    if (refine_steps < 1) throw DataError("refine_steps must be >= 1");
    if (width != conv_ch2)
        throw DataError("transformer width must equal the second conv channel count");
    if (width % heads != 0) throw DataError("width must be divisible by heads");
    if (lambda_dim <= 0 || lambda_dim % 2 != 0) throw DataError("lambda_dim must be even");
    if (state_dim <= 0 || action_dim < 0) throw DataError("bad state/action dims");
}

i64 PadConfig::token_count() const {
    i64 len = past_len + horizon;
    i64 l1 = (len + 2 - 3) / 2 + 1;
    i64 l2 = (l1 + 2 - 3) / 2 + 1;
    return l2 + 2;
}

PadModels PadModels::create(const PadConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    PadModels m;
    m.cfg_ = cfg;
    auto& reg = m.planner_;
    m.encoder_ = nn::Mlp::create(reg, "encoder", {cfg.state_dim, cfg.enc_hidden, cfg.latent_dim},
                                 seed);
    m.conv1_ = nn::Conv1d::create(reg, "energy.conv0", cfg.latent_dim, cfg.conv_ch1, 3, 2, 1, seed);
    m.conv2_ = nn::Conv1d::create(reg, "energy.conv1", cfg.conv_ch1, cfg.conv_ch2, 3, 2, 1, seed);
    m.goal_mlp_ = nn::Mlp::create(reg, "energy.goal_token",
                                  {cfg.state_dim, cfg.width, cfg.width, cfg.width}, seed);
    m.lambda_mlp_ = nn::Mlp::create(reg, "energy.lambda_token",
                                    {cfg.lambda_dim, cfg.width, cfg.width, cfg.width}, seed);
    {
        Tensor pe({cfg.token_count(), 1, cfg.width});
        RngStream rng = nn::init_stream(seed, "energy.pos_embed");
        rng.fill_normal(pe.data(), pe.numel());
        for (i64 i = 0; i < pe.numel(); ++i) pe[i] *= 0.02;
        m.pos_embed_ = reg.add("energy.pos_embed", std::move(pe));
    }
    for (i64 b = 0; b < cfg.blocks; ++b)
        m.blocks_.push_back(nn::TransformerBlock::create(reg,
                                                         "energy.block" + std::to_string(b),
                                                         cfg.width, cfg.heads, cfg.mlp_ratio,
                                                         cfg.blocks, cfg.ln_eps, seed));
    m.final_ln_ = nn::LayerNormAffine::create(reg, "energy.final_ln", cfg.width, cfg.ln_eps);
    m.readout_ = nn::Linear::create(reg, "energy.readout", cfg.width, 1, seed);
    m.projector_ = nn::Mlp::create(reg, "projector",
                                   {cfg.latent_dim, cfg.proj_hidden, cfg.latent_dim}, seed);
    m.eta_ = reg.add("eta", Tensor::scalar(cfg.eta_init));
    m.invdyn_ = nn::Mlp::create(m.invdyn_reg_, "invdyn",
                                {2 * cfg.latent_dim, cfg.invdyn_hidden, cfg.invdyn_hidden,
                                 cfg.action_dim},
                                seed);
    return m;
}

NodePtr PadModels::encode_states(const NodePtr& states) const {
    if (states->value.rank() != 3 || states->value.extent(2) != cfg_.state_dim)
        throw std::invalid_argument("encode_states expects [T,B," +
                                    std::to_string(cfg_.state_dim) + "], got " +
                                    states->value.shape_str());
    const i64 t = states->value.extent(0), b = states->value.extent(1);
    NodePtr flat = reshape(states, {t * b, cfg_.state_dim});
    NodePtr z = layer_norm(encoder_(std::move(flat)), cfg_.ln_eps);
    return reshape(std::move(z), {t, b, cfg_.latent_dim});
}

NodePtr PadModels::encode_state(const NodePtr& state) const {
    if (state->value.rank() != 2 || state->value.extent(1) != cfg_.state_dim)
        throw std::invalid_argument("encode_state expects [B," + std::to_string(cfg_.state_dim) +
                                    "], got " + state->value.shape_str());
    return layer_norm(encoder_(state), cfg_.ln_eps);
}

NodePtr PadModels::energy(const NodePtr& z_future, const PlanContextBatch& ctx) const {
    if (z_future->value.rank() != 3 || z_future->value.extent(0) != cfg_.horizon ||
        z_future->value.extent(2) != cfg_.latent_dim)
        throw std::invalid_argument("energy expects z_future [" + std::to_string(cfg_.horizon) +
                                    ",B," + std::to_string(cfg_.latent_dim) + "], got " +
                                    z_future->value.shape_str());
    if (ctx.z_past->value.rank() != 3 || ctx.z_past->value.extent(0) != cfg_.past_len)
        throw std::invalid_argument("energy expects z_past [" + std::to_string(cfg_.past_len) +
                                    ",B,d], got " + ctx.z_past->value.shape_str());
    const i64 b = z_future->value.extent(1);

    NodePtr seq = concat({ctx.z_past, z_future}, 0);  // [P+H, B, d]
    NodePtr tokens = gelu(conv2_(gelu(conv1_(std::move(seq)))));

    NodePtr goal_tok = reshape(goal_mlp_(ctx.goal), {1, b, cfg_.width});
    NodePtr lam_embed = nn::sinusoidal_embed_batch(ctx.lambda, cfg_.lambda_dim);
    NodePtr lam_tok = reshape(lambda_mlp_(std::move(lam_embed)), {1, b, cfg_.width});

    NodePtr x = concat({std::move(tokens), std::move(goal_tok), std::move(lam_tok)}, 0);
    x = badd(std::move(x), pos_embed_);
    for (const auto& blk : blocks_) x = blk(x);
    x = final_ln_(std::move(x));

    const i64 n_tok = cfg_.token_count();
    NodePtr last = reshape(slice(std::move(x), 0, n_tok - 1, 1, 1), {b, cfg_.width});
    return reshape(readout_(std::move(last)), {b});
}

NodePtr PadModels::energy_sum(const NodePtr& z_future, const PlanContextBatch& ctx) const {
    return sum_all(energy(z_future, ctx));
}

NodePtr PadModels::project(const NodePtr& z) const {
    if (z->value.rank() != 3 || z->value.extent(2) != cfg_.latent_dim)
        throw std::invalid_argument("project expects [*,B,d], got " + z->value.shape_str());
    const i64 t = z->value.extent(0), b = z->value.extent(1);
    NodePtr flat = reshape(z, {t * b, cfg_.latent_dim});
    return reshape(projector_(std::move(flat)), {t, b, cfg_.latent_dim});
}

NodePtr PadModels::decode_action(const NodePtr& z_t, const NodePtr& z_next) const {
    if (!z_t->value.same_shape(z_next->value) || z_t->value.rank() != 2)
        throw std::invalid_argument("decode_action expects matching [B,d] pairs, got " +
                                    z_t->value.shape_str() + " and " +
                                    z_next->value.shape_str());
    return invdyn_(concat({z_t, z_next}, 1));
}

void PadModels::clamp_eta() {
    double& v = eta_->value.data()[0];
    if (v < 0.0) v = 0.0;
}

NodePtr refine_step(const NodePtr& z, const EnergyFn& energy_sum, const ProjectFn* projector,
                    const NodePtr& eta, bool differentiable, RefineInfo* info) {
    NodePtr e = energy_sum(z);
    if (e->value.numel() != 1)
        throw std::invalid_argument("refine_step: energy must be scalar, got " +
                                    e->value.shape_str());
    if (!std::isfinite(e->value.item()))
        throw NumericalError("refine_step: non-finite energy " + std::to_string(e->value.item()));
    GradientMap gm = grad(e, {z}, differentiable);
    NodePtr gz = gm.at(z);
    double norm_sq = 0.0;
    {
        const Tensor& g = gz->value;
        for (i64 i = 0; i < g.numel(); ++i) norm_sq += g[i] * g[i];
    }
    if (!std::isfinite(norm_sq))
        throw NumericalError("refine_step: non-finite gradient (energy=" +
                             std::to_string(e->value.item()) + ", grad_norm=" +
                             std::to_string(std::sqrt(norm_sq)) + ")");
    if (info) {
        info->energy_sum = e->value.item();
        info->grad_norm = std::sqrt(norm_sq);
    }
    NodePtr raw = sub(z, bmul(std::move(gz), eta));
    return projector ? (*projector)(raw) : raw;
}

}  // namespace pad::models
