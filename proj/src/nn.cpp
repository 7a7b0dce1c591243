#include "pad/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace pad::nn {

using namespace pad::ag;

NodePtr Registry::add(const std::string& name, Tensor init) {
    if (params_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto n = leaf(std::move(init), true);
    params_.emplace(name, n);
    return n;
}

const NodePtr& Registry::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
}

std::vector<NodePtr> Registry::nodes() const {
    std::vector<NodePtr> out;
    out.reserve(params_.size());
    for (const auto& [_, n] : params_) out.push_back(n);
    return out;
}

i64 Registry::total_elements() const {
    i64 n = 0;
    for (const auto& [_, p] : params_) n += p->value.numel();
    return n;
}

std::map<std::string, Tensor> Registry::snapshot() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, p] : params_) out.emplace(name, p->value.clone());
    return out;
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

RngStream init_stream(std::uint64_t seed, const std::string& name) {
    return RngStream(seed, mix_stream({stream_tag::kInit, fnv1a64(name)}));
}

namespace {

Tensor normal_init(Shape shape, double stddev, std::uint64_t seed, const std::string& name) {
    Tensor t(std::move(shape));
    RngStream rng = init_stream(seed, name);
    rng.fill_normal(t.data(), t.numel());
    for (i64 i = 0; i < t.numel(); ++i) t[i] *= stddev;
    return t;
}

}  // namespace

Linear Linear::create(Registry& reg, const std::string& name, i64 in, i64 out,
                      std::uint64_t seed, double weight_mult) {
    Linear l;
    double stddev = weight_mult / std::sqrt(static_cast<double>(in));
    l.w = reg.add(name + ".w", normal_init({in, out}, stddev, seed, name + ".w"));
    l.b = reg.add(name + ".b", Tensor::zeros({out}));
    return l;
}

NodePtr Linear::operator()(const NodePtr& x) const {
    if (x->value.rank() != 2 || x->value.extent(1) != w->value.extent(0))
        throw std::invalid_argument("linear: input " + x->value.shape_str() +
                                    " does not chain with weight " + w->value.shape_str());
    return badd(matmul(x, w), b);
}

Mlp Mlp::create(Registry& reg, const std::string& name, const std::vector<i64>& dims,
                std::uint64_t seed) {
    if (dims.size() < 2) throw std::invalid_argument("mlp needs at least one layer");
    Mlp m;
    for (size_t i = 0; i + 1 < dims.size(); ++i)
        m.layers.push_back(Linear::create(reg, name + ".fc" + std::to_string(i), dims[i],
                                          dims[i + 1], seed));
    return m;
}

NodePtr Mlp::operator()(NodePtr x) const {
    for (size_t i = 0; i < layers.size(); ++i) {
        x = layers[i](x);
        if (i + 1 < layers.size()) x = gelu(std::move(x));
    }
    return x;
}

LayerNormAffine LayerNormAffine::create(Registry& reg, const std::string& name, i64 dim,
                                        double eps) {
    LayerNormAffine ln;
    ln.gamma = reg.add(name + ".gamma", Tensor::full({dim}, 1.0));
    ln.beta = reg.add(name + ".beta", Tensor::zeros({dim}));
    ln.eps = eps;
    return ln;
}

NodePtr LayerNormAffine::operator()(const NodePtr& x) const {
    return badd(bmul(layer_norm(x, eps), gamma), beta);
}

CausalSelfAttention CausalSelfAttention::create(Registry& reg, const std::string& name, i64 dim,
                                                i64 heads, std::uint64_t seed, double out_mult) {
    if (dim % heads != 0)
        throw std::invalid_argument("attention: dim " + std::to_string(dim) +
                                    " not divisible by heads " + std::to_string(heads));
    CausalSelfAttention a;
    a.qkv = Linear::create(reg, name + ".qkv", dim, 3 * dim, seed);
    a.out = Linear::create(reg, name + ".out", dim, dim, seed, out_mult);
    a.heads = heads;
    return a;
}

NodePtr CausalSelfAttention::operator()(const NodePtr& x) const {
    if (x->value.rank() != 3)
        throw std::invalid_argument("attention expects [T,B,C], got " + x->value.shape_str());
    const i64 t = x->value.extent(0), b = x->value.extent(1), c = x->value.extent(2);
    const i64 h = heads, dh = c / h;

    NodePtr qkv_out = qkv(reshape(x, {t * b, c}));  // [T*B, 3C]
    auto split_heads = [&](i64 offset) {
        NodePtr part = slice(qkv_out, 1, offset * c, 1, c);      // [T*B, C]
        part = reshape(std::move(part), {t, b, h, dh});
        part = transpose(std::move(part), {1, 2, 0, 3});         // [B,h,T,dh]
        return reshape(std::move(part), {b * h, t, dh});
    };
    NodePtr q = split_heads(0), k = split_heads(1), v = split_heads(2);

    NodePtr scores = smul(matmul_t(q, k, false, true), 1.0 / std::sqrt(double(dh)));
    Tensor mask({t, t});
    for (i64 i = 0; i < t; ++i)
        for (i64 j = 0; j < t; ++j) mask[i * t + j] = j <= i ? 0.0 : -1e9;
    NodePtr weights = softmax_lastaxis(badd(std::move(scores), constant(std::move(mask))));

    NodePtr ctx = matmul(std::move(weights), v);                 // [B*h,T,dh]
    ctx = reshape(std::move(ctx), {b, h, t, dh});
    ctx = transpose(std::move(ctx), {2, 0, 1, 3});               // [T,B,h,dh]
    ctx = reshape(std::move(ctx), {t * b, c});
    return reshape(out(ctx), {t, b, c});
}

TransformerBlock TransformerBlock::create(Registry& reg, const std::string& name, i64 dim,
                                          i64 heads, i64 mlp_ratio, i64 total_blocks,
                                          double ln_eps, std::uint64_t seed) {
    TransformerBlock blk;
    blk.ln1 = LayerNormAffine::create(reg, name + ".ln1", dim, ln_eps);
    blk.ln2 = LayerNormAffine::create(reg, name + ".ln2", dim, ln_eps);
    double out_mult = 1.0 / std::sqrt(2.0 * static_cast<double>(total_blocks));
    blk.attn = CausalSelfAttention::create(reg, name + ".attn", dim, heads, seed, out_mult);
    blk.fc1 = Linear::create(reg, name + ".mlp.fc0", dim, mlp_ratio * dim, seed);
    blk.fc2 = Linear::create(reg, name + ".mlp.fc1", mlp_ratio * dim, dim, seed, out_mult);
    return blk;
}

NodePtr TransformerBlock::operator()(NodePtr x) const {
    const i64 t = x->value.extent(0), b = x->value.extent(1), c = x->value.extent(2);
    x = add(x, attn(ln1(x)));
    NodePtr hidden = gelu(fc1(reshape(ln2(x), {t * b, c})));
    NodePtr mlp_out = reshape(fc2(std::move(hidden)), {t, b, c});
    return add(std::move(x), std::move(mlp_out));
}

Conv1d Conv1d::create(Registry& reg, const std::string& name, i64 cin, i64 cout, i64 kernel,
                      i64 stride, i64 padding, std::uint64_t seed) {
    Conv1d conv;
    double stddev = 1.0 / std::sqrt(static_cast<double>(kernel * cin));
    conv.w = reg.add(name + ".w", normal_init({kernel * cin, cout}, stddev, seed, name + ".w"));
    conv.b = reg.add(name + ".b", Tensor::zeros({cout}));
    conv.kernel = kernel;
    conv.stride = stride;
    conv.padding = padding;
    return conv;
}

NodePtr Conv1d::operator()(const NodePtr& x) const {
    return conv1d(x, w, b, kernel, stride, padding);
}

namespace {

std::vector<double> log_spaced_omegas(i64 count, double omega_min, double omega_max) {
    std::vector<double> w(static_cast<size_t>(count));
    if (count == 1) {
        w[0] = omega_min;
        return w;
    }
    double l0 = std::log(omega_min), l1 = std::log(omega_max);
    for (i64 i = 0; i < count; ++i)
        w[static_cast<size_t>(i)] =
            std::exp(l0 + (l1 - l0) * static_cast<double>(i) / static_cast<double>(count - 1));
    return w;
}

}  // namespace

Tensor sinusoidal_embed(double lambda, i64 dim, double omega_min, double omega_max) {
    if (dim <= 0 || dim % 2 != 0)
        throw std::invalid_argument("sinusoidal_embed: dim must be positive and even");
    if (lambda < 0.0 || lambda > 1.0)
        throw std::invalid_argument("sinusoidal_embed: lambda must be in [0,1]");
    auto omegas = log_spaced_omegas(dim / 2, omega_min, omega_max);
    Tensor out({dim});
    for (i64 i = 0; i < dim / 2; ++i) {
        out[2 * i] = std::sin(omegas[static_cast<size_t>(i)] * lambda);
        out[2 * i + 1] = std::cos(omegas[static_cast<size_t>(i)] * lambda);
    }
    return out;
}

NodePtr sinusoidal_embed_batch(const NodePtr& lambda, i64 dim, double omega_min,
                               double omega_max) {
    if (dim <= 0 || dim % 2 != 0)
        throw std::invalid_argument("sinusoidal_embed: dim must be positive and even");
    if (lambda->value.rank() != 1)
        throw std::invalid_argument("sinusoidal_embed: lambda batch must be rank 1");
    const i64 b = lambda->value.extent(0), f = dim / 2;
    auto omegas = log_spaced_omegas(f, omega_min, omega_max);
    NodePtr w = constant(Tensor::from({1, f}, std::move(omegas)));
    NodePtr angles = bmul(reshape(lambda, {b, 1}), std::move(w));  // [B, F]
    NodePtr s = reshape(ag::sin(angles), {b, f, 1});
    NodePtr c = reshape(ag::cos(angles), {b, f, 1});
    return reshape(concat({std::move(s), std::move(c)}, 2), {b, dim});
}

double cosine_lr(i64 step, const CosineSchedule& s) {
    // out-of-range steps clamp to the final learning rate
    if (s.total_steps <= 0) return s.lr_end;
    if (step < 0 || step >= s.total_steps) return s.lr_end;
    double frac = static_cast<double>(step) / static_cast<double>(s.total_steps);
    return s.lr_end + 0.5 * (s.lr_start - s.lr_end) * (1.0 + std::cos(M_PI * frac));
}

AdamW::AdamW(const Registry& reg, AdamWConfig cfg) : cfg_(cfg) {
    for (const auto& [name, p] : reg.entries())
        moments_.emplace(name, std::make_pair(Tensor::zeros(p->value.shape()),
                                              Tensor::zeros(p->value.shape())));
}

void AdamW::step(Registry& reg, const ag::GradientMap& grads, double lr, double grad_scale) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (const auto& [name, p] : reg.entries()) {
        const Tensor& g = grads.at(p)->value;
        if (!g.same_shape(p->value))
            throw std::invalid_argument("adamw: gradient shape " + g.shape_str() +
                                        " does not match parameter " + name + " " +
                                        p->value.shape_str());
        auto& [m, v] = moments_.at(name);
        double* pm = m.data();
        double* pv = v.data();
        double* pp = p->value.data();
        const double* pg = g.data();
        const i64 n = g.numel();
        for (i64 i = 0; i < n; ++i) {
            double gi = pg[i] * grad_scale;
            pm[i] = cfg_.beta1 * pm[i] + (1.0 - cfg_.beta1) * gi;
            pv[i] = cfg_.beta2 * pv[i] + (1.0 - cfg_.beta2) * gi * gi;
            double mh = pm[i] / bc1;
            double vh = pv[i] / bc2;
            pp[i] -= lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * pp[i]);
        }
    }
}

double global_grad_norm(const Registry& reg, const ag::GradientMap& grads) {
    double acc = 0.0;
    for (const auto& [name, p] : reg.entries()) {
        const Tensor& g = grads.at(p)->value;
        for (i64 i = 0; i < g.numel(); ++i) acc += g[i] * g[i];
    }
    return std::sqrt(acc);
}

}  // namespace pad::nn
