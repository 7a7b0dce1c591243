#pragma once

#include <map>
#include <string>
#include <vector>

#include "pad/graph.hpp"
#include "pad/rng.hpp"

namespace pad::nn {

using ag::NodePtr;
using pad::i64;
using pad::Tensor;

/// Named parameter store. Iteration order is the sorted name order, which
/// fixes serialization layout and reduction order everywhere.
class Registry {
public:
    NodePtr add(const std::string& name, Tensor init);
    const NodePtr& at(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    const std::map<std::string, NodePtr>& entries() const { return params_; }
    std::vector<NodePtr> nodes() const;
    i64 total_elements() const;
    /// Deep copy of all parameter values (for bit-identity assertions).
    std::map<std::string, Tensor> snapshot() const;

private:
    std::map<std::string, NodePtr> params_;
};

/// Per-parameter init stream so initialization is independent of creation order.
RngStream init_stream(std::uint64_t seed, const std::string& param_name);

std::uint64_t fnv1a64(std::string_view s);

struct Linear {
    NodePtr w;  // [in, out]
    NodePtr b;  // [out]
    static Linear create(Registry& reg, const std::string& name, i64 in, i64 out,
                         std::uint64_t seed, double weight_mult = 1.0);
    /// x: [M, in] -> [M, out]
    NodePtr operator()(const NodePtr& x) const;
};

/// Affine stack with GELU between layers and no activation after the last one.
struct Mlp {
    std::vector<Linear> layers;
    static Mlp create(Registry& reg, const std::string& name, const std::vector<i64>& dims,
                      std::uint64_t seed);
    NodePtr operator()(NodePtr x) const;  // x: [M, dims.front()]
};

/// LayerNorm with learnable scale/shift over the last axis.
struct LayerNormAffine {
    NodePtr gamma, beta;
    double eps = 1e-5;
    static LayerNormAffine create(Registry& reg, const std::string& name, i64 dim, double eps);
    NodePtr operator()(const NodePtr& x) const;
};

/// Causal multi-head self-attention over [T, B, C].
struct CausalSelfAttention {
    Linear qkv;  // [C, 3C]
    Linear out;  // [C, C]
    i64 heads = 1;
    static CausalSelfAttention create(Registry& reg, const std::string& name, i64 dim, i64 heads,
                                      std::uint64_t seed, double out_mult);
    NodePtr operator()(const NodePtr& x) const;
};

/// Pre-norm transformer block: x + attn(ln1(x)); x + mlp(ln2(x)).
struct TransformerBlock {
    LayerNormAffine ln1, ln2;
    CausalSelfAttention attn;
    Linear fc1, fc2;
    static TransformerBlock create(Registry& reg, const std::string& name, i64 dim, i64 heads,
                                   i64 mlp_ratio, i64 total_blocks, double ln_eps,
                                   std::uint64_t seed);
    NodePtr operator()(NodePtr x) const;
};

struct Conv1d {
    NodePtr w;  // [K*Cin, Cout], kernel-major rows
    NodePtr b;  // [Cout]
    i64 kernel = 3, stride = 2, padding = 1;
    static Conv1d create(Registry& reg, const std::string& name, i64 cin, i64 cout, i64 kernel,
                         i64 stride, i64 padding, std::uint64_t seed);
    NodePtr operator()(const NodePtr& x) const;  // [L,B,Cin] -> [Lout,B,Cout]
};

/// Interleaved (sin, cos) pairs at log-spaced frequencies omega in
/// [omega_min, omega_max]; dim must be even, lambda in [0,1].
Tensor sinusoidal_embed(double lambda, i64 dim, double omega_min = 1.0,
                        double omega_max = 1000.0);
/// Batched graph version: lambda [B] -> [B, dim].
NodePtr sinusoidal_embed_batch(const NodePtr& lambda, i64 dim, double omega_min = 1.0,
                               double omega_max = 1000.0);

struct CosineSchedule {
    double lr_start = 3e-4;
    double lr_end = 3e-5;
    i64 total_steps = 1;
};

/// lr_end + (lr_start - lr_end) * (1 + cos(pi * step / total)) / 2,
/// clamped to lr_end past the end of the schedule.
double cosine_lr(i64 step, const CosineSchedule& s);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

class AdamW {
public:
    AdamW(const Registry& reg, AdamWConfig cfg);

    /// One update over every parameter in the registry. `grads` must contain
    /// an entry for each parameter; `grad_scale` pre-multiplies gradients
    /// (used for global-norm clipping).
    void step(Registry& reg, const ag::GradientMap& grads, double lr, double grad_scale = 1.0);

    i64 step_count() const { return step_count_; }
    const AdamWConfig& config() const { return cfg_; }

    // Checkpoint access.
    std::map<std::string, std::pair<Tensor, Tensor>>& moments() { return moments_; }
    const std::map<std::string, std::pair<Tensor, Tensor>>& moments() const { return moments_; }
    void set_step_count(i64 n) { step_count_ = n; }

private:
    AdamWConfig cfg_;
    i64 step_count_ = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> moments_;  // name -> (m, v)
};

/// Global L2 norm over a gradient map in registry order.
double global_grad_norm(const Registry& reg, const ag::GradientMap& grads);

}  // namespace pad::nn
