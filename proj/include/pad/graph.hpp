#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "pad/tensor.hpp"

namespace pad::ag {

using pad::i64;
using pad::Shape;
using pad::Tensor;

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Primitive kinds. Values are computed eagerly at node creation; every
/// kind has a backward rule expressed in terms of other catalog kinds, so
/// gradients returned by `grad` are themselves differentiable (one nesting
/// level of that is exercised throughout training).
///
/// Some catalog surface operations (conv1d, layer-norm, softmax, gelu,
/// mean) expand into compositions of these kinds; see the helpers below.
enum class OpKind : std::uint8_t {
    Leaf,
    Add,        // elementwise, equal shapes
    Sub,        // elementwise, equal shapes
    Mul,        // elementwise, equal shapes
    SMul,       // x * attrs.scalar
    BAdd,       // numpy-style broadcast add
    BMul,       // numpy-style broadcast multiply
    MatMul,     // [M,K]@[K,N] or batched [G,M,K]@[G,K,N]
    Transpose,  // axis permutation (attrs.perm)
    Reshape,    // attrs.shape
    Broadcast,  // replicate to attrs.shape (numpy rules)
    Slice,      // along attrs.axis: start/step/count
    Scatter,    // adjoint of Slice: place into zeros of extent attrs.out_extent
    Concat,     // along attrs.axis
    Sum,        // over attrs.axis keeping it as extent 1, or all axes -> scalar
    RowMax,     // max over last axis, kept as extent 1 (not differentiable;
                //   only ever used under stop-gradient for softmax shifts)
    Tanh,
    Gelu,       // fused tanh-form forward
    GeluGrad,   // d(gelu)/dx, fused
    GeluCurv,   // d2(gelu)/dx2, fused (terminal: produced only in final passes)
    LayerNorm,  // fused zero-mean/unit-variance forward over the last axis
    Exp,
    Sin,
    Cos,
    Sqrt,
    Recip,
    SmoothL1,      // elementwise smooth-L1 of (x - y), transition at delta
    SmoothL1Grad,  // d/dx of SmoothL1
    SmoothL1Curv,  // d/dx of SmoothL1Grad (a.e.)
    StopGrad,
};

const char* op_name(OpKind k);

struct OpAttrs {
    double scalar = 0.0;  // SMul factor, SmoothL1 delta, LayerNorm eps
    int axis = 0;         // Slice/Scatter/Concat/Sum (Sum: -1 means all axes)
    bool trans_a = false;  // MatMul: operand A is stored transposed
    bool trans_b = false;  // MatMul: operand B is stored transposed
    i64 start = 0;
    i64 step = 1;
    i64 count = 0;       // Slice output extent
    i64 out_extent = 0;  // Scatter output extent
    Shape shape;         // Reshape/Broadcast target
    std::vector<int> perm;
};

struct Node {
    Tensor value;
    OpKind kind = OpKind::Leaf;
    OpAttrs attrs;
    std::vector<NodePtr> inputs;
    /// True when a gradient may be requested through this node.
    bool requires_grad = false;
    /// True when the node carries provenance (created while recording).
    bool recorded = false;
};

/// Leaf with requires_grad=false (data, constants).
NodePtr constant(Tensor v);
NodePtr constant_scalar(double v);
/// Leaf variable.
NodePtr leaf(Tensor v, bool requires_grad);

/// Generic entry point: validates shapes, evaluates the forward kernel and
/// returns a new node. Composite catalog kinds are built by the helpers.
NodePtr apply_primitive(OpKind kind, std::vector<NodePtr> operands, OpAttrs attrs = {});

/// While a NoRecordScope is alive, new nodes drop their provenance edges:
/// values are still computed, but nothing created inside can be
/// differentiated later, and the intermediates become collectable.
class NoRecordScope {
public:
    NoRecordScope();
    ~NoRecordScope();
    NoRecordScope(const NoRecordScope&) = delete;
    NoRecordScope& operator=(const NoRecordScope&) = delete;

private:
    bool prev_;
};
bool recording_enabled();

// -- catalog helpers ---------------------------------------------------------
NodePtr add(NodePtr a, NodePtr b);
NodePtr sub(NodePtr a, NodePtr b);
NodePtr mul(NodePtr a, NodePtr b);
NodePtr smul(NodePtr a, double k);
NodePtr badd(NodePtr a, NodePtr b);
NodePtr bmul(NodePtr a, NodePtr b);
NodePtr matmul(NodePtr a, NodePtr b);
/// matmul over operands stored transposed (at most one of the two).
NodePtr matmul_t(NodePtr a, NodePtr b, bool trans_a, bool trans_b);
NodePtr transpose(NodePtr a, std::vector<int> perm);
NodePtr reshape(NodePtr a, Shape shape);
NodePtr broadcast_to(NodePtr a, Shape shape);
NodePtr slice(NodePtr a, int axis, i64 start, i64 step, i64 count);
NodePtr scatter(NodePtr a, int axis, i64 start, i64 step, i64 out_extent);
NodePtr concat(std::vector<NodePtr> parts, int axis);
NodePtr sum_axis(NodePtr a, int axis);  // keeps the axis with extent 1
NodePtr sum_all(NodePtr a);             // scalar
NodePtr rowmax(NodePtr a);
NodePtr tanh(NodePtr a);
NodePtr exp(NodePtr a);
NodePtr sin(NodePtr a);
NodePtr cos(NodePtr a);
NodePtr sqrt(NodePtr a);
NodePtr recip(NodePtr a);
NodePtr smooth_l1(NodePtr x, NodePtr y, double delta);
NodePtr stop_gradient(NodePtr a);

// -- expanding catalog operations -------------------------------------------
NodePtr gelu(NodePtr a);  // tanh form
NodePtr mean_axis(NodePtr a, int axis);
NodePtr mean_all(NodePtr a);
/// Normalizes the last axis to zero mean / unit variance (no affine part).
/// Rejects non-finite outputs.
NodePtr layer_norm(NodePtr a, double eps = 1e-5);
/// Max-shifted softmax over the last axis. Rejects non-finite outputs.
NodePtr softmax_lastaxis(NodePtr a);
/// x: [L, B, C_in]; w: [K*C_in, C_out] (kernel-major rows); bias: [C_out].
/// Zero padding `pad` on both ends of the time axis, stride `stride`.
NodePtr conv1d(NodePtr x, NodePtr w, NodePtr bias, i64 kernel, i64 stride, i64 pad);
/// Reduce-sum `g` to `target` under numpy broadcast rules.
NodePtr reduce_to(NodePtr g, const Shape& target);

/// Gradients keyed by node identity. Only requested nodes appear.
class GradientMap {
public:
    void set(const Node* key, NodePtr g) { grads_[key] = std::move(g); }
    bool contains(const NodePtr& n) const { return grads_.count(n.get()) != 0; }
    const NodePtr& at(const NodePtr& n) const;
    size_t size() const { return grads_.size(); }

private:
    std::unordered_map<const Node*, NodePtr> grads_;
};

/// Reverse-mode gradients of a scalar `output` with respect to `wrt`.
/// Nodes not reachable from `output` receive zeros. With
/// `differentiable=true` the returned gradients stay on the graph and can be
/// differentiated again (exactly one extra level is supported and tested);
/// with `differentiable=false` the pass runs unrecorded.
GradientMap grad(const NodePtr& output, const std::vector<NodePtr>& wrt,
                 bool differentiable);

struct FiniteDiffReport {
    Tensor analytic;
    Tensor numeric;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;  // |a-n| / max(|a|,|n|,1)
};

/// Central-difference check of grad() on a scalar-valued graph function.
FiniteDiffReport finite_difference_check(
    const std::function<NodePtr(const NodePtr&)>& f, const Tensor& x, double step);

}  // namespace pad::ag
