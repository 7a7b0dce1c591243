#include "pad/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>

#include "pad/errors.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>

namespace pad::ag {

namespace {

thread_local bool g_recording = true;

// Per-kind evaluation stats, enabled with PAD_OP_STATS=1 (diagnostics only).
struct OpStats {
    bool enabled = std::getenv("PAD_OP_STATS") != nullptr;
    double ns[64] = {};
    long count[64] = {};
    ~OpStats() {
        if (!enabled) return;
        std::fprintf(stderr, "-- op stats --\n");
        for (int i = 0; i < 64; ++i)
            if (count[i])
                std::fprintf(stderr, "%-16s %10ld calls %10.1f ms\n",
                             op_name(static_cast<OpKind>(i)), count[i], ns[i] / 1e6);
    }
};
OpStats g_op_stats;

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
    throw std::invalid_argument(op + ": " + detail);
}

void require(bool ok, const std::string& op, const std::string& detail) {
    if (!ok) shape_error(op, detail);
}

// Row-major strides.
std::vector<i64> strides_of(const Shape& s) {
    std::vector<i64> st(s.size());
    i64 acc = 1;
    for (size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

Shape broadcast_shape(const std::string& op, const Shape& a, const Shape& b) {
    size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        i64 ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
        i64 eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            shape_error(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(ea, eb);
    }
    return out;
}

// Strides of `in` viewed in the coordinate system of `out` (0 on broadcast axes).
std::vector<i64> bcast_strides(const Shape& in, const Shape& out) {
    std::vector<i64> st(out.size(), 0);
    auto in_st = strides_of(in);
    size_t off = out.size() - in.size();
    for (size_t i = 0; i < in.size(); ++i)
        st[off + i] = in[i] == 1 ? 0 : in_st[i];
    return st;
}

template <typename F>
void bcast_binary_kernel(const Tensor& a, const Tensor& b, Tensor& out, F&& f) {
    const i64 n = out.numel();
    if (n == 0) return;
    const size_t r = out.shape().size();
    if (r == 0) {
        out[0] = f(a[0], b[0]);
        return;
    }
    auto sa = bcast_strides(a.shape(), out.shape());
    auto sb = bcast_strides(b.shape(), out.shape());
    const i64 inner = out.shape()[r - 1];
    const i64 ia = sa[r - 1], ib = sb[r - 1];
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();

    // Fast path: a has the output shape and b's shape equals a trailing
    // suffix of it, so b cycles over contiguous blocks.
    if (a.same_shape(out) && b.shape().size() < r && b.numel() > 0) {
        size_t off = r - b.shape().size();
        bool suffix = true;
        for (size_t i = 0; i < b.shape().size(); ++i)
            if (b.shape()[i] != out.shape()[off + i]) suffix = false;
        if (suffix) {
            i64 bn = b.numel();
#pragma omp parallel for schedule(static) if (n >= 32768)
            for (i64 i0 = 0; i0 < n; i0 += bn)
                for (i64 t = 0; t < bn; ++t) po[i0 + t] = f(pa[i0 + t], pb[t]);
            return;
        }
    }

    std::vector<i64> idx(r, 0);
    i64 offa = 0, offb = 0;
    for (i64 base = 0; base < n; base += inner) {
        const double* qa = pa + offa;
        const double* qb = pb + offb;
        for (i64 t = 0; t < inner; ++t) po[base + t] = f(qa[t * ia], qb[t * ib]);
        for (size_t d = r - 1; d-- > 0;) {
            ++idx[d];
            offa += sa[d];
            offb += sb[d];
            if (idx[d] < out.shape()[d]) break;
            offa -= sa[d] * out.shape()[d];
            offb -= sb[d] * out.shape()[d];
            idx[d] = 0;
        }
    }
}

template <typename F>
Tensor map_unary(const Tensor& a, F&& f) {
    Tensor out = Tensor::uninitialized(a.shape());
    const double* pa = a.data();
    double* po = out.data();
    const i64 n = a.numel();
#pragma omp parallel for schedule(static) if (n >= 32768)
    for (i64 i = 0; i < n; ++i) po[i] = f(pa[i]);
    return out;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// value, first and second derivatives of the tanh-form gelu
inline double gelu_value(double x) {
    double u = kGeluC * (x + kGeluA * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad_value(double x) {
    double x2 = x * x;
    double u = kGeluC * (x + kGeluA * x2 * x);
    double t = std::tanh(u);
    double du = kGeluC * (1.0 + 3.0 * kGeluA * x2);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

inline double gelu_curv_value(double x) {
    double x2 = x * x;
    double u = kGeluC * (x + kGeluA * x2 * x);
    double t = std::tanh(u);
    double sech2 = 1.0 - t * t;
    double du = kGeluC * (1.0 + 3.0 * kGeluA * x2);
    double ddu = kGeluC * 6.0 * kGeluA * x;
    // d/dx [ 0.5(1+t) + 0.5 x sech2 du ]
    return 0.5 * sech2 * du +
           0.5 * (sech2 * du + x * (-2.0 * t * sech2 * du * du + sech2 * ddu));
}

template <typename F>
Tensor map_binary_same(const std::string& op, const Tensor& a, const Tensor& b, F&& f) {
    if (!a.same_shape(b))
        shape_error(op, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor out = Tensor::uninitialized(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    const i64 n = a.numel();
#pragma omp parallel for schedule(static) if (n >= 32768)
    for (i64 i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return out;
}

double smooth_l1_value(double d, double delta) {
    double ad = std::fabs(d);
    return ad <= delta ? 0.5 * d * d / delta : ad - 0.5 * delta;
}

double smooth_l1_grad_value(double d, double delta) {
    if (d > delta) return 1.0;
    if (d < -delta) return -1.0;
    return d / delta;
}

double smooth_l1_curv_value(double d, double delta) {
    return std::fabs(d) < delta ? 1.0 / delta : 0.0;
}

// axis helpers ---------------------------------------------------------------

void split_at_axis(const Shape& s, int axis, i64* outer, i64* extent, i64* inner) {
    i64 o = 1, in = 1;
    for (int i = 0; i < axis; ++i) o *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) in *= s[i];
    *outer = o;
    *extent = s[static_cast<size_t>(axis)];
    *inner = in;
}

}  // namespace

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::SMul: return "scalar-mul";
        case OpKind::BAdd: return "broadcast-add";
        case OpKind::BMul: return "broadcast-mul";
        case OpKind::MatMul: return "matmul";
        case OpKind::Transpose: return "transpose";
        case OpKind::Reshape: return "reshape";
        case OpKind::Broadcast: return "broadcast";
        case OpKind::Slice: return "slice";
        case OpKind::Scatter: return "scatter";
        case OpKind::Concat: return "concat";
        case OpKind::Sum: return "sum";
        case OpKind::RowMax: return "rowmax";
        case OpKind::Tanh: return "tanh";
        case OpKind::Gelu: return "gelu";
        case OpKind::GeluGrad: return "gelu-grad";
        case OpKind::GeluCurv: return "gelu-curv";
        case OpKind::LayerNorm: return "layer-norm";
        case OpKind::Exp: return "exp";
        case OpKind::Sin: return "sin";
        case OpKind::Cos: return "cos";
        case OpKind::Sqrt: return "sqrt";
        case OpKind::Recip: return "recip";
        case OpKind::SmoothL1: return "smooth-l1";
        case OpKind::SmoothL1Grad: return "smooth-l1-grad";
        case OpKind::SmoothL1Curv: return "smooth-l1-curv";
        case OpKind::StopGrad: return "stop-gradient";
    }
    return "?";
}

NoRecordScope::NoRecordScope() : prev_(g_recording) { g_recording = false; }
NoRecordScope::~NoRecordScope() { g_recording = prev_; }
bool recording_enabled() { return g_recording; }

namespace {

NodePtr make_node(Tensor value, OpKind kind, OpAttrs attrs, std::vector<NodePtr> inputs) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->kind = kind;
    n->attrs = std::move(attrs);
    n->recorded = g_recording;
    if (g_recording) {
        for (const auto& in : inputs) n->requires_grad = n->requires_grad || in->requires_grad;
        n->inputs = std::move(inputs);
    }
    return n;
}

Tensor eval_matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
    require(!(ta && tb), "matmul", "both operands transposed is unsupported");
    auto dims2 = [&](const Tensor& t, bool trans, i64 off) {
        return trans ? t.extent(off + 1) : t.extent(off);
    };
    if (a.rank() == 2 && b.rank() == 2) {
        const i64 m = dims2(a, ta, 0), ka = ta ? a.extent(0) : a.extent(1);
        const i64 kb = tb ? b.extent(1) : b.extent(0), n = tb ? b.extent(0) : b.extent(1);
        require(ka == kb, "matmul", "inner extents differ: " + a.shape_str() +
                                        (ta ? "^T" : "") + " @ " + b.shape_str() +
                                        (tb ? "^T" : ""));
        Tensor out = Tensor::uninitialized(Shape{m, n});
        if (ta)
            gemm_tn(m, n, ka, a.data(), b.data(), out.data());
        else if (tb)
            gemm_nt(m, n, ka, a.data(), b.data(), out.data());
        else
            gemm_nn(m, n, ka, a.data(), b.data(), out.data(), false);
        return out;
    }
    if (a.rank() == 3 && b.rank() == 3) {
        require(a.extent(0) == b.extent(0), "matmul",
                "batch extents differ: " + a.shape_str() + " @ " + b.shape_str());
        const i64 g = a.extent(0);
        const i64 m = ta ? a.extent(2) : a.extent(1), ka = ta ? a.extent(1) : a.extent(2);
        const i64 kb = tb ? b.extent(2) : b.extent(1), n = tb ? b.extent(1) : b.extent(2);
        require(ka == kb, "matmul", "batched inner extents differ: " + a.shape_str() + " @ " +
                                        b.shape_str());
        Tensor out = Tensor::uninitialized(Shape{g, m, n});
        const i64 sa = (ta ? ka * m : m * ka), sb = (tb ? n * kb : kb * n);
#pragma omp parallel for schedule(static) if (g > 1)
        for (i64 gi = 0; gi < g; ++gi) {
            const double* pa = a.data() + gi * sa;
            const double* pb = b.data() + gi * sb;
            double* pc = out.data() + gi * m * n;
            if (ta)
                gemm_tn_serial(m, n, ka, pa, pb, pc);
            else if (tb)
                gemm_nt_serial(m, n, ka, pa, pb, pc);
            else
                gemm_nn_serial(m, n, ka, pa, pb, pc, false);
        }
        return out;
    }
    shape_error("matmul", "expects two rank-2 or two rank-3 operands, got " + a.shape_str() +
                              " and " + b.shape_str());
}

Tensor eval_transpose(const Tensor& a, const std::vector<int>& perm) {
    require(perm.size() == static_cast<size_t>(a.rank()), "transpose",
            "permutation size mismatch for " + a.shape_str());
    std::vector<bool> seen(perm.size(), false);
    for (int p : perm) {
        require(p >= 0 && p < a.rank() && !seen[static_cast<size_t>(p)], "transpose",
                "invalid permutation");
        seen[static_cast<size_t>(p)] = true;
    }
    Shape os(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) os[i] = a.extent(perm[i]);
    Tensor out = Tensor::uninitialized(os);
    if (a.rank() == 2 && perm == std::vector<int>{1, 0}) {
        transpose2d(a.extent(0), a.extent(1), a.data(), out.data());
        return out;
    }
    auto ast = strides_of(a.shape());
    std::vector<i64> st(perm.size());  // input stride per output dim
    for (size_t i = 0; i < perm.size(); ++i) st[i] = ast[static_cast<size_t>(perm[i])];
    const size_t r = os.size();
    if (r == 0) {
        out[0] = a[0];
        return out;
    }
    const i64 inner = os[r - 1];
    const i64 is = st[r - 1];
    std::vector<i64> idx(r, 0);
    i64 off = 0;
    const double* pa = a.data();
    double* po = out.data();
    if (is == 1) {
        // last axis kept contiguous: copy whole rows
        for (i64 base = 0; base < out.numel(); base += inner) {
            std::memcpy(po + base, pa + off, static_cast<size_t>(inner) * sizeof(double));
            for (size_t d = r - 1; d-- > 0;) {
                ++idx[d];
                off += st[d];
                if (idx[d] < os[d]) break;
                off -= st[d] * os[d];
                idx[d] = 0;
            }
        }
        return out;
    }
    for (i64 base = 0; base < out.numel(); base += inner) {
        for (i64 t = 0; t < inner; ++t) po[base + t] = pa[off + t * is];
        for (size_t d = r - 1; d-- > 0;) {
            ++idx[d];
            off += st[d];
            if (idx[d] < os[d]) break;
            off -= st[d] * os[d];
            idx[d] = 0;
        }
    }
    return out;
}

Tensor eval_broadcast(const Tensor& a, const Shape& target) {
    Shape check = broadcast_shape("broadcast", a.shape(), target);
    require(check == target, "broadcast",
            "cannot broadcast " + a.shape_str() + " to " + shape_str(target));
    Tensor out = Tensor::uninitialized(target);
    const size_t r = target.size();
    if (r == 0) {
        out[0] = a[0];
        return out;
    }
    auto sa = bcast_strides(a.shape(), target);
    const i64 inner = target[r - 1];
    const i64 ia = sa[r - 1];
    const double* pa = a.data();
    double* po = out.data();
    std::vector<i64> idx(r, 0);
    i64 off = 0;
    for (i64 base = 0; base < out.numel(); base += inner) {
        for (i64 t = 0; t < inner; ++t) po[base + t] = pa[off + t * ia];
        for (size_t d = r - 1; d-- > 0;) {
            ++idx[d];
            off += sa[d];
            if (idx[d] < target[d]) break;
            off -= sa[d] * target[d];
            idx[d] = 0;
        }
    }
    return out;
}

Tensor eval_slice(const Tensor& a, int axis, i64 start, i64 step, i64 count) {
    require(axis >= 0 && axis < a.rank(), "slice", "axis out of range for " + a.shape_str());
    require(step >= 1 && count >= 0 && start >= 0, "slice", "bad start/step/count");
    i64 outer, extent, inner;
    split_at_axis(a.shape(), axis, &outer, &extent, &inner);
    require(count == 0 || start + (count - 1) * step < extent, "slice",
            "slice range exceeds extent " + std::to_string(extent) + " of " + a.shape_str());
    Shape os = a.shape();
    os[static_cast<size_t>(axis)] = count;
    Tensor out = Tensor::uninitialized(os);
    const double* pa = a.data();
    double* po = out.data();
    if (step == 1) {
        // contiguous block per outer slot
        for (i64 o = 0; o < outer; ++o)
            std::memcpy(po + o * count * inner, pa + (o * extent + start) * inner,
                        static_cast<size_t>(count * inner) * sizeof(double));
    } else {
        for (i64 o = 0; o < outer; ++o)
            for (i64 c = 0; c < count; ++c)
                std::memcpy(po + (o * count + c) * inner,
                            pa + (o * extent + start + c * step) * inner,
                            static_cast<size_t>(inner) * sizeof(double));
    }
    return out;
}

Tensor eval_scatter(const Tensor& a, int axis, i64 start, i64 step, i64 out_extent) {
    require(axis >= 0 && axis < a.rank(), "scatter", "axis out of range for " + a.shape_str());
    i64 outer, count, inner;
    split_at_axis(a.shape(), axis, &outer, &count, &inner);
    require(count == 0 || start + (count - 1) * step < out_extent, "scatter",
            "scatter range exceeds target extent " + std::to_string(out_extent));
    Shape os = a.shape();
    os[static_cast<size_t>(axis)] = out_extent;
    Tensor out(os);  // zero-initialized
    const double* pa = a.data();
    double* po = out.data();
    if (step == 1) {
        for (i64 o = 0; o < outer; ++o)
            std::memcpy(po + (o * out_extent + start) * inner, pa + o * count * inner,
                        static_cast<size_t>(count * inner) * sizeof(double));
    } else {
        for (i64 o = 0; o < outer; ++o)
            for (i64 c = 0; c < count; ++c)
                std::memcpy(po + (o * out_extent + start + c * step) * inner,
                            pa + (o * count + c) * inner,
                            static_cast<size_t>(inner) * sizeof(double));
    }
    return out;
}

Tensor eval_concat(const std::vector<NodePtr>& parts, int axis) {
    require(!parts.empty(), "concat", "no operands");
    const Shape& s0 = parts[0]->value.shape();
    require(axis >= 0 && axis < parts[0]->value.rank(), "concat", "axis out of range");
    i64 total = 0;
    for (const auto& p : parts) {
        const Shape& s = p->value.shape();
        require(s.size() == s0.size(), "concat", "rank mismatch");
        for (size_t i = 0; i < s.size(); ++i)
            require(static_cast<int>(i) == axis || s[i] == s0[i], "concat",
                    "extent mismatch at axis " + std::to_string(i) + ": " + shape_str(s) +
                        " vs " + shape_str(s0));
        total += s[static_cast<size_t>(axis)];
    }
    Shape os = s0;
    os[static_cast<size_t>(axis)] = total;
    Tensor out = Tensor::uninitialized(os);
    i64 outer, oext, inner;
    split_at_axis(os, axis, &outer, &oext, &inner);
    double* po = out.data();
    i64 off = 0;
    for (const auto& p : parts) {
        i64 ext = p->value.extent(axis);
        const double* pa = p->value.data();
        for (i64 o = 0; o < outer; ++o)
            std::memcpy(po + (o * oext + off) * inner, pa + o * ext * inner,
                        static_cast<size_t>(ext * inner) * sizeof(double));
        off += ext;
    }
    return out;
}

Tensor eval_sum(const Tensor& a, int axis) {
    if (axis == -1) {
        Tensor out = Tensor::scalar(0.0);
        const double* pa = a.data();
        double acc = 0.0;
        for (i64 i = 0; i < a.numel(); ++i) acc += pa[i];
        out[0] = acc;
        return out;
    }
    require(axis >= 0 && axis < a.rank(), "sum", "axis out of range for " + a.shape_str());
    i64 outer, extent, inner;
    split_at_axis(a.shape(), axis, &outer, &extent, &inner);
    Shape os = a.shape();
    os[static_cast<size_t>(axis)] = 1;
    Tensor out = Tensor::uninitialized(os);
    const double* pa = a.data();
    double* po = out.data();
#pragma omp parallel for schedule(static) if (outer * inner >= 16384)
    for (i64 o = 0; o < outer; ++o) {
        double* orow = po + o * inner;
        const double* arow = pa + o * extent * inner;
        for (i64 t = 0; t < inner; ++t) orow[t] = arow[t];
        for (i64 e = 1; e < extent; ++e) {
            const double* r = arow + e * inner;
            for (i64 t = 0; t < inner; ++t) orow[t] += r[t];
        }
    }
    return out;
}

Tensor eval_rowmax(const Tensor& a) {
    require(a.rank() >= 1, "rowmax", "needs rank >= 1, got " + a.shape_str());
    i64 inner = a.shape().back();
    require(inner >= 1, "rowmax", "empty last axis");
    i64 rows = a.numel() / inner;
    Shape os = a.shape();
    os.back() = 1;
    Tensor out = Tensor::uninitialized(os);
    const double* pa = a.data();
    for (i64 r = 0; r < rows; ++r) {
        const double* row = pa + r * inner;
        double m = row[0];
        for (i64 t = 1; t < inner; ++t) m = std::max(m, row[t]);
        out[r] = m;
    }
    return out;
}

}  // namespace

NodePtr constant(Tensor v) { return make_node(std::move(v), OpKind::Leaf, {}, {}); }
NodePtr constant_scalar(double v) { return constant(Tensor::scalar(v)); }

NodePtr leaf(Tensor v, bool requires_grad) {
    auto n = make_node(std::move(v), OpKind::Leaf, {}, {});
    n->requires_grad = requires_grad;
    return n;
}

NodePtr apply_primitive_impl(OpKind kind, std::vector<NodePtr> operands, OpAttrs attrs) {
    auto arity = [&](size_t n) {
        require(operands.size() == n, op_name(kind),
                "expected " + std::to_string(n) + " operands, got " +
                    std::to_string(operands.size()));
    };
    switch (kind) {
        case OpKind::Leaf:
            shape_error("leaf", "apply_primitive cannot create leaves");
        case OpKind::Add: {
            arity(2);
            Tensor v = map_binary_same("add", operands[0]->value, operands[1]->value,
                                       [](double a, double b) { return a + b; });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Sub: {
            arity(2);
            Tensor v = map_binary_same("sub", operands[0]->value, operands[1]->value,
                                       [](double a, double b) { return a - b; });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Mul: {
            arity(2);
            Tensor v = map_binary_same("elementwise-mul", operands[0]->value, operands[1]->value,
                                       [](double a, double b) { return a * b; });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::SMul: {
            arity(1);
            double k = attrs.scalar;
            Tensor v = map_unary(operands[0]->value, [k](double a) { return a * k; });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::BAdd: {
            arity(2);
            Shape os = broadcast_shape("broadcast-add", operands[0]->value.shape(),
                                       operands[1]->value.shape());
            Tensor v = Tensor::uninitialized(os);
            bcast_binary_kernel(operands[0]->value, operands[1]->value, v,
                                [](double a, double b) { return a + b; });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::BMul: {
            arity(2);
            Shape os = broadcast_shape("broadcast-mul", operands[0]->value.shape(),
                                       operands[1]->value.shape());
            Tensor v = Tensor::uninitialized(os);
            bcast_binary_kernel(operands[0]->value, operands[1]->value, v,
                                [](double a, double b) { return a * b; });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::MatMul: {
            arity(2);
            Tensor v = eval_matmul(operands[0]->value, operands[1]->value, attrs.trans_a,
                                   attrs.trans_b);
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Transpose: {
            arity(1);
            Tensor v = eval_transpose(operands[0]->value, attrs.perm);
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Reshape: {
            arity(1);
            Tensor v = operands[0]->value.reshaped_view(attrs.shape);
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Broadcast: {
            arity(1);
            Tensor v = eval_broadcast(operands[0]->value, attrs.shape);
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Slice: {
            arity(1);
            Tensor v = eval_slice(operands[0]->value, attrs.axis, attrs.start, attrs.step,
                                  attrs.count);
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Scatter: {
            arity(1);
            Tensor v = eval_scatter(operands[0]->value, attrs.axis, attrs.start, attrs.step,
                                    attrs.out_extent);
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Concat: {
            Tensor v = eval_concat(operands, attrs.axis);
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Sum: {
            arity(1);
            Tensor v = eval_sum(operands[0]->value, attrs.axis);
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::RowMax: {
            arity(1);
            Tensor v = eval_rowmax(operands[0]->value);
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Tanh: {
            arity(1);
            Tensor v = map_unary(operands[0]->value, [](double a) { return std::tanh(a); });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Gelu: {
            arity(1);
            Tensor v = map_unary(operands[0]->value, [](double a) { return gelu_value(a); });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::GeluGrad: {
            arity(1);
            Tensor v = map_unary(operands[0]->value, [](double a) { return gelu_grad_value(a); });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::GeluCurv: {
            arity(1);
            Tensor v = map_unary(operands[0]->value, [](double a) { return gelu_curv_value(a); });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::LayerNorm: {
            arity(1);
            const Tensor& x = operands[0]->value;
            require(x.rank() >= 1, "layer-norm", "needs rank >= 1, got " + x.shape_str());
            const i64 d = x.shape().back();
            require(d >= 1, "layer-norm", "empty last axis");
            const i64 rows = x.numel() / d;
            const double eps = attrs.scalar;
            Tensor v = Tensor::uninitialized(x.shape());
            const double* px = x.data();
            double* pv = v.data();
            bool finite = true;
#pragma omp parallel for schedule(static) reduction(&& : finite) if (x.numel() >= 32768)
            for (i64 r = 0; r < rows; ++r) {
                const double* row = px + r * d;
                double* out = pv + r * d;
                double mean = 0.0;
                for (i64 i = 0; i < d; ++i) mean += row[i];
                mean /= static_cast<double>(d);
                double var = 0.0;
                for (i64 i = 0; i < d; ++i) {
                    double c = row[i] - mean;
                    var += c * c;
                }
                var /= static_cast<double>(d);
                double rstd = 1.0 / std::sqrt(var + eps);
                for (i64 i = 0; i < d; ++i) {
                    out[i] = (row[i] - mean) * rstd;
                    finite = finite && std::isfinite(out[i]);
                }
            }
            if (!finite)
                throw NumericalError("layer-norm produced non-finite values for input " +
                                     x.shape_str());
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Exp: {
            arity(1);
            Tensor v = map_unary(operands[0]->value, [](double a) { return std::exp(a); });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Sin: {
            arity(1);
            Tensor v = map_unary(operands[0]->value, [](double a) { return std::sin(a); });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Cos: {
            arity(1);
            Tensor v = map_unary(operands[0]->value, [](double a) { return std::cos(a); });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Sqrt: {
            arity(1);
            Tensor v = map_unary(operands[0]->value, [](double a) { return std::sqrt(a); });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::Recip: {
            arity(1);
            Tensor v = map_unary(operands[0]->value, [](double a) { return 1.0 / a; });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::SmoothL1: {
            arity(2);
            double d = attrs.scalar;
            Tensor v = map_binary_same("smooth-l1", operands[0]->value, operands[1]->value,
                                       [d](double a, double b) { return smooth_l1_value(a - b, d); });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::SmoothL1Grad: {
            arity(2);
            double d = attrs.scalar;
            Tensor v = map_binary_same("smooth-l1-grad", operands[0]->value, operands[1]->value,
                                       [d](double a, double b) { return smooth_l1_grad_value(a - b, d); });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::SmoothL1Curv: {
            arity(2);
            double d = attrs.scalar;
            Tensor v = map_binary_same("smooth-l1-curv", operands[0]->value, operands[1]->value,
                                       [d](double a, double b) { return smooth_l1_curv_value(a - b, d); });
            return make_node(std::move(v), kind, std::move(attrs), std::move(operands));
        }
        case OpKind::StopGrad: {
            arity(1);
            Tensor v = operands[0]->value;  // shares storage
            auto n = make_node(std::move(v), kind, std::move(attrs), std::move(operands));
            n->requires_grad = false;
            return n;
        }
    }
    shape_error("apply_primitive", "unknown kind");
}

NodePtr apply_primitive(OpKind kind, std::vector<NodePtr> operands, OpAttrs attrs) {
    if (!g_op_stats.enabled)
        return apply_primitive_impl(kind, std::move(operands), std::move(attrs));
    auto t0 = std::chrono::steady_clock::now();
    NodePtr n = apply_primitive_impl(kind, std::move(operands), std::move(attrs));
    auto t1 = std::chrono::steady_clock::now();
    g_op_stats.ns[static_cast<int>(kind)] +=
        std::chrono::duration<double, std::nano>(t1 - t0).count();
    g_op_stats.count[static_cast<int>(kind)] += 1;
    return n;
}

NodePtr add(NodePtr a, NodePtr b) { return apply_primitive(OpKind::Add, {std::move(a), std::move(b)}); }
NodePtr sub(NodePtr a, NodePtr b) { return apply_primitive(OpKind::Sub, {std::move(a), std::move(b)}); }
NodePtr mul(NodePtr a, NodePtr b) { return apply_primitive(OpKind::Mul, {std::move(a), std::move(b)}); }

NodePtr smul(NodePtr a, double k) {
    OpAttrs at;
    at.scalar = k;
    return apply_primitive(OpKind::SMul, {std::move(a)}, at);
}

NodePtr badd(NodePtr a, NodePtr b) { return apply_primitive(OpKind::BAdd, {std::move(a), std::move(b)}); }
NodePtr bmul(NodePtr a, NodePtr b) { return apply_primitive(OpKind::BMul, {std::move(a), std::move(b)}); }
NodePtr matmul(NodePtr a, NodePtr b) { return apply_primitive(OpKind::MatMul, {std::move(a), std::move(b)}); }

NodePtr matmul_t(NodePtr a, NodePtr b, bool trans_a, bool trans_b) {
    OpAttrs at;
    at.trans_a = trans_a;
    at.trans_b = trans_b;
    return apply_primitive(OpKind::MatMul, {std::move(a), std::move(b)}, at);
}

NodePtr transpose(NodePtr a, std::vector<int> perm) {
    OpAttrs at;
    at.perm = std::move(perm);
    return apply_primitive(OpKind::Transpose, {std::move(a)}, at);
}

NodePtr reshape(NodePtr a, Shape shape) {
    OpAttrs at;
    at.shape = std::move(shape);
    return apply_primitive(OpKind::Reshape, {std::move(a)}, at);
}

NodePtr broadcast_to(NodePtr a, Shape shape) {
    OpAttrs at;
    at.shape = std::move(shape);
    return apply_primitive(OpKind::Broadcast, {std::move(a)}, at);
}

NodePtr slice(NodePtr a, int axis, i64 start, i64 step, i64 count) {
    OpAttrs at;
    at.axis = axis;
    at.start = start;
    at.step = step;
    at.count = count;
    return apply_primitive(OpKind::Slice, {std::move(a)}, at);
}

NodePtr scatter(NodePtr a, int axis, i64 start, i64 step, i64 out_extent) {
    OpAttrs at;
    at.axis = axis;
    at.start = start;
    at.step = step;
    at.out_extent = out_extent;
    return apply_primitive(OpKind::Scatter, {std::move(a)}, at);
}

NodePtr concat(std::vector<NodePtr> parts, int axis) {
    OpAttrs at;
    at.axis = axis;
    return apply_primitive(OpKind::Concat, std::move(parts), at);
}

NodePtr sum_axis(NodePtr a, int axis) {
    OpAttrs at;
    at.axis = axis;
    return apply_primitive(OpKind::Sum, {std::move(a)}, at);
}

NodePtr sum_all(NodePtr a) {
    OpAttrs at;
    at.axis = -1;
    return apply_primitive(OpKind::Sum, {std::move(a)}, at);
}

NodePtr rowmax(NodePtr a) { return apply_primitive(OpKind::RowMax, {std::move(a)}); }
NodePtr tanh(NodePtr a) { return apply_primitive(OpKind::Tanh, {std::move(a)}); }
NodePtr exp(NodePtr a) { return apply_primitive(OpKind::Exp, {std::move(a)}); }
NodePtr sin(NodePtr a) { return apply_primitive(OpKind::Sin, {std::move(a)}); }
NodePtr cos(NodePtr a) { return apply_primitive(OpKind::Cos, {std::move(a)}); }
NodePtr sqrt(NodePtr a) { return apply_primitive(OpKind::Sqrt, {std::move(a)}); }
NodePtr recip(NodePtr a) { return apply_primitive(OpKind::Recip, {std::move(a)}); }

NodePtr smooth_l1(NodePtr x, NodePtr y, double delta) {
    OpAttrs at;
    at.scalar = delta;
    return apply_primitive(OpKind::SmoothL1, {std::move(x), std::move(y)}, at);
}

NodePtr stop_gradient(NodePtr a) { return apply_primitive(OpKind::StopGrad, {std::move(a)}); }

NodePtr mean_axis(NodePtr a, int axis) {
    i64 n = a->value.extent(axis);
    return smul(sum_axis(std::move(a), axis), 1.0 / static_cast<double>(n));
}

NodePtr mean_all(NodePtr a) {
    i64 n = a->value.numel();
    return smul(sum_all(std::move(a)), 1.0 / static_cast<double>(n));
}

NodePtr gelu(NodePtr a) { return apply_primitive(OpKind::Gelu, {std::move(a)}); }

NodePtr layer_norm(NodePtr a, double eps) {
    OpAttrs at;
    at.scalar = eps;
    return apply_primitive(OpKind::LayerNorm, {std::move(a)}, at);
}

NodePtr softmax_lastaxis(NodePtr a) {
    require(a->value.rank() >= 1, "softmax", "needs rank >= 1, got " + a->value.shape_str());
    int axis = static_cast<int>(a->value.rank()) - 1;
    NodePtr shift = stop_gradient(rowmax(a));
    NodePtr e = exp(badd(a, smul(std::move(shift), -1.0)));
    NodePtr s = sum_axis(e, axis);
    NodePtr y = bmul(std::move(e), recip(std::move(s)));
    if (!y->value.all_finite())
        throw NumericalError("softmax produced non-finite values for input " +
                             a->value.shape_str());
    return y;
}

NodePtr conv1d(NodePtr x, NodePtr w, NodePtr bias, i64 kernel, i64 stride, i64 padding) {
    require(x->value.rank() == 3, "conv1d", "input must be [L,B,C], got " + x->value.shape_str());
    i64 len = x->value.extent(0), batch = x->value.extent(1), cin = x->value.extent(2);
    require(w->value.rank() == 2 && w->value.extent(0) == kernel * cin, "conv1d",
            "weight must be [K*Cin, Cout], got " + w->value.shape_str());
    i64 cout = w->value.extent(1);
    i64 padded = len + 2 * padding;
    require(padded >= kernel, "conv1d", "input shorter than kernel");
    i64 lout = (padded - kernel) / stride + 1;
    NodePtr xp = padding > 0 ? scatter(x, 0, padding, 1, padded) : x;
    std::vector<NodePtr> cols;
    cols.reserve(static_cast<size_t>(kernel));
    for (i64 k = 0; k < kernel; ++k) cols.push_back(slice(xp, 0, k, stride, lout));
    NodePtr im = concat(std::move(cols), 2);  // [Lout, B, K*Cin]
    NodePtr flat = reshape(std::move(im), {lout * batch, kernel * cin});
    NodePtr y = badd(matmul(std::move(flat), w), bias);
    return reshape(std::move(y), {lout, batch, cout});
}

NodePtr reduce_to(NodePtr g, const Shape& target) {
    if (g->value.shape() == target) return g;
    NodePtr r = std::move(g);
    while (r->value.rank() > static_cast<i64>(target.size())) {
        Shape dropped(r->value.shape().begin() + 1, r->value.shape().end());
        r = reshape(sum_axis(std::move(r), 0), std::move(dropped));
    }
    require(r->value.rank() == static_cast<i64>(target.size()), "reduce_to",
            "cannot reduce " + r->value.shape_str() + " to " + shape_str(target));
    for (int axis = 0; axis < r->value.rank(); ++axis) {
        if (target[static_cast<size_t>(axis)] == 1 && r->value.extent(axis) != 1)
            r = sum_axis(std::move(r), axis);
    }
    require(r->value.shape() == target, "reduce_to",
            "cannot reduce to " + shape_str(target) + ", reached " + r->value.shape_str());
    return r;
}

const NodePtr& GradientMap::at(const NodePtr& n) const {
    auto it = grads_.find(n.get());
    if (it == grads_.end()) throw std::invalid_argument("GradientMap: node not present");
    return it->second;
}

namespace {

// Per-slot backward rules. `g` has the shape of n->value; results must have
// the exact shapes of the corresponding inputs. Rules only use catalog
// primitives, which keeps the results differentiable.
std::vector<NodePtr> vjp(const NodePtr& n, const NodePtr& g) {
    const auto& in = n->inputs;
    switch (n->kind) {
        case OpKind::Leaf:
        case OpKind::StopGrad:
            return {};
        case OpKind::Add:
            return {g, g};
        case OpKind::Sub:
            return {g, smul(g, -1.0)};
        case OpKind::Mul:
            return {mul(g, in[1]), mul(g, in[0])};
        case OpKind::SMul:
            return {smul(g, n->attrs.scalar)};
        case OpKind::BAdd:
            return {reduce_to(g, in[0]->value.shape()), reduce_to(g, in[1]->value.shape())};
        case OpKind::BMul:
            return {reduce_to(bmul(g, in[1]), in[0]->value.shape()),
                    reduce_to(bmul(g, in[0]), in[1]->value.shape())};
        case OpKind::MatMul: {
            const bool ta = n->attrs.trans_a, tb = n->attrs.trans_b;
            if (!ta && !tb)
                return {matmul_t(g, in[1], false, true), matmul_t(in[0], g, true, false)};
            if (tb)  // C = A @ B^T
                return {matmul_t(g, in[1], false, false), matmul_t(g, in[0], true, false)};
            // ta: C = A^T @ B
            return {matmul_t(in[1], g, false, true), matmul_t(in[0], g, false, false)};
        }
        case OpKind::Transpose: {
            std::vector<int> inv(n->attrs.perm.size());
            for (size_t i = 0; i < inv.size(); ++i)
                inv[static_cast<size_t>(n->attrs.perm[i])] = static_cast<int>(i);
            return {transpose(g, std::move(inv))};
        }
        case OpKind::Reshape:
            return {reshape(g, in[0]->value.shape())};
        case OpKind::Broadcast:
            return {reduce_to(g, in[0]->value.shape())};
        case OpKind::Slice:
            return {scatter(g, n->attrs.axis, n->attrs.start, n->attrs.step,
                            in[0]->value.extent(n->attrs.axis))};
        case OpKind::Scatter:
            return {slice(g, n->attrs.axis, n->attrs.start, n->attrs.step,
                          in[0]->value.extent(n->attrs.axis))};
        case OpKind::Concat: {
            std::vector<NodePtr> outs;
            outs.reserve(in.size());
            i64 off = 0;
            for (const auto& p : in) {
                i64 ext = p->value.extent(n->attrs.axis);
                outs.push_back(slice(g, n->attrs.axis, off, 1, ext));
                off += ext;
            }
            return outs;
        }
        case OpKind::Sum:
            return {broadcast_to(g, in[0]->value.shape())};
        case OpKind::RowMax:
            throw std::logic_error(
                "rowmax has no backward rule; it is only valid under stop-gradient");
        case OpKind::Tanh:
            return {mul(g, badd(smul(mul(n, n), -1.0), constant_scalar(1.0)))};
        case OpKind::LayerNorm: {
            const NodePtr& x = in[0];
            const int axis = static_cast<int>(x->value.rank()) - 1;
            NodePtr mu = mean_axis(x, axis);
            NodePtr centered = badd(x, smul(std::move(mu), -1.0));
            NodePtr var = mean_axis(mul(centered, centered), axis);
            NodePtr rstd = recip(sqrt(badd(std::move(var), constant_scalar(n->attrs.scalar))));
            NodePtr gm = mean_axis(g, axis);
            NodePtr gym = mean_axis(mul(g, n), axis);
            NodePtr inner_term = badd(badd(g, smul(std::move(gm), -1.0)),
                                      smul(bmul(n, std::move(gym)), -1.0));
            return {bmul(std::move(inner_term), std::move(rstd))};
        }
        case OpKind::Gelu:
            return {mul(g, apply_primitive(OpKind::GeluGrad, {in[0]}))};
        case OpKind::GeluGrad:
            return {mul(g, apply_primitive(OpKind::GeluCurv, {in[0]}))};
        case OpKind::GeluCurv:
            // Third derivative is only reachable beyond the supported nesting
            // depth; the training and planning paths never differentiate this.
            throw std::logic_error("gelu curvature has no backward rule");
        case OpKind::Exp:
            return {mul(g, n)};
        case OpKind::Sin:
            return {mul(g, cos(in[0]))};
        case OpKind::Cos:
            return {smul(mul(g, sin(in[0])), -1.0)};
        case OpKind::Sqrt:
            return {smul(mul(g, recip(n)), 0.5)};
        case OpKind::Recip:
            return {smul(mul(g, mul(n, n)), -1.0)};
        case OpKind::SmoothL1: {
            OpAttrs at;
            at.scalar = n->attrs.scalar;
            NodePtr h = apply_primitive(OpKind::SmoothL1Grad, {in[0], in[1]}, at);
            NodePtr dx = mul(g, std::move(h));
            return {dx, smul(dx, -1.0)};
        }
        case OpKind::SmoothL1Grad: {
            OpAttrs at;
            at.scalar = n->attrs.scalar;
            NodePtr c = apply_primitive(OpKind::SmoothL1Curv, {in[0], in[1]}, at);
            NodePtr dx = mul(g, std::move(c));
            return {dx, smul(dx, -1.0)};
        }
        case OpKind::SmoothL1Curv:
            // Piecewise constant: zero derivative almost everywhere.
            return {nullptr, nullptr};
    }
    throw std::logic_error("vjp: unknown kind");
}

}  // namespace

GradientMap grad(const NodePtr& output, const std::vector<NodePtr>& wrt, bool differentiable) {
    if (!output) throw std::invalid_argument("grad: null output");
    if (output->value.numel() != 1)
        throw std::invalid_argument("grad: output must be scalar, got shape " +
                                    output->value.shape_str());

    std::unordered_set<const Node*> wrt_set;
    for (const auto& w : wrt) wrt_set.insert(w.get());

    // A node contributes when a wrt node is reachable through differentiable
    // edges (stop-gradient blocks traversal unless the node itself is wrt).
    std::unordered_map<const Node*, bool> contrib;
    {
        std::vector<std::pair<const Node*, size_t>> stack;
        auto visit = [&](const Node* n) {
            if (!contrib.count(n)) stack.emplace_back(n, 0);
        };
        visit(output.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (wrt_set.count(n)) {
                contrib[n] = true;
                stack.pop_back();
                continue;
            }
            if (n->kind == OpKind::StopGrad || n->inputs.empty()) {
                contrib[n] = false;
                stack.pop_back();
                continue;
            }
            if (next < n->inputs.size()) {
                const Node* child = n->inputs[next].get();
                ++next;
                if (!contrib.count(child)) stack.emplace_back(child, 0);
                continue;
            }
            bool any = false;
            for (const auto& c : n->inputs) any = any || contrib[c.get()];
            contrib[n] = any;
            stack.pop_back();
        }
    }

    // Topological order over contributing nodes reachable from output.
    std::vector<NodePtr> topo;
    {
        std::unordered_set<const Node*> done;
        std::vector<std::pair<NodePtr, size_t>> stack;
        if (contrib[output.get()]) stack.emplace_back(output, 0);
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (done.count(n.get())) {
                stack.pop_back();
                continue;
            }
            bool descended = false;
            while (next < n->inputs.size()) {
                const NodePtr& child = n->inputs[next];
                ++next;
                if (n->kind != OpKind::StopGrad && contrib[child.get()] && !done.count(child.get())) {
                    stack.emplace_back(child, 0);
                    descended = true;
                    break;
                }
            }
            if (descended) continue;
            done.insert(n.get());
            topo.push_back(n);
            stack.pop_back();
        }
    }

    std::unordered_map<const Node*, NodePtr> adjoint;
    std::unique_ptr<NoRecordScope> norec;
    if (!differentiable) norec = std::make_unique<NoRecordScope>();

    if (contrib[output.get()])
        adjoint[output.get()] = constant(Tensor::full(output->value.shape(), 1.0));

    // During unrecorded passes adjoints are plain values owned by this call,
    // so accumulation can run in place instead of allocating add nodes.
    std::unordered_set<const Node*> owned;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        const NodePtr& n = *it;
        auto ad = adjoint.find(n.get());
        if (ad == adjoint.end()) continue;
        if (n->kind == OpKind::Leaf || n->kind == OpKind::StopGrad) continue;
        std::vector<NodePtr> gs = vjp(n, ad->second);
        for (size_t i = 0; i < gs.size(); ++i) {
            if (!gs[i]) continue;
            const NodePtr& input = n->inputs[i];
            if (!contrib[input.get()]) continue;
            auto slot = adjoint.find(input.get());
            if (slot == adjoint.end()) {
                // A vjp may return the incoming adjoint itself (Add) or a
                // view of it (Reshape); only fresh tensors may be mutated.
                if (!differentiable && gs[i]->value.data() != ad->second->value.data())
                    owned.insert(gs[i].get());
                adjoint.emplace(input.get(), std::move(gs[i]));
            } else if (!differentiable && owned.count(slot->second.get())) {
                Tensor& acc = slot->second->value;
                const Tensor& inc = gs[i]->value;
                if (!acc.same_shape(inc))
                    throw std::logic_error("adjoint shape mismatch");
                double* pa = acc.data();
                const double* pi = inc.data();
                const i64 count = acc.numel();
#pragma omp parallel for schedule(static) if (count >= 32768)
                for (i64 e = 0; e < count; ++e) pa[e] += pi[e];
            } else {
                slot->second = add(slot->second, std::move(gs[i]));
                if (!differentiable) owned.insert(slot->second.get());
            }
        }
    }

    GradientMap out;
    for (const auto& w : wrt) {
        auto it = adjoint.find(w.get());
        if (it != adjoint.end())
            out.set(w.get(), it->second);
        else
            out.set(w.get(), constant(Tensor::zeros(w->value.shape())));
    }
    return out;
}

FiniteDiffReport finite_difference_check(const std::function<NodePtr(const NodePtr&)>& f,
                                         const Tensor& x, double step) {
    if (step <= 0.0) throw std::invalid_argument("finite_difference_check: step must be > 0");
    auto x_leaf = leaf(x.clone(), true);
    NodePtr out = f(x_leaf);
    if (out->value.numel() != 1)
        throw std::invalid_argument("finite_difference_check: f must be scalar-valued");
    GradientMap gm = grad(out, {x_leaf}, false);
    Tensor analytic = gm.at(x_leaf)->value;

    Tensor numeric(x.shape());
    {
        NoRecordScope norec;
        for (i64 i = 0; i < x.numel(); ++i) {
            Tensor xp = x.clone();
            xp[i] += step;
            double fp = f(constant(std::move(xp)))->value.item();
            Tensor xm = x.clone();
            xm[i] -= step;
            double fm = f(constant(std::move(xm)))->value.item();
            numeric[i] = (fp - fm) / (2.0 * step);
        }
    }

    FiniteDiffReport rep;
    rep.max_abs_err = 0.0;
    rep.max_rel_err = 0.0;
    for (i64 i = 0; i < x.numel(); ++i) {
        double a = analytic[i], nu = numeric[i];
        double abs_err = std::fabs(a - nu);
        double rel_err = abs_err / std::max({std::fabs(a), std::fabs(nu), 1.0});
        rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
        rep.max_rel_err = std::max(rep.max_rel_err, rel_err);
    }
    rep.analytic = std::move(analytic);
    rep.numeric = std::move(numeric);
    return rep;
}

}  // namespace pad::ag
