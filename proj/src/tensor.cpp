#include "pad/tensor.hpp"

#include <cmath>
#include <cstring>
#include <type_traits>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pad {

i64 shape_numel(const Shape& shape) {
    i64 n = 1;
    for (i64 e : shape) {
        if (e < 0) throw std::invalid_argument("negative extent in shape " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    numel_ = shape_numel(shape_);
    data_ = std::shared_ptr<double[]>(new double[static_cast<size_t>(numel_)]());
}

Tensor Tensor::uninitialized(Shape shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.numel_ = shape_numel(t.shape_);
    t.data_ = std::shared_ptr<double[]>(new double[static_cast<size_t>(t.numel_)]);
    return t;
}

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    for (i64 i = 0; i < t.numel_; ++i) t.data_[i] = v;
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t{Shape{}};
    t.data_[0] = v;
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    Tensor t(std::move(shape));
    if (t.numel_ != static_cast<i64>(values.size()))
        throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                    " does not match shape " + t.shape_str());
    std::memcpy(t.data_.get(), values.data(), values.size() * sizeof(double));
    return t;
}

double Tensor::item() const {
    if (numel_ != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str());
    return data_[0];
}

Tensor Tensor::clone() const {
    Tensor t(shape_);
    std::memcpy(t.data_.get(), data_.get(), static_cast<size_t>(numel_) * sizeof(double));
    return t;
}

Tensor Tensor::reshaped_view(Shape shape) const {
    if (shape_numel(shape) != numel_)
        throw std::invalid_argument("reshape: element count mismatch " + shape_str() + " -> " +
                                    pad::shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.numel_ = numel_;
    t.data_ = data_;
    return t;
}

bool Tensor::all_finite() const {
    for (i64 i = 0; i < numel_; ++i)
        if (!std::isfinite(data_[i])) return false;
    return true;
}

double Tensor::abs_max() const {
    double m = 0.0;
    for (i64 i = 0; i < numel_; ++i) m = std::max(m, std::fabs(data_[i]));
    return m;
}

namespace {

constexpr i64 kRowBlock = 4;

// Processes rows [i0, i0+4) of C. Rows past the end are redirected to a
// scratch row so the arithmetic path is identical for every real row.
// A is addressed as a_base(i) + kk * ak_stride, which covers both the
// row-major [M,K] layout (stride 1) and the transposed [K,M] layout
// (stride M).
void gemm_row_group(i64 i0, i64 m, i64 n, i64 k, const double* a, i64 a_row_stride,
                    i64 ak_stride, const double* b, double* c, bool accumulate,
                    double* scratch) {
    const double* arow[kRowBlock];
    double* crow[kRowBlock];
    for (i64 r = 0; r < kRowBlock; ++r) {
        i64 i = i0 + r;
        if (i < m) {
            arow[r] = a + static_cast<size_t>(i) * a_row_stride;
            crow[r] = c + static_cast<size_t>(i) * n;
        } else {
            arow[r] = a + static_cast<size_t>(m - 1) * a_row_stride;
            crow[r] = scratch;
        }
    }
    i64 j = 0;
    auto strip = [&](auto width_tag) {
        constexpr int W = decltype(width_tag)::value;
        double acc0[W], acc1[W], acc2[W], acc3[W];
        if (accumulate) {
            for (int t = 0; t < W; ++t) { acc0[t] = crow[0][j + t]; acc1[t] = crow[1][j + t]; acc2[t] = crow[2][j + t]; acc3[t] = crow[3][j + t]; }
        } else {
            for (int t = 0; t < W; ++t) { acc0[t] = 0.0; acc1[t] = 0.0; acc2[t] = 0.0; acc3[t] = 0.0; }
        }
        for (i64 kk = 0; kk < k; ++kk) {
            const double* brow = b + static_cast<size_t>(kk) * n + j;
            const i64 ka = kk * ak_stride;
            double a0 = arow[0][ka], a1 = arow[1][ka], a2 = arow[2][ka], a3 = arow[3][ka];
#pragma omp simd
            for (int t = 0; t < W; ++t) {
                double bv = brow[t];
                acc0[t] += a0 * bv;
                acc1[t] += a1 * bv;
                acc2[t] += a2 * bv;
                acc3[t] += a3 * bv;
            }
        }
        for (int t = 0; t < W; ++t) { crow[0][j + t] = acc0[t]; crow[1][j + t] = acc1[t]; crow[2][j + t] = acc2[t]; crow[3][j + t] = acc3[t]; }
        j += W;
    };
    while (j + 16 <= n) strip(std::integral_constant<int, 16>{});
    if (j + 8 <= n) strip(std::integral_constant<int, 8>{});
    if (j + 4 <= n) strip(std::integral_constant<int, 4>{});
    for (; j < n; ++j) {
        double acc0, acc1, acc2, acc3;
        if (accumulate) { acc0 = crow[0][j]; acc1 = crow[1][j]; acc2 = crow[2][j]; acc3 = crow[3][j]; }
        else { acc0 = acc1 = acc2 = acc3 = 0.0; }
        for (i64 kk = 0; kk < k; ++kk) {
            double bv = b[static_cast<size_t>(kk) * n + j];
            const i64 ka = kk * ak_stride;
            acc0 = std::fma(arow[0][ka], bv, acc0);
            acc1 = std::fma(arow[1][ka], bv, acc1);
            acc2 = std::fma(arow[2][ka], bv, acc2);
            acc3 = std::fma(arow[3][ka], bv, acc3);
        }
        crow[0][j] = acc0; crow[1][j] = acc1; crow[2][j] = acc2; crow[3][j] = acc3;
    }
}

// NT micro-kernel: one C row strip against 4 rows of B, lane partials over k
// combined in a fixed order.
void gemm_nt_row(i64 i, i64 m, i64 n, i64 k, const double* a, const double* b, double* c) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    i64 j = 0;
    for (; j + 4 <= n; j += 4) {
        const double* b0 = b + static_cast<size_t>(j) * k;
        const double* b1 = b0 + k;
        const double* b2 = b1 + k;
        const double* b3 = b2 + k;
        double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
#pragma omp simd reduction(+ : acc0, acc1, acc2, acc3)
        for (i64 kk = 0; kk < k; ++kk) {
            double av = arow[kk];
            acc0 += av * b0[kk];
            acc1 += av * b1[kk];
            acc2 += av * b2[kk];
            acc3 += av * b3[kk];
        }
        crow[j] = acc0;
        crow[j + 1] = acc1;
        crow[j + 2] = acc2;
        crow[j + 3] = acc3;
    }
    for (; j < n; ++j) {
        const double* brow = b + static_cast<size_t>(j) * k;
        double acc = 0.0;
#pragma omp simd reduction(+ : acc)
        for (i64 kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
        crow[j] = acc;
    }
    (void)m;
}

}  // namespace

void gemm_nn_serial(i64 m, i64 n, i64 k, const double* a, const double* b, double* c,
                    bool accumulate) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        if (!accumulate) std::memset(c, 0, static_cast<size_t>(m) * n * sizeof(double));
        return;
    }
    // Scratch is only touched by the dummy rows of the final group.
    static thread_local std::vector<double> scratch;
    if (m % kRowBlock != 0 && static_cast<i64>(scratch.size()) < n)
        scratch.resize(static_cast<size_t>(n));
    for (i64 i0 = 0; i0 < m; i0 += kRowBlock)
        gemm_row_group(i0, m, n, k, a, k, 1, b, c, accumulate, scratch.data());
}

void gemm_nn(i64 m, i64 n, i64 k, const double* a, const double* b, double* c,
             bool accumulate) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        if (!accumulate) std::memset(c, 0, static_cast<size_t>(m) * n * sizeof(double));
        return;
    }
    i64 ngroups = (m + kRowBlock - 1) / kRowBlock;
    if (ngroups < 4 || static_cast<double>(m) * n * k < 65536.0) {
        gemm_nn_serial(m, n, k, a, b, c, accumulate);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel
    {
        std::vector<double> scratch(static_cast<size_t>(n));
#pragma omp for schedule(static)
        for (i64 g = 0; g < ngroups; ++g)
            gemm_row_group(g * kRowBlock, m, n, k, a, k, 1, b, c, accumulate, scratch.data());
    }
#else
    gemm_nn_serial(m, n, k, a, b, c, accumulate);
#endif
}

void gemm_tn_serial(i64 m, i64 n, i64 k, const double* a, const double* b, double* c) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        std::memset(c, 0, static_cast<size_t>(m) * n * sizeof(double));
        return;
    }
    static thread_local std::vector<double> scratch;
    if (m % kRowBlock != 0 && static_cast<i64>(scratch.size()) < n)
        scratch.resize(static_cast<size_t>(n));
    for (i64 i0 = 0; i0 < m; i0 += kRowBlock)
        gemm_row_group(i0, m, n, k, a, 1, m, b, c, false, scratch.data());
}

void gemm_tn(i64 m, i64 n, i64 k, const double* a, const double* b, double* c) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        std::memset(c, 0, static_cast<size_t>(m) * n * sizeof(double));
        return;
    }
    i64 ngroups = (m + kRowBlock - 1) / kRowBlock;
    if (ngroups < 4 || static_cast<double>(m) * n * k < 65536.0) {
        gemm_tn_serial(m, n, k, a, b, c);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel
    {
        std::vector<double> scratch(static_cast<size_t>(n));
#pragma omp for schedule(static)
        for (i64 g = 0; g < ngroups; ++g)
            gemm_row_group(g * kRowBlock, m, n, k, a, 1, m, b, c, false, scratch.data());
    }
#else
    gemm_tn_serial(m, n, k, a, b, c);
#endif
}

void gemm_nt_serial(i64 m, i64 n, i64 k, const double* a, const double* b, double* c) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        std::memset(c, 0, static_cast<size_t>(m) * n * sizeof(double));
        return;
    }
    for (i64 i = 0; i < m; ++i) gemm_nt_row(i, m, n, k, a, b, c);
}

void gemm_nt(i64 m, i64 n, i64 k, const double* a, const double* b, double* c) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        std::memset(c, 0, static_cast<size_t>(m) * n * sizeof(double));
        return;
    }
    if (m < 8 || static_cast<double>(m) * n * k < 65536.0) {
        gemm_nt_serial(m, n, k, a, b, c);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < m; ++i) gemm_nt_row(i, m, n, k, a, b, c);
#else
    gemm_nt_serial(m, n, k, a, b, c);
#endif
}

void transpose2d(i64 m, i64 n, const double* in, double* out) {
    constexpr i64 kTile = 32;
    for (i64 i0 = 0; i0 < m; i0 += kTile)
        for (i64 j0 = 0; j0 < n; j0 += kTile) {
            i64 i1 = std::min(i0 + kTile, m), j1 = std::min(j0 + kTile, n);
            for (i64 i = i0; i < i1; ++i)
                for (i64 j = j0; j < j1; ++j)
                    out[j * m + i] = in[i * n + j];
        }
}

}  // namespace pad
