#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace pad {

using i64 = std::int64_t;
using Shape = std::vector<i64>;

i64 shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of 64-bit floats. Rank 0 denotes a scalar.
/// Storage is shared between copies; tensors handed to the graph are
/// treated as immutable. Use `clone()` before mutating a shared value.
class Tensor {
public:
    Tensor() : Tensor(Shape{}) {}
    explicit Tensor(Shape shape);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    /// Uninitialized storage for kernel outputs that overwrite every element.
    static Tensor uninitialized(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v);
    static Tensor from(Shape shape, std::vector<double> values);

    const Shape& shape() const { return shape_; }
    i64 rank() const { return static_cast<i64>(shape_.size()); }
    i64 numel() const { return numel_; }
    i64 extent(i64 axis) const { return shape_[static_cast<size_t>(axis)]; }

    double* data() { return data_.get(); }
    const double* data() const { return data_.get(); }

    double& operator[](i64 i) { return data_.get()[i]; }
    double operator[](i64 i) const { return data_.get()[i]; }

    /// Scalar read; requires numel() == 1.
    double item() const;

    Tensor clone() const;
    /// Same storage under a new shape (element counts must match).
    Tensor reshaped_view(Shape shape) const;
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;
    double abs_max() const;

    std::string shape_str() const { return pad::shape_str(shape_); }

private:
    Shape shape_;
    i64 numel_ = 0;
    std::shared_ptr<double[]> data_;
};

/// C[M,N] (+)= A[M,K] @ B[K,N], all row-major contiguous.
///
/// Every output element accumulates over k in ascending order through one
/// code path, so a row's result depends only on the row's values: identical
/// rows give bit-identical outputs for any M and any thread count.
void gemm_nn(i64 m, i64 n, i64 k, const double* a, const double* b, double* c,
             bool accumulate);

/// Single-threaded variant for use inside batched loops.
void gemm_nn_serial(i64 m, i64 n, i64 k, const double* a, const double* b,
                    double* c, bool accumulate);

/// C[M,N] = A^T[M,K] @ B[K,N] with A stored as [K,M] row-major. Same
/// determinism guarantees as gemm_nn (ascending-k accumulation per element).
void gemm_tn(i64 m, i64 n, i64 k, const double* a, const double* b, double* c);
void gemm_tn_serial(i64 m, i64 n, i64 k, const double* a, const double* b, double* c);

/// C[M,N] = A[M,K] @ B^T[K,N] with B stored as [N,K] row-major. Dot-product
/// form: lane partials over k with a fixed combine order.
void gemm_nt(i64 m, i64 n, i64 k, const double* a, const double* b, double* c);
void gemm_nt_serial(i64 m, i64 n, i64 k, const double* a, const double* b, double* c);

/// out[j,i] = in[i,j] for an M x N row-major matrix.
void transpose2d(i64 m, i64 n, const double* in, double* out);

}  // namespace pad
