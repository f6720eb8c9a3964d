#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cnnf/error.hpp"
#include "cnnf/parallel.hpp"

namespace cnnf {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major N-d array. Activations use [batch, channel, height, width].
// Training runs on float; the double instantiation exists for gradient
// checking.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        for (auto e : shape_) {
            if (e < 1) {
                throw ShapeError("invalid shape " + shape_str(shape_) + ": every extent must be >= 1");
            }
        }
        if (shape_.empty()) {
            throw ShapeError("invalid shape: rank must be >= 1");
        }
        data_.assign(static_cast<std::size_t>(numel(shape_)), fill);
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // 4-d convenience accessors for [N,C,H,W] code paths.
    T& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    const T& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    T& at2(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
    const T& at2(std::int64_t r, std::int64_t c) const {
        return data_[static_cast<std::size_t>(r * shape_[1] + c)];
    }

    bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

    // Re-targets this tensor to a new shape, reusing the existing allocation
    // when the element count allows. Contents are unspecified afterwards;
    // intended for workspaces whose every element gets rewritten.
    void reset(const Shape& shape) {
        for (auto e : shape) {
            if (e < 1) {
                throw ShapeError("invalid shape " + shape_str(shape) + ": every extent must be >= 1");
            }
        }
        if (shape.empty()) {
            throw ShapeError("invalid shape: rank must be >= 1");
        }
        shape_ = shape;
        data_.resize(static_cast<std::size_t>(numel(shape_)));
    }

    TensorT reshaped(Shape new_shape) const {
        if (numel(new_shape) != size()) {
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                             ": element count differs");
        }
        TensorT out;
        out.shape_ = std::move(new_shape);
        out.data_ = data_;
        return out;
    }

    bool all_finite() const {
        for (const T v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Debug-only non-finite detector; compiled in with -DCNNF_FINITE_CHECKS.
template <typename T>
inline void debug_check_finite(const TensorT<T>& t, [[maybe_unused]] const char* where) {
#ifdef CNNF_FINITE_CHECKS
    if (!t.all_finite()) {
        throw NumericError(std::string("non-finite value after ") + where);
    }
#else
    (void)t;
#endif
}

namespace detail {
template <typename T>
inline void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}
}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "add");
    TensorT<T> out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "sub");
    TensorT<T> out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_same_shape(a, b, "mul");
    TensorT<T> out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
    TensorT<T> out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
    return out;
}

namespace detail {
template <typename T>
inline void require_matrix(const TensorT<T>& m, const char* op) {
    if (m.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(m.shape()));
    }
}
}  // namespace detail

namespace detail {
// Row-group extent used by matmul_bt to keep a few A rows hot in cache
// while streaming B rows. Grouping never changes any element's sum.
inline constexpr std::int64_t kRowTile = 4;

// Blocked product core shared by matmul and matmul_at. Writes
// C[i0:i1, :] = A(*)B where the A element (i, kk) is read at
// pa[kk*a_stride + i] when ATrans, else pa[i*a_stride + kk]. B and C are
// walked in contiguous column blocks (vector-friendly, prefetchable) and
// four k terms are applied per C pass to cut load/store traffic. Every
// output element still accumulates its k terms in ascending order — the
// bundle applies them as sequential adds — so results are bitwise identical
// across worker counts and block sizes.
template <bool ATrans, typename T>
void gemm_rows(const T* __restrict pa, std::int64_t a_stride, const T* __restrict pb,
               T* __restrict pc, std::int64_t i0, std::int64_t i1, std::int64_t k, std::int64_t n) {
    constexpr std::int64_t IB = 4;   // A rows per group (kept hot while B streams)
    constexpr std::int64_t JB = 512; // C/B columns per cache block
    auto aval = [&](std::int64_t i, std::int64_t kk) -> T {
        if constexpr (ATrans) {
            return pa[kk * a_stride + i];
        } else {
            return pa[i * a_stride + kk];
        }
    };
    for (std::int64_t jb = 0; jb < n; jb += JB) {
        const std::int64_t jn = std::min(n - jb, JB);
        for (std::int64_t ib = i0; ib < i1; ib += IB) {
            const std::int64_t ie = std::min(i1, ib + IB);
            // k = 0 initializes the block, so no zeroing pass is needed.
            const T* __restrict binit = pb + jb;
            for (std::int64_t i = ib; i < ie; ++i) {
                const T a0 = aval(i, 0);
                T* __restrict cblk = pc + i * n + jb;
                for (std::int64_t j = 0; j < jn; ++j) cblk[j] = a0 * binit[j];
            }
            std::int64_t kk = 1;
            for (; kk + 4 <= k; kk += 4) {
                const T* __restrict b0 = pb + (kk + 0) * n + jb;
                const T* __restrict b1 = pb + (kk + 1) * n + jb;
                const T* __restrict b2 = pb + (kk + 2) * n + jb;
                const T* __restrict b3 = pb + (kk + 3) * n + jb;
                for (std::int64_t i = ib; i < ie; ++i) {
                    const T a0 = aval(i, kk + 0), a1 = aval(i, kk + 1);
                    const T a2 = aval(i, kk + 2), a3 = aval(i, kk + 3);
                    T* __restrict cblk = pc + i * n + jb;
                    for (std::int64_t j = 0; j < jn; ++j) {
                        T v = cblk[j];
                        v += a0 * b0[j];
                        v += a1 * b1[j];
                        v += a2 * b2[j];
                        v += a3 * b3[j];
                        cblk[j] = v;
                    }
                }
            }
            for (; kk < k; ++kk) {
                const T* __restrict brow = pb + kk * n + jb;
                for (std::int64_t i = ib; i < ie; ++i) {
                    const T av = aval(i, kk);
                    T* __restrict cblk = pc + i * n + jb;
                    for (std::int64_t j = 0; j < jn; ++j) cblk[j] += av * brow[j];
                }
            }
        }
    }
}
}  // namespace detail

// C = A * B for A[m,k], B[k,n], overwriting c (reusing its allocation when
// possible). Each output element accumulates its k terms in ascending order,
// so the result is independent of the worker count and bitwise reproducible.
template <typename T>
void matmul_into(const TensorT<T>& a, const TensorT<T>& b, TensorT<T>& c) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    if (&c == &a || &c == &b) throw ValueError("matmul: output must not alias an input");
    c.reset(Shape{m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
    parallel_for(m, [&](std::int64_t i0, std::int64_t i1) {
        detail::gemm_rows<false>(pa, k, pb, pc, i0, i1, k, n);
    });
}

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    TensorT<T> c;
    matmul_into(a, b, c);
    return c;
}

// C = A^T * B for A[k,m], B[k,n] -> [m,n]; k terms ascend per element,
// same reproducibility guarantees as matmul.
template <typename T>
void matmul_at_into(const TensorT<T>& a, const TensorT<T>& b, TensorT<T>& c) {
    detail::require_matrix(a, "matmul_at");
    detail::require_matrix(b, "matmul_at");
    const std::int64_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul_at: inner extents disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    if (&c == &a || &c == &b) throw ValueError("matmul_at: output must not alias an input");
    c.reset(Shape{m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
    parallel_for(m, [&](std::int64_t i0, std::int64_t i1) {
        detail::gemm_rows<true>(pa, m, pb, pc, i0, i1, k, n);
    });
}

template <typename T>
TensorT<T> matmul_at(const TensorT<T>& a, const TensorT<T>& b) {
    TensorT<T> c;
    matmul_at_into(a, b, c);
    return c;
}

// C = A * B^T for A[m,k], B[n,k] -> [m,n]. Each output element is a dot
// product over contiguous rows, computed as eight stride-8 partial sums
// (lane l takes the terms with index = l mod 8), folded pairwise, plus the
// remaining k % 8 terms appended in ascending order. The reduction shape is
// fixed in code, so results are bitwise reproducible and independent of the
// worker count, but they differ from a strictly serial left-to-right sum by
// normal rounding (the shape exists so the lane loop can vectorize).
template <typename T>
TensorT<T> matmul_bt(const TensorT<T>& a, const TensorT<T>& b) {
    detail::require_matrix(a, "matmul_bt");
    detail::require_matrix(b, "matmul_bt");
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) {
        throw ShapeError("matmul_bt: inner extents disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
    }
    TensorT<T> c(Shape{m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
    const std::int64_t k8 = k - (k % 8);
    parallel_for(m, [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t ib = i0; ib < i1; ib += detail::kRowTile) {
            const std::int64_t ie = std::min(i1, ib + detail::kRowTile);
            for (std::int64_t j = 0; j < n; ++j) {
                const T* brow = pb + j * k;
                for (std::int64_t i = ib; i < ie; ++i) {
                    const T* arow = pa + i * k;
                    T lane[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
                    for (std::int64_t kk = 0; kk < k8; kk += 8) {
                        for (int l = 0; l < 8; ++l) lane[l] += arow[kk + l] * brow[kk + l];
                    }
                    T acc = ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
                            ((lane[4] + lane[5]) + (lane[6] + lane[7]));
                    for (std::int64_t kk = k8; kk < k; ++kk) acc += arow[kk] * brow[kk];
                    pc[i * n + j] = acc;
                }
            }
        }
    });
    return c;
}

// Unrolls 3x3 receptive patches (zero padding 1, stride 1) of x[N,C,H,W]
// into a [C*9, N*H*W] matrix: column j = (n*H + oh)*W + ow holds the patch
// around output position (oh, ow) of image n, rows ordered (c, kh, kw).
// Convolution is then one matmul with the [F, C*9] reshaped weight.
// The _into form reuses the allocation of cols when it is large enough.
template <typename T>
void im2col_into(const TensorT<T>& x, TensorT<T>& cols, int kernel = 3, int pad = 1,
                 int stride = 1) {
    if (x.rank() != 4) {
        throw ShapeError("im2col: expected [N,C,H,W], got " + shape_str(x.shape()));
    }
    if (kernel != 3 || pad != 1 || stride != 1) {
        throw ConfigError("im2col: only kernel=3, pad=1, stride=1 is supported");
    }
    if (&cols == &x) throw ValueError("im2col: output must not alias the input");
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t cols_w = n * h * w;
    cols.reset(Shape{c * 9, cols_w});
    T* pc = cols.data();
    const T* px = x.data();
    parallel_for(n, [&](std::int64_t n0, std::int64_t n1) {
        for (std::int64_t ni = n0; ni < n1; ++ni) {
            for (std::int64_t ci = 0; ci < c; ++ci) {
                const T* img = px + (ni * c + ci) * h * w;
                for (int kh = 0; kh < 3; ++kh) {
                    for (int kw = 0; kw < 3; ++kw) {
                        const std::int64_t row = ci * 9 + kh * 3 + kw;
                        T* dst = pc + row * cols_w + ni * h * w;
                        // Each output row is the input row shifted by kw-1
                        // with zeroed edges, so copy the contiguous valid
                        // span instead of testing every element.
                        const std::int64_t ow_lo = std::max<std::int64_t>(0, 1 - kw);
                        const std::int64_t ow_hi = std::min<std::int64_t>(w, w + 1 - kw);
                        for (std::int64_t oh = 0; oh < h; ++oh) {
                            T* drow = dst + oh * w;
                            const std::int64_t ih = oh + kh - 1;
                            if (ih < 0 || ih >= h) {
                                std::fill(drow, drow + w, T(0));
                                continue;
                            }
                            const T* srow = img + ih * w + (ow_lo + kw - 1);
                            std::fill(drow, drow + ow_lo, T(0));
                            std::copy(srow, srow + (ow_hi - ow_lo), drow + ow_lo);
                            std::fill(drow + ow_hi, drow + w, T(0));
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
TensorT<T> im2col(const TensorT<T>& x, int kernel = 3, int pad = 1, int stride = 1) {
    TensorT<T> cols;
    im2col_into(x, cols, kernel, pad, stride);
    return cols;
}

// Adjoint of im2col: scatter-adds each column entry back to the input
// position it was read from. Zero-padding positions are dropped.
template <typename T>
TensorT<T> col2im(const TensorT<T>& cols, const Shape& x_shape, int kernel = 3, int pad = 1,
                  int stride = 1) {
    if (kernel != 3 || pad != 1 || stride != 1) {
        throw ConfigError("col2im: only kernel=3, pad=1, stride=1 is supported");
    }
    if (x_shape.size() != 4) {
        throw ShapeError("col2im: target shape must be [N,C,H,W], got " + shape_str(x_shape));
    }
    const std::int64_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3];
    if (cols.rank() != 2 || cols.dim(0) != c * 9 || cols.dim(1) != n * h * w) {
        throw ShapeError("col2im: columns " + shape_str(cols.shape()) + " do not match target " +
                         shape_str(x_shape));
    }
    TensorT<T> x(x_shape);
    const std::int64_t cols_w = n * h * w;
    const T* pc = cols.data();
    T* px = x.data();
    // Images own disjoint output slices; within one image the accumulation
    // order is fixed (row-major over rows, then positions).
    parallel_for(n, [&](std::int64_t n0, std::int64_t n1) {
        for (std::int64_t ni = n0; ni < n1; ++ni) {
            for (std::int64_t ci = 0; ci < c; ++ci) {
                T* img = px + (ni * c + ci) * h * w;
                for (int kh = 0; kh < 3; ++kh) {
                    for (int kw = 0; kw < 3; ++kw) {
                        const std::int64_t row = ci * 9 + kh * 3 + kw;
                        const T* src = pc + row * cols_w + ni * h * w;
                        for (std::int64_t oh = 0; oh < h; ++oh) {
                            const std::int64_t ih = oh + kh - 1;
                            if (ih < 0 || ih >= h) continue;
                            for (std::int64_t ow = 0; ow < w; ++ow) {
                                const std::int64_t iw = ow + kw - 1;
                                if (iw < 0 || iw >= w) continue;
                                img[ih * w + iw] += src[oh * w + ow];
                            }
                        }
                    }
                }
            }
        }
    });
    return x;
}

// Per-channel mean and biased variance over batch and spatial axes.
// Sums run in double regardless of T, in fixed (n, h, w) order.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> channel_moments(const TensorT<T>& x) {
    if (x.rank() != 4) {
        throw ShapeError("channel_moments: expected [N,C,H,W], got " + shape_str(x.shape()));
    }
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const double count = static_cast<double>(n * h * w);
    TensorT<T> mean(Shape{c});
    TensorT<T> var(Shape{c});
    const T* px = x.data();
    for (std::int64_t ci = 0; ci < c; ++ci) {
        double s = 0.0;
        for (std::int64_t ni = 0; ni < n; ++ni) {
            const T* plane = px + (ni * c + ci) * h * w;
            for (std::int64_t i = 0; i < h * w; ++i) s += static_cast<double>(plane[i]);
        }
        const double mu = s / count;
        double sq = 0.0;
        for (std::int64_t ni = 0; ni < n; ++ni) {
            const T* plane = px + (ni * c + ci) * h * w;
            for (std::int64_t i = 0; i < h * w; ++i) {
                const double d = static_cast<double>(plane[i]) - mu;
                sq += d * d;
            }
        }
        mean[ci] = static_cast<T>(mu);
        var[ci] = static_cast<T>(sq / count);
    }
    return {std::move(mean), std::move(var)};
}

// Row-wise argmax of x[N,K]; ties resolve to the lowest index.
template <typename T>
std::vector<std::int64_t> argmax_rows(const TensorT<T>& x) {
    detail::require_matrix(x, "argmax_rows");
    const std::int64_t n = x.dim(0), k = x.dim(1);
    std::vector<std::int64_t> out(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const T* row = x.data() + i * k;
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < k; ++j) {
            if (row[j] > row[best]) best = j;
        }
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

}  // namespace cnnf
