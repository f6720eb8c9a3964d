#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cnnf/error.hpp"
#include "cnnf/param.hpp"
#include "cnnf/rng.hpp"
#include "cnnf/tensor.hpp"

namespace cnnf {

enum class Mode { kTrain, kEval };

// Per-call training context. The seed and step key the dropout streams, so a
// step replayed after checkpoint resume regenerates identical masks.
struct StepContext {
    Mode mode = Mode::kTrain;
    std::uint64_t seed = 0;
    std::int64_t step = 0;
};

// Sequential layer interface. forward() caches intermediates only in train
// mode; backward() consumes that cache exactly once.
template <typename T>
class LayerT {
public:
    virtual ~LayerT() = default;

    const std::string& name() const { return name_; }
    void set_name(std::string n) { name_ = std::move(n); }

    virtual Shape output_shape(const Shape& in) const = 0;
    virtual TensorT<T> forward(const TensorT<T>& x, const StepContext& ctx) = 0;
    virtual TensorT<T> backward(const TensorT<T>& dy) = 0;

    // Trainable tensors paired with gradient slots.
    virtual std::vector<ParamRefT<T>> params() { return {}; }
    // Non-trainable tensors that still belong in checkpoints (BN running
    // statistics).
    virtual std::vector<ParamRefT<T>> state_tensors() { return {}; }

protected:
    void cache_ready() { has_cache_ = true; }
    void cache_clear() { has_cache_ = false; }
    void require_cache() const {
        if (!has_cache_) {
            throw StateError(name_ + ": backward without a cached train-mode forward");
        }
    }

private:
    std::string name_;
    bool has_cache_ = false;
};

namespace nn_detail {

// [F, N*H*W] row-per-filter layout <-> [N,F,H,W].
template <typename T>
TensorT<T> nchw_from_fcol(const TensorT<T>& y2d, std::int64_t n, std::int64_t h, std::int64_t w) {
    const std::int64_t f = y2d.dim(0);
    TensorT<T> y(Shape{n, f, h, w});
    for (std::int64_t ni = 0; ni < n; ++ni) {
        for (std::int64_t fi = 0; fi < f; ++fi) {
            const T* src = y2d.data() + fi * (n * h * w) + ni * h * w;
            T* dst = y.data() + (ni * f + fi) * h * w;
            for (std::int64_t i = 0; i < h * w; ++i) dst[i] = src[i];
        }
    }
    return y;
}

template <typename T>
TensorT<T> fcol_from_nchw(const TensorT<T>& y) {
    const std::int64_t n = y.dim(0), f = y.dim(1), h = y.dim(2), w = y.dim(3);
    TensorT<T> y2d(Shape{f, n * h * w});
    for (std::int64_t ni = 0; ni < n; ++ni) {
        for (std::int64_t fi = 0; fi < f; ++fi) {
            const T* src = y.data() + (ni * f + fi) * h * w;
            T* dst = y2d.data() + fi * (n * h * w) + ni * h * w;
            for (std::int64_t i = 0; i < h * w; ++i) dst[i] = src[i];
        }
    }
    return y2d;
}

}  // namespace nn_detail

// 3x3 convolution, padding 1, stride 1, realized as im2col + one GEMM. The
// backward pass recomputes the column matrix from the cached input instead
// of caching it (the columns are ~9x the input size).
template <typename T>
class Conv3x3T : public LayerT<T> {
public:
    Conv3x3T(std::int64_t in_channels, std::int64_t out_channels, bool with_bias, Rng init_rng)
        : in_(in_channels), out_(out_channels), with_bias_(with_bias) {
        weight_ = TensorT<T>(Shape{out_, in_, 3, 3});
        wgrad_ = TensorT<T>(weight_.shape());
        const double stddev = std::sqrt(2.0 / static_cast<double>(in_ * 9));
        for (std::int64_t i = 0; i < weight_.size(); ++i) {
            weight_[i] = static_cast<T>(init_rng.next_normal(0.0, stddev));
        }
        if (with_bias_) {
            bias_ = TensorT<T>(Shape{out_});
            bgrad_ = TensorT<T>(bias_.shape());
        }
    }

    Shape output_shape(const Shape& in) const override {
        if (in.size() != 4 || in[1] != in_) {
            throw ShapeError(this->name() + ": expected [N," + std::to_string(in_) +
                             ",H,W], got " + shape_str(in));
        }
        return Shape{in[0], out_, in[2], in[3]};
    }

    TensorT<T> forward(const TensorT<T>& x, const StepContext& ctx) override {
        output_shape(x.shape());
        const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        im2col_into(x, cols_);
        matmul_into(weight_.reshaped(Shape{out_, in_ * 9}), cols_, y2d_);
        TensorT<T> y = nn_detail::nchw_from_fcol(y2d_, n, h, w);
        if (with_bias_) {
            for (std::int64_t ni = 0; ni < n; ++ni) {
                for (std::int64_t fi = 0; fi < out_; ++fi) {
                    T* plane = y.data() + (ni * out_ + fi) * h * w;
                    for (std::int64_t i = 0; i < h * w; ++i) plane[i] += bias_[fi];
                }
            }
        }
        // Backward consumes the columns of the last train-mode forward, so
        // an eval forward (which overwrote them) invalidates the cache.
        if (ctx.mode == Mode::kTrain) {
            x_shape_ = x.shape();
            this->cache_ready();
        } else {
            this->cache_clear();
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& dy) override {
        this->require_cache();
        const std::int64_t n = x_shape_[0], h = x_shape_[2], w = x_shape_[3];
        if (dy.shape() != Shape{n, out_, h, w}) {
            throw ShapeError(this->name() + ": gradient shape " + shape_str(dy.shape()) +
                             " does not match output");
        }
        TensorT<T> dy2d = nn_detail::fcol_from_nchw(dy);
        wgrad_ = matmul_bt(dy2d, cols_).reshaped(weight_.shape());
        if (with_bias_) {
            for (std::int64_t fi = 0; fi < out_; ++fi) {
                double acc = 0.0;
                const T* row = dy2d.data() + fi * (n * h * w);
                for (std::int64_t i = 0; i < n * h * w; ++i) acc += static_cast<double>(row[i]);
                bgrad_[fi] = static_cast<T>(acc);
            }
        }
        matmul_at_into(weight_.reshaped(Shape{out_, in_ * 9}), dy2d, dcols_);
        TensorT<T> dx = col2im(dcols_, x_shape_);
        this->cache_clear();
        return dx;
    }

    std::vector<ParamRefT<T>> params() override {
        std::vector<ParamRefT<T>> out{{this->name() + ".weight", &weight_, &wgrad_}};
        if (with_bias_) out.push_back({this->name() + ".bias", &bias_, &bgrad_});
        return out;
    }

private:
    std::int64_t in_, out_;
    bool with_bias_;
    TensorT<T> weight_, wgrad_, bias_, bgrad_;
    Shape x_shape_;
    // Step workspaces: the im2col columns double as the backward cache (they
    // are exactly what the weight gradient and col2im need), and the column
    // gradient buffer is recycled across steps to avoid large reallocations.
    TensorT<T> cols_, y2d_, dcols_;
};

// Per-channel batch normalization over (batch, height, width).
template <typename T>
class BatchNormT : public LayerT<T> {
public:
    BatchNormT(std::int64_t channels, double eps = 1e-5, double momentum = 0.1)
        : c_(channels), eps_(eps), momentum_(momentum) {
        gamma_ = TensorT<T>(Shape{c_}, T(1));
        beta_ = TensorT<T>(Shape{c_});
        ggrad_ = TensorT<T>(Shape{c_});
        bgrad_ = TensorT<T>(Shape{c_});
        running_mean_ = TensorT<T>(Shape{c_});
        running_var_ = TensorT<T>(Shape{c_}, T(1));
    }

    Shape output_shape(const Shape& in) const override {
        if (in.size() != 4 || in[1] != c_) {
            throw ShapeError(this->name() + ": expected [N," + std::to_string(c_) + ",H,W], got " +
                             shape_str(in));
        }
        return in;
    }

    TensorT<T> forward(const TensorT<T>& x, const StepContext& ctx) override {
        output_shape(x.shape());
        const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        TensorT<T> y(x.shape());
        if (ctx.mode == Mode::kTrain) {
            auto [mean, var] = channel_moments(x);
            invstd_ = TensorT<T>(Shape{c_});
            for (std::int64_t ci = 0; ci < c_; ++ci) {
                invstd_[ci] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[ci]) + eps_));
                running_mean_[ci] = static_cast<T>((1.0 - momentum_) * static_cast<double>(running_mean_[ci]) +
                                                   momentum_ * static_cast<double>(mean[ci]));
                running_var_[ci] = static_cast<T>((1.0 - momentum_) * static_cast<double>(running_var_[ci]) +
                                                  momentum_ * static_cast<double>(var[ci]));
            }
            xhat_ = TensorT<T>(x.shape());
            for (std::int64_t ni = 0; ni < n; ++ni) {
                for (std::int64_t ci = 0; ci < c_; ++ci) {
                    const T* src = x.data() + (ni * c_ + ci) * h * w;
                    T* xh = xhat_.data() + (ni * c_ + ci) * h * w;
                    T* dst = y.data() + (ni * c_ + ci) * h * w;
                    for (std::int64_t i = 0; i < h * w; ++i) {
                        xh[i] = (src[i] - mean[ci]) * invstd_[ci];
                        dst[i] = gamma_[ci] * xh[i] + beta_[ci];
                    }
                }
            }
            this->cache_ready();
        } else {
            for (std::int64_t ni = 0; ni < n; ++ni) {
                for (std::int64_t ci = 0; ci < c_; ++ci) {
                    const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var_[ci]) + eps_));
                    const T* src = x.data() + (ni * c_ + ci) * h * w;
                    T* dst = y.data() + (ni * c_ + ci) * h * w;
                    for (std::int64_t i = 0; i < h * w; ++i) {
                        dst[i] = gamma_[ci] * (src[i] - running_mean_[ci]) * inv + beta_[ci];
                    }
                }
            }
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& dy) override {
        this->require_cache();
        if (!dy.same_shape(xhat_)) {
            throw ShapeError(this->name() + ": gradient shape " + shape_str(dy.shape()) +
                             " does not match output");
        }
        const std::int64_t n = dy.dim(0), h = dy.dim(2), w = dy.dim(3);
        const double count = static_cast<double>(n * h * w);
        TensorT<T> dx(dy.shape());
        for (std::int64_t ci = 0; ci < c_; ++ci) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::int64_t ni = 0; ni < n; ++ni) {
                const T* dsrc = dy.data() + (ni * c_ + ci) * h * w;
                const T* xh = xhat_.data() + (ni * c_ + ci) * h * w;
                for (std::int64_t i = 0; i < h * w; ++i) {
                    sum_dy += static_cast<double>(dsrc[i]);
                    sum_dy_xhat += static_cast<double>(dsrc[i]) * static_cast<double>(xh[i]);
                }
            }
            bgrad_[ci] = static_cast<T>(sum_dy);
            ggrad_[ci] = static_cast<T>(sum_dy_xhat);
            // dx = gamma*invstd/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
            const double k = static_cast<double>(gamma_[ci]) * static_cast<double>(invstd_[ci]) / count;
            for (std::int64_t ni = 0; ni < n; ++ni) {
                const T* dsrc = dy.data() + (ni * c_ + ci) * h * w;
                const T* xh = xhat_.data() + (ni * c_ + ci) * h * w;
                T* ddst = dx.data() + (ni * c_ + ci) * h * w;
                for (std::int64_t i = 0; i < h * w; ++i) {
                    ddst[i] = static_cast<T>(k * (count * static_cast<double>(dsrc[i]) - sum_dy -
                                                  static_cast<double>(xh[i]) * sum_dy_xhat));
                }
            }
        }
        xhat_ = TensorT<T>();
        invstd_ = TensorT<T>();
        this->cache_clear();
        return dx;
    }

    std::vector<ParamRefT<T>> params() override {
        return {{this->name() + ".gamma", &gamma_, &ggrad_}, {this->name() + ".beta", &beta_, &bgrad_}};
    }

    std::vector<ParamRefT<T>> state_tensors() override {
        return {{this->name() + ".running_mean", &running_mean_, nullptr},
                {this->name() + ".running_var", &running_var_, nullptr}};
    }

private:
    std::int64_t c_;
    double eps_, momentum_;
    TensorT<T> gamma_, beta_, ggrad_, bgrad_;
    TensorT<T> running_mean_, running_var_;
    TensorT<T> xhat_, invstd_;
};

template <typename T>
class ReluT : public LayerT<T> {
public:
    Shape output_shape(const Shape& in) const override { return in; }

    TensorT<T> forward(const TensorT<T>& x, const StepContext& ctx) override {
        TensorT<T> y(x.shape());
        for (std::int64_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
        if (ctx.mode == Mode::kTrain) {
            x_ = x;
            this->cache_ready();
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& dy) override {
        this->require_cache();
        if (!dy.same_shape(x_)) {
            throw ShapeError(this->name() + ": gradient shape mismatch");
        }
        TensorT<T> dx(dy.shape());
        // Inputs exactly at 0 pass no gradient.
        for (std::int64_t i = 0; i < dy.size(); ++i) dx[i] = x_[i] > T(0) ? dy[i] : T(0);
        x_ = TensorT<T>();
        this->cache_clear();
        return dx;
    }

private:
    TensorT<T> x_;
};

// 2x2 max pooling with stride 2. Ties resolve to the first element of the
// window in row-major order, and backward routes gradient only there.
template <typename T>
class MaxPool2T : public LayerT<T> {
public:
    Shape output_shape(const Shape& in) const override {
        if (in.size() != 4) {
            throw ShapeError(this->name() + ": expected [N,C,H,W], got " + shape_str(in));
        }
        if (in[2] % 2 != 0 || in[3] % 2 != 0) {
            throw ShapeError(this->name() + ": spatial extents must be even, got " + shape_str(in));
        }
        return Shape{in[0], in[1], in[2] / 2, in[3] / 2};
    }

    TensorT<T> forward(const TensorT<T>& x, const StepContext& ctx) override {
        const Shape out_shape = output_shape(x.shape());
        const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        TensorT<T> y(out_shape);
        std::vector<std::int64_t> argmax(static_cast<std::size_t>(y.size()));
        std::int64_t oi = 0;
        for (std::int64_t ni = 0; ni < n; ++ni) {
            for (std::int64_t ci = 0; ci < c; ++ci) {
                const T* plane = x.data() + (ni * c + ci) * h * w;
                const std::int64_t base = (ni * c + ci) * h * w;
                for (std::int64_t oh = 0; oh < h / 2; ++oh) {
                    for (std::int64_t ow = 0; ow < w / 2; ++ow) {
                        std::int64_t best_idx = (oh * 2) * w + ow * 2;
                        T best = plane[best_idx];
                        for (int dh = 0; dh < 2; ++dh) {
                            for (int dw = 0; dw < 2; ++dw) {
                                const std::int64_t idx = (oh * 2 + dh) * w + (ow * 2 + dw);
                                if (plane[idx] > best) {  // strict: first of a tie wins
                                    best = plane[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        y[oi] = best;
                        argmax[static_cast<std::size_t>(oi)] = base + best_idx;
                        ++oi;
                    }
                }
            }
        }
        if (ctx.mode == Mode::kTrain) {
            argmax_ = std::move(argmax);
            in_shape_ = x.shape();
            this->cache_ready();
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& dy) override {
        this->require_cache();
        if (static_cast<std::size_t>(dy.size()) != argmax_.size()) {
            throw ShapeError(this->name() + ": gradient shape mismatch");
        }
        TensorT<T> dx(in_shape_);
        for (std::int64_t i = 0; i < dy.size(); ++i) dx[argmax_[static_cast<std::size_t>(i)]] += dy[i];
        argmax_.clear();
        this->cache_clear();
        return dx;
    }

private:
    std::vector<std::int64_t> argmax_;
    Shape in_shape_;
};

// Inverted dropout: survivors are scaled by 1/(1-rate) at train time so eval
// is the identity. The mask stream is keyed by (seed, layer index, step).
template <typename T>
class DropoutT : public LayerT<T> {
public:
    DropoutT(double rate, std::int64_t layer_index) : rate_(rate), layer_index_(layer_index) {
        if (!(rate >= 0.0 && rate < 1.0)) {
            throw ConfigError("dropout rate " + std::to_string(rate) + " outside [0, 1)");
        }
    }

    Shape output_shape(const Shape& in) const override { return in; }

    TensorT<T> forward(const TensorT<T>& x, const StepContext& ctx) override {
        if (ctx.mode == Mode::kEval || rate_ == 0.0) {
            if (ctx.mode == Mode::kTrain) {
                mask_ = TensorT<T>(x.shape(), T(1));
                this->cache_ready();
            }
            return x;
        }
        Rng rng = make_stream(ctx.seed, Stream::kDropout, static_cast<std::uint64_t>(layer_index_),
                              static_cast<std::uint64_t>(ctx.step));
        const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
        mask_ = TensorT<T>(x.shape());
        TensorT<T> y(x.shape());
        for (std::int64_t i = 0; i < x.size(); ++i) {
            mask_[i] = rng.next_double() >= rate_ ? keep_scale : T(0);
            y[i] = x[i] * mask_[i];
        }
        this->cache_ready();
        return y;
    }

    TensorT<T> backward(const TensorT<T>& dy) override {
        this->require_cache();
        if (!dy.same_shape(mask_)) {
            throw ShapeError(this->name() + ": gradient shape mismatch");
        }
        TensorT<T> dx = mul(dy, mask_);
        mask_ = TensorT<T>();
        this->cache_clear();
        return dx;
    }

    double rate() const { return rate_; }

private:
    double rate_;
    std::int64_t layer_index_;
    TensorT<T> mask_;
};

template <typename T>
class FlattenT : public LayerT<T> {
public:
    Shape output_shape(const Shape& in) const override {
        if (in.size() < 2) {
            throw ShapeError(this->name() + ": expected rank >= 2, got " + shape_str(in));
        }
        std::int64_t rest = 1;
        for (std::size_t i = 1; i < in.size(); ++i) rest *= in[i];
        return Shape{in[0], rest};
    }

    TensorT<T> forward(const TensorT<T>& x, const StepContext& ctx) override {
        if (ctx.mode == Mode::kTrain) {
            in_shape_ = x.shape();
            this->cache_ready();
        }
        return x.reshaped(output_shape(x.shape()));
    }

    TensorT<T> backward(const TensorT<T>& dy) override {
        this->require_cache();
        TensorT<T> dx = dy.reshaped(in_shape_);
        this->cache_clear();
        return dx;
    }

private:
    Shape in_shape_;
};

// Fully connected layer: y = x W + b for x[N,D], W[D,K].
template <typename T>
class DenseT : public LayerT<T> {
public:
    DenseT(std::int64_t in_features, std::int64_t out_features, Rng init_rng)
        : in_(in_features), out_(out_features) {
        weight_ = TensorT<T>(Shape{in_, out_});
        wgrad_ = TensorT<T>(weight_.shape());
        bias_ = TensorT<T>(Shape{out_});
        bgrad_ = TensorT<T>(bias_.shape());
        const double stddev = std::sqrt(2.0 / static_cast<double>(in_));
        for (std::int64_t i = 0; i < weight_.size(); ++i) {
            weight_[i] = static_cast<T>(init_rng.next_normal(0.0, stddev));
        }
    }

    Shape output_shape(const Shape& in) const override {
        if (in.size() != 2 || in[1] != in_) {
            throw ShapeError(this->name() + ": expected [N," + std::to_string(in_) + "], got " +
                             shape_str(in));
        }
        return Shape{in[0], out_};
    }

    TensorT<T> forward(const TensorT<T>& x, const StepContext& ctx) override {
        output_shape(x.shape());
        TensorT<T> y = matmul(x, weight_);
        for (std::int64_t i = 0; i < x.dim(0); ++i) {
            T* row = y.data() + i * out_;
            for (std::int64_t j = 0; j < out_; ++j) row[j] += bias_[j];
        }
        if (ctx.mode == Mode::kTrain) {
            x_ = x;
            this->cache_ready();
        }
        return y;
    }

    TensorT<T> backward(const TensorT<T>& dy) override {
        this->require_cache();
        if (dy.rank() != 2 || dy.dim(0) != x_.dim(0) || dy.dim(1) != out_) {
            throw ShapeError(this->name() + ": gradient shape " + shape_str(dy.shape()) +
                             " does not match output");
        }
        wgrad_ = matmul_at(x_, dy);
        for (std::int64_t j = 0; j < out_; ++j) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < dy.dim(0); ++i) acc += static_cast<double>(dy.at2(i, j));
            bgrad_[j] = static_cast<T>(acc);
        }
        TensorT<T> dx = matmul_bt(dy, weight_);
        x_ = TensorT<T>();
        this->cache_clear();
        return dx;
    }

    std::vector<ParamRefT<T>> params() override {
        return {{this->name() + ".weight", &weight_, &wgrad_}, {this->name() + ".bias", &bias_, &bgrad_}};
    }

private:
    std::int64_t in_, out_;
    TensorT<T> weight_, wgrad_, bias_, bgrad_;
    TensorT<T> x_;
};

struct BlockSpec {
    int convs = 2;
    int filters = 64;
};

struct ModelConfig {
    std::vector<BlockSpec> blocks = {{2, 64}, {2, 128}, {2, 256}};
    bool use_batchnorm = true;
    double conv_dropout = 0.25;
    double fc_dropout = 0.5;
    std::int64_t fc_hidden = 512;
    std::int64_t input_channels = 3;
    std::int64_t input_dim = 32;
    std::int64_t classes = 10;

    void validate() const {
        if (blocks.empty()) throw ConfigError("model config: at least one block required");
        for (const auto& b : blocks) {
            if (b.convs < 1) throw ConfigError("model config: block conv count must be >= 1");
            if (b.filters < 1) throw ConfigError("model config: block filter count must be >= 1");
        }
        if (!(conv_dropout >= 0.0 && conv_dropout < 1.0) || !(fc_dropout >= 0.0 && fc_dropout < 1.0)) {
            throw ConfigError("model config: dropout rates must lie in [0, 1)");
        }
        if (fc_hidden < 1 || input_channels < 1 || classes < 2) {
            throw ConfigError("model config: head sizes out of range");
        }
        std::int64_t dim = input_dim;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (dim < 2 || dim % 2 != 0) {
                throw ConfigError("model config: spatial extent " + std::to_string(dim) +
                                  " cannot be pooled at block " + std::to_string(i + 1));
            }
            dim /= 2;
        }
    }

    std::int64_t flattened_size() const {
        std::int64_t dim = input_dim;
        for (std::size_t i = 0; i < blocks.size(); ++i) dim /= 2;
        return blocks.back().filters * dim * dim;
    }
};

// Ordered layer stack plus the bookkeeping the trainer needs.
template <typename T>
class ModelT {
public:
    TensorT<T> forward(const TensorT<T>& x, const StepContext& ctx) {
        return forward_impl(x, ctx, nullptr);
    }

    // As forward, but records every layer's named output (activation taps).
    TensorT<T> forward_traced(const TensorT<T>& x, const StepContext& ctx,
                              std::vector<std::pair<std::string, TensorT<T>>>& taps) {
        return forward_impl(x, ctx, &taps);
    }

    // Reverse sweep; fills every parameter gradient exactly once and returns
    // the input gradient.
    TensorT<T> backward(const TensorT<T>& dlogits) {
        if (!train_pass_) {
            throw StateError("model backward requires a preceding train-mode forward");
        }
        train_pass_ = false;
        TensorT<T> g = dlogits;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
            g = (*it)->backward(g);
        }
        return g;
    }

    std::vector<ParamRefT<T>> params() {
        std::vector<ParamRefT<T>> out;
        for (auto& l : layers_) {
            for (auto& p : l->params()) out.push_back(p);
        }
        return out;
    }

    std::vector<ParamRefT<T>> state_tensors() {
        std::vector<ParamRefT<T>> out;
        for (auto& l : layers_) {
            for (auto& p : l->state_tensors()) out.push_back(p);
        }
        return out;
    }

    std::int64_t param_count() {
        std::int64_t n = 0;
        for (auto& p : params()) n += p.value->size();
        return n;
    }

    Shape output_shape(Shape in) const {
        for (const auto& l : layers_) in = l->output_shape(in);
        return in;
    }

    std::vector<std::unique_ptr<LayerT<T>>>& layers() { return layers_; }
    const std::vector<std::unique_ptr<LayerT<T>>>& layers() const { return layers_; }

private:
    TensorT<T> forward_impl(const TensorT<T>& x, const StepContext& ctx,
                            std::vector<std::pair<std::string, TensorT<T>>>* taps) {
        TensorT<T> h = x;
        for (auto& l : layers_) {
            h = l->forward(h, ctx);
            if (taps) taps->emplace_back(l->name(), h);
        }
        train_pass_ = ctx.mode == Mode::kTrain;
        return h;
    }

    std::vector<std::unique_ptr<LayerT<T>>> layers_;
    bool train_pass_ = false;
};

using Model = ModelT<float>;

// Assembles Conv[->BN]->ReLU blocks with trailing MaxPool->Dropout, then the
// Flatten->Dense->ReLU->Dropout->Dense head. Layer indices (positions in the
// stack) key both the init and dropout streams, so a given (config, seed)
// always produces the same network.
template <typename T>
ModelT<T> build_model_t(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelT<T> model;
    auto& layers = model.layers();
    std::int64_t conv_no = 0, bn_no = 0, fc_no = 0;
    auto add = [&](std::unique_ptr<LayerT<T>> layer, const std::string& name) {
        layer->set_name(name);
        layers.push_back(std::move(layer));
    };
    auto layer_index = [&] { return static_cast<std::int64_t>(layers.size()); };

    std::int64_t channels = config.input_channels;
    std::int64_t block_no = 0;
    for (const auto& block : config.blocks) {
        ++block_no;
        for (int i = 0; i < block.convs; ++i) {
            Rng init = make_stream(seed, Stream::kInit, static_cast<std::uint64_t>(layer_index()));
            add(std::make_unique<Conv3x3T<T>>(channels, block.filters, !config.use_batchnorm, init),
                "conv" + std::to_string(++conv_no));
            channels = block.filters;
            if (config.use_batchnorm) {
                add(std::make_unique<BatchNormT<T>>(channels), "bn" + std::to_string(++bn_no));
            }
            add(std::make_unique<ReluT<T>>(), "relu_conv" + std::to_string(conv_no));
        }
        add(std::make_unique<MaxPool2T<T>>(), "pool" + std::to_string(block_no));
        if (config.conv_dropout > 0.0) {
            add(std::make_unique<DropoutT<T>>(config.conv_dropout, layer_index()),
                "drop_block" + std::to_string(block_no));
        }
    }
    add(std::make_unique<FlattenT<T>>(), "flatten");
    {
        Rng init = make_stream(seed, Stream::kInit, static_cast<std::uint64_t>(layer_index()));
        add(std::make_unique<DenseT<T>>(config.flattened_size(), config.fc_hidden, init),
            "fc" + std::to_string(++fc_no));
    }
    add(std::make_unique<ReluT<T>>(), "relu_fc1");
    if (config.fc_dropout > 0.0) {
        add(std::make_unique<DropoutT<T>>(config.fc_dropout, layer_index()), "drop_fc1");
    }
    {
        Rng init = make_stream(seed, Stream::kInit, static_cast<std::uint64_t>(layer_index()));
        add(std::make_unique<DenseT<T>>(config.fc_hidden, config.classes, init),
            "fc" + std::to_string(++fc_no));
    }

    // The assembled chain must accept the configured input.
    model.output_shape(Shape{1, config.input_channels, config.input_dim, config.input_dim});
    return model;
}

inline Model build_model(const ModelConfig& config, std::uint64_t seed) {
    return build_model_t<float>(config, seed);
}

}  // namespace cnnf
