#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cnnf/error.hpp"
#include "cnnf/param.hpp"
#include "cnnf/tensor.hpp"

namespace cnnf {

template <typename T>
struct LossResultT {
    double loss = 0.0;
    TensorT<T> dlogits;
};

using LossResult = LossResultT<float>;

// Mean softmax cross-entropy over the batch, computed in the shifted
// log-sum-exp form; dlogits = (softmax - onehot) / N.
template <typename T>
LossResultT<T> softmax_crossentropy(const TensorT<T>& logits, const std::vector<std::int64_t>& labels) {
    if (logits.rank() != 2) {
        throw ShapeError("softmax_crossentropy: logits must be [N,K], got " + shape_str(logits.shape()));
    }
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n) {
        throw ShapeError("softmax_crossentropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    }
    LossResultT<T> out;
    out.dlogits = TensorT<T>(logits.shape());
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t label = labels[static_cast<std::size_t>(i)];
        if (label < 0 || label >= k) {
            throw ValueError("label " + std::to_string(label) + " outside [0, " + std::to_string(k - 1) +
                             "] at row " + std::to_string(i));
        }
        const T* row = logits.data() + i * k;
        T mx = row[0];
        for (std::int64_t j = 1; j < k; ++j) mx = row[j] > mx ? row[j] : mx;
        double sumexp = 0.0;
        for (std::int64_t j = 0; j < k; ++j) sumexp += std::exp(static_cast<double>(row[j] - mx));
        const double logz = std::log(sumexp);
        total += logz - static_cast<double>(row[label] - mx);
        T* drow = out.dlogits.data() + i * k;
        for (std::int64_t j = 0; j < k; ++j) {
            const double p = std::exp(static_cast<double>(row[j] - mx)) / sumexp;
            const double target = (j == label) ? 1.0 : 0.0;
            drow[j] = static_cast<T>((p - target) / static_cast<double>(n));
        }
    }
    out.loss = total / static_cast<double>(n);
    return out;
}

double accuracy(const Tensor& logits, const std::vector<std::int64_t>& labels);

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moment tensors are created on the first step
// and must keep matching the parameter list afterwards; per-element math
// runs in double before storing back to float.
class AdamState {
public:
    explicit AdamState(AdamConfig config = {}) : config_(config) {}

    void step(const std::vector<ParamRef>& params);

    const AdamConfig& config() const { return config_; }
    std::int64_t t() const { return t_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }

    // Checkpoint restore; moment order must match the parameter order used
    // by step().
    void restore(std::int64_t t, std::vector<Tensor> m, std::vector<Tensor> v);

private:
    AdamConfig config_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

}  // namespace cnnf
