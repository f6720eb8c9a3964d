#include "cnnf/optim.hpp"

namespace cnnf {

double accuracy(const Tensor& logits, const std::vector<std::int64_t>& labels) {
    if (logits.rank() != 2 || static_cast<std::int64_t>(labels.size()) != logits.dim(0)) {
        throw ShapeError("accuracy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const auto pred = argmax_rows(logits);
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (pred[i] == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

void AdamState::step(const std::vector<ParamRef>& params) {
    if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto& p : params) {
            m_.emplace_back(p.value->shape());
            v_.emplace_back(p.value->shape());
        }
    }
    if (m_.size() != params.size()) {
        throw ShapeError("adam: " + std::to_string(params.size()) + " parameters but state tracks " +
                         std::to_string(m_.size()));
    }
    t_ += 1;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const ParamRef& p = params[pi];
        if (!p.value->same_shape(*p.grad) || !p.value->same_shape(m_[pi])) {
            throw ShapeError("adam: shape mismatch for parameter " + p.name);
        }
        Tensor& m = m_[pi];
        Tensor& v = v_[pi];
        for (std::int64_t i = 0; i < p.value->size(); ++i) {
            const double g = static_cast<double>((*p.grad)[i]);
            const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * g;
            const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / corr1;
            const double vhat = vi / corr2;
            (*p.value)[i] = static_cast<float>(static_cast<double>((*p.value)[i]) -
                                               config_.lr * mhat / (std::sqrt(vhat) + config_.eps));
        }
    }
}

void AdamState::restore(std::int64_t t, std::vector<Tensor> m, std::vector<Tensor> v) {
    if (t < 0 || m.size() != v.size()) {
        throw ValueError("adam restore: inconsistent state");
    }
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

}  // namespace cnnf
