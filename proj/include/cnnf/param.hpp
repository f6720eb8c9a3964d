#pragma once

#include <string>

#include "cnnf/tensor.hpp"

namespace cnnf {

// Non-owning view of one trainable tensor and its gradient slot. Layers hand
// these out; the optimizer and checkpoint writer consume them in order.
template <typename T>
struct ParamRefT {
    std::string name;
    TensorT<T>* value = nullptr;
    TensorT<T>* grad = nullptr;
};

using ParamRef = ParamRefT<float>;

}  // namespace cnnf
