#pragma once

#include <map>
#include <string>

#include "axunet/network.hpp"
#include "axunet/tensor.hpp"

namespace axunet {

// SGD with Nesterov momentum 0.99:
//   buf <- momentum * buf + grad
//   p   <- p - lr * (grad + momentum * buf)   (nesterov)
//   p   <- p - lr * buf                       (plain momentum)
template <class T>
class SgdNesterov {
 public:
  explicit SgdNesterov(double momentum = 0.99, bool nesterov = true)
      : momentum_(momentum), nesterov_(nesterov) {}

  double momentum() const { return momentum_; }
  bool nesterov() const { return nesterov_; }

  // Updates every parameter with a gradient entry; throws on non-finite
  // gradients, naming the parameter.
  void step(Network<T>& net, const std::map<std::string, Tensor<T>>& grads, double lr);

  // Single-tensor update, used directly by tests.
  void step_param(const std::string& name, Tensor<T>& param, const Tensor<T>& grad, double lr);

 private:
  double momentum_;
  bool nesterov_;
  std::map<std::string, Tensor<T>> buffers_;
};

}  // namespace axunet
