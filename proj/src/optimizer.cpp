#include "axunet/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace axunet {

template <class T>
void SgdNesterov<T>::step_param(const std::string& name, Tensor<T>& param, const Tensor<T>& grad,
                                double lr) {
  if (grad.shape() != param.shape())
    throw std::invalid_argument("gradient shape " + shape_str(grad.shape()) +
                                " does not match parameter '" + name + "' " +
                                shape_str(param.shape()));
  for (std::int64_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(static_cast<double>(grad[i])))
      throw std::runtime_error("non-finite gradient for parameter '" + name + "'");
  auto it = buffers_.find(name);
  if (it == buffers_.end()) it = buffers_.emplace(name, Tensor<T>(param.shape(), T(0))).first;
  Tensor<T>& buf = it->second;
  const T mom = static_cast<T>(momentum_);
  const T step = static_cast<T>(lr);
  for (std::int64_t i = 0; i < param.size(); ++i) {
    buf[i] = mom * buf[i] + grad[i];
    const T d = nesterov_ ? grad[i] + mom * buf[i] : buf[i];
    param[i] -= step * d;
  }
}

template <class T>
void SgdNesterov<T>::step(Network<T>& net, const std::map<std::string, Tensor<T>>& grads,
                          double lr) {
  for (const auto& [name, grad] : grads) step_param(name, net.param(name), grad, lr);
}

template class SgdNesterov<float>;
template class SgdNesterov<double>;

}  // namespace axunet
