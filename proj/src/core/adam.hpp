#ifndef CKCONV_CORE_ADAM_HPP_
#define CKCONV_CORE_ADAM_HPP_

#include <cstdint>
#include <vector>

#include "core/tensor.hpp"

namespace ckconv {

// Adam with bias correction. Moment buffers are laid out parallel to the
// parameter list handed to adam_step, which must stay stable across calls.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

void adam_step(std::vector<NamedParam>& params, AdamState& state, double lr);

}  // namespace ckconv

#endif  // CKCONV_CORE_ADAM_HPP_
