#include "core/adam.hpp"

#include <cmath>

namespace ckconv {

void adam_step(std::vector<NamedParam>& params, AdamState& state, double lr) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].tensor.data->size(), 0.0);
      state.v[i].assign(params[i].tensor.data->size(), 0.0);
    }
  }
  if (state.m.size() != params.size())
    fail(ErrorKind::contract, "adam_step: parameter list changed size mid-run");

  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));

  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    p.ensure_grad();
    auto& pm = state.m[i];
    auto& pv = state.v[i];
    if (pm.size() != p.data->size())
      fail(ErrorKind::contract, "adam_step: parameter '" + params[i].name + "' changed size mid-run");
    double* val = p.ptr();
    const double* g = p.gptr();
    for (size_t j = 0; j < pm.size(); ++j) {
      if (!std::isfinite(g[j]))
        fail(ErrorKind::divergence, "non-finite gradient in parameter '" + params[i].name + "'");
      pm[j] = state.beta1 * pm[j] + (1.0 - state.beta1) * g[j];
      pv[j] = state.beta2 * pv[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = pm[j] / bc1;
      const double vhat = pv[j] / bc2;
      val[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace ckconv
