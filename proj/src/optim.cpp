#include "stacklab/optim.hpp"

#include <cmath>
#include <string>

namespace stacklab {

AdamState make_adam_state(const ParamStore& params, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  for (const auto& [name, t] : params) {
    s.m.add(name, Tensor::zeros(t.shape()));
    s.v.add(name, Tensor::zeros(t.shape()));
  }
  return s;
}

void adam_step(ParamStore& params, const std::vector<Tensor>& grads, AdamState& state,
               float lr) {
  if (grads.size() != params.size()) {
    throw Error("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                std::to_string(params.size()) + " parameters");
  }
  if (params.size() != state.m.size()) {
    throw Error("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                " parameters, model has " + std::to_string(params.size()));
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(c.beta1), static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(c.beta2), static_cast<double>(state.step));
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor& w = params.at(p);
    const Tensor& g = grads[p];
    if (!w.same_shape(g)) {
      throw ShapeError("adam_step: gradient shape " + shape_str(g.shape()) +
                       " does not match parameter '" + params.name(p) + "' " +
                       shape_str(w.shape()));
    }
    Tensor& m = state.m.at(params.name(p));
    Tensor& v = state.v.at(params.name(p));
    const int64_t n = w.numel();
    for (int64_t i = 0; i < n; ++i) {
      float gi = g.data()[i];
      float mi = c.beta1 * m.data()[i] + (1.0f - c.beta1) * gi;
      float vi = c.beta2 * v.data()[i] + (1.0f - c.beta2) * gi * gi;
      m.data()[i] = mi;
      v.data()[i] = vi;
      float mhat = static_cast<float>(mi / bc1);
      float vhat = static_cast<float>(vi / bc2);
      w.data()[i] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

LrSchedule make_cosine_schedule(float peak, float floor, int64_t total_steps) {
  if (!(floor > 0.0f) || !(peak >= floor)) {
    throw ConfigError("cosine schedule requires 0 < floor <= peak, got floor=" +
                      std::to_string(floor) + " peak=" + std::to_string(peak));
  }
  if (total_steps < 1) throw ConfigError("schedule requires total_steps >= 1");
  return LrSchedule{LrKind::cosine, peak, floor, total_steps};
}

LrSchedule make_constant_schedule(float value, int64_t total_steps) {
  if (!(value > 0.0f)) {
    throw ConfigError("constant schedule requires a positive rate, got " + std::to_string(value));
  }
  if (total_steps < 1) throw ConfigError("schedule requires total_steps >= 1");
  return LrSchedule{LrKind::constant, value, value, total_steps};
}

float lr_at(const LrSchedule& sched, int64_t step) {
  if (step < 0 || step >= sched.total_steps) {
    throw Error("lr_at: step " + std::to_string(step) + " outside schedule of " +
                std::to_string(sched.total_steps) + " steps");
  }
  if (sched.kind == LrKind::constant) return sched.peak;
  if (sched.total_steps == 1) return sched.peak;
  const double t = static_cast<double>(step) / static_cast<double>(sched.total_steps - 1);
  const double cosv = 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
  return static_cast<float>(sched.floor + (sched.peak - sched.floor) * cosv);
}

}  // namespace stacklab
