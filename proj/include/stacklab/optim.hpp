#pragma once

#include <cstdint>
#include <vector>

#include "stacklab/param_store.hpp"

namespace stacklab {

struct AdamConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// First/second moment estimates mirror the parameter store name-for-name,
// so optimizer state survives the same structural edits as the parameters.
struct AdamState {
  AdamConfig config;
  int64_t step = 0;  // completed update count (bias correction uses step+1)
  ParamStore m;
  ParamStore v;
};

AdamState make_adam_state(const ParamStore& params, const AdamConfig& config = {});

// One bias-corrected Adam update, in parameter-store order. `grads` must be
// aligned with `params` (as produced by gradient()).
void adam_step(ParamStore& params, const std::vector<Tensor>& grads, AdamState& state,
               float lr);

enum class LrKind { cosine, constant };

struct LrSchedule {
  LrKind kind = LrKind::cosine;
  float peak = 0.0f;
  float floor = 0.0f;
  int64_t total_steps = 0;
};

LrSchedule make_cosine_schedule(float peak, float floor, int64_t total_steps);
LrSchedule make_constant_schedule(float value, int64_t total_steps);

// Learning rate at `step` in [0, total_steps). The cosine schedule starts at
// peak, ends exactly at floor, and hits the midpoint halfway through.
float lr_at(const LrSchedule& sched, int64_t step);

}  // namespace stacklab
