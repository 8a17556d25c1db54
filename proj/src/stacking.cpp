#include "stacklab/stacking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stacklab {

GrowthKind growth_kind_from_string(const std::string& s) {
  if (s == "baseline") return GrowthKind::baseline;
  if (s == "midas") return GrowthKind::midas;
  if (s == "gradual") return GrowthKind::gradual;
  if (s == "progressive") return GrowthKind::progressive;
  throw ConfigError("unknown growth kind '" + s +
                    "' (expected baseline|midas|gradual|progressive)");
}

std::string growth_kind_name(GrowthKind k) {
  switch (k) {
    case GrowthKind::baseline: return "baseline";
    case GrowthKind::midas: return "midas";
    case GrowthKind::gradual: return "gradual";
    case GrowthKind::progressive: return "progressive";
  }
  throw Error("invalid growth kind");
}

int64_t StagePlan::total_steps() const {
  return std::accumulate(steps.begin(), steps.end(), int64_t{0});
}

void StagePlan::validate() const {
  if (depths.empty() || depths.size() != steps.size()) {
    throw ConfigError("stage plan: depths and steps must be non-empty and the same length");
  }
  for (size_t i = 0; i < depths.size(); ++i) {
    if (depths[i] < 1) throw ConfigError("stage plan: stage depths must be >= 1");
    if (steps[i] < 1) throw ConfigError("stage plan: every stage needs >= 1 step");
    if (i > 0 && depths[i] <= depths[i - 1]) {
      throw ConfigError("stage plan: depths must be strictly increasing");
    }
  }
}

std::vector<int64_t> propsch_steps(int64_t total_steps, int stages, double alpha) {
  if (stages < 1) throw ConfigError("propsch: stages must be >= 1");
  if (total_steps < stages) {
    throw ConfigError("propsch: " + std::to_string(total_steps) + " steps cannot cover " +
                      std::to_string(stages) + " stages with >= 1 step each");
  }
  if (alpha < 0.0) throw ConfigError("propsch: alpha must be >= 0");

  long double denom = 0.0L;
  std::vector<long double> weight(static_cast<size_t>(stages));
  for (int i = 1; i <= stages; ++i) {
    weight[static_cast<size_t>(i - 1)] = powl(static_cast<long double>(i), alpha);
    denom += weight[static_cast<size_t>(i - 1)];
  }
  std::vector<int64_t> steps(static_cast<size_t>(stages));
  std::vector<long double> remainder(static_cast<size_t>(stages));
  int64_t assigned = 0;
  for (int i = 0; i < stages; ++i) {
    long double quota = weight[static_cast<size_t>(i)] / denom * total_steps;
    steps[static_cast<size_t>(i)] = static_cast<int64_t>(floorl(quota));
    remainder[static_cast<size_t>(i)] = quota - floorl(quota);
    assigned += steps[static_cast<size_t>(i)];
  }
  // Largest-remainder rounding; ties go to the larger stage index.
  std::vector<int> order(static_cast<size_t>(stages));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (remainder[static_cast<size_t>(a)] != remainder[static_cast<size_t>(b)]) {
      return remainder[static_cast<size_t>(a)] > remainder[static_cast<size_t>(b)];
    }
    return a > b;
  });
  for (int64_t extra = total_steps - assigned; extra > 0; --extra) {
    steps[static_cast<size_t>(order[static_cast<size_t>(total_steps - assigned - extra)])] += 1;
  }
  for (int i = 0; i < stages; ++i) {
    if (steps[static_cast<size_t>(i)] < 1) {
      throw ConfigError("propsch: stage " + std::to_string(i + 1) +
                        " rounds to zero steps (increase total_steps or lower alpha)");
    }
  }
  return steps;
}

double compute_speedup(int layers, int block_size, double alpha) {
  if (layers < 1 || block_size < 1 || layers % block_size != 0) {
    throw ConfigError("speedup: layers " + std::to_string(layers) +
                      " must be a positive multiple of block size " +
                      std::to_string(block_size));
  }
  if (alpha < 0.0) throw ConfigError("speedup: alpha must be >= 0");
  const int k = layers / block_size;
  double num = 0.0, den = 0.0;
  for (int i = 1; i <= k; ++i) {
    num += std::pow(static_cast<double>(i), alpha);
    den += std::pow(static_cast<double>(i), alpha + 1.0);
  }
  return (static_cast<double>(layers) * num) / (static_cast<double>(block_size) * den);
}

int64_t simulate_plan_cost(const StagePlan& plan) {
  plan.validate();
  int64_t cost = 0;
  for (size_t i = 0; i < plan.depths.size(); ++i) {
    cost += static_cast<int64_t>(plan.depths[i]) * plan.steps[i];
  }
  return cost;
}

LayerMap midas_layer_map(int n_layers, int block_size) {
  if (n_layers < 1 || block_size < 1 || n_layers % block_size != 0) {
    throw ConfigError("midas growth: depth " + std::to_string(n_layers) +
                      " is not a multiple of block size " + std::to_string(block_size));
  }
  const int n = n_layers / block_size;
  const int middle = (n + 1) / 2;  // 1-based block index, counted from the input
  LayerMap map;
  map.reserve(static_cast<size_t>(n_layers + block_size));
  for (int blk = 1; blk <= n; ++blk) {
    for (int j = 0; j < block_size; ++j) map.push_back((blk - 1) * block_size + j);
    if (blk == middle) {
      for (int j = 0; j < block_size; ++j) map.push_back((blk - 1) * block_size + j);
    }
  }
  return map;
}

LayerMap gradual_layer_map(int n_layers, int block_size) {
  if (n_layers < 1 || block_size < 1 || n_layers % block_size != 0) {
    throw ConfigError("gradual growth: depth " + std::to_string(n_layers) +
                      " is not a multiple of block size " + std::to_string(block_size));
  }
  LayerMap map;
  map.reserve(static_cast<size_t>(n_layers + block_size));
  for (int l = 0; l < n_layers; ++l) map.push_back(l);
  for (int j = 0; j < block_size; ++j) map.push_back(n_layers - block_size + j);
  return map;
}

LayerMap progressive_layer_map(int n_layers) {
  if (n_layers < 1) throw ConfigError("progressive growth: depth must be >= 1");
  LayerMap map;
  map.reserve(static_cast<size_t>(2 * n_layers));
  for (int rep = 0; rep < 2; ++rep) {
    for (int l = 0; l < n_layers; ++l) map.push_back(l);
  }
  return map;
}

LayerMap layer_map_for(const GrowthOp& op, int n_layers) {
  switch (op.kind) {
    case GrowthKind::midas: return midas_layer_map(n_layers, op.block_size);
    case GrowthKind::gradual: return gradual_layer_map(n_layers, op.block_size);
    case GrowthKind::progressive: return progressive_layer_map(n_layers);
    case GrowthKind::baseline:
      throw ConfigError("baseline runs never grow");
  }
  throw Error("invalid growth kind");
}

namespace {

const char* const kLayerTensors[] = {"attn_norm.gain", "attn_norm.bias", "attn.wq", "attn.wk",
                                     "attn.wv",        "attn.wo",        "mlp_norm.gain",
                                     "mlp_norm.bias",  "mlp.w1",         "mlp.w2"};

// Rebuilds a parameter store with the layer stack rearranged per `map`;
// non-layer tensors are carried over unchanged.
ParamStore remap_store(const ParamStore& src, const ModelConfig& old_cfg,
                       const ModelConfig& new_cfg, const LayerMap& map) {
  ParamStore dst;
  dst.add("embed.tok", src.at("embed.tok"));
  dst.add("embed.pos", src.at("embed.pos"));
  for (int l = 0; l < new_cfg.n_layers; ++l) {
    const std::string dst_pre = layer_prefix(new_cfg, l);
    const std::string src_pre = layer_prefix(old_cfg, map[static_cast<size_t>(l)]);
    for (const char* t : kLayerTensors) dst.add(dst_pre + t, src.at(src_pre + t));
  }
  dst.add("final_norm.gain", src.at("final_norm.gain"));
  dst.add("final_norm.bias", src.at("final_norm.bias"));
  dst.add("head.w", src.at("head.w"));
  return dst;
}

}  // namespace

TransformerParams grow(const TransformerParams& params, const GrowthOp& op) {
  if (params.config.looped) {
    throw ConfigError("growth operators require an untied layer stack; model is looped");
  }
  LayerMap map = layer_map_for(op, params.config.n_layers);
  TransformerParams out;
  out.config = params.config;
  out.config.n_layers = static_cast<int>(map.size());
  out.store = remap_store(params.store, params.config, out.config, map);
  return out;
}

AdamState remap_optimizer(const AdamState& state, const ModelConfig& old_config,
                          const ModelConfig& new_config, const LayerMap& map) {
  if (static_cast<int>(map.size()) != new_config.n_layers) {
    throw Error("remap_optimizer: layer map covers " + std::to_string(map.size()) +
                " layers, new model has " + std::to_string(new_config.n_layers));
  }
  AdamState out;
  out.config = state.config;
  out.step = state.step;
  out.m = remap_store(state.m, old_config, new_config, map);
  out.v = remap_store(state.v, old_config, new_config, map);
  return out;
}

StagePlan make_stage_plan(int final_layers, const GrowthOp& op, int64_t total_steps,
                          double alpha) {
  if (final_layers < 1) throw ConfigError("stage plan: final depth must be >= 1");
  StagePlan plan;
  switch (op.kind) {
    case GrowthKind::baseline:
      plan.depths = {final_layers};
      plan.steps = {total_steps};
      break;
    case GrowthKind::midas:
    case GrowthKind::gradual: {
      if (op.block_size < 1 || final_layers % op.block_size != 0) {
        throw ConfigError("stage plan: final depth " + std::to_string(final_layers) +
                          " is not a multiple of block size " + std::to_string(op.block_size));
      }
      const int k = final_layers / op.block_size;
      for (int i = 1; i <= k; ++i) plan.depths.push_back(i * op.block_size);
      plan.steps = propsch_steps(total_steps, k, alpha);
      break;
    }
    case GrowthKind::progressive: {
      const int d1 = op.block_size;
      if (d1 < 1 || final_layers % d1 != 0) {
        throw ConfigError("stage plan: progressive stage-1 depth must divide the final depth");
      }
      int ratio = final_layers / d1;
      if ((ratio & (ratio - 1)) != 0) {
        throw ConfigError("stage plan: progressive growth needs final depth = 2^(k-1) * " +
                          std::to_string(d1));
      }
      for (int d = d1; d <= final_layers; d *= 2) plan.depths.push_back(d);
      plan.steps = propsch_steps(total_steps, static_cast<int>(plan.depths.size()), alpha);
      break;
    }
  }
  plan.validate();
  if (plan.depths.back() != final_layers) {
    throw ConfigError("stage plan: schedule does not terminate at the final depth");
  }
  return plan;
}

}  // namespace stacklab
