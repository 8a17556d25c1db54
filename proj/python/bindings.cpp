#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "stacklab/analysis.hpp"
#include "stacklab/checkpoint.hpp"
#include "stacklab/config.hpp"
#include "stacklab/corpus_gen.hpp"
#include "stacklab/eval.hpp"
#include "stacklab/primitives.hpp"
#include "stacklab/stacking.hpp"
#include "stacklab/trainer.hpp"

namespace py = pybind11;
using namespace stacklab;

namespace {

std::vector<std::vector<double>> matrix_rows(const SimilarityMatrix& m) {
  std::vector<std::vector<double>> rows(m.n());
  for (size_t i = 0; i < m.n(); ++i) {
    rows[i].resize(m.n());
    for (size_t j = 0; j < m.n(); ++j) rows[i][j] = m.at(i, j);
  }
  return rows;
}

}  // namespace

PYBIND11_MODULE(_stacklab, m) {
  m.doc() = "stagewise-training laboratory for small decoder models";

  // translators run newest-first, so the base class must be registered
  // before the derived one
  py::register_exception<Error>(m, "StacklabError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<PrimitiveExample>(m, "PrimitiveExample")
      .def_property_readonly("task", [](const PrimitiveExample& e) { return task_name(e.task); })
      .def_property_readonly("variant",
                             [](const PrimitiveExample& e) { return variant_name(e.variant); })
      .def_readonly("depth", &PrimitiveExample::depth)
      .def_readonly("prompt", &PrimitiveExample::prompt)
      .def_readonly("target", &PrimitiveExample::target)
      .def_readonly("seed", &PrimitiveExample::seed)
      .def("__repr__", [](const PrimitiveExample& e) {
        return "<PrimitiveExample " + task_name(e.task) + "/" + variant_name(e.variant) +
               " seed=" + std::to_string(e.seed) + ">";
      });

  py::class_<StagePlan>(m, "StagePlan")
      .def_readonly("depths", &StagePlan::depths)
      .def_readonly("steps", &StagePlan::steps)
      .def_property_readonly("layer_steps", [](const StagePlan& p) {
        return simulate_plan_cost(p);
      });

  m.def("compute_speedup", &compute_speedup, py::arg("layers"), py::arg("block_size"),
        py::arg("alpha"),
        "Closed-form full-depth/staged compute multiplier for k = layers/block_size stages.");
  m.def("propsch_steps", &propsch_steps, py::arg("total_steps"), py::arg("stages"),
        py::arg("alpha"), "Largest-remainder integer step split proportional to i^alpha.");
  m.def(
      "stage_plan",
      [](int final_layers, const std::string& kind, int block_size, int64_t total_steps,
         double alpha) {
        GrowthOp op{growth_kind_from_string(kind), block_size};
        return make_stage_plan(final_layers, op, total_steps, alpha);
      },
      py::arg("final_layers"), py::arg("kind"), py::arg("block_size"), py::arg("total_steps"),
      py::arg("alpha"));

  m.def(
      "gen_example",
      [](const std::string& task, const std::string& variant, int depth, uint64_t seed) {
        return gen_example(task_from_string(task), variant_from_string(variant), depth, seed);
      },
      py::arg("task"), py::arg("variant") = "none", py::arg("depth") = 0, py::arg("seed") = 0);
  m.def("oracle_solve", &oracle_solve, py::arg("example"),
        "Re-derive the target from the prompt text alone.");
  m.def("format_kshot", &format_kshot, py::arg("supports"), py::arg("query"));
  m.def("example_jsonl", &to_jsonl, py::arg("example"));

  m.def(
      "block_cosine",
      [](const std::string& checkpoint, int block_size) {
        return matrix_rows(block_cosine_similarity(load_checkpoint(checkpoint), block_size));
      },
      py::arg("checkpoint"), py::arg("block_size") = 1,
      "Block-cosine similarity matrix of a saved checkpoint, as nested lists.");

  m.def(
      "checkpoint_info",
      [](const std::string& path) {
        const TransformerParams p = load_checkpoint(path);
        py::dict d;
        d["n_layers"] = p.config.n_layers;
        d["d_model"] = p.config.d_model;
        d["n_heads"] = p.config.n_heads;
        d["d_ff"] = p.config.d_ff;
        d["seq_len"] = p.config.seq_len;
        d["vocab_size"] = p.config.vocab_size;
        d["looped"] = p.config.looped;
        d["total_params"] = p.store.total_params();
        return d;
      },
      py::arg("path"));

  m.def(
      "pretrain",
      [](const std::string& config_path, const std::string& out_dir, int64_t seed) {
        TrainConfig config = load_train_config(config_path);
        if (!out_dir.empty()) config.out_dir = out_dir;
        if (seed >= 0) config.init_seed = static_cast<uint64_t>(seed);
        const PretrainResult r = pretrain(config);
        py::dict d;
        d["final_checkpoint"] = r.final_checkpoint;
        d["metrics"] = r.metrics_path;
        d["manifest"] = r.manifest_path;
        d["stage_checkpoints"] = r.stage_checkpoints;
        d["layer_steps"] = r.executed_layer_steps;
        d["val_loss"] = r.final_val_loss;
        return d;
      },
      py::arg("config_path"), py::arg("out_dir") = "", py::arg("seed") = -1);

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& task, const std::string& variant,
         int depth, int k, int n, uint64_t seed) {
        EvalTaskSpec spec;
        spec.task = task_from_string(task);
        spec.variant = variant_from_string(variant);
        spec.depth = depth;
        spec.k_shot = k;
        spec.n_examples = n;
        spec.seed = seed;
        spec.name = task;
        const EvalResult r =
            evaluate_task(make_model_completer(load_checkpoint(checkpoint)), spec);
        py::dict d;
        d["accuracy"] = r.accuracy;
        d["scored"] = r.n_scored;
        d["skipped"] = r.n_skipped;
        return d;
      },
      py::arg("checkpoint"), py::arg("task"), py::arg("variant") = "none", py::arg("depth") = 0,
      py::arg("k") = 0, py::arg("n") = 100, py::arg("seed") = 1);

  m.def("write_demo_corpus", &write_demo_corpus, py::arg("path"), py::arg("seed"),
        py::arg("min_bytes"));
}
