"""Python surface of the stagewise-training laboratory.

The compiled extension is built by CMake (or scikit-build-core when
packaging); in a development tree, point PYTHONPATH at both this directory's
parent and the CMake build directory that contains ``_stacklab``.
"""

try:
    from ._stacklab import *  # noqa: F401,F403  (packaged layout)
except ImportError:  # pragma: no cover - development layout
    from _stacklab import *  # noqa: F401,F403

__all__ = [
    "compute_speedup",
    "propsch_steps",
    "stage_plan",
    "gen_example",
    "oracle_solve",
    "format_kshot",
    "example_jsonl",
    "block_cosine",
    "checkpoint_info",
    "pretrain",
    "evaluate",
    "write_demo_corpus",
    "StagePlan",
    "PrimitiveExample",
    "ConfigError",
    "StacklabError",
]
