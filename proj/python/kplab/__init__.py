"""Python bindings for the kplab keypoint distillation library."""

from ._core import (
    KplabError,
    PoseNet,
    average_precision,
    normalized_adjacency,
    oks,
    pck,
    run_command,
    stick_figure_skeleton,
    synth_sample,
)

__all__ = [
    "KplabError",
    "PoseNet",
    "average_precision",
    "normalized_adjacency",
    "oks",
    "pck",
    "run_command",
    "stick_figure_skeleton",
    "synth_sample",
]
