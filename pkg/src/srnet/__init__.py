"""Semi-supervised video object segmentation with prototype memory, in numpy."""

from .memory import MemoryBank
from .metrics import EvalReport, contour_f, jaccard
from .pipeline import (
    ProtocolError,
    RunConfig,
    TrainingDiverged,
    ablate,
    init_params,
    run_eval,
    segment_sequence,
    train_toy,
)
from .synth import ObjectSpec, SequenceSpec, generate
from .tensor import ParamSet, Tensor, UnsupportedOperation, backward, no_grad

__all__ = [
    "EvalReport", "MemoryBank", "ObjectSpec", "ParamSet", "ProtocolError", "RunConfig",
    "SequenceSpec", "Tensor", "TrainingDiverged", "UnsupportedOperation", "ablate", "backward",
    "contour_f", "generate", "init_params", "jaccard", "no_grad", "run_eval",
    "segment_sequence", "train_toy",
]

__version__ = "0.1.0"
