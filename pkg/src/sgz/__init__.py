"""Learned lossless compression of scene graphs."""

__version__ = "0.1.0"

from .graph_model import DataError, Dataset, ObjectNode, RelationEdge, SceneGraph  # noqa: E402
from .coder import CodecError  # noqa: E402
from .predictors import PredictorConfig  # noqa: E402
from .pipeline import (Checkpoint, compress, compress_bytes, decompress,  # noqa: E402
                       decompress_bytes, evaluate, load_checkpoint, save_checkpoint,
                       split_indices, train, verify)
from .synth import SynthConfig, synth_generate  # noqa: E402

__all__ = [
    "DataError", "CodecError", "Dataset", "ObjectNode", "RelationEdge", "SceneGraph",
    "PredictorConfig", "Checkpoint", "compress", "compress_bytes", "decompress",
    "decompress_bytes", "evaluate", "load_checkpoint", "save_checkpoint", "split_indices",
    "train", "verify", "SynthConfig", "synth_generate",
]
