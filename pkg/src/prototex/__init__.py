"""Prototype-tensor classification head over frozen text embeddings.

The head projects embeddings into a latent space, scores them by squared
distance to trainable prototype vectors, and classifies through a zero-bias
linear layer. Every prediction decomposes exactly into per-prototype
contributions, each traceable to nearby training examples.
"""

__version__ = "0.1.0"

from .data import (
    EmbeddingMatrix,
    Example,
    LabeledDataset,
    generate_synthetic,
    load_dataset,
    load_embeddings,
    save_dataset,
    write_embeddings,
)
from .errors import ConfigError, PrototexError
from .explain import (
    Explanation,
    association_matrix,
    explain_prediction,
    faithful_label,
    knn_classify,
    nearest_examples_per_prototype,
    segregation_metric,
    soft_cluster_build,
    soft_cluster_infer,
)
from .metrics import EvalResult, bootstrap_significance, f1_scores, macro_f1, subclass_f1
from .model import (
    PrototypeHead,
    forward,
    init_head,
    load_checkpoint,
    predict_batch,
    save_checkpoint,
)
from .train import TrainConfig, TrainData, TrainReport, run_training

__all__ = [
    "__version__",
    "ConfigError",
    "EmbeddingMatrix",
    "EvalResult",
    "Example",
    "Explanation",
    "LabeledDataset",
    "PrototexError",
    "PrototypeHead",
    "TrainConfig",
    "TrainData",
    "TrainReport",
    "association_matrix",
    "bootstrap_significance",
    "explain_prediction",
    "f1_scores",
    "faithful_label",
    "forward",
    "generate_synthetic",
    "init_head",
    "knn_classify",
    "load_checkpoint",
    "load_dataset",
    "load_embeddings",
    "macro_f1",
    "nearest_examples_per_prototype",
    "predict_batch",
    "run_training",
    "save_checkpoint",
    "save_dataset",
    "segregation_metric",
    "soft_cluster_build",
    "soft_cluster_infer",
    "subclass_f1",
    "write_embeddings",
]
