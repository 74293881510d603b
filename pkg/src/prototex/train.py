"""Both training procedures for the prototype head.

``train_simple`` optimizes the joint objective (cross-entropy plus both
clustering terms on raw distances) over all parameters at once.

``train_interleaved`` decouples the phases per outer iteration: prototype
rows of the alternating class chase their nearest examples first, then the
projection and classifier train against cross-entropy plus a weighted
example-attraction term, prototypes frozen. Early stopping watches dev
macro-F1 once per outer iteration and the best snapshot wins.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .data import EmbeddingMatrix, LabeledDataset, balanced_batches
from .errors import ConfigError
from .losses import ClassifyPhase, PrototypePhase, SimpleLoss, backward
from .metrics import macro_f1
from .model import PrototypeHead, init_head, predict_batch
from .optim import AdamW, EarlyStopState, early_stop_update

# Distinct stream tags keep every rng purpose on its own deterministic path.
_STREAM_SIMPLE = 17
_STREAM_DELTA = 11
_STREAM_GAMMA = 13


@dataclass
class TrainConfig:
    algorithm: str = "interleaved"
    m: int = 20
    neg_count: int = 1
    k: int = 40
    delta: int = 3
    gamma: int = 2
    lambda1: float = 0.9
    lambda2: float = 0.9
    lambda_interleaved: float = 50.0
    lr: float = 0.01
    # The projection stands in for a large pretrained encoder, which drifts
    # far less per step than a free matrix would at the same lr. Scaling its
    # effective lr down restores that asymmetry; prototypes and classifier
    # run at full lr.
    projection_lr_scale: float = 0.2
    batch_size: int = 20
    seed: int = 0
    normalize: bool = True
    patience: int = 12
    embed_dim: int | None = None
    proto_dim: int | None = None
    n_classes: int = 2
    epsilon: float = 1e-5
    start_class: int = 1

    def __post_init__(self):
        if self.algorithm not in ("simple", "interleaved"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.m < self.n_classes:
            raise ConfigError(
                f"need at least one prototype per class: m={self.m} < K={self.n_classes}"
            )
        for name in ("k", "delta", "gamma", "patience", "neg_count"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.projection_lr_scale < 0:
            raise ConfigError(
                f"projection_lr_scale must be >= 0, got {self.projection_lr_scale}"
            )
        if self.start_class not in (0, 1):
            raise ConfigError(f"start_class must be 0 or 1, got {self.start_class}")


@dataclass
class TrainData:
    train_x: np.ndarray
    train_y: np.ndarray
    dev_x: np.ndarray
    dev_y: np.ndarray

    @classmethod
    def from_dataset(cls, dataset: LabeledDataset, embeddings: EmbeddingMatrix) -> "TrainData":
        idx = dataset.split_indices()
        for name in ("train", "dev"):
            if name not in idx:
                raise ConfigError(f"dataset has no examples tagged split={name!r}")
        labels = dataset.labels()
        return cls(
            train_x=embeddings.vectors[idx["train"]],
            train_y=labels[idx["train"]],
            dev_x=embeddings.vectors[idx["dev"]],
            dev_y=labels[idx["dev"]],
        )


@dataclass
class EpochLoss:
    phase: str  # "simple", "proto" or "classify"
    outer: int
    ce: float
    p1: float
    p2: float
    total: float


@dataclass
class TrainReport:
    loss_trace: list[EpochLoss] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)
    best_metric: float = float("-inf")
    best_eval: int = -1
    stopped_early: bool = False
    epochs_run: int = 0


def resolve_config(config: TrainConfig, data: TrainData) -> TrainConfig:
    """Fill the embedding-derived dimensions when the caller left them unset."""
    embed_dim = data.train_x.shape[1]
    if config.embed_dim is not None and config.embed_dim != embed_dim:
        raise ConfigError(
            f"config.embed_dim={config.embed_dim} but embeddings have D={embed_dim}"
        )
    return replace(config, embed_dim=embed_dim)


def _mean_epoch_loss(phase: str, outer: int, breakdowns) -> EpochLoss:
    if not breakdowns:
        return EpochLoss(phase, outer, 0.0, 0.0, 0.0, 0.0)
    return EpochLoss(
        phase=phase,
        outer=outer,
        ce=float(np.mean([b.ce for b in breakdowns])),
        p1=float(np.mean([b.p1 for b in breakdowns])),
        p2=float(np.mean([b.p2 for b in breakdowns])),
        total=float(np.mean([b.total for b in breakdowns])),
    )


def _evaluate_and_maybe_stop(head, data, es_state, report) -> bool:
    preds, _ = predict_batch(head, data.dev_x)
    f1 = macro_f1(preds, data.dev_y)
    report.val_f1.append(f1)
    stop = early_stop_update(es_state, f1, head.copy())
    report.best_metric = es_state.best_metric
    report.best_eval = len(report.val_f1) - 1 - es_state.evaluations_since_best
    return stop


def train_simple(head: PrototypeHead, data: TrainData, config: TrainConfig):
    if config.algorithm != "simple":
        raise ConfigError(f"train_simple got algorithm={config.algorithm!r}")
    opt = AdamW(lr=config.lr, lr_scales={"projection": config.projection_lr_scale})
    opt.register("projection", head.projection)
    opt.register("prototypes", head.prototypes)
    opt.register("linear", head.linear_weights)
    es = EarlyStopState(patience=config.patience)
    report = TrainReport()
    mode = SimpleLoss(lambda1=config.lambda1, lambda2=config.lambda2)
    for epoch in range(config.k):
        rng = np.random.default_rng([config.seed, _STREAM_SIMPLE, epoch])
        plan = balanced_batches(data.train_y, config.batch_size, rng)
        breakdowns = []
        for batch in plan.batches:
            loss, grads = backward(head, data.train_x[batch], data.train_y[batch], mode)
            breakdowns.append(loss)
            opt.step(
                {
                    "projection": (head.projection, grads.d_projection),
                    "prototypes": (head.prototypes, grads.d_prototypes),
                    "linear": (head.linear_weights, grads.d_linear),
                }
            )
        report.loss_trace.append(_mean_epoch_loss("simple", epoch, breakdowns))
        report.epochs_run += 1
        if _evaluate_and_maybe_stop(head, data, es, report):
            report.stopped_early = True
            break
    final = es.best_checkpoint if es.best_checkpoint is not None else head
    return final, report


def _epoch_class(inner_index: int, start_class: int) -> int:
    """Alternating class for a 1-based inner epoch; odd epochs pick start_class."""
    return start_class if inner_index % 2 == 1 else 1 - start_class


def train_interleaved(head: PrototypeHead, data: TrainData, config: TrainConfig):
    if config.algorithm != "interleaved":
        raise ConfigError(f"train_interleaved got algorithm={config.algorithm!r}")
    if config.neg_count < 1:
        raise ConfigError(
            "interleaved training alternates between both classes; neg_count must be >= 1"
        )
    opt = AdamW(lr=config.lr, lr_scales={"projection": config.projection_lr_scale})
    opt.register("projection", head.projection)
    opt.register("linear", head.linear_weights)
    class_rows = {c: head.class_rows(c) for c in (0, 1)}
    for c in (0, 1):
        opt.register(f"prototypes.class{c}", head.prototypes[class_rows[c]])
    es = EarlyStopState(patience=config.patience)
    report = TrainReport()
    for outer in range(config.k):
        for i in range(1, config.delta + 1):
            c = _epoch_class(i, config.start_class)
            rows = class_rows[c]
            rng = np.random.default_rng([config.seed, _STREAM_DELTA, outer, i])
            plan = balanced_batches(data.train_y, config.batch_size, rng)
            mode = PrototypePhase(target_class=c)
            breakdowns = []
            for batch in plan.batches:
                y = data.train_y[batch]
                if not np.any(y == c):
                    continue
                loss, grads = backward(head, data.train_x[batch], y, mode)
                breakdowns.append(loss)
                block = head.prototypes[rows]
                opt.step({f"prototypes.class{c}": (block, grads.d_prototypes[rows])})
                head.prototypes[rows] = block
            report.loss_trace.append(_mean_epoch_loss("proto", outer, breakdowns))
            report.epochs_run += 1
        for j in range(1, config.gamma + 1):
            c = _epoch_class(j, config.start_class)
            rng = np.random.default_rng([config.seed, _STREAM_GAMMA, outer, j])
            plan = balanced_batches(data.train_y, config.batch_size, rng)
            mode = ClassifyPhase(target_class=c, lam=config.lambda_interleaved)
            breakdowns = []
            for batch in plan.batches:
                loss, grads = backward(head, data.train_x[batch], data.train_y[batch], mode)
                breakdowns.append(loss)
                opt.step(
                    {
                        "projection": (head.projection, grads.d_projection),
                        "linear": (head.linear_weights, grads.d_linear),
                    }
                )
            report.loss_trace.append(_mean_epoch_loss("classify", outer, breakdowns))
            report.epochs_run += 1
        if _evaluate_and_maybe_stop(head, data, es, report):
            report.stopped_early = True
            break
    final = es.best_checkpoint if es.best_checkpoint is not None else head
    return final, report


def run_training(data: TrainData, config: TrainConfig):
    """Initialize a head from the config and run the selected procedure."""
    config = resolve_config(config, data)
    head = init_head(config, config.seed)
    if config.algorithm == "simple":
        return train_simple(head, data, config)
    return train_interleaved(head, data, config)
