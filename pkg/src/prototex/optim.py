"""Parameter initialization, AdamW, and early stopping.

The optimizer keeps one moment-estimate slot per named parameter group so a
training loop can step disjoint groups on different schedules (for example
per-class prototype blocks) without touching the state of the others.
"""

from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .errors import CheckpointCorruptError, NonFiniteGradientError, StateError
from .serialize import DocReader, write_array, write_kv_block


def xavier_uniform(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Glorot-style uniform init on [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    rows, cols = shape
    a = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


@dataclass
class _Slot:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


class AdamW:
    """Adam with decoupled weight decay, applied after the adaptive step.

    Parameters are registered under string names; each name gets independent
    first/second moment buffers and an independent step counter.
    """

    def __init__(
        self,
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        lr_scales: dict[str, float] | None = None,
    ):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        # per-group multiplier on lr; groups not listed run at full lr
        self.lr_scales = dict(lr_scales) if lr_scales else {}
        self._slots: dict[str, _Slot] = {}

    def register(self, name: str, param: np.ndarray) -> None:
        if name in self._slots:
            raise StateError(f"parameter group {name!r} registered twice")
        self._slots[name] = _Slot(m=np.zeros_like(param), v=np.zeros_like(param))

    def group_names(self) -> list[str]:
        return list(self._slots)

    def step(self, updates: dict[str, tuple[np.ndarray, np.ndarray]]) -> None:
        """Apply one AdamW update in place.

        ``updates`` maps group name to ``(param, grad)``; only the named
        groups advance, all other slots stay untouched.
        """
        for name, (param, grad) in updates.items():
            if name not in self._slots:
                raise StateError(f"unknown parameter group {name!r}")
            if not np.all(np.isfinite(grad)):
                raise NonFiniteGradientError(name)
            slot = self._slots[name]
            if slot.m.shape != param.shape:
                raise StateError(
                    f"parameter group {name!r} shape changed: "
                    f"registered {slot.m.shape}, got {param.shape}"
                )
            lr = self.lr * self.lr_scales.get(name, 1.0)
            slot.step += 1
            slot.m = self.beta1 * slot.m + (1.0 - self.beta1) * grad
            slot.v = self.beta2 * slot.v + (1.0 - self.beta2) * grad * grad
            m_hat = slot.m / (1.0 - self.beta1**slot.step)
            v_hat = slot.v / (1.0 - self.beta2**slot.step)
            param -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay != 0.0:
                param *= 1.0 - lr * self.weight_decay

    def save_state(self, f: IO[str]) -> None:
        write_kv_block(
            f,
            "adamw",
            {
                "lr": self.lr,
                "beta1": self.beta1,
                "beta2": self.beta2,
                "eps": self.eps,
                "weight_decay": self.weight_decay,
                "lr_scales": self.lr_scales,
                "groups": list(self._slots),
            },
        )
        for name, slot in self._slots.items():
            write_kv_block(f, "slot", {"name": name, "step": slot.step})
            write_array(f, "m", slot.m)
            write_array(f, "v", slot.v)

    @classmethod
    def load_state(cls, f: IO[str] | DocReader) -> "AdamW":
        reader = f if isinstance(f, DocReader) else DocReader(f)
        header = reader.read_kv_block("adamw")
        opt = cls(
            lr=header["lr"],
            betas=(header["beta1"], header["beta2"]),
            eps=header["eps"],
            weight_decay=header["weight_decay"],
            lr_scales=header.get("lr_scales") or None,
        )
        for name in header["groups"]:
            meta = reader.read_kv_block("slot")
            if meta["name"] != name:
                raise CheckpointCorruptError(
                    f"optimizer slot order mismatch: expected {name!r}, got {meta['name']!r}"
                )
            _, m = reader.read_array("m")
            _, v = reader.read_array("v")
            opt._slots[name] = _Slot(m=m, v=v, step=int(meta["step"]))
        return opt


@dataclass
class EarlyStopState:
    """Tracks the best metric seen and how long since it improved."""

    patience: int = 5
    best_metric: float = -np.inf
    evaluations_since_best: int = 0
    best_checkpoint: object = None
    stopped: bool = False
    history: list[float] = field(default_factory=list)


def early_stop_update(state: EarlyStopState, metric: float, snapshot: object) -> bool:
    """Record one evaluation; return True when training should stop.

    Improvement means strictly greater than the best metric so far. The
    snapshot passed alongside an improving metric is kept as the winner;
    training stops once `patience` consecutive evaluations fail to improve.
    """
    state.history.append(metric)
    if metric > state.best_metric:
        state.best_metric = metric
        state.best_checkpoint = snapshot
        state.evaluations_since_best = 0
    else:
        state.evaluations_since_best += 1
        if state.evaluations_since_best >= state.patience:
            state.stopped = True
    return state.stopped
