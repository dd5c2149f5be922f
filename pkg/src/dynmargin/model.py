"""Versioned plain-text model persistence and the linear prediction rule.

Only the explicit weights are persisted; the virtual slack components of
the training state exist to make the data separable during training and
carry no information about future instances.  Floats are serialized with
``repr`` (shortest round-trip form), so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import SparsePattern

MODEL_MAGIC = "dynmargin-model"
MODEL_VERSION = 1


@dataclass
class ModelFile:
    explicit_dim: int
    rho: float
    delta: float
    scale: float
    weights: np.ndarray
    t_c: int
    algorithm: str
    seed: int
    gamma_prime_d: Optional[float] = None
    epsilon: Optional[float] = None
    beta: Optional[float] = None

    def decision_value(self, pattern: SparsePattern) -> float:
        """w . [scale*x, rho] for a raw (unreflected) instance; feature ids
        beyond the training dimensionality contribute nothing."""
        d = self.explicit_dim - 1
        mask = pattern.indices < d
        score = float(np.dot(self.weights[pattern.indices[mask]], pattern.values[mask]))
        return self.scale * score + self.weights[d] * self.rho

    def predict(self, pattern: SparsePattern) -> int:
        return 1 if self.decision_value(pattern) > 0.0 else -1


def _fmt_opt(x) -> str:
    return "none" if x is None else repr(x)


def _parse_opt(s: str) -> Optional[float]:
    return None if s == "none" else float(s)


def save_model(model: ModelFile, path: str) -> None:
    nz = np.nonzero(model.weights)[0]
    lines = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        f"explicit_dim {model.explicit_dim}",
        f"rho {model.rho!r}",
        f"delta {model.delta!r}",
        f"scale {model.scale!r}",
        f"gamma_prime_d {_fmt_opt(model.gamma_prime_d)}",
        f"t_c {model.t_c}",
        f"algorithm {model.algorithm}",
        f"epsilon {_fmt_opt(model.epsilon)}",
        f"beta {_fmt_opt(model.beta)}",
        f"seed {model.seed}",
        f"nnz {nz.size}",
    ]
    for i in nz:
        lines.append(f"{i} {float(model.weights[i])!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path: str) -> ModelFile:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty model file")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a {MODEL_MAGIC} file")
    if int(magic[1]) != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {magic[1]}")
    fields = {}
    body_at = None
    for i, line in enumerate(lines[1:], start=1):
        key, _, value = line.partition(" ")
        fields[key] = value
        if key == "nnz":
            body_at = i + 1
            break
    if body_at is None:
        raise ValueError(f"{path}: missing weight section")
    explicit_dim = int(fields["explicit_dim"])
    weights = np.zeros(explicit_dim)
    nnz = int(fields["nnz"])
    for line in lines[body_at : body_at + nnz]:
        idx_s, _, val_s = line.partition(" ")
        idx = int(idx_s)
        if not 0 <= idx < explicit_dim:
            raise ValueError(f"{path}: weight index {idx} out of range")
        weights[idx] = float(val_s)
    model = ModelFile(
        explicit_dim=explicit_dim,
        rho=float(fields["rho"]),
        delta=float(fields["delta"]),
        scale=float(fields["scale"]),
        weights=weights,
        t_c=int(fields["t_c"]),
        algorithm=fields["algorithm"],
        seed=int(fields["seed"]),
        gamma_prime_d=_parse_opt(fields["gamma_prime_d"]),
        epsilon=_parse_opt(fields["epsilon"]),
        beta=_parse_opt(fields["beta"]),
    )
    for name in ("rho", "delta", "scale"):
        if not math.isfinite(getattr(model, name)):
            raise ValueError(f"{path}: non-finite {name}")
    return model
