"""Core model: mixing measures and the gated mixture density.

A mixing measure with components ``i = 1..k`` carries, per component, a log
gate weight ``beta0_i``, a gate slope ``beta1_i`` (length ``d``), expert
intercepts ``a_i`` (length ``K``) and expert slopes ``b_i`` (``d x K``).
The conditional class density it induces at covariate ``x`` is

    g(s | x) = sum_i Softmax_i(beta1_i . M(x) + beta0_i) * f(s | x; a_i, b_i)

where each expert ``f`` is a multinomial logistic regression

    f(s | x; a, b) = exp(a_s + b_s . x) / sum_l exp(a_l + b_l . x)

and ``M`` is a gate transform (identity for the standard gate).  Class ``K``
of every expert is pinned to zero (``a_K = 0``, ``b_K = 0``) and a canonical
measure additionally has the last component's gate pinned to zero, fixing
the softmax translation freedom.

All types are immutable after construction and all operations are pure.
Class labels are 1-based throughout the public API; probability vectors are
plain numpy arrays indexed by ``label - 1``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ContractViolation
from .gates import IDENTITY, GateTransform, apply

__all__ = [
    "Component", "MixingMeasure", "Dataset",
    "expert_prob", "gate_weights", "density", "u_value",
    "canonicalize", "log_likelihood",
    "expert_log_prob_matrix", "gate_log_weight_matrix", "density_matrix",
    "measure_to_dict", "measure_from_dict", "save_measure", "load_measure",
    "save_dataset", "load_dataset",
]


def _frozen_array(values, shape: tuple[int, ...], what: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.shape != shape:
        raise ContractViolation(f"{what}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{what}: entries must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Component:
    """One mixture component: gate parameters plus one expert.

    ``a[K-1]`` and ``b[:, K-1]`` (the last class) are stored but must be
    exactly zero; the constructor rejects anything else.
    """

    beta0: float
    beta1: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        beta0 = float(self.beta0)
        if not np.isfinite(beta0):
            raise ContractViolation("beta0 must be finite")
        object.__setattr__(self, "beta0", beta0)
        beta1 = _frozen_array(self.beta1, (self.d,), "beta1")
        a = _frozen_array(self.a, (self.K,), "a")
        if self.K < 2:
            raise ContractViolation("a must have at least two classes")
        b = _frozen_array(self.b, (self.d, self.K), "b")
        if a[-1] != 0.0:
            raise ContractViolation("a[K] must be exactly 0 (last class pinned)")
        if np.any(b[:, -1] != 0.0):
            raise ContractViolation("b[:, K] must be exactly 0 (last class pinned)")
        object.__setattr__(self, "beta1", beta1)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def d(self) -> int:
        return np.asarray(self.beta1).shape[0]

    @property
    def K(self) -> int:
        return np.asarray(self.a).shape[0]

    def theta(self) -> np.ndarray:
        """Parameter vector (beta1, a_1..a_{K-1}, vec(b_1..b_{K-1})).

        The pinned class-K entries carry no information and are excluded.
        This is the coordinate system used for Voronoi assignment.
        """
        return np.concatenate([self.beta1, self.a[:-1], self.b[:, :-1].ravel()])


@dataclass(frozen=True)
class MixingMeasure:
    """A finite mixing measure: ordered components sharing ``(d, K)``.

    ``canonical`` records whether the gate-translation normalization has
    been applied (last component's gate parameters exactly zero).
    ``gate_transform`` tags the gate family the measure is meant to be
    evaluated under; operations accept an explicit override.
    """

    d: int
    K: int
    components: tuple[Component, ...]
    canonical: bool = False
    gate_transform: GateTransform = IDENTITY

    def __post_init__(self):
        if self.d < 1 or self.K < 2:
            raise ContractViolation("need d >= 1 and K >= 2")
        comps = tuple(self.components)
        if not comps:
            raise ContractViolation("a mixing measure needs at least one component")
        for c in comps:
            if c.d != self.d or c.K != self.K:
                raise ContractViolation("all components must share (d, K)")
        if self.canonical:
            last = comps[-1]
            if last.beta0 != 0.0 or np.any(last.beta1 != 0.0):
                raise ContractViolation(
                    "canonical measure must have zero gate parameters on its last component")
        object.__setattr__(self, "components", comps)

    @property
    def k(self) -> int:
        return len(self.components)

    @cached_property
    def beta0_vec(self) -> np.ndarray:
        v = np.array([c.beta0 for c in self.components])
        v.setflags(write=False)
        return v

    @cached_property
    def beta1_mat(self) -> np.ndarray:
        m = np.stack([c.beta1 for c in self.components])
        m.setflags(write=False)
        return m

    def masses(self) -> np.ndarray:
        """Gate masses exp(beta0_i)."""
        return np.exp(self.beta0_vec)


@dataclass(frozen=True)
class Dataset:
    """Covariates ``x`` (n x d) with 1-based class labels ``y`` (n,)."""

    x: np.ndarray
    y: np.ndarray
    K: int = field(default=0)  # 0: infer from labels

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ContractViolation("x must be a nonempty n x d matrix")
        if not np.all(np.isfinite(x)):
            raise ContractViolation("covariates must be finite")
        y = np.array(self.y, dtype=np.int64)
        if y.shape != (x.shape[0],):
            raise ContractViolation("y must have one label per covariate row")
        K = int(self.K) if self.K else int(y.max())
        if y.min() < 1 or y.max() > K:
            raise ContractViolation(f"labels must lie in 1..{K}")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "K", K)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_x(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise ContractViolation(f"covariate must have shape ({d},), got {x.shape}")
    return x


def expert_log_prob_matrix(c: Component, x_rows: np.ndarray) -> np.ndarray:
    """Log expert probabilities, shape (n, K), for covariate rows (n, d)."""
    logits = c.a[None, :] + x_rows @ c.b
    return _log_softmax(logits)


def gate_log_weight_matrix(measure: MixingMeasure, x_rows: np.ndarray,
                           transform: GateTransform | None = None) -> np.ndarray:
    """Log gate weights, shape (n, k), for covariate rows (n, d)."""
    m = transform if transform is not None else measure.gate_transform
    z = apply(m, x_rows)
    logits = z @ measure.beta1_mat.T + measure.beta0_vec[None, :]
    return _log_softmax(logits)


def density_matrix(measure: MixingMeasure, x_rows: np.ndarray,
                   transform: GateTransform | None = None) -> np.ndarray:
    """Conditional class probabilities, shape (n, K), for covariate rows."""
    x_rows = np.asarray(x_rows, dtype=float)
    log_gate = gate_log_weight_matrix(measure, x_rows, transform)
    out = np.zeros((x_rows.shape[0], measure.K))
    for i, c in enumerate(measure.components):
        out += np.exp(log_gate[:, i:i + 1] + expert_log_prob_matrix(c, x_rows))
    return out


def expert_prob(c: Component, x: np.ndarray) -> np.ndarray:
    """Expert class probabilities f(. | x; a, b) as a K-vector on the simplex."""
    x = _check_x(x, c.d)
    return np.exp(expert_log_prob_matrix(c, x[None, :])[0])


def gate_weights(measure: MixingMeasure, x: np.ndarray,
                 transform: GateTransform | None = None) -> np.ndarray:
    """Softmax gate weights over components as a k-vector on the simplex."""
    x = _check_x(x, measure.d)
    return np.exp(gate_log_weight_matrix(measure, x[None, :], transform)[0])


def density(measure: MixingMeasure, x: np.ndarray,
            transform: GateTransform | None = None) -> np.ndarray:
    """Mixture class probabilities g(. | x) as a K-vector on the simplex."""
    x = _check_x(x, measure.d)
    return density_matrix(measure, x[None, :], transform)[0]


def u_value(c: Component, x: np.ndarray, s: int) -> float:
    """exp(beta1 . x) * f(s | x; a, b) for the 1-based class ``s``.

    This is the numerator function whose gradients drive the gate/expert
    interaction analysis in :mod:`moe_lab.theory`.
    """
    x = _check_x(x, c.d)
    if not 1 <= s <= c.K:
        raise ContractViolation(f"class must lie in 1..{c.K}, got {s}")
    return float(np.exp(c.beta1 @ x) * expert_prob(c, x)[s - 1])


def canonicalize(measure: MixingMeasure) -> MixingMeasure:
    """Translate gate parameters so the last component's become exactly zero.

    The density is invariant under this translation; only the bookkeeping
    of ``beta0``/``beta1`` changes.
    """
    last = measure.components[-1]
    comps = tuple(
        replace(c, beta0=c.beta0 - last.beta0, beta1=np.asarray(c.beta1) - last.beta1)
        for c in measure.components
    )
    return MixingMeasure(measure.d, measure.K, comps, canonical=True,
                         gate_transform=measure.gate_transform)


def log_likelihood(measure: MixingMeasure, data: Dataset,
                   transform: GateTransform | None = None) -> float:
    """sum_t log g(y_t | x_t)."""
    if data.d != measure.d:
        raise ContractViolation(f"dataset has d={data.d}, measure has d={measure.d}")
    if data.K > measure.K:
        raise ContractViolation(f"dataset has labels up to {data.K}, measure has K={measure.K}")
    probs = density_matrix(measure, data.x, transform)
    picked = probs[np.arange(data.n), data.y - 1]
    return float(np.sum(np.log(picked)))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def measure_to_dict(measure: MixingMeasure) -> dict:
    return {
        "d": measure.d,
        "K": measure.K,
        "canonical": measure.canonical,
        "gate_transform": measure.gate_transform.name,
        "components": [
            {
                "beta0": c.beta0,
                "beta1": list(map(float, c.beta1)),
                "a": list(map(float, c.a)),
                "b": [list(map(float, row)) for row in c.b],
            }
            for c in measure.components
        ],
    }


def measure_from_dict(payload: dict) -> MixingMeasure:
    comps = tuple(
        Component(beta0=item["beta0"], beta1=item["beta1"], a=item["a"], b=item["b"])
        for item in payload["components"]
    )
    return MixingMeasure(
        d=payload["d"], K=payload["K"], components=comps,
        canonical=payload["canonical"],
        gate_transform=GateTransform.parse(payload["gate_transform"]),
    )


def save_measure(measure: MixingMeasure, path: str | Path) -> None:
    Path(path).write_text(json.dumps(measure_to_dict(measure), indent=2) + "\n")


def load_measure(path: str | Path) -> MixingMeasure:
    return measure_from_dict(json.loads(Path(path).read_text()))


def save_dataset(data: Dataset, path: str | Path) -> None:
    """Write the dataset as CSV with header ``x1,...,xd,y`` (y 1-based)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j + 1}" for j in range(data.d)] + ["y"])
        for row, label in zip(data.x, data.y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_dataset(path: str | Path, K: int = 0) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "y":
            raise ContractViolation(f"{path}: expected header x1,...,xd,y")
        d = len(header) - 1
        xs, ys = [], []
        for row in reader:
            if not row:
                continue
            xs.append([float(v) for v in row[:d]])
            ys.append(int(row[d]))
    return Dataset(x=np.array(xs, dtype=float).reshape(len(xs), d),
                   y=np.array(ys, dtype=np.int64), K=K)
