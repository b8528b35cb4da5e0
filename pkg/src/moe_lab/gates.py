"""Gate transforms and the numerical linear-independence test.

A gate transform is a map ``M`` applied to the covariate before it enters
the softmax gate.  ``identity`` reproduces the standard gate; the other
tags give modified gates.  A transform is *admissible* when the function
family ``{x^p * M(x)^q : p, q in N^d, 0 <= |p|+|q| <= 2}`` is linearly
independent almost everywhere, which :func:`independence_check` probes by
the numerical rank of a sampled design matrix.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, TransformDomainError
from .rng import stream

_TAGS = ("identity", "sigmoid", "tanh", "cos", "sin", "logabs", "power", "normalize")

#: coordinates closer than this to an excluded point are resampled
EXCLUSION_RADIUS = 1e-6


@dataclass(frozen=True)
class GateTransform:
    """Input map used inside the softmax gate.

    All tags act element-wise except ``normalize`` (x -> x/||x||).
    ``power`` carries an integer exponent ``m >= 3``.
    """

    tag: str
    power: int | None = None

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise ContractViolation(f"unknown gate transform tag {self.tag!r}")
        if self.tag == "power":
            if self.power is None or self.power < 3:
                raise ContractViolation("power transform requires an exponent m >= 3")
        elif self.power is not None:
            raise ContractViolation(f"{self.tag!r} does not take an exponent")

    @property
    def name(self) -> str:
        """Serialized form, e.g. ``"sigmoid"`` or ``"power3"``."""
        return f"power{self.power}" if self.tag == "power" else self.tag

    @staticmethod
    def parse(name: str) -> "GateTransform":
        m = re.fullmatch(r"power(\d+)", name)
        if m:
            return GateTransform("power", int(m.group(1)))
        return GateTransform(name)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return apply(self, x)


IDENTITY = GateTransform("identity")


def apply(transform: GateTransform, x: np.ndarray) -> np.ndarray:
    """Apply ``transform`` to one covariate vector (or a batch of rows).

    Raises
    ------
    TransformDomainError
        For ``logabs`` at a zero coordinate or ``normalize`` at the origin,
        naming the offending coordinate/row.
    """
    x = np.asarray(x, dtype=float)
    tag = transform.tag
    if tag == "identity":
        return x
    if tag == "sigmoid":
        out = np.empty_like(x)
        np.exp(-np.abs(x), out=out)
        # stable sigmoid, exact 0.5 at 0
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + out[pos])
        out[~pos] = out[~pos] / (1.0 + out[~pos])
        return out
    if tag == "tanh":
        return np.tanh(x)
    if tag == "cos":
        return np.cos(x)
    if tag == "sin":
        return np.sin(x)
    if tag == "logabs":
        bad = np.nonzero(x == 0.0)
        if bad[0].size:
            coord = tuple(int(i[0]) for i in bad)
            raise TransformDomainError(f"log|x| undefined at coordinate {coord} (x == 0)")
        return np.log(np.abs(x))
    if tag == "power":
        return x ** transform.power
    if tag == "normalize":
        if x.ndim == 1:
            norm = np.linalg.norm(x)
            if norm == 0.0:
                raise TransformDomainError("x/||x|| undefined at the origin (coordinate 0)")
            return x / norm
        norms = np.linalg.norm(x, axis=-1, keepdims=True)
        bad = np.nonzero(norms.ravel() == 0.0)[0]
        if bad.size:
            raise TransformDomainError(f"x/||x|| undefined at the origin (row {int(bad[0])})")
        return x / norms
    raise ContractViolation(f"unknown gate transform tag {tag!r}")


@dataclass(frozen=True)
class IndependenceReport:
    """Outcome of the sampled-rank test for one transform.

    ``passed`` is true exactly when the numerical rank equals the number of
    monomials, i.e. no linear dependence was detected among the sampled
    columns.
    """

    monomial_count: int
    numeric_rank: int
    min_singular_value: float
    passed: bool
    exclusion_radius: float = EXCLUSION_RADIUS

    def to_dict(self) -> dict:
        return {
            "monomial_count": self.monomial_count,
            "numeric_rank": self.numeric_rank,
            "min_singular_value": self.min_singular_value,
            "pass": self.passed,
            "exclusion_radius": self.exclusion_radius,
        }


def monomial_exponents(d: int) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All multi-index pairs ``(p, q)`` with ``|p| + |q| <= 2``.

    Enumerated in graded lexicographic order on the concatenated tuple so
    reports are reproducible.
    """
    pairs = []
    for degree in range(3):
        for combo in itertools.product(range(degree + 1), repeat=2 * d):
            if sum(combo) == degree:
                pairs.append((combo[:d], combo[d:]))
    return pairs


def _sample_in_domain(transform: GateTransform, n: int, d: int,
                      box: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    lo, hi = box[:, 0], box[:, 1]
    x = rng.uniform(lo, hi, size=(n, d))
    if transform.tag == "logabs":
        for _ in range(100):
            bad = np.abs(x) < EXCLUSION_RADIUS
            if not bad.any():
                break
            x[bad] = rng.uniform(np.broadcast_to(lo, x.shape)[bad],
                                 np.broadcast_to(hi, x.shape)[bad])
    elif transform.tag == "normalize":
        for _ in range(100):
            bad = np.linalg.norm(x, axis=1) < EXCLUSION_RADIUS
            if not bad.any():
                break
            x[bad] = rng.uniform(lo, hi, size=(int(bad.sum()), d))
    return x


def independence_check(transform: GateTransform, d: int, n_samples: int = 200,
                       rel_tol: float = 1e-8, seed: int = 0,
                       box: np.ndarray | None = None) -> IndependenceReport:
    """Numerical rank of the ``n_samples x monomial_count`` design matrix.

    Column ``(p, q)`` holds ``x^p * M(x)^q`` at each sampled covariate.
    The rank counts singular values above ``rel_tol * sigma_max``;
    the check passes when the matrix has full column rank.
    """
    exponents = monomial_exponents(d)
    m = len(exponents)
    if n_samples < m:
        raise ContractViolation(f"need at least {m} samples for d={d}, got {n_samples}")
    if box is None:
        box = np.array([[0.0, 1.0]] * d)
    box = np.asarray(box, dtype=float).reshape(d, 2)
    rng = stream(seed, "independence", d)
    x = _sample_in_domain(transform, n_samples, d, box, rng)
    mx = apply(transform, x)
    cols = np.empty((n_samples, m))
    for j, (p, q) in enumerate(exponents):
        cols[:, j] = np.prod(x ** np.asarray(p), axis=1) * np.prod(mx ** np.asarray(q), axis=1)
    sigma = np.linalg.svd(cols, compute_uv=False)
    rank = int(np.sum(sigma > rel_tol * sigma[0]))
    return IndependenceReport(
        monomial_count=m,
        numeric_rank=rank,
        min_singular_value=float(sigma[-1]),
        passed=(rank == m),
    )


def expected_monomial_count(d: int) -> int:
    """|{(p, q) : |p|+|q| <= 2}| = C(2d+2, 2)."""
    return math.comb(2 * d + 2, 2)
