"""Structural probes of the model: gradient interaction, regimes, and the
slow-rate witness sequence.

When an expert's slopes vanish (``b = 0``), the gradient of the numerator
function ``u(s|x) = exp(beta1 . x) f(s|x)`` with respect to the gate slope
is proportional, with an x-independent per-class constant, to its gradient
with respect to the expert slope of the same class:

    du/dbeta1 = 1/(1 - f_s) * du/db_s        (b = 0)

:func:`pde_interaction_check` tests this proportionality numerically from
analytic gradients.  Measures are classified ``regime2`` when some
component's slopes all vanish (the interaction is active) and ``regime1``
otherwise.

For a regime-2 truth, :func:`build_adversarial` constructs the explicit
(k*+1)-component sequence whose Voronoi loss admits a closed form
(:func:`dr_closed_form`) while its density stays close to the truth;
:func:`collapse_ratio_series` tracks the ratio of expected Total Variation
to Voronoi loss along that sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolation, InconclusiveError, ParameterRangeError
from .model import Component, MixingMeasure, canonicalize, expert_prob
from .metrics import McConfig, tv_expect, voronoi_loss

__all__ = [
    "classify_regime", "PdeReport", "pde_interaction_check",
    "AdversarialParams", "reindex_collapsed_first", "adversarial_params",
    "build_adversarial", "dr_closed_form", "collapse_ratio_series",
]


def _is_collapsed(c: Component, tol: float) -> bool:
    # slopes of classes 1..K-1 all vanish (class K is pinned to zero anyway)
    return bool(np.all(np.linalg.norm(c.b[:, :-1], axis=0) <= tol))


def classify_regime(measure: MixingMeasure, tol: float = 1e-12) -> str:
    """``"regime2"`` if some component has all expert slopes within ``tol``
    of zero, else ``"regime1"``."""
    if not measure.canonical:
        raise ContractViolation("classify_regime expects a canonical measure")
    if any(_is_collapsed(c, tol) for c in measure.components):
        return "regime2"
    return "regime1"


# ---------------------------------------------------------------------------
# gradient interaction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PdeReport:
    """Proportionality test result for one component.

    ``per_class_constants[s-1]`` estimates the ratio for class ``s``;
    ``constant_spread`` is the largest per-class (max - min) over the
    sampled covariates, and ``max_relative_deviation`` the largest relative
    deviation of any sampled coordinate ratio from its class constant.
    ``holds`` requires both to fall below the tolerance, i.e. the ratio is
    x-independent class by class.
    """

    proportionality_constant: float
    max_relative_deviation: float
    constant_spread: float
    holds: bool
    per_class_constants: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "proportionality_constant": self.proportionality_constant,
            "max_relative_deviation": self.max_relative_deviation,
            "constant_spread": self.constant_spread,
            "holds": self.holds,
            "per_class_constants": list(self.per_class_constants),
        }


def u_gradients(c: Component, x: np.ndarray, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of ``u(s|x)`` w.r.t. the gate slope and the
    class-``s`` expert slope (1-based ``s``)."""
    x = np.asarray(x, dtype=float)
    f = expert_prob(c, x)
    scale = math.exp(float(c.beta1 @ x))
    fs = f[s - 1]
    grad_beta1 = x * scale * fs
    grad_bs = x * scale * fs * (1.0 - fs)
    return grad_beta1, grad_bs


def pde_interaction_check(c: Component, x_samples: np.ndarray,
                          tol: float = 1e-8) -> PdeReport:
    """Test whether du/dbeta1 is an x-independent multiple of du/db_s.

    Coordinate-wise ratios are collected over all samples and classes
    ``s = 1..K-1``; coordinates where the denominator gradient is below
    1e-14 are skipped (both gradients vanish together there).
    """
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    per_class_constants = []
    spread = 0.0
    rel_dev = 0.0
    for s in range(1, c.K):
        ratios = []
        for x in x_samples:
            g1, g2 = u_gradients(c, x, s)
            usable = np.abs(g2) >= 1e-14
            ratios.extend((g1[usable] / g2[usable]).tolist())
        if not ratios:
            raise InconclusiveError(
                f"class {s}: all gradient coordinates below 1e-14; cannot form ratios")
        ratios = np.asarray(ratios)
        center = float(np.mean(ratios))
        per_class_constants.append(center)
        spread = max(spread, float(ratios.max() - ratios.min()))
        rel_dev = max(rel_dev, float(np.max(np.abs(ratios - center)) / abs(center)))
    return PdeReport(
        proportionality_constant=float(np.mean(per_class_constants)),
        max_relative_deviation=rel_dev,
        constant_spread=spread,
        holds=(rel_dev < tol and spread < tol),
        per_class_constants=tuple(per_class_constants),
    )


# ---------------------------------------------------------------------------
# adversarial sequence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdversarialParams:
    """Shrinking perturbation sizes for the witness sequence at index ``n``.

    ``t_n`` is the gate-mass deficit, ``c_n`` the parameter shift;
    ``B`` bounds the covariate norm and ``N`` sums the first-order
    class-1 expert derivatives at the collapsed component.
    """

    n: int
    t_n: float
    c_n: float
    B: float
    N: float

    def to_dict(self) -> dict:
        return {"n": self.n, "t_n": self.t_n, "c_n": self.c_n, "B": self.B, "N": self.N}


def reindex_collapsed_first(measure: MixingMeasure, tol: float = 1e-12) -> MixingMeasure:
    """Reorder components so a collapsed one comes first, re-canonicalized.

    Raises if no component is collapsed (the measure is not regime 2).
    """
    _ = classify_regime(measure, tol)  # validates canonical
    idx = next((i for i, c in enumerate(measure.components) if _is_collapsed(c, tol)), None)
    if idx is None:
        raise ContractViolation("no collapsed component: measure is regime 1")
    order = [idx] + [i for i in range(measure.k) if i != idx]
    reordered = MixingMeasure(measure.d, measure.K,
                              tuple(measure.components[i] for i in order),
                              canonical=False, gate_transform=measure.gate_transform)
    return canonicalize(reordered)


def _check_collapsed_first(truth: MixingMeasure) -> None:
    if not truth.canonical:
        raise ContractViolation("truth must be canonical")
    if not _is_collapsed(truth.components[0], 1e-12):
        raise ContractViolation(
            "collapsed component must come first; apply reindex_collapsed_first")


def _expert_derivative_sum(c: Component) -> float:
    """N = sum over classes l = 1..K-1 of d f(Y=1)/d h_l at the component's
    intercepts.  Constant in x because the slopes vanish; equals f_1 * f_K."""
    f = expert_prob(c, np.zeros(c.d))
    jac = np.diag(f) - np.outer(f, f)
    return float(np.sum(jac[0, : c.K - 1]))


def _box_norm_bound(d: int, box: np.ndarray | None) -> float:
    if box is None:
        box = np.array([[0.0, 1.0]] * d)
    box = np.asarray(box, dtype=float).reshape(d, 2)
    corner = np.maximum(np.abs(box[:, 0]), np.abs(box[:, 1]))
    return float(np.linalg.norm(corner))


def adversarial_params(truth: MixingMeasure, n: int,
                       box: np.ndarray | None = None) -> AdversarialParams:
    """Perturbation sizes ``t_n = B / (n N)`` and
    ``c_n = 1 / (n N exp(beta0_1) - B)`` for the witness at index ``n``."""
    _check_collapsed_first(truth)
    B = _box_norm_bound(truth.d, box)
    N = _expert_derivative_sum(truth.components[0])
    if N <= 0:
        raise ParameterRangeError(f"derivative sum must be positive, got {N}")
    denom = n * N * math.exp(truth.components[0].beta0) - B
    if denom <= 0:
        raise ParameterRangeError(
            f"n = {n} too small: n*N*exp(beta0_1) - B = {denom} <= 0")
    return AdversarialParams(n=n, t_n=B / (n * N), c_n=1.0 / denom, B=B, N=N)


def build_adversarial(truth: MixingMeasure, params: AdversarialParams) -> MixingMeasure:
    """The (k*+1)-component witness measure.

    The collapsed component's gate mass, short of ``t_n``, is split evenly
    over two copies whose gate slope gains ``c_n`` in every coordinate and
    whose free intercepts gain ``c_n``; the remaining components are copied
    unchanged.
    """
    _check_collapsed_first(truth)
    first = truth.components[0]
    half_mass = 0.5 * math.exp(first.beta0) - 0.5 * params.t_n
    if half_mass <= 0:
        raise ParameterRangeError(
            f"t_n = {params.t_n} >= exp(beta0_1) = {math.exp(first.beta0)}: negative gate mass")
    shift_a = np.concatenate([np.full(truth.K - 1, params.c_n), [0.0]])
    clone = replace(
        first,
        beta0=math.log(half_mass),
        beta1=np.asarray(first.beta1) + params.c_n,
        a=np.asarray(first.a) + shift_a,
    )
    comps = (clone, clone) + truth.components[1:]
    return MixingMeasure(truth.d, truth.K, comps, canonical=truth.canonical,
                         gate_transform=truth.gate_transform)


def dr_closed_form(truth: MixingMeasure, params: AdversarialParams, r: float) -> float:
    """Direct expansion of the Voronoi loss for the witness measure:

        t_n + (exp(beta0_1) - t_n) * c_n^r * (d^(r/2) + (K-1)).

    At K = 2 this coincides with the factored form (K-1)(1 + d^(r/2)).
    """
    _check_collapsed_first(truth)
    if r < 1:
        raise ContractViolation(f"order must satisfy r >= 1, got {r}")
    mass = math.exp(truth.components[0].beta0)
    if params.t_n >= mass:
        raise ParameterRangeError(
            f"t_n = {params.t_n} >= exp(beta0_1) = {mass}: negative gate mass")
    d, K = truth.d, truth.K
    return params.t_n + (mass - params.t_n) * params.c_n ** r * (d ** (r / 2) + (K - 1))


def collapse_ratio_series(truth: MixingMeasure, n_grid: list[int], r: float = 2.0,
                          mc: McConfig = McConfig()) -> list[tuple[int, float]]:
    """(n, TV / D_r) along the witness sequence, standard gate on both sides."""
    if classify_regime(truth) != "regime2":
        raise ContractViolation("collapse ratio series requires a regime-2 truth")
    base = reindex_collapsed_first(truth)
    out = []
    for n in n_grid:
        params = adversarial_params(base, n)
        witness = build_adversarial(base, params)
        tv = tv_expect(witness, base, n_mc=mc.n_mc, seed=mc.seed).value
        loss = voronoi_loss(witness, base, r)
        out.append((int(n), tv / loss))
    return out
