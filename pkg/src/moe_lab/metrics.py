"""Estimation-error metrics between mixing measures.

Two families live here:

* the Voronoi loss ``D_r``: each fitted component is assigned to its nearest
  true component (a Voronoi cell of the fitted measure per true component);
  the loss combines the per-cell gate-mass error with gate/expert parameter
  distances raised to ``r`` on over-specified cells (more than one member)
  and to 1 on exact-specified cells (a single member);

* Monte-Carlo estimates of the expected Hellinger / Total-Variation distance
  between the conditional class densities of two measures, averaged over a
  uniform covariate draw.

``D_r(fit, truth)`` is not symmetric; it is evaluated with the fitted
measure first, the ground truth second, both in canonical form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .gates import GateTransform
from .model import MixingMeasure, density_matrix
from .rng import stream

__all__ = [
    "VoronoiAssignment", "voronoi_cells", "voronoi_loss",
    "McConfig", "McEstimate", "hellinger_expect", "tv_expect",
]


@dataclass(frozen=True)
class VoronoiAssignment:
    """Partition of fitted-component indices by nearest true component.

    ``cells[j]`` lists the fitted indices assigned to true component ``j``
    (0-based, disjoint, covering all fitted indices); ``distances[i]`` is
    fitted component ``i``'s distance to its chosen true component.
    """

    cells: tuple[tuple[int, ...], ...]
    distances: tuple[float, ...]


def _require_canonical(measure: MixingMeasure, name: str) -> None:
    if not measure.canonical:
        raise ContractViolation(f"{name} must be canonical (use canonicalize first)")


def voronoi_cells(fit: MixingMeasure, truth: MixingMeasure) -> VoronoiAssignment:
    """Assign each fitted component to the nearest true component.

    Distance is the Euclidean norm on the concatenated free parameters
    (gate slope, expert intercepts and slopes for classes 1..K-1).
    Ties break toward the smallest true index, making the cells disjoint.
    """
    _require_canonical(fit, "fit")
    _require_canonical(truth, "truth")
    if (fit.d, fit.K) != (truth.d, truth.K):
        raise ContractViolation("fit and truth must share (d, K)")
    fit_theta = np.stack([c.theta() for c in fit.components])
    true_theta = np.stack([c.theta() for c in truth.components])
    dist = np.linalg.norm(fit_theta[:, None, :] - true_theta[None, :, :], axis=2)
    owner = np.argmin(dist, axis=1)  # first minimum: smallest true index
    cells = tuple(tuple(np.nonzero(owner == j)[0].tolist()) for j in range(truth.k))
    distances = tuple(float(dist[i, owner[i]]) for i in range(fit.k))
    return VoronoiAssignment(cells=cells, distances=distances)


def voronoi_loss(fit: MixingMeasure, truth: MixingMeasure, r: float) -> float:
    """Order-``r`` Voronoi loss of ``fit`` against ``truth``.

    Gate-mass term: sum_j | sum_{i in C_j} exp(beta0_i) - exp(beta0*_j) |.
    Parameter term per fitted i in cell j, weighted by exp(beta0_i):
    ``||dbeta1||^rho + sum_{l<K} (|da_l|^rho + ||db_l||^rho)`` with
    ``rho = r`` on over-specified cells and ``rho = 1`` on singletons.
    Zero exactly when fit and truth coincide as canonical measures.
    """
    if r < 1:
        raise ContractViolation(f"order must satisfy r >= 1, got {r}")
    assignment = voronoi_cells(fit, truth)
    fit_mass = fit.masses()
    true_mass = truth.masses()
    total = 0.0
    for j, cell in enumerate(assignment.cells):
        cell_mass = sum(fit_mass[i] for i in cell)
        total += abs(cell_mass - true_mass[j])
        rho = r if len(cell) > 1 else 1.0
        tc = truth.components[j]
        for i in cell:
            fc = fit.components[i]
            term = np.linalg.norm(fc.beta1 - tc.beta1) ** rho
            for ell in range(truth.K - 1):
                term += abs(fc.a[ell] - tc.a[ell]) ** rho
                term += np.linalg.norm(fc.b[:, ell] - tc.b[:, ell]) ** rho
            total += fit_mass[i] * term
    return float(total)


# ---------------------------------------------------------------------------
# Monte-Carlo density distances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class McConfig:
    """Monte-Carlo settings for expected-distance estimates."""

    n_mc: int = 20_000
    seed: int = 0


@dataclass(frozen=True)
class McEstimate:
    """A Monte-Carlo mean with its standard error."""

    value: float
    std_error: float
    n_mc: int


def _mc_expect(per_x, a: MixingMeasure, b: MixingMeasure,
               m_a: GateTransform | None, m_b: GateTransform | None,
               n_mc: int, seed: int, box: np.ndarray | None) -> McEstimate:
    if (a.d, a.K) != (b.d, b.K):
        raise ContractViolation("measures must share (d, K)")
    if n_mc < 1:
        raise ContractViolation("n_mc must be at least 1")
    if box is None:
        box = np.array([[0.0, 1.0]] * a.d)
    box = np.asarray(box, dtype=float).reshape(a.d, 2)
    rng = stream(seed, "mc")
    x = rng.uniform(box[:, 0], box[:, 1], size=(n_mc, a.d))
    p = density_matrix(a, x, m_a)
    q = density_matrix(b, x, m_b)
    vals = per_x(p, q)
    value = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else float("inf")
    return McEstimate(value=value, std_error=stderr, n_mc=n_mc)


def _hellinger_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.sqrt(0.5 * np.sum((np.sqrt(p) - np.sqrt(q)) ** 2, axis=1))


def _tv_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return 0.5 * np.sum(np.abs(p - q), axis=1)


def hellinger_expect(a: MixingMeasure, b: MixingMeasure,
                     m_a: GateTransform | None = None,
                     m_b: GateTransform | None = None,
                     n_mc: int = 20_000, seed: int = 0,
                     box: np.ndarray | None = None) -> McEstimate:
    """E_X[h(g_a(.|X), g_b(.|X))] by Monte Carlo over a uniform covariate.

    Per covariate, ``h(p, q) = sqrt(0.5 * sum_s (sqrt(p_s) - sqrt(q_s))^2)``,
    a value in [0, 1].  Both densities are evaluated on the same draw, so
    the estimate is deterministic given the seed.
    """
    return _mc_expect(_hellinger_rows, a, b, m_a, m_b, n_mc, seed, box)


def tv_expect(a: MixingMeasure, b: MixingMeasure,
              m_a: GateTransform | None = None,
              m_b: GateTransform | None = None,
              n_mc: int = 20_000, seed: int = 0,
              box: np.ndarray | None = None) -> McEstimate:
    """E_X[V(g_a(.|X), g_b(.|X))] with ``V(p, q) = 0.5 * sum_s |p_s - q_s|``."""
    return _mc_expect(_tv_rows, a, b, m_a, m_b, n_mc, seed, box)
