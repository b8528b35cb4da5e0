"""Maximum-likelihood fitting by EM.

The complete-data objective splits exactly into a gate sub-problem (a
soft-label multinomial logistic regression on the transformed covariate)
and one weighted multinomial logistic regression per expert.  Both are
concave and solved by damped Newton steps with Armijo backtracking, warm
started from the current parameters, so the expected complete-data
objective never decreases and the observed negative log-likelihood is
non-increasing along the EM trajectory.

Identifiability pins during optimization: class ``K`` of every expert and
the gate parameters of the last fitted component are held at zero, which
removes the softmax translation freedoms instead of chasing them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation
from .gates import GateTransform, apply
from .model import (Component, Dataset, MixingMeasure, canonicalize,
                    expert_log_prob_matrix, gate_log_weight_matrix, log_likelihood)
from .rng import stream
from .synth import Scenario

__all__ = ["NewtonConfig", "InitSpec", "FitConfig", "FitReport",
           "init_near_truth", "init_random", "e_step", "m_step", "fit"]

_GRAD_TOL = 1e-8


@dataclass(frozen=True)
class NewtonConfig:
    """Inner-solver settings for the two concave M-step sub-problems."""

    max_inner: int = 50
    damping: float = 1e-8
    line_search_shrink: float = 0.5
    armijo: float = 1e-4

    def __post_init__(self):
        if self.max_inner < 0 or self.damping <= 0:
            raise ContractViolation("max_inner must be >= 0 and damping > 0")
        if not (0 < self.line_search_shrink < 1) or not (0 < self.armijo < 1):
            raise ContractViolation("line_search_shrink and armijo must lie in (0, 1)")


@dataclass(frozen=True)
class InitSpec:
    """How to initialize EM: near a known truth, or blind random."""

    mode: str = "near_truth"
    sigma: float = 0.1
    scale: float = 1.0
    truth: MixingMeasure | None = None

    def __post_init__(self):
        if self.mode not in ("near_truth", "random"):
            raise ContractViolation(f"unknown init mode {self.mode!r}")
        if self.sigma <= 0 or self.scale <= 0:
            raise ContractViolation("sigma and scale must be positive")


@dataclass(frozen=True)
class FitConfig:
    """EM settings: component count, stopping rule, inner solver.

    ``param_box`` optionally constrains every free parameter to
    ``[-param_box, param_box]`` during optimization, mirroring the bounded
    parameter domain the estimator is defined over; ``None`` leaves the
    optimization unconstrained.
    """

    k: int
    max_iter: int = 2000
    tol: float = 1e-6
    init: InitSpec | None = None
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    param_box: float | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ContractViolation("k must be at least 1")
        if self.max_iter < 0:
            raise ContractViolation("max_iter must be >= 0")
        if self.tol <= 0:
            raise ContractViolation("tol must be positive")
        if self.param_box is not None and self.param_box <= 0:
            raise ContractViolation("param_box must be positive when set")


@dataclass(frozen=True)
class FitReport:
    """Fit outcome: canonical measure, NLL per iteration, convergence flag.

    ``nll_trajectory[0]`` is the negative log-likelihood at initialization;
    the trajectory is non-increasing up to a 1e-9 absolute slack.
    """

    measure: MixingMeasure
    nll_trajectory: np.ndarray
    iterations: int
    converged: bool


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _surjective_assignment(k: int, k_star: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random map of {0..k-1} onto {0..k_star-1} with no empty cell."""
    while True:
        assignment = rng.integers(0, k_star, size=k)
        if len(np.unique(assignment)) == k_star:
            return assignment


def init_near_truth(scenario: Scenario, k: int, seed: int, sigma: float = 0.1) -> MixingMeasure:
    """Gaussian perturbation of the truth with a random cell structure.

    Fitted slots are split uniformly at random into one nonempty cell per
    true component; each slot copies its cell's true parameters plus
    N(0, sigma^2) noise on the free entries, with the cell's gate intercept
    lowered by log(cell size) so cell gate masses start near their true
    values.  Slots are ordered by cell so the last fitted slot sits in the
    last true component's cell, keeping the pinned gauge consistent; the
    result is canonical and pinned entries carry no noise.
    """
    truth = scenario.truth
    k_star = truth.k
    if k < k_star:
        raise ContractViolation(f"need k >= k* = {k_star}, got {k}")
    rng = stream(seed, "init")
    assignment = np.sort(_surjective_assignment(k, k_star, rng))
    cell_sizes = np.bincount(assignment, minlength=k_star)
    d, K = truth.d, truth.K
    comps = []
    for slot, j in enumerate(assignment):
        tc = truth.components[j]
        last = slot == k - 1
        beta0 = tc.beta0 - np.log(cell_sizes[j])
        beta1 = np.asarray(tc.beta1, dtype=float).copy()
        if not last:
            beta0 += sigma * rng.standard_normal()
            beta1 += sigma * rng.standard_normal(d)
        a = np.asarray(tc.a, dtype=float).copy()
        a[:-1] += sigma * rng.standard_normal(K - 1)
        b = np.asarray(tc.b, dtype=float).copy()
        b[:, :-1] += sigma * rng.standard_normal((d, K - 1))
        comps.append(Component(beta0=beta0, beta1=beta1, a=a, b=b))
    raw = MixingMeasure(d, K, tuple(comps), canonical=False,
                        gate_transform=scenario.gate_transform)
    return canonicalize(raw)


def init_random(d: int, K: int, k: int, seed: int, scale: float = 1.0) -> MixingMeasure:
    """Blind Gaussian initialization with the usual pinning."""
    rng = stream(seed, "init")
    comps = []
    for slot in range(k):
        last = slot == k - 1
        beta0 = 0.0 if last else scale * rng.standard_normal()
        beta1 = np.zeros(d) if last else scale * rng.standard_normal(d)
        a = np.concatenate([scale * rng.standard_normal(K - 1), [0.0]])
        b = np.concatenate([scale * rng.standard_normal((d, K - 1)),
                            np.zeros((d, 1))], axis=1)
        comps.append(Component(beta0=beta0, beta1=beta1, a=a, b=b))
    return MixingMeasure(d, K, tuple(comps), canonical=True)


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------

def _e_step_with_loglik(measure: MixingMeasure, data: Dataset,
                        transform: GateTransform | None) -> tuple[np.ndarray, float]:
    """Responsibilities plus the observed log-likelihood of ``measure``."""
    if data.d != measure.d:
        raise ContractViolation(f"dataset has d={data.d}, measure has d={measure.d}")
    log_gate = gate_log_weight_matrix(measure, data.x, transform)
    rows = np.arange(data.n)
    log_joint = np.empty((data.n, measure.k))
    for i, c in enumerate(measure.components):
        log_joint[:, i] = log_gate[:, i] + expert_log_prob_matrix(c, data.x)[rows, data.y - 1]
    shift = log_joint.max(axis=1, keepdims=True)
    resp = np.exp(log_joint - shift)
    norm = resp.sum(axis=1, keepdims=True)
    loglik = float(np.sum(np.log(norm) + shift))
    resp /= norm
    return resp, loglik


def e_step(measure: MixingMeasure, data: Dataset,
           transform: GateTransform | None = None) -> np.ndarray:
    """Posterior component responsibilities, shape (n, k); rows sum to 1."""
    return _e_step_with_loglik(measure, data, transform)[0]


# ---------------------------------------------------------------------------
# M-step: shared concave softmax-regression solver
# ---------------------------------------------------------------------------

class _SoftmaxProblem:
    """Weighted soft-target softmax regression with the last class pinned.

    Objective: sum_t w_t sum_c T_tc log softmax_c(z_t . W_c) where the free
    coefficient rows are ``W`` (n_free, p) and class n_free+1 has zero logit.
    ``T`` rows sum to one (soft responsibilities or one-hot labels).
    """

    def __init__(self, Z: np.ndarray, T: np.ndarray, w: np.ndarray | None):
        self.Z = Z
        self.weighted_T = T if w is None else T * w[:, None]
        self.row_w = w

    def _log_probs(self, W: np.ndarray) -> np.ndarray:
        n = self.Z.shape[0]
        full = np.zeros((n, W.shape[0] + 1))
        full[:, :-1] = self.Z @ W.T
        full -= full.max(axis=1, keepdims=True)
        norm = np.exp(full).sum(axis=1, keepdims=True)
        full -= np.log(norm)
        return full

    def value(self, W: np.ndarray, keep_log_probs: bool = False):
        log_probs = self._log_probs(W)
        value = float(np.einsum("ij,ij->", self.weighted_T, log_probs))
        return (value, log_probs) if keep_log_probs else value

    def grad_from_log_probs(self, log_probs: np.ndarray, n_free: int):
        probs = np.exp(log_probs)
        weighted_probs = probs if self.row_w is None else probs * self.row_w[:, None]
        resid = self.weighted_T[:, :n_free] - weighted_probs[:, :n_free]
        return resid.T @ self.Z, probs

    def value_grad(self, W: np.ndarray):
        value, log_probs = self.value(W, keep_log_probs=True)
        grad, probs = self.grad_from_log_probs(log_probs, W.shape[0])
        return value, grad, probs

    def hessian(self, probs: np.ndarray, n_free: int) -> np.ndarray:
        p = self.Z.shape[1]
        wp = probs[:, :n_free] if self.row_w is None else \
            probs[:, :n_free] * self.row_w[:, None]
        hess = np.empty((n_free * p, n_free * p))
        for i in range(n_free):
            for j in range(i, n_free):
                coef = -wp[:, i] * probs[:, j]
                if i == j:
                    coef = coef + wp[:, i]
                block = -(self.Z * coef[:, None]).T @ self.Z
                hess[i * p:(i + 1) * p, j * p:(j + 1) * p] = block
                if i != j:
                    hess[j * p:(j + 1) * p, i * p:(i + 1) * p] = block.T
        return hess


def _softmax_objective(W: np.ndarray, Z: np.ndarray, T: np.ndarray,
                       w: np.ndarray | None, want_hessian: bool):
    """Value/gradient(/Hessian) of the M-step softmax objective."""
    problem = _SoftmaxProblem(Z, T, w)
    value, grad, probs = problem.value_grad(W)
    if not want_hessian:
        return value, grad, None
    return value, grad, problem.hessian(probs, W.shape[0])


def _newton_maximize(W0: np.ndarray, Z: np.ndarray, T: np.ndarray,
                     w: np.ndarray | None, cfg: NewtonConfig,
                     bound: float | None = None) -> tuple[np.ndarray, bool]:
    """Damped Newton ascent with Armijo backtracking; never leaves the start
    with a lower objective.  With ``bound`` set, candidate steps are clipped
    into the box [-bound, bound] (sufficient increase is then measured along
    the clipped step).  Returns (solution, improved_or_stationary)."""
    problem = _SoftmaxProblem(Z, T, w)
    W = W0.copy()
    n_free, p = W.shape
    value, grad, probs = problem.value_grad(W)
    accepted = 0
    stalled_gnorm = 0.0
    for _ in range(cfg.max_inner):
        if bound is None:
            gnorm = float(np.max(np.abs(grad)))
        else:
            # projected gradient: ignore components pushing out of the box
            projected = grad.copy()
            projected[(W >= bound) & (grad > 0)] = 0.0
            projected[(W <= -bound) & (grad < 0)] = 0.0
            gnorm = float(np.max(np.abs(projected)))
        if gnorm <= _GRAD_TOL:
            break
        g = grad.ravel()
        hess = problem.hessian(probs, n_free)
        damping = cfg.damping
        step = None
        step_value = value
        for _attempt in range(8):
            try:
                direction = np.linalg.solve(-hess + damping * np.eye(hess.shape[0]), g)
            except np.linalg.LinAlgError:
                damping *= 100.0
                continue
            if float(g @ direction) <= 0:
                damping *= 100.0
                continue
            direction = direction.reshape(n_free, p)
            t = 1.0
            while t > 1e-12:
                cand = W + t * direction
                if bound is not None:
                    np.clip(cand, -bound, bound, out=cand)
                slope = float(g @ (cand - W).ravel())
                if slope > 0:
                    cand_value, cand_lp = problem.value(cand, keep_log_probs=True)
                    if cand_value >= value + cfg.armijo * slope and cand_value > value:
                        step, step_value = cand, cand_value
                        break
                t *= cfg.line_search_shrink
            if step is not None:
                break
            damping *= 100.0
        if step is None:
            stalled_gnorm = gnorm
            break
        W = step
        accepted += 1
        at_floor = step_value - value <= 1e-12 * (1.0 + abs(value))
        value = step_value
        if at_floor:
            break  # improvements below double-precision resolution
        grad, probs = problem.grad_from_log_probs(cand_lp, n_free)
    # a stall with no progress and a materially nonzero gradient is a genuine
    # failure; a stall at the numerical noise floor is convergence
    ok = not (accepted == 0 and stalled_gnorm > 1e-5 * (1.0 + abs(value)))
    return W, ok


def _design(x_rows: np.ndarray) -> np.ndarray:
    return np.concatenate([np.ones((x_rows.shape[0], 1)), x_rows], axis=1)


def m_step(resp: np.ndarray, data: Dataset, transform: GateTransform | None,
           measure: MixingMeasure, cfg: FitConfig) -> MixingMeasure:
    """Maximize the expected complete-data objective given responsibilities.

    Gate parameters (all components but the pinned last one) and each
    component's expert parameters are updated by separate damped-Newton
    solves warm started at the current values.  If an inner solve fails to
    find an improving step the corresponding block is left unchanged and a
    warning is emitted (generalized-EM fallback).
    """
    k = measure.k
    if resp.shape != (data.n, k):
        raise ContractViolation(f"responsibilities must have shape ({data.n}, {k})")
    m = transform if transform is not None else measure.gate_transform
    newton = cfg.newton
    new_comps = list(measure.components)

    if k > 1:
        z_gate = _design(apply(m, data.x))
        w_gate = np.stack([np.concatenate([[c.beta0], c.beta1]) for c in measure.components[:-1]])
        offset = np.concatenate([[measure.components[-1].beta0], measure.components[-1].beta1])
        w_gate = w_gate - offset  # solve in the gauge where the last component is zero
        w_gate, ok = _newton_maximize(w_gate, z_gate, resp, None, newton, cfg.param_box)
        if not ok:
            warnings.warn("gate update found no improving step; keeping old gate parameters")
        else:
            w_gate = w_gate + offset
            for i in range(k - 1):
                new_comps[i] = replace(new_comps[i], beta0=float(w_gate[i, 0]),
                                       beta1=w_gate[i, 1:])

    z_exp = _design(data.x)
    onehot = np.zeros((data.n, data.K))
    onehot[np.arange(data.n), data.y - 1] = 1.0
    for i in range(k):
        c = new_comps[i]
        # free classes 1..K-1: rows are (a_l, b_l)
        w_i = np.concatenate([c.a[:-1, None], c.b[:, :-1].T], axis=1)
        w_i, ok = _newton_maximize(w_i, z_exp, onehot, resp[:, i], newton, cfg.param_box)
        if not ok:
            warnings.warn(f"expert {i} update found no improving step; keeping old parameters")
            continue
        a = np.concatenate([w_i[:, 0], [0.0]])
        b = np.concatenate([w_i[:, 1:].T, np.zeros((measure.d, 1))], axis=1)
        new_comps[i] = replace(c, a=a, b=b)

    return MixingMeasure(measure.d, measure.K, tuple(new_comps),
                         canonical=measure.canonical, gate_transform=m)


# ---------------------------------------------------------------------------
# EM loop
# ---------------------------------------------------------------------------

def fit(data: Dataset, cfg: FitConfig, transform: GateTransform | None,
        init: MixingMeasure, exact_iters: bool = False) -> FitReport:
    """Alternate E and M steps from ``init`` until the relative NLL change
    drops below ``cfg.tol`` or ``cfg.max_iter`` is reached.

    With ``exact_iters`` the tolerance rule is disabled and exactly
    ``cfg.max_iter`` iterations run (trajectory length max_iter + 1).
    """
    if init.k != cfg.k:
        raise ContractViolation(f"init has {init.k} components, config wants {cfg.k}")
    if data.d != init.d:
        raise ContractViolation(f"dataset has d={data.d}, init has d={init.d}")
    m = transform if transform is not None else init.gate_transform
    measure = canonicalize(init)
    if m != measure.gate_transform:
        measure = MixingMeasure(measure.d, measure.K, measure.components,
                                canonical=True, gate_transform=m)
    resp, loglik = _e_step_with_loglik(measure, data, m)
    nll = [-loglik]
    converged = False
    for _ in range(cfg.max_iter):
        measure = m_step(resp, data, m, measure, cfg)
        resp, loglik = _e_step_with_loglik(measure, data, m)
        nll.append(-loglik)
        if not exact_iters and abs(nll[-1] - nll[-2]) / (1.0 + abs(nll[-1])) < cfg.tol:
            converged = True
            break
    return FitReport(measure=canonicalize(measure),
                     nll_trajectory=np.asarray(nll),
                     iterations=len(nll) - 1,
                     converged=converged)
