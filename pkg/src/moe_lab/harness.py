"""Experiment orchestration: rate sweeps, NLL comparisons, CSV/SVG output.

A rate experiment draws, for every sample size on a grid and every
replication, a fresh dataset from the scenario, fits it by EM from a
near-truth initialization, and records the order-2 Voronoi loss of the fit
against the truth.  Per-size means feed an ordinary least-squares line in
log-log space whose slope is the empirical convergence rate.

Seeds derive from ``(master_seed, role, k, size_index, replication)``, so
results are reproducible and independent of how replications are scheduled;
CSV output is byte-identical across reruns of the same configuration.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .em import FitConfig, fit, init_near_truth
from .errors import ContractViolation
from .gates import IDENTITY, GateTransform
from .metrics import McConfig, voronoi_loss
from .rng import ROLE_CODES
from .synth import preset, sample

__all__ = [
    "ExperimentConfig", "RatePoint", "RateReport",
    "fit_loglog_slope", "run_rate_experiment", "run_nll_comparison",
    "emit_rate_csv", "parse_rate_csv", "emit_rate_svg",
    "emit_nll_csv", "emit_nll_svg",
]


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for one scenario/gate sweep."""

    scenario: str
    gate: GateTransform = IDENTITY
    k_list: tuple[int, ...] = (3, 4)
    n_grid: tuple[int, ...] = ()
    replications: int = 10
    master_seed: int = 0
    sigma: float = 0.1
    max_iter: int = 2000
    tol: float = 1e-6
    mc: McConfig = field(default_factory=McConfig)
    out_dir: Path | None = None
    threads: int = 1

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ContractViolation("n_grid must be strictly increasing")
        if self.replications < 1:
            raise ContractViolation("replications must be at least 1")
        object.__setattr__(self, "n_grid", grid)
        object.__setattr__(self, "k_list", tuple(int(k) for k in self.k_list))
        if self.out_dir is not None:
            object.__setattr__(self, "out_dir", Path(self.out_dir))


def desk_grid(n_min: int = 1_000, n_max: int = 30_000, points: int = 8) -> tuple[int, ...]:
    """Log-spaced sample sizes, rounded to integers, duplicates removed."""
    grid = np.unique(np.round(np.geomspace(n_min, n_max, points)).astype(int))
    return tuple(int(n) for n in grid)


@dataclass(frozen=True)
class RatePoint:
    n: int
    mean_loss: float
    std_loss: float
    replications: int
    status_ok: int
    status_failed: int


@dataclass(frozen=True)
class RateReport:
    """Per-size loss summaries plus the fitted log-log regression line."""

    k: int
    points: tuple[RatePoint, ...]
    slope: float
    intercept: float
    r_squared: float


def fit_loglog_slope(points) -> tuple[float, float, float]:
    """OLS of log(value) on log(n): returns (slope, intercept, r_squared)."""
    pts = [(float(n), float(v)) for n, v in points]
    if len(pts) < 2:
        raise ContractViolation("need at least 2 points for a slope")
    if any(v <= 0 for _, v in pts):
        raise ContractViolation("slope fit requires positive values")
    logn = np.log([n for n, _ in pts])
    logv = np.log([v for _, v in pts])
    slope, intercept = np.polyfit(logn, logv, 1)
    resid = logv - (slope * logn + intercept)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((logv - logv.mean()) ** 2))
    if ss_tot == 0.0:
        r_squared = 1.0 if ss_res < 1e-24 else 0.0
    else:
        r_squared = 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(r_squared)


def _combine(master_seed: int, role: str, *indices: int) -> int:
    """Fold experiment indices into a child seed for the named role.

    The derivation is child = hash(master_seed, role_code, *indices); the
    child generators themselves are additionally keyed by their own role in
    :mod:`moe_lab.rng`, so streams never collide across roles or tasks.
    """
    code = ROLE_CODES[role]
    h = np.random.SeedSequence((master_seed, code, *indices)).generate_state(1)[0]
    return int(h)


def _one_replication(args) -> tuple[int, int, int, float, bool]:
    (scenario_name, gate_name, k, n_idx, n, rep,
     master_seed, sigma, max_iter, tol) = args
    gate = GateTransform.parse(gate_name)
    scenario = preset(scenario_name, gate)
    data = sample(scenario, n, seed=_combine(master_seed, "rate-data", k, n_idx, rep))
    init = init_near_truth(scenario, k,
                           seed=_combine(master_seed, "rate-init", k, n_idx, rep),
                           sigma=sigma)
    cfg = FitConfig(k=k, max_iter=max_iter, tol=tol)
    report = fit(data, cfg, gate, init)
    if not np.all(np.isfinite(report.nll_trajectory)):
        return (k, n_idx, rep, float("nan"), False)
    loss = voronoi_loss(report.measure, scenario.truth, 2.0)
    return (k, n_idx, rep, float(loss), True)


def run_rate_experiment(cfg: ExperimentConfig) -> dict[int, RateReport]:
    """Run the full sweep; returns one report per fitted component count.

    Failed replications (non-finite NLL) are recorded in the per-size
    counts, never silently dropped; the slope uses sizes with at least one
    success and requires at least three surviving grid points.
    """
    if not cfg.n_grid:
        raise ContractViolation("n_grid must be nonempty")
    tasks = [
        (cfg.scenario, cfg.gate.name, k, n_idx, n, rep,
         cfg.master_seed, cfg.sigma, cfg.max_iter, cfg.tol)
        for k in cfg.k_list
        for n_idx, n in enumerate(cfg.n_grid)
        for rep in range(cfg.replications)
    ]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_one_replication, tasks, chunksize=1))
    else:
        results = [_one_replication(t) for t in tasks]
    results.sort(key=lambda r: (r[0], r[1], r[2]))

    reports: dict[int, RateReport] = {}
    for k in cfg.k_list:
        points = []
        for n_idx, n in enumerate(cfg.n_grid):
            losses = [loss for (kk, ni, _rep, loss, ok) in results
                      if kk == k and ni == n_idx and ok]
            failed = sum(1 for (kk, ni, _rep, _loss, ok) in results
                         if kk == k and ni == n_idx and not ok)
            mean = float(np.mean(losses)) if losses else float("nan")
            std = float(np.std(losses, ddof=1)) if len(losses) > 1 else 0.0
            points.append(RatePoint(n=n, mean_loss=mean, std_loss=std,
                                    replications=cfg.replications,
                                    status_ok=len(losses), status_failed=failed))
        usable = [(p.n, p.mean_loss) for p in points
                  if p.status_ok > 0 and math.isfinite(p.mean_loss) and p.mean_loss > 0]
        if len(usable) < 3:
            raise ContractViolation(
                f"k={k}: only {len(usable)} grid points survived; need at least 3")
        slope, intercept, r2 = fit_loglog_slope(usable)
        report = RateReport(k=k, points=tuple(points), slope=slope,
                            intercept=intercept, r_squared=r2)
        reports[k] = report
        if cfg.out_dir is not None:
            cfg.out_dir.mkdir(parents=True, exist_ok=True)
            tag = f"{cfg.scenario}_{cfg.gate.name}_k{k}"
            emit_rate_csv(report, cfg.out_dir / f"rate_{tag}.csv")
            emit_rate_svg(report, cfg.out_dir / f"rate_{tag}.svg",
                          title=f"{cfg.scenario}, {cfg.gate.name} gate, k={k}")
    return reports


def run_nll_comparison(cfg: ExperimentConfig, gates: list[GateTransform],
                       iters: int = 200, n_samples: int = 10_000) -> dict[str, np.ndarray]:
    """EM NLL trajectories per gate on one shared dataset and init recipe.

    The dataset is drawn once from the configured scenario under its own
    gate; every candidate gate then runs exactly ``iters`` EM iterations
    from the same near-truth initialization.
    """
    if not gates:
        raise ContractViolation("need at least one gate transform")
    scenario = preset(cfg.scenario, cfg.gate)
    k = cfg.k_list[0]
    data = sample(scenario, n_samples, seed=_combine(cfg.master_seed, "nll-data", 0))
    init = init_near_truth(scenario, k, seed=_combine(cfg.master_seed, "nll-init", 0),
                           sigma=cfg.sigma)
    trajectories: dict[str, np.ndarray] = {}
    for gate in gates:
        report = fit(data, FitConfig(k=k, max_iter=iters, tol=cfg.tol),
                     gate, init, exact_iters=True)
        trajectories[gate.name] = report.nll_trajectory
    if cfg.out_dir is not None:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        emit_nll_csv(trajectories, cfg.out_dir / f"nll_{cfg.scenario}.csv")
        emit_nll_svg(trajectories, cfg.out_dir / f"nll_{cfg.scenario}.svg",
                     title=f"{cfg.scenario}: EM NLL by gate transform")
    return trajectories


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def emit_rate_csv(report: RateReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "mean_d2", "std_d2", "replications",
                         "status_ok", "status_failed"])
        for p in report.points:
            writer.writerow([p.n, repr(p.mean_loss), repr(p.std_loss),
                             p.replications, p.status_ok, p.status_failed])


def parse_rate_csv(path: str | Path) -> list[RatePoint]:
    points = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            points.append(RatePoint(
                n=int(row["n"]), mean_loss=float(row["mean_d2"]),
                std_loss=float(row["std_d2"]), replications=int(row["replications"]),
                status_ok=int(row["status_ok"]), status_failed=int(row["status_failed"])))
    return points


def emit_nll_csv(trajectories: dict[str, np.ndarray], path: str | Path) -> None:
    names = list(trajectories)
    length = max(len(t) for t in trajectories.values())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration"] + [f"nll_{name}" for name in names])
        for i in range(length):
            row = [i]
            for name in names:
                t = trajectories[name]
                row.append(repr(float(t[i])) if i < len(t) else "")
            writer.writerow(row)


# ---------------------------------------------------------------------------
# SVG (self-contained, no external assets)
# ---------------------------------------------------------------------------

_SVG_W, _SVG_H = 640, 480
_MARGIN = 60
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _scale(values, lo, hi, out_lo, out_hi):
    if hi == lo:
        hi = lo + 1.0
    return [(out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)) for v in values]


def _svg_header(title: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<text x="{_SVG_W / 2}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
        f'<rect x="{_MARGIN}" y="{_MARGIN}" width="{_SVG_W - 2 * _MARGIN}" '
        f'height="{_SVG_H - 2 * _MARGIN}" fill="none" stroke="#333"/>',
    ]


def emit_rate_svg(report: RateReport, path: str | Path, title: str = "") -> None:
    """Log-log scatter of mean loss against n with the fitted line."""
    pts = [(p.n, p.mean_loss) for p in report.points
           if math.isfinite(p.mean_loss) and p.mean_loss > 0]
    logn = [math.log10(n) for n, _ in pts]
    logv = [math.log10(v) for _, v in pts]
    x_lo, x_hi = min(logn), max(logn)
    y_lo, y_hi = min(logv), max(logv)
    pad = 0.05 * max(x_hi - x_lo, y_hi - y_lo, 0.1)
    x_lo, x_hi, y_lo, y_hi = x_lo - pad, x_hi + pad, y_lo - pad, y_hi + pad
    xs = _scale(logn, x_lo, x_hi, _MARGIN, _SVG_W - _MARGIN)
    ys = _scale(logv, y_lo, y_hi, _SVG_H - _MARGIN, _MARGIN)
    parts = _svg_header(title or "empirical convergence rate")
    # fitted line y = slope * x + intercept in natural logs
    ln10 = math.log(10.0)
    fit_y = [(report.slope * (x * ln10) + report.intercept) / ln10 for x in (x_lo, x_hi)]
    fx = _scale([x_lo, x_hi], x_lo, x_hi, _MARGIN, _SVG_W - _MARGIN)
    fy = _scale(fit_y, y_lo, y_hi, _SVG_H - _MARGIN, _MARGIN)
    parts.append(f'<line x1="{fx[0]:.2f}" y1="{fy[0]:.2f}" x2="{fx[1]:.2f}" y2="{fy[1]:.2f}" '
                 f'stroke="#ff7f0e" stroke-dasharray="8 4" stroke-width="2"/>')
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="4" fill="#1f77b4"/>')
    parts.append(f'<text x="{_SVG_W - _MARGIN - 6}" y="{_MARGIN + 18}" text-anchor="end" '
                 f'font-family="sans-serif" font-size="13">slope = {report.slope:.3f}, '
                 f'r&#178; = {report.r_squared:.3f}</text>')
    parts.append(f'<text x="{_SVG_W / 2}" y="{_SVG_H - 16}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13">log10 n</text>')
    parts.append(f'<text x="18" y="{_SVG_H / 2}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13" '
                 f'transform="rotate(-90 18 {_SVG_H / 2})">log10 mean loss</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def emit_nll_svg(trajectories: dict[str, np.ndarray], path: str | Path,
                 title: str = "") -> None:
    """Overlayed NLL-per-iteration curves, one color per gate."""
    all_vals = np.concatenate([np.asarray(t, dtype=float) for t in trajectories.values()])
    y_lo, y_hi = float(all_vals.min()), float(all_vals.max())
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    x_hi = max(len(t) - 1 for t in trajectories.values())
    parts = _svg_header(title or "EM negative log-likelihood")
    for idx, (name, traj) in enumerate(trajectories.items()):
        color = _COLORS[idx % len(_COLORS)]
        xs = _scale(range(len(traj)), 0, x_hi, _MARGIN, _SVG_W - _MARGIN)
        ys = _scale([float(v) for v in traj], y_lo, y_hi, _SVG_H - _MARGIN, _MARGIN)
        points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{_SVG_W - _MARGIN - 6}" y="{_MARGIN + 18 + 16 * idx}" '
                     f'text-anchor="end" font-family="sans-serif" font-size="12" '
                     f'fill="{color}">{name}</text>')
    parts.append(f'<text x="{_SVG_W / 2}" y="{_SVG_H - 16}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13">EM iteration</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
