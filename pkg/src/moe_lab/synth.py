"""Ground-truth scenarios and synthetic data generation.

The two built-in scenarios share the gate parameters (1, 3) vs (0, 0) and
the class-1 expert (-1, 2); they differ in the second expert's slope:
``regime1`` uses (1, -1) so every expert keeps a nonzero slope, while
``regime2`` zeroes it out, collapsing the second expert to a constant and
activating the gate/expert gradient interaction.  Covariates are uniform
on an axis-aligned box (unit box by default) and labels are drawn from the
scenario's conditional class density.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation
from .gates import IDENTITY, GateTransform
from .model import (Component, Dataset, MixingMeasure, density_matrix,
                    measure_from_dict, measure_to_dict)
from .rng import stream
from .theory import classify_regime

__all__ = ["Scenario", "preset", "sample", "scenario_to_dict", "scenario_from_dict",
           "save_scenario", "load_scenario"]


@dataclass(frozen=True)
class Scenario:
    """A ground truth to simulate from: measure, gate family, covariate box."""

    truth: MixingMeasure
    gate_transform: GateTransform = IDENTITY
    covariate_box: np.ndarray | None = None
    regime_label: str = ""

    def __post_init__(self):
        truth = self.truth
        if not truth.canonical:
            raise ContractViolation("scenario truth must be canonical")
        pairs = [(tuple(c.a), tuple(map(tuple, c.b))) for c in truth.components]
        if len(set(pairs)) != len(pairs):
            raise ContractViolation("true experts must be pairwise distinct")
        if truth.k > 1 and not any(np.any(c.beta1 != 0.0) for c in truth.components):
            raise ContractViolation("at least one true gate slope must be nonzero")
        box = self.covariate_box
        if box is None:
            box = np.array([[0.0, 1.0]] * truth.d)
        box = np.asarray(box, dtype=float).reshape(truth.d, 2)
        if np.any(box[:, 1] <= box[:, 0]):
            raise ContractViolation("covariate box must have positive extent")
        box.setflags(write=False)
        object.__setattr__(self, "covariate_box", box)
        label = classify_regime(truth)
        if self.regime_label and self.regime_label != label:
            raise ContractViolation(
                f"regime_label {self.regime_label!r} does not match truth ({label!r})")
        object.__setattr__(self, "regime_label", label)

    @property
    def d(self) -> int:
        return self.truth.d

    @property
    def K(self) -> int:
        return self.truth.K


def preset(name: str, transform: GateTransform = IDENTITY) -> Scenario:
    """Built-in scenarios ``regime1`` and ``regime2`` (d = 1, K = 2)."""
    if name == "regime1":
        b2 = [[-1.0, 0.0]]
    elif name == "regime2":
        b2 = [[0.0, 0.0]]
    else:
        raise ContractViolation(f"unknown scenario {name!r} (expected regime1 or regime2)")
    truth = MixingMeasure(
        d=1, K=2,
        components=(
            Component(beta0=1.0, beta1=[3.0], a=[-1.0, 0.0], b=[[2.0, 0.0]]),
            Component(beta0=0.0, beta1=[0.0], a=[1.0, 0.0], b=b2),
        ),
        canonical=True,
        gate_transform=transform,
    )
    return Scenario(truth=truth, gate_transform=transform)


def sample(scenario: Scenario, n: int, seed: int) -> Dataset:
    """Draw ``n`` i.i.d. pairs: uniform covariates, labels from the truth.

    Labels are drawn by inverting the class CDF in class order (the first
    class whose cumulative probability reaches the uniform draw wins).
    Deterministic given the seed.
    """
    if n < 1:
        raise ContractViolation(f"need n >= 1, got {n}")
    rng = stream(seed, "sample")
    box = scenario.covariate_box
    x = rng.uniform(box[:, 0], box[:, 1], size=(n, scenario.d))
    probs = density_matrix(scenario.truth, x, scenario.gate_transform)
    u = rng.random(n)
    cum = np.cumsum(probs, axis=1)
    y = (u[:, None] > cum).sum(axis=1) + 1
    y = np.minimum(y, scenario.K)  # guard against cum[-1] rounding below 1
    return Dataset(x=x, y=y, K=scenario.K)


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "truth": measure_to_dict(scenario.truth),
        "gate_transform": scenario.gate_transform.name,
        "covariate_box": [list(map(float, row)) for row in scenario.covariate_box],
        "regime_label": scenario.regime_label,
    }


def scenario_from_dict(payload: dict) -> Scenario:
    return Scenario(
        truth=measure_from_dict(payload["truth"]),
        gate_transform=GateTransform.parse(payload["gate_transform"]),
        covariate_box=np.asarray(payload["covariate_box"], dtype=float),
        regime_label=payload.get("regime_label", ""),
    )


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))
