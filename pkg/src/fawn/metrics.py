"""Presence classification metrics, grid position errors, ECDF and per-cell heatmap."""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .data import CELL_SIZE, GRID_X, GRID_Y, Cell, CsiSample, SceneLabel
from .model import FawnParams, SceneEstimate, fawn_forward, predict


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def add(self, truth: bool, pred: bool):
        if truth and pred:
            self.tp += 1
        elif pred:
            self.fp += 1
        elif truth:
            self.fn += 1
        else:
            self.tn += 1

    @property
    def f1_undefined(self) -> bool:
        return 2 * self.tp + self.fp + self.fn == 0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 0.0 if denom == 0 else 2 * self.tp / denom


@dataclass
class Classification:
    accuracy: float
    f1_macro: float
    per_entity: dict[str, Confusion]

    @property
    def per_entity_f1(self) -> dict[str, float]:
        return {k: c.f1 for k, c in self.per_entity.items()}


def classification_from(estimates: Sequence[SceneEstimate], labels: Sequence[SceneLabel]) -> Classification:
    if not labels:
        raise ValueError("empty test set")
    conf = {"person": Confusion(), "robot": Confusion()}
    hits = 0
    for est, lab in zip(estimates, labels):
        conf["person"].add(lab.person_present, est.person_present)
        conf["robot"].add(lab.robot_present, est.robot_present)
        hits += est.person_present == lab.person_present and est.robot_present == lab.robot_present
    return Classification(hits / len(labels), (conf["person"].f1 + conf["robot"].f1) / 2, conf)


def evaluate_classification(params: FawnParams, test_set: Sequence[CsiSample]) -> Classification:
    return classification_from(predict(params, test_set), [s.label for s in test_set])


def cell_distance(a: Cell, b: Cell) -> float:
    return CELL_SIZE * math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2)


def position_error(est: SceneEstimate, label: SceneLabel) -> list[float]:
    """Errors in metres for each truly present entity, whatever the presence decision."""
    out = []
    if label.person is not None:
        out.append(cell_distance(est.person_cell, label.person))
    if label.robot is not None:
        out.append(cell_distance(est.robot_cell, label.robot))
    return out


def ecdf(errors: Sequence[float]) -> list[tuple[float, float]]:
    """Sorted ``(error, fraction <= error)`` points; repeated errors keep the top fraction."""
    xs = sorted(errors)
    n = len(xs)
    curve: list[tuple[float, float]] = []
    for i, e in enumerate(xs):
        frac = (i + 1) / n
        if curve and curve[-1][0] == e:
            curve[-1] = (e, frac)
        else:
            curve.append((e, frac))
    return curve


def ecdf_at(curve: Sequence[tuple[float, float]], x: float, tol: float = 1e-9) -> float:
    """Fraction of errors <= ``x``."""
    frac = 0.0
    for e, f in curve:
        if e <= x + tol:
            frac = f
    return frac


def error_heatmap(observations: Sequence[tuple[Cell, float]]) -> list[list[Optional[float]]]:
    """``GRID_Y`` rows by ``GRID_X`` columns of mean error per true cell; None where unvisited."""
    sums = [[0.0] * GRID_X for _ in range(GRID_Y)]
    counts = [[0] * GRID_X for _ in range(GRID_Y)]
    for (ix, iy), err in observations:
        sums[iy][ix] += err
        counts[iy][ix] += 1
    return [
        [sums[iy][ix] / counts[iy][ix] if counts[iy][ix] else None for ix in range(GRID_X)]
        for iy in range(GRID_Y)
    ]


def measure_inference_time(params: FawnParams, sample: CsiSample, repetitions: int = 50, warmup: int = 3):
    """Mean and standard deviation, in microseconds, of one single-sample forward pass."""
    if repetitions < 10:
        raise ValueError("need at least 10 repetitions")
    for _ in range(max(warmup, 3)):
        fawn_forward(sample, params)
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fawn_forward(sample, params)
        times.append((time.perf_counter() - t0) * 1e6)
    return statistics.fmean(times), statistics.stdev(times)


@dataclass
class EvalReport:
    accuracy: float
    f1_macro: float
    per_entity_f1: dict[str, float]
    confusion: dict[str, dict[str, int]]
    errors: list[float]
    ecdf: list[tuple[float, float]]
    heatmap: list[list[Optional[float]]]
    history: list[dict] = field(default_factory=list)
    timing: dict[str, float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    n_test: int = 0

    def ecdf_at(self, x: float) -> float:
        return ecdf_at(self.ecdf, x)


def evaluate(
    params: FawnParams,
    test_set: Sequence[CsiSample],
    zero_wifi: bool = False,
    history: Sequence[dict] = (),
    timing: dict[str, float] | None = None,
) -> EvalReport:
    estimates = predict(params, test_set, zero_wifi=zero_wifi)
    labels = [s.label for s in test_set]
    cls = classification_from(estimates, labels)
    observations = []
    for est, lab in zip(estimates, labels):
        for (_, cell), err in zip(lab.entities(), position_error(est, lab)):
            observations.append((cell, err))
    errors = sorted(e for _, e in observations)
    flags = [f"f1_undefined:{k}" for k, c in cls.per_entity.items() if c.f1_undefined]
    if not errors:
        flags.append("ecdf_empty")
    return EvalReport(
        accuracy=cls.accuracy,
        f1_macro=cls.f1_macro,
        per_entity_f1=cls.per_entity_f1,
        confusion={k: vars(c).copy() for k, c in cls.per_entity.items()},
        errors=errors,
        ecdf=ecdf(errors),
        heatmap=error_heatmap(observations),
        history=list(history),
        timing=dict(timing or {}),
        flags=flags,
        n_test=len(test_set),
    )
