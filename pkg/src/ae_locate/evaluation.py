"""Cross validation, localization error reports and the branch ablation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Hashable, Sequence

import numpy as np

from .errors import NumericalError, ParameterError, TrainingDiverged
from .nn.model import AESLNet, Architecture
from .nn.train import HyperParams, train
from .samples import SampleSet
from .sim import GRID_SPACING_MM, PlateSpec

log = logging.getLogger(__name__)

# (train set, hyperparameters, seed) -> callable mapping a SampleSet to normalized predictions
FitFn = Callable[[SampleSet, HyperParams, int], Callable[[SampleSet], np.ndarray]]


@dataclass
class FoldAssignment:
    k: int
    assignments: dict[Hashable, int]
    seed: int = 0

    def members(self, fold: int) -> list[Hashable]:
        return [key for key, f in self.assignments.items() if f == fold]

    def sizes(self) -> list[int]:
        return [len(self.members(f)) for f in range(self.k)]


def kfold_split(keys: Sequence[Hashable], k: int = 5, seed: int = 0) -> FoldAssignment:
    """Random size-balanced partition of ``keys`` into ``k`` folds."""
    keys = list(keys)
    if len(set(keys)) != len(keys):
        raise ParameterError("keys must be unique")
    if k < 2 or len(keys) < k:
        raise ParameterError(f"cannot split {len(keys)} items into {k} folds")
    order = np.random.default_rng(seed).permutation(len(keys))
    return FoldAssignment(k, {keys[i]: pos % k for pos, i in enumerate(order)}, seed)


def grouped_folds(data: SampleSet, k: int, seed: int) -> list[np.ndarray]:
    """Sample indices per fold; samples sharing a source position stay together."""
    groups = data.groups()
    unique = sorted(set(groups))
    split = kfold_split(unique, k, seed)
    return [np.array([i for i, g in enumerate(groups) if split.assignments[g] == f]) for f in range(k)]


def aeslnet_fit(arch: Architecture = Architecture()) -> FitFn:
    def fit(data: SampleSet, hp: HyperParams, seed: int):
        model = AESLNet(arch, seed=seed)
        train(model, data, hp, seed=seed)
        return lambda s: model.predict_normalized(s.x)

    return fit


@dataclass
class CVResult:
    fold_losses: list[float]
    mean_loss: float


def cross_validate(data: SampleSet, hp: HyperParams, k: int = 5, seed: int = 0,
                   fit: FitFn | None = None, grouped: bool = True) -> CVResult:
    """Train on k-1 folds, score MSE on the held-out one, for every fold.

    Every fold model is trained with the same ``seed``. A diverging fold
    scores ``inf``.
    """
    fit = fit or aeslnet_fit()
    if grouped:
        folds = grouped_folds(data, k, seed)
    else:
        split = kfold_split(range(len(data)), k, seed)
        folds = [np.array(split.members(f)) for f in range(k)]
    losses = []
    for f, held in enumerate(folds):
        rest = np.setdiff1d(np.arange(len(data)), held)
        try:
            predict = fit(data.subset(rest), hp, seed)
            test = data.subset(held)
            diff = predict(test) - test.y
            losses.append(float(np.mean(diff * diff)))
        except (TrainingDiverged, NumericalError) as exc:
            log.warning("fold %d diverged: %s", f, exc)
            losses.append(math.inf)
    mean = float(np.mean(losses)) if all(np.isfinite(losses)) else math.inf
    return CVResult(losses, mean)


@dataclass
class ErrorReport:
    errors: np.ndarray  # mm, per event
    mean: float
    std_dev: float
    ci95_half_width: float
    max: float
    resolution: float | None  # mm; None when the half-spacing criterion fails
    out_of_plate_count: int
    predicted: np.ndarray = field(repr=False, default=None)
    true: np.ndarray = field(repr=False, default=None)
    ids: list[str] = field(repr=False, default_factory=list)


def ci95(std_dev: float, n: int) -> float:
    return 1.96 * std_dev / math.sqrt(n)


def error_report_from_predictions(predicted_mm, true_mm, plate: PlateSpec,
                                  grid_spacing: float = GRID_SPACING_MM, ids=None) -> ErrorReport:
    p = np.atleast_2d(np.asarray(predicted_mm, dtype=np.float64))
    t = np.atleast_2d(np.asarray(true_mm, dtype=np.float64))
    if p.shape != t.shape or p.shape[0] == 0:
        raise ParameterError("need matching, nonempty prediction and truth arrays")
    err = np.hypot(p[:, 0] - t[:, 0], p[:, 1] - t[:, 1])
    n = err.size
    sd = float(np.std(err, ddof=1)) if n > 1 else 0.0
    worst = float(err.max())
    outside = int(np.sum((p[:, 0] < 0) | (p[:, 0] > plate.width) | (p[:, 1] < 0) | (p[:, 1] > plate.height)))
    return ErrorReport(err, float(err.mean()), sd, ci95(sd, n), worst,
                       grid_spacing if worst < grid_spacing / 2 else None, outside,
                       p, t, list(ids) if ids is not None else [])


def error_report(model: AESLNet, data: SampleSet, plate: PlateSpec,
                 grid_spacing: float = GRID_SPACING_MM) -> ErrorReport:
    scale = np.array([plate.width, plate.height])
    pred = model.predict_normalized(data.x) * scale
    return error_report_from_predictions(pred, data.y * scale, plate, grid_spacing, data.ids)


def write_report_csv(path, report: ErrorReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\r\n")
        out.writerow(["event_id", "true_x_mm", "true_y_mm", "pred_x_mm", "pred_y_mm", "error_mm"])
        ids = report.ids or [str(i) for i in range(report.errors.size)]
        for i, eid in enumerate(ids):
            vals = (report.true[i, 0], report.true[i, 1], report.predicted[i, 0], report.predicted[i, 1],
                    report.errors[i])
            out.writerow([eid, *(repr(float(v)) for v in vals)])
        out.writerow(["# mean_mm", repr(report.mean)])
        out.writerow(["# std_dev_mm", repr(report.std_dev)])
        out.writerow(["# ci95_half_width_mm", repr(report.ci95_half_width)])
        out.writerow(["# max_mm", repr(report.max)])
        out.writerow(["# resolution_mm", "" if report.resolution is None else repr(report.resolution)])
        out.writerow(["# out_of_plate_count", report.out_of_plate_count])


def read_report_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """True and predicted coordinates (mm) from a report CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or rows[0][0] != "event_id" or len(rows) < 2:
        raise ValueError(f"{path}: empty or malformed report")
    body = np.array([[float(v) for v in r[1:5]] for r in rows[1:]])
    return body[:, 0:2], body[:, 2:4]


# --- ablation -------------------------------------------------------------------

@dataclass
class AblationResult:
    seeds: list[int]
    parallel: list[float]
    shared: list[float]

    @property
    def ratios(self) -> np.ndarray:
        return np.asarray(self.shared) / np.asarray(self.parallel)

    @property
    def median_ratio(self) -> float:
        return float(np.median(self.ratios))


def ablation_compare(data: SampleSet, hp: HyperParams, seeds: Sequence[int] = (0, 1, 2, 3, 4),
                     arch: Architecture = Architecture(), k: int = 5) -> AblationResult:
    """Paired CV losses of the parallel-branch model and its shared-branch twin."""
    par, sh = [], []
    for s in seeds:
        par.append(cross_validate(data, hp, k, s, aeslnet_fit(replace(arch, shared=False))).mean_loss)
        sh.append(cross_validate(data, hp, k, s, aeslnet_fit(replace(arch, shared=True))).mean_loss)
        log.info("seed %d: parallel %.4g shared %.4g", s, par[-1], sh[-1])
    return AblationResult(list(seeds), par, sh)


def write_ablation_csv(path, result: AblationResult, control: AblationResult | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\r\n")
        out.writerow(["condition", "seed", "parallel_cv_loss", "shared_cv_loss", "ratio"])
        for name, res in (("test", result), ("control", control)):
            if res is None:
                continue
            for s, p, q, r in zip(res.seeds, res.parallel, res.shared, res.ratios):
                out.writerow([name, s, repr(float(p)), repr(float(q)), repr(float(r))])
            out.writerow([f"# {name}_median_ratio", repr(res.median_ratio)])
