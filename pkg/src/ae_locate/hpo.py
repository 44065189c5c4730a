"""Gaussian-process Bayesian optimization over (optimizer, batch size).

Everything is oriented towards *minimizing* a loss. Expected improvement
is therefore measured as ``f_best - mu - xi``.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, optimize
from scipy.special import ndtr
from scipy.stats import qmc

from .errors import NumericalError, SpaceExhausted, TrainingDiverged
from .nn.train import HyperParams

log = logging.getLogger(__name__)

SQRT5 = math.sqrt(5.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# --- search space -----------------------------------------------------------

@dataclass(frozen=True)
class SearchSpace:
    optimizers: tuple[str, ...] = ("sgd", "rmsprop", "adam")
    batch_min: int = 8
    batch_max: int = 64

    @property
    def dim(self) -> int:
        return len(self.optimizers) + 1

    @property
    def size(self) -> int:
        return len(self.optimizers) * (self.batch_max - self.batch_min + 1)

    def encode(self, optimizer: str, batch_size: int) -> np.ndarray:
        v = np.zeros(self.dim)
        v[self.optimizers.index(optimizer)] = 1.0
        v[-1] = (batch_size - self.batch_min) / (self.batch_max - self.batch_min)
        return v

    def decode(self, v) -> tuple[str, int]:
        v = np.asarray(v, dtype=np.float64)
        opt = self.optimizers[int(np.argmax(v[:-1]))]
        frac = min(max(float(v[-1]), 0.0), 1.0)
        return opt, int(round(self.batch_min + frac * (self.batch_max - self.batch_min)))

    def from_unit(self, u) -> tuple[str, int]:
        """Map a point of [0, 1)^2 onto the discrete space."""
        k = min(int(u[0] * len(self.optimizers)), len(self.optimizers) - 1)
        return self.optimizers[k], int(round(self.batch_min + u[1] * (self.batch_max - self.batch_min)))

    def points(self) -> list[tuple[str, int]]:
        return [(o, b) for o in self.optimizers for b in range(self.batch_min, self.batch_max + 1)]


# --- Gaussian process ---------------------------------------------------------

@dataclass(frozen=True)
class KernelConfig:
    noise: float = 1e-6  # observation variance on standardized targets; floored at 1e-6
    restarts: int = 5
    log_length_bounds: tuple[float, float] = (math.log(0.05), math.log(20.0))
    log_signal_bounds: tuple[float, float] = (math.log(0.05), math.log(20.0))
    seed: int = 0


def matern52(x1: np.ndarray, x2: np.ndarray, lengths: np.ndarray, signal_var: float) -> np.ndarray:
    d = (x1[:, None, :] - x2[None, :, :]) / lengths
    r = np.sqrt(np.maximum((d * d).sum(-1), 0.0))
    return signal_var * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)


def _cholesky(k: np.ndarray) -> tuple[np.ndarray, float]:
    n = k.shape[0]
    for jitter in (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4):
        try:
            return linalg.cholesky(k + jitter * np.eye(n), lower=True), jitter
        except linalg.LinAlgError:
            continue
    raise NumericalError("Cholesky factorization failed after jitter escalation to 1e-4")


def log_marginal_likelihood(theta: np.ndarray, x: np.ndarray, y: np.ndarray, noise: float):
    """Log evidence and its gradient w.r.t. ``theta = [log lengths..., log signal_var]``."""
    lengths, sv = np.exp(theta[:-1]), math.exp(theta[-1])
    n = x.shape[0]
    k = matern52(x, x, lengths, sv)
    try:
        chol, _ = _cholesky(k + noise * np.eye(n))
    except NumericalError:
        return -np.inf, np.zeros_like(theta)
    alpha = linalg.cho_solve((chol, True), y)
    lml = -0.5 * y @ alpha - np.log(np.diag(chol)).sum() - 0.5 * n * math.log(2 * math.pi)
    inner = np.outer(alpha, alpha) - linalg.cho_solve((chol, True), np.eye(n))
    d = (x[:, None, :] - x[None, :, :]) / lengths
    r = np.sqrt((d * d).sum(-1))
    base = sv * 5.0 / 3.0 * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)
    grad = np.empty_like(theta)
    for j in range(len(lengths)):
        grad[j] = 0.5 * np.sum(inner * base * d[:, :, j] ** 2)
    grad[-1] = 0.5 * np.sum(inner * k)
    return float(lml), grad


@dataclass
class GPSurrogate:
    x: np.ndarray
    y: np.ndarray
    lengths: np.ndarray
    signal_var: float
    noise: float
    y_mean: float
    y_scale: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0

    def predict(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation in the units of ``y``."""
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        ks = matern52(xs, self.x, self.lengths, self.signal_var)
        mu = ks @ self.alpha
        v = linalg.solve_triangular(self.chol, ks.T, lower=True)
        var = np.maximum(self.signal_var - (v * v).sum(0), 0.0)
        return self.y_mean + self.y_scale * mu, self.y_scale * np.sqrt(var)


def gp_fit(x, y, config: KernelConfig = KernelConfig()) -> GPSurrogate:
    """Exact GP regression with evidence-maximized length-scales and signal variance."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape[0] < 1 or x.shape[0] != y.size:
        raise ValueError("need at least one observation with matching targets")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    noise = max(config.noise, 1e-6)
    y_mean = float(y.mean())
    y_scale = float(y.std()) if y.size > 1 and y.std() > 0 else 1.0
    z = (y - y_mean) / y_scale

    dim = x.shape[1]
    bounds = [config.log_length_bounds] * dim + [config.log_signal_bounds]
    starts = [np.zeros(dim + 1)]
    rng = np.random.default_rng(config.seed)
    for _ in range(max(config.restarts - 1, 0)):
        starts.append(np.array([rng.uniform(*b) for b in bounds]))
    best_theta, best_val = starts[0], -np.inf
    if x.shape[0] > 1:
        for s in starts:
            res = optimize.minimize(lambda t: tuple(-v for v in log_marginal_likelihood(t, x, z, noise)),
                                    s, jac=True, method="L-BFGS-B", bounds=bounds)
            val = -res.fun
            if np.isfinite(val) and val > best_val:
                best_theta, best_val = res.x, val
    lengths, sv = np.exp(best_theta[:-1]), float(np.exp(best_theta[-1]))
    k = matern52(x, x, lengths, sv) + noise * np.eye(x.shape[0])
    chol, jitter = _cholesky(k)
    alpha = linalg.cho_solve((chol, True), z)
    return GPSurrogate(x, y, lengths, sv, noise, y_mean, y_scale, chol, alpha, jitter)


# --- acquisition --------------------------------------------------------------

def expected_improvement(mu, sigma, f_best: float, xi: float = 0.01):
    """EI for minimization; zero wherever ``sigma == 0``."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    imp = f_best - mu - xi
    safe = np.where(sigma > 0, sigma, 1.0)
    z = np.where(sigma > 0, imp / safe, 0.0)
    ei = imp * ndtr(z) + sigma * INV_SQRT_2PI * np.exp(-0.5 * z * z)
    ei = np.where(sigma > 0, np.maximum(ei, 0.0), 0.0)
    return float(ei) if ei.ndim == 0 else ei


def propose_next(surrogate: GPSurrogate, space: SearchSpace, evaluated: Sequence[tuple[str, int]],
                 xi: float = 0.01, seed: int = 0, n_candidates: int = 2048, n_refine: int = 8) -> np.ndarray:
    """Encoded point maximizing EI among points not yet evaluated."""
    done = set(evaluated)
    if len(done) >= space.size:
        raise SpaceExhausted("every point of the search space has been evaluated")
    sobol = qmc.Sobol(2, scramble=True, seed=seed)
    cands: list[tuple[str, int]] = []
    seen = set(done)
    for u in sobol.random(n_candidates):
        p = space.from_unit(u)
        if p not in seen:
            seen.add(p)
            cands.append(p)
    if not cands:
        cands = [p for p in space.points() if p not in done]

    f_best = float(np.min(surrogate.y))
    cache: dict[tuple[str, int], float] = {}

    def score(points):
        todo = [p for p in points if p not in cache]
        if todo:
            mu, sd = surrogate.predict(np.array([space.encode(*p) for p in todo]))
            cache.update(zip(todo, np.atleast_1d(expected_improvement(mu, sd, f_best, xi))))
        return [cache[p] for p in points]

    ei = score(cands)
    order = np.argsort(-np.asarray(ei), kind="stable")
    best_p, best_v = cands[order[0]], ei[order[0]]
    for k in order[:n_refine]:
        p, v = cands[k], ei[k]
        while True:
            nbrs = [q for q in _neighbours(p, space) if q not in done]
            if not nbrs:
                break
            scores = score(nbrs)
            j = int(np.argmax(scores))
            if scores[j] <= v:
                break
            p, v = nbrs[j], scores[j]
        if v > best_v:
            best_p, best_v = p, v
    return space.encode(*best_p)


def _neighbours(p: tuple[str, int], space: SearchSpace) -> list[tuple[str, int]]:
    opt, b = p
    out = [(o, b) for o in space.optimizers if o != opt]
    for step in (1, 2, 4, 8):
        for nb in (b - step, b + step):
            if space.batch_min <= nb <= space.batch_max:
                out.append((opt, nb))
    return out


# --- optimization loop ----------------------------------------------------------

@dataclass
class TrialRecord:
    iteration: int
    hyperparams: HyperParams
    fold_losses: list[float]
    mean_loss: float
    seconds: float = 0.0


@dataclass
class OptimizeResult:
    best: TrialRecord
    trials: list[TrialRecord]

    def best_so_far(self) -> list[float]:
        return list(np.minimum.accumulate([t.mean_loss for t in self.trials]))


Objective = Callable[[HyperParams], "float | Sequence[float]"]


def _run_trial(objective: Objective, hp: HyperParams, iteration: int) -> TrialRecord:
    start = time.perf_counter()
    try:
        out = objective(hp)
        folds = [float(v) for v in (out if np.ndim(out) else [out])]
    except (TrainingDiverged, NumericalError) as exc:
        log.warning("trial %d (%s, %d) failed: %s", iteration, hp.optimizer, hp.batch_size, exc)
        folds = [math.inf]
    mean = float(np.mean(folds)) if all(np.isfinite(folds)) else math.inf
    return TrialRecord(iteration, hp, folds, mean, time.perf_counter() - start)


def _fit_targets(losses: np.ndarray) -> np.ndarray:
    finite = losses[np.isfinite(losses)]
    if finite.size == 0:
        return np.zeros_like(losses)
    worst = finite.max() + (finite.std() if finite.size > 1 and finite.std() > 0 else 1.0)
    return np.where(np.isfinite(losses), losses, worst)


def optimize_hyperparams(objective: Objective, space: SearchSpace = SearchSpace(),
                         base: HyperParams = HyperParams(), iterations: int = 10, init_count: int = 3,
                         seed: int = 0, xi: float = 0.01, kernel: KernelConfig | None = None,
                         on_trial: Callable[[TrialRecord], None] | None = None) -> OptimizeResult:
    """Quasi-random start, then EI-driven trials; ``iterations`` counts every trial."""
    trials: list[TrialRecord] = []
    evaluated: list[tuple[str, int]] = []

    def record(point: tuple[str, int]):
        hp = replace(base, optimizer=point[0], batch_size=point[1])
        t = _run_trial(objective, hp, len(trials))
        trials.append(t)
        evaluated.append(point)
        if on_trial:
            on_trial(t)

    sobol = qmc.Sobol(2, scramble=True, seed=seed)
    for u in sobol.random(max(8, 2 ** math.ceil(math.log2(max(init_count, 1))))):
        if len(trials) >= min(init_count, iterations):
            break
        p = space.from_unit(u)
        if p not in evaluated:
            record(p)

    kernel = kernel or KernelConfig(seed=seed)
    while len(trials) < iterations:
        x = np.array([space.encode(*p) for p in evaluated])
        y = _fit_targets(np.array([t.mean_loss for t in trials]))
        gp = gp_fit(x, y, kernel)
        try:
            nxt = propose_next(gp, space, evaluated, xi, seed=seed + len(trials))
        except SpaceExhausted:
            log.info("search space exhausted after %d trials", len(trials))
            break
        record(space.decode(nxt))

    best = min(trials, key=lambda t: (t.mean_loss, t.iteration))
    return OptimizeResult(best, trials)


def random_search(objective: Objective, space: SearchSpace = SearchSpace(), base: HyperParams = HyperParams(),
                  trials: int = 10, seed: int = 0) -> OptimizeResult:
    rng = np.random.default_rng(seed)
    pts = space.points()
    chosen = rng.choice(len(pts), size=min(trials, len(pts)), replace=False)
    out = [_run_trial(objective, replace(base, optimizer=pts[i][0], batch_size=pts[i][1]), k)
           for k, i in enumerate(chosen)]
    return OptimizeResult(min(out, key=lambda t: (t.mean_loss, t.iteration)), out)


def write_trials_csv(path, result: OptimizeResult, with_timing: bool = False) -> None:
    """Trial log; ``seconds`` stays blank unless ``with_timing`` so reruns are byte-identical."""
    k = max(len(t.fold_losses) for t in result.trials)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\r\n")
        out.writerow(["iteration", "optimizer", "batch_size", "lr",
                      *[f"fold_{i}" for i in range(k)], "mean_loss", "seconds"])

        def row(label, t: TrialRecord):
            folds = [repr(v) for v in t.fold_losses] + [""] * (k - len(t.fold_losses))
            secs = f"{t.seconds:.3f}" if with_timing else ""
            return [label, t.hyperparams.optimizer, t.hyperparams.batch_size,
                    repr(t.hyperparams.learning_rate), *folds, repr(t.mean_loss), secs]

        for t in result.trials:
            out.writerow(row(t.iteration, t))
        out.writerow(row("best", result.best))
