"""Arrival picking and pairwise propagation-speed statistics.

Constant-speed TDOA assumes v_ij = (l_i - l_j) / (t_i - t_j) is the same
for every sensor pair. On an anisotropic plate it is not, which this
module quantifies.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.signal import hilbert

from .errors import DegeneratePair, InsufficientData, NoArrivalDetected, ParameterError
from .sim import DatasetManifest, Waveform, sensor_distances

log = logging.getLogger(__name__)

# mm/s -> m/s
MM_PER_S_TO_M_PER_S = 1e-3
NOISE_WINDOW_FRACTION = 0.05
# noise estimate floor relative to the record peak; keeps noiseless records pickable
NOISE_FLOOR_FRACTION = 1e-3
# picks closer than this (in sample periods) count as simultaneous
DEGENERATE_SAMPLES = 1e-3


@dataclass(frozen=True)
class ArrivalPick:
    sensor_index: int
    time: float  # s
    method: str = "threshold_crossing"


@dataclass(frozen=True)
class SpeedRecord:
    event_id: str
    i: int
    j: int
    l_i: float  # mm
    l_j: float  # mm
    t_i: float  # s
    t_j: float  # s
    v_ij: float  # m/s


@dataclass(frozen=True)
class SpeedStats:
    n: int
    mean: float
    std_dev: float
    std_error: float
    ci95_half_width: float


@dataclass
class SpeedEnumeration:
    records: list[SpeedRecord] = field(default_factory=list)
    degenerate_pairs: int = 0
    failed_events: list[str] = field(default_factory=list)

    def speeds(self) -> np.ndarray:
        return np.array([r.v_ij for r in self.records])


def pick_arrival(w: Waveform, k_sigma: float = 5.0, sensor_index: int = 0) -> ArrivalPick:
    """First threshold crossing of the analytic-signal envelope.

    Threshold is ``k_sigma`` times the standard deviation of the leading
    5 % of the record. The crossing is refined by linear interpolation
    between the bracketing samples.
    """
    x = w.samples
    if x.size == 0:
        raise ParameterError("empty waveform")
    if k_sigma <= 0:
        raise ParameterError("k_sigma must be positive")
    peak = np.max(np.abs(x))
    if peak == 0:
        raise NoArrivalDetected("no arrival detected")
    lead = x[: max(2, int(NOISE_WINDOW_FRACTION * x.size))]
    sigma = max(float(np.std(lead)), NOISE_FLOOR_FRACTION * peak)
    thr = k_sigma * sigma
    env = np.abs(hilbert(x))
    above = np.flatnonzero(env > thr)
    if above.size == 0:
        raise NoArrivalDetected("no arrival detected")
    k = int(above[0])
    if k == 0:
        idx = 0.0
    else:
        e0, e1 = env[k - 1], env[k]
        idx = k - 1 + (thr - e0) / (e1 - e0)
    return ArrivalPick(sensor_index, float(idx) / w.sample_rate)


def pairwise_speed(l_i: float, l_j: float, t_i: float, t_j: float) -> float:
    """Constant-speed TDOA estimate in m/s for distances in mm and times in s."""
    dt = t_i - t_j
    if dt == 0:
        raise DegeneratePair("degenerate pair")
    return float((l_i - l_j) / dt * MM_PER_S_TO_M_PER_S)


def enumerate_speeds(manifest: DatasetManifest, k_sigma: float = 5.0,
                     split: str | None = "train") -> SpeedEnumeration:
    result = SpeedEnumeration()
    events = manifest.events if split is None else manifest.split(split)
    for entry in events:
        waves = manifest.load_waveforms(entry)
        try:
            picks = [pick_arrival(w, k_sigma, i).time for i, w in enumerate(waves)]
        except NoArrivalDetected:
            log.warning("event %s: no arrival detected, skipped", entry.event_id)
            result.failed_events.append(entry.event_id)
            continue
        dist = sensor_distances(manifest.layout, entry.x, entry.y)
        tol = DEGENERATE_SAMPLES / manifest.plate.sample_rate
        for i, j in combinations(range(4), 2):
            if abs(picks[i] - picks[j]) <= tol:
                log.info("event %s: degenerate pair (%d, %d) skipped", entry.event_id, i, j)
                result.degenerate_pairs += 1
                continue
            v = pairwise_speed(dist[i], dist[j], picks[i], picks[j])
            result.records.append(SpeedRecord(entry.event_id, i, j, float(dist[i]), float(dist[j]),
                                              picks[i], picks[j], v))
    return result


def speed_stats(speeds) -> SpeedStats:
    v = np.asarray([getattr(s, "v_ij", s) for s in speeds], dtype=np.float64)
    if v.size < 2:
        raise InsufficientData("need at least 2 speed records")
    sd = float(np.std(v, ddof=1))
    se = sd / math.sqrt(v.size)
    return SpeedStats(int(v.size), float(v.mean()), sd, se, 1.96 * se)


CSV_COLUMNS = ("event_id", "i", "j", "l_i_mm", "l_j_mm", "t_i_s", "t_j_s", "v_ij_ms")


def write_speeds_csv(path, enum: SpeedEnumeration) -> SpeedStats | None:
    """One row per record, then a footer block with the summary statistics."""
    stats = speed_stats(enum.records) if len(enum.records) >= 2 else None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\r\n")
        out.writerow(CSV_COLUMNS)
        for r in enum.records:
            out.writerow([r.event_id, r.i, r.j, repr(r.l_i), repr(r.l_j), repr(r.t_i), repr(r.t_j),
                          repr(r.v_ij)])
        out.writerow(["# stats"])
        if stats is not None:
            for name in ("n", "mean", "std_dev", "std_error", "ci95_half_width"):
                out.writerow([f"# {name}", repr(getattr(stats, name))])
        out.writerow(["# degenerate_pairs", enum.degenerate_pairs])
        out.writerow(["# failed_events", len(enum.failed_events)])
    return stats


def read_speeds_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: not a speeds CSV")
    return np.array([float(r[7]) for r in rows[1:]])
