"""Synthetic acoustic-emission events on an anisotropic plate.

Each event is a single non-dispersive Gabor pulse per sensor. The pulse
travels along the straight source-sensor ray at an elliptical,
direction-dependent group speed and decays with a power law in distance.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError, ParameterError

GRID_SPACING_MM = 20.0


@dataclass(frozen=True)
class PlateSpec:
    width: float = 300.0  # mm
    height: float = 300.0  # mm
    base_speed: float = 1500.0  # m/s, fast axis
    anisotropy_ratio: float = 0.4
    principal_angle: float = 0.0  # rad
    attenuation_exponent: float = 0.5
    sample_rate: float = 1.0e6  # Hz
    duration: float = 512e-6  # s

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ConfigurationError("plate width and height must be positive")
        if not self.base_speed > 0:
            raise ConfigurationError("base_speed must be positive")
        if not self.sample_rate > 0 or not self.duration > 0:
            raise ConfigurationError("sample_rate and duration must be positive")
        if not 0.0 <= self.anisotropy_ratio < 1.0:
            raise ConfigurationError("anisotropy_ratio must lie in [0, 1)")
        if self.attenuation_exponent < 0:
            raise ConfigurationError("attenuation_exponent must be >= 0")

    @property
    def n_samples(self) -> int:
        return int(round(self.sample_rate * self.duration))

    def contains(self, x: float, y: float, strict: bool = True) -> bool:
        if strict:
            return 0.0 < x < self.width and 0.0 < y < self.height
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height


@dataclass(frozen=True)
class SensorLayout:
    positions: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.positions) != 4:
            raise ConfigurationError("sensor layout needs exactly 4 positions")

    @classmethod
    def corners(cls, plate: PlateSpec) -> SensorLayout:
        w, h = plate.width, plate.height
        return cls(((0.0, 0.0), (w, 0.0), (0.0, h), (w, h)))

    def validate(self, plate: PlateSpec) -> None:
        for x, y in self.positions:
            if not plate.contains(x, y, strict=False):
                raise ConfigurationError(f"sensor ({x}, {y}) lies outside the plate")


@dataclass(frozen=True)
class SourceEvent:
    x: float  # mm
    y: float  # mm
    amplitude: float = 1.0
    center_frequency: float = 150e3  # Hz
    pulse_width: float = 30e-6  # s, full Gaussian window (6 sigma)
    seed: int = 0


@dataclass
class Waveform:
    sample_rate: float
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InputError("waveform samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate


@dataclass
class EventEntry:
    event_id: str
    x: float
    y: float
    split: str  # "train" | "validation"
    files: tuple[str, str, str, str]


@dataclass
class DatasetManifest:
    plate: PlateSpec
    layout: SensorLayout
    events: list[EventEntry]
    noise_rms: float = 0.0
    master_seed: int = 0
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        ids = [e.event_id for e in self.events]
        if len(set(ids)) != len(ids):
            raise InputError("duplicate event ids in manifest")

    def split(self, tag: str) -> list[EventEntry]:
        return [e for e in self.events if e.split == tag]

    def resolve(self, name: str) -> Path:
        p = Path(name)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def load_waveforms(self, entry: EventEntry) -> list[Waveform]:
        from .fileio import read_waveform

        return [read_waveform(self.resolve(f)) for f in entry.files]


def group_velocity(theta, plate: PlateSpec):
    """Group speed in m/s along propagation direction ``theta`` (radians)."""
    s = np.sin(np.asarray(theta, dtype=np.float64) - plate.principal_angle)
    v = plate.base_speed * np.sqrt(1.0 - plate.anisotropy_ratio * s * s)
    return float(v) if np.ndim(v) == 0 else v


def arrival_times(plate: PlateSpec, layout: SensorLayout, x: float, y: float) -> np.ndarray:
    """Time of flight in seconds from (x, y) to each sensor."""
    out = np.empty(4)
    for i, (sx, sy) in enumerate(layout.positions):
        dx, dy = sx - x, sy - y
        dist_m = math.hypot(dx, dy) * 1e-3
        out[i] = dist_m / group_velocity(math.atan2(dy, dx), plate)
    return out


def sensor_distances(layout: SensorLayout, x: float, y: float) -> np.ndarray:
    return np.array([math.hypot(sx - x, sy - y) for sx, sy in layout.positions])


def gabor_pulse(t: np.ndarray, t0: float, center_frequency: float, pulse_width: float) -> np.ndarray:
    sigma = pulse_width / 6.0
    tau = t - t0
    return np.exp(-0.5 * (tau / sigma) ** 2) * np.cos(2.0 * np.pi * center_frequency * tau)


def synth_event(
    plate: PlateSpec, layout: SensorLayout, event: SourceEvent, noise_rms: float = 0.0
) -> list[Waveform]:
    if not plate.contains(event.x, event.y):
        raise ConfigurationError(f"event ({event.x}, {event.y}) is not strictly inside the plate")
    if noise_rms < 0:
        raise ParameterError("noise_rms must be >= 0")
    t_arr = arrival_times(plate, layout, event.x, event.y)
    if np.any(t_arr > plate.duration):
        raise ConfigurationError("event arrives after capture window")
    dist = sensor_distances(layout, event.x, event.y)
    t = np.arange(plate.n_samples) / plate.sample_rate
    rng = np.random.default_rng(event.seed)
    out = []
    for i in range(4):
        gain = event.amplitude / max(dist[i], 1.0) ** plate.attenuation_exponent
        s = gain * gabor_pulse(t, t_arr[i], event.center_frequency, event.pulse_width)
        if noise_rms > 0:
            s = s + rng.normal(0.0, noise_rms, size=t.size)
        out.append(Waveform(plate.sample_rate, s))
    return out


def grid_points(plate: PlateSpec, nx: int = 9, ny: int = 7, spacing: float = GRID_SPACING_MM):
    """Grid node coordinates centred on the plate, row-major in y then x."""
    x0 = (plate.width - (nx - 1) * spacing) / 2.0
    y0 = (plate.height - (ny - 1) * spacing) / 2.0
    if nx < 1 or ny < 1 or x0 <= 0 or y0 <= 0:
        raise ConfigurationError(
            f"{nx}x{ny} grid at {spacing} mm pitch does not fit strictly inside the plate"
        )
    xs = x0 + spacing * np.arange(nx)
    ys = y0 + spacing * np.arange(ny)
    return [(float(x), float(y)) for y in ys for x in xs]


def default_noise_rms(plate: PlateSpec, layout: SensorLayout, template: SourceEvent | None = None,
                      nx: int = 9, ny: int = 7) -> float:
    """2 % of the noiseless peak amplitude at the farthest source-sensor pair of the grid."""
    template = template or SourceEvent(0.0, 0.0)
    far = max(sensor_distances(layout, x, y).max() for x, y in grid_points(plate, nx, ny))
    return float(0.02 * template.amplitude / max(float(far), 1.0) ** plate.attenuation_exponent)


def event_seed(master_seed: int, index: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def validation_points(plate: PlateSpec, count: int, master_seed: int, nx: int = 9, ny: int = 7,
                      spacing: float = GRID_SPACING_MM, min_node_distance: float = 5.0):
    """Uniform random points inside the grid hull, kept away from grid nodes."""
    nodes = np.array(grid_points(plate, nx, ny, spacing))
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(2**31,)))
    pts: list[tuple[float, float]] = []
    while len(pts) < count:
        p = lo + (hi - lo) * rng.random(2)
        if np.min(np.hypot(*(nodes - p).T)) >= min_node_distance:
            pts.append((float(p[0]), float(p[1])))
    return pts


def generate_grid_dataset(
    plate: PlateSpec,
    layout: SensorLayout,
    out_dir: str | Path,
    grid_nx: int = 9,
    grid_ny: int = 7,
    repeats: int = 3,
    noise_rms: float | None = None,
    master_seed: int = 0,
    n_validation: int = 15,
    template: SourceEvent | None = None,
    threads: int = 1,
) -> DatasetManifest:
    """Simulate the PLB grid campaign and write waveforms plus a manifest.

    ``noise_rms=None`` selects :func:`default_noise_rms`. Per-event seeds
    come from ``master_seed`` and the event index only, so the output does
    not depend on ``threads``.
    """
    from .fileio import write_waveform

    layout.validate(plate)
    template = template or SourceEvent(0.0, 0.0)
    nodes = grid_points(plate, grid_nx, grid_ny)
    if repeats < 1:
        raise ConfigurationError("repeats must be >= 1")
    if noise_rms is None:
        noise_rms = default_noise_rms(plate, layout, template, grid_nx, grid_ny)

    jobs = []
    for r in range(repeats):
        for k, (x, y) in enumerate(nodes):
            ix, iy = k % grid_nx, k // grid_nx
            jobs.append((f"g{ix}-{iy}-r{r}", x, y, "train"))
    for k, (x, y) in enumerate(validation_points(plate, n_validation, master_seed, grid_nx, grid_ny)):
        jobs.append((f"v{k:02d}", x, y, "validation"))

    out_dir = Path(out_dir)
    (out_dir / "waveforms").mkdir(parents=True, exist_ok=True)

    def run(index: int) -> EventEntry:
        event_id, x, y, split = jobs[index]
        ev = replace(template, x=x, y=y, seed=event_seed(master_seed, index))
        files = []
        for ch, w in enumerate(synth_event(plate, layout, ev, noise_rms)):
            name = f"waveforms/{event_id}_ch{ch}.aewf"
            write_waveform(out_dir / name, w)
            files.append(name)
        return EventEntry(event_id, x, y, split, tuple(files))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            entries = list(pool.map(run, range(len(jobs))))
    else:
        entries = [run(i) for i in range(len(jobs))]

    manifest = DatasetManifest(plate, layout, entries, noise_rms, master_seed, root=out_dir)
    write_manifest(out_dir / "manifest.txt", manifest)
    return manifest


# --- manifest text format -------------------------------------------------

_PLATE_FIELDS = ("width", "height", "base_speed", "anisotropy_ratio", "principal_angle",
                 "attenuation_exponent", "sample_rate", "duration")
_EVENT_HEADER = "event_id,x_mm,y_mm,split,ch0,ch1,ch2,ch3"


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    lines = ["# ae-locate dataset manifest", "format = 1"]
    for name in _PLATE_FIELDS:
        lines.append(f"plate.{name} = {float(getattr(manifest.plate, name))!r}")
    for i, (x, y) in enumerate(manifest.layout.positions):
        lines.append(f"sensor.{i} = {float(x)!r},{float(y)!r}")
    lines.append(f"noise_rms = {float(manifest.noise_rms)!r}")
    lines.append(f"master_seed = {manifest.master_seed}")
    lines.append("")
    lines.append("[events]")
    lines.append(_EVENT_HEADER)
    for e in manifest.events:
        lines.append(",".join([e.event_id, repr(float(e.x)), repr(float(e.y)), e.split, *e.files]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    keys: dict[str, str] = {}
    events: list[EventEntry] = []
    in_table = False
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "[events]":
            in_table = True
            continue
        if in_table:
            if line == _EVENT_HEADER:
                continue
            parts = line.split(",")
            if len(parts) != 8:
                raise InputError(f"malformed event row: {line!r}")
            if parts[3] not in ("train", "validation"):
                raise InputError(f"unknown split tag {parts[3]!r}")
            events.append(EventEntry(parts[0], float(parts[1]), float(parts[2]), parts[3],
                                     tuple(parts[4:8])))
        else:
            k, _, v = line.partition("=")
            keys[k.strip()] = v.strip()
    try:
        plate = PlateSpec(**{n: float(keys[f"plate.{n}"]) for n in _PLATE_FIELDS})
        sensors = tuple(tuple(float(c) for c in keys[f"sensor.{i}"].split(",")) for i in range(4))
        manifest = DatasetManifest(plate, SensorLayout(sensors), events,
                                   float(keys.get("noise_rms", 0.0)),
                                   int(keys.get("master_seed", 0)), root=path.parent)
    except KeyError as exc:
        raise InputError(f"manifest missing key {exc}") from None
    return manifest


def check_manifest(manifest: DatasetManifest) -> None:
    """Raise if any referenced waveform is missing or unreadable."""
    for e in manifest.events:
        manifest.load_waveforms(e)
