"""In-memory sample sets and the on-disk sample directory layout.

A sample directory holds ``train/`` and ``validation/`` subdirectories of
``<event_id>.aesm`` files.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import PreprocessConfig, Sample, build_sample
from .errors import InputError
from .fileio import read_sample, write_sample
from .sim import DatasetManifest, PlateSpec

SPLITS = ("train", "validation")


@dataclass
class SampleSet:
    x: np.ndarray  # (N, 4, H, W)
    y: np.ndarray  # (N, 2) normalized coordinates
    ids: list[str]

    def __len__(self):
        return len(self.ids)

    def subset(self, index) -> SampleSet:
        index = np.asarray(index, dtype=int)
        return SampleSet(self.x[index], self.y[index], [self.ids[i] for i in index])

    @classmethod
    def from_samples(cls, samples: list[Sample]) -> SampleSet:
        if not samples:
            raise InputError("empty sample list")
        return cls(np.stack([s.channels for s in samples]),
                   np.array([s.label for s in samples], dtype=np.float64),
                   [s.event_id for s in samples])

    def groups(self) -> list[tuple[float, float]]:
        """Group key per sample: repeats of one grid node share a label."""
        return [tuple(row) for row in self.y.round(9).tolist()]


def preprocess_manifest(manifest: DatasetManifest, out_dir: str | Path,
                        cfg: PreprocessConfig = PreprocessConfig(), threads: int = 1) -> dict[str, int]:
    out_dir = Path(out_dir)
    for split in SPLITS:
        (out_dir / split).mkdir(parents=True, exist_ok=True)

    def run(entry):
        waves = manifest.load_waveforms(entry)
        s = build_sample(waves, (entry.x, entry.y), manifest.plate, cfg, entry.event_id)
        write_sample(out_dir / entry.split / f"{entry.event_id}.aesm", s.channels, s.label)
        return entry.split

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            splits = list(pool.map(run, manifest.events))
    else:
        splits = [run(e) for e in manifest.events]
    return {s: splits.count(s) for s in SPLITS}


def load_sample_dir(root: str | Path, split: str = "train") -> SampleSet:
    folder = Path(root) / split
    files = sorted(folder.glob("*.aesm"))
    if not files:
        raise FileNotFoundError(f"no samples in {folder}")
    xs, ys, ids = [], [], []
    for f in files:
        ch, label = read_sample(f)
        xs.append(ch)
        ys.append(label)
        ids.append(f.stem)
    return SampleSet(np.stack(xs), np.array(ys, dtype=np.float64), ids)


def denormalize(y: np.ndarray, plate: PlateSpec) -> np.ndarray:
    return np.asarray(y, dtype=np.float64) * np.array([plate.width, plate.height])
