"""Command-line entry point: ``ae-locate <command> [flags]``.

Exit status: 0 success, 2 missing or invalid input, 3 numerical failure,
64 invalid flags. Failures print one ``error: <category>: <message>`` line
on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import AELocateError, ConfigurationError, InputError, NumericalError

log = logging.getLogger("ae_locate")

EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 64

SIM_KEYS = ("width", "height", "base_speed", "anisotropy", "principal_angle", "attenuation",
            "sample_rate", "duration", "grid_nx", "grid_ny", "repeats", "validation", "noise_rms", "seed")
PREP_KEYS = ("cutoff", "image_size", "scales", "dwt_levels")
TRAIN_KEYS = ("optimizer", "batch_size", "lr", "lr_schedule", "epochs", "seed")


class UsageExit(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageExit(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file (flags take precedence)")
    p.add_argument("--threads", type=int, help="cap on worker and BLAS threads (env AE_LOCATE_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> Parser:
    parser = Parser(prog="ae-locate", description="Acoustic-emission source localization pipeline.")
    sub = parser.add_subparsers(dest="command", parser_class=Parser, required=True)

    p = sub.add_parser("simulate", help="simulate the grid PLB campaign")
    _add_common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    for flag, typ in (("--width", float), ("--height", float), ("--base-speed", float),
                      ("--anisotropy", float), ("--principal-angle", float), ("--attenuation", float),
                      ("--sample-rate", float), ("--duration", float), ("--grid-nx", int),
                      ("--grid-ny", int), ("--repeats", int), ("--validation", int),
                      ("--noise-rms", float), ("--seed", int)):
        p.add_argument(flag, type=typ)

    p = sub.add_parser("preprocess", help="waveforms -> 4-channel scalogram samples")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", type=int)
    p.add_argument("--scales", type=int)
    p.add_argument("--cutoff", type=float)
    p.add_argument("--dwt-levels", type=int)

    p = sub.add_parser("baseline", help="pairwise TDOA propagation speeds")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-sigma", type=float)

    p = sub.add_parser("train", help="train AESLNet")
    _add_common(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--optimizer", choices=("sgd", "rmsprop", "adam"))
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-schedule", choices=("step", "constant"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("tune", help="Bayesian optimization of optimizer and batch size")
    _add_common(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--init-count", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--tune-epochs", type=int, help="epochs per cross-validation fold")
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-schedule", choices=("step", "constant"))
    p.add_argument("--xi", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--timings", action="store_true", help="fill the seconds column (not reproducible)")

    p = sub.add_parser("evaluate", help="localization error report")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "validation"), default="validation")
    p.add_argument("--force", action="store_true", help="skip the config-hash consistency check")

    p = sub.add_parser("ablation", help="parallel vs shared branch cross-validation")
    _add_common(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, dest="ablation_seeds")
    p.add_argument("--ablation-epochs", type=int)
    p.add_argument("--control-samples", help="isotropic control sample directory")
    p.add_argument("--folds", type=int)
    p.add_argument("--optimizer", choices=("sgd", "rmsprop", "adam"))
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-schedule", choices=("step", "constant"))

    p = sub.add_parser("export-plots", help="speed histogram, detection scatter, scalogram heat map")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--speeds", help="speeds CSV from baseline")
    p.add_argument("--report", help="report CSV from evaluate")
    p.add_argument("--sample", help="one .aesm sample file")
    p.add_argument("--bins", type=int, default=50)
    return parser


# --- helpers ---------------------------------------------------------------------

def _require(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _values(args: argparse.Namespace) -> dict:
    flags = {k: v for k, v in vars(args).items() if k in cfgmod.DEFAULTS}
    file_cfg = cfgmod.read_config(args.config) if args.config else {}
    return cfgmod.resolve(flags, file_cfg)


def _subset(values: dict, keys) -> dict:
    return {k: values[k] for k in keys}


def _plate(v: dict):
    from .sim import PlateSpec

    return PlateSpec(v["width"], v["height"], v["base_speed"], v["anisotropy"], v["principal_angle"],
                     v["attenuation"], v["sample_rate"], v["duration"])


def _hp(v: dict, epochs_key: str = "epochs"):
    from .nn.train import HyperParams

    return HyperParams(v["optimizer"], v["batch_size"], v["lr"], v[epochs_key], v["lr_schedule"])


def _samples_hash(samples_dir: Path) -> str:
    return cfgmod.read_run_manifest(samples_dir / "run.txt").get("config_hash", "")


# --- commands --------------------------------------------------------------------

def cmd_simulate(args, v, threads) -> int:
    from .sim import SensorLayout, generate_grid_dataset

    plate = _plate(v)
    m = generate_grid_dataset(plate, SensorLayout.corners(plate), args.out, v["grid_nx"], v["grid_ny"],
                              v["repeats"], v["noise_rms"], v["seed"], v["validation"], threads=threads)
    cfgmod.write_run_manifest(Path(args.out) / "run.txt", "simulate", _subset(v, SIM_KEYS),
                              {"noise_rms_used": repr(m.noise_rms)})
    print(f"simulated {len(m.split('train'))} train + {len(m.split('validation'))} validation events -> {args.out}")
    return 0


def cmd_preprocess(args, v, threads) -> int:
    from .dsp import PreprocessConfig, WaveletSpec
    from .samples import preprocess_manifest
    from .sim import read_manifest

    manifest_path = _require(args.manifest, "manifest")
    manifest = read_manifest(manifest_path)
    cfg = PreprocessConfig(v["cutoff"], v["image_size"], v["scales"], wavelet=WaveletSpec(dwt_levels=v["dwt_levels"]))
    counts = preprocess_manifest(manifest, args.out, cfg, threads)
    values = _subset(v, PREP_KEYS)
    values["manifest_sha256"] = hashlib.sha256(manifest_path.read_bytes()).hexdigest()
    cfgmod.write_run_manifest(Path(args.out) / "run.txt", "preprocess", values,
                              {"plate": " ".join(f"{k}={getattr(manifest.plate, k)!r}" for k in ("width", "height"))})
    print(f"wrote {counts['train']} train + {counts['validation']} validation samples -> {args.out}")
    return 0


def cmd_baseline(args, v, threads) -> int:
    from .sim import read_manifest
    from .tdoa import enumerate_speeds, write_speeds_csv

    manifest = read_manifest(_require(args.manifest, "manifest"))
    enum = enumerate_speeds(manifest, v["k_sigma"])
    stats = write_speeds_csv(args.out, enum)
    cfgmod.write_run_manifest(Path(str(args.out) + ".run.txt"), "baseline", {"k_sigma": v["k_sigma"]},
                              {"manifest": args.manifest})
    if stats is not None:
        print(f"{stats.n} speed records, mean {stats.mean:.2f} m/s, sd {stats.std_dev:.2f} m/s, "
              f"CI95 +/-{stats.ci95_half_width:.2f} m/s, {enum.degenerate_pairs} degenerate pairs")
    return 0


def _plate_from_samples(samples_dir: Path):
    from .sim import PlateSpec

    info = cfgmod.read_run_manifest(samples_dir / "run.txt").get("plate", "")
    dims = dict(item.split("=") for item in info.split()) if info else {}
    return PlateSpec(width=float(dims.get("width", 300.0)), height=float(dims.get("height", 300.0)))


def cmd_train(args, v, threads) -> int:
    from .nn import AESLNet, Architecture, save_checkpoint, train
    from .samples import load_sample_dir

    samples_dir = _require(args.samples, "sample directory")
    data = load_sample_dir(samples_dir, "train")
    arch = Architecture(image_size=data.x.shape[-1])
    model = AESLNet(arch, seed=v["seed"])
    result = train(model, data, _hp(v), seed=v["seed"])
    save_checkpoint(args.out, model, result.optimizer)
    hist = Path(str(args.out) + ".loss.csv")
    hist.write_text("epoch,loss\r\n" + "".join(f"{i},{l!r}\r\n" for i, l in enumerate(result.loss_history)),
                    encoding="utf-8")
    cfgmod.write_run_manifest(Path(str(args.out) + ".run.txt"), "train", _subset(v, TRAIN_KEYS),
                              {"samples_hash": _samples_hash(samples_dir)})
    print(f"trained {hist.name}: final loss {result.loss_history[-1] if result.loss_history else float('nan'):.3g}")
    return 0


def cmd_tune(args, v, threads) -> int:
    from .evaluation import aeslnet_fit, cross_validate
    from .hpo import SearchSpace, optimize_hyperparams, write_trials_csv
    from .nn import Architecture
    from .samples import load_sample_dir

    samples_dir = _require(args.samples, "sample directory")
    data = load_sample_dir(samples_dir, "train")
    fit = aeslnet_fit(Architecture(image_size=data.x.shape[-1]))

    def objective(hp):
        return cross_validate(data, hp, v["folds"], v["seed"], fit).fold_losses

    base = _hp(v, "tune_epochs")
    result = optimize_hyperparams(objective, SearchSpace(), base, v["iterations"], v["init_count"], v["seed"],
                                  v["xi"], on_trial=lambda t: log.info("trial %d %s/%d -> %.4g", t.iteration,
                                                                        t.hyperparams.optimizer,
                                                                        t.hyperparams.batch_size, t.mean_loss))
    write_trials_csv(args.out, result, with_timing=args.timings)
    cfgmod.write_run_manifest(Path(str(args.out) + ".run.txt"), "tune",
                              _subset(v, ("iterations", "init_count", "folds", "tune_epochs", "lr", "lr_schedule", "xi", "seed")),
                              {"samples_hash": _samples_hash(samples_dir)})
    b = result.best
    print(f"best: {b.hyperparams.optimizer} batch {b.hyperparams.batch_size} cv loss {b.mean_loss:.4g}")
    return 0


def cmd_evaluate(args, v, threads) -> int:
    from .evaluation import error_report, write_report_csv
    from .nn import load_checkpoint
    from .samples import load_sample_dir

    model_path = _require(args.model, "model")
    samples_dir = _require(args.samples, "sample directory")
    if not args.force:
        want = cfgmod.read_run_manifest(Path(str(model_path) + ".run.txt")).get("samples_hash", "")
        have = _samples_hash(samples_dir)
        if want and have and want != have:
            raise ConfigurationError(f"model was trained on samples {want}, got {have} (use --force)")
    model, _ = load_checkpoint(model_path)
    data = load_sample_dir(samples_dir, args.split)
    report = error_report(model, data, _plate_from_samples(samples_dir))
    write_report_csv(args.out, report)
    res = "none" if report.resolution is None else f"{report.resolution:g} mm"
    print(f"{args.split}: mean {report.mean:.2f} mm, sd {report.std_dev:.2f} mm, max {report.max:.2f} mm, "
          f"resolution {res}")
    return 0


def cmd_ablation(args, v, threads) -> int:
    from .evaluation import ablation_compare, write_ablation_csv
    from .nn import Architecture
    from .samples import load_sample_dir

    data = load_sample_dir(_require(args.samples, "sample directory"), "train")
    arch = Architecture(image_size=data.x.shape[-1])
    hp = _hp(v, "ablation_epochs")
    seeds = list(range(v["ablation_seeds"]))
    result = ablation_compare(data, hp, seeds, arch, v["folds"])
    control = None
    if args.control_samples:
        cdata = load_sample_dir(_require(args.control_samples, "control sample directory"), "train")
        control = ablation_compare(cdata, hp, seeds, arch, v["folds"])
    write_ablation_csv(args.out, result, control)
    print(f"median shared/parallel cv-loss ratio {result.median_ratio:.3f}"
          + (f" (control {control.median_ratio:.3f})" if control else ""))
    return 0


def cmd_export_plots(args, v, threads) -> int:
    from . import plots
    from .evaluation import read_report_csv
    from .fileio import read_sample
    from .tdoa import read_speeds_csv

    if not (args.speeds or args.report or args.sample):
        raise InputError("nothing to plot: give --speeds, --report and/or --sample")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.speeds:
        try:
            speeds = read_speeds_csv(_require(args.speeds, "speeds CSV"))
        except ValueError as exc:
            raise InputError(str(exc)) from None
        if speeds.size == 0:
            raise InputError(f"{args.speeds}: no speed records")
        plots.speed_histogram(speeds, out / "speed_histogram.png", args.bins)
    if args.report:
        try:
            true, pred = read_report_csv(_require(args.report, "report CSV"))
        except ValueError as exc:
            raise InputError(str(exc)) from None
        plots.detection_scatter(true, pred, _plate(v), out / "detection.png")
    if args.sample:
        channels, _ = read_sample(_require(args.sample, "sample file"))
        plots.scalogram_heatmap(channels, out / "scalogram.png")
    print(f"plots written to {out}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "baseline": cmd_baseline,
    "train": cmd_train,
    "tune": cmd_tune,
    "evaluate": cmd_evaluate,
    "ablation": cmd_ablation,
    "export-plots": cmd_export_plots,
}


def _fail(code: int, category: str, message: str) -> int:
    print(f"error: {category}: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageExit as exc:
        return _fail(EXIT_USAGE, "usage error", str(exc))
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads or int(os.environ.get("AE_LOCATE_THREADS", "1") or 1)
    try:
        from threadpoolctl import threadpool_limits

        v = _values(args)
        with threadpool_limits(limits=max(threads, 1)):
            return COMMANDS[args.command](args, v, max(threads, 1))
    except FileNotFoundError as exc:
        return _fail(EXIT_INPUT, "missing input", str(exc))
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc.category, str(exc))
    except AELocateError as exc:
        return _fail(EXIT_INPUT, exc.category, str(exc))
    except (ValueError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_INPUT, "input error", str(exc))


if __name__ == "__main__":
    sys.exit(main())
