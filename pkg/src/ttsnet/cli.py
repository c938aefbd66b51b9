"""Command-line interface: ``ttsnet synth | onset | run | compare | gradcheck | info``."""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

import click
import numpy as np

from .config import METHODS, ConfigError, ExperimentConfig, format_config, load_config
from .core import SynthSpec, generate_synthetic
from .fbtrca import feature_provenance
from .epofile import MAGIC as EPO_MAGIC, EpochFileError, read_epochs, write_epochs
from .nnet import serialize
from .onset import MotionKind, TrajectoryTrial, locate_onset

WINDOW_CHOICES = ["aligned", "cue", "cue_I", "cue_II"]


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _load(config_path):
    if config_path is None:
        return ExperimentConfig(), SynthSpec()
    try:
        return load_config(config_path)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc


def _override(cfg: ExperimentConfig, **opts) -> ExperimentConfig:
    changes = {k: v for k, v in opts.items() if v is not None}
    try:
        return cfg.replace(**changes)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc


def _read(path):
    try:
        return read_epochs(path)
    except (OSError, EpochFileError) as exc:
        raise click.ClickException(f"{path}: {exc}") from exc


@click.group()
def main():
    """Movement decoding from low-frequency EEG."""


@main.command()
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Config file; synth.* keys set the generator.")
@click.option("--seed", type=int, help="Generator seed.")
@click.option("--classes", type=int, help="Total number of classes K (including rest).")
@click.option("--rest/--no-rest", default=None, help="Make the last class a rest class.")
@click.option("--trials", "trials_per_class", type=int, help="Trials per class.")
@click.option("--channels", "n_channels", type=int)
@click.option("--samples", "n_samples", type=int)
@click.option("--fs", type=float)
@click.option("--noise-std", type=float)
@click.option("--jitter", "jitter_max_s", type=float, help="Maximum onset jitter in seconds.")
def synth(out, config_path, seed, classes, rest, **opts):
    """Generate a synthetic MRCP dataset and write it as an EPO1 file."""
    _, spec = _load(config_path)
    changes = {k: v for k, v in dict(opts, seed=seed, class_count=classes,
                                     include_rest=rest).items() if v is not None}
    try:
        spec = dataclasses.replace(spec, **changes)
        epochs = generate_synthetic(spec)
        write_epochs(epochs, out)
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote {len(epochs)} trials (K={epochs.class_count}, C={epochs.n_channels}, "
               f"T={epochs.n_samples}, fs={epochs.fs:g}) to {out}")


def _read_trajectories(path, fs):
    """One trial per line: ``kind, v0, v1, ...`` with kind in elbow/distal/rest."""
    trials = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                values = np.array([float(v) for v in row[1:]])
                trials.append(TrajectoryTrial(values, fs, MotionKind(row[0].strip())))
            except ValueError as exc:
                raise click.ClickException(f"{path}:{lineno}: {exc}") from exc
    return trials


def _read_trajectory_epochs(path, kind):
    ep = _read(path)
    if ep.n_channels != 1:
        raise click.ClickException(f"{path}: trajectory file needs C=1, got C={ep.n_channels}")
    return [TrajectoryTrial(t.data[0].astype(np.float64), t.fs, MotionKind(kind)) for t in ep.trials]


@main.command()
@click.argument("trajectories", type=click.Path(exists=True, dir_okay=False))
@click.option("--fs", type=float, default=256.0, show_default=True,
              help="Sampling rate of a CSV input; EPO1 files carry their own.")
@click.option("--kind", type=click.Choice([k.value for k in MotionKind]), default="elbow",
              show_default=True, help="Motion kind of every trial in an EPO1 input.")
@click.option("--out", type=click.Path(dir_okay=False), help="Output CSV (default: stdout).")
@click.option("--keep-quiet-rest", is_flag=True,
              help="Do not reject rest trials with low trajectory variance.")
def onset(trajectories, fs, kind, out, keep_quiet_rest):
    """Locate movement onsets and emit an onset CSV.

    The input is either an EPO1 file with one channel per trial (all trials
    of motion kind ``--kind``) or a CSV with one ``kind, v0, v1, ...`` row
    per trial.
    """
    if Path(trajectories).read_bytes()[:4] == EPO_MAGIC:
        trials = _read_trajectory_epochs(trajectories, kind)
    else:
        trials = _read_trajectories(trajectories, fs)
    rows = [("trial", "kind", "onset_sample", "onset_s", "rejected", "reason")]
    for i, t in enumerate(trials):
        res = locate_onset(t, reject_low_variance_rest=not keep_quiet_rest)
        s = "" if res.onset_sample is None else res.onset_sample
        sec = "" if res.onset_sample is None else f"{res.onset_sample / t.fs:.6f}"
        rows.append((i, t.motion_kind.value, s, sec, int(res.rejected), res.reason.value))
    if out:
        _write_csv(Path(out), rows)
    else:
        for r in rows:
            click.echo(",".join(str(v) for v in r))


def _experiment_options(f):
    f = click.option("--p-components", type=int, help="TRCA components P.")(f)
    f = click.option("--window", type=click.Choice(WINDOW_CHOICES), help="Epoch window.")(f)
    f = click.option("--seed", type=int, help="Cross-validation and training seed.")(f)
    f = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="Experiment config file.")(f)
    return f


def _save_fold(out_dir: Path, fold: int, model, train_idx) -> None:
    for name, net in model.networks().items():
        serialize.save_weights(net, out_dir / "weights" / f"fold{fold}_{name}.nnw")
    for name, hist in model.histories.items():
        _write_csv(out_dir / "curves" / f"fold{fold}_{name}.csv",
                   [("epoch", "loss", "accuracy")] + hist.rows())
    arrays = model.arrays()
    for key, W in arrays.items():
        if key.endswith("W"):
            tag = key.replace(".", "_")
            _write_csv(out_dir / "filters" / f"fold{fold}_{tag}.csv",
                       [[repr(float(v)) for v in row] for row in W])
    if "selected" in arrays:
        _write_csv(out_dir / "features" / f"fold{fold}_selected.csv",
                   [("rank", "feature")] + list(enumerate(arrays["selected"].tolist())))
    feats = getattr(model, "train_features", None)
    if feats is not None:
        n_banks = len(model.banks)
        header = ["trial"] + [f"b{f}_c{k}_{kind}" for f, k, kind in
                              feature_provenance(n_banks, feats.shape[1] // (3 * n_banks))]
        _write_csv(out_dir / "features" / f"fold{fold}_train.csv",
                   [header] + [[i] + [repr(float(v)) for v in row] for i, row in zip(train_idx, feats)])


def _run_one(epochs, cfg: ExperimentConfig, out_dir: Path):
    from .pipeline import run_cv

    for sub in ("weights", "curves", "filters", "features"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    report = run_cv(epochs, cfg, on_fold=lambda i, model, tr, te: _save_fold(out_dir, i, model, tr))
    _write_csv(out_dir / "report.csv", report.csv_rows())
    (out_dir / "summary.json").write_text(json.dumps(report.summary(), indent=2) + "\n")
    (out_dir / "config.txt").write_text(format_config(cfg))
    return report


@main.command()
@click.argument("data", type=click.Path(dir_okay=False))
@_experiment_options
@click.option("--method", type=click.Choice(METHODS), help="Decoding method.")
@click.option("--out-dir", type=click.Path(file_okay=False), default="out", show_default=True)
def run(data, config_path, seed, window, p_components, method, out_dir):
    """Cross-validate one method on an EPO1 file; writes report.csv and summary.json."""
    if not Path(data).is_file():
        raise click.ClickException(f"data file not found: {data}")
    cfg, _ = _load(config_path)
    cfg = _override(cfg, method=method, seed=seed, window=window, p_components=p_components)
    epochs = _read(data)
    try:
        report = _run_one(epochs, cfg, Path(out_dir))
    except (ValueError, RuntimeError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"{report.method} {report.task}: {report.mean:.4f} ± {report.std:.4f} "
               f"over {len(report.folds)} folds ({report.wall_time_s:.1f} s)")


@main.command()
@click.argument("data", type=click.Path(dir_okay=False))
@_experiment_options
@click.option("--methods", default=",".join(METHODS), show_default=True,
              help="Comma-separated methods to compare.")
@click.option("--out-dir", type=click.Path(file_okay=False), default="out", show_default=True)
def compare(data, config_path, seed, window, p_components, methods, out_dir):
    """Cross-validate several methods on one dataset and tabulate mean ± std."""
    if not Path(data).is_file():
        raise click.ClickException(f"data file not found: {data}")
    names = [m.strip() for m in methods.split(",") if m.strip()]
    bad = [m for m in names if m not in METHODS]
    if bad:
        raise click.ClickException(f"unknown method(s): {', '.join(bad)}")
    cfg, _ = _load(config_path)
    cfg = _override(cfg, seed=seed, window=window, p_components=p_components)
    epochs = _read(data)
    rows = [("method", "mean", "std", "mean_std")]
    for m in names:
        try:
            report = _run_one(epochs, cfg.replace(method=m), Path(out_dir) / m)
        except (ValueError, RuntimeError) as exc:
            raise click.ClickException(f"{m}: {exc}") from exc
        rows.append((m, f"{report.mean:.6f}", f"{report.std:.6f}",
                     f"{report.mean:.4f}±{report.std:.4f}"))
    _write_csv(Path(out_dir) / "compare.csv", rows)
    for r in rows:
        click.echo("\t".join(r))


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
def gradcheck(seed):
    """Run the finite-difference gradient checks of every layer and network."""
    from .nnet.gradcheck import main_report

    results, elapsed = main_report(seed)
    for r in results:
        click.echo(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<32} rel_err={r.rel_error:.2e} "
                   f"(tol {r.tol:.0e})")
    failed = [r for r in results if not r.passed]
    click.echo(f"{len(results) - len(failed)}/{len(results)} passed in {elapsed:.1f} s")
    if failed:
        raise SystemExit(1)


@main.command()
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def info(path):
    """Describe an EPO1 epoch file or an NNW1 weight blob."""
    head = Path(path).read_bytes()[:4]
    if head == EPO_MAGIC:
        ep = _read(path)
        counts = np.bincount(ep.labels, minlength=ep.class_count)
        with_onset = sum(t.onset_sample is not None for t in ep.trials)
        click.echo(f"EPO1 epochs: {len(ep)} trials, K={ep.class_count}, C={ep.n_channels}, "
                   f"T={ep.n_samples}, fs={ep.fs:g} Hz")
        click.echo(f"trials per class: {counts.tolist()}; with onset: {with_onset}")
        click.echo(f"channels: {', '.join(ep.channel_names)}")
    elif head == serialize.MAGIC:
        try:
            state = serialize.decode_state(Path(path).read_bytes())
        except ValueError as exc:
            raise click.ClickException(f"{path}: {exc}") from exc
        total = sum(a.size for a in state.values())
        click.echo(f"NNW1 weights: {len(state)} arrays, {total} values")
        for name, arr in state.items():
            click.echo(f"  {name}: {arr.dtype} {list(arr.shape)}")
    else:
        raise click.ClickException(f"{path}: unrecognized file magic {head!r}")


if __name__ == "__main__":
    main()
