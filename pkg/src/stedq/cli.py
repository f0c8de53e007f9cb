"""Command-line entry point wiring data generation, training, evaluation,
the study simulation, report rendering, and the judging service.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
Every artifact-producing command drops a ``run_manifest.json`` recording the
resolved configuration, seeds, input digests, and outputs.
"""

from __future__ import annotations

import functools
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import data, network, reporting, service, study, synth, training
from .errors import (CheckpointError, ConfigError, DataError, SessionError,
                     StudyError, TrainingDivergedError)

EXIT_DATA_ERROR = 3
EXIT_NUMERIC_ERROR = 4

DEFAULT_BIN_WEIGHTS = ",".join(str(w) for w in synth.PAPER_LIKE_BIN_WEIGHTS)


def guarded(fn):
    """Map domain failures onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except TrainingDivergedError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_NUMERIC_ERROR)
        except (DataError, StudyError, SessionError, CheckpointError, ConfigError,
                FileNotFoundError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_DATA_ERROR)

    return wrapper


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunManifest:
    """Provenance record written next to a command's outputs."""

    def __init__(self, command: str, config: dict):
        self.command = command
        self.config = config
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.results: dict = {}
        self.started = time.time()

    def add_input(self, path) -> None:
        path = Path(path)
        if path.is_file():
            self.inputs[str(path)] = _sha256(path)

    def add_output(self, path) -> None:
        self.outputs.append(str(path))

    def write(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        finished = time.time()
        payload = {
            "command": self.command,
            "config": self.config,
            "input_digests": self.inputs,
            "outputs": self.outputs,
            "results": self.results,
            "started": self.started,
            "finished": finished,
            "duration_s": finished - self.started,
        }
        path = out_dir / "run_manifest.json"
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        return path


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _parse_weights(text: str):
    if text.lower() in ("none", "off", ""):
        return None
    return tuple(float(v) for v in text.split(","))


@click.group()
def cli():
    """Quality scoring for STED-like microscopy images."""


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

@cli.command("synth")
@click.option("--n", type=int, required=True, help="Number of images to generate.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--size", type=int, default=64, show_default=True, help="Image side in pixels.")
@click.option("--bin-weights", default=DEFAULT_BIN_WEIGHTS, show_default=True,
              help="Target quality-bin weights (5 comma-separated values, or 'none').")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@guarded
def synth_cmd(n, seed, size, bin_weights, out):
    """Generate a labeled synthetic dataset (images + manifest)."""
    cfg = synth.SynthConfig(image_size=size, seed=seed,
                            target_bin_weights=_parse_weights(bin_weights))
    manifest = RunManifest("synth", {"n": n, "seed": seed, "size": size,
                                     "bin_weights": bin_weights, "out": str(out)})
    items = synth.synth_generate(cfg, n)
    out.mkdir(parents=True, exist_ok=True)
    data.save_manifest(items, out / "manifest.csv")
    synth.save_config(cfg, out / "synth_config.txt")
    manifest.add_output(out / "manifest.csv")
    manifest.add_output(out / "synth_config.txt")
    manifest.results["n_items"] = len(items)
    manifest.write(out)
    click.echo(f"wrote {len(items)} images to {out}")


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------

@dataclass
class _Row:
    path: Path
    score: float


@cli.command("split")
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@guarded
def split_cmd(manifest_path, seed, out):
    """Stratified 80/10/10 split of a dataset manifest."""
    rows = [_Row(path, score) for path, score in data.load_manifest_rows(manifest_path)]
    manifest = RunManifest("split", {"manifest": str(manifest_path), "seed": seed,
                                     "out": str(out)})
    manifest.add_input(manifest_path)
    split = data.stratified_split(rows, seed=seed)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", split.train), ("validation", split.validation),
                       ("test", split.test)):
        rel_rows = [(os.path.relpath(r.path, out), r.score) for r in part]
        data.save_manifest_rows(rel_rows, out / f"{name}.csv")
        manifest.add_output(out / f"{name}.csv")
    manifest.results["sizes"] = {"train": len(split.train),
                                 "validation": len(split.validation),
                                 "test": len(split.test)}
    manifest.write(out)
    click.echo(f"split {len(rows)} items into "
               f"{len(split.train)}/{len(split.validation)}/{len(split.test)}")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _load_normalized(manifest_path, stats):
    items = data.load_dataset(manifest_path)
    x, y = data.to_arrays(items, stats)
    return training.TensorDataset(x, y)


def _net_from_checkpoint_with_stats(ckpt_path):
    ckpt = network.load_checkpoint(ckpt_path)
    meta = ckpt.metadata
    if "norm_mean" not in meta or "norm_std" not in meta:
        raise DataError(f"{ckpt_path}: checkpoint carries no normalization stats")
    stats = data.NormStats(mean=float(meta["norm_mean"]), std=float(meta["norm_std"]))
    return ckpt.to_network(), stats, ckpt


@cli.command("train")
@click.option("--split-dir", type=click.Path(path_type=Path), required=True,
              help="Directory with train.csv/validation.csv/test.csv.")
@click.option("--channels", default="16,32,64,64,128,128", show_default=True)
@click.option("--dense", default="128,1", show_default=True)
@click.option("--kernel", type=int, default=3, show_default=True)
@click.option("--pool-stride", type=int, default=2, show_default=True)
@click.option("--lr", type=float, default=0.01, show_default=True)
@click.option("--momentum", type=float, default=0.9, show_default=True)
@click.option("--batch-size", type=int, default=100, show_default=True)
@click.option("--patience", type=int, default=10, show_default=True)
@click.option("--max-epochs", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed for init, shuffling, and augmentation.")
@click.option("--augment/--no-augment", "do_augment", default=True, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@guarded
def train_cmd(split_dir, channels, dense, kernel, pool_stride, lr, momentum,
              batch_size, patience, max_epochs, seed, do_augment, out):
    """Train the quality network on a split; keeps the best-epoch weights."""
    manifest = RunManifest("train", {
        "split_dir": str(split_dir), "channels": channels, "dense": dense,
        "kernel": kernel, "pool_stride": pool_stride, "lr": lr, "momentum": momentum,
        "batch_size": batch_size, "patience": patience, "max_epochs": max_epochs,
        "seed": seed, "augment": do_augment, "out": str(out),
    })
    train_items = data.load_dataset(split_dir / "train.csv")
    val_items = data.load_dataset(split_dir / "validation.csv")
    for name in ("train.csv", "validation.csv", "test.csv"):
        manifest.add_input(split_dir / name)
    if not train_items:
        raise DataError(f"{split_dir}/train.csv holds no items")

    stats = data.compute_norm_stats(train_items)
    if do_augment:
        train_items = data.augment(train_items, seed=seed)
    size = train_items[0].image.height
    cfg = network.NetworkConfig(input_size=size, conv_channels=_parse_int_tuple(channels),
                                kernel_size=kernel, pool_stride=pool_stride,
                                dense_widths=_parse_int_tuple(dense), seed=seed)
    net = network.Network.build(cfg)
    tcfg = training.TrainingConfig(learning_rate=lr, momentum=momentum,
                                   batch_size=batch_size, patience_epochs=patience,
                                   max_epochs=max_epochs, seed=seed)
    train_set = training.TensorDataset(*data.to_arrays(train_items, stats))
    val_set = training.TensorDataset(*data.to_arrays(val_items, stats))
    ckpt, history = training.train(net, train_set, val_set, tcfg)

    ckpt.metadata["norm_mean"] = repr(stats.mean)
    ckpt.metadata["norm_std"] = repr(stats.std)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.ckpt"
    network.save_checkpoint(ckpt, ckpt_path)
    reporting.save_history_csv(history, out / "history.csv")
    reporting.plot_learning_curve(history, out / "learning_curve.png")
    manifest.add_output(ckpt_path)
    manifest.add_output(out / "history.csv")
    manifest.add_output(out / "learning_curve.png")

    results = {
        "best_epoch": history.best_epoch,
        "stopped_epoch": history.stopped_epoch,
        "best_val_rmse": min(history.val_rmse),
        "norm_mean": stats.mean,
        "norm_std": stats.std,
    }
    test_manifest = split_dir / "test.csv"
    if test_manifest.exists():
        test_set = _load_normalized(test_manifest, stats)
        results["test_rmse"] = training.evaluate(net, test_set)
    manifest.results = results
    manifest.write(out)
    click.echo(f"best epoch {history.best_epoch} "
               f"(val RMSE {min(history.val_rmse):.4f}), stopped at {history.stopped_epoch}")
    if "test_rmse" in results:
        click.echo(f"test RMSE {results['test_rmse']:.4f}")


# ---------------------------------------------------------------------------
# eval / predict / baseline
# ---------------------------------------------------------------------------

@cli.command("eval")
@click.option("--checkpoint", "ckpt_path", type=click.Path(path_type=Path), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@guarded
def eval_cmd(ckpt_path, manifest_path):
    """RMSE of a checkpoint on a labeled manifest."""
    net, stats, _ = _net_from_checkpoint_with_stats(ckpt_path)
    dataset = _load_normalized(manifest_path, stats)
    rmse = training.evaluate(net, dataset)
    click.echo(f"rmse {rmse:.6f}")


@cli.command("predict")
@click.option("--checkpoint", "ckpt_path", type=click.Path(path_type=Path), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True,
              help="Output CSV (path,prediction).")
@guarded
def predict_cmd(ckpt_path, manifest_path, out):
    """Quality scores for every image in a manifest."""
    net, stats, _ = _net_from_checkpoint_with_stats(ckpt_path)
    rows = data.load_manifest_rows(manifest_path)
    items = data.load_dataset(manifest_path)
    x, _ = data.to_arrays(items, stats)
    scores = []
    for start in range(0, len(items), 100):
        scores.extend(net.predict(x[start:start + 100]).tolist())
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("path,prediction\n")
        for (path, _score), pred in zip(rows, scores):
            fh.write(f"{path},{data.format_score(pred)}\n")
    click.echo(f"wrote {len(scores)} predictions to {out}")


@cli.command("baseline")
@click.option("--train-manifest", type=click.Path(path_type=Path), required=True,
              help="Labels to sample from.")
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@guarded
def baseline_cmd(train_manifest, n, seed, out):
    """Random predictions drawn from the training label distribution."""
    labels = [score for _path, score in data.load_manifest_rows(train_manifest)]
    draws = study.random_baseline(labels, seed=seed, n=n)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("prediction\n")
        for value in draws:
            fh.write(f"{data.format_score(value)}\n")
    click.echo(f"wrote {n} baseline predictions to {out}")


# ---------------------------------------------------------------------------
# simulate-study
# ---------------------------------------------------------------------------

def _predict_items(net, items, stats):
    x, _ = data.to_arrays(items, stats)
    preds = []
    for start in range(0, len(items), 100):
        preds.extend(net.predict(x[start:start + 100]).tolist())
    return preds


def run_simulated_study(ckpt_path, split_dir, out_dir: Path, testers: int, seed: int,
                        tester_noise: float = 0.05, equivalence: float = 0.05,
                        discard: float = 0.35) -> dict[str, study.BinnedReport]:
    """Blind sessions of simulated testers over network and random predictions.

    Builds two study datasets (system 'network' and 'random') from the test
    split, journals every simulated session through the service store, and
    returns the per-system binned reports.
    """
    net, stats, _ = _net_from_checkpoint_with_stats(ckpt_path)
    test_rows = data.load_manifest_rows(split_dir / "test.csv")
    test_items = data.load_dataset(split_dir / "test.csv")
    train_labels = [s for _p, s in data.load_manifest_rows(split_dir / "train.csv")]

    predictions = {
        "network": _predict_items(net, test_items, stats),
        "random": study.random_baseline(train_labels, seed=seed, n=len(test_items)),
    }
    for system, preds in predictions.items():
        entries = []
        for i, ((path, target), pred) in enumerate(zip(test_rows, preds)):
            entries.append(service.DatasetItem(
                item_id=f"{system}-{i:04d}", image_path=path,
                target=target, prediction=float(np.clip(pred, 0.0, 1.0))))
        service.save_study_dataset(out_dir / "datasets" / system, entries)

    store = service.SessionStore(out_dir)
    rng = np.random.default_rng(seed)
    for k in range(testers):
        tester_id = f"tester-{k:02d}"
        tester_cfg = study.SimTesterConfig(
            perception_noise=tester_noise, equivalence_threshold=equivalence,
            discard_threshold=discard, seed=int(rng.integers(2 ** 31)))
        for system in predictions:
            session = store.create_session(tester_id, system, seed=int(rng.integers(2 ** 31)))
            tester_rng = np.random.default_rng(tester_cfg.seed)
            while True:
                view = store.next_item(session.session_id)
                if view["done"]:
                    break
                item = store.study_item(session, view["item_id"])
                judgment = study.simulate_tester(item, item.target, tester_cfg, tester_rng)
                store.submit_judgment(session.session_id, item.item_id, judgment.raw)
    return {system: store.results(system) for system in predictions}


@cli.command("simulate-study")
@click.option("--checkpoint", "ckpt_path", type=click.Path(path_type=Path), required=True)
@click.option("--split-dir", type=click.Path(path_type=Path), required=True)
@click.option("--testers", type=int, default=11, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tester-noise", type=float, default=0.05, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@guarded
def simulate_study_cmd(ckpt_path, split_dir, testers, seed, tester_noise, out):
    """Blind pairwise study with simulated testers (network vs random)."""
    manifest = RunManifest("simulate-study", {
        "checkpoint": str(ckpt_path), "split_dir": str(split_dir),
        "testers": testers, "seed": seed, "tester_noise": tester_noise,
        "out": str(out),
    })
    manifest.add_input(ckpt_path)
    manifest.add_input(split_dir / "test.csv")
    manifest.add_input(split_dir / "train.csv")
    reports = run_simulated_study(ckpt_path, split_dir, out, testers, seed,
                                  tester_noise=tester_noise)
    reporting.save_binned_report_csv(reports, out / "report.csv")
    manifest.add_output(out / "report.csv")
    for system, report in reports.items():
        tester = reporting.pick_representative_tester(report)
        path = out / f"choices_{system}.csv"
        reporting.save_choices_csv(report.per_tester_tallies[tester], path)
        manifest.add_output(path)
    manifest.write(out)
    click.echo(f"simulated {testers} testers over {len(reports)} systems; "
               f"results in {out}")


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@cli.command("report")
@click.option("--study-dir", type=click.Path(path_type=Path), required=True,
              help="Directory produced by simulate-study (or served sessions).")
@click.option("--history", "history_path", type=click.Path(path_type=Path), default=None,
              help="Optional training history CSV for the learning-curve figure.")
@click.option("--train-manifest", type=click.Path(path_type=Path), default=None,
              help="Optional manifest for the label-distribution figure.")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@guarded
def report_cmd(study_dir, history_path, train_manifest, out):
    """Render study CSVs and figures from journaled sessions."""
    manifest = RunManifest("report", {
        "study_dir": str(study_dir),
        "history": str(history_path) if history_path else None,
        "train_manifest": str(train_manifest) if train_manifest else None,
        "out": str(out),
    })
    store = service.SessionStore(study_dir)
    if not store.datasets:
        raise DataError(f"{study_dir} holds no study datasets")
    reports = {name: store.results(name) for name in sorted(store.datasets)}
    out.mkdir(parents=True, exist_ok=True)
    reporting.save_binned_report_csv(reports, out / "report.csv")
    manifest.add_output(out / "report.csv")
    for system, report in reports.items():
        tester = reporting.pick_representative_tester(report)
        path = out / f"choices_{system}.csv"
        reporting.save_choices_csv(report.per_tester_tallies[tester], path)
        manifest.add_output(path)
    for path in reporting.render_study_figures(reports, out):
        manifest.add_output(path)
    if history_path is not None:
        history = reporting.load_history_csv(history_path)
        manifest.add_input(history_path)
        reporting.plot_learning_curve(history, out / "learning_curve.png")
        manifest.add_output(out / "learning_curve.png")
    if train_manifest is not None:
        scores = [s for _p, s in data.load_manifest_rows(train_manifest)]
        manifest.add_input(train_manifest)
        reporting.plot_label_histogram(scores, out / "label_distribution.png")
        manifest.add_output(out / "label_distribution.png")
    manifest.write(out)
    click.echo(f"report written to {out}")


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------

@cli.command("serve")
@click.option("--data-dir", type=click.Path(path_type=Path), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--ui", "ui_dir", type=click.Path(path_type=Path), default=None,
              help="Static directory with the judging front end.")
@guarded
def serve_cmd(data_dir, host, port, ui_dir):
    """Run the judging service over HTTP."""
    import uvicorn

    store = service.SessionStore(data_dir)
    app = service.create_app(store, ui_dir=ui_dir)
    click.echo(f"serving {len(store.datasets)} dataset(s) on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main():
    cli()


if __name__ == "__main__":
    main()
