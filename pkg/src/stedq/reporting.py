"""CSV exports and figure rendering for training and study results.

Delimited outputs mirror the shapes used when publishing the study:
  - learning history:  epoch,train_rmse,val_rmse
  - binned measures:   bin,system,mean_confusion,std_confusion,
                       mean_domination,std_domination,n_testers
  - tester choices:    bin,T,P,E        (one representative tester)

Empty cells (bins without any tester data) are written as ``-``, mirroring
dash rows in printed tables.  Figures are rendered to PNG next to the CSVs.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import DataError
from .study import N_BINS, BinnedReport, SessionTally, bin_label
from .training import TrainingHistory

DASH = "-"


# ---------------------------------------------------------------------------
# delimited outputs
# ---------------------------------------------------------------------------

def save_history_csv(history: TrainingHistory, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_rmse", "val_rmse"])
        for epoch, (tr, va) in enumerate(zip(history.train_rmse, history.val_rmse), start=1):
            writer.writerow([epoch, f"{tr:.6f}", f"{va:.6f}"])


def load_history_csv(path) -> TrainingHistory:
    history = TrainingHistory()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["epoch", "train_rmse", "val_rmse"]:
            raise DataError(f"{path}: bad history header {header!r}")
        for row in reader:
            if not row:
                continue
            history.train_rmse.append(float(row[1]))
            history.val_rmse.append(float(row[2]))
    history.stopped_epoch = len(history.val_rmse)
    if history.val_rmse:
        history.best_epoch = int(np.argmin(history.val_rmse)) + 1
    return history


def _fmt(value) -> str:
    return DASH if value is None else f"{value:.4f}"


def save_binned_report_csv(reports: Mapping[str, BinnedReport], path) -> None:
    """One row per (bin, system); systems are e.g. 'network' and 'random'."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin", "system", "mean_confusion", "std_confusion",
                         "mean_domination", "std_domination", "n_testers"])
        for b in range(N_BINS):
            for system, report in reports.items():
                c, d = report.confusion[b], report.domination[b]
                writer.writerow([bin_label(b), system, _fmt(c.mean), _fmt(c.std),
                                 _fmt(d.mean), _fmt(d.std), c.n_testers])


def pick_representative_tester(report: BinnedReport) -> str:
    """The tester whose per-bin confusion sits closest to the across-tester
    means (used for the per-bin choice-count view)."""
    from .study import confusion

    best_id, best_dist = None, float("inf")
    for tester_id, tallies in report.per_tester_tallies.items():
        dist, n = 0.0, 0
        for b, t in enumerate(tallies):
            c = confusion(t)
            mean = report.confusion[b].mean
            if c is None or mean is None:
                continue
            dist += abs(c - mean)
            n += 1
        if n == 0:
            continue
        dist /= n
        if dist < best_dist:
            best_id, best_dist = tester_id, dist
    if best_id is None:
        raise DataError("no tester has any effective judgments")
    return best_id


def save_choices_csv(tallies: Sequence[SessionTally], path) -> None:
    """Per-bin counts of target/prediction/equivalent picks for one tester."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin", "T", "P", "E"])
        for b, t in enumerate(tallies):
            writer.writerow([bin_label(b), t.target, t.prediction, t.equivalent])


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def plot_learning_curve(history: TrainingHistory, path) -> None:
    epochs = np.arange(1, len(history.train_rmse) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, history.train_rmse, label="train")
    ax.plot(epochs, history.val_rmse, label="validation")
    if history.best_epoch:
        ax.axvline(history.best_epoch, color="gray", linestyle="--",
                   label=f"best epoch ({history.best_epoch})")
    ax.set_xlabel("epoch")
    ax.set_ylabel("RMSE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _grouped_bars(ax, reports: Mapping[str, BinnedReport], measure: str):
    labels = [bin_label(b) for b in range(N_BINS)]
    x = np.arange(N_BINS)
    width = 0.8 / max(len(reports), 1)
    for k, (system, report) in enumerate(reports.items()):
        stats = getattr(report, measure)
        means = [s.mean if s.mean is not None else np.nan for s in stats]
        stds = [s.std if s.std is not None else 0.0 for s in stats]
        ax.bar(x + k * width, means, width, yerr=stds, capsize=3, label=system)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(labels, rotation=30)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("target quality bin")
    ax.legend()


def plot_binned_measure(reports: Mapping[str, BinnedReport], measure: str, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    _grouped_bars(ax, reports, measure)
    ax.set_ylabel(measure)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_choice_counts(tallies: Sequence[SessionTally], title: str, path) -> None:
    """Stacked per-bin counts of T/P/E for one tester."""
    labels = [bin_label(b) for b in range(N_BINS)]
    x = np.arange(N_BINS)
    t = np.array([tl.target for tl in tallies])
    p = np.array([tl.prediction for tl in tallies])
    e = np.array([tl.equivalent for tl in tallies])
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(x, t, label="target picked (T)")
    ax.bar(x, p, bottom=t, label="prediction picked (P)")
    ax.bar(x, e, bottom=t + p, label="equivalent (E)")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30)
    ax.set_xlabel("target quality bin")
    ax.set_ylabel("images")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_label_histogram(scores: Sequence[float], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(list(scores), bins=np.linspace(0, 1, 21), edgecolor="black")
    ax.set_xlabel("quality score")
    ax.set_ylabel("images")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_study_figures(reports: Mapping[str, BinnedReport], out_dir) -> list[Path]:
    """All study figures for a set of systems; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for measure in ("confusion", "domination"):
        path = out_dir / f"{measure}_by_bin.png"
        plot_binned_measure(reports, measure, path)
        written.append(path)
    for system, report in reports.items():
        tester = pick_representative_tester(report)
        path = out_dir / f"choices_{system}.png"
        plot_choice_counts(report.per_tester_tallies[tester],
                           f"{system}: tester {tester}", path)
        written.append(path)
    return written
