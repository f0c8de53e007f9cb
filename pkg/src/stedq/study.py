"""Blind pairwise-study bookkeeping and its indistinguishability measures.

A tester sees an image with two unlabeled scores (the expert target and the
system prediction, in randomized positions) and either picks one, marks them
equivalent, or discards the item.  From the per-session counts

    N  - items shown          T - target picked
    Ne - items not discarded  P - prediction picked
                              E - marked equivalent

two measures are derived:

    confusion   C = 1 - |(2P + E) - Ne| / Ne
    domination  D = P / (T + P)

C reaches 1 exactly when 2P + E = Ne, which covers both perfect-confusion
conditions: everything marked equivalent (E = Ne), or picks split evenly
between prediction and target (P = T with E = 0).  D is undefined when the
tester never made a pick; that case is reported as None, never coerced to 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np

from .errors import StudyError

RawChoice = Literal["left", "right", "equivalent", "discard"]
ResolvedChoice = Literal["target", "prediction", "equivalent", "discard"]
BlindOrder = Literal["left", "right"]  # which side displays the prediction

BIN_EDGES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
N_BINS = 5


@dataclass(frozen=True)
class StudyItem:
    """One image with its expert target and the system prediction under test."""

    item_id: str
    image_ref: str
    target: float
    prediction: float
    blind_order: BlindOrder

    def __post_init__(self):
        if not (0.0 <= self.target <= 1.0 and 0.0 <= self.prediction <= 1.0):
            raise StudyError(f"scores outside [0, 1] for item {self.item_id!r}")
        if self.blind_order not in ("left", "right"):
            raise StudyError(f"bad blind_order {self.blind_order!r}")

    @property
    def left_score(self) -> float:
        return self.prediction if self.blind_order == "left" else self.target

    @property
    def right_score(self) -> float:
        return self.prediction if self.blind_order == "right" else self.target


def resolve_choice(raw: RawChoice, blind_order: BlindOrder) -> ResolvedChoice:
    """Map a positional pick back to target/prediction."""
    if raw in ("equivalent", "discard"):
        return raw
    if raw not in ("left", "right"):
        raise StudyError(f"bad raw choice {raw!r}")
    return "prediction" if raw == blind_order else "target"


@dataclass(frozen=True)
class Judgment:
    item_id: str
    raw: RawChoice
    resolved: ResolvedChoice

    @classmethod
    def from_raw(cls, item: StudyItem, raw: RawChoice) -> "Judgment":
        return cls(item.item_id, raw, resolve_choice(raw, item.blind_order))


@dataclass(frozen=True)
class SessionTally:
    """Judgment counts feeding the confusion and domination measures."""

    total: int        # N: items judged, discards included
    effective: int    # Ne: total minus discards
    target: int       # T
    prediction: int   # P
    equivalent: int   # E

    def __post_init__(self):
        counts = (self.total, self.effective, self.target, self.prediction, self.equivalent)
        if any(c < 0 for c in counts):
            raise StudyError(f"negative counts in tally {self}")
        if self.target + self.prediction + self.equivalent != self.effective:
            raise StudyError(f"T+P+E != effective in tally {self}")
        if self.effective > self.total:
            raise StudyError(f"effective exceeds total in tally {self}")

    @property
    def discards(self) -> int:
        return self.total - self.effective


def tally(judgments: Sequence[Judgment]) -> SessionTally:
    """Count resolved choices; rejects duplicate item ids."""
    seen = set()
    t = p = e = d = 0
    for j in judgments:
        if j.item_id in seen:
            raise StudyError(f"duplicate judgment for item {j.item_id!r}")
        seen.add(j.item_id)
        if j.resolved == "target":
            t += 1
        elif j.resolved == "prediction":
            p += 1
        elif j.resolved == "equivalent":
            e += 1
        elif j.resolved == "discard":
            d += 1
        else:
            raise StudyError(f"bad resolved choice {j.resolved!r}")
    return SessionTally(total=t + p + e + d, effective=t + p + e,
                        target=t, prediction=p, equivalent=e)


def confusion(t: SessionTally) -> float | None:
    """C = 1 - |(2P + E) - Ne| / Ne; None when no effective items exist."""
    if t.effective == 0:
        return None
    return 1.0 - abs((2 * t.prediction + t.equivalent) - t.effective) / t.effective


def domination(t: SessionTally) -> float | None:
    """D = P / (T + P); None when the tester never picked a side."""
    decided = t.target + t.prediction
    if decided == 0:
        return None
    return t.prediction / decided


# ---------------------------------------------------------------------------
# per-bin aggregation across testers
# ---------------------------------------------------------------------------

def bin_index(score: float) -> int:
    """Left-closed bins over BIN_EDGES; the last bin includes 1.0."""
    if not 0.0 <= score <= 1.0:
        raise StudyError(f"score {score} outside [0, 1]")
    return min(int(score * N_BINS), N_BINS - 1)


def bin_label(idx: int) -> str:
    return f"{BIN_EDGES[idx]:.2f}-{BIN_EDGES[idx + 1]:.2f}"


@dataclass
class BinStats:
    """Across-tester mean and population std of one measure in one bin."""

    mean: float | None
    std: float | None
    n_testers: int

    @classmethod
    def from_values(cls, values: list[float]) -> "BinStats":
        if not values:
            return cls(mean=None, std=None, n_testers=0)
        arr = np.asarray(values, dtype=np.float64)
        return cls(mean=float(arr.mean()), std=float(arr.std()), n_testers=len(values))


@dataclass
class BinnedReport:
    """Tables-shaped summary: per bin, C and D aggregated across testers."""

    confusion: list[BinStats]
    domination: list[BinStats]
    per_tester_tallies: dict[str, list[SessionTally]] = field(default_factory=dict)

    def occupied_bins(self) -> list[int]:
        return [i for i, s in enumerate(self.confusion) if s.n_testers > 0]


def binned_report(sessions: Mapping[str, Sequence[Judgment]],
                  targets: Mapping[str, float]) -> BinnedReport:
    """Per-tester measures in each target-score bin, then mean +- std across
    testers.  (Tester, bin) cells without effective items are excluded from
    that bin's aggregation, mirroring dash rows in published tables.
    """
    if not sessions:
        raise StudyError("binned_report needs at least one tester")
    c_values: list[list[float]] = [[] for _ in range(N_BINS)]
    d_values: list[list[float]] = [[] for _ in range(N_BINS)]
    per_tester: dict[str, list[SessionTally]] = {}
    for tester_id, judgments in sessions.items():
        per_bin: list[list[Judgment]] = [[] for _ in range(N_BINS)]
        for j in judgments:
            if j.item_id not in targets:
                raise StudyError(f"judgment for unknown item {j.item_id!r}")
            per_bin[bin_index(targets[j.item_id])].append(j)
        tester_tallies = []
        for b in range(N_BINS):
            t = tally(per_bin[b])
            tester_tallies.append(t)
            c = confusion(t)
            if c is not None:
                c_values[b].append(c)
            d = domination(t)
            if d is not None:
                d_values[b].append(d)
        per_tester[tester_id] = tester_tallies
    return BinnedReport(
        confusion=[BinStats.from_values(v) for v in c_values],
        domination=[BinStats.from_values(v) for v in d_values],
        per_tester_tallies=per_tester,
    )


# ---------------------------------------------------------------------------
# random baseline
# ---------------------------------------------------------------------------

def random_baseline(train_labels: Sequence[float], seed: int, n: int) -> list[float]:
    """n predictions drawn uniformly (with replacement) from the training
    label multiset; mimics a system that only knows the label distribution."""
    if not train_labels:
        raise StudyError("random baseline needs a non-empty label multiset")
    rng = np.random.default_rng(seed)
    labels = list(train_labels)
    return [labels[int(i)] for i in rng.integers(0, len(labels), size=n)]


# ---------------------------------------------------------------------------
# simulated testers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimTesterConfig:
    """A noisy-perception stand-in for a human judge.

    The tester perceives the image's true quality with Gaussian noise, then
    prefers whichever displayed score is closer: both too far -> discard,
    nearly equidistant -> equivalent.
    """

    perception_noise: float = 0.05
    equivalence_threshold: float = 0.05
    discard_threshold: float = 0.35
    seed: int = 0

    def __post_init__(self):
        if self.perception_noise < 0:
            raise StudyError("perception_noise must be >= 0")
        if not 0.0 <= self.equivalence_threshold < self.discard_threshold <= 1.0:
            raise StudyError(
                "need 0 <= equivalence_threshold < discard_threshold <= 1, got "
                f"{self.equivalence_threshold} / {self.discard_threshold}")


def simulate_tester(item: StudyItem, true_quality: float, cfg: SimTesterConfig,
                    rng: np.random.Generator) -> Judgment:
    """One simulated decision; deterministic in the rng stream."""
    perceived = float(np.clip(true_quality + rng.normal(0.0, cfg.perception_noise), 0.0, 1.0))
    d_left = abs(item.left_score - perceived)
    d_right = abs(item.right_score - perceived)
    if min(d_left, d_right) > cfg.discard_threshold:
        raw: RawChoice = "discard"
    elif abs(d_left - d_right) <= cfg.equivalence_threshold:
        raw = "equivalent"
    else:
        raw = "left" if d_left < d_right else "right"
    return Judgment.from_raw(item, raw)


def simulate_session(items: Sequence[StudyItem], truths: Mapping[str, float],
                     cfg: SimTesterConfig) -> list[Judgment]:
    """A full pass over the items by one simulated tester."""
    rng = np.random.default_rng(cfg.seed)
    return [simulate_tester(item, truths[item.item_id], cfg, rng) for item in items]


def make_study_items(item_ids: Sequence[str], image_refs: Sequence[str],
                     targets: Sequence[float], predictions: Sequence[float],
                     seed: int) -> list[StudyItem]:
    """Pair targets with predictions and draw each item's blind ordering."""
    rng = np.random.default_rng(seed)
    items = []
    for i, item_id in enumerate(item_ids):
        side: BlindOrder = "left" if rng.integers(2) == 0 else "right"
        items.append(StudyItem(item_id=item_id, image_ref=image_refs[i],
                               target=float(targets[i]), prediction=float(predictions[i]),
                               blind_order=side))
    return items
