"""Dataset ingestion, normalization, stratified splitting, and augmentation.

On-disk formats:
  - manifest: UTF-8 CSV with header ``path,score``; image paths are relative
    to the manifest's directory; scores are written with 6 decimals.
  - images: binary PGM (P5), 16-bit, maxval 65535.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, StratificationError

DEFAULT_PIXEL_SIZE_NM = 20.0
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)
PGM_MAXVAL = 65535


@dataclass
class Image:
    """Single-channel square raster with intensities in [0, 1]."""

    intensities: np.ndarray
    pixel_size_nm: float = DEFAULT_PIXEL_SIZE_NM

    def __post_init__(self):
        self.intensities = np.asarray(self.intensities, dtype=np.float64)
        if self.intensities.ndim != 2:
            raise DataError(f"image must be 2-d, got shape {self.intensities.shape}")

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]


@dataclass
class LabeledImage:
    image: Image
    score: float
    source_id: str

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise DataError(f"score {self.score} outside [0, 1] for {self.source_id!r}")


@dataclass(frozen=True)
class NormStats:
    """Pixelwise mean/std of the training set, applied to every split."""

    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DataError(f"normalization std must be > 0, got {self.std}")


@dataclass
class DatasetSplit:
    train: list[LabeledImage]
    validation: list[LabeledImage]
    test: list[LabeledImage]
    split_seed: int
    fractions: tuple[float, float, float] = SPLIT_FRACTIONS


# ---------------------------------------------------------------------------
# PGM image files
# ---------------------------------------------------------------------------

def write_pgm(path, intensities: np.ndarray) -> None:
    """Store [0,1] intensities as 16-bit big-endian P5."""
    arr = np.asarray(intensities, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"PGM image must be 2-d, got {arr.shape}")
    quantized = np.clip(np.round(arr * PGM_MAXVAL), 0, PGM_MAXVAL).astype(">u2")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii"))
        fh.write(quantized.tobytes())


def read_pgm(path) -> np.ndarray:
    """Load a 16-bit P5 file back to [0,1] float intensities."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM (P5) file")
    # header = magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise DataError(f"{path}: bad PGM header") from exc
    if maxval != PGM_MAXVAL:
        raise DataError(f"{path}: expected 16-bit PGM (maxval {PGM_MAXVAL}), got {maxval}")
    raw = data[pos:pos + w * h * 2]
    if len(raw) != w * h * 2:
        raise DataError(f"{path}: pixel data truncated")
    pixels = np.frombuffer(raw, dtype=">u2").reshape(h, w)
    return pixels.astype(np.float64) / PGM_MAXVAL


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def format_score(score: float) -> str:
    return f"{score:.6f}"


def save_manifest(items: list[LabeledImage], manifest_path, write_images: bool = True) -> None:
    """Write ``path,score`` rows; image files go next to the manifest under
    ``images/`` named by source_id."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    image_dir = manifest_path.parent / "images"
    if write_images:
        image_dir.mkdir(exist_ok=True)
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("path,score\n")
        for item in items:
            rel = f"images/{item.source_id}.pgm"
            if write_images:
                write_pgm(manifest_path.parent / rel, item.image.intensities)
            fh.write(f"{rel},{format_score(item.score)}\n")


def save_manifest_rows(rows: list[tuple[str, float]], manifest_path) -> None:
    """Write ``path,score`` rows pointing at already-existing image files."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("path,score\n")
        for rel, score in rows:
            fh.write(f"{rel},{format_score(score)}\n")


def load_manifest_rows(manifest_path) -> list[tuple[Path, float]]:
    """Parse a manifest into (absolute image path, score) pairs, validating
    each row but not decoding pixels."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    rows: list[tuple[Path, float]] = []
    with open(manifest_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{manifest_path}: empty file, expected 'path,score' header")
        if header != ["path", "score"]:
            raise DataError(f"{manifest_path}: bad header {header!r}, expected ['path', 'score']")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{manifest_path}: row {lineno}: expected 2 fields, got {len(row)}")
            rel, score_text = row
            try:
                score = float(score_text)
            except ValueError:
                raise DataError(f"{manifest_path}: row {lineno}: score {score_text!r} is not a number")
            if not 0.0 <= score <= 1.0:
                raise DataError(f"{manifest_path}: row {lineno}: score {score} outside [0, 1]")
            image_path = manifest_path.parent / rel
            if not image_path.exists():
                raise DataError(f"{manifest_path}: row {lineno}: image file missing: {image_path}")
            rows.append((image_path, score))
    return rows


def load_dataset(manifest_path) -> list[LabeledImage]:
    """Read a manifest and decode every referenced image, in manifest order."""
    items: list[LabeledImage] = []
    for image_path, score in load_manifest_rows(manifest_path):
        intensities = read_pgm(image_path)
        items.append(LabeledImage(Image(intensities), score, source_id=image_path.stem))
    return items


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def compute_norm_stats(train: list[LabeledImage]) -> NormStats:
    """Pixelwise mean and population std over every training pixel."""
    if not train:
        raise DataError("cannot compute normalization stats from an empty training set")
    pixels = np.concatenate([item.image.intensities.ravel() for item in train])
    mean = float(pixels.mean())
    std = float(pixels.std())
    if std == 0.0:
        raise DataError("training pixels have zero variance; normalization is undefined")
    return NormStats(mean=mean, std=std)


def normalize(image: Image, stats: NormStats) -> np.ndarray:
    return (image.intensities - stats.mean) / stats.std


def denormalize(array: np.ndarray, stats: NormStats) -> np.ndarray:
    return array * stats.std + stats.mean


def to_arrays(items: list[LabeledImage], stats: NormStats) -> tuple[np.ndarray, np.ndarray]:
    """Stack normalized images into (n, 1, h, w) with their scores (n,)."""
    if not items:
        raise DataError("empty item list")
    x = np.stack([normalize(it.image, stats) for it in items])[:, None, :, :]
    y = np.array([it.score for it in items], dtype=np.float64)
    return x, y


# ---------------------------------------------------------------------------
# stratified split
# ---------------------------------------------------------------------------

def _decile(score: float) -> int:
    return min(int(score * 10.0), 9)


def _allocate(counts: dict[int, int], total_target: int, fraction: float,
              capacity: dict[int, int], label: str) -> dict[int, int]:
    """Per-decile quotas: floor of the proportional share, then
    largest-remainder adjustment to hit the global target exactly."""
    quota = {}
    remainder = {}
    for d, n in counts.items():
        share = n * fraction
        quota[d] = min(int(share), capacity[d])
        remainder[d] = share - int(share)
    diff = total_target - sum(quota.values())
    if diff > 0:
        order = sorted(counts, key=lambda d: (-remainder[d], d))
        idx = 0
        while diff > 0:
            d = order[idx % len(order)]
            if quota[d] + 1 <= capacity[d]:
                quota[d] += 1
                diff -= 1
            idx += 1
            if idx > 10 * len(order) + total_target:
                raise StratificationError(f"cannot place {label} quota; deciles too thin")
    elif diff < 0:
        order = sorted(counts, key=lambda d: (remainder[d], d))
        idx = 0
        while diff < 0:
            d = order[idx % len(order)]
            if quota[d] > 0:
                quota[d] -= 1
                diff += 1
            idx += 1
            if idx > 10 * len(order) + total_target:
                raise StratificationError(f"cannot reduce {label} quota; deciles too thin")
    return quota


def stratified_split(data: list[LabeledImage], seed: int,
                     fractions: tuple[float, float, float] = SPLIT_FRACTIONS) -> DatasetSplit:
    """Seed-shuffled split preserving the score-decile distribution.

    Every occupied decile contributes at least one item to each of the three
    splits, so deciles with fewer than 3 items are rejected.
    """
    n = len(data)
    if n < 10:
        raise DataError(f"need at least 10 items to split, got {n}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {fractions}")

    by_decile: dict[int, list[int]] = {}
    for idx, item in enumerate(data):
        by_decile.setdefault(_decile(item.score), []).append(idx)
    for d, members in sorted(by_decile.items()):
        if len(members) < 3:
            raise StratificationError(
                f"decile {d} ({d / 10:.1f}-{(d + 1) / 10:.1f}) has only {len(members)} "
                f"item(s); fewer than 3 cannot fill train/validation/test")

    rng = np.random.default_rng(seed)
    for members in by_decile.values():
        rng.shuffle(members)

    counts = {d: len(m) for d, m in by_decile.items()}
    n_val = round(n * fractions[1])
    n_test = round(n * fractions[2])
    val_capacity = {d: counts[d] - 2 for d in counts}  # leave room: 1 test + 1 train
    val_quota = _allocate(counts, n_val, fractions[1], val_capacity, "validation")
    test_capacity = {d: counts[d] - val_quota[d] - 1 for d in counts}
    test_quota = _allocate(counts, n_test, fractions[2], test_capacity, "test")

    train: list[int] = []
    val: list[int] = []
    test: list[int] = []
    for d in sorted(by_decile):
        members = by_decile[d]
        v, t = val_quota[d], test_quota[d]
        val.extend(members[:v])
        test.extend(members[v:v + t])
        train.extend(members[v + t:])
    return DatasetSplit(
        train=[data[i] for i in sorted(train)],
        validation=[data[i] for i in sorted(val)],
        test=[data[i] for i in sorted(test)],
        split_seed=seed,
        fractions=fractions,
    )


# ---------------------------------------------------------------------------
# augmentation: the dihedral group of the square
# ---------------------------------------------------------------------------

def _rot90(a):
    return np.rot90(a, 1)


def _rot180(a):
    return np.rot90(a, 2)


def _rot270(a):
    return np.rot90(a, 3)


def _flip_h(a):
    return a[:, ::-1]


def _flip_v(a):
    return a[::-1, :]


def _transpose(a):
    return a.T


def _anti_transpose(a):
    return np.rot90(a, 2).T


# name -> (transform, inverse); the 7 non-identity symmetries of the square
DIHEDRAL_TRANSFORMS: dict[str, tuple] = {
    "rot90": (_rot90, _rot270),
    "rot180": (_rot180, _rot180),
    "rot270": (_rot270, _rot90),
    "flip_h": (_flip_h, _flip_h),
    "flip_v": (_flip_v, _flip_v),
    "transpose": (_transpose, _transpose),
    "anti_transpose": (_anti_transpose, _anti_transpose),
}

_TRANSFORM_NAMES = tuple(DIHEDRAL_TRANSFORMS)


def augment(train: list[LabeledImage], seed: int, full_dihedral: bool = False) -> list[LabeledImage]:
    """Add flipped/rotated copies of each training image.

    Default: one extra copy per image using a seed-deterministic uniform draw
    from the 7 non-identity transforms (doubles the set).  ``full_dihedral``
    instead adds all 7 (an 8-fold expansion).
    """
    for item in train:
        if item.image.width != item.image.height:
            raise DataError(f"augmentation needs square images; {item.source_id!r} "
                            f"is {item.image.width}x{item.image.height}")
    rng = np.random.default_rng(seed)
    copies: list[LabeledImage] = []
    for item in train:
        if full_dihedral:
            chosen = _TRANSFORM_NAMES
        else:
            chosen = (_TRANSFORM_NAMES[rng.integers(len(_TRANSFORM_NAMES))],)
        for name in chosen:
            fwd, _ = DIHEDRAL_TRANSFORMS[name]
            copies.append(LabeledImage(
                image=Image(np.ascontiguousarray(fwd(item.image.intensities)),
                            pixel_size_nm=item.image.pixel_size_nm),
                score=item.score,
                source_id=f"{item.source_id}#aug-{name}",
            ))
    return list(train) + copies
