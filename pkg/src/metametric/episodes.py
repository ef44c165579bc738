"""Data sources, few-shot episodes, and a synthetic glyph generator."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SourceDataset:
    """A named set of classes; ``classes[c]`` is an (n_c, image_size**2) array in [0, 1]."""

    name: str
    image_size: int
    classes: tuple

    def __post_init__(self):
        classes = tuple(np.asarray(c, dtype=np.float64) for c in self.classes)
        object.__setattr__(self, "classes", classes)
        pixels = self.image_size * self.image_size
        for i, c in enumerate(classes):
            if c.ndim != 2 or c.shape[0] == 0:
                raise ValueError(f"class {i} of {self.name!r} is empty or not 2-d")
            if c.shape[1] != pixels:
                raise ValueError(f"class {i} has {c.shape[1]} pixels, expected {pixels}")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def input_dim(self) -> int:
        return self.image_size * self.image_size

    def equals(self, other: "SourceDataset") -> bool:
        return (self.name == other.name and self.image_size == other.image_size
                and self.n_classes == other.n_classes
                and all(np.array_equal(a, b) for a, b in zip(self.classes, other.classes)))


@dataclass(frozen=True)
class MetaSetSpec:
    n_classes: int
    k_shot: int
    q_query: int = 15
    n_tasks: int = 600

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("an episode needs at least 2 classes")
        if self.k_shot < 1 or self.q_query < 1:
            raise ValueError("k_shot and q_query must be >= 1")


@dataclass
class LabeledSamples:
    x: np.ndarray
    y: np.ndarray
    n_classes: int

    def __len__(self):
        return len(self.y)


@dataclass
class Episode:
    n_classes: int
    k_shot: int
    q_query: int
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    # source class index for each local label
    classes: np.ndarray
    # (local label, sample index within the source class) per row
    support_index: np.ndarray = field(repr=False, default=None)
    query_index: np.ndarray = field(repr=False, default=None)

    @property
    def support(self) -> LabeledSamples:
        return LabeledSamples(self.support_x, self.support_y, self.n_classes)

    @property
    def query(self) -> LabeledSamples:
        return LabeledSamples(self.query_x, self.query_y, self.n_classes)


def sample_episode(source: SourceDataset, spec: MetaSetSpec, rng: np.random.Generator) -> Episode:
    n, k, q = spec.n_classes, spec.k_shot, spec.q_query
    if source.n_classes < n:
        raise ValueError(
            f"source {source.name!r} has {source.n_classes} classes; {n}-way episodes need {n - source.n_classes} more")
    # choice without replacement returns the drawn classes in random order,
    # which doubles as the local-label permutation
    classes = rng.choice(source.n_classes, size=n, replace=False)
    sx, sy, qx, qy, sidx, qidx = [], [], [], [], [], []
    for label, c in enumerate(classes):
        pool = source.classes[c]
        if pool.shape[0] < k + q:
            raise ValueError(
                f"class {c} of {source.name!r} has {pool.shape[0]} samples; needs {k + q} ({k} support + {q} query)")
        idx = rng.choice(pool.shape[0], size=k + q, replace=False)
        sx.append(pool[idx[:k]])
        qx.append(pool[idx[k:]])
        sy.append(np.full(k, label))
        qy.append(np.full(q, label))
        sidx.extend((label, i) for i in idx[:k])
        qidx.extend((label, i) for i in idx[k:])
    return Episode(
        n_classes=n, k_shot=k, q_query=q,
        support_x=np.concatenate(sx), support_y=np.concatenate(sy),
        query_x=np.concatenate(qx), query_y=np.concatenate(qy),
        classes=np.asarray(classes),
        support_index=np.asarray(sidx), query_index=np.asarray(qidx),
    )


def split_support(episode: Episode, rng: np.random.Generator) -> tuple[LabeledSamples, LabeledSamples]:
    """Split the support set per class into ceil(k/2) and floor(k/2) items.

    The first part serves as the inner-loop support, the second as the
    inner-loop query.
    """
    if episode.k_shot < 2:
        raise ValueError(
            "single-source adaptation needs k >= 2 shots so both halves cover every class; "
            "use the multi-source path with an auxiliary source for 1-shot tasks")
    first, second = [], []
    for label in range(episode.n_classes):
        rows = np.flatnonzero(episode.support_y == label)
        rows = rows[rng.permutation(rows.size)]
        cut = math.ceil(rows.size / 2)
        first.append(rows[:cut])
        second.append(rows[cut:])
    a, b = np.concatenate(first), np.concatenate(second)
    n = episode.n_classes
    return (LabeledSamples(episode.support_x[a], episode.support_y[a], n),
            LabeledSamples(episode.support_x[b], episode.support_y[b], n))


# -- synthetic glyph families ------------------------------------------------

def _raster_line(p0, p1, size):
    steps = int(2 * max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]))) + 1
    t = np.linspace(0.0, 1.0, steps + 1)
    pts = np.outer(1 - t, p0) + np.outer(t, p1)
    return _to_pixels(pts, size)


def _raster_arc(center, radius, start, span, size):
    t = np.linspace(start, start + span, int(4 * radius * abs(span)) + 4)
    pts = np.stack([center[0] + radius * np.sin(t), center[1] + radius * np.cos(t)], axis=1)
    return _to_pixels(pts, size)


def _to_pixels(pts, size):
    px = np.rint(pts).astype(int)
    keep = (px >= 0).all(axis=1) & (px < size).all(axis=1)
    return {tuple(p) for p in px[keep]}


def _stroke_alphabet(rng: np.random.Generator, size: int, n_strokes: int) -> list[set]:
    strokes: list[set] = []
    while len(strokes) < n_strokes:
        if rng.random() < 0.6:
            p0 = rng.uniform(0, size - 1, 2)
            p1 = rng.uniform(0, size - 1, 2)
            if np.hypot(*(p1 - p0)) < size / 3:
                continue
            pix = _raster_line(p0, p1, size)
        else:
            center = rng.uniform(1, size - 2, 2)
            radius = rng.uniform(size / 5, size / 2)
            pix = _raster_arc(center, radius, rng.uniform(0, 2 * np.pi), rng.uniform(np.pi / 2, np.pi), size)
        if len(pix) >= 3 and pix not in strokes:
            strokes.append(pix)
    return strokes


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    out[max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)] = \
        img[max(-dy, 0):h + min(-dy, 0), max(-dx, 0):w + min(-dx, 0)]
    return out


def generate_synthetic_source(family_seed: int, n_classes: int, samples_per_class: int,
                              image_size: int = 8, noise_rate: float = 0.05,
                              unrelated: bool = False, class_seed: int = 0,
                              max_shift: int = 1, n_strokes: int = 10,
                              name: str | None = None) -> SourceDataset:
    """Synthetic stand-in for one handwriting alphabet.

    ``family_seed`` fixes a stroke alphabet; ``class_seed`` picks which
    stroke compositions become classes, so sources sharing a family are
    related while their classes differ. With ``unrelated`` the class
    prototypes are independent random bitmaps with no shared strokes.
    Samples are the prototype translated by up to ``max_shift`` pixels with
    each pixel flipped independently with probability ``noise_rate``.
    """
    if not 0.0 <= noise_rate < 0.5:
        raise ValueError("noise_rate must lie in [0, 0.5)")
    if image_size < 4:
        raise ValueError("image_size must be >= 4")
    size = image_size
    family_rng = np.random.default_rng([family_seed, 0])
    class_rng = np.random.default_rng([family_seed, class_seed, 1])
    sample_rng = np.random.default_rng([family_seed, class_seed, 2])
    protos: list[np.ndarray] = []
    seen: set[bytes] = set()
    if unrelated:
        make = lambda: (class_rng.random((size, size)) < 0.3).astype(np.float64)  # noqa: E731
    else:
        alphabet = _stroke_alphabet(family_rng, size, n_strokes)

        def make():
            chosen = class_rng.choice(len(alphabet), size=int(class_rng.integers(2, 5)), replace=False)
            img = np.zeros((size, size))
            for s in chosen:
                for (r, c) in alphabet[s]:
                    img[r, c] = 1.0
            return img
    attempts = 0
    while len(protos) < n_classes:
        img = make()
        key = img.tobytes()
        attempts += 1
        if key in seen and attempts < 100 * n_classes:
            continue
        seen.add(key)
        protos.append(img)
    classes = []
    for proto in protos:
        rows = []
        for _ in range(samples_per_class):
            dy, dx = sample_rng.integers(-max_shift, max_shift + 1, size=2) if max_shift else (0, 0)
            img = _shift(proto, int(dy), int(dx))
            flips = sample_rng.random(img.shape) < noise_rate
            img = np.where(flips, 1.0 - img, img)
            rows.append(img.ravel())
        classes.append(np.array(rows))
    if name is None:
        name = f"{'noise' if unrelated else 'glyph'}-f{family_seed}-c{class_seed}"
    return SourceDataset(name=name, image_size=size, classes=tuple(classes))


def merge_sources(sources, name: str | None = None) -> SourceDataset:
    """Class-union of several sources with a common image size."""
    sources = list(sources)
    if not sources:
        raise ValueError("nothing to merge")
    sizes = {s.image_size for s in sources}
    if len(sizes) != 1:
        raise ValueError(f"cannot merge sources of different image sizes {sorted(sizes)}")
    classes = tuple(c for s in sources for c in s.classes)
    return SourceDataset(name=name or "+".join(s.name for s in sources),
                         image_size=sources[0].image_size, classes=classes)


# -- on-disk format ----------------------------------------------------------

class DatasetFormatError(ValueError):
    pass


def save_source(source: SourceDataset, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = f"name={source.name}\nimage_size={source.image_size}\nclasses={source.n_classes}\n"
    _atomic_write(d / "manifest", manifest)
    for i, cls in enumerate(source.classes):
        lines = "".join(",".join(format(v, ".17g") for v in row) + "\n" for row in cls)
        _atomic_write(d / f"class_{i:03d}.csv", lines)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def load_source(directory) -> SourceDataset:
    d = Path(directory)
    mpath = d / "manifest"
    if not mpath.is_file():
        raise DatasetFormatError(f"{mpath}: missing manifest")
    fields = {}
    for lineno, line in enumerate(mpath.read_text().splitlines(), 1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep or key not in ("name", "image_size", "classes"):
            raise DatasetFormatError(f"{mpath}:{lineno}: unrecognized manifest line {line!r}")
        fields[key] = value
    missing = {"name", "image_size", "classes"} - set(fields)
    if missing:
        raise DatasetFormatError(f"{mpath}: missing keys {sorted(missing)}")
    try:
        size, n_classes = int(fields["image_size"]), int(fields["classes"])
    except ValueError as exc:
        raise DatasetFormatError(f"{mpath}: image_size and classes must be integers") from exc
    classes = []
    for i in range(n_classes):
        cpath = d / f"class_{i:03d}.csv"
        if not cpath.is_file():
            raise DatasetFormatError(f"{cpath}: manifest declares {n_classes} classes but this file is missing")
        rows = []
        for lineno, line in enumerate(cpath.read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                row = [float(v) for v in line.split(",")]
            except ValueError as exc:
                raise DatasetFormatError(f"{cpath}:{lineno}: {exc}") from exc
            if len(row) != size * size:
                raise DatasetFormatError(f"{cpath}:{lineno}: {len(row)} values, expected {size * size}")
            if not all(0.0 <= v <= 1.0 for v in row):
                raise DatasetFormatError(f"{cpath}:{lineno}: pixel value outside [0, 1]")
            rows.append(row)
        if not rows:
            raise DatasetFormatError(f"{cpath}: class file is empty")
        classes.append(np.array(rows, dtype=np.float64))
    return SourceDataset(name=fields["name"], image_size=size, classes=tuple(classes))
