"""Synthetic multi-attribute shape dataset and conditional triplet sampling.

Each sample is a colored glyph (triangle, circle, square or cross)
rendered at a random position on an RGB canvas and flattened to a
feature vector. The attributes deliberately induce contradictory
similarity notions: the same pair of images can be close under the
color condition and far under the shape condition.

Rendering adds a random ambient brightness to the whole canvas before
adding pixel noise. The ambient term dominates raw pixel distances, so
an untrained embedding's triplet decisions are driven by the brightness
nuisance and land at chance, while every attribute stays cleanly
recoverable: the ambient component occupies a single linear direction
that training learns to discard.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, InfeasibilityError

SPLIT_TAGS = ("train", "val", "test")

SHAPE_GLYPHS = ("triangle", "circle", "square", "cross")
COLOR_CHANNELS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}
# Glyph radius in pixels: (base, half-range of the uniform jitter).
SIZE_RADII = {"small": (2.0, 0.3), "large": (3.4, 0.45)}

# Glyph centers land within +/- this many pixels of the canvas center.
DEFAULT_CENTER_JITTER = 1.25

# Ambient canvas brightness is drawn uniformly from [0, this].
DEFAULT_BRIGHTNESS_MAX = 0.30

# Numeric close/far sampling accepts a triplet only when the far gap is
# at least this multiple of the close gap.
DEFAULT_NUMERIC_GAP = 2.0

_SUBSAMPLES = 3  # antialiasing grid per pixel axis


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    kind: str  # "categorical" | "numeric"
    values: tuple[str, ...] = ()
    value_range: tuple[float, float] = (0.0, 0.0)
    nuisance: bool = False

    def __post_init__(self):
        if self.kind == "categorical":
            if len(self.values) < 2:
                raise ConfigError(f"attribute {self.name}: categorical cardinality must be >= 2")
        elif self.kind == "numeric":
            lo, hi = self.value_range
            if not lo < hi:
                raise ConfigError(f"attribute {self.name}: numeric range must be nondegenerate")
        else:
            raise ConfigError(f"attribute {self.name}: unknown kind {self.kind!r}")

    @property
    def cardinality(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    labels: dict


@dataclass(frozen=True)
class Triplet:
    anchor: int
    close: int
    far: int
    condition: int


@dataclass
class SplitDataset:
    """Columnar dataset: features matrix, per-attribute label arrays, split tags."""

    attributes: list[AttributeSpec]
    features: np.ndarray  # (n, feature_len) float64
    labels: dict[str, np.ndarray]
    split: np.ndarray | None = None  # int8 index into SPLIT_TAGS, None before split()
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def feature_len(self) -> int:
        return self.features.shape[1]

    def attribute(self, key: str | int) -> AttributeSpec:
        if isinstance(key, int):
            return self.attributes[key]
        for spec in self.attributes:
            if spec.name == key:
                return spec
        raise KeyError(f"no attribute named {key!r}")

    def attribute_index(self, name: str) -> int:
        for i, spec in enumerate(self.attributes):
            if spec.name == name:
                return i
        raise KeyError(f"no attribute named {name!r}")

    def split_indices(self, tag: str) -> np.ndarray:
        if self.split is None:
            raise ContractError("dataset has not been split")
        return np.flatnonzero(self.split == SPLIT_TAGS.index(tag))

    def sample(self, i: int) -> Sample:
        return Sample(self.features[i], {a.name: self.labels[a.name][i] for a in self.attributes})


def default_attributes(
    shapes: Sequence[str] = SHAPE_GLYPHS,
    colors: Sequence[str] = tuple(COLOR_CHANNELS),
    sizes: Sequence[str] = tuple(SIZE_RADII),
) -> list[AttributeSpec]:
    """The shipped attribute set: three categorical conditions, one numeric
    condition (actual glyph radius), a composite identity attribute held out
    for probing, and the nuisance position of the glyph."""
    for s in shapes:
        if s not in SHAPE_GLYPHS:
            raise ConfigError(f"unsupported shape {s!r}")
    for c in colors:
        if c not in COLOR_CHANNELS:
            raise ConfigError(f"unsupported color {c!r}")
    for z in sizes:
        if z not in SIZE_RADII:
            raise ConfigError(f"unsupported size {z!r}")
    radii = [SIZE_RADII[z] for z in sizes]
    r_lo = min(b - j for b, j in radii)
    r_hi = max(b + j for b, j in radii)
    combo = tuple(f"{s}_{c}" for s in shapes for c in colors)
    return [
        AttributeSpec("shape", "categorical", values=tuple(shapes)),
        AttributeSpec("color", "categorical", values=tuple(colors)),
        AttributeSpec("size", "categorical", values=tuple(sizes)),
        AttributeSpec("size_value", "numeric", value_range=(r_lo, r_hi)),
        AttributeSpec("shape_color", "categorical", values=combo),
        AttributeSpec("pos_x", "numeric", value_range=(0.0, 1.0), nuisance=True),
        AttributeSpec("pos_y", "numeric", value_range=(0.0, 1.0), nuisance=True),
        AttributeSpec("brightness", "numeric", value_range=(0.0, 1.0), nuisance=True),
    ]


def _coverage(shape: str, dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    """Subsample points inside the glyph (dx, dy relative to the center).

    Every glyph is scaled so its area equals that of a circle of radius
    r, which keeps the numeric size condition consistent across shapes.
    """
    if shape == "circle":
        return dx * dx + dy * dy <= r * r
    if shape == "square":
        a = r * np.sqrt(np.pi) / 2.0
        return (np.abs(dx) <= a) & (np.abs(dy) <= a)
    if shape == "triangle":
        # Equilateral, apex up; circumradius chosen for a pi r^2 area.
        rr = r * np.sqrt(np.pi / (0.75 * np.sqrt(3.0)))
        vx = rr * np.cos(np.deg2rad([90.0, 210.0, 330.0]))
        vy = -rr * np.sin(np.deg2rad([90.0, 210.0, 330.0]))  # canvas y grows downward
        inside = np.ones_like(dx, dtype=bool)
        for k in range(3):
            x0, y0 = vx[k], vy[k]
            x1, y1 = vx[(k + 1) % 3], vy[(k + 1) % 3]
            cross = (x1 - x0) * (dy - y0) - (y1 - y0) * (dx - x0)
            inside &= cross <= 0.0
        return inside
    if shape == "cross":
        # Two bars of half-length e and half-width 0.4e: area 2.56 e^2.
        e = r * np.sqrt(np.pi / 2.56)
        w = 0.4 * e
        return ((np.abs(dx) <= w) & (np.abs(dy) <= e)) | ((np.abs(dy) <= w) & (np.abs(dx) <= e))
    raise ConfigError(f"unsupported shape {shape!r}")


# Largest glyph extent relative to its nominal radius (triangle circumradius).
_MAX_EXTENT = float(np.sqrt(np.pi / (0.75 * np.sqrt(3.0))))


def render_glyph(shape: str, color: str, radius: float, cx: float, cy: float, side: int) -> np.ndarray:
    """Antialiased (side, side, 3) rendering of one glyph, unnormalized."""
    offs = (np.arange(_SUBSAMPLES) + 0.5) / _SUBSAMPLES
    xs = (np.arange(side)[:, None] + offs[None, :]).reshape(-1)  # side*S subsample coords
    px = xs[None, :] - cx  # broadcast below: rows are y, cols are x
    py = xs[:, None] - cy
    inside = _coverage(shape, np.broadcast_to(px, (side * _SUBSAMPLES,) * 2), np.broadcast_to(py, (side * _SUBSAMPLES,) * 2), radius)
    cov = inside.reshape(side, _SUBSAMPLES, side, _SUBSAMPLES).mean(axis=(1, 3))
    return cov[:, :, None] * np.asarray(COLOR_CHANNELS[color], dtype=np.float64)


def generate_shapes(
    spec: Sequence[AttributeSpec] | None,
    n: int,
    image_side: int = 16,
    noise_std: float = 0.01,
    seed: int = 7,
    exhaustive: bool = True,
    center_jitter: float = DEFAULT_CENTER_JITTER,
    brightness_max: float = DEFAULT_BRIGHTNESS_MAX,
    radii: dict[str, tuple[float, float]] | None = None,
) -> SplitDataset:
    """Render n stratified samples; deterministic for a fixed seed.

    Stratification cycles through the full (shape, color, size) grid, so
    every combination appears n/n_combos times up to rounding. The glyph
    center jitters uniformly within ``center_jitter`` pixels of the
    canvas center, and a uniform ambient brightness in
    [0, brightness_max] is added to every pixel so that raw intensity
    statistics are dominated by the ambient nuisance rather than by any
    attribute.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if image_side < 8:
        raise ConfigError(f"image_side must be >= 8, got {image_side}")
    if center_jitter < 0 or brightness_max < 0:
        raise ConfigError("center_jitter and brightness_max must be >= 0")
    attributes = list(spec) if spec is not None else default_attributes()
    shapes = attributes_by_name(attributes, "shape").values
    colors = attributes_by_name(attributes, "color").values
    sizes = attributes_by_name(attributes, "size").values
    size_radii = radii if radii is not None else SIZE_RADII
    n_combos = len(shapes) * len(colors) * len(sizes)
    if exhaustive and n < n_combos:
        raise ConfigError(f"n={n} cannot cover all {n_combos} attribute combinations")

    rng = np.random.default_rng(seed)
    shape_lab = np.empty(n, dtype=np.int64)
    color_lab = np.empty(n, dtype=np.int64)
    size_lab = np.empty(n, dtype=np.int64)
    radius = np.empty(n, dtype=np.float64)
    pos_x = np.empty(n, dtype=np.float64)
    pos_y = np.empty(n, dtype=np.float64)
    ambient = np.empty(n, dtype=np.float64)
    features = np.empty((n, image_side * image_side * 3), dtype=np.float64)

    r_max = max(b + j for b, j in (size_radii[z] for z in sizes)) * _MAX_EXTENT
    mid = image_side / 2.0
    # Glyphs must stay fully inside the canvas even at maximal jitter.
    jitter = min(center_jitter, mid - r_max)
    if jitter < 0:
        raise ConfigError(f"glyph radius {r_max:.2f} does not fit a {image_side}px canvas")
    for i in range(n):
        cell = i % n_combos
        shape_lab[i] = cell // (len(colors) * len(sizes))
        color_lab[i] = (cell // len(sizes)) % len(colors)
        size_lab[i] = cell % len(sizes)
        base, jit = size_radii[sizes[size_lab[i]]]
        radius[i] = base + rng.uniform(-jit, jit)
        cx = mid + rng.uniform(-jitter, jitter)
        cy = mid + rng.uniform(-jitter, jitter)
        pos_x[i] = cx / image_side
        pos_y[i] = cy / image_side
        ambient[i] = rng.uniform(0.0, brightness_max)
        img = render_glyph(shapes[shape_lab[i]], colors[color_lab[i]], radius[i], cx, cy, image_side)
        img += ambient[i]
        if noise_std > 0.0:
            img = img + rng.normal(0.0, noise_std, size=img.shape)
        features[i] = img.reshape(-1)

    labels = {
        "shape": shape_lab,
        "color": color_lab,
        "size": size_lab,
        "size_value": radius,
        "shape_color": shape_lab * len(colors) + color_lab,
        "pos_x": pos_x,
        "pos_y": pos_y,
        "brightness": ambient,
    }
    meta = {
        "image_side": image_side,
        "noise_std": noise_std,
        "seed": seed,
        "center_jitter": jitter,
        "brightness_max": brightness_max,
    }
    return SplitDataset(attributes=attributes, features=features, labels=labels, meta=meta)


def attributes_by_name(attributes: Sequence[AttributeSpec], name: str) -> AttributeSpec:
    for spec in attributes:
        if spec.name == name:
            return spec
    raise ConfigError(f"attribute list is missing {name!r}")


def split(ds: SplitDataset, fractions: tuple[float, float, float] = (0.70, 0.10, 0.20), seed: int = 0) -> SplitDataset:
    """Assign train/val/test tags by seeded permutation then contiguous cut."""
    if ds.n_samples == 0:
        raise ContractError("cannot split an empty dataset")
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ConfigError(f"split fractions must be nonnegative and sum to 1, got {fractions}")
    n = ds.n_samples
    perm = np.random.default_rng(seed).permutation(n)
    c1 = int(round(n * fractions[0]))
    c2 = int(round(n * (fractions[0] + fractions[1])))
    tags = np.empty(n, dtype=np.int8)
    tags[perm[:c1]] = 0
    tags[perm[c1:c2]] = 1
    tags[perm[c2:]] = 2
    return SplitDataset(
        attributes=ds.attributes,
        features=ds.features,
        labels=ds.labels,
        split=tags,
        meta=dict(ds.meta, split_fractions=list(fractions), split_seed=seed),
    )


def sample_triplets(
    ds: SplitDataset,
    condition: str | int,
    split_tag: str,
    k: int,
    rng_seed: int,
    condition_index: int | None = None,
    min_gap: float = DEFAULT_NUMERIC_GAP,
) -> list[Triplet]:
    """Sample k oracle-consistent triplets within one split.

    Categorical conditions: anchor and close share the attribute value
    and far differs. Numeric conditions: the far gap strictly exceeds
    the close gap and is at least ``min_gap`` times larger. Indices
    within a triplet are distinct; the pool is sampled with replacement.
    The emitted condition field is ``condition_index`` when given (the
    benchmark's condition slot), else the attribute's index.
    """
    spec = ds.attribute(condition)
    if spec.nuisance:
        raise ConfigError(f"attribute {spec.name!r} is a nuisance attribute, not a condition")
    if k == 0:
        return []
    if k < 0:
        raise ContractError(f"k must be >= 0, got {k}")
    cond_idx = condition_index if condition_index is not None else ds.attribute_index(spec.name)
    indices = ds.split_indices(split_tag)
    values = ds.labels[spec.name][indices]
    rng = np.random.default_rng(rng_seed)
    out: list[Triplet] = []

    if spec.kind == "categorical":
        groups = {v: np.flatnonzero(values == v) for v in np.unique(values)}
        eligible = [v for v, g in groups.items() if len(g) >= 2]
        if len(np.unique(values)) < 2 or not eligible:
            raise InfeasibilityError(
                f"attribute {spec.name!r} needs >= 2 label classes with >= 2 members in split {split_tag!r}"
            )
        eligible = set(eligible)
        others = {v: np.flatnonzero(values != v) for v in groups}
        while len(out) < k:
            a = int(rng.integers(len(indices)))
            v = values[a]
            if v not in eligible:
                continue
            group = groups[v]
            c = a
            while c == a:
                c = int(group[rng.integers(len(group))])
            pool = others[v]
            f = int(pool[rng.integers(len(pool))])
            out.append(Triplet(int(indices[a]), int(indices[c]), int(indices[f]), cond_idx))
    else:
        if len(np.unique(values)) < 3:
            raise InfeasibilityError(
                f"numeric attribute {spec.name!r} needs >= 3 distinct values in split {split_tag!r}"
            )
        n_pool = len(indices)
        attempts = 0
        max_attempts = 1000 * k + 1000
        while len(out) < k:
            attempts += 1
            if attempts > max_attempts:
                raise InfeasibilityError(
                    f"could not sample {k} numeric triplets for {spec.name!r} in split {split_tag!r}"
                )
            a, u, v = (int(x) for x in rng.integers(n_pool, size=3))
            if a == u or a == v or u == v:
                continue
            du = abs(values[u] - values[a])
            dv = abs(values[v] - values[a])
            c, f, dc, df = (u, v, du, dv) if du <= dv else (v, u, dv, du)
            if df > dc and df >= min_gap * dc:
                out.append(Triplet(int(indices[a]), int(indices[c]), int(indices[f]), cond_idx))
    return out


def build_benchmark(
    ds: SplitDataset,
    conditions: Sequence[str],
    k_train: int,
    k_val: int,
    k_test: int,
    seed: int,
    min_gap: float = DEFAULT_NUMERIC_GAP,
) -> tuple[list[Triplet], list[Triplet], list[Triplet]]:
    """Equal-sized per-condition triplet lists for each split, no leakage."""
    for name in conditions:
        ds.attribute(name)  # existence + raises KeyError early
    counts = {"train": k_train, "val": k_val, "test": k_test}
    results = []
    for s_i, tag in enumerate(SPLIT_TAGS):
        merged: list[Triplet] = []
        for c_i, name in enumerate(conditions):
            child_seed = np.random.SeedSequence((seed, s_i, c_i))
            rng_seed = int(child_seed.generate_state(1)[0])
            merged.extend(
                sample_triplets(ds, name, tag, counts[tag], rng_seed, condition_index=c_i, min_gap=min_gap)
            )
        results.append(merged)
    return results[0], results[1], results[2]


def audit_triplets(
    ds: SplitDataset,
    triplets: Iterable[Triplet],
    conditions: Sequence[str],
    split_tag: str | None = None,
    min_gap: float = DEFAULT_NUMERIC_GAP,
) -> list[str]:
    """Re-check every triplet against its oracle relation; returns violations."""
    problems = []
    for t_i, t in enumerate(triplets):
        if len({t.anchor, t.close, t.far}) != 3:
            problems.append(f"triplet {t_i}: indices not distinct: {t}")
            continue
        if ds.split is not None:
            tags = {int(ds.split[t.anchor]), int(ds.split[t.close]), int(ds.split[t.far])}
            if len(tags) != 1:
                problems.append(f"triplet {t_i}: mixes splits: {t}")
                continue
            if split_tag is not None and tags != {SPLIT_TAGS.index(split_tag)}:
                problems.append(f"triplet {t_i}: outside split {split_tag!r}: {t}")
                continue
        if not 0 <= t.condition < len(conditions):
            problems.append(f"triplet {t_i}: condition {t.condition} out of range")
            continue
        spec = ds.attribute(conditions[t.condition])
        lab = ds.labels[spec.name]
        if spec.kind == "categorical":
            if lab[t.anchor] != lab[t.close] or lab[t.anchor] == lab[t.far]:
                problems.append(f"triplet {t_i}: categorical oracle violated: {t}")
        else:
            dc = abs(lab[t.close] - lab[t.anchor])
            df = abs(lab[t.far] - lab[t.anchor])
            if not (df > dc and df >= min_gap * dc):
                problems.append(f"triplet {t_i}: numeric oracle violated: {t}")
    return problems


def find_conflicting_pair(
    triplet_lists: Sequence[Sequence[Triplet]],
) -> tuple[Triplet, Triplet] | None:
    """Find two triplets over the same anchor and item pair whose close/far
    orderings disagree across conditions (the contradictory-notions witness)."""
    seen: dict[tuple[int, int, int], list[Triplet]] = {}
    for triplets in triplet_lists:
        for t in triplets:
            key = (t.anchor, min(t.close, t.far), max(t.close, t.far))
            for prev in seen.setdefault(key, []):
                if prev.condition != t.condition and prev.close == t.far:
                    return prev, t
            seen[key].append(t)
    return None


# ---------------------------------------------------------------------------
# File formats. The dataset file is a magic line, a JSON header line, then
# the raw little-endian float64 feature matrix; every byte is a pure
# function of the generation inputs. Triplet files are one
# "anchor,close,far,condition" record per line.
# ---------------------------------------------------------------------------

DATASET_MAGIC = b"CSNDATA1\n"


def save_dataset(ds: SplitDataset, path: str | Path) -> None:
    header = {
        "n_samples": ds.n_samples,
        "feature_len": ds.feature_len,
        "attributes": [
            {
                "name": a.name,
                "kind": a.kind,
                "values": list(a.values),
                "range": list(a.value_range),
                "nuisance": a.nuisance,
            }
            for a in ds.attributes
        ],
        "labels": {
            a.name: (ds.labels[a.name].astype(int).tolist() if a.kind == "categorical" else ds.labels[a.name].tolist())
            for a in ds.attributes
        },
        "split": ds.split.tolist() if ds.split is not None else None,
        "meta": ds.meta,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(blob + b"\n")
        fh.write(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())


def load_dataset(path: str | Path) -> SplitDataset:
    with open(path, "rb") as fh:
        magic = fh.read(len(DATASET_MAGIC))
        if magic != DATASET_MAGIC:
            raise ContractError(f"{path} is not a dataset file")
        header = json.loads(fh.readline().decode("utf-8"))
        raw = fh.read()
    n, flen = header["n_samples"], header["feature_len"]
    features = np.frombuffer(raw, dtype="<f8", count=n * flen).reshape(n, flen).astype(np.float64)
    attributes = [
        AttributeSpec(
            a["name"],
            a["kind"],
            values=tuple(a["values"]),
            value_range=tuple(a["range"]),
            nuisance=a["nuisance"],
        )
        for a in header["attributes"]
    ]
    labels = {}
    for a in attributes:
        arr = np.asarray(header["labels"][a.name])
        labels[a.name] = arr.astype(np.int64) if a.kind == "categorical" else arr.astype(np.float64)
    split_arr = None if header["split"] is None else np.asarray(header["split"], dtype=np.int8)
    return SplitDataset(attributes=attributes, features=features, labels=labels, split=split_arr, meta=header["meta"])


def save_triplets(triplets: Iterable[Triplet], path: str | Path) -> None:
    with open(path, "w") as fh:
        for t in triplets:
            fh.write(f"{t.anchor},{t.close},{t.far},{t.condition}\n")


def load_triplets(path: str | Path) -> list[Triplet]:
    out = []
    for line in Path(path).read_text().splitlines():
        a, c, f, cond = (int(x) for x in line.split(","))
        out.append(Triplet(a, c, f, cond))
    return out
