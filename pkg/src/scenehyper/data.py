"""
Synthetic indoor scenes whose object categories are only identifiable from
scene context.

Each scene type draws categories from its own prior. Categories come in
ambiguity groups that share one size distribution, so a lone object's
geometry says nothing about which member of its group it is; the other
objects in the room do.

Scene files are line-oriented text::

    HD3D v1
    <scene_id> <scene_type> <N> <M>
    x y z                        (N lines)
    cx cy cz dx dy dz category   (M lines)
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, GenerationError, ParseError
from .geometry import Box3D

HEADER = "HD3D v1"
MAX_PLACEMENT_ATTEMPTS = 1000


def quantize(values) -> np.ndarray:
    """Round to what a 9-significant-digit text round trip reproduces."""
    arr = np.asarray(values, dtype=np.float64)
    flat = [float(f"{v:.9g}") for v in arr.ravel()]
    return np.array(flat, dtype=np.float64).reshape(arr.shape)


@dataclass(frozen=True)
class SizeDistribution:
    mean: tuple
    spread: tuple  # half-width of a uniform draw per axis

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.spread) != 3:
            raise ConfigurationError("size distributions need 3 axes")
        if any(m <= 0 for m in self.mean):
            raise ConfigurationError(f"size means must be positive, got {self.mean}")
        if any(s < 0 or s >= m for s, m in zip(self.spread, self.mean)):
            raise ConfigurationError("size spread must be in [0, mean)")


@dataclass
class SceneTypeSpec:
    name: str
    category_probs: dict  # category id -> probability
    sizes: dict  # category id -> SizeDistribution
    object_count: tuple = (3, 5)
    points_per_object: int = 80
    clutter_points: int = 128
    ambiguity_groups: list = field(default_factory=list)

    def __post_init__(self):
        total = sum(self.category_probs.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigurationError(f"{self.name}: category probabilities sum to {total}, not 1")
        if any(p < 0 for p in self.category_probs.values()):
            raise ConfigurationError(f"{self.name}: negative category probability")
        missing = set(self.category_probs) - set(self.sizes)
        if missing:
            raise ConfigurationError(f"{self.name}: no size distribution for categories {sorted(missing)}")
        lo, hi = self.object_count
        if not 0 <= lo <= hi:
            raise ConfigurationError(f"{self.name}: bad object count range {self.object_count}")
        for group in self.ambiguity_groups:
            dists = {self.sizes[c] for c in group if c in self.sizes}
            if len(dists) > 1:
                raise ConfigurationError(
                    f"{self.name}: ambiguity group {group} must share one size distribution"
                )

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "category_probs": {str(k): v for k, v in self.category_probs.items()},
            "sizes": {str(k): {"mean": list(d.mean), "spread": list(d.spread)}
                      for k, d in self.sizes.items()},
            "object_count": list(self.object_count),
            "points_per_object": self.points_per_object,
            "clutter_points": self.clutter_points,
            "ambiguity_groups": [list(g) for g in self.ambiguity_groups],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SceneTypeSpec":
        try:
            return cls(
                name=str(obj["name"]),
                category_probs={int(k): float(v) for k, v in obj["category_probs"].items()},
                sizes={int(k): SizeDistribution(tuple(v["mean"]), tuple(v["spread"]))
                       for k, v in obj["sizes"].items()},
                object_count=tuple(obj.get("object_count", (3, 5))),
                points_per_object=int(obj.get("points_per_object", 80)),
                clutter_points=int(obj.get("clutter_points", 128)),
                ambiguity_groups=[tuple(g) for g in obj.get("ambiguity_groups", [])],
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"malformed scene type spec: {exc}") from exc


CATEGORY_NAMES = ("fridge", "bookshelf", "counter", "bathtub", "desk", "sink")

# shape classes shared by each ambiguity pair
TALL = SizeDistribution((0.16, 0.16, 0.55), (0.02, 0.02, 0.05))
LONG_LOW = SizeDistribution((0.36, 0.16, 0.14), (0.04, 0.02, 0.02))
MEDIUM = SizeDistribution((0.22, 0.22, 0.30), (0.03, 0.03, 0.04))

AMBIGUITY_PAIRS = ((0, 1), (2, 3), (4, 5))


def default_specs() -> list[SceneTypeSpec]:
    """Three scene types over six categories; every pair of types shares one
    geometric shape class whose category depends on the room."""
    sizes = {0: TALL, 1: TALL, 2: LONG_LOW, 3: LONG_LOW, 4: MEDIUM, 5: MEDIUM}
    groups = [tuple(p) for p in AMBIGUITY_PAIRS]
    return [
        SceneTypeSpec("kitchen-like", {0: 0.5, 2: 0.5}, sizes, ambiguity_groups=groups),
        SceneTypeSpec("office-like", {1: 0.5, 4: 0.5}, sizes, ambiguity_groups=groups),
        SceneTypeSpec("bath-like", {3: 0.5, 5: 0.5}, sizes, ambiguity_groups=groups),
    ]


def load_specs(path) -> list[SceneTypeSpec]:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=exc.lineno) from exc
    items = raw["scene_types"] if isinstance(raw, dict) else raw
    specs = [SceneTypeSpec.from_json(obj) for obj in items]
    if not specs:
        raise ConfigurationError(f"{path}: no scene types")
    return specs


def save_specs(specs: Sequence[SceneTypeSpec], path) -> None:
    Path(path).write_text(json.dumps({"scene_types": [s.to_json() for s in specs]}, indent=2) + "\n")


@dataclass
class PointScene:
    scene_id: str
    scene_type: str
    points: np.ndarray  # (N, 3)
    boxes: list  # list[Box3D]

    def __eq__(self, other):
        if not isinstance(other, PointScene):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and self.scene_type == other.scene_type
            and self.points.shape == other.points.shape
            and bool(np.array_equal(self.points, other.points))
            and self.boxes == other.boxes
        )


def _surface_points(center, size, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples over the six faces of an axis-aligned box."""
    dx, dy, dz = size
    areas = np.array([dy * dz, dy * dz, dx * dz, dx * dz, dx * dy, dx * dy])
    faces = rng.choice(6, size=count, p=areas / areas.sum())
    uv = rng.uniform(-0.5, 0.5, size=(count, 3))
    axis = faces // 2
    sign = np.where(faces % 2 == 0, -0.5, 0.5)
    uv[np.arange(count), axis] = sign
    return np.asarray(center) + uv * np.asarray(size)


def _place_footprints(sizes, rng, margin: float = 0.02, tries_per_box: int = 50):
    """Rejection-sample non-overlapping plan-view positions.

    A layout that gets stuck is restarted; every candidate position drawn
    counts against ``MAX_PLACEMENT_ATTEMPTS``. Returns None on failure.
    """
    attempts = 0
    while attempts < MAX_PLACEMENT_ATTEMPTS:
        footprints, centers = [], []
        for size in sizes:
            half = np.asarray(size[:2]) / 2
            placed = False
            for _ in range(tries_per_box):
                attempts += 1
                c = rng.uniform(half + margin, 1 - half - margin)
                lo, hi = c - half - margin, c + half + margin
                if all(np.any(lo >= f_hi) or np.any(hi <= f_lo) for f_lo, f_hi in footprints):
                    footprints.append((lo, hi))
                    centers.append(c)
                    placed = True
                    break
                if attempts >= MAX_PLACEMENT_ATTEMPTS:
                    break
            if not placed:
                break
        else:
            return centers
    return None


def generate_scene(spec: SceneTypeSpec, rng_seed, scene_id: str = "scene") -> PointScene:
    """Sample one scene. Boxes stand on the floor (z=0) without overlapping
    in plan view; points lie on box surfaces plus floor/wall clutter."""
    rng = np.random.default_rng(rng_seed)
    lo, hi = spec.object_count
    count = int(rng.integers(lo, hi + 1))
    cats = sorted(spec.category_probs)
    probs = np.array([spec.category_probs[c] for c in cats])
    categories = [cats[i] for i in rng.choice(len(cats), size=count, p=probs)] if count else []

    sizes = [
        np.asarray(spec.sizes[c].mean) + rng.uniform(-1, 1, size=3) * np.asarray(spec.sizes[c].spread)
        for c in categories
    ]
    centers = _place_footprints(sizes, rng)
    if centers is None:
        raise GenerationError(
            f"could not place {len(sizes)} boxes in {MAX_PLACEMENT_ATTEMPTS} attempts"
        )
    boxes = [
        Box3D(tuple(quantize([cx, cy, size[2] / 2])), tuple(quantize(size)), cat)
        for (cx, cy), size, cat in zip(centers, sizes, categories)
    ]

    chunks = [
        _surface_points(b.center, b.size, spec.points_per_object, rng) for b in boxes
    ]
    if spec.clutter_points:
        n = spec.clutter_points
        clutter = rng.uniform(0, 1, size=(n, 3))
        # floor, and the two walls at x=0 / y=0
        which = rng.integers(0, 3, size=n)
        clutter[which == 0, 2] = 0.0
        clutter[which == 1, 0] = 0.0
        clutter[which == 2, 1] = 0.0
        clutter[which != 0, 2] *= 0.3
        chunks.append(clutter)
    points = np.concatenate(chunks) if chunks else np.zeros((0, 3))
    # bottom faces sit at c - s/2, which rounds a hair below the floor
    points = np.clip(points, 0.0, 1.0)
    return PointScene(scene_id, spec.name, quantize(points), boxes)


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def write_scene(scene: PointScene, path) -> None:
    lines = [HEADER, f"{scene.scene_id} {scene.scene_type} {len(scene.points)} {len(scene.boxes)}"]
    lines += [" ".join(_fmt(v) for v in p) for p in scene.points]
    for b in scene.boxes:
        lines.append(" ".join(_fmt(v) for v in (*b.center, *b.size)) + f" {b.category}")
    Path(path).write_text("\n".join(lines) + "\n")


def _floats(tokens, count, path, lineno):
    if len(tokens) != count:
        raise ParseError(f"expected {count} fields, got {len(tokens)}", path, lineno)
    try:
        values = [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"not a number: {exc}", path, lineno) from exc
    if not all(math.isfinite(v) for v in values):
        raise ParseError("non-finite value", path, lineno)
    return values


def read_scene(path) -> PointScene:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise ParseError(f"expected header {HEADER!r}", path, 1)
    if len(lines) < 2:
        raise ParseError("missing scene line", path, 2)
    head = lines[1].split()
    if len(head) != 4:
        raise ParseError("expected 'scene_id scene_type N M'", path, 2)
    try:
        n, m = int(head[2]), int(head[3])
    except ValueError as exc:
        raise ParseError("point/box counts must be integers", path, 2) from exc
    if n < 0 or m < 0:
        raise ParseError("negative point/box count", path, 2)

    expected = 2 + n + m
    body = [ln for ln in lines[2:]]
    while body and not body[-1].strip():
        body.pop()
    if len(body) < n + m:
        raise ParseError(f"truncated file: expected {expected} lines, found {2 + len(body)}",
                         path, 2 + len(body) + 1)
    if len(body) > n + m:
        raise ParseError(f"unexpected content after {expected} lines", path, expected + 1)

    points = np.empty((n, 3))
    for i in range(n):
        points[i] = _floats(body[i].split(), 3, path, 3 + i)
    boxes = []
    for j in range(m):
        lineno = 3 + n + j
        tokens = body[n + j].split()
        if len(tokens) != 7:
            raise ParseError(f"expected 7 fields, got {len(tokens)}", path, lineno)
        vals = _floats(tokens[:6], 6, path, lineno)
        try:
            cat = int(tokens[6])
        except ValueError as exc:
            raise ParseError("category id must be an integer", path, lineno) from exc
        if min(vals[3:]) <= 0:
            raise ParseError("box size must be positive", path, lineno)
        boxes.append(Box3D(tuple(vals[:3]), tuple(vals[3:]), cat))
    return PointScene(head[0], head[1], points, boxes)


def scene_seed(global_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(global_seed), int(index)])


def split_of(scene_id: str) -> str:
    """Deterministic 80/20 train/val assignment from a hash of the id."""
    digest = hashlib.sha256(scene_id.encode()).digest()
    return "train" if int.from_bytes(digest[:8], "little") % 100 < 80 else "val"


@dataclass
class ManifestEntry:
    scene_id: str
    path: str
    scene_type: str
    box_count: int


def build_dataset(specs: Sequence[SceneTypeSpec], num_scenes: int, seed: int, out_dir) -> list[ManifestEntry]:
    """Generate ``num_scenes`` scenes into ``out_dir`` with manifest and splits.

    Scene ``i`` uses type ``i mod len(specs)`` after a seeded shuffle of the
    index order, and its own seed derived from ``(seed, i)``.
    """
    if num_scenes < 1:
        raise ConfigurationError("num_scenes must be >= 1")
    if not specs:
        raise ConfigurationError("no scene types given")
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    type_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2**32 - 1]))
    type_order = type_rng.permutation(num_scenes) % len(specs)

    entries = []
    for i in range(num_scenes):
        spec = specs[int(type_order[i])]
        scene_id = f"scene_{i:05d}"
        scene = generate_scene(spec, scene_seed(seed, i), scene_id)
        rel = f"scenes/{scene_id}.txt"
        write_scene(scene, out / rel)
        entries.append(ManifestEntry(scene_id, rel, spec.name, len(scene.boxes)))

    write_manifest(entries, out / "manifest.txt")
    for split in ("train", "val"):
        ids = [e.scene_id for e in entries if split_of(e.scene_id) == split]
        (out / f"{split}.txt").write_text("".join(f"{s}\n" for s in ids))
    save_specs(specs, out / "specs.json")
    return entries


def write_manifest(entries: Sequence[ManifestEntry], path) -> None:
    Path(path).write_text(
        "".join(f"{e.scene_id} {e.path} {e.scene_type} {e.box_count}\n" for e in entries)
    )


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing manifest {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != 4:
            raise ParseError("expected 'scene_id relative_path scene_type box_count'", path, lineno)
        try:
            count = int(tokens[3])
        except ValueError as exc:
            raise ParseError("box_count must be an integer", path, lineno) from exc
        entries.append(ManifestEntry(tokens[0], tokens[1], tokens[2], count))
    return entries


def read_split(data_dir, split: str) -> list[str]:
    path = Path(data_dir) / f"{split}.txt"
    if not path.exists():
        raise FileNotFoundError(f"missing split file {path}")
    return [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]


def load_split(data_dir, split: str) -> list[PointScene]:
    data_dir = Path(data_dir)
    entries = {e.scene_id: e for e in read_manifest(data_dir / "manifest.txt")}
    scenes = []
    for scene_id in read_split(data_dir, split):
        if scene_id not in entries:
            raise ParseError(f"split {split} lists unknown scene {scene_id}", data_dir / f"{split}.txt")
        scenes.append(read_scene(data_dir / entries[scene_id].path))
    return scenes


def manifest_hash(data_dir) -> str:
    return hashlib.sha256((Path(data_dir) / "manifest.txt").read_bytes()).hexdigest()


def dataset_fingerprint(data_dir) -> str:
    """Hash over manifest, splits and every scene file."""
    data_dir = Path(data_dir)
    h = hashlib.sha256()
    for name in ("manifest.txt", "train.txt", "val.txt"):
        p = data_dir / name
        if p.exists():
            h.update(p.read_bytes())
    for e in read_manifest(data_dir / "manifest.txt"):
        h.update((data_dir / e.path).read_bytes())
    return h.hexdigest()


def ensure_dir_writable(path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"directory {path} is not writable")
