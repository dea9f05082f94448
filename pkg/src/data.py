"""
Synthetic completion data
Primitive shape sampling, view-crop partials, XYZ files, dataset manifests and loaders
"""

import json
import logging
import math
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.spatial.transform import Rotation
from sklearn.model_selection import train_test_split
from torch.utils.data import DataLoader, Dataset

from config.config import PathConfig
from src.exceptions import ArgumentError, DataError, ParseError

logger = logging.getLogger("FBNet.data")

PRIMITIVES = ("sphere", "cylinder", "box", "cone", "union")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ShapeSpec:
    """
    A posed primitive

    extents meaning per kind: box edge lengths (x, y, z); cylinder and cone
    (radius, height, unused); ignored for spheres (unit radius). A union
    samples its two `parts`, each posed in the union's frame.
    """

    kind: str
    rotation: Tuple[float, float, float] = (0.0, 0.0, 0.0)  # xyz Euler angles, degrees
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0
    seed: int = 0
    extents: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    parts: Tuple["ShapeSpec", ...] = ()

    def __post_init__(self):
        if not self.scale > 0:
            raise ArgumentError(f"shape scale must be positive, got {self.scale}")
        if any(not e > 0 for e in self.extents):
            raise ArgumentError(f"shape extents must be positive, got {self.extents}")

    def to_world(self, local: np.ndarray) -> np.ndarray:
        rot = Rotation.from_euler("xyz", self.rotation, degrees=True)
        return rot.apply(local) * self.scale + np.asarray(self.translation, dtype=np.float64)


def _check_kind(spec: ShapeSpec) -> None:
    if spec.kind not in PRIMITIVES:
        raise ArgumentError(f"unknown primitive '{spec.kind}'; choose one of {PRIMITIVES}")
    if spec.kind == "union":
        if len(spec.parts) != 2:
            raise ArgumentError("a union needs exactly two parts")
        for part in spec.parts:
            if part.kind == "union":
                raise ArgumentError("nested unions are not supported")
            _check_kind(part)


def surface_area(spec: ShapeSpec) -> float:
    """Analytic surface area in world units"""
    a, b, c = spec.extents
    s2 = spec.scale ** 2
    if spec.kind == "sphere":
        return 4 * math.pi * s2
    if spec.kind == "box":
        return 2 * (a * b + b * c + c * a) * s2
    if spec.kind == "cylinder":
        return (2 * math.pi * a * b + 2 * math.pi * a * a) * s2
    if spec.kind == "cone":
        return (math.pi * a * math.hypot(a, b) + math.pi * a * a) * s2
    if spec.kind == "union":
        return sum(surface_area(part) for part in spec.parts) * s2
    raise ArgumentError(f"unknown primitive '{spec.kind}'")


def bounding_ball(spec: ShapeSpec) -> Tuple[np.ndarray, float]:
    """Center and radius of a ball containing the posed primitive"""
    a, b, c = spec.extents
    if spec.kind == "union":
        (c1, r1), (c2, r2) = (bounding_ball(part) for part in spec.parts)
        d = float(np.linalg.norm(c2 - c1))
        if d + r2 <= r1:
            center, radius = c1, r1
        elif d + r1 <= r2:
            center, radius = c2, r2
        else:
            radius = 0.5 * (d + r1 + r2)
            center = c1 + (radius - r1) * (c2 - c1) / d
        return spec.to_world(center[None])[0], radius * spec.scale

    if spec.kind == "sphere":
        local_center, radius = np.zeros(3), 1.0
    elif spec.kind == "box":
        local_center, radius = np.zeros(3), 0.5 * math.sqrt(a * a + b * b + c * c)
    elif spec.kind == "cylinder":
        local_center, radius = np.zeros(3), math.hypot(a, b / 2)
    elif spec.kind == "cone":
        # base disk at z=0, apex at z=height
        z0 = max(0.0, (b * b - a * a) / (2 * b))
        local_center, radius = np.array([0.0, 0.0, z0]), max(math.hypot(a, z0), b - z0)
    else:
        raise ArgumentError(f"unknown primitive '{spec.kind}'")
    return spec.to_world(local_center[None])[0], radius * spec.scale


def _disk(rng: np.random.Generator, n: int, radius: float, z: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    theta = rng.uniform(0, 2 * np.pi, n)
    return np.stack([r * np.cos(theta), r * np.sin(theta), np.full(n, z)], axis=1)


def _sample_local(spec: ShapeSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    a, b, c = spec.extents
    if spec.kind == "sphere":
        v = rng.standard_normal((n, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    if spec.kind == "box":
        half = np.array([a, b, c]) / 2
        face_areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
        faces = rng.choice(6, size=n, p=face_areas / face_areas.sum())
        points = rng.uniform(-half, half, size=(n, 3))
        axis = faces // 2
        sign = np.where(faces % 2 == 0, -1.0, 1.0)
        points[np.arange(n), axis] = sign * half[axis]
        return points

    if spec.kind == "cylinder":
        lateral, cap = 2 * np.pi * a * b, np.pi * a * a
        part = rng.choice(3, size=n, p=np.array([lateral, cap, cap]) / (lateral + 2 * cap))
        points = np.empty((n, 3))
        side = part == 0
        theta = rng.uniform(0, 2 * np.pi, side.sum())
        points[side] = np.stack([a * np.cos(theta), a * np.sin(theta), rng.uniform(-b / 2, b / 2, side.sum())], axis=1)
        for idx, z in ((1, -b / 2), (2, b / 2)):
            mask = part == idx
            points[mask] = _disk(rng, mask.sum(), a, z)
        return points

    if spec.kind == "cone":
        slant = math.hypot(a, b)
        lateral, base = np.pi * a * slant, np.pi * a * a
        side = rng.random(n) < lateral / (lateral + base)
        points = np.empty((n, 3))
        # area grows linearly with distance from the apex
        frac = np.sqrt(rng.random(side.sum()))
        theta = rng.uniform(0, 2 * np.pi, side.sum())
        points[side] = np.stack([a * frac * np.cos(theta), a * frac * np.sin(theta), b * (1 - frac)], axis=1)
        points[~side] = _disk(rng, (~side).sum(), a, 0.0)
        return points

    raise ArgumentError(f"unknown primitive '{spec.kind}'")


def _sample_world(spec: ShapeSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "union":
        areas = np.array([surface_area(part) for part in spec.parts])
        counts = rng.multinomial(n, areas / areas.sum())
        local = np.concatenate([_sample_world(part, m, rng) for part, m in zip(spec.parts, counts)])
        return spec.to_world(local)
    return spec.to_world(_sample_local(spec, n, rng))


def sample_complete(spec: ShapeSpec, n: int) -> np.ndarray:
    """
    Sample a complete cloud from a primitive

    Args:
        spec: Posed primitive; spec.seed fixes the samples
        n: Number of points, >= 1

    Returns:
        (n, 3) float64 points, uniform by surface area, mapped into the unit
        sphere by the primitive's bounding ball
    """
    if n < 1:
        raise ArgumentError(f"need at least one point, got n={n}")
    _check_kind(spec)
    rng = np.random.default_rng(spec.seed)
    points = _sample_world(spec, n, rng)
    center, radius = bounding_ball(spec)
    return (points - center) / radius


def make_partial(complete: np.ndarray, view: Sequence[float], keep_ratio: float = 0.5) -> np.ndarray:
    """Keep the ceil(keep_ratio * N) points facing the view direction most, in their original order"""
    if not 0 < keep_ratio <= 1:
        raise ArgumentError(f"keep_ratio must lie in (0, 1], got {keep_ratio}")
    view = np.asarray(view, dtype=np.float64)
    norm = np.linalg.norm(view)
    if view.shape != (3,) or norm == 0:
        raise ArgumentError(f"view must be a non-zero 3-vector, got {view.tolist()}")
    keep = math.ceil(keep_ratio * len(complete))
    score = complete @ (view / norm)
    order = np.argsort(-score, kind="stable")[:keep]
    return complete[np.sort(order)]


def view_directions(n: int = 26) -> np.ndarray:
    """n near-uniform unit vectors on the sphere (Fibonacci lattice)"""
    if n < 1:
        raise ArgumentError(f"need at least one view, got {n}")
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z * z)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def resample(cloud: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Subsample to n points, or pad by repeating random points; the point set never grows"""
    if len(cloud) == 0:
        raise ArgumentError("cannot resample an empty cloud")
    if len(cloud) >= n:
        return cloud[np.sort(rng.choice(len(cloud), n, replace=False))]
    extra = rng.choice(len(cloud), n - len(cloud), replace=True)
    return np.concatenate([cloud, cloud[extra]])


def random_shape_spec(rng: np.random.Generator, seed: int, allow_union: bool = True) -> ShapeSpec:
    """Draw a random posed primitive"""
    kinds = PRIMITIVES if allow_union else PRIMITIVES[:-1]
    kind = str(rng.choice(kinds))
    rotation = tuple(float(x) for x in rng.uniform(-180, 180, 3))
    if kind == "union":
        parts = tuple(
            ShapeSpec(
                **{**random_shape_spec(rng, seed, allow_union=False).__dict__, "translation": tuple(float(x) for x in rng.uniform(-0.6, 0.6, 3))}
            )
            for _ in range(2)
        )
        return ShapeSpec(kind="union", rotation=rotation, seed=seed, parts=parts)
    if kind == "box":
        extents = tuple(float(x) for x in rng.uniform(0.4, 1.6, 3))
    elif kind in ("cylinder", "cone"):
        extents = (float(rng.uniform(0.3, 0.8)), float(rng.uniform(0.6, 1.8)), 1.0)
    else:
        extents = (1.0, 1.0, 1.0)
    return ShapeSpec(
        kind=kind,
        rotation=rotation,
        scale=float(rng.uniform(0.5, 1.5)),
        seed=seed,
        extents=extents,
    )


def write_xyz(cloud, path) -> None:
    """One point per line, three reals separated by single spaces, no header"""
    points = np.asarray(cloud.detach().cpu() if torch.is_tensor(cloud) else cloud, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ArgumentError(f"expected an (N, 3) cloud, got shape {points.shape}")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x, y, z in points:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")


def read_xyz(path) -> np.ndarray:
    """Parse an XYZ text file into an (N, 3) float64 array"""
    if not os.path.exists(path):
        raise DataError(f"point file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    points = []
    for number, line in enumerate(lines, start=1):
        tokens = line.split(" ")
        if len(tokens) != 3:
            raise ParseError(path, number, f"expected 3 space-separated reals, got {line!r}")
        try:
            values = [float(t) for t in tokens]
        except ValueError:
            raise ParseError(path, number, f"not a real number in {line!r}")
        if not all(math.isfinite(v) for v in values):
            raise ParseError(path, number, f"non-finite coordinate in {line!r}")
        points.append(values)
    if not points:
        raise DataError(f"point file is empty: {path}")
    return np.asarray(points, dtype=np.float64)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    partial: str
    complete: str
    resolution: int
    split: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "partial": self.partial,
            "complete": self.complete,
            "resolution": self.resolution,
            "split": self.split,
        }


@dataclass
class DatasetManifest:
    """Paired (partial, complete) files; paths are relative to `root`"""

    entries: List[ManifestEntry] = field(default_factory=list)
    root: str = "."

    def __len__(self) -> int:
        return len(self.entries)

    def split(self, tag: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == tag]

    def has_split(self, tag: str) -> bool:
        return any(e.split == tag for e in self.entries)

    def resolve(self, relative: str) -> str:
        return os.path.join(self.root, relative)

    def resolution_for(self, tag: Optional[str] = None) -> int:
        entries = self.entries if tag is None else self.split(tag)
        resolutions = {e.resolution for e in entries}
        if len(resolutions) != 1:
            raise DataError(f"split {tag or 'all'} has resolutions {sorted(resolutions)}, expected exactly one")
        return resolutions.pop()

    def validate(self, parse: bool = True) -> None:
        """Check that every file exists (and parses) and resolutions agree within each split"""
        if not self.entries:
            raise DataError("manifest has no entries")
        for entry in self.entries:
            if entry.split not in SPLITS:
                raise DataError(f"entry {entry.id} has unknown split '{entry.split}'")
            for relative in (entry.partial, entry.complete):
                path = self.resolve(relative)
                if not os.path.exists(path):
                    raise DataError(f"entry {entry.id}: missing file {path}")
                if parse:
                    read_xyz(path)
        for tag in SPLITS:
            if self.has_split(tag):
                self.resolution_for(tag)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"entries": [e.to_dict() for e in self.entries]}, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        if not os.path.exists(path):
            raise DataError(f"manifest not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
            entries = [
                ManifestEntry(
                    id=str(item["id"]),
                    partial=str(item["partial"]),
                    complete=str(item["complete"]),
                    resolution=int(item["resolution"]),
                    split=str(item["split"]),
                )
                for item in data["entries"]
            ]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed manifest {path}: {str(e)}")
        return cls(entries=entries, root=os.path.dirname(os.path.abspath(path)))


def shape_seed(dataset_seed: int, shape_id: int) -> np.random.SeedSequence:
    """Independent per-shape seed derived from (dataset seed, shape id)"""
    return np.random.SeedSequence([int(dataset_seed), int(shape_id)])


def _generate_shape(job: Tuple) -> List[Dict]:
    out_dir, dataset_seed, shape_id, split, complete_size, partial_size, keep_ratio, views_per_shape = job
    seq = shape_seed(dataset_seed, shape_id)
    rng = np.random.default_rng(seq)
    spec = random_shape_spec(rng, seed=int(seq.generate_state(1)[0]))
    complete = sample_complete(spec, complete_size)

    complete_rel = os.path.join("complete", f"{shape_id:05d}.xyz")
    write_xyz(complete, os.path.join(out_dir, complete_rel))

    views = view_directions(26)
    chosen = rng.choice(len(views), size=min(views_per_shape, len(views)), replace=False)
    rows = []
    for view_index in sorted(int(v) for v in chosen):
        partial = resample(make_partial(complete, views[view_index], keep_ratio), partial_size, rng)
        partial_rel = os.path.join("partial", f"{shape_id:05d}_v{view_index:02d}.xyz")
        write_xyz(partial, os.path.join(out_dir, partial_rel))
        rows.append(
            dict(
                id=f"{shape_id:05d}_v{view_index:02d}",
                partial=partial_rel,
                complete=complete_rel,
                resolution=complete_size,
                split=split,
            )
        )
    return rows


def assign_splits(num_shapes: int, seed: int, val_fraction: float = 0.1, test_fraction: float = 0.1) -> Dict[int, str]:
    """Seeded shape-level train/val/test assignment; the train split always keeps at least one shape"""
    if val_fraction < 0 or test_fraction < 0 or val_fraction + test_fraction >= 1:
        raise ArgumentError(f"invalid split fractions val={val_fraction}, test={test_fraction}")
    ids = np.arange(num_shapes)
    splits = {int(i): "train" for i in ids}
    holdout = val_fraction + test_fraction
    if holdout == 0 or num_shapes < 2:
        return splits
    n_holdout = min(max(math.ceil(holdout * num_shapes), 1), num_shapes - 1)
    _, rest = train_test_split(ids, test_size=n_holdout, random_state=seed, shuffle=True)
    if val_fraction > 0 and test_fraction > 0 and len(rest) >= 2:
        n_test = min(max(round(len(rest) * test_fraction / holdout), 1), len(rest) - 1)
        val_ids, test_ids = train_test_split(rest, test_size=n_test, random_state=seed, shuffle=True)
    elif val_fraction >= test_fraction:
        val_ids, test_ids = rest, []
    else:
        val_ids, test_ids = [], rest
    for i in val_ids:
        splits[int(i)] = "val"
    for i in test_ids:
        splits[int(i)] = "test"
    return splits


def generate_dataset(
    out_dir,
    num_shapes: int,
    seed: int = 0,
    complete_size: int = 1024,
    partial_size: int = 512,
    keep_ratio: float = 0.5,
    views_per_shape: int = 1,
    val_fraction: float = 0.1,
    test_fraction: float = 0.1,
    workers: int = 0,
) -> DatasetManifest:
    """
    Write a synthetic dataset and its manifest

    Args:
        out_dir: Target directory (complete/, partial/, manifest.json)
        num_shapes: Number of primitives
        seed: Dataset seed; every shape derives its own seed from (seed, shape id)
        complete_size: Points per complete cloud (the dataset resolution)
        partial_size: Points per partial cloud after resampling
        keep_ratio: Fraction of the complete cloud kept by the view crop
        views_per_shape: Partials per shape, drawn from 26 view directions
        workers: Process pool size; 0 or 1 generates in-process

    Returns:
        The saved DatasetManifest
    """
    if num_shapes < 1:
        raise ArgumentError(f"num_shapes must be >= 1, got {num_shapes}")
    os.makedirs(out_dir, exist_ok=True)
    splits = assign_splits(num_shapes, seed, val_fraction, test_fraction)
    jobs = [
        (out_dir, seed, shape_id, splits[shape_id], complete_size, partial_size, keep_ratio, views_per_shape)
        for shape_id in range(num_shapes)
    ]

    logger.info(f"Generating {num_shapes} shapes into {out_dir} (seed {seed}, workers {workers})")
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_generate_shape, jobs))
    else:
        results = [_generate_shape(job) for job in jobs]

    entries = [ManifestEntry(**row) for rows in results for row in rows]
    manifest = DatasetManifest(entries=entries, root=os.path.abspath(out_dir))
    manifest.save(os.path.join(out_dir, PathConfig.MANIFEST_NAME))
    counts = {tag: len(manifest.split(tag)) for tag in SPLITS}
    logger.info(f"Dataset ready: {len(entries)} pairs {counts}")
    return manifest


class CompletionDataset(Dataset):
    """(partial, complete) tensors for one split of a manifest"""

    def __init__(self, manifest: DatasetManifest, split: Optional[str] = "train", dtype: torch.dtype = torch.float32):
        self.manifest = manifest
        self.entries = manifest.entries if split is None else manifest.split(split)
        self.dtype = dtype
        self._cache: Dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def _load(self, relative: str) -> np.ndarray:
        if relative not in self._cache:
            self._cache[relative] = read_xyz(self.manifest.resolve(relative))
        return self._cache[relative]

    def __getitem__(self, index: int) -> Dict:
        entry = self.entries[index]
        return {
            "id": entry.id,
            "partial": torch.as_tensor(self._load(entry.partial), dtype=self.dtype),
            "complete": torch.as_tensor(self._load(entry.complete), dtype=self.dtype),
        }


def _seed_worker(worker_id: int) -> None:
    worker_seed = torch.initial_seed() % 2 ** 32
    np.random.seed(worker_seed)
    random.seed(worker_seed)


def make_loader(dataset: Dataset, batch_size: int, shuffle: bool, seed: int, num_workers: int = 0) -> DataLoader:
    """Seeded loader; every worker derives its seed from the loader generator"""
    generator = torch.Generator()
    generator.manual_seed(seed)
    return DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=shuffle,
        num_workers=num_workers,
        worker_init_fn=_seed_worker,
        generator=generator,
    )
