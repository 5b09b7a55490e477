"""Synthetic Gaussian-mixture task family.

A pretraining distribution has ``K_PT`` fine classes grouped into equal-size
superclasses. Downstream tasks are derived from it with decreasing
similarity:

* ``coarse``     same mixture, labels replaced by superclass labels
* ``disjoint``   fresh class means in the same feature space
* ``dissimilar`` fresh means in a randomly rotated frame with anisotropic noise
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._rng import child_rng
from .errors import SpecError

TASK_KINDS = ("coarse", "disjoint", "dissimilar")


class Point(NamedTuple):
    x: np.ndarray
    y: int
    id: int


@dataclass
class DistributionSpec:
    """Parameters of a Gaussian-mixture classification distribution.

    ``class_means`` holds one row per mixture component (fine class);
    ``label_map`` sends a component to the label that is emitted when
    sampling, and ``superclass_map`` to its superclass.
    """

    feature_dim: int
    class_means: np.ndarray
    class_cov_scale: float
    superclass_map: np.ndarray
    label_map: np.ndarray
    seed: int
    kind: str = "pretrain"
    superclass_centers: np.ndarray | None = None
    cov_factor: np.ndarray | None = None
    rotation: np.ndarray | None = None

    def __post_init__(self):
        self.class_means = np.asarray(self.class_means, dtype=np.float64)
        self.superclass_map = np.asarray(self.superclass_map, dtype=np.int64)
        self.label_map = np.asarray(self.label_map, dtype=np.int64)
        k = self.class_means.shape[0]
        if self.class_means.shape != (k, self.feature_dim):
            raise SpecError("class_means must be [K x feature_dim]")
        if self.superclass_map.shape != (k,) or self.label_map.shape != (k,):
            raise SpecError("superclass_map and label_map need one entry per class")
        for name, table in (("superclass_map", self.superclass_map), ("label_map", self.label_map)):
            if set(table.tolist()) != set(range(int(table.max()) + 1)):
                raise SpecError(f"{name} is not onto [0, {int(table.max()) + 1})")
        if not self.class_cov_scale > 0:
            raise SpecError("class_cov_scale must be positive")
        if k > 1:
            gaps = np.linalg.norm(self.class_means[:, None] - self.class_means[None], axis=-1)
            if np.min(gaps[np.triu_indices(k, 1)]) == 0:
                raise SpecError("class means are not pairwise distinct")

    @property
    def fine_class_count(self) -> int:
        return self.class_means.shape[0]

    @property
    def n_labels(self) -> int:
        return int(self.label_map.max()) + 1

    @property
    def n_superclasses(self) -> int:
        return int(self.superclass_map.max()) + 1

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "kind": self.kind,
            "feature_dim": self.feature_dim,
            "class_means": arr(self.class_means),
            "class_cov_scale": self.class_cov_scale,
            "superclass_map": arr(self.superclass_map),
            "label_map": arr(self.label_map),
            "seed": self.seed,
            "superclass_centers": arr(self.superclass_centers),
            "cov_factor": arr(self.cov_factor),
            "rotation": arr(self.rotation),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DistributionSpec":
        def arr(key):
            v = doc.get(key)
            return None if v is None else np.asarray(v, dtype=np.float64)

        try:
            return cls(
                feature_dim=int(doc["feature_dim"]),
                class_means=arr("class_means"),
                class_cov_scale=float(doc["class_cov_scale"]),
                superclass_map=doc["superclass_map"],
                label_map=doc["label_map"],
                seed=int(doc["seed"]),
                kind=doc.get("kind", "pretrain"),
                superclass_centers=arr("superclass_centers"),
                cov_factor=arr("cov_factor"),
                rotation=arr("rotation"),
            )
        except KeyError as exc:
            raise SpecError(f"spec document missing field {exc}") from exc

    def equals(self, other: "DistributionSpec") -> bool:
        return json.dumps(self.to_dict()) == json.dumps(other.to_dict())


@dataclass(eq=False)
class Dataset:
    """Labelled points with stable 63-bit ids, stored column-wise."""

    X: np.ndarray
    y: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y) or len(self.y) != len(self.ids):
            raise SpecError("X, y and ids must describe the same number of points")
        if len(np.unique(self.ids)) != len(self.ids):
            raise SpecError("dataset ids are not unique")

    def __len__(self) -> int:
        return len(self.y)

    def point(self, i: int) -> Point:
        return Point(self.X[i], int(self.y[i]), int(self.ids[i]))

    def __iter__(self):
        return (self.point(i) for i in range(len(self)))

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.X[index], self.y[index], self.ids[index])

    def relabel(self, label_map) -> "Dataset":
        return Dataset(self.X.copy(), np.asarray(label_map)[self.y], self.ids.copy())

    def equals(self, other: "Dataset") -> bool:
        return (
            self.X.shape == other.X.shape
            and self.X.tobytes() == other.X.tobytes()
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.ids, other.ids)
        )


@dataclass(eq=False)
class ChallengeSet(Dataset):
    """Challenge points plus their row positions in the population pool."""

    pool_index: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        if self.pool_index is None:
            self.pool_index = np.arange(len(self.y))
        self.pool_index = np.asarray(self.pool_index, dtype=np.int64)


# -- construction ---------------------------------------------------------


def _unit_rows(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def make_pretrain_spec(
    d: int,
    K_PT: int,
    K_coarse: int,
    separation: float,
    seed: int,
    *,
    fine_spread: float = 1.0,
    cov_scale: float = 1.0,
) -> DistributionSpec:
    """Mixture of ``K_PT`` Gaussians grouped into ``K_coarse`` superclasses.

    Superclass centres lie on the sphere of radius ``separation``; fine class
    ``i`` belongs to superclass ``i % K_coarse`` and its mean is the centre
    plus an isotropic perturbation of scale ``fine_spread``.
    """
    if d <= 0 or K_PT <= 0 or K_coarse <= 0:
        raise SpecError("dimensions and class counts must be positive")
    if K_PT % K_coarse != 0:
        raise SpecError(f"K_PT={K_PT} is not divisible by K_coarse={K_coarse}")
    if separation < 0 or fine_spread < 0:
        raise SpecError("separation and fine_spread must be nonnegative")
    rng = child_rng(seed, "pretrain-spec")
    centers = separation * _unit_rows(rng, K_coarse, d)
    superclass_map = np.arange(K_PT) % K_coarse
    means = centers[superclass_map] + fine_spread * rng.standard_normal((K_PT, d))
    return DistributionSpec(
        feature_dim=d,
        class_means=means,
        class_cov_scale=float(cov_scale),
        superclass_map=superclass_map,
        label_map=np.arange(K_PT),
        seed=seed,
        superclass_centers=centers,
    )


def make_ids(n: int, seed: int, namespace: str = "population") -> np.ndarray:
    """Stable 63-bit ids derived from ``(namespace, seed, index)``."""
    out = np.empty(n, dtype=np.int64)
    prefix = f"{namespace}:{seed}:".encode()
    for i in range(n):
        h = hashlib.blake2b(prefix + str(i).encode(), digest_size=8).digest()
        out[i] = int.from_bytes(h, "little") >> 1
    return out


def sample_population(
    spec: DistributionSpec, pool_size: int, seed: int, *, namespace: str = "population"
) -> Dataset:
    """Draw ``pool_size`` i.i.d. labelled points from ``spec``."""
    if pool_size <= 0:
        raise SpecError("pool_size must be positive")
    rng = child_rng(seed, "sample")
    comp = rng.integers(0, spec.fine_class_count, size=pool_size)
    z = rng.standard_normal((pool_size, spec.feature_dim))
    if spec.cov_factor is not None:
        z = z @ spec.cov_factor.T
    X = spec.class_means[comp] + spec.class_cov_scale * z
    return Dataset(X, spec.label_map[comp], make_ids(pool_size, seed, namespace))


def _random_rotation(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def derive_task(
    spec: DistributionSpec, kind: str, seed: int, *, n_classes: int | None = None
) -> DistributionSpec:
    """Downstream distribution of the given similarity ``kind``.

    ``n_classes`` overrides the class count of the ``disjoint`` (default 10)
    and ``dissimilar`` (default 8) tasks; it is ignored for ``coarse``.
    """
    if kind not in TASK_KINDS:
        raise SpecError(f"unknown task kind {kind!r}")
    d = spec.feature_dim
    if kind == "coarse":
        return DistributionSpec(
            feature_dim=d,
            class_means=spec.class_means.copy(),
            class_cov_scale=spec.class_cov_scale,
            superclass_map=spec.superclass_map.copy(),
            label_map=spec.superclass_map[np.arange(spec.fine_class_count)].copy(),
            seed=seed,
            kind="coarse",
            superclass_centers=spec.superclass_centers,
            cov_factor=spec.cov_factor,
            rotation=spec.rotation,
        )

    rng = child_rng(seed, "derive", kind)
    k = n_classes or (10 if kind == "disjoint" else 8)
    radius = float(np.mean(np.linalg.norm(spec.class_means, axis=1)))
    means = radius * _unit_rows(rng, k, d)
    rotation = cov_factor = None
    if kind == "dissimilar":
        rotation = _random_rotation(rng, d)
        scales = np.exp(rng.uniform(np.log(0.5), np.log(2.0), size=d))
        means = means @ rotation.T
        cov_factor = rotation * scales
    return DistributionSpec(
        feature_dim=d,
        class_means=means,
        class_cov_scale=spec.class_cov_scale,
        superclass_map=np.arange(k),
        label_map=np.arange(k),
        seed=seed,
        kind=kind,
        cov_factor=cov_factor,
        rotation=rotation,
    )


def _point_key(x) -> int:
    digest = hashlib.blake2b(np.ascontiguousarray(x, dtype=np.float64).tobytes(), digest_size=8)
    return int.from_bytes(digest.digest(), "little")


def augment(x, aug_index: int, strength: float, master_seed: int) -> np.ndarray:
    """Keyed view of ``x``: a coordinate-pair swap plus Gaussian jitter.

    The key picks a rank ``r`` and swaps the coordinates holding the ``r``-th
    and ``(r+1)``-th smallest values, so the swap is an isometry that moves
    ``x`` only by the gap between neighbouring values. View 0 is ``x``
    itself. Other views are a deterministic function of the bytes of ``x``,
    ``aug_index`` and ``master_seed``.
    """
    if aug_index < 0:
        raise SpecError("aug_index must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    if aug_index == 0:
        return x.copy()
    rng = child_rng(master_seed, "augment", _point_key(x), aug_index)
    out = x.copy()
    if x.shape[0] >= 2:
        order = np.argsort(x, kind="stable")
        r = int(rng.integers(0, x.shape[0] - 1))
        i, j = order[r], order[r + 1]
        out[i], out[j] = x[j], x[i]
    if strength > 0:
        out += rng.normal(0.0, strength, size=x.shape)
    return out


def augment_views(X, M: int, strength: float, master_seed: int) -> np.ndarray:
    """``[n, M, d]`` array of views 0..M-1 for every row of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    out = np.empty((X.shape[0], M, X.shape[1]))
    for r, x in enumerate(X):
        for j in range(M):
            out[r, j] = augment(x, j, strength, master_seed)
    return out


def designate_challenges(pool: Dataset, count: int, seed: int) -> ChallengeSet:
    """Uniform sample of ``count`` pool points, without replacement."""
    if count < 0 or count > len(pool):
        raise SpecError(f"cannot draw {count} challenges from a pool of {len(pool)}")
    idx = np.sort(child_rng(seed, "challenges").choice(len(pool), size=count, replace=False))
    return ChallengeSet(pool.X[idx], pool.y[idx], pool.ids[idx], pool_index=idx)


# -- persistence ----------------------------------------------------------


def write_dataset_csv(data: Dataset, path) -> None:
    d = data.X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "y"] + [f"x_{i}" for i in range(d)])
        for x, y, i in zip(data.X, data.y, data.ids):
            w.writerow([int(i), int(y)] + [repr(float(v)) for v in x])


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["id", "y"]:
        raise SpecError(f"{path}: not a dataset CSV")
    body = rows[1:]
    d = len(rows[0]) - 2
    X = np.array([[float(v) for v in r[2:]] for r in body], dtype=np.float64).reshape(len(body), d)
    return Dataset(X, [int(r[1]) for r in body], [int(r[0]) for r in body])


def write_spec_json(spec: DistributionSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=1))


def read_spec_json(path) -> DistributionSpec:
    return DistributionSpec.from_dict(json.loads(Path(path).read_text()))
