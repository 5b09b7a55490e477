"""Shadow-model ensembles: pretrain on random halves, finetune, track membership."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ._rng import child_int, child_rng
from .datasets import (
    ChallengeSet,
    Dataset,
    DistributionSpec,
    read_dataset_csv,
    read_spec_json,
    sample_population,
    write_dataset_csv,
    write_spec_json,
)
from .errors import CheckpointError, ConfigError, MembershipIdError
from .nn_core import Model, TrainConfig, load_model, models_equal, save_model
from .training import DPConfig, FinetuneStrategy, dp_finetune, finetune, pretrain

log = logging.getLogger(__name__)

ENSEMBLE_SCHEMA_VERSION = 1


@dataclass
class ShadowConfigs:
    """Training recipe shared by every entry; seeds are re-derived per entry."""

    pretrain: TrainConfig = field(default_factory=TrainConfig)
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20))
    ft_size: int = 1000
    hidden: tuple = (64, 32)
    dp: DPConfig | None = None

    def to_dict(self) -> dict:
        return {
            "pretrain": asdict(self.pretrain),
            "finetune": asdict(self.finetune),
            "ft_size": self.ft_size,
            "hidden": list(self.hidden),
            "dp": None if self.dp is None else self.dp.to_dict(),
        }


@dataclass
class ShadowEntry:
    pretrained: Model
    finetuned: Model
    member_ids: np.ndarray
    ft_seed: int

    def __post_init__(self):
        self.member_ids = np.sort(np.asarray(self.member_ids, dtype=np.int64))

    def is_member(self, point_id: int) -> bool:
        pos = np.searchsorted(self.member_ids, point_id)
        return bool(pos < len(self.member_ids) and self.member_ids[pos] == point_id)

    def members_of(self, ids) -> np.ndarray:
        return np.isin(np.asarray(ids, dtype=np.int64), self.member_ids)


@dataclass
class ShadowEnsemble:
    entries: list
    challenge: ChallengeSet
    population: Dataset
    downstream_kind: str
    manifest: dict
    downstream_spec: DistributionSpec | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def membership_matrix(self) -> np.ndarray:
        """``[N, n_challenges]`` boolean IN matrix."""
        return np.stack([e.members_of(self.challenge.ids) for e in self.entries])


class AttackerView:
    """The shadow entries an attacker may use when one entry is the target.

    Only the non-target entries are copied in, so nothing reachable from a
    view reveals the target's membership set.
    """

    def __init__(self, entries: Sequence[ShadowEntry], indices: Sequence[int]):
        self._entries = tuple(entries)
        self.indices = tuple(int(i) for i in indices)

    def __len__(self) -> int:
        return len(self._entries)

    def finetuned(self, i: int) -> Model:
        return self._entries[i].finetuned

    def pretrained(self, i: int) -> Model:
        return self._entries[i].pretrained

    def is_member(self, i: int, point_id: int) -> bool:
        return self._entries[i].is_member(point_id)

    def membership(self, point_id: int) -> np.ndarray:
        return np.array([e.is_member(point_id) for e in self._entries], dtype=bool)


def _subset_size(n: int) -> int:
    return n // 2


def _finetune_entry(i, g, downstream_spec, strategy, cfgs, master_seed):
    ft_seed = child_int(master_seed, "finetune", i)
    D_ft = sample_population(
        downstream_spec, cfgs.ft_size, child_int(master_seed, "ft-data", i), namespace="finetune"
    )
    ft_cfg = cfgs.finetune.replace(seed=ft_seed)
    K_ft = downstream_spec.n_labels
    if cfgs.dp is not None:
        f = dp_finetune(g, D_ft, cfgs.dp, ft_cfg, n_classes=K_ft, head_init_seed=ft_seed)
    else:
        strat = FinetuneStrategy(strategy.kind, strategy.k, head_init_seed=ft_seed)
        f = finetune(g, D_ft, strat, ft_cfg, n_classes=K_ft)
    return f, ft_seed


def _train_entry(job):
    (i, population, pretrain_spec, downstream_spec, strategy, cfgs, master_seed) = job
    n = len(population)
    members = np.sort(child_rng(master_seed, "members", i).choice(n, _subset_size(n), replace=False))
    pt_cfg = cfgs.pretrain.replace(seed=child_int(master_seed, "pretrain", i))
    g = pretrain(pretrain_spec, population.subset(members), pt_cfg, hidden=cfgs.hidden)
    f, ft_seed = _finetune_entry(i, g, downstream_spec, strategy, cfgs, master_seed)
    return ShadowEntry(g, f, population.ids[members], ft_seed)


def _refinetune_entry(job):
    (i, entry, downstream_spec, strategy, cfgs, master_seed) = job
    f, ft_seed = _finetune_entry(i, entry.pretrained, downstream_spec, strategy, cfgs, master_seed)
    return ShadowEntry(entry.pretrained, f, entry.member_ids, ft_seed)


def _run_jobs(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    out = []
    for k, job in enumerate(jobs):
        out.append(fn(job))
        log.debug("shadow entry %d/%d done", k + 1, len(jobs))
    return out


def default_workers() -> int:
    env = os.environ.get("TMIAUDIT_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, min(4, os.cpu_count() or 1))


def train_shadow_models(
    population: Dataset,
    challenge: ChallengeSet,
    downstream_spec: DistributionSpec,
    N: int,
    strategy: FinetuneStrategy,
    cfgs: ShadowConfigs,
    master_seed: int,
    *,
    pretrain_spec: DistributionSpec,
    workers: int | None = None,
) -> ShadowEnsemble:
    """Train ``N`` (pretrained, finetuned) pairs on random population halves.

    Entry ``i`` draws its half, its finetuning sample and its training seeds
    from streams keyed by ``(master_seed, i)``, so the result does not depend
    on ``workers``.
    """
    if N < 2:
        raise ConfigError("an ensemble needs at least two entries")
    if len(population) < 2:
        raise ConfigError("population needs at least two points")
    workers = default_workers() if workers is None else workers
    jobs = [
        (i, population, pretrain_spec, downstream_spec, strategy, cfgs, master_seed)
        for i in range(N)
    ]
    entries = _run_jobs(_train_entry, jobs, workers)

    manifest = {
        "schema_version": ENSEMBLE_SCHEMA_VERSION,
        "N": N,
        "master_seed": master_seed,
        "subset_size": _subset_size(len(population)),
        "downstream_kind": downstream_spec.kind,
        "strategy": strategy.to_dict(),
        "configs": cfgs.to_dict(),
        "ft_seeds": [e.ft_seed for e in entries],
    }
    return ShadowEnsemble(entries, challenge, population, downstream_spec.kind, manifest,
                          downstream_spec)


def refinetune_ensemble(
    ensemble: ShadowEnsemble,
    downstream_spec: DistributionSpec,
    strategy: FinetuneStrategy,
    cfgs: ShadowConfigs,
    *,
    workers: int | None = None,
) -> ShadowEnsemble:
    """Redo only the finetuning step, keeping pretrained models and member sets.

    Entry ``i`` is finetuned exactly as :func:`train_shadow_models` would do
    it with the same master seed, so the result equals a fresh training run
    whose pretraining recipe matches ``ensemble``.
    """
    master_seed = ensemble.manifest["master_seed"]
    workers = default_workers() if workers is None else workers
    jobs = [
        (i, e, downstream_spec, strategy, cfgs, master_seed)
        for i, e in enumerate(ensemble.entries)
    ]
    entries = _run_jobs(_refinetune_entry, jobs, workers)
    manifest = dict(ensemble.manifest)
    manifest.update(
        downstream_kind=downstream_spec.kind,
        strategy=strategy.to_dict(),
        configs=dict(cfgs.to_dict(), pretrain=ensemble.manifest["configs"]["pretrain"],
                     hidden=ensemble.manifest["configs"]["hidden"]),
        ft_seeds=[e.ft_seed for e in entries],
    )
    return ShadowEnsemble(entries, ensemble.challenge, ensemble.population, downstream_spec.kind,
                          manifest, downstream_spec)


def membership_bit(ensemble: ShadowEnsemble, entry_index: int, challenge_id: int) -> bool:
    """True (IN) iff the point was in entry ``entry_index``'s pretraining half."""
    if not 0 <= entry_index < len(ensemble.entries):
        raise IndexError(f"no shadow entry {entry_index}")
    if not np.any(ensemble.population.ids == challenge_id):
        raise MembershipIdError(f"id {challenge_id} is not in the population")
    return ensemble.entries[entry_index].is_member(challenge_id)


def rotate_targets(ensemble: ShadowEnsemble) -> Iterator[tuple[int, AttackerView]]:
    """Yield each entry once as the target with a view of all the others."""
    n = len(ensemble.entries)
    if n < 2:
        raise ConfigError("rotation needs at least two entries")
    for t in range(n):
        others = [i for i in range(n) if i != t]
        yield t, AttackerView([ensemble.entries[i] for i in others], others)


# -- persistence ----------------------------------------------------------


def save_ensemble(ensemble: ShadowEnsemble, directory) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_text(json.dumps(ensemble.manifest, indent=1, sort_keys=True))
    write_dataset_csv(ensemble.population, root / "population.csv")
    write_dataset_csv(ensemble.challenge, root / "challenges.csv")
    if ensemble.downstream_spec is not None:
        write_spec_json(ensemble.downstream_spec, root / "downstream_spec.json")
    for i, e in enumerate(ensemble.entries):
        d = root / f"entry_{i}"
        d.mkdir(exist_ok=True)
        save_model(e.pretrained, d / "pretrained.json")
        save_model(e.finetuned, d / "finetuned.json")
        (d / "members.csv").write_text("id\n" + "".join(f"{int(v)}\n" for v in e.member_ids))


def load_ensemble(directory) -> ShadowEnsemble:
    root = Path(directory)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read ensemble manifest in {root}: {exc}") from exc
    if manifest.get("schema_version") != ENSEMBLE_SCHEMA_VERSION:
        raise CheckpointError(f"unsupported ensemble schema_version {manifest.get('schema_version')!r}")
    try:
        population = read_dataset_csv(root / "population.csv")
        ch = read_dataset_csv(root / "challenges.csv")
    except OSError as exc:
        raise CheckpointError(f"missing dataset file: {exc}") from exc
    pos = {int(v): k for k, v in enumerate(population.ids)}
    challenge = ChallengeSet(ch.X, ch.y, ch.ids, pool_index=[pos[int(v)] for v in ch.ids])
    spec_path = root / "downstream_spec.json"
    spec = read_spec_json(spec_path) if spec_path.exists() else None

    entries = []
    for i, ft_seed in enumerate(manifest["ft_seeds"][: manifest["N"]]):
        d = root / f"entry_{i}"
        try:
            g = load_model(d / "pretrained.json")
            f = load_model(d / "finetuned.json")
            lines = (d / "members.csv").read_text().split()
        except (CheckpointError, OSError) as exc:
            raise CheckpointError(f"shadow entry {i}: {exc}") from exc
        if not lines or lines[0] != "id":
            raise CheckpointError(f"shadow entry {i}: malformed members.csv")
        entries.append(ShadowEntry(g, f, np.array([int(v) for v in lines[1:]], dtype=np.int64), ft_seed))
    if len(entries) != manifest["N"]:
        raise CheckpointError(f"manifest lists {manifest['N']} entries, found {len(entries)}")
    return ShadowEnsemble(entries, challenge, population, manifest["downstream_kind"], manifest, spec)


def ensembles_equal(a: ShadowEnsemble, b: ShadowEnsemble) -> bool:
    if a.manifest != b.manifest or a.downstream_kind != b.downstream_kind:
        return False
    if not (a.population.equals(b.population) and a.challenge.equals(b.challenge)):
        return False
    if len(a.entries) != len(b.entries):
        return False
    return all(
        models_equal(x.pretrained, y.pretrained)
        and models_equal(x.finetuned, y.finetuned)
        and np.array_equal(x.member_ids, y.member_ids)
        and x.ft_seed == y.ft_seed
        for x, y in zip(a.entries, b.entries)
    )
