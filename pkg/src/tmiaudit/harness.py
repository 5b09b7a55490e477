"""Experiment orchestration: data, shadow ensemble, attacks, metrics, artifacts.

A run plays the membership game exhaustively. Every shadow entry takes a
turn as the target while the remaining entries form the attacker's view, and
every configured attack scores every challenge point against that target.
Scores are pooled into one ROC per attack; per-target AUCs are reported too.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from ._rng import child_int, child_rng
from .attacks import (
    DEFAULT_AUG_STRENGTH,
    DEFAULT_M,
    DEFAULT_RIDGE,
    MetaArch,
    global_tmi_from_arrays,
    lira_from_arrays,
    scale,
    tmi_from_arrays,
    topk_mask,
)
from .datasets import (
    augment_views,
    derive_task,
    designate_challenges,
    make_pretrain_spec,
    sample_population,
    write_dataset_csv,
    write_spec_json,
)
from .errors import ConfigError, MetricError, StageError, TMIError
from .nn_core import TrainConfig, accuracy, forward, softmax
from .shadow import (
    ShadowConfigs,
    ShadowEnsemble,
    ShadowEntry,
    default_workers,
    load_ensemble,
    save_ensemble,
    train_shadow_models,
)
from .training import DPConfig, FinetuneStrategy

log = logging.getLogger(__name__)

ATTACKS = ("tmi", "lira_adapted", "lira_direct", "tmi_global")
LIRA_ATTACKS = ("lira_adapted", "lira_direct")
ABLATION_KINDS = ("topk", "meta_arch", "augmentations")
SCORE_COLUMNS = ("challenge_id", "target_index", "attack_name", "score", "true_membership_bit")
ENV_OUT_DIR = "TMIAUDIT_OUT_DIR"
ENV_WORKERS = "TMIAUDIT_WORKERS"


# -- configuration ----------------------------------------------------------


@dataclass
class DataConfig:
    feature_dim: int = 16
    K_PT: int = 20
    K_coarse: int = 5
    separation: float = 1.5
    fine_spread: float = 0.3
    cov_scale: float = 1.0
    pool_size: int = 4000
    n_challenges: int = 200
    downstream: str = "coarse"
    downstream_classes: int | None = None


@dataclass
class ExperimentConfig:
    """Everything that determines a run.

    ``out_dir`` and ``workers`` only say where and how fast to run, so they
    are left out of the echoed ``config.json``. The defaults are the
    deliberately overfit recipe: narrow penultimate layer, long pretraining.
    """

    data: DataConfig = field(default_factory=DataConfig)
    N: int = 33
    strategy: str = "feature_extraction"
    strategy_k: int | None = None
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=300))
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20))
    ft_size: int = 1000
    hidden: tuple = (128, 128, 8)
    dp: DPConfig | None = None
    attacks: tuple = ATTACKS
    M: int = DEFAULT_M
    aug_strength: float = DEFAULT_AUG_STRENGTH
    topk: int | None = None
    meta: MetaArch = field(default_factory=MetaArch)
    global_meta: MetaArch = field(default_factory=lambda: MetaArch(kind="knn"))
    ridge: float = DEFAULT_RIDGE
    fpr_targets: tuple = (0.001, 0.01)
    null_control: bool = False
    master_seed: int = 0
    out_dir: str = "tmiaudit_out"
    workers: int | None = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.attacks = tuple(self.attacks)
        self.fpr_targets = tuple(float(f) for f in self.fpr_targets)
        bad = [a for a in self.attacks if a not in ATTACKS]
        if bad or not self.attacks:
            raise ConfigError(f"attacks must be a nonempty subset of {ATTACKS}, got {list(self.attacks)}")
        if len(set(self.attacks)) != len(self.attacks):
            raise ConfigError("attacks must not repeat")
        if self.N < 2:
            raise ConfigError("N must be at least 2")
        if self.M < 1:
            raise ConfigError("M must be at least 1")
        if self.aug_strength < 0 or self.ridge <= 0:
            raise ConfigError("aug_strength must be nonnegative and ridge positive")
        if self.topk is not None and self.topk < 1:
            raise ConfigError("topk must be at least 1")
        if self.data.n_challenges > self.data.pool_size:
            raise ConfigError("n_challenges exceeds pool_size")
        self.strategy_obj()  # validates kind and k

    def strategy_obj(self) -> FinetuneStrategy:
        return FinetuneStrategy(self.strategy, self.strategy_k)

    def shadow_configs(self) -> ShadowConfigs:
        return ShadowConfigs(self.pretrain, self.finetune, self.ft_size, self.hidden, self.dp)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self, *, include_runtime: bool = False) -> dict:
        d = {
            "data": dataclasses.asdict(self.data),
            "N": self.N,
            "strategy": self.strategy,
            "strategy_k": self.strategy_k,
            "pretrain": dataclasses.asdict(self.pretrain),
            "finetune": dataclasses.asdict(self.finetune),
            "ft_size": self.ft_size,
            "hidden": list(self.hidden),
            "dp": None if self.dp is None else self.dp.to_dict(),
            "attacks": list(self.attacks),
            "M": self.M,
            "aug_strength": self.aug_strength,
            "topk": self.topk,
            "meta": self.meta.to_dict(),
            "global_meta": self.global_meta.to_dict(),
            "ridge": self.ridge,
            "fpr_targets": list(self.fpr_targets),
            "null_control": self.null_control,
            "master_seed": self.master_seed,
        }
        if include_runtime:
            d.update(out_dir=self.out_dir, workers=self.workers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        _reject_unknown(d, {f.name for f in dataclasses.fields(cls)}, "config")
        nested = {
            "data": DataConfig,
            "pretrain": TrainConfig,
            "finetune": TrainConfig,
            "dp": DPConfig,
            "meta": MetaArch,
            "global_meta": MetaArch,
        }
        for key, typ in nested.items():
            if key in d and d[key] is not None:
                d[key] = _build(typ, d[key], key)
        try:
            return cls(**d)
        except TMIError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(unknown)}")


def _build(typ, value, where):
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a JSON object")
    _reject_unknown(value, {f.name for f in dataclasses.fields(typ)}, where)
    try:
        return typ(**value)
    except TMIError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path=None, *, seed: int | None = None, out: str | None = None, env=None) -> ExperimentConfig:
    """Read a JSON config and apply overrides: file, then environment, then flags."""
    env = os.environ if env is None else env
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    cfg = ExperimentConfig.from_dict(raw)
    changes = {}
    if env.get(ENV_OUT_DIR):
        changes["out_dir"] = env[ENV_OUT_DIR]
    if env.get(ENV_WORKERS):
        try:
            changes["workers"] = max(1, int(env[ENV_WORKERS]))
        except ValueError as exc:
            raise ConfigError(f"{ENV_WORKERS} must be an integer") from exc
    if seed is not None:
        changes["master_seed"] = int(seed)
    if out is not None:
        changes["out_dir"] = str(out)
    return cfg.replace(**changes) if changes else cfg


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(cfg.to_dict()).encode()).hexdigest()


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()


# -- stages -----------------------------------------------------------------


@dataclass
class ExperimentData:
    pretrain_spec: object
    downstream_spec: object
    population: object
    challenges: object


def _stage(name: str, seed: int):
    """Decorator-free helper: wrap a stage call so failures carry context."""

    def run(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, seed, exc) from exc

    return run


def generate_data(cfg: ExperimentConfig) -> ExperimentData:
    """Population pool, challenge points and the downstream distribution."""
    dc, s = cfg.data, cfg.master_seed
    spec = make_pretrain_spec(
        dc.feature_dim, dc.K_PT, dc.K_coarse, dc.separation, child_int(s, "spec"),
        fine_spread=dc.fine_spread, cov_scale=dc.cov_scale,
    )
    population = sample_population(spec, dc.pool_size, child_int(s, "population"))
    challenges = designate_challenges(population, dc.n_challenges, child_int(s, "challenges"))
    downstream = derive_task(spec, dc.downstream, child_int(s, "downstream"), n_classes=dc.downstream_classes)
    return ExperimentData(spec, downstream, population, challenges)


def save_data(data: ExperimentData, directory) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    write_spec_json(data.pretrain_spec, root / "pretrain_spec.json")
    write_spec_json(data.downstream_spec, root / "downstream_spec.json")
    write_dataset_csv(data.population, root / "population.csv")
    write_dataset_csv(data.challenges, root / "challenges.csv")


def train_ensemble(cfg: ExperimentConfig, data: ExperimentData | None = None) -> ShadowEnsemble:
    data = data or generate_data(cfg)
    ens = train_shadow_models(
        data.population,
        data.challenges,
        data.downstream_spec,
        cfg.N,
        cfg.strategy_obj(),
        cfg.shadow_configs(),
        child_int(cfg.master_seed, "shadows"),
        pretrain_spec=data.pretrain_spec,
        workers=cfg.workers if cfg.workers is not None else default_workers(),
    )
    if cfg.null_control:
        ens = scramble_membership(ens, child_int(cfg.master_seed, "null-control"))
    return ens


def scramble_membership(ensemble: ShadowEnsemble, seed: int) -> ShadowEnsemble:
    """Replace every entry's recorded member set with an unrelated random half.

    The models are untouched, so recorded membership carries no information
    about training and every attack should score at chance.
    """
    n = len(ensemble.population)
    entries = []
    for i, e in enumerate(ensemble.entries):
        idx = child_rng(seed, "scramble", i).choice(n, len(e.member_ids), replace=False)
        entries.append(ShadowEntry(e.pretrained, e.finetuned, ensemble.population.ids[idx], e.ft_seed))
    manifest = dict(ensemble.manifest, null_control_seed=seed)
    return dataclasses.replace(ensemble, entries=entries, manifest=manifest)


# -- attack stage -------------------------------------------------------------


@dataclass
class ViewCache:
    """Prediction vectors of every entry on every view of every challenge point."""

    finetuned: np.ndarray  # [N, C, M, K_ft]
    pretrained_true: np.ndarray  # [N, C, M] confidence at the true label
    member: np.ndarray  # [N, C]
    challenge_ids: np.ndarray
    labels: np.ndarray


def compute_views(ensemble: ShadowEnsemble, cfg: ExperimentConfig) -> ViewCache:
    ch = ensemble.challenge
    C, M = len(ch), cfg.M
    V = augment_views(ch.X, M, cfg.aug_strength, child_int(cfg.master_seed, "augment"))
    flat = V.reshape(C * M, -1)
    ft, pt = [], []
    for e in ensemble.entries:
        p = softmax(forward(e.finetuned, flat)).reshape(C, M, -1)
        ft.append(p if cfg.topk is None else topk_mask(p, min(cfg.topk, p.shape[-1])))
        q = softmax(forward(e.pretrained, flat)).reshape(C, M, -1)
        pt.append(q[np.arange(C), :, ch.y])
    return ViewCache(np.stack(ft), np.stack(pt), ensemble.membership_matrix(), ch.ids.copy(), ch.y.copy())


def _attack_target(args):
    t, cache, cfg = args
    N, C = cache.member.shape
    others = [i for i in range(N) if i != t]
    mem = cache.member[others]  # [n, C]
    n_in = mem.sum(axis=0)
    n_out = len(others) - n_in
    truth = cache.member[t]
    scores = {a: np.full(C, np.nan) for a in cfg.attacks}
    skipped = []

    per_point_ok = (n_in >= 1) & (n_out >= 1)
    lira_ok = (n_in >= 2) & (n_out >= 2)
    for c in np.flatnonzero(~per_point_ok):
        skipped.append((int(cache.challenge_ids[c]), t, "per-point", f"degenerate split: {int(n_in[c])} IN, {int(n_out[c])} OUT"))
    for c in np.flatnonzero(per_point_ok & ~lira_ok):
        skipped.append((int(cache.challenge_ids[c]), t, "lira", f"too few samples for a Gaussian fit: {int(n_in[c])} IN, {int(n_out[c])} OUT"))

    shadow_ft = cache.finetuned[others].transpose(1, 0, 2, 3)  # [C, n, M, K]
    target_ft = cache.finetuned[t]  # [C, M, K]
    if "tmi" in cfg.attacks:
        ok = np.flatnonzero(per_point_ok)
        if len(ok):
            scores["tmi"][ok] = tmi_from_arrays(
                shadow_ft[ok], mem[:, ok].T, target_ft[ok], cfg.meta,
                [int(v) for v in cache.challenge_ids[ok]], len(others),
            )
    if "tmi_global" in cfg.attacks:
        scores["tmi_global"][:] = global_tmi_from_arrays(shadow_ft, mem.T, target_ft, cfg.global_meta, len(others))
    if "lira_adapted" in cfg.attacks:
        y_hat = np.argmax(target_ft[:, 0, :], axis=1)
        for c in np.flatnonzero(lira_ok):
            obs = scale(target_ft[c, :, y_hat[c]])
            stats = scale(shadow_ft[c, :, :, y_hat[c]])
            scores["lira_adapted"][c] = lira_from_arrays(obs, stats, mem[:, c], cfg.ridge, int(cache.challenge_ids[c]))
    if "lira_direct" in cfg.attacks:
        for c in np.flatnonzero(lira_ok):
            obs = scale(cache.pretrained_true[t, c])
            stats = scale(cache.pretrained_true[others, c])
            scores["lira_direct"][c] = lira_from_arrays(obs, stats, mem[:, c], cfg.ridge, int(cache.challenge_ids[c]))
    return t, scores, truth, skipped


@dataclass
class AttackReport:
    """Scores of one run plus their pooled and per-target summaries."""

    rows: list  # (challenge_id, target_index, attack, score, member_bit)
    manifest_hash: str
    summary: dict = field(default_factory=dict)
    per_target_auc: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)
    tag: str | None = None
    meta_rows_per_point: int | None = None

    def scores(self, attack: str) -> tuple[np.ndarray, np.ndarray]:
        """Non-skipped ``(scores, member_bits)`` of one attack, in row order."""
        s = np.array([r[3] for r in self.rows if r[2] == attack], dtype=np.float64)
        y = np.array([r[4] for r in self.rows if r[2] == attack], dtype=np.int64)
        keep = ~np.isnan(s)
        return s[keep], y[keep]

    def auc(self, attack: str) -> float:
        return self.summary[attack]["auc"]

    def to_dict(self) -> dict:
        return {
            "manifest_hash": self.manifest_hash,
            "tag": self.tag,
            "n_rows": len(self.rows),
            "attacks": self.summary,
            "per_target_auc": self.per_target_auc,
            "meta_rows_per_point": self.meta_rows_per_point,
            "complete": True,
        }


def attack_ensemble(ensemble: ShadowEnsemble, cfg: ExperimentConfig, cache: ViewCache | None = None) -> AttackReport:
    """Rotate every entry into the target role and score all challenges."""
    cache = cache or compute_views(ensemble, cfg)
    N = len(ensemble.entries)
    workers = cfg.workers if cfg.workers is not None else default_workers()
    jobs = [(t, cache, cfg) for t in range(N)]
    if workers > 1 and N > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_attack_target, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_attack_target(job))
            log.info("target %d/%d scored", job[0] + 1, N)
    rows, skipped = [], []
    for t, scores, truth, skip in results:
        skipped.extend(skip)
        for c, cid in enumerate(cache.challenge_ids):
            for a in cfg.attacks:
                rows.append((int(cid), t, a, float(scores[a][c]), int(truth[c])))
    for cid, t, kind, reason in skipped:
        log.info("skipped challenge %d for target %d (%s): %s", cid, t, kind, reason)
    report = AttackReport(rows, manifest_hash(ensemble.manifest), skipped=skipped,
                          meta_rows_per_point=(N - 1) * cfg.M)
    evaluate(report, cfg.fpr_targets)
    return report


# -- metrics stage ------------------------------------------------------------


def _fpr_key(f: float) -> str:
    return "tpr_at_fpr_" + repr(float(f)).replace(".", "p")


def evaluate(report: AttackReport, fpr_targets=(0.001, 0.01)) -> AttackReport:
    """Fill in pooled summaries and per-target AUCs from the report's rows."""
    attacks = list(dict.fromkeys(r[2] for r in report.rows))
    report.summary, report.per_target_auc = {}, {}
    for a in attacks:
        rows = [r for r in report.rows if r[2] == a]
        s = np.array([r[3] for r in rows], dtype=np.float64)
        y = np.array([r[4] for r in rows], dtype=np.int64)
        t = np.array([r[1] for r in rows], dtype=np.int64)
        keep = ~np.isnan(s)
        entry = {"n_skipped": int((~keep).sum())}
        try:
            entry.update(metrics.summary(s[keep], y[keep]))
            curve = metrics.roc(s[keep], y[keep])
            for f in fpr_targets:
                entry[_fpr_key(f)] = metrics.tpr_at_fpr(curve, f)
        except MetricError as exc:
            entry.update(auc=None, error=str(exc))
        report.summary[a] = entry
        per = {}
        for target in sorted(set(t.tolist())):
            m = keep & (t == target)
            try:
                per[str(target)] = metrics.auc(metrics.roc(s[m], y[m]))
            except MetricError:
                per[str(target)] = None
        report.per_target_auc[a] = per
    return report


# -- persistence ----------------------------------------------------------------


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def write_scores_csv(report: AttackReport, path) -> None:
    buf = io.StringIO()
    buf.write(f"# manifest_sha256={report.manifest_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_COLUMNS)
    for cid, t, a, s, b in report.rows:
        w.writerow([cid, t, a, _fmt(s), b])
    Path(path).write_text(buf.getvalue())


def read_scores_csv(path) -> AttackReport:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# manifest_sha256="):
        raise ConfigError(f"{path} lacks the manifest hash header")
    mhash = lines[0].split("=", 1)[1].strip()
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header is None or tuple(header) != SCORE_COLUMNS:
        raise ConfigError(f"{path} has unexpected columns {header}")
    rows = [(int(c), int(t), a, float(s), int(b)) for c, t, a, s, b in reader]
    return AttackReport(rows, mhash)


def write_report(report: AttackReport, out_dir) -> None:
    """``report.json`` plus one ``roc_<attack>.csv`` per attack."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "report.json").write_text(canonical_json(report.to_dict()))
    for a in report.summary:
        s, y = report.scores(a)
        try:
            curve = metrics.roc(s, y)
        except MetricError:
            continue
        metrics.write_roc_csv(curve, root / f"roc_{a}.csv", header=f"manifest_sha256={report.manifest_hash}")


def write_skipped(report: AttackReport, path) -> None:
    Path(path).write_text(canonical_json({
        "manifest_hash": report.manifest_hash,
        "skipped": [{"challenge_id": c, "target_index": t, "attacks": k, "reason": r}
                    for c, t, k, r in report.skipped],
    }))


def model_stats(ensemble: ShadowEnsemble, cfg: ExperimentConfig, n_test: int = 2000) -> dict:
    """Mean accuracies: pretrained on members / non-members, finetuned on fresh downstream data."""
    pop = ensemble.population
    stats = {"pretrain_member_acc": [], "pretrain_nonmember_acc": [], "downstream_test_acc": []}
    test = None
    if ensemble.downstream_spec is not None:
        test = sample_population(ensemble.downstream_spec, n_test, child_int(cfg.master_seed, "eval-test"),
                                 namespace="eval-test")
    for e in ensemble.entries:
        m = e.members_of(pop.ids)
        stats["pretrain_member_acc"].append(accuracy(e.pretrained, pop.X[m], pop.y[m]))
        stats["pretrain_nonmember_acc"].append(accuracy(e.pretrained, pop.X[~m], pop.y[~m]))
        if test is not None:
            stats["downstream_test_acc"].append(accuracy(e.finetuned, test.X, test.y))
    out = {k: (float(np.mean(v)) if v else None) for k, v in stats.items()}
    out["manifest_hash"] = manifest_hash(ensemble.manifest)
    return out


def _mark(out_dir: Path, complete: bool, stage: str | None = None, error: str | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "status.json").write_text(canonical_json({"complete": complete, "stage": stage, "error": error}))


# -- drivers ------------------------------------------------------------------


def run_attack_stage(cfg: ExperimentConfig, ensemble: ShadowEnsemble, out_dir=None, *, tag=None) -> AttackReport:
    """Attack an existing ensemble and write config, scores, report and ROC files."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _mark(out, False, "attack")
    (out / "config.json").write_text(canonical_json(cfg.to_dict()))
    report = _stage("attack", cfg.master_seed)(attack_ensemble, ensemble, cfg)
    report.tag = tag
    _stage("eval", cfg.master_seed)(_write_all, report, ensemble, cfg, out)
    _mark(out, True)
    return report


def _write_all(report, ensemble, cfg, out):
    write_scores_csv(report, out / "scores.csv")
    write_skipped(report, out / "skipped.json")
    write_report(report, out)
    (out / "models.json").write_text(canonical_json(model_stats(ensemble, cfg)))


def run_experiment(cfg: ExperimentConfig, ensemble: ShadowEnsemble | None = None) -> AttackReport:
    """Data, shadows, attacks and metrics, with every artifact under ``cfg.out_dir``.

    Passing ``ensemble`` skips data generation and training. On failure the
    run's ``status.json`` names the failing stage and the error is re-raised
    as a :class:`~tmiaudit.errors.StageError`.
    """
    out = Path(cfg.out_dir)
    try:
        if ensemble is None:
            _mark(out, False, "gen-data")
            data = _stage("gen-data", cfg.master_seed)(generate_data, cfg)
            _stage("gen-data", cfg.master_seed)(save_data, data, out / "data")
            _mark(out, False, "train-shadows")
            ensemble = _stage("train-shadows", cfg.master_seed)(train_ensemble, cfg, data)
            _stage("train-shadows", cfg.master_seed)(save_ensemble, ensemble, out / "ensemble")
        return run_attack_stage(cfg, ensemble, out)
    except StageError as exc:
        _mark(out, False, exc.stage, str(exc))
        raise


def _arm_config(cfg: ExperimentConfig, kind: str, arm):
    if kind == "topk":
        k = None if arm in (None, "all") else int(arm)
        return cfg.replace(topk=k), f"topk={'all' if k is None else k}"
    if kind == "meta_arch":
        arch = arm if isinstance(arm, MetaArch) else _build(MetaArch, arm, "meta_arch arm")
        return cfg.replace(meta=arch), f"meta_arch={arch.kind}"
    if kind == "augmentations":
        return cfg.replace(M=int(arm)), f"M={int(arm)}"
    raise ConfigError(f"unknown ablation kind {kind!r}; expected one of {ABLATION_KINDS}")


def run_ablation(cfg: ExperimentConfig, kind: str, arms, ensemble: ShadowEnsemble | None = None) -> list:
    """One report per arm; only the attack stage varies, the ensemble is shared.

    ``arms`` are top-k values (``"all"`` for the identity mask), metaclassifier
    architectures (:class:`MetaArch` or dicts), or augmentation counts.
    """
    if kind not in ABLATION_KINDS:
        raise ConfigError(f"unknown ablation kind {kind!r}; expected one of {ABLATION_KINDS}")
    arms = list(arms)
    if not arms:
        raise ConfigError("an ablation needs at least one arm")
    configs = [_arm_config(cfg, kind, a) for a in arms]
    out = Path(cfg.out_dir)
    if ensemble is None:
        data = _stage("gen-data", cfg.master_seed)(generate_data, cfg)
        ensemble = _stage("train-shadows", cfg.master_seed)(train_ensemble, cfg, data)
        _stage("train-shadows", cfg.master_seed)(save_ensemble, ensemble, out / "ensemble")
    reports = []
    for arm_cfg, tag in configs:
        arm_dir = out / ("ablation_" + tag.replace("=", "_"))
        reports.append(run_attack_stage(arm_cfg, ensemble, arm_dir, tag=tag))
    return reports


def load_run_ensemble(out_dir) -> ShadowEnsemble:
    path = Path(out_dir) / "ensemble"
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"no shadow ensemble at {path}; run train-shadows first")
    return load_ensemble(path)
