import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from tmiaudit.errors import ConfigError, StageError
from tmiaudit.harness import (
    SCORE_COLUMNS,
    DataConfig,
    ExperimentConfig,
    attack_ensemble,
    config_hash,
    evaluate,
    generate_data,
    load_config,
    read_scores_csv,
    run_ablation,
    run_experiment,
    train_ensemble,
    write_scores_csv,
)
from tmiaudit.shadow import load_ensemble

from configs import TINY, tiny


def _same_rows(a, b):
    """Row lists equal, with NaN scores comparing equal to each other."""
    return [r[:3] + (repr(r[3]),) + r[4:] for r in a] == [r[:3] + (repr(r[3]),) + r[4:] for r in b]


def _tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def base_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("base")
    cfg = tiny(out)
    return cfg, run_experiment(cfg), out


def test_two_targets_five_challenges_counts(tmp_path):
    cfg = tiny(tmp_path, N=2, attacks=("tmi",), data=DataConfig(**dict(TINY["data"], n_challenges=5)))
    report = run_experiment(cfg)
    assert len(report.rows) == 2 * 5
    assert {r[2] for r in report.rows} == {"tmi"}


def test_report_completeness(base_run):
    cfg, report, _ = base_run
    keys = [(r[0], r[1], r[2]) for r in report.rows]
    assert len(keys) == len(set(keys)) == cfg.data.n_challenges * cfg.N * len(cfg.attacks)


def test_artifacts_written(base_run):
    cfg, report, out = base_run
    for name in ("config.json", "scores.csv", "report.json", "skipped.json", "models.json", "status.json"):
        assert (out / name).exists(), name
    for a in cfg.attacks:
        assert (out / f"roc_{a}.csv").read_text().startswith(f"# manifest_sha256={report.manifest_hash}")
    assert json.loads((out / "status.json").read_text())["complete"] is True
    assert (out / "scores.csv").read_text().splitlines()[1] == ",".join(SCORE_COLUMNS)


def test_resolved_config_replays(base_run, tmp_path):
    cfg, _, out = base_run
    echoed = json.loads((out / "config.json").read_text())
    replay = ExperimentConfig.from_dict(dict(echoed, out_dir=str(tmp_path), workers=1))
    assert config_hash(replay) == config_hash(cfg)
    run_experiment(replay)
    assert (tmp_path / "report.json").read_bytes() == (out / "report.json").read_bytes()
    assert (tmp_path / "scores.csv").read_bytes() == (out / "scores.csv").read_bytes()


def test_workers_do_not_change_results(base_run, tmp_path):
    cfg, _, out = base_run
    run_experiment(cfg.replace(out_dir=str(tmp_path), workers=2))
    assert (tmp_path / "report.json").read_bytes() == (out / "report.json").read_bytes()


def test_skipped_points_are_nan_with_reasons(base_run):
    _, report, out = base_run
    nan_rows = [r for r in report.rows if np.isnan(r[3])]
    listed = json.loads((out / "skipped.json").read_text())["skipped"]
    assert bool(nan_rows) == bool(listed)
    for cid, t, a, _, _ in nan_rows:
        assert any(s["challenge_id"] == cid and s["target_index"] == t for s in listed)


def test_scores_csv_round_trip(base_run, tmp_path):
    _, report, _ = base_run
    write_scores_csv(report, tmp_path / "s.csv")
    back = evaluate(read_scores_csv(tmp_path / "s.csv"))
    assert back.manifest_hash == report.manifest_hash
    assert back.summary == report.summary and back.per_target_auc == report.per_target_auc


def test_attack_stage_leaves_ensemble_untouched(base_run):
    cfg, _, out = base_run
    before = _tree_digest(out / "ensemble")
    ens = load_ensemble(out / "ensemble")
    attack_ensemble(ens, cfg)
    run_experiment(cfg, ensemble=ens)
    assert _tree_digest(out / "ensemble") == before


def test_unknown_fields_rejected():
    with pytest.raises(ConfigError, match="colour"):
        ExperimentConfig.from_dict({"colour": "red"})
    with pytest.raises(ConfigError, match="depth"):
        ExperimentConfig.from_dict({"data": {"depth": 3}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"attacks": ["tmi", "oracle"]})


def test_config_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"master_seed": 1, "out_dir": "from_file"}))
    env = {"TMIAUDIT_OUT_DIR": "from_env", "TMIAUDIT_WORKERS": "3"}
    cfg = load_config(path, env=env)
    assert cfg.out_dir == "from_env" and cfg.workers == 3 and cfg.master_seed == 1
    cfg = load_config(path, seed=9, out="from_flag", env=env)
    assert cfg.out_dir == "from_flag" and cfg.master_seed == 9
    assert "out_dir" not in cfg.to_dict() and "workers" not in cfg.to_dict()


def test_stage_failure_names_stage(tmp_path):
    cfg = tiny(tmp_path, ft_size=0)
    with pytest.raises(StageError, match="train-shadows"):
        run_experiment(cfg)
    status = json.loads((tmp_path / "status.json").read_text())
    assert status["complete"] is False and status["stage"] == "train-shadows"


def test_topk_all_reproduces_base(base_run, tmp_path):
    cfg, report, out = base_run
    ens = load_ensemble(out / "ensemble")
    arm_cfg = cfg.replace(out_dir=str(tmp_path))
    k_all, k_full = run_ablation(arm_cfg, "topk", ["all", cfg.data.K_coarse], ensemble=ens)
    assert _same_rows(k_all.rows, report.rows)
    assert _same_rows([r for r in k_full.rows if r[2] == "tmi"], [r for r in report.rows if r[2] == "tmi"])
    assert (tmp_path / "ablation_topk_all" / "report.json").exists()


def test_augmentation_arms_meta_rows(base_run, tmp_path):
    cfg, _, out = base_run
    ens = load_ensemble(out / "ensemble")
    r1, r8 = run_ablation(cfg.replace(out_dir=str(tmp_path), attacks=("tmi",)), "augmentations", [1, 8], ensemble=ens)
    n_attacker = cfg.N - 1
    assert r1.meta_rows_per_point == n_attacker and r8.meta_rows_per_point == 8 * n_attacker


def test_meta_arch_arms_score_in_unit_interval(base_run, tmp_path):
    cfg, _, out = base_run
    ens = load_ensemble(out / "ensemble")
    arms = [{"kind": k, "epochs": 10} for k in ("mlp", "logistic", "linear_svm", "knn")]
    reports = run_ablation(cfg.replace(out_dir=str(tmp_path), attacks=("tmi",)), "meta_arch", arms, ensemble=ens)
    for r in reports:
        s, _ = r.scores("tmi")
        assert np.all((s >= 0) & (s <= 1))
    assert [r.tag for r in reports] == [f"meta_arch={a['kind']}" for a in arms]


def test_unknown_ablation_kind(base_run):
    cfg, _, _ = base_run
    with pytest.raises(ConfigError):
        run_ablation(cfg, "dropout", [1])


def test_data_generation_is_deterministic(tmp_path):
    a, b = generate_data(tiny(tmp_path)), generate_data(tiny(tmp_path))
    assert a.population.equals(b.population) and a.challenges.equals(b.challenges)
    assert a.downstream_spec.equals(b.downstream_spec)


def test_null_control_scores_at_chance(tmp_path):
    cfg = tiny(
        tmp_path, N=8, null_control=True, attacks=("tmi", "lira_direct"),
        data=DataConfig(**dict(TINY["data"], n_challenges=60)),
        pretrain=tiny(tmp_path).pretrain.replace(epochs=30),
    )
    ens = train_ensemble(cfg)
    report = attack_ensemble(ens, cfg)
    for a in cfg.attacks:
        assert 0.4 <= report.auc(a) <= 0.6, (a, report.auc(a))
