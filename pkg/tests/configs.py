"""Small experiment configurations shared by the harness, CLI and acceptance tests."""

TINY = {
    "data": {"feature_dim": 6, "K_PT": 6, "K_coarse": 3, "pool_size": 200, "n_challenges": 10},
    "N": 6,
    "pretrain": {"epochs": 5, "batch_size": 32},
    "finetune": {"epochs": 2, "batch_size": 32},
    "ft_size": 100,
    "hidden": [16, 8],
    "M": 2,
    "meta": {"epochs": 10},
    "workers": 1,
}


def tiny(out_dir, **changes):
    """``TINY`` as an :class:`ExperimentConfig` writing to ``out_dir``."""
    from tmiaudit.harness import ExperimentConfig

    cfg = ExperimentConfig.from_dict(dict(TINY, out_dir=str(out_dir)))
    return cfg.replace(**changes) if changes else cfg
