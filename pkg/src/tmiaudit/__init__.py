"""Membership inference against the pretraining data of finetuned models.

Synthetic Gaussian-mixture tasks, a small numpy MLP with layer freezing and
DP-SGD, shadow-model ensembles, and three attacks: the TMI metaclassifier,
adapted LiRA and direct LiRA on the pretrained models.
"""

from .attacks import (
    MetaArch,
    MetaDataset,
    adapted_lira,
    build_meta_dataset,
    direct_lira,
    fit_gaussian,
    global_tmi,
    query_views,
    scale,
    tmi_score,
    topk_mask,
    train_metaclassifier,
)
from .datasets import (
    ChallengeSet,
    Dataset,
    DistributionSpec,
    Point,
    augment,
    derive_task,
    designate_challenges,
    make_pretrain_spec,
    sample_population,
)
from .harness import AttackReport, ExperimentConfig, run_ablation, run_experiment
from .metrics import RocCurve, auc, balanced_accuracy, roc, tpr_at_fpr
from .nn_core import Model, TrainConfig, forward, init_model, softmax, train
from .shadow import AttackerView, ShadowConfigs, ShadowEnsemble, rotate_targets, train_shadow_models
from .training import DPConfig, FinetuneStrategy, dp_finetune, finetune, pretrain

__version__ = "0.1.0"
