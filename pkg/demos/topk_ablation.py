"""
Hiding confidences: a top-k ablation
====================================

The target may reveal only its k most confident labels. The attack stage is
rerun per k against one shared ensemble; only the masking changes.
"""

import tempfile

from tmiaudit.harness import DataConfig, ExperimentConfig, run_ablation

out = tempfile.mkdtemp(prefix="tmiaudit_topk_")

# ten superclasses, so the coarse task leaves room between k=1, k=5 and k=10
cfg = ExperimentConfig(
    data=DataConfig(K_coarse=10, pool_size=1000, n_challenges=60),
    N=17,
    ft_size=500,
    attacks=("tmi",),
    M=4,
    out_dir=out,
    workers=1,
)
for report in run_ablation(cfg, "topk", [1, 5, "all"]):
    s = report.summary["tmi"]
    print(f"{report.tag:>8}: AUC {s['auc']:.3f}  TPR@1%FPR {s['tpr_at_fpr_0p01']:.3f}")
print("artifacts in", out)
