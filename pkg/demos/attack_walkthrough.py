"""
Scoring one target model
========================

Train a small shadow ensemble, hold one entry out as the target, and score a
handful of challenge points with each attack. Members of the target's
pretraining half should tend to score higher.
"""

import numpy as np

from tmiaudit.attacks import MetaArch, adapted_lira_log, direct_lira_log, tmi_score
from tmiaudit.datasets import derive_task, designate_challenges, make_pretrain_spec, sample_population
from tmiaudit.nn_core import TrainConfig
from tmiaudit.shadow import ShadowConfigs, rotate_targets, train_shadow_models
from tmiaudit.training import FinetuneStrategy

spec = make_pretrain_spec(8, 10, 5, separation=1.5, seed=0, fine_spread=0.3)
pool = sample_population(spec, 400, seed=1)
challenges = designate_challenges(pool, 12, seed=2)
coarse = derive_task(spec, "coarse", seed=3)

# nine entries: each target is attacked with the other eight
cfgs = ShadowConfigs(pretrain=TrainConfig(epochs=150, batch_size=32), finetune=TrainConfig(epochs=20, batch_size=32),
                     ft_size=300, hidden=(64, 8))
ens = train_shadow_models(pool, challenges, coarse, 9, FinetuneStrategy(), cfgs, 0, pretrain_spec=spec, workers=1)

t, view = next(rotate_targets(ens))
target = ens.entries[t]
arch = MetaArch(epochs=100)
print(f"target entry {t}, attacker sees entries {view.indices}")
print(f"{'id':>20} {'IN':>3} {'tmi':>6} {'adapted':>8} {'direct':>8}")
for pt in challenges:
    n_in = int(view.membership(pt.id).sum())
    if not 2 <= n_in <= len(view) - 2:
        continue  # LiRA needs two shadows on each side
    # two views: a 2x2 covariance is still estimable from four shadows per side
    tmi = tmi_score(target.finetuned, pt, view, M=2, arch=arch)
    lira = adapted_lira_log(target.finetuned, pt, view, M=2)
    direct = direct_lira_log(target.pretrained, pt, view, M=2)
    print(f"{pt.id:>20} {int(target.is_member(pt.id)):>3} {tmi:6.3f} {lira:8.2f} {direct:8.2f}")

# LiRA columns are log likelihood ratios; TMI is a probability of membership.
# Saturated confidences leave near-zero shadow variance, hence the extreme ratios.
print("IN rate among shown points:", np.mean([target.is_member(p.id) for p in challenges]))
