"""
The downstream task ladder
==========================

One pretraining mixture and its three downstream relatives: coarse labels
over the same points, fresh classes in the same space, and fresh classes in
a rotated, stretched space. A model pretrained on the fine labels is reused
with a new head for each.
"""

import numpy as np

from tmiaudit.datasets import derive_task, make_pretrain_spec, sample_population
from tmiaudit.nn_core import TrainConfig, accuracy
from tmiaudit.training import FinetuneStrategy, finetune, pretrain

# twenty fine classes in five superclasses of four
spec = make_pretrain_spec(16, 20, 5, separation=1.5, seed=0, fine_spread=0.3)
print("superclass of fine class 7:", spec.superclass_map[7])

# pretrain on half of a 4000-point pool, as every shadow model does
pool = sample_population(spec, 4000, seed=1)
half = pool.subset(np.random.default_rng(2).permutation(len(pool))[:2000])
g = pretrain(spec, half, TrainConfig(epochs=100, seed=3), hidden=(128, 128, 8))
print(f"pretrained: train acc {accuracy(g, half.X, half.y):.3f}")

# the head is all that changes under feature extraction
for kind in ("coarse", "disjoint", "dissimilar"):
    task = derive_task(spec, kind, seed=4)
    train = sample_population(task, 1000, seed=5, namespace="demo-ft")
    test = sample_population(task, 2000, seed=6, namespace="demo-test")
    f = finetune(g, train, FinetuneStrategy(), TrainConfig(epochs=20, seed=7))
    chance = 1 / task.n_labels
    print(f"{kind:>10}: {task.n_labels} classes, test acc {accuracy(f, test.X, test.y):.3f} (chance {chance:.2f})")
