import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tmiaudit.errors import MetricError
from tmiaudit.metrics import auc, balanced_accuracy, roc, summary, tpr_at_fpr, write_roc_csv

from oracles import brute_roc, mann_whitney, random_instance


def test_perfect_separation():
    c = roc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert (0.0, 1.0) in [(f, t) for f, t, _ in c.points]
    assert auc(c) == 1.0
    assert tpr_at_fpr(c, 0.0) == 1.0
    assert balanced_accuracy([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0


def test_all_equal_scores_is_diagonal():
    c = roc([0.3] * 6, [1, 0, 1, 0, 0, 1])
    assert [(f, t) for f, t, _ in c.points] == [(0.0, 0.0), (1.0, 1.0)]
    assert auc(c) == 0.5
    assert tpr_at_fpr(c, 0.0) == 0.0


def test_fpr_one_gives_full_tpr():
    s, y = random_instance(np.random.default_rng(3), 40)
    assert tpr_at_fpr(roc(s, y), 1.0) == 1.0


def test_single_class_rejected():
    with pytest.raises(MetricError):
        roc([0.1, 0.2], [1, 1])
    with pytest.raises(MetricError):
        balanced_accuracy([0.1, 0.2], [0, 0])


def test_mismatched_lengths_rejected():
    with pytest.raises(MetricError):
        roc([0.1, 0.2, 0.3], [0, 1])


def test_tpr_target_out_of_range():
    with pytest.raises(MetricError):
        tpr_at_fpr(roc([0.1, 0.2], [0, 1]), 1.5)


@pytest.mark.parametrize("seed", range(20))
def test_curve_matches_threshold_scan(seed):
    s, y = random_instance(np.random.default_rng(seed), 50)
    c = roc(s, y)
    assert c.points == brute_roc(s, y)
    assert c.positives == int(y.sum()) and c.negatives == int(len(y) - y.sum())


@pytest.mark.parametrize("seed", range(20))
def test_auc_matches_pairwise_oracle(seed):
    s, y = random_instance(np.random.default_rng(100 + seed), 60)
    assert abs(auc(roc(s, y)) - mann_whitney(s, y)) < 1e-12


def test_balanced_accuracy_of_independent_labels_near_half():
    rng = np.random.default_rng(7)
    s = rng.random(2000)
    y = rng.integers(0, 2, 2000)
    assert 0.45 <= balanced_accuracy(s, y) <= 0.6


def test_curve_invariants_hold():
    s, y = random_instance(np.random.default_rng(11), 80)
    c = roc(s, y)
    assert c.points[0][:2] == (0.0, 0.0) and c.points[-1][:2] == (1.0, 1.0)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)


@given(st.integers(0, 10_000))
def test_auc_invariant_under_monotone_maps(seed):
    s, y = random_instance(np.random.default_rng(seed), 30)
    base = auc(roc(s, y))
    assert auc(roc(np.exp(s), y)) == pytest.approx(base, abs=1e-12)
    assert auc(roc(3.0 * s - 2.0, y)) == pytest.approx(base, abs=1e-12)


@given(st.integers(0, 10_000))
def test_label_flip_duality(seed):
    s, y = random_instance(np.random.default_rng(seed), 30)
    assert abs(auc(roc(s, y)) + auc(roc(s, 1 - y)) - 1.0) < 1e-12


@given(st.integers(0, 10_000), st.lists(st.floats(0, 1), min_size=2, max_size=6))
def test_tpr_at_fpr_nondecreasing(seed, targets):
    s, y = random_instance(np.random.default_rng(seed), 30)
    c = roc(s, y)
    vals = [tpr_at_fpr(c, f) for f in sorted(targets)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_summary_fields_and_csv(tmp_path):
    s, y = random_instance(np.random.default_rng(5), 40)
    out = summary(s, y)
    for key in ("auc", "balanced_accuracy", "tpr_at_fpr_0p001", "tpr_at_fpr_0p01", "n_pos", "n_neg"):
        assert key in out
    path = tmp_path / "roc.csv"
    write_roc_csv(roc(s, y), path, header="manifest_sha256=abc")
    lines = path.read_text().splitlines()
    assert lines[0] == "# manifest_sha256=abc"
    assert lines[1] == "fpr,tpr,threshold"
    assert len(lines) - 2 == len(roc(s, y).points)
