import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tmiaudit.datasets import (
    Dataset,
    augment,
    augment_views,
    derive_task,
    designate_challenges,
    make_pretrain_spec,
    read_dataset_csv,
    read_spec_json,
    sample_population,
    write_dataset_csv,
    write_spec_json,
)
from tmiaudit.errors import SpecError


@pytest.fixture(scope="module")
def spec():
    return make_pretrain_spec(8, 20, 5, 3.0, seed=7)


def test_default_grouping_is_index_mod_coarse(spec):
    assert np.array_equal(spec.superclass_map, np.arange(20) % 5)
    assert spec.fine_class_count == 20 and spec.n_superclasses == 5


def test_zero_separation_puts_centers_at_origin():
    s = make_pretrain_spec(8, 20, 5, 0.0, seed=1)
    assert np.all(s.superclass_centers == 0.0)


def test_spec_is_deterministic(spec):
    assert spec.equals(make_pretrain_spec(8, 20, 5, 3.0, seed=7))
    assert not spec.equals(make_pretrain_spec(8, 20, 5, 3.0, seed=8))


def test_centers_lie_on_sphere(spec):
    assert np.allclose(np.linalg.norm(spec.superclass_centers, axis=1), 3.0)


def test_indivisible_class_counts_rejected():
    with pytest.raises(SpecError):
        make_pretrain_spec(8, 21, 5, 1.0, seed=0)


def test_empty_pool_rejected(spec):
    with pytest.raises(SpecError):
        sample_population(spec, 0, seed=0)


def test_class_frequencies_are_uniform(spec):
    data = sample_population(spec, 50_000, seed=3)
    freq = np.bincount(data.y, minlength=20) / len(data)
    assert np.all(np.abs(freq - 1 / 20) <= 0.02)


def test_class_means_within_statistical_bound(spec):
    data = sample_population(spec, 50_000, seed=4)
    for c in range(20):
        rows = data.X[data.y == c]
        bound = 3 * spec.class_cov_scale / np.sqrt(len(rows))
        assert np.max(np.abs(rows.mean(axis=0) - spec.class_means[c])) <= bound


def test_population_ids_unique_and_stable(spec):
    a = sample_population(spec, 500, seed=11)
    b = sample_population(spec, 500, seed=11)
    assert len(np.unique(a.ids)) == 500
    assert a.equals(b)


def test_coarse_relabel_single_point(spec):
    coarse = derive_task(spec, "coarse", seed=0)
    assert coarse.label_map[7] == 7 % 5


@given(st.integers(0, 2**32 - 1))
def test_coarse_relabel_commutes_with_sampling(seed):
    spec = make_pretrain_spec(4, 6, 3, 2.0, seed=5)
    fine = sample_population(spec, 50, seed)
    coarse = sample_population(derive_task(spec, "coarse", seed=1), 50, seed)
    assert fine.relabel(spec.superclass_map).equals(coarse)


def test_disjoint_means_are_new(spec):
    dis = derive_task(spec, "disjoint", seed=2)
    gaps = np.linalg.norm(dis.class_means[:, None] - spec.class_means[None], axis=-1)
    assert gaps.min() > 1e-6
    assert dis.n_labels == 10 and dis.feature_dim == spec.feature_dim


def test_dissimilar_rotation_orthonormal(spec):
    dif = derive_task(spec, "dissimilar", seed=2)
    R = dif.rotation
    assert np.allclose(R.T @ R, np.eye(spec.feature_dim), atol=1e-9)
    assert dif.n_labels == 8 and dif.feature_dim == spec.feature_dim


def test_unknown_task_kind(spec):
    with pytest.raises(SpecError):
        derive_task(spec, "similar", seed=0)


def test_augment_index_zero_is_identity():
    x = np.random.default_rng(0).normal(size=16)
    assert np.array_equal(augment(x, 0, 0.5, 3), x)


@given(st.integers(1, 50), st.integers(0, 1000))
def test_augment_without_noise_is_a_permutation(aug_index, seed):
    x = np.random.default_rng(seed).normal(size=16)
    out = augment(x, aug_index, 0.0, seed)
    assert abs(np.linalg.norm(out) - np.linalg.norm(x)) <= 1e-12
    assert np.array_equal(np.sort(out), np.sort(x))
    assert np.sum(out != x) in (0, 2)


def test_augment_is_deterministic():
    x = np.random.default_rng(1).normal(size=16)
    assert np.array_equal(augment(x, 3, 0.1, 9), augment(x, 3, 0.1, 9))
    assert not np.array_equal(augment(x, 3, 0.1, 9), augment(x, 3, 0.1, 10))
    assert not np.array_equal(augment(x, 3, 0.1, 9), augment(x, 4, 0.1, 9))


def test_augment_rejects_negative_index():
    with pytest.raises(SpecError):
        augment(np.zeros(3), -1, 0.1, 0)


def test_augment_views_stack_individual_views():
    X = np.random.default_rng(2).normal(size=(3, 5))
    V = augment_views(X, 4, 0.1, 7)
    assert V.shape == (3, 4, 5)
    assert np.array_equal(V[1, 2], augment(X[1], 2, 0.1, 7))


def test_challenges_whole_pool_and_empty(spec):
    pool = sample_population(spec, 100, seed=0)
    full = designate_challenges(pool, 100, seed=1)
    assert set(full.ids.tolist()) == set(pool.ids.tolist())
    assert len(designate_challenges(pool, 0, seed=1)) == 0
    with pytest.raises(SpecError):
        designate_challenges(pool, 101, seed=1)


def test_challenges_differ_between_seeds(spec):
    pool = sample_population(spec, 50_000, seed=0)
    a = designate_challenges(pool, 1000, seed=1)
    b = designate_challenges(pool, 1000, seed=2)
    assert not np.array_equal(a.ids, b.ids)


def test_challenges_come_from_pool_exactly_once(spec):
    pool = sample_population(spec, 300, seed=0)
    ch = designate_challenges(pool, 40, seed=5)
    assert len(np.unique(ch.ids)) == 40
    assert np.array_equal(pool.ids[ch.pool_index], ch.ids)
    assert np.array_equal(pool.X[ch.pool_index], ch.X)


def test_duplicate_ids_rejected():
    with pytest.raises(SpecError):
        Dataset(np.zeros((2, 2)), [0, 1], [5, 5])


def test_csv_and_json_round_trip(tmp_path, spec):
    data = sample_population(derive_task(spec, "dissimilar", seed=3), 30, seed=1)
    write_dataset_csv(data, tmp_path / "d.csv")
    assert read_dataset_csv(tmp_path / "d.csv").equals(data)
    for s in (spec, derive_task(spec, "dissimilar", seed=3)):
        write_spec_json(s, tmp_path / "s.json")
        assert read_spec_json(tmp_path / "s.json").equals(s)
