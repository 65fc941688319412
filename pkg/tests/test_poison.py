import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from baple.data import DatasetSpec, generate_synthetic_dataset, sample_few_shot
from baple.errors import ConfigurationError
from baple.poison import (
    TargetLabelFn,
    apply_target_label,
    make_poison_plan,
    materialize_batches,
    poison_quota,
)

_DS9 = generate_synthetic_dataset(DatasetSpec(num_classes=9,
                                              samples_per_class=40, seed=1))
_SUB9 = sample_few_shot(_DS9, 32, 0)  # N = 288

_DS4 = generate_synthetic_dataset(DatasetSpec(num_classes=4,
                                              samples_per_class=20, seed=2))
_SUB4 = sample_few_shot(_DS4, 10, 0)  # N = 40


def test_floor_arithmetic_288():
    plan = make_poison_plan(_SUB9, 0.05, 0, seed=0)
    assert len(plan.poison_indices) == 14  # floor(0.05 * 288)
    assert plan.num_total == 288
    assert plan.warnings == []


def test_zero_and_full_ratio():
    zero = make_poison_plan(_SUB4, 0.0, 1, seed=0)
    assert len(zero.poison_indices) == 0
    assert len(zero.clean_indices) == 40
    full = make_poison_plan(_SUB4, 1.0, 1, seed=0)
    assert len(full.clean_indices) == 0
    assert len(full.poison_indices) == 40


def test_degenerate_ratio_warns():
    plan = make_poison_plan(_SUB4, 0.01, 0, seed=0)  # floor(0.4) = 0
    assert len(plan.poison_indices) == 0
    assert plan.warnings and "clean training" in plan.warnings[0]


def test_plan_validation():
    with pytest.raises(ConfigurationError, match="poison_ratio"):
        make_poison_plan(_SUB4, 1.5, 0, seed=0)
    with pytest.raises(ConfigurationError, match="target_class"):
        make_poison_plan(_SUB4, 0.1, 9, seed=0)


def test_plan_determinism():
    a = make_poison_plan(_SUB9, 0.1, 2, seed=5)
    b = make_poison_plan(_SUB9, 0.1, 2, seed=5)
    assert np.array_equal(a.poison_indices, b.poison_indices)
    assert np.array_equal(a.clean_indices, b.clean_indices)
    c = make_poison_plan(_SUB9, 0.1, 2, seed=6)
    assert not np.array_equal(a.poison_indices, c.poison_indices)


@settings(deadline=None, max_examples=30)
@given(ratio=st.floats(0.0, 1.0), seed=st.integers(0, 2**16))
def test_partition_property(ratio, seed):
    plan = make_poison_plan(_SUB4, ratio, 0, seed)
    union = np.concatenate([plan.clean_indices, plan.poison_indices])
    assert len(union) == len(_SUB4.indices)
    assert set(union.tolist()) == set(_SUB4.indices.tolist())
    assert len(np.intersect1d(plan.clean_indices, plan.poison_indices)) == 0
    assert len(plan.poison_indices) == int(np.floor(ratio * 40))


def test_target_label_fn_constant():
    eta = TargetLabelFn(0)
    assert all(apply_target_label(eta, y) == 0 for y in range(6))
    assert eta(0) == 0


def test_quota_arithmetic():
    assert poison_quota(16, 0.05, 14) == 1  # ceil(0.8) capped by pool
    assert poison_quota(16, 0.5, 14) == 8
    assert poison_quota(16, 0.9, 3) == 3
    assert poison_quota(16, 0.0, 14) == 0


def test_batch_stream_shapes_and_relabeling():
    plan = make_poison_plan(_SUB9, 0.05, 3, seed=0)
    steps = list(materialize_batches(plan, _DS9, 16, seed=0))
    assert len(steps) == len(plan.clean_indices) // 16
    for clean_b, poison_b in steps:
        assert len(clean_b) <= 16
        assert np.array_equal(clean_b.labels, _DS9.labels[clean_b.indices])
        assert (poison_b.labels == 3).all()
        assert len(poison_b) == 1  # quota ceil(16 * 0.05)
        assert all(i in plan.poison_indices for i in poison_b.indices)


def test_batch_stream_determinism_and_epoch_shuffle():
    plan = make_poison_plan(_SUB9, 0.05, 0, seed=0)

    def order(epoch):
        return [tuple(c.indices) for c, _ in
                materialize_batches(plan, _DS9, 16, seed=4, epoch=epoch)]

    assert order(0) == order(0)
    assert order(0) != order(1)


def test_empty_poison_pool_emits_empty_batches():
    plan = make_poison_plan(_SUB4, 0.0, 0, seed=0)
    steps = list(materialize_batches(plan, _DS4, 8, seed=0))
    assert len(steps) == 5
    assert all(len(p) == 0 for _, p in steps)
    with pytest.raises(ConfigurationError, match="batch_size"):
        next(materialize_batches(plan, _DS4, 0, seed=0))
