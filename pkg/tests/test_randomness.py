import numpy as np
import pytest

from dispatchsim.randomness import policy_rng, replication_seed, workload_rng


def test_replication_seeds_distinct_and_deterministic():
    seeds = [replication_seed(42, r) for r in range(100)]
    assert len(set(seeds)) == 100
    assert seeds == [replication_seed(42, r) for r in range(100)]


def test_replication_seed_varies_with_base():
    assert replication_seed(1, 0) != replication_seed(2, 0)


def test_replication_seed_rejects_negative_rep():
    with pytest.raises(ValueError):
        replication_seed(1, -1)


def test_workload_and_policy_streams_are_independent():
    seed = 777
    w = workload_rng(seed).random(8)
    p0 = policy_rng(seed, 0).random(8)
    p1 = policy_rng(seed, 1).random(8)
    assert not np.allclose(w, p0)
    assert not np.allclose(w, p1)
    assert not np.allclose(p0, p1)


def test_streams_are_reproducible():
    assert np.array_equal(workload_rng(5).random(16), workload_rng(5).random(16))
    assert np.array_equal(policy_rng(5, 0).random(16), policy_rng(5, 0).random(16))


def test_policy_stage_must_be_binary():
    with pytest.raises(ValueError):
        policy_rng(1, 2)
