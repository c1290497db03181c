import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nestbo.subspace import new_embedding, project_up, should_expand, split


def test_new_embedding_shapes():
    e = new_embedding(5, 5, rng=0)
    assert sorted(e.bins.tolist()) == list(range(5))
    e = new_embedding(4, 2, rng=1)
    assert e.bin_sizes().tolist() == [2, 2]
    a, b = new_embedding(30, 4, rng=7), new_embedding(30, 4, rng=7)
    np.testing.assert_array_equal(a.bins, b.bins)
    np.testing.assert_array_equal(a.signs, b.signs)
    with pytest.raises(ValueError):
        new_embedding(3, 4)


def test_one_entry_per_column():
    e = new_embedding(12, 3, rng=2)
    S = e.matrix()
    assert np.all(np.count_nonzero(S, axis=0) == 1)
    assert set(np.abs(S[S != 0]).tolist()) == {1.0}


def test_project_up_examples():
    e = new_embedding(6, 3, rng=3)
    bounds = np.tile([-5.0, 3.0], (6, 1))
    np.testing.assert_allclose(project_up(e, np.zeros(3), bounds), -1.0)
    one = new_embedding(3, 1, rng=0)
    one = type(one)(3, 1, one.bins, np.ones(3))
    np.testing.assert_array_equal(project_up(one, [1.0], bounds[:3]), [3.0, 3.0, 3.0])
    v = np.array([0.3, -0.8, 0.5])
    x = project_up(e, v)
    np.testing.assert_array_equal(np.abs(x), np.abs(v[e.bins]))
    with pytest.raises(ValueError):
        project_up(e, np.zeros(2))


def test_split_examples():
    e = new_embedding(4, 4, rng=0)
    e2, lifted, sat = split(e, np.zeros((2, 4)))
    assert sat and e2 is e and lifted.shape == (2, 4)

    e = new_embedding(4, 2, rng=0)
    V = np.random.default_rng(0).uniform(-1, 1, (5, 2))
    e2, lifted, sat = split(e, V, rng=1)
    assert not sat and e2.target_dim == 4
    np.testing.assert_array_equal(project_up(e, V), project_up(e2, lifted))

    e2, lifted, sat = split(e, np.zeros((0, 2)), rng=1)
    assert lifted.shape == (0, 4) and not sat


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(2, 40), rounds=st.integers(1, 4))
def test_split_preservation_and_sparsity(seed, d, rounds):
    rng = np.random.default_rng(seed)
    e = new_embedding(d, int(rng.integers(1, d + 1)), rng)
    V = rng.uniform(-1, 1, (7, e.target_dim))
    bounds = np.column_stack([rng.uniform(-9, 0, d), rng.uniform(1, 9, d)])
    for _ in range(rounds):
        before = project_up(e, V, bounds)
        e, V, sat = split(e, V, rng)
        assert np.array_equal(before, project_up(e, V, bounds))
        assert np.all(np.count_nonzero(e.matrix(), axis=0) == 1)
        if sat:
            assert e.target_dim == d
            break
    assert len(e.to_dict()["assignment"]) == d


def test_should_expand():
    assert should_expand([1.0] * 10)
    assert not should_expand([1.0] * 9)
    assert not should_expand([2.0] * 5 + [1.0] * 5)
    # the last 10 steps are flat even though an older one improved
    assert should_expand([3.0, 2.0] + [2.0] * 10)
    assert not should_expand([5.0] * 10 + [4.0])
