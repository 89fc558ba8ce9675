# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

import numpy as np
import pytest

from mdstore.constants import NIL
from mdstore.exceptions import DimensionError, InvalidStateError, PoolExhaustedError
from mdstore.kdtree import (
    BulkloadMode,
    NodePool,
    bulkload,
    partition_level,
    select_pivot,
)


def _keys(n: int, dims: int, seed: int = 0, high: int = 1000) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, high, size=(n, dims), dtype=np.int64)


def _handles(n: int) -> np.ndarray:
    return np.arange(n, dtype=np.int64)


def _check_kd_invariant(tree, keys):
    """Every left descendant is <= its ancestor on the ancestor's dimension, every right
    descendant is greater."""
    for node, depth in tree.preorder():
        dim = tree.branching_dim(depth)
        pivot = keys[tree.record(node), dim]
        left, right = tree.left(node), tree.right(node)
        if left != NIL:
            for child, _ in tree.preorder(left):
                assert keys[tree.record(child), dim] <= pivot
        if right != NIL:
            for child, _ in tree.preorder(right):
                assert keys[tree.record(child), dim] > pivot
        expected = 1 + tree.subtree_count(left) + tree.subtree_count(right)
        assert tree.subtree_count(node) == expected


@pytest.mark.parametrize("mode", list(BulkloadMode))
@pytest.mark.parametrize("root_dim", [0, 2])
def test_bulkload_invariants(mode, root_dim):
    keys = _keys(500, 3, seed=root_dim)
    pool = NodePool(500)
    rng = np.random.default_rng(1)
    with bulkload(_handles(500), keys, root_dim, mode, pool, rng) as tree:
        assert len(tree) == 500
        assert pool.free_count == 0
        records = sorted(tree.record(node) for node, _ in tree.preorder())
        assert records == list(range(500))
        _check_kd_invariant(tree, keys)
    assert pool.free_count == 500


def test_bulkload_with_duplicates():
    keys = np.zeros((64, 2), dtype=np.int64)
    keys[::2, 1] = 5
    pool = NodePool(64)
    rng = np.random.default_rng(0)
    with bulkload(_handles(64), keys, 0, "full_recursive", pool, rng) as t:
        assert len(t) == 64
        _check_kd_invariant(t, keys)


def test_bulkload_single_and_empty():
    pool = NodePool(4)
    rng = np.random.default_rng(0)
    tree = bulkload(_handles(1), _keys(1, 2), 1, BulkloadMode.ROOT_LEVEL_ONLY, pool, rng)
    assert len(tree) == 1
    assert tree.left(tree.root) == NIL and tree.right(tree.root) == NIL
    tree.release()

    empty = bulkload(_handles(0), _keys(0, 2), 0, BulkloadMode.FULL_RECURSIVE, pool, rng)
    assert empty.root == NIL
    assert len(empty) == 0
    assert list(empty.preorder()) == []
    empty.release()
    assert pool.free_count == 4


def test_bulkload_pool_exhausted():
    pool = NodePool(10)
    with pytest.raises(PoolExhaustedError):
        bulkload(
            _handles(11), _keys(11, 2), 0, BulkloadMode.FULL_RECURSIVE, pool,
            np.random.default_rng(0),
        )
    assert pool.free_count == 10


def test_bulkload_bad_root_dim():
    with pytest.raises(DimensionError):
        bulkload(
            _handles(3), _keys(3, 2), 2, BulkloadMode.FULL_RECURSIVE, NodePool(3),
            np.random.default_rng(0),
        )


def test_bulkload_rejects_non_int64_handles():
    with pytest.raises(TypeError):
        bulkload(
            np.arange(3, dtype=np.int32), _keys(3, 2), 0, BulkloadMode.FULL_RECURSIVE,
            NodePool(3), np.random.default_rng(0),
        )


def test_detach_subtree_updates_counts():
    keys = _keys(200, 2, seed=3)
    pool = NodePool(200)
    tree = bulkload(
        _handles(200), keys, 0, BulkloadMode.FULL_RECURSIVE, pool, np.random.default_rng(2)
    )
    child = tree.left(tree.root)
    if child == NIL:
        child = tree.right(tree.root)
    size = tree.subtree_count(child)
    assert tree.detach_subtree(child) == child
    assert child not in (tree.left(tree.root), tree.right(tree.root))
    assert tree.parent(child) == NIL
    assert len(tree) == 200 - size
    _check_kd_invariant(tree, keys)

    # a detached subtree is no longer reachable from the root
    with pytest.raises(InvalidStateError):
        tree.detach_subtree(child)

    tree.detach_subtree(tree.root)
    assert tree.root == NIL
    # detached nodes stay acquired until the tree is released
    assert pool.free_count == 0
    tree.release()
    assert pool.free_count == 200
    with pytest.raises(InvalidStateError):
        tree.detach_subtree(child)


def test_depth_and_branching_dim():
    keys = _keys(31, 3, seed=5)
    with bulkload(
        _handles(31), keys, 1, BulkloadMode.FULL_RECURSIVE, NodePool(31),
        np.random.default_rng(0),
    ) as tree:
        for node, depth in tree.preorder():
            assert tree.depth_of(node) == depth
        assert tree.branching_dim(0) == 1
        assert tree.branching_dim(2) == 0


def test_select_pivot_exact_median_of_small_slice():
    keys = np.array([[9], [1], [5], [7], [3]], dtype=np.int64)
    handles = _handles(5)
    position = select_pivot(handles, keys, 0, 5, np.random.default_rng(0))
    assert keys[handles[position], 0] == 5


def test_select_pivot_is_a_sampled_value():
    keys = _keys(1000, 2, seed=9)
    handles = _handles(1000)
    position = select_pivot(handles, keys, 1, 3, np.random.default_rng(4))
    assert 0 <= position < 1000


@pytest.mark.parametrize("samples", [0, 2])
def test_select_pivot_rejects_even_samples(samples):
    with pytest.raises(ValueError):
        select_pivot(_handles(5), _keys(5, 2), 0, samples, np.random.default_rng(0))


def test_select_pivot_empty():
    with pytest.raises(ValueError):
        select_pivot(_handles(0), _keys(0, 2), 0, 3, np.random.default_rng(0))


def test_partition_level():
    keys = _keys(300, 2, seed=11, high=20)
    handles = _handles(300)
    pivot_value = keys[handles[17], 1]
    split = partition_level(handles, keys, 1, 17)
    assert keys[handles[split], 1] == pivot_value
    assert np.all(keys[handles[:split], 1] <= pivot_value)
    assert np.all(keys[handles[split + 1 :], 1] > pivot_value)
    assert sorted(handles.tolist()) == list(range(300))
    with pytest.raises(IndexError):
        partition_level(handles, keys, 0, 300)
