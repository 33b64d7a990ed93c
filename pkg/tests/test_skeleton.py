import numpy as np
import pytest
from hypothesis import given, strategies as st

from skelpoison.errors import NotOnChainError, RootHasNoBoneError
from skelpoison.skeleton import (
    Dataset,
    ManifestRecord,
    SkeletonSequence,
    SkeletonTopology,
    bone_lengths,
    bone_vector,
    chain,
    validate_sequence,
)

JOINTS = st.integers(1, 25)


def test_parent_map(topo):
    expected = {
        2: 1, 21: 2, 3: 21, 4: 3, 5: 21, 6: 5, 7: 6, 8: 7, 9: 21, 10: 9, 11: 10, 12: 11,
        13: 1, 14: 13, 15: 14, 16: 15, 17: 1, 18: 17, 19: 18, 20: 19, 22: 8, 23: 8, 24: 12, 25: 12,
    }
    assert topo.joint_count == 25
    assert topo.parent[1] is None
    assert {j: p for j, p in topo.parent.items() if p is not None} == expected


@pytest.mark.parametrize(
    "root,key,expected",
    [(3, 4, [3, 4]), (5, 8, [5, 6, 7, 8]), (9, 12, [9, 10, 11, 12]), (1, 2, [1, 2]), (4, 4, [4])],
)
def test_chain_examples(topo, root, key, expected):
    assert chain(topo, root, key) == expected


def test_chain_not_descendant(topo):
    with pytest.raises(NotOnChainError):
        chain(topo, 4, 3)
    with pytest.raises(NotOnChainError):
        chain(topo, 5, 12)


@given(JOINTS, JOINTS)
def test_chain_structure(root, key):
    from skelpoison.skeleton import default_topology

    topo = default_topology()
    try:
        c = chain(topo, root, key)
    except NotOnChainError:
        assert key != root and not topo.is_ancestor(root, key)
        return
    assert c[0] == root and c[-1] == key
    for a, b in zip(c, c[1:]):
        assert topo.parent[b] == a


@given(JOINTS)
def test_root_reached_quickly(j):
    from skelpoison.skeleton import default_topology

    topo = default_topology()
    steps = 0
    while topo.parent[j] is not None:
        j = topo.parent[j]
        steps += 1
    assert j == 1 and steps < topo.joint_count


def test_cyclic_topology_rejected():
    parent = {1: None, 2: 3, 3: 2}
    with pytest.raises(ValueError):
        SkeletonTopology(3, parent)


def test_two_roots_rejected():
    with pytest.raises(ValueError):
        SkeletonTopology(2, {1: None, 2: None})


def test_bone_vector(topo):
    frame = np.zeros((25, 3))
    frame[1] = (0, 1, 0)
    v = bone_vector(frame, topo, 2)
    assert np.array_equal(v, [0, 1, 0]) and np.linalg.norm(v) == 1
    assert np.array_equal(bone_vector(np.zeros((25, 3)), topo, 2), [0, 0, 0])
    with pytest.raises(RootHasNoBoneError):
        bone_vector(frame, topo, 1)


def test_validate_all_zero_frame(topo):
    seq = SkeletonSequence(np.zeros((1, 25, 3)), 0)
    findings = validate_sequence(seq, topo)
    assert len(findings) == 24
    assert all(f.startswith("zero-length bone") for f in findings)


def test_validate_clean(small_ds, topo):
    for seq in small_ds.sequences:
        assert validate_sequence(seq, topo) == []


def test_validate_single_nan(small_ds, topo):
    pos = small_ds.sequences[0].positions.copy()
    pos[3, 7, 1] = np.nan
    findings = validate_sequence(SkeletonSequence(pos, 0), topo)
    assert findings == ["non-finite coordinate: frame 3 joint 8 axis y"]


def test_validate_joint_count_and_label(topo):
    f = validate_sequence(SkeletonSequence(np.ones((2, 20, 3)), 0), topo)
    assert len(f) == 1 and f[0].startswith("joint-count mismatch")
    rng = np.random.default_rng(0)
    f = validate_sequence(SkeletonSequence(rng.normal(size=(2, 25, 3)), -1), topo)
    assert f == ["negative label -1"]


def test_sequence_is_immutable(small_ds):
    seq = small_ds.sequences[0]
    with pytest.raises(ValueError):
        seq.positions[0, 0, 0] = 1.0
    assert seq.frame_count == 60 and seq.joint_count == 25 and len(seq.frames) == 60


def test_sequence_shape_checks():
    with pytest.raises(ValueError):
        SkeletonSequence(np.zeros((0, 25, 3)), 0)
    with pytest.raises(ValueError):
        SkeletonSequence(np.zeros((2, 25)), 0)


def test_bone_lengths_shape(small_ds, topo):
    assert bone_lengths(small_ds.sequences[0].positions, topo).shape == (60, 24)


def test_manifest_flag_iff_trigger():
    ManifestRecord("a", "a.skseq", 0, True, "nodding")
    with pytest.raises(ValueError):
        ManifestRecord("a", "a.skseq", 0, True, None)
    with pytest.raises(ValueError):
        ManifestRecord("a", "a.skseq", 0, False, "nodding")


def test_dataset_consistency(small_ds):
    assert len(small_ds) == len(small_ds.manifest) == 30
    assert small_ds.labels == [i % 3 for i in range(30)]
    with pytest.raises(ValueError):
        Dataset(small_ds.sequences[:2], small_ds.manifest[:1])
