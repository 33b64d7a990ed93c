import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import entropy, wasserstein_distance

from skelpoison.errors import BinMismatchError, EmptyAnglesError
from skelpoison.skeleton import SkeletonSequence
from skelpoison.stealth import (
    AngleHistogram,
    METRIC_CHAINS,
    StealthReport,
    adjacent_bone_angles,
    count_skipped,
    emd,
    histogram,
    kld,
    stealth_report,
)


def seq_from(points):
    pos = np.zeros((1, 25, 3))
    for j, p in points.items():
        pos[0, j - 1] = p
    return SkeletonSequence(pos, 0)


def test_straight_and_right_angle(topo):
    straight = seq_from({5: (0, 0, 0), 6: (0, 1, 0), 7: (0, 2, 0), 8: (0, 3.5, 0)})
    assert np.array_equal(adjacent_bone_angles(straight, topo, (5, 6, 7, 8)), [0, 0])
    elbow = seq_from({5: (0, 0, 0), 6: (0, 1, 0), 7: (1, 1, 0)})
    assert np.isclose(adjacent_bone_angles(elbow, topo, (5, 6, 7))[0], np.pi / 2)
    fold = seq_from({5: (0, 0, 0), 6: (0, 1, 0), 7: (0, 0.5, 0)})
    assert np.isclose(adjacent_bone_angles(fold, topo, (5, 6, 7))[0], np.pi)
    assert adjacent_bone_angles(elbow, topo, (3, 4)).size == 0
    assert METRIC_CHAINS["nodding"] == ((21, 3, 4),)


def test_zero_length_bones_are_counted(topo):
    s = seq_from({5: (0, 0, 0), 6: (0, 0, 0), 7: (1, 0, 0), 8: (2, 0, 0)})
    assert adjacent_bone_angles(s, topo, (5, 6, 7, 8)).size == 1
    assert count_skipped(s, (5, 6, 7, 8)) == 1


@given(st.lists(st.floats(0, np.pi), min_size=1, max_size=200), st.integers(2, 100))
def test_histogram_normalised(angles, bins):
    h = histogram(angles, bins)
    assert h.bin_count == bins and abs(h.masses.sum() - 1) <= 1e-12 and np.all(h.masses > 0)
    assert h.bin_edges[0] == 0 and h.bin_edges[-1] == np.pi


def test_histogram_examples():
    assert histogram(np.zeros(50)).masses[0] > 1 - 1e-6
    assert histogram([np.pi]).masses[-1] > 1 - 1e-6
    u = np.random.default_rng(0).uniform(0, np.pi, 100_000)
    assert np.all(np.abs(histogram(u, 64).masses - 1 / 64) < 0.005)
    with pytest.raises(EmptyAnglesError):
        histogram([])
    with pytest.raises(ValueError):
        histogram([0.1], 1)


def two_bin(p):
    return AngleHistogram.from_masses(p)


def test_kld_hand_values():
    p, q = two_bin([0.5, 0.5]), two_bin([0.25, 0.75])
    assert abs(kld(p, q) - (0.5 * np.log(2) + 0.5 * np.log(2 / 3))) < 1e-15
    assert abs(kld(p, q) - 0.14384) < 1e-5
    # reverse direction: 0.25 ln(0.5) + 0.75 ln(1.5)
    assert abs(kld(q, p) - 0.13081) < 1e-5
    assert abs(kld(p, q) - entropy(p.masses, q.masses)) < 1e-15
    assert abs(kld(q, p) - entropy(q.masses, p.masses)) < 1e-15
    assert kld(p, p) == 0


def test_emd_examples():
    n = 10_000
    a = np.zeros(n)
    a[0] = 1
    w = np.pi / n
    b = np.zeros(n)
    b[int(round(1 / w - 0.5))] = 1
    assert abs(emd(AngleHistogram.from_masses(a), AngleHistogram.from_masses(b)) - 1.0) < w
    u = np.zeros(n)
    k = int(1 / w)
    u[:k] = 1 / k
    assert abs(emd(AngleHistogram.from_masses(u), AngleHistogram.from_masses(a)) - 0.5) < 2 * w


def random_hist(rng, bins):
    return AngleHistogram.from_masses(rng.dirichlet(np.ones(bins) * 0.5) * (1 - 1e-9 * bins) + 1e-9)


def test_emd_matches_scipy():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p, q = random_hist(rng, 64), random_hist(rng, 64)
        centres = (p.bin_edges[:-1] + p.bin_edges[1:]) / 2
        ref = wasserstein_distance(centres, centres, p.masses, q.masses)
        assert abs(emd(p, q) - ref) < 1e-12


def test_emd_metric_axioms():
    rng = np.random.default_rng(4)
    for _ in range(100):
        p, q, r = (random_hist(rng, 64) for _ in range(3))
        assert abs(emd(p, q) - emd(q, p)) <= 1e-12
        assert emd(p, r) <= emd(p, q) + emd(q, r) + 1e-9
        assert emd(p, p) == 0 and kld(p, p) < 1e-12


@given(st.integers(0, 2**32 - 1))
def test_kld_positive_when_different(seed):
    rng = np.random.default_rng(seed)
    p, q = random_hist(rng, 16), random_hist(rng, 16)
    assert kld(p, q) >= 0 and emd(p, q) >= 0
    if np.max(np.abs(p.masses - q.masses)) > 1e-6:
        assert kld(p, q) > 0


def test_bin_mismatch():
    with pytest.raises(BinMismatchError):
        kld(histogram([0.1], 8), histogram([0.1], 16))
    with pytest.raises(BinMismatchError):
        emd(histogram([0.1], 8), histogram([0.1], 16))
    with pytest.raises(ValueError):
        AngleHistogram.from_masses([0.5, 0.6])


def test_report_identical_datasets(small_ds):
    for name in METRIC_CHAINS:
        rep = stealth_report(small_ds, small_ds, name)
        assert rep.kld < 1e-12 and rep.emd == 0
        assert rep.n_clean == rep.n_poisoned > 0
        assert rep.to_row().startswith(f"{name}\t-\t")
    assert StealthReport.HEADER.split("\t") == [
        "trigger", "ratio", "kld_nats", "emd_rad", "n_clean_angles", "n_poisoned_angles",
    ]
    assert len(rep.histogram_rows()) == 64


def test_report_deterministic_and_sensitive(small_ds):
    from skelpoison.poison import PoisonPolicy, build_poisoned_dataset
    from skelpoison.trigger import TRIGGERS

    pol = PoisonPolicy("poison_label", 0, 0.3, TRIGGERS["nodding"], master_seed=5)
    pois, _ = build_poisoned_dataset(small_ds, pol)
    a = stealth_report(small_ds, pois, TRIGGERS["nodding"], ratio=0.3)
    b = stealth_report(small_ds, pois, "nodding", ratio=0.3)
    assert a.to_row() == b.to_row() and a.kld > 0 and a.emd > 0
