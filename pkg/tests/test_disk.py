import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

import oracles
from kscan.disk import DiskRegion, disk_scan, kulldorff_bernoulli
from kscan.errors import DataError
from kscan.geometry import Domain, LabeledDataset, Point
from kscan.scanner import ScanConfig


def test_kulldorff_examples():
    assert kulldorff_bernoulli(0.3, 0.3) == 0.0
    assert_allclose(kulldorff_bernoulli(1.0, 0.5), math.log(2), rtol=1e-15)
    assert kulldorff_bernoulli(0.2, 0.5) == 0.0
    assert_allclose(kulldorff_bernoulli(0.6, 0.2),
                    0.6 * math.log(3) + 0.4 * math.log(0.4 / 0.8), rtol=1e-15)
    with pytest.raises(ValueError):
        kulldorff_bernoulli(1.2, 0.5)


def test_disk_region():
    d = DiskRegion(Point(0, 0), 1.0)
    assert d.contains([[0.5, 0.5], [1.0, 0.0], [1.0, 0.1]]).tolist() == [True, True, False]
    with pytest.raises(ValueError):
        DiskRegion(Point(0, 0), 0.0)


def test_disk_sweep_matches_bruteforce(rng):
    for n in (20, 120, 500):
        xy = np.round(rng.random((n, 2)), 2)  # ties in distance
        m = (rng.random(n) < 0.35).astype(float)
        data = LabeledDataset(xy, m)
        dom = Domain.from_points(xy)
        res = disk_scan(data, dom, ScanConfig(epsilon=0.5, bandwidth=0.2, chunk_size=7))
        for i in rng.choice(res.centers.shape[0], size=min(25, res.centers.shape[0]),
                            replace=False):
            assert res.phis[i] == oracles.disk_bruteforce(xy, m, res.centers[i])


def test_disk_tight_cluster():
    rng = np.random.default_rng(5)
    cluster = rng.normal([0.2, 0.2], 0.005, size=(30, 2))
    far = rng.random((170, 2)) * 0.5 + 0.5
    xy = np.vstack([cluster, far])
    m = np.r_[np.ones(30), np.zeros(170)]
    data = LabeledDataset(xy, m)
    res = disk_scan(data, Domain(0, 1, 0, 1), ScanConfig(epsilon=0.2, bandwidth=0.05))
    assert res.extras["n_in"] == 30 and res.extras["n_in_measured"] == 30
    assert_allclose(res.phi, kulldorff_bernoulli(1.0, 30 / 200), rtol=1e-12)
    assert res.extras["disk"].contains(cluster).all()


def test_disk_degenerate():
    data = LabeledDataset([[0.0, 0.0]], [1.0])
    res = disk_scan(data, Domain(0, 0, 0, 0), ScanConfig(epsilon=0.2, bandwidth=1.0))
    assert res.phi == 0.0
    data = LabeledDataset(np.random.default_rng(0).random((10, 2)), np.zeros(10))
    assert disk_scan(data, Domain(0, 1, 0, 1), ScanConfig(epsilon=0.3, bandwidth=0.3)).phi == 0.0
    with pytest.raises(DataError):
        disk_scan(LabeledDataset([[0, 0]], [2.0], "poisson"), Domain(0, 0, 0, 0),
                  ScanConfig(epsilon=0.2, bandwidth=1.0))


def test_disk_null_vs_planted(rng):
    cfg = ScanConfig(epsilon=0.3, bandwidth=0.1)
    nulls = []
    for _ in range(10):
        xy = rng.random((300, 2))
        data = LabeledDataset(xy, (rng.random(300) < 0.4).astype(float))
        nulls.append(disk_scan(data, Domain(0, 1, 0, 1), cfg).phi)
    xy = rng.random((300, 2))
    inside = ((xy - 0.5) ** 2).sum(axis=1) < 0.2 ** 2
    m = (rng.random(300) < np.where(inside, 0.95, 0.3)).astype(float)
    planted = disk_scan(LabeledDataset(xy, m), Domain(0, 1, 0, 1), cfg)
    assert planted.phi > max(nulls)


def test_disk_refinement_monotone(rng):
    xy = rng.random((200, 2))
    data = LabeledDataset(xy, (rng.random(200) < 0.3).astype(float))
    dom = Domain(0, 1, 0, 1)
    coarse = disk_scan(data, dom, ScanConfig(epsilon=0.4, bandwidth=0.1))
    fine = disk_scan(data, dom, ScanConfig(epsilon=0.2, bandwidth=0.1))
    assert fine.centers_evaluated > coarse.centers_evaluated
    assert fine.phi >= coarse.phi
