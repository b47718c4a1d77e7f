import numpy as np
import pytest

from tpgan import baselines as bl
from tpgan import kernels
from tpgan.kernels import _knn_py
from tpgan.errors import TooFewPoints, ValidationError

from conftest import toy_dataset


def colinearity_residual(points, parents_a, parents_b):
    """Distance of each point from the line through its parents, relative to the segment length."""
    d = parents_b - parents_a
    t = np.einsum("ij,ij->i", points - parents_a, d) / np.maximum(np.einsum("ij,ij->i", d, d), 1e-300)
    proj = parents_a + t[:, None] * d
    return np.linalg.norm(points - proj, axis=1), t


def check_geometry(minority, syn):
    minority = minority.reshape(len(minority), -1)
    res, t = colinearity_residual(syn.points, minority[syn.base], minority[syn.partner])
    assert res.max() < 1e-9
    degenerate = np.all(minority[syn.base] == minority[syn.partner], axis=1)
    assert ((t[~degenerate] >= -1e-12) & (t[~degenerate] <= 1 + 1e-12)).all()
    lo, hi = minority.min(0), minority.max(0)
    assert ((syn.points >= lo - 1e-12) & (syn.points <= hi + 1e-12)).all()
    np.testing.assert_allclose(syn.points, minority[syn.base] + syn.gaps[:, None] * (minority[syn.partner] - minority[syn.base]),
                               atol=1e-12)


def clusters(seed=0, n_min=30, n_maj=200, dim=6):
    rng = np.random.default_rng(seed)
    minority = rng.normal(0.0, 1.0, (n_min, dim))
    majority = rng.normal(1.5, 1.0, (n_maj, dim))
    return minority, majority


# -- SMOTE ----------------------------------------------------------------------


def test_smote_identical_points():
    pts = np.ones((5, 3)) * 0.25
    np.testing.assert_array_equal(bl.smote(pts, 2, 7, np.random.default_rng(0)), np.full((7, 3), 0.25))


def test_smote_midpoint():
    syn = bl.synthesize(np.array([[0.0], [10.0]]), np.array([0]), np.array([1]), np.array([0.5]))
    assert syn[0, 0] == 5.0


def test_smote_partner_is_neighbour():
    pts = np.array([[0.0], [10.0], [10.5], [30.0]])
    syn = bl.smote_with_parents(pts, 1, 40, np.random.default_rng(0))
    expected = {0: 1, 1: 2, 2: 1, 3: 2}
    assert all(expected[b] == p for b, p in zip(syn.base, syn.partner))


def test_smote_bases_cycled():
    pts = np.random.default_rng(1).normal(size=(4, 2))
    syn = bl.smote_with_parents(pts, 2, 10, np.random.default_rng(0))
    counts = np.bincount(syn.base, minlength=4)
    assert counts.min() >= 2 and counts.max() <= 3


def test_smote_geometry_and_count():
    minority, _ = clusters()
    syn = bl.smote_with_parents(minority, 5, 500, np.random.default_rng(2))
    assert syn.points.shape == (500, minority.shape[1])
    check_geometry(minority, syn)


def test_smote_errors():
    with pytest.raises(TooFewPoints):
        bl.smote(np.zeros((1, 2)), 1, 3)
    with pytest.raises(ValidationError):
        bl.smote(np.zeros((3, 2)), 0, 3)
    with pytest.raises(ValidationError):
        bl.smote(np.zeros((3, 2)), 1, -1)


def test_smote_zero_requested():
    assert bl.smote(np.zeros((3, 2)), 1, 0).shape == (0, 2)


def test_smote_k_larger_than_minority_shrinks():
    syn = bl.smote_with_parents(np.array([[0.0], [1.0], [2.0]]), 5, 9, np.random.default_rng(0))
    assert len(syn.points) == 9 and (syn.base != syn.partner).all()


@pytest.mark.parametrize("method", ["smote", "b-smote", "adasyn"])
def test_determinism(method):
    minority, majority = clusters(3)
    run = {
        "smote": lambda r: bl.smote(minority, 5, 50, r),
        "b-smote": lambda r: bl.borderline_smote(minority, majority, 5, 50, r),
        "adasyn": lambda r: bl.adasyn(minority, majority, 5, 50, r),
    }[method]
    a = run(np.random.default_rng(11))
    b = run(np.random.default_rng(11))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (50, minority.shape[1])


# -- Borderline-SMOTE -------------------------------------------------------------


def test_census_noise_point():
    labels = bl.borderline_census(np.array([[0.0], [-50.0]]), np.array([[1.0], [2.0], [3.0]]), k=3)
    assert labels[0] == bl.NOISE


def test_census_safe_and_danger():
    minority = np.array([[0.0], [0.1], [0.2], [5.0]])
    majority = np.array([[5.1], [5.2], [30.0]])
    labels = bl.borderline_census(minority, majority, k=3)
    assert labels[:3].tolist() == [bl.SAFE] * 3
    assert labels[3] == bl.DANGER


def test_borderline_all_safe_falls_back(caplog):
    minority = np.random.default_rng(0).normal(0, 0.1, (10, 2))
    majority = np.random.default_rng(1).normal(100, 0.1, (10, 2))
    with caplog.at_level("INFO"):
        syn = bl.borderline_smote_with_parents(minority, majority, 3, 20, np.random.default_rng(0))
    assert "falling back" in caplog.text
    assert len(syn.points) == 20


def test_borderline_bases_are_danger_points():
    minority, majority = clusters(4)
    census = bl.borderline_census(minority, majority, 5)
    assert (census == bl.DANGER).any()
    syn = bl.borderline_smote_with_parents(minority, majority, 5, 300, np.random.default_rng(0))
    assert (census[syn.base] == bl.DANGER).all()
    check_geometry(minority, syn)


def test_borderline_needs_majority():
    with pytest.raises(TooFewPoints):
        bl.borderline_smote(np.zeros((3, 2)), np.zeros((0, 2)), 2, 1)


# -- ADASYN -------------------------------------------------------------------------


def test_adasyn_allocation_example():
    assert bl.adasyn_allocation([0.2, 0.8], 10).tolist() == [2, 8]


@pytest.mark.parametrize("weights,n", [([1, 1, 1], 10), ([0.1, 0.3, 0.6], 7), ([0.5, 0.5], 1), ([0, 1, 2, 3], 101),
                                       ([1, 1, 1, 1, 1, 1], 3)])
def test_adasyn_allocation_conserves_count(weights, n):
    counts = bl.adasyn_allocation(weights, n)
    assert counts.sum() == n and (counts >= 0).all()
    w = np.asarray(weights, float)
    assert np.abs(counts - w / w.sum() * n).max() <= 1.0


def test_adasyn_remainder_to_highest_weight():
    assert bl.adasyn_allocation([1, 1, 2], 5).tolist() == [1, 1, 3]


def test_adasyn_zero_weights_fall_back(caplog):
    minority = np.random.default_rng(0).normal(0, 0.1, (10, 2))
    majority = np.random.default_rng(1).normal(100, 0.1, (10, 2))
    with caplog.at_level("INFO"):
        out = bl.adasyn(minority, majority, 3, 12, np.random.default_rng(0))
    assert "falling back" in caplog.text and out.shape == (12, 2)


def test_adasyn_geometry_and_weights():
    minority, majority = clusters(5)
    syn = bl.adasyn_with_parents(minority, majority, 5, 400, np.random.default_rng(0))
    assert len(syn.points) == 400
    check_geometry(minority, syn)
    share, _ = bl._majority_share(minority, majority, 5)
    np.testing.assert_array_equal(np.bincount(syn.base, minlength=len(minority)), bl.adasyn_allocation(share, 400))


# -- harness-level oversampling -------------------------------------------------------


@pytest.mark.parametrize("method", bl.METHODS)
def test_oversample_balances_and_preserves_range(method):
    train = toy_dataset([60, 12, 8])
    out, flags = bl.oversample(train, method, [1, 2], k=5, seed=3)
    assert out.class_counts().tolist() == [60, 60, 60]
    assert flags.sum() == 48 + 52
    np.testing.assert_array_equal(out.images[:len(train)], train.images)
    assert out.images.min() >= -1 and out.images.max() <= 1
    assert (out.uids[flags] < 0).all()


def test_oversample_rejects_unknown_method():
    with pytest.raises(ValidationError):
        bl.oversample(toy_dataset([5, 3]), "mixup", [1])


# -- kernels ---------------------------------------------------------------------------


def test_kneighbors_ties_lowest_index():
    ref = np.array([[1.0], [-1.0], [1.0], [2.0]])
    assert _knn_py.kneighbors(np.array([[0.0]]), ref, 3).tolist() == [[0, 1, 2]]
    assert kernels.kneighbors(np.array([[0.0]]), ref, 3).tolist() == [[0, 1, 2]]


def test_kneighbors_skip_and_errors():
    pts = np.array([[0.0], [1.0], [3.0]])
    assert _knn_py.kneighbors(pts, pts, 1, skip=np.arange(3)).ravel().tolist() == [1, 0, 1]
    with pytest.raises(ValueError):
        _knn_py.kneighbors(pts, pts, 3, skip=np.arange(3))


def test_kneighbors_matches_brute_force():
    rng = np.random.default_rng(0)
    q, r = rng.normal(size=(20, 5)), rng.normal(size=(50, 5))
    d = ((q[:, None] - r[None]) ** 2).sum(-1)
    np.testing.assert_array_equal(_knn_py.kneighbors(q, r, 4), np.argsort(d, axis=1, kind="stable")[:, :4])


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")
def test_compiled_matches_python():
    from tpgan.kernels import _knn_cy

    rng = np.random.default_rng(1)
    q = np.round(rng.normal(size=(40, 7)), 1)
    r = np.vstack([q, np.round(rng.normal(size=(60, 7)), 1)])
    skip = np.arange(40)
    np.testing.assert_array_equal(_knn_cy.kneighbors(q, r, 6, skip), _knn_py.kneighbors(q, r, 6, skip))
    gaps = rng.random(40)
    np.testing.assert_array_equal(_knn_cy.interpolate(q, r[:40][::-1], gaps), _knn_py.interpolate(q, r[:40][::-1], gaps))


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")
