import math

import numpy as np
import pytest

from trajcert.config import DataConfig
from trajcert.datagen import (
    Dataset,
    SpectrumSpec,
    leverage_scores,
    load_dataset,
    make_dataset,
    make_neighbor,
    make_probe_and_test,
    permute_labels,
    save_dataset,
)
from trajcert.errors import InvalidInputError
from trajcert.numerics import SeededStream


def _ds(X, y=None, w_star=None):
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    w_star = np.zeros(p) if w_star is None else w_star
    y = np.arange(n, dtype=float) if y is None else y
    return Dataset(X, y, w_star, y - X @ w_star, 0.0, SpectrumSpec("flat", p))


@pytest.mark.parametrize("spec", [SpectrumSpec("flat", 7), SpectrumSpec("power_decay", 512, 1.0),
                                  SpectrumSpec("power_decay", 33, 2.5),
                                  SpectrumSpec("spiked", 64, spike_count=4, weak_value=1e-3),
                                  SpectrumSpec("spiked", 64, spike_count=4, weak_value=0.0)])
def test_spectrum_mean_is_one(spec):
    assert abs(spec.eigenvalues().mean() - 1) <= 1e-12


def test_spectrum_rejects_unknown_kind():
    with pytest.raises(InvalidInputError):
        SpectrumSpec("lognormal", 4)


def test_default_dataset_shape():
    d = DataConfig()
    ds = make_dataset(d.spectrum_spec(), d.n, d.sigma, SeededStream(0, 1), d.feature_scale)
    assert (ds.n, ds.p) == (256, 512)
    assert d.sigma == 0.25
    assert not ds.X.flags.writeable


def test_noiseless_labels_exact():
    ds = make_dataset(SpectrumSpec("power_decay", 20), 10, 0.0, SeededStream(2, 1))
    assert np.array_equal(ds.y, ds.X @ ds.w_star)


def test_flat_covariance_monte_carlo():
    ds = make_dataset(SpectrumSpec("flat", 4), 10_000, 0.1, SeededStream(3, 1))
    C = ds.X.T @ ds.X / ds.n
    assert np.max(np.abs(C - np.eye(4))) <= 0.05


def test_random_neighbor_differs_in_one_example():
    ds = make_dataset(SpectrumSpec("power_decay", 16), 12, 0.25, SeededStream(0, 1))
    pair = make_neighbor(ds, "random_index", SeededStream(0, 2))
    rows = np.any(pair.neighbor.X != ds.X, axis=1)
    labels = pair.neighbor.y != ds.y
    assert rows.sum() == 1 and labels.sum() == 1
    assert np.argmax(rows) == np.argmax(labels) == pair.replaced_index


def test_high_leverage_hand_example():
    X = np.array([[10.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    ds = _ds(X)
    # direct primal leverage: row 0 alone spans its direction
    lam = 1e-6
    H = np.linalg.inv(X.T @ X + lam * np.eye(2))
    direct = np.einsum("ij,jk,ik->i", X, H, X)
    assert np.allclose(leverage_scores(X, lam), direct, rtol=1e-9)
    assert int(np.argmax(direct)) == 0
    assert make_neighbor(ds, "high_leverage", SeededStream(0, 2)).replaced_index == 0


def test_neighbor_deterministic():
    ds = make_dataset(SpectrumSpec("power_decay", 16), 12, 0.25, SeededStream(0, 1))
    a = make_neighbor(ds, "random_index", SeededStream(5, 2))
    b = make_neighbor(ds, "random_index", SeededStream(5, 2))
    assert a.replaced_index == b.replaced_index
    assert np.array_equal(a.neighbor.X, b.neighbor.X)
    assert np.array_equal(a.neighbor.y, b.neighbor.y)


def test_neighbor_rejects_unknown_selection():
    ds = make_dataset(SpectrumSpec("flat", 4), 5, 0.1, SeededStream(0, 1))
    with pytest.raises(InvalidInputError):
        make_neighbor(ds, "worst_case", SeededStream(0, 2))


def test_permute_rejects_single_example():
    with pytest.raises(InvalidInputError):
        permute_labels(_ds(np.ones((1, 2))), SeededStream(0, 6))


def test_permute_preserves_label_multiset():
    ds = make_dataset(SpectrumSpec("power_decay", 16), 40, 0.25, SeededStream(0, 1))
    out = permute_labels(ds, SeededStream(0, 6))
    assert np.array_equal(np.sort(out.y), np.sort(ds.y))
    assert np.array_equal(out.X, ds.X)
    assert np.allclose(out.noise, out.y - out.X @ out.w_star, rtol=0, atol=1e-15)


def test_identity_permutation_never_drawn():
    # P(identity) = 1/256!, far below 1e-300
    n = 256
    hits = 0
    for s in range(1000):
        perm = SeededStream(s, 6).generator().permutation(n)
        hits += bool(np.array_equal(perm, np.arange(n)))
    assert hits == 0
    assert math.lgamma(n + 1) > 1000


def test_permutation_of_zero_labels_is_noop():
    spec = SpectrumSpec("flat", 8)
    ds = make_dataset(spec, 6, 0.0, SeededStream(0, 1), w_star=np.zeros(8))
    out = permute_labels(ds, SeededStream(0, 6))
    assert np.array_equal(out.y, ds.y)


def test_explicit_identity_permutation():
    ds = make_dataset(SpectrumSpec("flat", 8), 6, 0.3, SeededStream(0, 1))
    out = permute_labels(ds, perm=np.arange(6))
    assert np.array_equal(out.y, ds.y)
    with pytest.raises(InvalidInputError):
        permute_labels(ds, perm=np.array([0, 0, 1, 2, 3, 4]))


def test_probe_zero_signal():
    spec = SpectrumSpec("flat", 5)
    pr = make_probe_and_test(spec, np.zeros(5), 0.0, SeededStream(0, 3), 8, 16)
    assert np.array_equal(pr.y_test, np.zeros(16))


def test_probe_default_shapes():
    spec = SpectrumSpec("power_decay", 512)
    pr = make_probe_and_test(spec, np.zeros(512), 0.25, SeededStream(0, 3))
    assert pr.X_probe.shape == (512, 512)
    assert pr.X_test.shape == (1024, 512)


def test_true_weights_reach_noise_floor():
    spec = SpectrumSpec("power_decay", 64)
    w = SeededStream(1, 9).generator().standard_normal(64) / 8
    pr = make_probe_and_test(spec, w, 0.25, SeededStream(1, 3), 8, 1024)
    mse = np.mean((pr.X_test @ w - pr.y_test) ** 2)
    assert abs(mse / 0.0625 - 1) <= 0.10


def test_save_load_roundtrip(tmp_path):
    ds = make_dataset(SpectrumSpec("power_decay", 9, 1.5), 7, 0.25, SeededStream(4, 1), 0.3)
    path = tmp_path / "d.tcds"
    save_dataset(ds, path)
    back = load_dataset(path)
    for name in ("X", "y", "w_star", "noise"):
        assert np.array_equal(getattr(back, name), getattr(ds, name))
    assert back.spectrum == ds.spectrum
    assert back.feature_scale == ds.feature_scale
    assert tuple(back.provenance) == tuple(ds.provenance)


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a dataset")
    with pytest.raises(InvalidInputError):
        load_dataset(path)
