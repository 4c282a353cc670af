import numpy as np
import pytest

from trajcert.certificate import (
    CERT_STEP_COLUMNS,
    ContractivityProfile,
    check_unrolling_bound,
    dataset_certificate,
    profile_adam,
    profile_gd,
    profile_sgd,
    unroll,
)
from trajcert.config import DataConfig
from trajcert.datagen import Dataset, NeighborPair, ProbeSet, SpectrumSpec, make_neighbor
from trajcert.dynamics import OptimizerSpec, run_coupled
from trajcert.errors import InvalidInputError, InvariantViolation
from trajcert.experiments import build_data
from trajcert.numerics import STREAM_INIT, STREAM_POWER, SeededStream
from test_dynamics import _problem


def _pair_traj(kind="gd", eta=0.2, T=30, batch=4, seed=0):
    ds, probes = _problem(seed=seed)
    pair = make_neighbor(ds, "random_index", SeededStream(seed, 2))
    traj = run_coupled(pair, probes, OptimizerSpec(kind, eta, batch_size=batch), T,
                       SeededStream(seed, 4))
    return pair, probes, traj


def test_unroll_hand_example():
    cert, dev = unroll([2.0, 3.0], [1.0, 1.0])
    assert cert.tolist() == [0.0, 1.0, 4.0]
    assert dev == 0.0


def test_unroll_zero_injection():
    cert, _ = unroll([0.7, 1.3, 2.0], [0.0, 0.0, 0.0])
    assert cert.tolist() == [0.0] * 4


def test_unroll_unit_factors_give_cumsum():
    b = [0.5, 0.25, 2.0, 1e-3]
    cert, _ = unroll([1.0] * 4, b)
    assert np.array_equal(cert[1:], np.cumsum(b))


def test_unroll_rejects_negative_and_shape_mismatch():
    with pytest.raises(InvalidInputError):
        unroll([-0.1], [1.0])
    with pytest.raises(InvalidInputError):
        unroll([1.0, 1.0], [1.0])


def test_sum_of_products_matches_recursion_long_horizon():
    rng = np.random.default_rng(0)
    a = rng.uniform(0.5, 1.5, 1000)
    b = rng.uniform(0.0, 1.0, 1000)
    _, dev = unroll(a, b)
    assert dev <= 1e-10


def test_scalar_gd_factor_exact():
    X = np.array([[1.0]])
    ds = Dataset(X, np.array([1.0]), np.zeros(1), np.ones(1), 0.0, SpectrumSpec("flat", 1))
    probes = ProbeSet(X, X, np.array([1.0]))
    traj = run_coupled(NeighborPair.identical(ds), probes, OptimizerSpec("gd", 0.5), 4,
                       SeededStream(0, 4))
    prof = profile_gd(traj, X)
    assert prof.a.tolist() == [0.5] * 4
    assert prof.cert_prefix.tolist() == [0.0] * 5


def test_gd_one_step_soundness():
    _, _, traj = _pair_traj()
    prof = profile_gd(traj, _pair_traj()[0].base.X)
    d = np.asarray(traj.delta_norm)
    assert np.all(d[1:] <= prof.a * d[:-1] + prof.b + 1e-12)


def test_gd_certificate_doubles_with_step_size():
    ds, probes = build_data(DataConfig(), 0)
    pair = make_neighbor(ds, "random_index", SeededStream(0, 2).derive(0))
    certs = []
    for eta in (0.1, 0.2):
        traj = run_coupled(pair, probes, OptimizerSpec("gd", eta), 200, SeededStream(0, STREAM_INIT))
        certs.append(profile_gd(traj, ds.X, stream=SeededStream(0, STREAM_POWER)).cert_T)
    assert abs(certs[1] / certs[0] - 2) <= 0.03 * 2


def test_sgd_full_batch_reduces_to_gd():
    pair, probes, _ = _pair_traj()
    n = pair.base.n
    t_sgd = run_coupled(pair, probes, OptimizerSpec("sgd", 0.2, batch_size=n), 10, SeededStream(0, 4))
    t_gd = run_coupled(pair, probes, OptimizerSpec("gd", 0.2), 10, SeededStream(0, 4))
    assert t_sgd.log_rows() == t_gd.log_rows()
    p_sgd = profile_sgd(t_sgd, pair.base.X, stream=SeededStream(0, 7))
    p_gd = profile_gd(t_gd, pair.base.X, stream=SeededStream(0, 7))
    assert np.array_equal(p_sgd.a, p_gd.a)
    assert np.array_equal(p_sgd.b, p_gd.b)


def test_sgd_zero_batch_rows():
    pair, probes, _ = _pair_traj()
    X = pair.base.X.copy()
    X[:4] = 0.0
    base = Dataset(X, pair.base.y, pair.base.w_star, pair.base.noise, 0.25, pair.base.spectrum)
    Xp = pair.neighbor.X.copy()
    Xp[:4] = 0.0
    nb = Dataset(Xp, pair.neighbor.y, pair.base.w_star, pair.neighbor.noise, 0.25,
                 pair.base.spectrum)
    traj = run_coupled(NeighborPair(base, nb, pair.replaced_index, "random_index"), probes,
                       OptimizerSpec("sgd", 0.2, batch_size=4), 5, SeededStream(0, 4))
    traj.minibatch_indices = [np.arange(4)] * traj.steps
    prof = profile_sgd(traj, X)
    d = [w - wp for w, wp in zip(traj.w, traj.w_prime)]
    # ||v|| of a normalized vector is 1 up to one rounding
    assert np.allclose(prof.a, 1.0, rtol=0, atol=4e-16)
    assert np.allclose(prof.b, [np.linalg.norm(d[t + 1] - d[t]) for t in range(traj.steps)],
                       rtol=0, atol=0)


def test_sgd_requires_batch_log():
    pair, _, traj = _pair_traj("sgd")
    traj.minibatch_indices = None
    with pytest.raises(InvalidInputError):
        profile_sgd(traj, pair.base.X)


def test_adam_certificate_is_plain_sum():
    _, _, traj = _pair_traj("adam", 0.05)
    prof = profile_adam(traj)
    total = 0.0
    for t, b in enumerate(prof.b):
        total += b
        assert prof.cert_prefix[t + 1] == total


@pytest.mark.parametrize("kind", ["gd", "sgd", "adam"])
def test_identical_pair_gives_zero_profile(kind):
    ds, probes = _problem()
    traj = run_coupled(NeighborPair.identical(ds), probes, OptimizerSpec(kind, 0.1, batch_size=4),
                       10, SeededStream(0, 4))
    prof = {"gd": lambda: profile_gd(traj, ds.X), "sgd": lambda: profile_sgd(traj, ds.X),
            "adam": lambda: profile_adam(traj)}[kind]()
    assert np.all(prof.b == 0.0) and np.all(prof.cert_prefix == 0.0)


def test_profile_rejects_wrong_optimizer():
    pair, _, traj = _pair_traj("adam", 0.05)
    with pytest.raises(InvalidInputError):
        profile_gd(traj, pair.base.X)


@pytest.mark.parametrize("kind", ["gd", "sgd", "adam"])
def test_bound_holds_on_valid_profiles(kind):
    pair, _, traj = _pair_traj(kind, 0.05 if kind == "adam" else 0.2)
    prof = {"gd": profile_gd, "sgd": profile_sgd}.get(kind, lambda t, X: profile_adam(t))(traj, pair.base.X)
    rep = check_unrolling_bound(traj, prof)
    assert rep.raw_violations == 0
    assert rep.max_ratio <= 1 + 1e-9


def test_bound_negative_control():
    pair, _, traj = _pair_traj()
    prof = profile_gd(traj, pair.base.X)
    zeroed = ContractivityProfile(prof.a, np.zeros_like(prof.b), np.zeros_like(prof.cert_prefix),
                                  prof.method)
    with pytest.raises(InvariantViolation) as exc:
        check_unrolling_bound(traj, zeroed)
    assert exc.value.step == 1


def test_gd_tightness_on_defaults():
    ratios = []
    for seed in range(5):
        ds, probes = build_data(DataConfig(), seed)
        pair = make_neighbor(ds, "random_index", SeededStream(seed, 2).derive(0))
        traj = run_coupled(pair, probes, OptimizerSpec("gd", 0.2), 200, SeededStream(seed, STREAM_INIT))
        prof = profile_gd(traj, ds.X, stream=SeededStream(seed, STREAM_POWER))
        ratios.append(traj.delta_norm[-1] / prof.cert_T)
    assert np.median(ratios) >= 0.9
    assert max(ratios) <= 1.0


def test_certificate_rows_schema():
    pair, _, traj = _pair_traj()
    rows = profile_gd(traj, pair.base.X).rows(traj)
    assert len(rows) == traj.steps + 1
    assert all(len(r) == len(CERT_STEP_COLUMNS) for r in rows)
    assert rows[-1][1] is None and rows[-1][2] is None


def test_dataset_certificate_single_run():
    ds, probes = _problem()
    opt = OptimizerSpec("gd", 0.2)
    rep = dataset_certificate(ds, probes, opt, 20, K_neighbors=1, seeds=[3],
                              neighbor_stream=SeededStream(0, 2))
    pair = make_neighbor(ds, "random_index", SeededStream(0, 2).derive(0))
    traj = run_coupled(pair, probes, opt, 20, SeededStream(3, STREAM_INIT))
    prof = profile_gd(traj, ds.X, stream=SeededStream(3, STREAM_POWER))
    assert rep.cert_T == prof.cert_T
    assert rep.beta_T == rep.L_d * rep.cert_T


def test_dataset_certificate_is_max_over_neighbors():
    ds, probes = _problem()
    rep = dataset_certificate(ds, probes, OptimizerSpec("gd", 0.2), 15, K_neighbors=4, seeds=2,
                              L_d=2.0)
    assert rep.dataset_cert == max(rep.per_neighbor)
    assert rep.beta_T == 2.0 * rep.dataset_cert
    assert not rep.flagged


def test_dataset_certificate_defaults_near_reported_scale():
    ds, probes = build_data(DataConfig(), 0)
    rep = dataset_certificate(ds, probes, OptimizerSpec("gd", 0.2), 200, K_neighbors=1, seeds=5)
    assert 0.5 * 0.022378 <= rep.cert_T <= 1.5 * 0.022378


def test_dataset_certificate_rejects_empty():
    ds, probes = _problem()
    with pytest.raises(InvalidInputError):
        dataset_certificate(ds, probes, OptimizerSpec("gd", 0.2), 5, K_neighbors=0)
    with pytest.raises(InvalidInputError):
        dataset_certificate(ds, probes, OptimizerSpec("gd", 0.2), 5, seeds=[])
