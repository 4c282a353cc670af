"""Contractivity profiles (a_t, b_t), certificate prefixes and the unrolling bound.

The discrepancy is the parameter ℓ2 distance ``||w_t - w'_t||``. For each
step we take ``a_t`` as the operator norm of the linear part of the update
on S and ``b_t = ||Δ_{t+1} - J_t Δ_t||``, so the one-step inequality holds by
the triangle inequality up to the accuracy of the ``a_t`` estimate.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .datagen import Dataset, ProbeSet, Selection, make_neighbor
from .dynamics import CoupledTrajectory, OptimizerSpec, run_coupled
from .errors import InvalidInputError, InvariantViolation
from .numerics import (
    DEFAULT_POWER_ITERS,
    STREAM_INIT,
    STREAM_NEIGHBOR,
    STREAM_POWER,
    SeededStream,
    operator_norm_power_iteration,
)

ProfileMethod = Literal["gd_exact", "sgd_jacobian_proxy", "adam_identity"]

CERT_STEP_COLUMNS = ("t", "a_t", "b_t", "cert_prefix", "delta_w_norm", "probe_disc")

BOUND_REL_TOL = 1e-9
BOUND_ABS_TOL = 1e-12
A_SAFETY_FACTOR = 1.0 + 1e-6
_TINY = float(np.finfo(np.float64).tiny)


@dataclass(frozen=True)
class ContractivityProfile:
    a: np.ndarray
    b: np.ndarray
    cert_prefix: np.ndarray
    method: ProfileMethod
    recursion_deviation: float = 0.0

    @property
    def cert_T(self) -> float:
        return float(self.cert_prefix[-1])

    def rows(self, traj: CoupledTrajectory) -> list[tuple]:
        out = []
        T = len(self.a)
        for t in range(T + 1):
            a_t = float(self.a[t]) if t < T else None
            b_t = float(self.b[t]) if t < T else None
            out.append((t, a_t, b_t, float(self.cert_prefix[t]), traj.delta_norm[t],
                        traj.probe_disc[t]))
        return out


@dataclass(frozen=True)
class BoundReport:
    steps_checked: int
    max_ratio: float
    argmax_step: int
    safety_factor: float
    raw_violations: int


@dataclass(frozen=True)
class CertificateReport:
    cert_T: float
    beta_T: float
    L_d: float
    delta_T: float
    probe_disc_T: float
    neighbor_count: int
    dataset_cert: float
    per_neighbor: tuple[float, ...]
    diverged_runs: int = 0

    @property
    def flagged(self) -> bool:
        return self.diverged_runs > 0


def unroll(a: Sequence[float], b: Sequence[float]) -> tuple[np.ndarray, float]:
    """Forward recursion Cert_{t+1} = a_t Cert_t + b_t with Cert_0 = 0.

    Also evaluates every prefix as the explicit sum of products
    ``sum_j (prod_{k=j+1}^{t-1} a_k) b_j`` and returns the largest relative
    disagreement between the two forms.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError("a and b must be 1-d sequences of equal length")
    if np.any(a < 0) or np.any(b < 0):
        raise InvalidInputError("contractivity coefficients must be non-negative")
    T = len(a)
    cert = np.zeros(T + 1)
    for t in range(T):
        cert[t + 1] = a[t] * cert[t] + b[t]
    dev = 0.0
    for t in range(1, T + 1):
        # weights[j] = prod_{k=j+1}^{t-1} a_k, empty product = 1 at j = t-1
        weights = np.ones(t)
        if t > 1:
            weights[:-1] = np.cumprod(a[t - 1:0:-1])[::-1]
        direct = float(weights @ b[:t])
        # relative error is meaningless for subnormal values
        scale = max(abs(direct), abs(cert[t]), _TINY)
        dev = max(dev, abs(direct - cert[t]) / scale)
    return cert, dev


def _check_traj(traj: CoupledTrajectory, X_S: np.ndarray, kind: str) -> None:
    if traj.opt.kind != kind:
        raise InvalidInputError(f"trajectory was produced by {traj.opt.kind}, not {kind}")
    if X_S.shape[1] != traj.w[0].shape[0]:
        raise InvalidInputError("design does not match trajectory dimension")


def _deltas(traj: CoupledTrajectory) -> list[np.ndarray]:
    return [w - wp for w, wp in zip(traj.w, traj.w_prime)]


def _linear_part(X: np.ndarray, eta: float):
    scale = eta / X.shape[0]

    def apply(v):
        return v - scale * (X.T @ (X @ v))

    return apply


def profile_gd(traj: CoupledTrajectory, X_S: np.ndarray, eta: float | None = None,
               stream: SeededStream | None = None,
               iters: int = DEFAULT_POWER_ITERS) -> ContractivityProfile:
    """a_t = ||I - (eta/n) XᵀX||_op (one power iteration), b_t the linearization residual."""
    _check_traj(traj, X_S, "gd")
    eta = traj.opt.eta if eta is None else eta
    stream = stream or SeededStream(0, STREAM_POWER)
    J = _linear_part(X_S, eta)
    a_val = operator_norm_power_iteration(J, J, X_S.shape[1], iters, stream)
    d = _deltas(traj)
    T = traj.steps
    b = np.array([np.linalg.norm(d[t + 1] - J(d[t])) for t in range(T)])
    a = np.full(T, a_val)
    cert, dev = unroll(a, b)
    return ContractivityProfile(a, b, cert, "gd_exact", dev)


def profile_sgd(traj: CoupledTrajectory, X_S: np.ndarray, eta: float | None = None,
                stream: SeededStream | None = None,
                iters: int = DEFAULT_POWER_ITERS) -> ContractivityProfile:
    """Per-step minibatch Jacobian of the base run, cached per distinct batch."""
    _check_traj(traj, X_S, "sgd")
    if traj.minibatch_indices is None or len(traj.minibatch_indices) < traj.steps:
        raise InvalidInputError("trajectory carries no minibatch log")
    eta = traj.opt.eta if eta is None else eta
    stream = stream or SeededStream(0, STREAM_POWER)
    cache: dict[str, float] = {}
    d = _deltas(traj)
    T = traj.steps
    a = np.empty(T)
    b = np.empty(T)
    for t in range(T):
        idx = np.asarray(traj.minibatch_indices[t], dtype=np.intp)
        XB = X_S[idx]
        J = _linear_part(XB, eta)
        key = hashlib.sha1(np.ascontiguousarray(XB).tobytes()).hexdigest()
        if key not in cache:
            cache[key] = operator_norm_power_iteration(J, J, X_S.shape[1], iters, stream)
        a[t] = cache[key]
        b[t] = np.linalg.norm(d[t + 1] - J(d[t]))
    cert, dev = unroll(a, b)
    return ContractivityProfile(a, b, cert, "sgd_jacobian_proxy", dev)


def profile_adam(traj: CoupledTrajectory) -> ContractivityProfile:
    """a_t = 1, every nonlinearity goes into b_t = ||Δ_{t+1} - Δ_t||."""
    if traj.opt.kind != "adam":
        raise InvalidInputError(f"trajectory was produced by {traj.opt.kind}, not adam")
    d = _deltas(traj)
    T = traj.steps
    b = np.array([np.linalg.norm(d[t + 1] - d[t]) for t in range(T)])
    a = np.ones(T)
    cert, dev = unroll(a, b)
    return ContractivityProfile(a, b, cert, "adam_identity", dev)


def extract_profile(traj: CoupledTrajectory, X_S: np.ndarray,
                    stream: SeededStream | None = None,
                    iters: int = DEFAULT_POWER_ITERS) -> ContractivityProfile:
    kind = traj.opt.kind
    if kind == "gd":
        return profile_gd(traj, X_S, stream=stream, iters=iters)
    if kind == "sgd":
        return profile_sgd(traj, X_S, stream=stream, iters=iters)
    return profile_adam(traj)


def check_unrolling_bound(traj: CoupledTrajectory, profile: ContractivityProfile,
                          safety_factor: float = A_SAFETY_FACTOR) -> BoundReport:
    """Assert ||Δw_t|| <= Cert_t at every logged step.

    Power iteration under-estimates a_t, so the bound is checked against
    prefixes recomputed with ``a_t * safety_factor``. ``raw_violations``
    counts steps that would fail against the unguarded prefixes.
    """
    if len(profile.cert_prefix) != len(traj.delta_norm):
        raise InvalidInputError("profile and trajectory lengths differ")
    guarded, _ = unroll(profile.a * safety_factor, profile.b)
    delta = np.asarray(traj.delta_norm)
    slack = BOUND_REL_TOL * guarded + BOUND_ABS_TOL
    bad = np.nonzero(delta > guarded + slack)[0]
    if bad.size:
        t = int(bad[0])
        raise InvariantViolation(
            f"unrolling bound violated: |dw|={delta[t]:.6g} > cert={guarded[t]:.6g}", step=t)
    raw_bad = int(np.sum(delta > profile.cert_prefix * (1 + BOUND_REL_TOL) + BOUND_ABS_TOL))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(profile.cert_prefix > 0, delta / profile.cert_prefix, 0.0)
    k = int(np.argmax(ratio))
    return BoundReport(len(delta), float(ratio[k]), k, safety_factor, raw_bad)


def dataset_certificate(base: Dataset, probes: ProbeSet, opt: OptimizerSpec, T: int,
                        K_neighbors: int = 1, seeds: Sequence[int] | int = 1,
                        selection: Selection = "random_index", L_d: float = 1.0,
                        neighbor_stream: SeededStream | None = None,
                        init_scale: float = 0.0) -> CertificateReport:
    """max over K sampled neighbors of the seed-averaged terminal certificate."""
    if K_neighbors < 1:
        raise InvalidInputError("K_neighbors must be >= 1")
    if isinstance(seeds, int):
        seeds = list(range(seeds))
    if not seeds:
        raise InvalidInputError("need at least one seed")
    neighbor_stream = neighbor_stream or SeededStream(base.provenance[0], STREAM_NEIGHBOR)
    per_neighbor, deltas, probes_d = [], [], []
    diverged = 0
    for k in range(K_neighbors):
        pair = make_neighbor(base, selection, neighbor_stream.derive(k))
        certs, dts, pds = [], [], []
        for s in seeds:
            traj = run_coupled(pair, probes, opt, T, SeededStream(s, STREAM_INIT), init_scale)
            if traj.diverged:
                diverged += 1
                continue
            prof = extract_profile(traj, base.X, SeededStream(s, STREAM_POWER))
            certs.append(prof.cert_T)
            dts.append(traj.delta_norm[-1])
            pds.append(traj.probe_disc[-1])
        per_neighbor.append(float(np.mean(certs)) if certs else float("nan"))
        deltas.append(float(np.mean(dts)) if dts else float("nan"))
        probes_d.append(float(np.mean(pds)) if pds else float("nan"))
    finite = [c for c in per_neighbor if np.isfinite(c)]
    if not finite:
        best, cert = 0, float("nan")
    else:
        best = int(np.nanargmax(per_neighbor))
        cert = per_neighbor[best]
    return CertificateReport(cert, L_d * cert, L_d, deltas[best], probes_d[best], K_neighbors,
                             cert, tuple(per_neighbor), diverged)
