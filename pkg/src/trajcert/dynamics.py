"""Optimizer step maps and the shared-randomness coupled runner.

Gradients use the loss (1/2n)||Xw - y||², so a GD step is
``w - (eta/n) Xᵀ(Xw - y)``. Reported MSE is (1/n)||Xw - y||².
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .datagen import NeighborPair, ProbeSet
from .errors import InvalidInputError
from .numerics import SeededStream

OptimizerKind = Literal["gd", "sgd", "adam"]

STEP_LOG_COLUMNS = ("t", "delta_w_norm", "train_mse_S", "train_mse_Sprime", "test_mse_S",
                    "diverged_flag")


@dataclass(frozen=True)
class OptimizerSpec:
    kind: OptimizerKind = "gd"
    eta: float = 0.2
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("gd", "sgd", "adam"):
            raise InvalidInputError(f"unknown optimizer {self.kind!r}")
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise InvalidInputError(f"eta must be finite and positive, got {self.eta}")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidInputError("Adam betas must lie in [0, 1)")
        if self.eps < 0:
            raise InvalidInputError("eps must be non-negative")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, p: int) -> "AdamState":
        return cls(np.zeros(p), np.zeros(p), 0)


@dataclass
class CoupledTrajectory:
    """Both runs of one coupled training, indexed t = 0..T (T+1 entries).

    If the run diverged, sequences stop at the last finite step and
    ``diverged_at`` records the first non-finite step.
    """

    opt: OptimizerSpec
    w: list[np.ndarray]
    w_prime: list[np.ndarray]
    delta_norm: list[float]
    train_mse: list[float]
    train_mse_prime: list[float]
    test_mse: list[float]
    probe_disc: list[float]
    minibatch_indices: list[np.ndarray] | None = None
    diverged_at: int | None = None
    T_requested: int = 0

    @property
    def steps(self) -> int:
        return len(self.w) - 1

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def log_rows(self) -> list[tuple]:
        rows = []
        for t in range(len(self.w)):
            rows.append((t, self.delta_norm[t], self.train_mse[t], self.train_mse_prime[t],
                         self.test_mse[t], int(self.diverged)))
        return rows


def init_weights(p: int, stream: SeededStream, init_scale: float = 0.0) -> np.ndarray:
    if p < 1:
        raise InvalidInputError("p must be positive")
    if init_scale == 0.0:
        return np.zeros(p)
    return init_scale * stream.generator().standard_normal(p)


def mse_gradient(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return X.T @ (X @ w - y) / X.shape[0]


def gd_step(w: np.ndarray, X: np.ndarray, y: np.ndarray, eta: float) -> np.ndarray:
    return w - eta * mse_gradient(w, X, y)


def sgd_step(w: np.ndarray, X: np.ndarray, y: np.ndarray, eta: float,
             batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.intp)
    if batch.size == 0:
        raise InvalidInputError("empty minibatch")
    if batch.min() < 0 or batch.max() >= X.shape[0]:
        raise InvalidInputError("minibatch index out of range")
    if batch.size == X.shape[0] and np.array_equal(batch, np.arange(X.shape[0])):
        return gd_step(w, X, y, eta)
    return gd_step(w, X[batch], y[batch], eta)


def adam_step(w: np.ndarray, state: AdamState, grad: np.ndarray, eta: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[np.ndarray, AdamState]:
    if state.m.shape != w.shape or grad.shape != w.shape:
        raise InvalidInputError("moment / gradient shape mismatch")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return w - eta * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


def minibatch_schedule(n: int, batch_size: int, T: int, stream: SeededStream) -> list[np.ndarray]:
    """Without-replacement epochs: reshuffle once all n indices were used."""
    gen = stream.generator()
    b = min(batch_size, n)
    batches: list[np.ndarray] = []
    order = gen.permutation(n)
    pos = 0
    while len(batches) < T:
        if pos + b > n:
            order = gen.permutation(n)
            pos = 0
        batches.append(np.sort(order[pos: pos + b]))
        pos += b
    return batches


def _mse(X: np.ndarray, w: np.ndarray, y: np.ndarray) -> float:
    r = X @ w - y
    return float(r @ r) / len(y)


def run_coupled(pair: NeighborPair, probes: ProbeSet, opt: OptimizerSpec, T: int,
                stream: SeededStream, init_scale: float = 0.0) -> CoupledTrajectory:
    """Train on S and S' from the same init with the same minibatch sequence.

    ``stream`` carries the algorithmic randomness U shared by both runs.
    """
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    S, Sp = pair.base, pair.neighbor
    if S.X.shape != Sp.X.shape:
        raise InvalidInputError("neighbor shape differs from base")
    p = S.p
    w0 = init_weights(p, stream.derive(0), init_scale)
    batches = None
    if opt.kind == "sgd":
        batches = minibatch_schedule(S.n, opt.batch_size, T, stream.derive(1))

    w, wp = w0.copy(), w0.copy()
    st, stp = AdamState.zeros(p), AdamState.zeros(p)
    m_probe = probes.X_probe.shape[0]

    traj = CoupledTrajectory(opt, [], [], [], [], [], [], [], batches, None, T)

    def record(w_, wp_):
        d = w_ - wp_
        traj.w.append(w_)
        traj.w_prime.append(wp_)
        traj.delta_norm.append(float(np.linalg.norm(d)))
        traj.train_mse.append(_mse(S.X, w_, S.y))
        traj.train_mse_prime.append(_mse(Sp.X, wp_, Sp.y))
        traj.test_mse.append(_mse(probes.X_test, w_, probes.y_test))
        pd = probes.X_probe @ d
        traj.probe_disc.append(float(np.sqrt(pd @ pd / m_probe)))

    record(w, wp)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            if opt.kind == "gd":
                w_new = gd_step(w, S.X, S.y, opt.eta)
                wp_new = gd_step(wp, Sp.X, Sp.y, opt.eta)
            elif opt.kind == "sgd":
                w_new = sgd_step(w, S.X, S.y, opt.eta, batches[t])
                wp_new = sgd_step(wp, Sp.X, Sp.y, opt.eta, batches[t])
            else:
                w_new, st = adam_step(w, st, mse_gradient(w, S.X, S.y), opt.eta,
                                      opt.beta1, opt.beta2, opt.eps)
                wp_new, stp = adam_step(wp, stp, mse_gradient(wp, Sp.X, Sp.y), opt.eta,
                                        opt.beta1, opt.beta2, opt.eps)
            if not (np.all(np.isfinite(w_new)) and np.all(np.isfinite(wp_new))):
                traj.diverged_at = t + 1
                break
            w, wp = w_new, wp_new
            record(w, wp)
            if not np.isfinite(traj.train_mse[-1] + traj.train_mse_prime[-1] + traj.test_mse[-1]):
                traj.diverged_at = t + 1
                for seq in (traj.w, traj.w_prime, traj.delta_norm, traj.train_mse,
                            traj.train_mse_prime, traj.test_mse, traj.probe_disc):
                    seq.pop()
                break
    if batches is not None:
        traj.minibatch_indices = batches[: traj.steps]
    return traj
