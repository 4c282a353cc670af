"""Synthetic regression problems, probe/test designs and one-sample neighbors."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import InvalidInputError
from .numerics import (
    DEFAULT_JITTER_SCALE,
    SeededStream,
    cholesky_with_jitter,
    gaussian_with_covariance,
)

SpectrumKind = Literal["power_decay", "flat", "spiked"]
Selection = Literal["random_index", "high_leverage"]

DATASET_MAGIC = b"TCERT-DS v1\n"


@dataclass(frozen=True)
class SpectrumSpec:
    """Eigenvalues of the input covariance, normalized to mean 1.

    ``power_decay``: λ_j = j^-alpha. ``flat``: all ones. ``spiked``:
    ``spike_count`` values of ``spike_value`` followed by ``weak_value``.
    """

    kind: SpectrumKind = "power_decay"
    p: int = 512
    alpha: float = 1.0
    spike_count: int = 0
    spike_value: float = 1.0
    weak_value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("power_decay", "flat", "spiked"):
            raise InvalidInputError(f"unknown spectrum kind {self.kind!r}")
        if self.p < 1:
            raise InvalidInputError("p must be positive")
        if self.kind == "spiked":
            if not 0 < self.spike_count <= self.p:
                raise InvalidInputError("spike_count must be in [1, p]")
            if self.spike_value <= 0 or self.weak_value < 0:
                raise InvalidInputError("spike_value must be > 0 and weak_value >= 0")

    def eigenvalues(self) -> np.ndarray:
        if self.kind == "flat":
            lam = np.ones(self.p)
        elif self.kind == "power_decay":
            lam = np.arange(1, self.p + 1, dtype=np.float64) ** (-float(self.alpha))
        else:
            lam = np.full(self.p, float(self.weak_value))
            lam[: self.spike_count] = self.spike_value
        return lam / lam.mean()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "p": self.p, "alpha": self.alpha,
                "spike_count": self.spike_count, "spike_value": self.spike_value,
                "weak_value": self.weak_value}


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    w_star: np.ndarray
    noise: np.ndarray
    noise_sigma: float
    spectrum: SpectrumSpec
    feature_scale: float = 1.0
    provenance: tuple[int, int] = (0, 0)

    def __post_init__(self):
        for name in ("X", "y", "w_star", "noise"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class NeighborPair:
    base: Dataset
    neighbor: Dataset
    replaced_index: int
    selection: Selection

    @classmethod
    def identical(cls, base: Dataset) -> "NeighborPair":
        """S' = S, used for the coupling null test."""
        return cls(base, base, 0, "random_index")


@dataclass(frozen=True, eq=False)
class ProbeSet:
    X_probe: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray


def covariance_factor(spec: SpectrumSpec, feature_scale: float = 1.0) -> np.ndarray:
    lam = spec.eigenvalues() * feature_scale**2
    # diagonal covariance: exact factor, no jitter needed
    L, _ = cholesky_with_jitter(np.diag(lam), 0.0)
    return L


def make_dataset(spec: SpectrumSpec, n: int, sigma: float, stream: SeededStream,
                 feature_scale: float = 1.0, w_star: np.ndarray | None = None) -> Dataset:
    """X ~ N(0, s²·diag(λ)), w* ~ N(0, I/p) unless given, y = X w* + ε."""
    if n < 1:
        raise InvalidInputError("n must be positive")
    if sigma < 0:
        raise InvalidInputError("sigma must be non-negative")
    if feature_scale <= 0:
        raise InvalidInputError("feature_scale must be positive")
    X = gaussian_with_covariance(stream.derive(0), n, covariance_factor(spec, feature_scale))
    if w_star is None:
        w_star = stream.derive(1).generator().standard_normal(spec.p) / np.sqrt(spec.p)
    else:
        w_star = np.asarray(w_star, dtype=np.float64)
        if w_star.shape != (spec.p,):
            raise InvalidInputError("w_star has the wrong length")
    noise = sigma * stream.derive(2).generator().standard_normal(n)
    y = X @ w_star + noise
    return Dataset(X, y, w_star, noise, float(sigma), spec, float(feature_scale),
                   (int(stream.seed), int(stream.stream_id)))


def leverage_scores(X: np.ndarray, lam: float) -> np.ndarray:
    """x_iᵀ (XᵀX + lam I)⁻¹ x_i for every row, via the n×n dual form."""
    n, p = X.shape
    if lam <= 0:
        G = X.T @ X
        return np.einsum("ij,ij->i", X @ np.linalg.pinv(G), X)
    # X (XᵀX + λI)⁻¹ Xᵀ = K (K + λI)⁻¹ with K = XXᵀ
    K = X @ X.T
    H = np.linalg.solve(K + lam * np.eye(n), K)
    return np.diag(H).copy()


def make_neighbor(base: Dataset, selection: Selection, stream: SeededStream,
                  jitter_scale: float = DEFAULT_JITTER_SCALE) -> NeighborPair:
    """Replace one (row, label) of ``base`` by a fresh draw at matched scale.

    The row comes from N(0, XᵀX/n + λI) and the label from
    N(mean(y), var(y)), independently of the row.
    """
    n, p = base.X.shape
    if n < 2:
        raise InvalidInputError("neighbor construction needs n >= 2")
    if selection not in ("random_index", "high_leverage"):
        raise InvalidInputError(f"unknown selection {selection!r}")
    gen = stream.generator()
    # index draw is consumed even for leverage selection so both modes share the replacement draw
    rand_idx = int(gen.integers(n))
    if selection == "random_index":
        idx = rand_idx
    else:
        gram = base.X.T @ base.X
        lam = jitter_scale * float(np.trace(gram)) / p
        idx = int(np.argmax(leverage_scores(base.X, lam)))  # argmax takes the lowest index on ties
    emp_cov = base.X.T @ base.X / n
    L, _ = cholesky_with_jitter(emp_cov, jitter_scale)
    x_new = gaussian_with_covariance(stream.derive(0), 1, L)[0]
    y_new = float(base.y.mean() + base.y.std() * gen.standard_normal())
    X2 = base.X.copy()
    y2 = base.y.copy()
    X2[idx] = x_new
    y2[idx] = y_new
    noise2 = base.noise.copy()
    noise2[idx] = y_new - x_new @ base.w_star  # implied residual of the marginal label draw
    neighbor = replace(base, X=X2, y=y2, noise=noise2)
    return NeighborPair(base, neighbor, idx, selection)


def permute_labels(base: Dataset, stream: SeededStream | None = None,
                   perm: np.ndarray | None = None) -> Dataset:
    """Shuffle labels with a seeded permutation (or an explicit ``perm``); X is unchanged."""
    if base.n < 2:
        raise InvalidInputError("permutation needs n >= 2")
    if perm is None:
        if stream is None:
            raise InvalidInputError("need a stream or an explicit permutation")
        perm = stream.generator().permutation(base.n)
    perm = np.asarray(perm, dtype=np.intp)
    if not np.array_equal(np.sort(perm), np.arange(base.n)):
        raise InvalidInputError("perm is not a permutation of range(n)")
    y = base.y[perm].copy()
    return replace(base, y=y, noise=y - base.X @ base.w_star)


def make_probe_and_test(spec: SpectrumSpec, w_star: np.ndarray, sigma: float,
                        stream: SeededStream, m_probe: int = 512, n_test: int = 1024,
                        feature_scale: float = 1.0) -> ProbeSet:
    L = covariance_factor(spec, feature_scale)
    X_probe = gaussian_with_covariance(stream.derive(0), m_probe, L)
    X_test = gaussian_with_covariance(stream.derive(1), n_test, L)
    y_test = X_test @ w_star + sigma * stream.derive(2).generator().standard_normal(n_test)
    return ProbeSet(X_probe, X_test, y_test)


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Binary container: magic line, JSON header, then float64 payload (little endian)."""
    header = {
        "n": ds.n, "p": ds.p, "provenance": list(ds.provenance),
        "noise_sigma": ds.noise_sigma, "feature_scale": ds.feature_scale,
        "spectrum": ds.spectrum.to_dict(),
    }
    hb = json.dumps(header, sort_keys=True).encode()
    payload = np.concatenate([ds.X.ravel(order="C"), ds.y, ds.w_star, ds.noise]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        fh.write(payload.tobytes())


def load_dataset(path: str | Path) -> Dataset:
    raw = Path(path).read_bytes()
    if not raw.startswith(DATASET_MAGIC):
        raise InvalidInputError(f"{path}: not a TCERT-DS v1 file")
    off = len(DATASET_MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    header = json.loads(raw[off: off + hlen])
    off += hlen
    n, p = header["n"], header["p"]
    data = np.frombuffer(raw, dtype="<f8", offset=off).astype(np.float64)
    if data.size != n * p + n + p + n:
        raise InvalidInputError(f"{path}: payload size mismatch")
    X = data[: n * p].reshape(n, p)
    y = data[n * p: n * p + n]
    w = data[n * p + n: n * p + n + p]
    noise = data[n * p + n + p:]
    return Dataset(X.copy(), y.copy(), w.copy(), noise.copy(), header["noise_sigma"],
                   SpectrumSpec(**header["spectrum"]), header["feature_scale"],
                   tuple(header["provenance"]))
