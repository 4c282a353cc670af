"""Intervention suites (step size, optimizer, neighbor geometry, labels) and the
benign-overfitting counterexample demo.

Conditions within one suite share data seeds: for a given seed, every
condition sees bitwise-identical base data, probes and neighbor draws.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .certificate import (
    BoundReport,
    ContractivityProfile,
    check_unrolling_bound,
    extract_profile,
)
from .config import Config, DataConfig
from .datagen import (
    Dataset,
    NeighborPair,
    ProbeSet,
    SpectrumSpec,
    make_dataset,
    make_neighbor,
    make_probe_and_test,
    permute_labels,
)
from .dynamics import CoupledTrajectory, OptimizerSpec, run_coupled
from .errors import InvalidInputError, InvariantViolation, NumericalError
from .numerics import (
    STREAM_DATA,
    STREAM_DEMO,
    STREAM_INIT,
    STREAM_NEIGHBOR,
    STREAM_PERMUTE,
    STREAM_POWER,
    STREAM_PROBE,
    SeededStream,
    min_norm_interpolator,
)

log = logging.getLogger(__name__)

NeighborMode = Literal["random_index", "high_leverage", "identical"]
LabelsMode = Literal["clean", "permuted", "identity_permutation"]

RECURSION_TOL = 1e-10

SUMMARY_COLUMNS = ("condition_id", "seed", "optimizer", "eta", "selection", "labels",
                   "final_cert", "final_test_mse", "final_train_mse", "gen_gap",
                   "final_probe_disc", "diverged")


@dataclass(frozen=True)
class Condition:
    label: str
    optimizer: OptimizerSpec
    selection: NeighborMode = "random_index"
    labels_mode: LabelsMode = "clean"
    data: DataConfig = field(default_factory=DataConfig)
    T: int = 200
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    K_neighbors: int = 1
    init_scale: float = 0.0
    power_iters: int = 30
    L_d: float = 1.0

    def __post_init__(self):
        if not self.seeds:
            raise InvalidInputError(f"condition {self.label!r} has no seeds")
        if self.T < 1:
            raise InvalidInputError("T must be >= 1")
        if self.selection not in ("random_index", "high_leverage", "identical"):
            raise InvalidInputError(f"unknown neighbor mode {self.selection!r}")
        if self.labels_mode not in ("clean", "permuted", "identity_permutation"):
            raise InvalidInputError(f"unknown labels mode {self.labels_mode!r}")


@dataclass
class RunSummary:
    condition_id: str
    seed: int
    optimizer: str
    eta: float
    selection: str
    labels: str
    final_cert: float
    final_test_mse: float
    final_train_mse: float
    gen_gap: float
    final_probe_disc: float
    diverged: int

    def row(self) -> tuple:
        return (self.condition_id, self.seed, self.optimizer, self.eta, self.selection,
                self.labels, self.final_cert, self.final_test_mse, self.final_train_mse,
                self.gen_gap, self.final_probe_disc, self.diverged)


@dataclass
class CellResult:
    """Everything produced by one (condition, seed) cell."""

    summary: RunSummary
    step_rows: list[tuple]
    cert_rows: list[tuple]
    replaced_index: int
    bound: BoundReport | None
    recursion_deviation: float
    violations: list[str] = field(default_factory=list)

    def series(self, name: str) -> np.ndarray:
        col = {"delta_w_norm": 1, "train_mse": 2, "test_mse": 4}.get(name)
        if col is not None:
            return np.array([r[col] for r in self.step_rows])
        col = {"cert_prefix": 3, "probe_disc": 5}[name]
        return np.array([r[col] for r in self.cert_rows])


@dataclass
class SuiteResult:
    conditions: list[Condition]
    cells: dict[tuple[str, int], CellResult]

    @property
    def rows(self) -> list[RunSummary]:
        return [self.cells[k].summary for k in sorted(self.cells, key=self._order)]

    def _order(self, key):
        labels = [c.label for c in self.conditions]
        return (labels.index(key[0]), key[1])

    def condition(self, label: str) -> Condition:
        for c in self.conditions:
            if c.label == label:
                return c
        raise KeyError(label)

    def condition_cells(self, label: str) -> list[CellResult]:
        cond = self.condition(label)
        return [self.cells[(label, s)] for s in cond.seeds]

    def aggregate(self, label: str) -> dict[str, float]:
        """Mean and population std over non-diverged seeds."""
        cells = [c for c in self.condition_cells(label) if not c.summary.diverged]
        out: dict[str, float] = {"n_seeds": len(cells)}
        for m in ("final_cert", "final_test_mse", "final_train_mse", "gen_gap",
                  "final_probe_disc"):
            vals = np.array([getattr(c.summary, m) for c in cells], dtype=np.float64)
            out[f"{m}_mean"] = float(vals.mean()) if vals.size else float("nan")
            out[f"{m}_std"] = float(vals.std()) if vals.size else float("nan")
        return out

    def mean_series(self, label: str, name: str) -> np.ndarray:
        cells = [c for c in self.condition_cells(label) if not c.summary.diverged]
        if not cells:
            return np.array([])
        return np.mean([c.series(name) for c in cells], axis=0)

    @property
    def violations(self) -> list[str]:
        return [v for k in sorted(self.cells, key=self._order) for v in self.cells[k].violations]


# ---------------------------------------------------------------------------
# data construction shared by all conditions of a suite


def build_data(data: DataConfig, seed: int) -> tuple[Dataset, ProbeSet]:
    spec = data.spectrum_spec()
    ds = make_dataset(spec, data.n, data.sigma, SeededStream(seed, STREAM_DATA),
                      data.feature_scale)
    probes = make_probe_and_test(spec, ds.w_star, data.sigma, SeededStream(seed, STREAM_PROBE),
                                 data.m_probe, data.n_test, data.feature_scale)
    return ds, probes


def build_pair(cond: Condition, ds: Dataset, seed: int, k: int = 0) -> NeighborPair:
    if cond.labels_mode == "permuted":
        ds = permute_labels(ds, SeededStream(seed, STREAM_PERMUTE))
    elif cond.labels_mode == "identity_permutation":
        ds = permute_labels(ds, perm=np.arange(ds.n))
    if cond.selection == "identical":
        return NeighborPair.identical(ds)
    return make_neighbor(ds, cond.selection, SeededStream(seed, STREAM_NEIGHBOR).derive(k),
                         cond.data.jitter_scale)


def _summarize(cond: Condition, seed: int, traj: CoupledTrajectory,
               prof: ContractivityProfile) -> RunSummary:
    test, train = traj.test_mse[-1], traj.train_mse[-1]
    return RunSummary(cond.label, seed, cond.optimizer.kind, cond.optimizer.eta,
                      cond.selection, cond.labels_mode, prof.cert_T, test, train, test - train,
                      traj.probe_disc[-1], int(traj.diverged))


def run_cell(cond: Condition, seed: int) -> CellResult:
    """One coupled run (worst of K neighbors), its profile and invariant checks."""
    ds, probes = build_data(cond.data, seed)
    best = None
    for k in range(cond.K_neighbors):
        pair = build_pair(cond, ds, seed, k)
        traj = run_coupled(pair, probes, cond.optimizer, cond.T, SeededStream(seed, STREAM_INIT),
                           cond.init_scale)
        prof = extract_profile(traj, pair.base.X, SeededStream(seed, STREAM_POWER),
                               cond.power_iters)
        if best is None or prof.cert_T > best[2].cert_T:
            best = (pair, traj, prof)
    pair, traj, prof = best
    violations: list[str] = []
    bound = None
    tag = f"{cond.label}/seed={seed}"
    try:
        bound = check_unrolling_bound(traj, prof)
    except InvariantViolation as exc:
        violations.append(f"{tag}: {exc}")
    if prof.recursion_deviation > RECURSION_TOL:
        violations.append(f"{tag}: recursion/sum deviation {prof.recursion_deviation:.3e}")
    if cond.selection == "identical":
        if any(d != 0.0 for d in traj.delta_norm) or prof.cert_T != 0.0:
            violations.append(f"{tag}: coupling null test failed (S' = S but dw != 0)")
    if traj.diverged:
        log.warning("%s diverged at step %d", tag, traj.diverged_at)
    summary = _summarize(cond, seed, traj, prof)
    return CellResult(summary, traj.log_rows(), prof.rows(traj), pair.replaced_index, bound,
                      prof.recursion_deviation, violations)


def _run_cell_args(args):
    return run_cell(*args)


def run_suite(conditions: Sequence[Condition], workers: int = 1) -> SuiteResult:
    labels = [c.label for c in conditions]
    if len(set(labels)) != len(labels):
        raise InvalidInputError(f"condition labels must be unique: {labels}")
    for c in conditions:
        if not c.seeds:
            raise InvalidInputError(f"condition {c.label!r} has an empty seed list")
    tasks = [(c, s) for c in conditions for s in c.seeds]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_args, tasks))
    else:
        results = [run_cell(c, s) for c, s in tasks]
    cells = {(c.label, s): r for (c, s), r in zip(tasks, results)}
    return SuiteResult(list(conditions), cells)


# ---------------------------------------------------------------------------
# suite definitions


def _fmt(x: float) -> str:
    return f"{x:g}"


def make_condition(cfg: Config, kind: str = "gd", eta: float | None = None,
                   selection: NeighborMode = "random_index",
                   labels_mode: LabelsMode = "clean") -> Condition:
    opt = cfg.optimizer(kind, eta)
    sel = {"random_index": "random", "high_leverage": "leverage", "identical": "null"}[selection]
    label = f"{kind}_eta{_fmt(opt.eta)}_{sel}_{labels_mode}"
    s = cfg.suite
    return Condition(label, opt, selection, labels_mode, cfg.data, s.T, tuple(cfg.seeds.seeds()),
                     s.K_neighbors, s.init_scale, s.power_iters, s.L_d)


def step_size_conditions(cfg: Config, etas: Sequence[float] | None = None) -> list[Condition]:
    etas = cfg.suite.etas if etas is None else etas
    out, seen = [], set()
    for eta in etas:
        if eta <= 0:
            raise InvalidInputError("step sizes must be positive")
        c = make_condition(cfg, "gd", eta)
        if c.label not in seen:  # repeated etas give identical rows
            seen.add(c.label)
            out.append(c)
    return out


def optimizer_conditions(cfg: Config) -> list[Condition]:
    return [make_condition(cfg, k) for k in ("sgd", "gd", "adam")]


def neighbor_conditions(cfg: Config) -> list[Condition]:
    return [make_condition(cfg, "gd", selection="random_index"),
            make_condition(cfg, "gd", selection="high_leverage")]


def label_conditions(cfg: Config) -> list[Condition]:
    return [make_condition(cfg, "gd", labels_mode="clean"),
            make_condition(cfg, "gd", labels_mode="permuted")]


def null_conditions(cfg: Config) -> list[Condition]:
    return [make_condition(cfg, k, selection="identical") for k in ("sgd", "gd", "adam")]


def full_conditions(cfg: Config) -> list[Condition]:
    out: dict[str, Condition] = {}
    for group in (step_size_conditions(cfg), optimizer_conditions(cfg), neighbor_conditions(cfg),
                  label_conditions(cfg), null_conditions(cfg)):
        for c in group:
            out.setdefault(c.label, c)
    return list(out.values())


def sweep_step_size(etas: Sequence[float], cfg: Config) -> SuiteResult:
    return run_suite(step_size_conditions(cfg, etas), cfg.suite.workers)


def compare_optimizers(cfg: Config) -> SuiteResult:
    return run_suite(optimizer_conditions(cfg), cfg.suite.workers)


def ablate_neighbor(cfg: Config) -> SuiteResult:
    return run_suite(neighbor_conditions(cfg), cfg.suite.workers)


def ablate_labels(cfg: Config) -> SuiteResult:
    return run_suite(label_conditions(cfg), cfg.suite.workers)


# ---------------------------------------------------------------------------
# benign-overfitting counterexample

DEMO_COLUMNS = ("trial", "phase", "train_mse_S", "train_mse_Sprime", "excess_risk", "test_mse",
                "delta_T", "interpolates", "small_risk", "large_delta", "dropped")


@dataclass
class DemoTrial:
    trial: int
    phase: str
    train_mse_S: float
    train_mse_Sprime: float
    excess_risk: float
    test_mse: float
    delta_T: float
    interpolates: bool
    dropped: bool = False
    small_risk: bool = False
    large_delta: bool = False

    def row(self) -> tuple:
        return (self.trial, self.phase, self.train_mse_S, self.train_mse_Sprime,
                self.excess_risk, self.test_mse, self.delta_T, int(self.interpolates),
                int(self.small_risk), int(self.large_delta), int(self.dropped))


@dataclass
class DemoReport:
    trials: list[DemoTrial]
    risk_max: float
    delta_min: float
    fraction: float
    median_fraction: float
    dropped: int
    all_interpolate: bool
    sigma: float

    @property
    def fresh(self) -> list[DemoTrial]:
        return [t for t in self.trials if t.phase == "fresh"]


def demo_spectrum(d) -> SpectrumSpec:
    return SpectrumSpec("spiked", d.p, spike_count=d.spike_count, spike_value=d.spike_value,
                        weak_value=d.weak_value)


def demo_trial(d, seed: int, trial: int, phase: str) -> DemoTrial:
    """Min-norm interpolants on S and a random-index neighbor S'."""
    spec = demo_spectrum(d)
    lam = spec.eigenvalues()
    stream = SeededStream(seed, STREAM_DEMO).derive(trial)
    # signal lives on the strong directions only, with unit signal variance
    k = d.spike_count
    w_star = np.zeros(d.p)
    w_star[:k] = stream.derive(10).generator().standard_normal(k) / np.sqrt(k * lam[0])
    ds = make_dataset(spec, d.n, d.sigma, stream.derive(0), 1.0, w_star=w_star)
    probes = make_probe_and_test(spec, w_star, d.sigma, stream.derive(1), d.m_probe, d.n_test)
    pair = make_neighbor(ds, "random_index", stream.derive(2), d.jitter_scale)
    try:
        w, _ = min_norm_interpolator(ds.X, ds.y, d.interp_jitter)
        wp, _ = min_norm_interpolator(pair.neighbor.X, pair.neighbor.y, d.interp_jitter)
    except NumericalError:
        nan = float("nan")
        return DemoTrial(trial, phase, nan, nan, nan, nan, nan, False, dropped=True)
    tr = float(np.mean((ds.X @ w - ds.y) ** 2))
    trp = float(np.mean((pair.neighbor.X @ wp - pair.neighbor.y) ** 2))
    err = w - w_star
    excess = float(err @ (lam * err))  # exact population excess over the noise floor
    test = float(np.mean((probes.X_test @ w - probes.y_test) ** 2))
    pd = probes.X_probe @ (w - wp)
    delta = float(np.sqrt(pd @ pd / len(pd)))
    ok = tr <= d.interp_tol and trp <= d.interp_tol
    return DemoTrial(trial, phase, tr, trp, excess, test, delta, ok)


def necessity_demo(d, seed: int = 0,
                   thresholds: tuple[float, float] | None = None) -> DemoReport:
    """Fraction of fresh trials that interpolate, have small excess risk and a
    large one-sample prediction change.

    Without explicit ``thresholds`` they are calibrated on a separate pilot
    batch: ``risk_max`` is its ``risk_quantile`` of excess risk and
    ``delta_min`` its ``delta_quantile`` of Δ_T.
    """
    if d.n > d.p:
        raise InvalidInputError("necessity demo needs n <= p")
    pilot = [demo_trial(d, seed, i, "pilot") for i in range(d.pilot_trials)] \
        if thresholds is None else []
    fresh = [demo_trial(d, seed, d.pilot_trials + i, "fresh") for i in range(d.trials)]
    if thresholds is None:
        ok = [t for t in pilot if not t.dropped and t.interpolates]
        if not ok:
            raise NumericalError("no usable pilot trials")
        exc = np.array([t.excess_risk for t in ok])
        dl = np.array([t.delta_T for t in ok])
        risk_max = float(np.quantile(exc, d.risk_quantile))
        delta_min = float(np.quantile(dl, d.delta_quantile))
        med = (float(np.median(exc)), float(np.median(dl)))
    else:
        risk_max, delta_min = thresholds
        med = thresholds
    trials = pilot + fresh
    for t in trials:
        if t.dropped:
            continue
        t.small_risk = t.excess_risk <= risk_max
        t.large_delta = t.delta_T >= delta_min
    used = [t for t in fresh if not t.dropped]
    hits = [t for t in used if t.interpolates and t.small_risk and t.large_delta]
    med_hits = [t for t in used if t.interpolates and t.excess_risk <= med[0]
                and t.delta_T >= med[1]]
    n_used = max(len(used), 1)
    return DemoReport(trials, risk_max, delta_min, len(hits) / n_used, len(med_hits) / n_used,
                      sum(t.dropped for t in trials),
                      all(t.interpolates for t in trials if not t.dropped), d.sigma)
