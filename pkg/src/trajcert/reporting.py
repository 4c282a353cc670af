"""CSV emission, table rendering, plot series and the ``report`` checker.

All files are comma-separated with a header row, LF line endings and
floats written as the shortest repr that round-trips exactly.
"""

from __future__ import annotations

import csv
import io
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .certificate import BOUND_ABS_TOL, BOUND_REL_TOL, CERT_STEP_COLUMNS, unroll
from .config import Config, ConfigError, dump_config, parse_config
from .dynamics import STEP_LOG_COLUMNS
from .errors import InvalidInputError, TrajcertError
from .experiments import (
    DEMO_COLUMNS,
    RECURSION_TOL,
    SUMMARY_COLUMNS,
    DemoReport,
    SuiteResult,
    label_conditions,
    make_condition,
    neighbor_conditions,
    optimizer_conditions,
)
from .numerics import SeededStream, operator_norm_power_iteration

SUITE_COLUMNS = ("condition_id", "optimizer", "eta", "selection", "labels", "n_seeds",
                 "n_diverged", "final_cert_mean", "final_cert_std", "final_test_mse_mean",
                 "final_test_mse_std", "final_train_mse_mean", "final_train_mse_std",
                 "gen_gap_mean", "gen_gap_std", "final_probe_disc_mean", "final_probe_disc_std")
SERIES_COLUMNS = ("condition", "seed", "t", "metric", "value")
SERIES_METRICS = ("cert_prefix", "probe_disc", "delta_w_norm", "train_mse", "test_mse")
SCATTER_COLUMNS = ("condition", "seed", "optimizer", "eta", "final_cert", "early_cert",
                   "final_test_mse")
DEMO_SUMMARY_COLUMNS = ("seed", "n", "p", "spike_count", "weak_value", "sigma", "pilot_trials",
                        "trials", "risk_quantile", "delta_quantile", "risk_max", "delta_min",
                        "fraction", "median_fraction", "dropped", "all_interpolate",
                        "interp_tol")

TABLE_IDS = ("T1", "T2", "T3", "T4", "A5", "A6", "A7", "A8")
TABLE_SCHEMAS = {
    "T1": ("eta", "final_certificate", "final_test_mse", "gen_gap"),
    "T2": ("replacement", "final_certificate", "probe_discrepancy"),
    "T3": ("optimizer", "final_certificate", "final_test_mse", "gen_gap"),
    "T4": ("labels", "final_certificate", "final_test_mse", "gen_gap"),
    # A5 has one prefix column per swept step size, named eta_<value>
    "A5": ("t",),
    "A6": ("t", "random_replacement", "high_leverage_replacement"),
    "A7": ("t", "sgd", "gd", "adam"),
    "A8": ("t", "clean_labels", "permuted_labels"),
}

SUITE_OUTPUTS = ("summary.csv", "suite.csv", "series.csv", "scatter.csv", "runs", "tables")
DEMO_OUTPUTS = ("demo.csv", "demo_summary.csv")


# ---------------------------------------------------------------------------
# CSV primitives


def fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        if len(r) != len(header):
            raise InvalidInputError(f"{path.name}: row has {len(r)} fields, header {len(header)}")
        w.writerow([fmt_value(v) for v in r])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


class CorruptOutput(TrajcertError):
    """A suite output file is missing, malformed or has the wrong header."""


def read_csv(path: str | Path, header: Sequence[str] | None = None) -> list[dict[str, str]]:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CorruptOutput(f"{path}: cannot read ({exc.strerror})") from None
    if not rows:
        raise CorruptOutput(f"{path}: empty file")
    if header is not None and tuple(rows[0]) != tuple(header):
        raise CorruptOutput(f"{path}: unexpected header {rows[0]}")
    out = []
    for i, r in enumerate(rows[1:], 2):
        if len(r) != len(rows[0]):
            raise CorruptOutput(f"{path}:{i}: expected {len(rows[0])} fields, got {len(r)}")
        out.append(dict(zip(rows[0], r)))
    return out


def _num(path: Path, row: dict, key: str) -> float | None:
    s = row[key]
    if s == "":
        return None
    try:
        return float(s)
    except ValueError:
        raise CorruptOutput(f"{path}: non-numeric {key}={s!r}") from None


def _column(path: Path, rows: list[dict], key: str, allow_blank_last: bool = False) -> np.ndarray:
    vals = [_num(path, r, key) for r in rows]
    if allow_blank_last and vals:
        vals = vals[:-1]
    if any(v is None for v in vals):
        raise CorruptOutput(f"{path}: blank {key} value")
    return np.array(vals, dtype=np.float64)


# ---------------------------------------------------------------------------
# writers


def run_dir(out_dir: Path, label: str, seed: int) -> Path:
    return Path(out_dir) / "runs" / label / str(seed)


def write_suite(suite: SuiteResult, out_dir: str | Path, cfg: Config | None = None) -> None:
    """Per-run logs, summary/suite aggregates, tables and plot series."""
    out_dir = Path(out_dir)
    for (label, seed), cell in sorted(suite.cells.items(), key=lambda kv: suite._order(kv[0])):
        d = run_dir(out_dir, label, seed)
        write_csv(d / "steps.csv", STEP_LOG_COLUMNS, cell.step_rows)
        write_csv(d / "certificate.csv", CERT_STEP_COLUMNS, cell.cert_rows)
    write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS, [r.row() for r in suite.rows])
    agg_rows = []
    for c in suite.conditions:
        a = suite.aggregate(c.label)
        n_div = sum(x.summary.diverged for x in suite.condition_cells(c.label))
        agg_rows.append((c.label, c.optimizer.kind, c.optimizer.eta, c.selection, c.labels_mode,
                         a["n_seeds"], n_div) + tuple(a[k] for k in SUITE_COLUMNS[7:]))
    write_csv(out_dir / "suite.csv", SUITE_COLUMNS, agg_rows)
    render_tables(suite, out_dir, cfg=cfg)
    emit_plot_series(suite, out_dir)


def _report_steps(T: int) -> list[int]:
    return sorted({max(1, round(k * T / 4)) for k in (1, 2, 3, 4)})


def _sweep_labels(suite: SuiteResult) -> list[str]:
    conds = [c for c in suite.conditions if c.optimizer.kind == "gd"
             and c.selection == "random_index" and c.labels_mode == "clean"]
    return [c.label for c in sorted(conds, key=lambda c: c.optimizer.eta)]


def _mean(suite: SuiteResult, label: str, metric: str) -> float:
    return suite.aggregate(label)[f"{metric}_mean"]


def _require(suite: SuiteResult, labels: Sequence[str], table: str) -> None:
    have = {c.label for c in suite.conditions}
    missing = [l for l in labels if l not in have]
    if missing:
        raise InvalidInputError(f"table {table} needs condition(s) {', '.join(missing)}")


def render_tables(suite: SuiteResult, out_dir: str | Path, table_ids: Sequence[str] | None = None,
                  cfg: Config | None = None) -> list[str]:
    """Write tables/<id>.csv. Seed means over non-diverged runs.

    With ``table_ids=None`` every table whose conditions are present is
    written; an explicit id with a missing condition is an error.
    """
    cfg = cfg or Config()
    explicit = table_ids is not None
    ids = list(TABLE_IDS if table_ids is None else table_ids)
    for t in ids:
        if t not in TABLE_SCHEMAS:
            raise InvalidInputError(f"unknown table id {t!r}")
    tdir = Path(out_dir) / "tables"
    sweep = _sweep_labels(suite)
    nb = [c.label for c in neighbor_conditions(cfg)]
    op = [c.label for c in optimizer_conditions(cfg)]
    lb = [c.label for c in label_conditions(cfg)]
    needs = {"T1": sweep, "A5": sweep, "T2": nb, "A6": nb, "T3": op, "A7": op,
             "T4": lb, "A8": lb}
    written = []
    for t in ids:
        labels = needs[t]
        if not labels:
            if explicit:
                raise InvalidInputError(f"table {t} needs a GD step-size sweep in the suite")
            continue
        try:
            _require(suite, labels, t)
        except InvalidInputError:
            if explicit:
                raise
            continue
        header, rows = _table(t, suite, labels)
        write_csv(tdir / f"{t}.csv", header, rows)
        written.append(t)
    return written


def _terminal_row(suite: SuiteResult, label: str, name, with_probe: bool = False) -> tuple:
    a = suite.aggregate(label)
    if with_probe:
        return (name, a["final_cert_mean"], a["final_probe_disc_mean"])
    return (name, a["final_cert_mean"], a["final_test_mse_mean"], a["gen_gap_mean"])


def _table(tid: str, suite: SuiteResult, labels: list[str]) -> tuple[tuple, list[tuple]]:
    conds = [suite.condition(l) for l in labels]
    if tid == "T1":
        return TABLE_SCHEMAS[tid], [_terminal_row(suite, c.label, c.optimizer.eta) for c in conds]
    if tid == "T2":
        names = ("random_index", "high_leverage")
        return TABLE_SCHEMAS[tid], [_terminal_row(suite, l, n, True) for l, n in zip(labels, names)]
    if tid == "T3":
        return TABLE_SCHEMAS[tid], [_terminal_row(suite, c.label, c.optimizer.kind) for c in conds]
    if tid == "T4":
        names = ("clean", "permuted")
        return TABLE_SCHEMAS[tid], [_terminal_row(suite, l, n) for l, n in zip(labels, names)]
    metric = "probe_disc" if tid == "A6" else "cert_prefix"
    header = TABLE_SCHEMAS[tid]
    if tid == "A5":
        header = ("t",) + tuple(f"eta_{c.optimizer.eta:g}" for c in conds)
    series = [suite.mean_series(l, metric) for l in labels]
    T = min(c.T for c in conds)
    rows = []
    for t in _report_steps(T):
        rows.append((t,) + tuple(float(s[t]) if t < len(s) else float("nan") for s in series))
    return header, rows


def emit_plot_series(suite: SuiteResult, out_dir: str | Path) -> None:
    """Long-format per-step series plus the (final, early) certificate scatter."""
    out_dir = Path(out_dir)
    series_rows, scatter_rows = [], []
    for (label, seed) in sorted(suite.cells, key=suite._order):
        cell = suite.cells[(label, seed)]
        cols = {m: cell.series(m) for m in SERIES_METRICS}
        for t in range(len(cols["cert_prefix"])):
            for m in SERIES_METRICS:
                series_rows.append((label, seed, t, m, float(cols[m][t])))
        cert = cols["cert_prefix"]
        T = len(cert) - 1
        early = float(cert[max(1, round(T / 4))]) if T >= 1 else float(cert[0])
        s = cell.summary
        scatter_rows.append((label, seed, s.optimizer, s.eta, s.final_cert, early,
                             s.final_test_mse))
    write_csv(out_dir / "series.csv", SERIES_COLUMNS, series_rows)
    write_csv(out_dir / "scatter.csv", SCATTER_COLUMNS, scatter_rows)


def write_demo(rep: DemoReport, out_dir: str | Path, d, seed: int) -> None:
    out_dir = Path(out_dir)
    write_csv(out_dir / "demo.csv", DEMO_COLUMNS, [t.row() for t in rep.trials])
    write_csv(out_dir / "demo_summary.csv", DEMO_SUMMARY_COLUMNS, [(
        seed, d.n, d.p, d.spike_count, d.weak_value, d.sigma, d.pilot_trials, d.trials,
        d.risk_quantile, d.delta_quantile, rep.risk_max, rep.delta_min, rep.fraction,
        rep.median_fraction, rep.dropped, rep.all_interpolate, d.interp_tol)])


def write_config(cfg: Config, out_dir: str | Path) -> None:
    path = Path(out_dir) / "config.resolved"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(dump_config(cfg))


# ---------------------------------------------------------------------------
# report


@dataclass
class RunLog:
    label: str
    seed: int
    delta: np.ndarray        # steps.csv delta_w_norm
    cert: np.ndarray         # certificate.csv cert_prefix
    a: np.ndarray
    b: np.ndarray
    probe: np.ndarray


@dataclass
class Check:
    name: str
    status: str              # PASS | FAIL | FLAG | SKIP
    detail: str

    def line(self) -> str:
        return f"[{self.status}] {self.name}: {self.detail}"


@dataclass
class OutputTree:
    cfg: Config
    summary: list[dict] = field(default_factory=list)
    suite: list[dict] = field(default_factory=list)
    runs: dict[tuple[str, int], RunLog] = field(default_factory=dict)
    demo: list[dict] | None = None
    demo_summary: dict | None = None


_SUMMARY_FLOATS = ("eta", "final_cert", "final_test_mse", "final_train_mse", "gen_gap",
                   "final_probe_disc")


def load_output(out_dir: str | Path) -> OutputTree:
    out_dir = Path(out_dir)
    cpath = out_dir / "config.resolved"
    if not cpath.exists():
        raise CorruptOutput(f"{cpath}: missing")
    try:
        cfg = parse_config(cpath, env={})
    except ConfigError as exc:
        raise CorruptOutput(str(exc)) from None
    tree = OutputTree(cfg)
    spath = out_dir / "summary.csv"
    if spath.exists():
        for r in read_csv(spath, SUMMARY_COLUMNS):
            row = dict(r)
            for k in _SUMMARY_FLOATS:
                row[k] = _num(spath, r, k)
            try:
                row["seed"] = int(r["seed"])
                row["diverged"] = int(r["diverged"])
            except ValueError:
                raise CorruptOutput(f"{spath}: bad seed/diverged field") from None
            tree.summary.append(row)
        tree.suite = read_csv(out_dir / "suite.csv", SUITE_COLUMNS)
        for row in tree.summary:
            d = run_dir(out_dir, row["condition_id"], row["seed"])
            sp, cp = d / "steps.csv", d / "certificate.csv"
            steps = read_csv(sp, STEP_LOG_COLUMNS)
            cert = read_csv(cp, CERT_STEP_COLUMNS)
            if len(steps) != len(cert) or not steps:
                raise CorruptOutput(f"{cp}: {len(cert)} rows but steps.csv has {len(steps)}")
            tree.runs[(row["condition_id"], row["seed"])] = RunLog(
                row["condition_id"], row["seed"], _column(sp, steps, "delta_w_norm"),
                _column(cp, cert, "cert_prefix"), _column(cp, cert, "a_t", True),
                _column(cp, cert, "b_t", True), _column(cp, cert, "probe_disc"))
    dpath = out_dir / "demo.csv"
    if dpath.exists():
        tree.demo = read_csv(dpath, DEMO_COLUMNS)
        ds = read_csv(out_dir / "demo_summary.csv", DEMO_SUMMARY_COLUMNS)
        if len(ds) != 1:
            raise CorruptOutput(f"{out_dir / 'demo_summary.csv'}: expected one row")
        tree.demo_summary = ds[0]
    if not tree.summary and tree.demo is None:
        raise CorruptOutput(f"{out_dir}: no summary.csv or demo.csv")
    return tree


def _invariant_checks(tree: OutputTree) -> list[Check]:
    checks = []
    if tree.runs:
        bad, steps, first = 0, 0, None
        for key, run in tree.runs.items():
            v = np.nonzero(run.delta > run.cert * (1 + BOUND_REL_TOL) + BOUND_ABS_TOL)[0]
            steps += len(run.delta)
            bad += v.size
            if v.size and first is None:
                first = f"; first at {key[0]}/seed={key[1]} t={int(v[0])}"
        checks.append(Check("unrolling bound", "FAIL" if bad else "PASS",
                            f"{bad} violations over {steps} steps in {len(tree.runs)} runs"
                            + (first or "")))
        worst, where = 0.0, ""
        for key, run in tree.runs.items():
            if len(run.a) != len(run.cert) - 1:
                worst, where = math.inf, f" (length mismatch in {key[0]}/seed={key[1]})"
                break
            fwd, dev = unroll(run.a, run.b)
            scale = np.maximum(np.abs(fwd), np.abs(run.cert))
            with np.errstate(invalid="ignore", divide="ignore"):
                logged = np.where(scale > 0, np.abs(fwd - run.cert) / scale, 0.0)
            d = max(dev, float(logged.max()))
            if d > worst:
                worst, where = d, f" (worst {key[0]}/seed={key[1]})"
        checks.append(Check("recursion identity", "PASS" if worst <= RECURSION_TOL else "FAIL",
                            f"max relative deviation {worst:.3e}{where}"))
        nulls = [r for r in tree.summary if r["selection"] == "identical"]
        if nulls:
            nz = [f"{r['condition_id']}/seed={r['seed']}" for r in nulls
                  if np.any(tree.runs[(r["condition_id"], r["seed"])].delta != 0)
                  or np.any(tree.runs[(r["condition_id"], r["seed"])].cert != 0)]
            checks.append(Check("coupling null test", "FAIL" if nz else "PASS",
                                f"{len(nulls) - len(nz)}/{len(nulls)} runs exactly zero"
                                + (f"; nonzero: {', '.join(nz[:3])}" if nz else "")))
        checks.append(_aggregation_check(tree))
    if tree.demo is not None:
        ok, n, _ = _demo_interp(tree)
        checks.append(Check("demo interpolation", "PASS" if ok == n else "FAIL",
                            f"{ok}/{n} non-dropped trials with train MSE <= "
                            f"{tree.cfg.demo.interp_tol:g} on S and S'"))
    return checks


def _aggregation_check(tree: OutputTree) -> Check:
    worst = 0.0
    by_label: dict[str, list[dict]] = {}
    for r in tree.summary:
        by_label.setdefault(r["condition_id"], []).append(r)
    if {r["condition_id"] for r in tree.suite} != set(by_label):
        return Check("aggregation", "FAIL", "suite.csv conditions differ from summary.csv")
    for agg in tree.suite:
        rows = [r for r in by_label[agg["condition_id"]] if not r["diverged"]]
        for m in _SUMMARY_FLOATS[1:]:
            vals = np.array([r[m] for r in rows], dtype=np.float64)
            for stat, ref in (("mean", vals.mean() if vals.size else math.nan),
                              ("std", vals.std() if vals.size else math.nan)):
                got = float(agg[f"{m}_{stat}"])
                if math.isnan(ref) and math.isnan(got):
                    continue
                worst = max(worst, abs(got - ref) / max(1.0, abs(ref)))
    return Check("aggregation", "PASS" if worst <= 1e-12 else "FAIL",
                 f"suite.csv vs recomputed seed statistics, max deviation {worst:.3e}")


def _demo_interp(tree: OutputTree) -> tuple[int, int, list[dict]]:
    tol = float(tree.demo_summary["interp_tol"])
    used = [r for r in tree.demo if r["dropped"] == "0"]
    ok = [r for r in used if float(r["train_mse_S"]) <= tol and float(r["train_mse_Sprime"]) <= tol]
    return len(ok), len(used), used


def _by_label(tree: OutputTree, label: str) -> list[dict]:
    return [r for r in tree.summary if r["condition_id"] == label]


def _seed_mean(rows: list[dict], key: str) -> float:
    vals = [r[key] for r in rows if not r["diverged"]]
    return float(np.mean(vals)) if vals else math.nan


def _skip(n: int, name: str, why: str) -> Check:
    return Check(f"{n} {name}", "SKIP", why)


def _acceptance(tree: OutputTree, checks: list[Check]) -> list[Check]:
    cfg = tree.cfg
    inv = {c.name: c for c in checks}
    out = []

    def from_inv(n, name, key):
        c = inv.get(key)
        out.append(Check(f"{n} {name}", c.status, c.detail) if c else
                   _skip(n, name, "no suite runs in this directory"))

    from_inv(1, "unrolling bound", "unrolling bound")
    from_inv(2, "prefix/sum equivalence", "recursion identity")

    sweep = sorted({(r["eta"], r["condition_id"]) for r in tree.summary
                    if r["optimizer"] == "gd" and r["selection"] == "random_index"
                    and r["labels"] == "clean"})
    if len(sweep) >= 2:
        rows = {lab: _by_label(tree, lab) for _, lab in sweep}
        seeds_ok = set.intersection(*({r["seed"] for r in rs if not r["diverged"]}
                                      for rs in rows.values()))
        certs = [np.mean([r["final_cert"] for r in rows[lab] if r["seed"] in seeds_ok])
                 if seeds_ok else math.nan for _, lab in sweep]
        eta0, c0 = sweep[0][0], certs[0]
        ratios = [c / c0 for c in certs]
        expect = [eta / eta0 for eta, _ in sweep]
        rel = max(abs(r / e - 1) for r, e in zip(ratios, expect))
        s2 = cfg.data.sigma ** 2
        mses = [_seed_mean(rows[lab], "final_test_mse") for _, lab in sweep]
        mse_dev = max(abs(m - s2) / s2 for m in mses) if s2 > 0 else math.inf
        ok = rel <= 0.03 and mse_dev <= 0.15
        out.append(Check("3 step-size proportionality", "PASS" if ok else "FAIL",
                         "cert ratios " + ", ".join(f"{r:.3f}" for r in ratios)
                         + " vs " + ", ".join(f"{e:g}" for e in expect)
                         + f" (max rel err {rel:.2%}); test MSE "
                         + ", ".join(f"{m:.5f}" for m in mses)
                         + f" vs sigma^2={s2:g} (max rel dev {mse_dev:.1%})"))
    else:
        out.append(_skip(3, "step-size proportionality", "fewer than two GD step sizes"))

    labels = [c.label for c in optimizer_conditions(cfg)]
    if all(_by_label(tree, l) for l in labels):
        cs = [_seed_mean(_by_label(tree, l), "final_cert") for l in labels]
        gaps = [_seed_mean(_by_label(tree, l), "gen_gap") for l in labels]
        r1, r2 = cs[1] / cs[0], cs[2] / cs[1]
        ok = r1 >= 10 and r2 >= 50 and gaps[2] > 0 and abs(gaps[0]) <= 0.02 and abs(gaps[1]) <= 0.02
        out.append(Check("4 optimizer ordering", "PASS" if ok else "FAIL",
                         f"cert sgd={cs[0]:.6g} gd={cs[1]:.6g} adam={cs[2]:.6g} "
                         f"(gd/sgd={r1:.1f}x, adam/gd={r2:.1f}x); gaps "
                         + ", ".join(f"{g:+.5f}" for g in gaps)))
    else:
        out.append(_skip(4, "optimizer ordering", "SGD/GD/Adam conditions not in this suite"))

    rnd, lev = (c.label for c in neighbor_conditions(cfg))
    if _by_label(tree, rnd) and _by_label(tree, lev):
        a = {r["seed"]: r for r in _by_label(tree, rnd) if not r["diverged"]}
        b = {r["seed"]: r for r in _by_label(tree, lev) if not r["diverged"]}
        seeds = sorted(set(a) & set(b))
        hits = sum(b[s]["final_cert"] < a[s]["final_cert"]
                   and b[s]["final_probe_disc"] < a[s]["final_probe_disc"] for s in seeds)
        need = math.ceil(0.8 * len(seeds))
        ca, cb = _seed_mean(list(a.values()), "final_cert"), _seed_mean(list(b.values()), "final_cert")
        pa = _seed_mean(list(a.values()), "final_probe_disc")
        pb = _seed_mean(list(b.values()), "final_probe_disc")
        detail = (f"cert random={ca:.6g} leverage={cb:.6g} (ratio {cb / ca:.2f}); probe "
                  f"random={pa:.3g} leverage={pb:.3g} (ratio {pb / pa:.2f}); "
                  f"leverage lower on both in {hits}/{len(seeds)} seeds")
        if hits < need:
            detail += "; direction not replicated, result is sensitive to the neighbor construction"
        out.append(Check("5 neighbor ablation (soft)", "PASS" if hits >= need else "FLAG", detail))
    else:
        out.append(_skip(5, "neighbor ablation (soft)", "neighbor conditions not in this suite"))

    clean, perm = (c.label for c in label_conditions(cfg))
    if _by_label(tree, clean) and _by_label(tree, perm):
        cc, cp = (_seed_mean(_by_label(tree, l), "final_cert") for l in (clean, perm))
        mc, mp = (_seed_mean(_by_label(tree, l), "final_test_mse") for l in (clean, perm))
        ok = 0.5 <= cp / cc <= 2.0 and abs(mc - mp) <= 0.01
        out.append(Check("6 label permutation", "PASS" if ok else "FAIL",
                         f"cert clean={cc:.6g} permuted={cp:.6g} (ratio {cp / cc:.3f}); "
                         f"test MSE clean={mc:.6f} permuted={mp:.6f}"))
    else:
        out.append(_skip(6, "label permutation", "clean/permuted conditions not in this suite"))

    null_labels = [make_condition(cfg, k, selection="identical").label
                   for k in ("sgd", "gd", "adam")]
    if all(_by_label(tree, l) for l in null_labels):
        from_inv(7, "coupling null test", "coupling null test")
    else:
        out.append(_skip(7, "coupling null test", "S'=S conditions for all optimizers not present"))

    out.append(power_iteration_oracle_check())

    if tree.demo is not None:
        ok, n, used = _demo_interp(tree)
        rmax = float(tree.demo_summary["risk_max"])
        dmin = float(tree.demo_summary["delta_min"])
        fresh = [r for r in used if r["phase"] == "fresh"]
        hits = [r for r in fresh if float(r["train_mse_S"]) <= float(tree.demo_summary["interp_tol"])
                and float(r["train_mse_Sprime"]) <= float(tree.demo_summary["interp_tol"])
                and float(r["excess_risk"]) <= rmax and float(r["delta_T"]) >= dmin]
        frac = len(hits) / len(fresh) if fresh else 0.0
        good = ok == n and frac >= 0.25
        out.append(Check("9 necessity demo", "PASS" if good else "FAIL",
                         f"{ok}/{n} interpolate; fraction {frac:.3f} of {len(fresh)} fresh trials "
                         f"(risk_max={rmax:.4g}, delta_min={dmin:.4g}, "
                         f"dropped={tree.demo_summary['dropped']})"))
    else:
        out.append(_skip(9, "necessity demo", "no demo.csv in this directory"))

    out.append(_skip(10, "determinism", "rerun into a second directory and diff the trees "
                                        "(covered by the test suite)"))

    if len(sweep) >= 2:
        T = min(len(tree.runs[(lab, r["seed"])].cert) - 1 for _, lab in sweep
                for r in _by_label(tree, lab))
        t_early = max(1, round(T / 4))
        early, final = [], []
        for _, lab in sweep:
            logs = [tree.runs[(lab, r["seed"])] for r in _by_label(tree, lab) if not r["diverged"]]
            early.append(np.mean([g.cert[t_early] for g in logs]) if logs else math.nan)
            final.append(np.mean([g.cert[-1] for g in logs]) if logs else math.nan)
        same = list(np.argsort(early, kind="stable")) == list(np.argsort(final, kind="stable"))
        out.append(Check("11 early-prefix ranking", "PASS" if same else "FAIL",
                         f"rank at t={t_early} " + ("matches" if same else "differs from")
                         + " terminal rank across " + ", ".join(f"eta={e:g}" for e, _ in sweep)))
    else:
        out.append(_skip(11, "early-prefix ranking", "fewer than two GD step sizes"))
    return sorted(out, key=lambda c: int(c.name.split()[0]))


def power_iteration_oracle_check(trials: int = 20, dim: int = 16, seed: int = 0) -> Check:
    """Matrix-free power iteration vs dense SVD on random square maps."""
    worst = 0.0
    gen = SeededStream(seed, 0).generator()
    for i in range(trials):
        A = gen.standard_normal((dim, dim))
        est = operator_norm_power_iteration(lambda v: A @ v, lambda u: A.T @ u, dim, iters=5000,
                                            stream=SeededStream(seed, 1).derive(i), rel_tol=1e-15)
        ref = float(np.linalg.svd(A, compute_uv=False)[0])
        worst = max(worst, abs(est - ref) / ref)
    return Check("8 power-iteration oracle", "PASS" if worst <= 1e-6 else "FAIL",
                 f"{trials} random {dim}x{dim} maps, max relative error {worst:.2e}")


def _spearman(tree: OutputTree) -> str:
    from scipy.stats import spearmanr

    rows = [r for r in tree.summary if not r["diverged"]]
    if len(rows) < 3:
        return "n/a (fewer than 3 runs)"
    x = [r["final_cert"] for r in rows]
    y = [r["final_test_mse"] for r in rows]
    if len(set(x)) < 2 or len(set(y)) < 2:
        return "n/a (constant column)"
    rho = spearmanr(x, y).statistic
    return f"{rho:.4f} over {len(rows)} runs"


def report(out_dir: str | Path, stream: TextIO | None = None, strict: bool = False) -> int:
    """Print aggregates, invariant checks and the acceptance checklist.

    Returns 0 iff every invariant check passes (and, with ``strict``, every
    evaluated acceptance criterion except the soft one). Corrupt or missing
    files return 2.
    """
    stream = stream or sys.stdout

    def say(s=""):
        print(s, file=stream)

    try:
        tree = load_output(out_dir)
    except CorruptOutput as exc:
        say(f"error: {exc}")
        return 2
    if tree.suite:
        say("== per-condition aggregates (seed mean ± std, non-diverged runs) ==")
        for a in tree.suite:
            say(f"{a['condition_id']}: n={a['n_seeds']} diverged={a['n_diverged']} "
                f"cert={float(a['final_cert_mean']):.6g}±{float(a['final_cert_std']):.2g} "
                f"test={float(a['final_test_mse_mean']):.6f} "
                f"train={float(a['final_train_mse_mean']):.6f} "
                f"gap={float(a['gen_gap_mean']):+.6f} "
                f"probe={float(a['final_probe_disc_mean']):.4g}")
        say(f"spearman(final_cert, final_test_mse): {_spearman(tree)}")
        say()
    if tree.demo_summary is not None:
        d = tree.demo_summary
        say("== necessity demo ==")
        say(f"fraction={float(d['fraction']):.3f} median-threshold fraction="
            f"{float(d['median_fraction']):.3f} risk_max={float(d['risk_max']):.4g} "
            f"delta_min={float(d['delta_min']):.4g} dropped={d['dropped']}")
        say()
    checks = _invariant_checks(tree)
    say("== invariant checks ==")
    for c in checks:
        say(c.line())
    say()
    acc = _acceptance(tree, checks)
    say("== acceptance checklist ==")
    for c in acc:
        say(c.line())
    failed = any(c.status == "FAIL" for c in checks)
    if strict:
        failed = failed or any(c.status == "FAIL" for c in acc)
    n_fail = sum(c.status == "FAIL" for c in checks)
    say()
    say(f"invariants: {len(checks) - n_fail}/{len(checks)} passed")
    return 1 if failed else 0
