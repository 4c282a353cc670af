"""``trajcert`` command line: data generation, suites, the necessity demo and ``report``."""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

from .config import Config, parse_config
from .datagen import make_neighbor, save_dataset
from .errors import TrajcertError
from .experiments import (
    build_data,
    full_conditions,
    label_conditions,
    necessity_demo,
    neighbor_conditions,
    optimizer_conditions,
    run_suite,
    step_size_conditions,
)
from .numerics import STREAM_NEIGHBOR, SeededStream
from .reporting import DEMO_OUTPUTS, SUITE_OUTPUTS, report, write_config, write_demo, write_suite

SUITES = {
    "run": full_conditions,
    "sweep": step_size_conditions,
    "compare-optimizers": optimizer_conditions,
    "ablate-neighbor": neighbor_conditions,
    "ablate-labels": label_conditions,
}


class RefuseOverwrite(TrajcertError):
    pass


def _prepare_out(out: Path, managed: tuple[str, ...], force: bool) -> None:
    existing = [m for m in managed if (out / m).exists()]
    if existing and not force:
        raise RefuseOverwrite(f"{out} already holds {', '.join(existing)}; pass --force to replace")
    for m in existing:
        p = out / m
        shutil.rmtree(p) if p.is_dir() else p.unlink()
    out.mkdir(parents=True, exist_ok=True)


def _load(args) -> Config:
    cfg = parse_config(args.config)
    if args.seeds is not None:
        cfg = replace(cfg, seeds=replace(cfg.seeds, count=args.seeds))
    if args.workers is not None:
        cfg = replace(cfg, suite=replace(cfg.suite, workers=args.workers))
    return cfg


def cmd_gen(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    _prepare_out(out, ("data",), args.force)
    write_config(cfg, out)
    for seed in cfg.seeds.seeds():
        ds, _ = build_data(cfg.data, seed)
        d = out / "data" / str(seed)
        d.mkdir(parents=True, exist_ok=True)
        save_dataset(ds, d / "base.tcds")
        for sel in ("random_index", "high_leverage"):
            pair = make_neighbor(ds, sel, SeededStream(seed, STREAM_NEIGHBOR).derive(0),
                                 cfg.data.jitter_scale)
            save_dataset(pair.neighbor, d / f"neighbor_{sel}.tcds")
        print(f"seed {seed}: wrote {d}")
    return 0


def cmd_suite(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    if args.command == "sweep" and args.etas:
        conds = step_size_conditions(cfg, args.etas)
    else:
        conds = SUITES[args.command](cfg)
    _prepare_out(out, SUITE_OUTPUTS, args.force)
    write_config(cfg, out)
    suite = run_suite(conds, cfg.suite.workers)
    write_suite(suite, out, cfg)
    for v in suite.violations:
        print(f"violation: {v}", file=sys.stderr)
    return report(out, strict=args.strict)


def cmd_demo(args) -> int:
    cfg = _load(args)
    d = cfg.demo
    if args.trials is not None:
        d = replace(d, trials=args.trials, pilot_trials=args.trials)
        cfg = replace(cfg, demo=d)
    out = Path(args.out)
    _prepare_out(out, DEMO_OUTPUTS, args.force)
    write_config(cfg, out)
    rep = necessity_demo(d, seed=cfg.seeds.base)
    write_demo(rep, out, d, cfg.seeds.base)
    return report(out, strict=args.strict)


def cmd_report(args) -> int:
    return report(args.out, strict=args.strict)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajcert", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_run=True):
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        if with_run:
            sp.add_argument("--config", default=None, help="TOML configuration file")
            sp.add_argument("--seeds", type=int, default=None, help="number of seeds")
            sp.add_argument("--workers", type=int, default=None, help="parallel worker processes")
            sp.add_argument("--force", action="store_true", help="replace existing outputs")
        sp.add_argument("--strict", action="store_true",
                        help="also fail on acceptance criteria, not only invariants")

    g = sub.add_parser("gen", help="generate and save base and neighbor datasets")
    common(g)
    g.set_defaults(func=cmd_gen)
    for name, helptext in (("run", "full intervention suite"),
                           ("sweep", "GD step-size sweep"),
                           ("compare-optimizers", "SGD vs GD vs Adam"),
                           ("ablate-neighbor", "random vs high-leverage replacement"),
                           ("ablate-labels", "clean vs permuted labels")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        if name == "sweep":
            sp.add_argument("--etas", type=float, nargs="+", default=None,
                            help="step sizes (default: [suite] etas)")
        sp.set_defaults(func=cmd_suite)
    dm = sub.add_parser("necessity-demo", help="interpolation counterexample demo")
    common(dm)
    dm.add_argument("--trials", type=int, default=None, help="pilot and fresh trial count")
    dm.set_defaults(func=cmd_demo)
    r = sub.add_parser("report", help="check an output directory")
    common(r, with_run=False)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    for flag in ("seeds", "workers", "trials"):
        v = getattr(args, flag, None)
        if v is not None and v < 1:
            print(f"error: --{flag} must be >= 1", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except TrajcertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
