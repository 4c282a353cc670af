"""Suite configuration: TOML sections [data], [optimizer.gd|sgd|adam], [suite], [seeds], [demo].

Every key has a default; unknown keys and invalid values are hard errors
that name the offending line.
"""

from __future__ import annotations

import difflib
import os
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .datagen import SpectrumSpec
from .dynamics import OptimizerSpec
from .errors import InvalidInputError

SEED_ENV_VAR = "TCERT_SEED"


class ConfigError(InvalidInputError):
    def __init__(self, msg: str, line: int | None = None, path: str | None = None):
        where = ""
        if path:
            where = f"{path}:{line}: " if line else f"{path}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + msg)
        self.line = line


@dataclass(frozen=True)
class DataConfig:
    n: int = 256
    p: int = 512
    sigma: float = 0.25
    spectrum: str = "power_decay"
    alpha: float = 1.0
    spike_count: int = 0
    spike_value: float = 1.0
    weak_value: float = 1.0
    # row std multiplier; 0.02 puts E||x||² ≈ 0.2 at p = 512
    feature_scale: float = 0.02
    m_probe: int = 512
    n_test: int = 1024
    jitter_scale: float = 1e-6

    def spectrum_spec(self) -> SpectrumSpec:
        return SpectrumSpec(self.spectrum, self.p, self.alpha, self.spike_count,
                            self.spike_value, self.weak_value)


@dataclass(frozen=True)
class GDConfig:
    eta: float = 0.2


@dataclass(frozen=True)
class SGDConfig:
    eta: float = 0.01
    batch_size: int = 32


@dataclass(frozen=True)
class AdamConfig:
    eta: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class SuiteConfig:
    T: int = 200
    etas: tuple[float, ...] = (0.05, 0.1, 0.2, 0.4)
    K_neighbors: int = 1
    L_d: float = 1.0
    init_scale: float = 0.0
    workers: int = 1
    power_iters: int = 30


@dataclass(frozen=True)
class SeedConfig:
    base: int = 0
    count: int = 5

    def seeds(self) -> list[int]:
        return [self.base + i for i in range(self.count)]


@dataclass(frozen=True)
class DemoConfig:
    n: int = 64
    p: int = 1024
    spike_count: int = 4
    spike_value: float = 1.0
    weak_value: float = 1e-3
    sigma: float = 0.25
    trials: int = 200
    pilot_trials: int = 200
    m_probe: int = 512
    n_test: int = 1024
    risk_quantile: float = 0.75
    delta_quantile: float = 0.25
    interp_tol: float = 1e-10
    # neighbor sampling ridge; the interpolator needs a far smaller one to fit exactly
    jitter_scale: float = 1e-6
    interp_jitter: float = 1e-12


@dataclass(frozen=True)
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    gd: GDConfig = field(default_factory=GDConfig)
    sgd: SGDConfig = field(default_factory=SGDConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    suite: SuiteConfig = field(default_factory=SuiteConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    demo: DemoConfig = field(default_factory=DemoConfig)

    def optimizer(self, kind: str, eta: float | None = None) -> OptimizerSpec:
        if kind == "gd":
            return OptimizerSpec("gd", self.gd.eta if eta is None else eta)
        if kind == "sgd":
            return OptimizerSpec("sgd", self.sgd.eta if eta is None else eta,
                                 batch_size=self.sgd.batch_size)
        if kind == "adam":
            a = self.adam
            return OptimizerSpec("adam", a.eta if eta is None else eta, beta1=a.beta1,
                                 beta2=a.beta2, eps=a.eps)
        raise InvalidInputError(f"unknown optimizer {kind!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "data": asdict(self.data),
            "optimizer": {"gd": asdict(self.gd), "sgd": asdict(self.sgd),
                          "adam": asdict(self.adam)},
            "suite": {**asdict(self.suite), "etas": list(self.suite.etas)},
            "seeds": asdict(self.seeds),
            "demo": asdict(self.demo),
        }


_SECTIONS = {
    "data": ("data", DataConfig),
    "optimizer.gd": ("gd", GDConfig),
    "optimizer.sgd": ("sgd", SGDConfig),
    "optimizer.adam": ("adam", AdamConfig),
    "suite": ("suite", SuiteConfig),
    "seeds": ("seeds", SeedConfig),
    "demo": ("demo", DemoConfig),
}

_POSITIVE = {"n", "p", "m_probe", "n_test", "eta", "batch_size", "T", "K_neighbors", "L_d",
             "workers", "power_iters", "feature_scale", "count", "trials", "pilot_trials",
             "spike_value"}
_NONNEG = {"sigma", "alpha", "spike_count", "weak_value", "init_scale", "jitter_scale", "eps",
           "base", "interp_tol", "interp_jitter"}


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Map (section, key) -> 1-based line number by a light scan of the TOML text."""
    out: dict[tuple[str, str], int] = {}
    section = ""
    for i, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            section = m.group(1).strip()
            out[(section, "")] = i
            continue
        m = re.match(r"^([A-Za-z0-9_\"'.-]+)\s*=", s)
        if m:
            out[(section, m.group(1).strip("\"'"))] = i
    return out


def _suggest(word: str, options) -> str:
    close = difflib.get_close_matches(word, list(options), n=1)
    return f" (did you mean {close[0]!r}?)" if close else ""


def _coerce(name: str, value: Any, default: Any, line: int | None, path: str | None) -> Any:
    def fail(msg):
        raise ConfigError(f"{name}: {msg}", line, path)

    if isinstance(default, bool):
        if not isinstance(value, bool):
            fail(f"expected boolean, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list) or not value:
            fail("expected a non-empty list")
        out = []
        for v in value:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                fail(f"expected numbers, got {v!r}")
            if not v > 0:
                fail(f"values must be positive, got {v!r}")
            out.append(float(v))
        return tuple(out)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            fail(f"expected integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail(f"expected number, got {value!r}")
        value = float(value)
        if value != value or value in (float("inf"), float("-inf")):
            fail("must be finite")
    elif isinstance(default, str):
        if not isinstance(value, str):
            fail(f"expected string, got {value!r}")
    if name in _POSITIVE and not value > 0:
        fail(f"must be positive, got {value!r}")
    if name in _NONNEG and value < 0:
        fail(f"must be non-negative, got {value!r}")
    return value


def _flatten(doc: dict) -> dict[str, Any]:
    """Collapse the nested [optimizer.*] tables into dotted section names."""
    out: dict[str, Any] = {}
    for k, v in doc.items():
        if k == "optimizer" and isinstance(v, dict):
            out.update({f"optimizer.{sub}": body for sub, body in v.items()})
        else:
            out[k] = v
    return out


def config_from_dict(doc: dict, text: str = "", path: str | None = None) -> Config:
    lines = _key_lines(text)
    flat = _flatten(doc)
    parts: dict[str, Any] = {}
    for section, body in flat.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]{_suggest(section, _SECTIONS)}",
                              lines.get((section, "")) or lines.get(("", section)), path)
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table", lines.get(("", section)), path)
        attr, cls = _SECTIONS[section]
        defaults = cls()
        names = {f.name for f in fields(cls)}
        kw = {}
        for key, value in body.items():
            line = lines.get((section, key))
            if key not in names:
                raise ConfigError(f"unknown key {key!r} in [{section}]{_suggest(key, names)}",
                                  line, path)
            kw[key] = _coerce(key, value, getattr(defaults, key), line, path)
        try:
            parts[attr] = replace(defaults, **kw)
        except InvalidInputError as exc:
            raise ConfigError(str(exc), lines.get((section, "")), path) from None
    cfg = Config(**parts)
    _validate(cfg, path)
    return cfg


def _validate(cfg: Config, path: str | None) -> None:
    try:
        cfg.data.spectrum_spec()
        for kind in ("gd", "sgd", "adam"):
            cfg.optimizer(kind)
    except InvalidInputError as exc:
        raise ConfigError(str(exc), None, path) from None
    d = cfg.demo
    if d.n > d.p:
        raise ConfigError("demo needs n <= p", None, path)
    if not 0 < d.spike_count < d.p:
        raise ConfigError("demo spike_count must be in (0, p)", None, path)
    for q in (d.risk_quantile, d.delta_quantile):
        if not 0 <= q <= 1:
            raise ConfigError("demo quantiles must lie in [0, 1]", None, path)
    if cfg.data.n < 2:
        raise ConfigError("data.n must be >= 2 for neighbor construction", None, path)


def parse_config(path: str | Path | None, env: dict | None = None) -> Config:
    """Load a TOML config (``None`` or empty file -> all defaults).

    ``TCERT_SEED`` in the environment overrides ``[seeds] base``.
    """
    env = os.environ if env is None else env
    text = ""
    spath = None
    if path is not None:
        spath = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", None, spath) from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"parse error: {exc}", int(m.group(1)) if m else None, spath) from None
    cfg = config_from_dict(doc, text, spath)
    if env.get(SEED_ENV_VAR):
        raw = env[SEED_ENV_VAR]
        try:
            base = int(raw)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR}={raw!r} is not an integer") from None
        if base < 0:
            raise ConfigError(f"{SEED_ENV_VAR} must be non-negative")
        cfg = replace(cfg, seeds=replace(cfg.seeds, base=base))
    return cfg


def dump_config(cfg: Config) -> str:
    """Resolved configuration as TOML text (parseable by :func:`parse_config`)."""
    d = cfg.to_dict()
    out = []

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return f'"{v}"'
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    for sec in ("data", "suite", "seeds", "demo"):
        out.append(f"[{sec}]")
        out.extend(f"{k} = {fmt(v)}" for k, v in d[sec].items())
        out.append("")
    for opt in ("gd", "sgd", "adam"):
        out.append(f"[optimizer.{opt}]")
        out.extend(f"{k} = {fmt(v)}" for k, v in d["optimizer"][opt].items())
        out.append("")
    return "\n".join(out)
