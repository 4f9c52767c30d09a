"""YAML configuration for the command-line tool.

Parsing is strict: any key not declared below is rejected with its dotted
path, so a misspelt hyperparameter fails loudly instead of silently falling
back to a default.  See ``configs/default.yaml`` for an annotated example.
"""

from __future__ import annotations

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from pricelab.errors import ConfigurationError
from pricelab.harness import LEARNERS, ExperimentConfig, LearnerSpec
from pricelab.regimes import REGIME_ALIASES, REGIME_KINDS, MarketDefaults, RegimeSpec

OUT_ENV = "PRICELAB_OUT"


@dataclass
class HyperParams:
    eta0: float = 1.0
    eps0: float = 1.0
    schedule: str = "theorem"
    strict: bool = False
    estimator: str = "one_point"
    n_phases: int = 10
    exploration: int | None = None
    ridge_lambda: float = 1e-3
    opok_alpha: float | None = None
    opok_mu: float = 1e-3


@dataclass
class MarketSection:
    z_low: float = 50.0
    z_high: float = 250.0
    eig_low: float = 0.5
    eig_high: float = 1.5
    alpha_own: float = 0.15
    alpha_cross: float = 0.15


@dataclass
class ExperimentSection:
    name: str = "default"
    learners: list[str] = field(default_factory=lambda: ["adept"])
    regimes: list[str] = field(default_factory=lambda: ["stationary"])
    horizon: int = 50_000
    noise_variance: float = 0.5
    shock_times: list[int] | None = None
    drift_z: float = 1.0
    drift_v: float = 0.1 ** 0.5
    n_products: int = 60
    n_attributes: int = 6
    block_size: int = 10
    block_width: int = 3
    bernoulli_p: float = 0.5
    active_cap: int = 2
    box_radius: float = 5.0
    ball_radius: float = 5.0
    theta_base: typing.Any = "optimum"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    parallelism: int = 1
    hyper: HyperParams = field(default_factory=HyperParams)
    market: MarketSection = field(default_factory=MarketSection)


@dataclass
class Scenario:
    name: str
    u: list[list[int]]
    z: list[float]
    v: typing.Any = "identity"


@dataclass
class InterpretSection:
    alpha_own: float = 0.15
    alpha_cross: float = 0.15
    theta_min: float = 0.0
    theta_max: float = 1000.0
    theta_base: float = 0.0
    scenarios: list[Scenario] = field(default_factory=list)


@dataclass
class AfdSection:
    path: str = ""
    attributes: list[str] = field(default_factory=list)
    price: str = "price"
    product_id: str = "product_id"
    lam: float = 1.0
    split_seed: int = 0
    decomposition: bool = False


@dataclass
class BenchSection:
    settings: list[list[int]] = field(default_factory=lambda: [[60, 6]])
    learners: list[str] = field(default_factory=lambda: ["adept"])
    horizon: int = 2000
    seed: int = 0


@dataclass
class OutputSection:
    directory: str = "results"
    formats: list[str] = field(default_factory=lambda: ["csv", "json"])


@dataclass
class CliConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    interpret: InterpretSection | None = None
    afdfit: AfdSection | None = None
    bench: BenchSection | None = None
    output: OutputSection = field(default_factory=OutputSection)
    base_dir: Path = field(default=Path("."), metadata={"internal": True})

    def out_root(self, override: str | None = None) -> Path:
        root = override or os.environ.get(OUT_ENV) or self.output.directory
        root = Path(root)
        return root if root.is_absolute() else self.base_dir / root

    def experiment_configs(self) -> list[ExperimentConfig]:
        """One ExperimentConfig per (learner, regime) pair, learners outermost."""
        ex = self.experiment
        out = []
        for lname in ex.learners:
            for kind in ex.regimes:
                kind = REGIME_ALIASES.get(kind, kind)
                shocks = tuple(ex.shock_times) if ex.shock_times is not None else None
                regime = RegimeSpec(kind=kind, horizon=ex.horizon, noise_variance=ex.noise_variance,
                                    shock_times=shocks, drift_z=ex.drift_z, drift_v=ex.drift_v)
                learner = LearnerSpec(name=lname, **dataclasses.asdict(ex.hyper))
                tb = ex.theta_base
                out.append(ExperimentConfig(
                    name=ex.name, regime=regime, learner=learner,
                    n_products=ex.n_products, n_attributes=ex.n_attributes, block_size=ex.block_size,
                    block_width=ex.block_width, bernoulli_p=ex.bernoulli_p, active_cap=ex.active_cap,
                    box_radius=ex.box_radius, ball_radius=ex.ball_radius,
                    theta_base=tuple(tb) if isinstance(tb, list) else tb,
                    market=MarketDefaults(**dataclasses.asdict(ex.market)), seeds=tuple(ex.seeds)))
        return out


# ---------------------------------------------------------------- strict builder


def _check_scalar(tp, value, path):
    if tp is typing.Any:
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{path}: expected a string, got {value!r}")
        return value
    raise TypeError(tp)


def _coerce(tp, value, path):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigurationError(f"{path}: expected a list, got {value!r}")
        (inner,) = typing.get_args(tp)
        return [_coerce(inner, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return build(tp, value, path)
    return _check_scalar(tp, value, path)


def build(cls, data, path: str = ""):
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if not f.metadata.get("internal")}
    kwargs = {}
    for key, value in data.items():
        kp = f"{path}.{key}" if path else str(key)
        if key not in fields:
            raise ConfigurationError(f"{kp}: unknown key")
        kwargs[key] = _coerce(hints[key], value, kp)
    missing = [n for n, f in fields.items()
               if n not in kwargs and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING]
    if missing:
        raise ConfigurationError(f"{path or '<root>'}: missing required keys {missing}")
    return cls(**kwargs)


def _set_path(doc: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    cur = doc
    for p in parts[:-1]:
        nxt = cur.get(p)
        if nxt is None:
            nxt = cur[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigurationError(f"--set {dotted}: {p} is not a section")
        cur = nxt
    cur[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigurationError(f"--set expects KEY=VALUE, got {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigurationError(f"--set expects KEY=VALUE, got {text!r}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"--set {key}: cannot parse value {raw!r}: {exc}") from None
    return key, value


def _validate(cfg: CliConfig) -> None:
    ex = cfg.experiment
    for name in ex.learners:
        if name not in LEARNERS:
            raise ConfigurationError(f"experiment.learners: unknown learner {name!r}")
    for kind in ex.regimes:
        if REGIME_ALIASES.get(kind, kind) not in REGIME_KINDS:
            raise ConfigurationError(f"experiment.regimes: unknown regime {kind!r}")
    if ex.horizon < 1:
        raise ConfigurationError("experiment.horizon: must be >= 1")
    if not ex.seeds:
        raise ConfigurationError("experiment.seeds: must be nonempty")
    if ex.parallelism < 1:
        raise ConfigurationError("experiment.parallelism: must be >= 1")
    if ex.hyper.schedule not in ("theorem", "fkm"):
        raise ConfigurationError(f"experiment.hyper.schedule: expected 'theorem' or 'fkm', got {ex.hyper.schedule!r}")
    if ex.hyper.estimator not in ("one_point", "two_point"):
        raise ConfigurationError(f"experiment.hyper.estimator: unknown estimator {ex.hyper.estimator!r}")
    if cfg.afdfit is not None:
        a = cfg.afdfit
        if not a.path:
            raise ConfigurationError("afdfit.path: required")
        if not a.attributes:
            raise ConfigurationError("afdfit.attributes: at least one column required")
        if a.lam < 0:
            raise ConfigurationError("afdfit.lam: must be >= 0")
        p = Path(a.path)
        if not (p if p.is_absolute() else cfg.base_dir / p).is_file():
            raise ConfigurationError(f"afdfit.path: file not found: {a.path}")
    if cfg.bench is not None:
        for i, s in enumerate(cfg.bench.settings):
            if len(s) != 2 or min(s) < 1:
                raise ConfigurationError(f"bench.settings[{i}]: expected [N, d] with positive entries")
        for name in cfg.bench.learners:
            if name not in LEARNERS:
                raise ConfigurationError(f"bench.learners: unknown learner {name!r}")
    for f in cfg.output.formats:
        if f not in ("csv", "json"):
            raise ConfigurationError(f"output.formats: unknown format {f!r}")


def load_config(path=None, overrides=()) -> CliConfig:
    """Parse a YAML file (or defaults when ``path`` is None) plus dotted overrides."""
    doc: dict = {}
    base = Path(".")
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file not found: {p}")
        try:
            loaded = yaml.safe_load(p.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{p}: invalid YAML: {exc}") from None
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigurationError(f"{p}: top level must be a mapping")
        doc = loaded or {}
        base = p.parent
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        _set_path(doc, key, value)
    cfg = build(CliConfig, doc)
    cfg.base_dir = base
    _validate(cfg)
    return cfg


def resolve(cfg: CliConfig, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else cfg.base_dir / p
