"""Experiment orchestration: run learner x regime x seed, score regret, aggregate.

Regret is measured on expected (noise-free) revenue against the best fixed
decision in hindsight.  ADEPT is scored against the best attribute prices in
its box; the price-space learners (GDG, EE, OPOK) against the best price
vector in the price ball.  Realized-revenue regret is kept as a secondary
series.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from pricelab import rng as rngmod
from pricelab.algorithms import (
    Adept,
    AttributeBox,
    Ball,
    ExploreExploit,
    Gdg,
    NoOp,
    Opok,
    PriceBall,
    default_schedule,
)
from pricelab.errors import ConfigurationError, NumericError
from pricelab.market_model import (
    FeatureMatrix,
    RevenueQuadratic,
    maximize_box_quadratic,
    min_eig_ok,
)
from pricelab.regimes import (
    BlockStructure,
    EnvironmentTrajectory,
    MarketDefaults,
    RegimeSpec,
    generate_feature_matrix,
)

log = logging.getLogger(__name__)

LEARNERS = ("adept", "gdg", "ee", "opok", "noop")
CSV_COLUMNS = ("t", "revenue_expected", "revenue_realized", "regret_inst", "regret_cum", "regret_realized_cum")


def fmt(x: float) -> str:
    return f"{x:.9g}"


@dataclass(frozen=True)
class LearnerSpec:
    name: str = "adept"
    eta0: float = 1.0
    eps0: float = 1.0
    strict: bool = False
    estimator: str = "one_point"
    n_phases: int = 10
    exploration: int | None = None
    ridge_lambda: float = 1e-3
    opok_alpha: float | None = None
    opok_mu: float = 1e-3
    schedule: str = "theorem"

    def __post_init__(self) -> None:
        if self.name not in LEARNERS:
            raise ConfigurationError(f"unknown learner {self.name!r}; expected one of {LEARNERS}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    regime: RegimeSpec = field(default_factory=RegimeSpec)
    learner: LearnerSpec = field(default_factory=LearnerSpec)
    n_products: int = 60
    n_attributes: int = 6
    block_size: int = 10
    block_width: int = 3
    bernoulli_p: float = 0.5
    active_cap: int = 2
    box_radius: float = 5.0
    ball_radius: float = 5.0
    theta_base: tuple[float, ...] | float | str = "optimum"
    market: MarketDefaults = field(default_factory=MarketDefaults)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self) -> None:
        if self.n_products < 1 or self.n_attributes < 1:
            raise ConfigurationError("need at least one product and one attribute")
        if not self.seeds:
            raise ConfigurationError("seeds must be nonempty")
        if self.box_radius < 0 or self.ball_radius < 0:
            raise ConfigurationError("box and ball radii must be >= 0")
        tb = self.theta_base
        if isinstance(tb, str):
            if tb != "optimum":
                raise ConfigurationError(f"theta_base must be a number, a list or 'optimum', got {tb!r}")
        elif not isinstance(tb, (int, float)):
            tb = tuple(float(x) for x in tb)
            if len(tb) != self.n_attributes:
                raise ConfigurationError(f"theta_base has {len(tb)} entries, expected {self.n_attributes}")
            object.__setattr__(self, "theta_base", tb)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @property
    def horizon(self) -> int:
        return self.regime.horizon

    def blocks(self) -> BlockStructure:
        return BlockStructure.cyclic(self.n_products, self.n_attributes, self.block_size,
                                     self.block_width, self.bernoulli_p, self.active_cap)

    def theta_base_vector(self) -> np.ndarray:
        tb = self.theta_base
        if isinstance(tb, (int, float)):
            return np.full(self.n_attributes, float(tb))
        return np.asarray(tb, dtype=float)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["regime"] = self.regime.to_dict()
        out["seeds"] = list(self.seeds)
        if isinstance(self.theta_base, tuple):
            out["theta_base"] = list(self.theta_base)
        return out

    def digest(self) -> str:
        """Hash of everything except the seed list (each run adds its own seed)."""
        d = self.to_dict()
        d.pop("seeds")
        d["regime"].pop("seed", None)
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob + rngmod.RNG_VERSION.encode()).hexdigest()[:16]


@dataclass
class Comparator:
    point: np.ndarray          # theta (box) or p (ball)
    space: str                 # "attribute_box" or "price_ball"
    value: float               # cumulative expected revenue at ``point``
    prices: np.ndarray


@dataclass
class RunResult:
    config_digest: str
    seed: int
    learner: str
    regime: str
    revenue_expected: np.ndarray
    revenue_realized: np.ndarray
    regret_inst: np.ndarray
    regret_cum: np.ndarray
    regret_realized_cum: np.ndarray
    comparator: Comparator
    seconds_per_epoch: float
    posted: np.ndarray | None = None
    snapshot: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.regret_cum.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for t in range(self.horizon):
            w.writerow([t + 1, fmt(self.revenue_expected[t]), fmt(self.revenue_realized[t]),
                        fmt(self.regret_inst[t]), fmt(self.regret_cum[t]), fmt(self.regret_realized_cum[t])])
        return buf.getvalue()

    def summary(self, rho: float = 0.5) -> dict:
        out = {
            "config_digest": self.config_digest,
            "seed": self.seed,
            "learner": self.learner,
            "regime": self.regime,
            "horizon": self.horizon,
            "comparator_space": self.comparator.space,
            "comparator_value": float(self.comparator.value),
            "comparator_point": [float(x) for x in self.comparator.point],
            "final_regret": float(self.regret_cum[-1]),
            "learner_state": self.snapshot,
            "rng": rngmod.RNG_VERSION,
        }
        try:
            out["tail_slope"] = asdict(tail_slope(self.regret_cum, rho))
        except ValueError as exc:
            out["tail_slope"] = {"error": str(exc)}
        out["metadata"] = {"seconds_per_epoch": self.seconds_per_epoch}
        return out


@dataclass(frozen=True)
class TailSlopeReport:
    rho: float
    t0: int
    horizon: int
    alpha_hat: float
    regret_t0: float
    regret_T: float


def tail_slope(regret, rho: float = 0.5) -> TailSlopeReport:
    """Secant slope of log regret against log time over the last ``rho`` of the run."""
    r = np.asarray(regret, dtype=float)
    if not 0 < rho < 1:
        raise ConfigurationError(f"tail fraction must lie in (0, 1), got {rho}")
    T = r.shape[0]
    t0 = int(np.floor((1 - rho) * T))
    if t0 < 1 or t0 >= T:
        raise ConfigurationError(f"horizon {T} too short for tail fraction {rho}")
    r0, rT = float(r[t0 - 1]), float(r[T - 1])
    if r0 <= 0 or rT <= 0:
        raise ValueError(f"regret must be positive at the window ends (R({t0})={r0:.6g}, R({T})={rT:.6g}); "
                         "use a smaller tail fraction to move t0 later")
    alpha = (np.log(rT) - np.log(r0)) / (np.log(T) - np.log(t0))
    return TailSlopeReport(rho=rho, t0=t0, horizon=T, alpha_hat=float(alpha), regret_t0=r0, regret_T=rT)


# ---------------------------------------------------------------- market setup


@dataclass
class Market:
    """Materialised pieces of one run's simulated market."""

    u: FeatureMatrix
    trajectory: EnvironmentTrajectory
    theta_base: np.ndarray
    p0: np.ndarray


def build_market(config: ExperimentConfig, seed: int) -> Market:
    u = generate_feature_matrix(config.n_products, config.n_attributes, config.blocks(),
                                rngmod.stream(seed, "features"))
    regime = replace(config.regime, seed=seed)
    traj = EnvironmentTrajectory(regime, u, seed=seed, defaults=config.market)
    if config.theta_base == "optimum":
        env = traj.at(1)
        e = u.entries
        theta_base = np.linalg.lstsq(2.0 * e.T @ env.operator @ e, e.T @ (e @ env.z), rcond=None)[0]
    else:
        theta_base = config.theta_base_vector()
    return Market(u=u, trajectory=traj, theta_base=theta_base, p0=u.entries @ theta_base)


def _price_quadratic_sums(traj: EnvironmentTrajectory) -> tuple[np.ndarray, np.ndarray]:
    """Sum over rounds of the linear demand term U z_t and the operator M_t."""
    e = traj.u.entries
    n = e.shape[0]
    lin = np.zeros(n)
    quad = np.zeros((n, n))
    if traj.spec.kind == "drift":
        # the operator is linear in V for fixed elasticities: sum V first
        zs = np.zeros(traj.u.n_attributes)
        vs = np.zeros((traj.u.n_attributes,) * 2)
        for t in range(1, traj.horizon + 1):
            s = traj.state_at(t)
            zs += s.z
            vs += s.v
        from pricelab.market_model import MarketState, assemble_elasticity_operator
        base = traj.state_at(1)
        total = MarketState(z=zs, v=vs, alpha=base.alpha)
        return e @ zs, assemble_elasticity_operator(traj.u, total).m
    for a, b, env in traj.segments():
        k = b - a + 1
        lin += k * (e @ env.z)
        quad += k * env.operator
    return lin, quad


def _ball_maximize(lin: np.ndarray, quad: np.ndarray, ball: Ball, tol: float = 1e-8,
                   max_iter: int = 200_000) -> np.ndarray:
    """Projected gradient ascent of ``p.lin - p'quad p`` over a ball."""
    quad = (quad + quad.T) / 2
    concave = min_eig_ok(quad)
    if not concave:
        log.warning("summed revenue is not concave; comparator uses plain projected gradient ascent")
        step = 1.0 / (2.0 * np.linalg.norm(quad, 2))
    else:
        step = 1.0 / (2.0 * max(float(np.linalg.eigvalsh(quad)[-1]), 0.0) + 1e-12)
    p = ball.center.copy()
    scale = max(1.0, float(np.abs(ball.center).max(initial=0.0)))
    for _ in range(max_iter):
        nxt = ball.project(p + step * (lin - 2.0 * quad @ p))
        moved = float(np.linalg.norm(nxt - p))
        p = nxt
        if moved <= tol * scale:
            return p
    raise NumericError(f"ball comparator did not converge: last move {moved:.3e}")


def compute_comparator(market: Market, feasible: AttributeBox | PriceBall | Ball, inflate: float = 0.0) -> Comparator:
    """Best fixed decision in hindsight on expected revenue."""
    traj = market.trajectory
    e = market.u.entries
    lin, quad = _price_quadratic_sums(traj)
    if isinstance(feasible, AttributeBox):
        q = RevenueQuadratic(a=e.T @ quad @ e, b=e.T @ lin)
        lo = feasible.theta_base + feasible.lower - inflate
        hi = feasible.theta_base + feasible.upper + inflate
        concave = min_eig_ok(q.a)
        if not concave:
            log.warning("summed attribute quadratic is not concave; using projected gradient ascent")
        theta = maximize_box_quadratic(q.a, q.b, lo, hi, check_psd=False)
        return Comparator(point=theta, space="attribute_box", value=q.value(theta), prices=e @ theta)
    ball = Ball(feasible.center, feasible.radius + inflate)
    p = _ball_maximize(lin, quad, ball)
    return Comparator(point=p, space="price_ball", value=float(p @ lin - p @ quad @ p), prices=p)


# ---------------------------------------------------------------- learners


def build_learner(config: ExperimentConfig, market: Market, seed: int):
    spec = config.learner
    T = config.horizon
    rng = rngmod.stream(seed, "learner")
    eta, eps = default_schedule(T, spec.eta0, spec.eps0)
    ball = PriceBall(market.p0, config.ball_radius)
    if spec.schedule == "fkm":
        eta, eps = fkm_schedule(config, market, spec)
    if spec.name == "adept":
        box = AttributeBox.around(market.theta_base, config.box_radius)
        return Adept(market.u, box, eta, eps, rng, strict=spec.strict, estimator=spec.estimator), box
    if spec.name == "gdg":
        return Gdg.from_features(market.u, ball, eta, eps, rng), ball
    if spec.name == "ee":
        return ExploreExploit.from_features(market.u, ball, T, rng, n_phases=spec.n_phases,
                                            exploration=spec.exploration, ridge_lambda=spec.ridge_lambda), ball
    if spec.name == "opok":
        alpha = 1.0 / T if spec.opok_alpha is None else spec.opok_alpha
        return Opok(market.u, ball, eta, eps, alpha, rng, mu=spec.opok_mu), ball
    return NoOp(market.p0), ball


def fkm_schedule(config, market, spec):
    """Scale-free constants from bounds on |revenue| (C) and its Lipschitz constant (L)."""
    T = config.horizon
    env = market.trajectory.at(1)
    e = market.u.entries
    lin = e @ env.z
    m = env.operator
    if spec.name == "adept":
        a = e.T @ m @ e
        b = e.T @ lin
        th = market.theta_base
        f0 = th @ b - th @ a @ th
        g0 = np.linalg.norm(b - 2 * a @ th)
        lam = np.linalg.eigvalsh(a)[-1]
        r_in = config.box_radius
        r_out = config.box_radius * np.sqrt(config.n_attributes)
    else:
        from pricelab.algorithms import orthonormal_span
        o, _ = orthonormal_span(market.u)
        p0 = market.p0
        f0 = p0 @ lin - p0 @ m @ p0
        g0 = np.linalg.norm(o.T @ (lin - 2 * m @ p0))
        lam = np.linalg.eigvalsh(o.T @ m @ o)[-1]
        r_in = r_out = config.ball_radius
    C = abs(f0) + g0 * r_out + lam * r_out ** 2
    L = g0 + 2 * lam * r_out
    nu = r_out / (C * np.sqrt(T))
    delta = T ** -0.25 * np.sqrt(r_in * r_out ** 2 * C / (3 * (L * r_in + C)))
    eps = spec.eps0 * delta
    return spec.eta0 * nu * eps / config.n_attributes, eps


class _RoundOracle:
    """Per-round expected revenue ``p.(U z_t) - p' M_t p`` with cached phases."""

    def __init__(self, market: Market):
        self.traj = market.trajectory
        self.e = market.u.entries
        self._phase = None
        self._drift = self.traj.spec.kind == "drift"
        if self._drift:
            s = self.traj.state_at(1)
            a = s.alpha
            self._own = a.own
            w = 0.5 * (a.cross + a.cross.T)
            np.fill_diagonal(w, 0.0)
            self._wa = w

    def load(self, t: int) -> None:
        if self._drift:
            s = self.traj.state_at(t)
            g = self.e @ s.v @ self.e.T
            w = self._wa * g
            self.m = np.diag(self._own * np.diag(g) + w.sum(axis=1)) - w
            self.lin = self.e @ s.z
            return
        ph = self.traj.phase_of(t)
        if ph != self._phase:
            env = self.traj.at(t)
            self.m = env.operator
            self.lin = self.e @ env.z
            self._phase = ph

    def expected(self, p: np.ndarray) -> float:
        return float(p @ self.lin - p @ (self.m @ p))


def run_experiment(config: ExperimentConfig, seed: int, *, keep_posted: bool = False,
                   market: Market | None = None) -> RunResult:
    market = market or build_market(config, seed)
    learner, feasible = build_learner(config, market, seed)
    comp = compute_comparator(market, feasible)
    T = config.horizon
    n = config.n_products
    noise_rng = rngmod.stream(seed, "noise")
    sd = float(np.sqrt(config.regime.noise_variance))
    oracle = _RoundOracle(market)
    rev_exp = np.empty(T)
    rev_real = np.empty(T)
    best = np.empty(T)
    posted = np.empty((T, n)) if keep_posted else None
    chunk = 4096
    noise = None
    learner_seconds = 0.0
    perf = time.perf_counter
    for t in range(1, T + 1):
        i = t - 1
        if i % chunk == 0:
            rows = min(chunk, T - i)
            noise = noise_rng.standard_normal((rows, n)) * sd
        try:
            t0 = perf()
            p = learner.propose()
            learner_seconds += perf() - t0
            oracle.load(t)
            exp_rev = oracle.expected(p)
            realized = exp_rev + float(p @ noise[i % chunk])
            if t < T:  # the last update cannot affect any posted price
                t0 = perf()
                learner.update(realized)
                learner_seconds += perf() - t0
            best[i] = oracle.expected(comp.prices)
        except Exception as exc:  # annotate with the failing round
            raise type(exc)(f"round {t}: {exc}") from exc
        rev_exp[i] = exp_rev
        rev_real[i] = realized
        if posted is not None:
            posted[i] = p
    inst = best - rev_exp
    cum = np.cumsum(inst)
    neg = np.flatnonzero(np.diff(cum) < 0)
    if neg.size:
        log.debug("cumulative regret decreases at %d rounds (first at round %d)", neg.size, neg[0] + 2)
    return RunResult(
        config_digest=config.digest(), seed=seed, learner=config.learner.name, regime=config.regime.kind,
        revenue_expected=rev_exp, revenue_realized=rev_real, regret_inst=inst, regret_cum=cum,
        regret_realized_cum=np.cumsum(best - rev_real), comparator=comp,
        seconds_per_epoch=learner_seconds / T, posted=posted, snapshot=learner.snapshot(),
    )


def measure_runtime(config: ExperimentConfig, seed: int) -> float:
    """Learner-only wall-clock seconds per round (simulation and I/O excluded)."""
    return run_experiment(config, seed).seconds_per_epoch


def _run_one(args):
    config, seed = args
    return run_experiment(config, seed)


def run_many(config: ExperimentConfig, seeds=None, parallelism: int = 1) -> list[RunResult]:
    """Independent runs over seeds, returned in seed order."""
    seeds = list(config.seeds if seeds is None else seeds)
    jobs = [(config, s) for s in seeds]
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    return sorted(results, key=lambda r: (r.config_digest, r.seed))


@dataclass(frozen=True)
class Aggregate:
    mean: np.ndarray
    std: np.ndarray
    n_runs: int

    def to_csv(self) -> str:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("t", "regret_cum_mean", "regret_cum_sd"))
        for t in range(self.mean.shape[0]):
            w.writerow([t + 1, fmt(self.mean[t]), fmt(self.std[t])])
        return buf.getvalue()


def aggregate_runs(results) -> Aggregate:
    """Pointwise mean and sample s.d. of cumulative regret across runs."""
    curves = [np.asarray(r.regret_cum if isinstance(r, RunResult) else r, dtype=float) for r in results]
    if len(curves) < 2:
        raise ConfigurationError("aggregation needs at least two runs")
    lengths = {c.shape[0] for c in curves}
    if len(lengths) != 1:
        raise ConfigurationError(f"runs have different horizons: {sorted(lengths)}")
    stack = np.vstack(curves)
    return Aggregate(mean=stack.mean(axis=0), std=stack.std(axis=0, ddof=1), n_runs=len(curves))


def run_file_stem(experiment: str, learner: str, regime: str, seed: int) -> str:
    return f"{experiment}_{learner}_{regime}_{seed}"


def write_run(result: RunResult, out_dir: Path, experiment: str, rho: float = 0.5) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = run_file_stem(experiment, result.learner, result.regime, result.seed)
    csv_path = out_dir / f"{stem}.csv"
    json_path = out_dir / f"{stem}.json"
    csv_path.write_bytes(result.to_csv().encode("utf-8"))
    json_path.write_text(json.dumps(result.summary(rho), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, json_path
