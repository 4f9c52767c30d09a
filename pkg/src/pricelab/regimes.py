"""Block-structured feature matrices and the four market-evolution regimes.

Regimes:

* ``stationary``   -- (z, V) fixed for the whole horizon.
* ``shocks``       -- (z, V) redrawn independently at each shock time.
* ``drift``        -- z random walk, V random walk kept inside the PD cone.
* ``misspecified`` -- the N x N demand operator is a random full-rank PSD
  matrix instead of the attribute-structured one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Iterator

import numpy as np

from pricelab import rng as rngmod
from pricelab.errors import ConfigurationError
from pricelab.market_model import (
    ElasticityCoefficients,
    FeatureMatrix,
    MarketState,
    assemble_elasticity_operator,
)

REGIME_KINDS = ("stationary", "shocks", "drift", "misspecified")
REGIME_ALIASES = {"s1": "stationary", "s2": "shocks", "s3": "drift", "s4": "misspecified"}
LAMBDA_FLOOR = 1e-6


@dataclass(frozen=True)
class BlockStructure:
    n_blocks: int
    block_size: int
    attribute_sets: tuple[tuple[int, ...], ...]
    bernoulli_p: float = 0.5
    active_cap: int = 2

    def __post_init__(self) -> None:
        sets = tuple(tuple(int(j) for j in s) for s in self.attribute_sets)
        object.__setattr__(self, "attribute_sets", sets)
        if self.n_blocks < 1 or self.block_size < 1:
            raise ConfigurationError("need at least one block of at least one product")
        if len(sets) != self.n_blocks:
            raise ConfigurationError(f"{self.n_blocks} blocks but {len(sets)} attribute sets")
        if not 0.0 <= self.bernoulli_p <= 1.0:
            raise ConfigurationError(f"activation probability {self.bernoulli_p} outside [0, 1]")
        for b, s in enumerate(sets):
            if not s or len(set(s)) != len(s):
                raise ConfigurationError(f"attribute set {b} is empty or has repeats")
            if not 1 <= self.active_cap <= len(s):
                raise ConfigurationError(f"active cap {self.active_cap} invalid for set {b} of size {len(s)}")
        for b in range(self.n_blocks - 1):
            if not set(sets[b]) & set(sets[b + 1]):
                raise ConfigurationError(f"blocks {b} and {b + 1} share no attribute")

    @property
    def n_products(self) -> int:
        return self.n_blocks * self.block_size

    @classmethod
    def cyclic(cls, n_products: int, n_attributes: int, block_size: int = 10, width: int = 3,
               bernoulli_p: float = 0.5, active_cap: int = 2) -> "BlockStructure":
        """Blocks with sliding attribute windows ``{b, b+1, ..., b+width-1} mod d``."""
        if n_products % block_size:
            raise ConfigurationError(f"{n_products} products do not split into blocks of {block_size}")
        n_blocks = n_products // block_size
        width = min(width, n_attributes)
        stride = max(1, n_attributes // n_blocks) if n_blocks <= n_attributes else 1
        sets = tuple(tuple((b * stride + k) % n_attributes for k in range(width)) for b in range(n_blocks))
        return cls(n_blocks, block_size, sets, bernoulli_p, min(active_cap, width))


def bernoulli_activation(blocks: BlockStructure, rng: np.random.Generator) -> list[np.ndarray]:
    """Raw per-block activation masks, before the empty-row fix and the cap."""
    return [rng.random((blocks.block_size, len(s))) < blocks.bernoulli_p for s in blocks.attribute_sets]


def generate_feature_matrix(n: int, d: int, blocks: BlockStructure, rng: np.random.Generator) -> FeatureMatrix:
    if n != blocks.n_products:
        raise ConfigurationError(f"N={n} but blocks hold {blocks.n_blocks} x {blocks.block_size} products")
    for s in blocks.attribute_sets:
        if max(s) >= d or min(s) < 0:
            raise ConfigurationError(f"attribute set {s} outside 0..{d - 1}")
    u = np.zeros((n, d))
    masks = bernoulli_activation(blocks, rng)
    for b, (s, mask) in enumerate(zip(blocks.attribute_sets, masks)):
        cols = np.asarray(s)
        rows = slice(b * blocks.block_size, (b + 1) * blocks.block_size)
        for r in range(blocks.block_size):
            active = np.flatnonzero(mask[r])
            if active.size == 0:
                mask[r, rng.integers(len(cols))] = True
            elif active.size > blocks.active_cap:
                keep = rng.choice(active, size=blocks.active_cap, replace=False)
                mask[r] = False
                mask[r, keep] = True
        block = np.zeros((blocks.block_size, d))
        block[:, cols] = mask
        u[rows] = block
    return FeatureMatrix(u)


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))


def lift_nonnegative(v: np.ndarray) -> np.ndarray:
    """Add ``s * 11'`` so every entry is >= 0; keeps PD and similarities nonnegative."""
    s = max(0.0, -float(v.min()))
    return v + s if s > 0 else v


@dataclass(frozen=True)
class MarketDefaults:
    z_low: float = 50.0
    z_high: float = 250.0
    eig_low: float = 0.5
    eig_high: float = 1.5
    alpha_own: float = 0.15
    alpha_cross: float = 0.15


def init_market(d: int, n: int, rng: np.random.Generator, defaults: MarketDefaults = MarketDefaults()) -> MarketState:
    """Random starting market: uniform z, V = Q diag(lam) Q' lifted entrywise nonnegative."""
    if d < 1 or n < 1:
        raise ConfigurationError("need d >= 1 and N >= 1")
    z = rng.uniform(defaults.z_low, defaults.z_high, size=d)
    lam = rng.uniform(defaults.eig_low, defaults.eig_high, size=d)
    q = random_orthogonal(d, rng)
    v = (q * lam) @ q.T
    v = lift_nonnegative((v + v.T) / 2)
    alpha = ElasticityCoefficients.uniform(n, defaults.alpha_own, defaults.alpha_cross)
    return MarketState(z=z, v=v, alpha=alpha)


def project_pd(s: np.ndarray, floor: float = LAMBDA_FLOOR) -> np.ndarray:
    """Clamp the spectrum of ``(s + s')/2`` from below at ``floor``."""
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ConfigurationError("cannot project a matrix with non-finite entries")
    sym = (s + s.T) / 2
    lam, vec = np.linalg.eigh(sym)
    if lam[0] >= floor:
        return sym
    return (vec * np.maximum(lam, floor)) @ vec.T


def project_similarity_cone(s: np.ndarray, floor: float = LAMBDA_FLOOR) -> np.ndarray:
    """Map into {V : V >= floor*I, V_kl >= 0}.

    Negative entries are clipped to zero, then the diagonal is shifted just
    enough to restore the eigenvalue floor.  Both steps keep every entry
    nonnegative, so similarities between nonnegative feature rows stay >= 0.
    """
    sym = np.maximum((s + s.T) / 2, 0.0)
    lam_min = float(np.linalg.eigvalsh(sym)[0])
    if lam_min < floor:
        sym = sym + (floor - lam_min) * np.eye(sym.shape[0])
    return sym


def make_misspecified_operator(n: int, rng: np.random.Generator, low: float = 0.01, high: float = 1.0) -> np.ndarray:
    """Full-rank PSD N x N operator with log-uniform spectrum on [low, high]."""
    if n < 1:
        raise ConfigurationError("need N >= 1")
    lam = np.exp(rng.uniform(np.log(low), np.log(high), size=n))
    q = random_orthogonal(n, rng)
    m = (q * lam) @ q.T
    return (m + m.T) / 2


def sample_noise(n: int, variance: float, rng: np.random.Generator) -> np.ndarray:
    if variance < 0:
        raise ConfigurationError(f"noise variance must be >= 0, got {variance}")
    if variance == 0:
        return np.zeros(n)
    return rng.normal(0.0, np.sqrt(variance), size=n)


@dataclass(frozen=True)
class RegimeSpec:
    kind: str = "stationary"
    horizon: int = 50_000
    noise_variance: float = 0.5
    shock_times: tuple[int, ...] | None = None
    drift_z: float = 1.0
    drift_v: float = float(np.sqrt(0.1))
    seed: int = 0

    def __post_init__(self) -> None:
        kind = REGIME_ALIASES.get(self.kind.lower(), self.kind.lower())
        if kind not in REGIME_KINDS:
            raise ConfigurationError(f"unknown regime {self.kind!r}; expected one of {REGIME_KINDS}")
        object.__setattr__(self, "kind", kind)
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if self.noise_variance < 0:
            raise ConfigurationError("noise variance must be >= 0")
        shocks = self.shock_times
        if shocks is None and kind == "shocks":
            shocks = (self.horizon // 3, (2 * self.horizon) // 3)
        if shocks is not None:
            shocks = tuple(sorted(int(s) for s in shocks))
            if any(not 1 < s <= self.horizon for s in shocks) or len(set(shocks)) != len(shocks):
                raise ConfigurationError(f"shock times {shocks} must be distinct and inside (1, {self.horizon}]")
        object.__setattr__(self, "shock_times", shocks)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["shock_times"] = list(self.shock_times) if self.shock_times is not None else None
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RegimeSpec":
        data = dict(data)
        if data.get("shock_times") is not None:
            data["shock_times"] = tuple(data["shock_times"])
        return cls(**data)


@dataclass(frozen=True)
class RoundEnvironment:
    """Everything the simulator needs for one round."""

    z: np.ndarray
    operator: np.ndarray
    state: MarketState | None
    phase: int


class EnvironmentTrajectory:
    """Lazily generated per-round markets, reproducible from (spec, seed).

    Rounds are 1-based.  Phase values are cached; drift paths are stored as
    (z, V) pairs so random access replays nothing.
    """

    def __init__(self, spec: RegimeSpec, u: FeatureMatrix, seed: int | None = None,
                 defaults: MarketDefaults = MarketDefaults(), floor: float = LAMBDA_FLOOR):
        self.spec = spec
        self.u = u
        self.seed = spec.seed if seed is None else int(seed)
        self.defaults = defaults
        self.floor = floor
        self._z_rng = rngmod.stream(self.seed, "z_path")
        self._v_rng = rngmod.stream(self.seed, "v_path")
        self._init_rng = rngmod.stream(self.seed, "market_init")
        self._op_rng = rngmod.stream(self.seed, "operator")
        self._phases: list[RoundEnvironment] = []
        self._drift_z: list[np.ndarray] = []
        self._drift_v: list[np.ndarray] = []
        self._drift_alpha: ElasticityCoefficients | None = None
        self._build()

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    def _phase_starts(self) -> list[int]:
        return [1] + list(self.spec.shock_times or ())

    def _fresh_state(self) -> MarketState:
        return init_market(self.u.n_attributes, self.u.n_products, self._init_rng, self.defaults)

    def _env_from_state(self, state: MarketState, phase: int) -> RoundEnvironment:
        op = assemble_elasticity_operator(self.u, state)
        return RoundEnvironment(z=state.z, operator=op.m, state=state, phase=phase)

    def _build(self) -> None:
        kind = self.spec.kind
        if kind in ("stationary", "shocks"):
            starts = [1] if kind == "stationary" else self._phase_starts()
            for k, _ in enumerate(starts):
                self._phases.append(self._env_from_state(self._fresh_state(), k))
        elif kind == "misspecified":
            for k, _ in enumerate(self._phase_starts()):
                state = self._fresh_state()
                m = make_misspecified_operator(self.u.n_products, self._op_rng)
                self._phases.append(RoundEnvironment(z=state.z, operator=m, state=None, phase=k))
        else:
            state = self._fresh_state()
            self._drift_alpha = state.alpha
            self._drift_z.append(state.z)
            self._drift_v.append(project_similarity_cone(state.v, self.floor))

    def phase_of(self, t: int) -> int:
        if self.spec.kind in ("stationary", "drift"):
            return 0
        return int(np.searchsorted(self._phase_starts(), t, side="right") - 1)

    def _extend_drift(self, t: int) -> None:
        d = self.u.n_attributes
        iu = np.triu_indices(d)
        while len(self._drift_z) < t:
            z = self._drift_z[-1] + self.spec.drift_z * self._z_rng.standard_normal(d)
            w = np.zeros((d, d))
            w[iu] = self.spec.drift_v * self._v_rng.standard_normal(len(iu[0]))
            w = w + np.triu(w, 1).T
            self._drift_z.append(z)
            self._drift_v.append(project_similarity_cone(self._drift_v[-1] + w, self.floor))

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.horizon:
            raise ConfigurationError(f"round {t} outside 1..{self.horizon}")

    def state_at(self, t: int) -> MarketState | None:
        """Market state of round ``t`` (None for the misspecified regime)."""
        self._check_t(t)
        if self.spec.kind == "drift":
            self._extend_drift(t)
            return MarketState(z=self._drift_z[t - 1], v=self._drift_v[t - 1], alpha=self._drift_alpha)
        return self._phases[self.phase_of(t)].state

    def at(self, t: int) -> RoundEnvironment:
        self._check_t(t)
        if self.spec.kind == "drift":
            return self._env_from_state(self.state_at(t), 0)
        return self._phases[self.phase_of(t)]

    def __iter__(self) -> Iterator[RoundEnvironment]:
        for t in range(1, self.horizon + 1):
            yield self.at(t)

    def segments(self) -> Iterator[tuple[int, int, RoundEnvironment | None]]:
        """Yield (first, last, env) runs of constant environment; env is None for drift rounds."""
        if self.spec.kind == "drift":
            for t in range(1, self.horizon + 1):
                yield t, t, self.at(t)
            return
        starts = [1] if self.spec.kind == "stationary" else self._phase_starts()
        ends = [s - 1 for s in starts[1:]] + [self.horizon]
        for k, (a, b) in enumerate(zip(starts, ends)):
            yield a, b, self._phases[k]


def step(trajectory: EnvironmentTrajectory, t: int) -> MarketState | RoundEnvironment:
    """State of round ``t``; the misspecified regime returns the round environment."""
    state = trajectory.state_at(t)
    return state if state is not None else trajectory.at(t)
