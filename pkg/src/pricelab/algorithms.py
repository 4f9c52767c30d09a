"""Online pricing learners with bandit (revenue-only) feedback.

Every learner follows the same round protocol::

    p = learner.propose()      # price vector to post
    learner.update(revenue)    # observed <q, p>

Learners:

* :class:`Adept`  -- one-point zeroth-order ascent on attribute offsets with
  box clipping; prices ``U (theta_base + theta)``.
* :class:`Gdg`    -- one-point bandit gradient ascent in the orthonormal span
  of U (``U = O P``) with exact Euclidean projection onto its feasible set.
* :class:`ExploreExploit` -- phases of uniform exploration, a ridge-fitted
  concave quadratic surrogate, and exploitation of its box maximiser.
* :class:`Opok`   -- latent-space learner that maps latent points back to
  prices through a regularised least-squares price search over a price ball.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from pricelab.errors import ConfigurationError, NumericError
from pricelab.market_model import FeatureMatrix, maximize_box_quadratic

log = logging.getLogger(__name__)


class Learner(Protocol):
    name: str

    def propose(self) -> np.ndarray: ...

    def update(self, revenue: float) -> None: ...

    def snapshot(self) -> dict: ...


def sample_unit_sphere(d: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform direction on the unit sphere in R^d."""
    if d < 1:
        raise ConfigurationError("sphere dimension must be >= 1")
    while True:
        x = rng.standard_normal(d)
        n = np.linalg.norm(x)
        if n > 0:
            return x / n


def one_point_gradient(value: float, direction: np.ndarray, epsilon: float) -> np.ndarray:
    """``(d f(x + eps u) / eps) u`` -- unbiased for the gradient of the ball-smoothed f."""
    return (direction.shape[0] * value / epsilon) * direction


def two_point_gradient(value_plus: float, value_minus: float, direction: np.ndarray, epsilon: float) -> np.ndarray:
    return (direction.shape[0] / (2.0 * epsilon)) * (value_plus - value_minus) * direction


def default_schedule(horizon: int, eta0: float = 1.0, eps0: float = 1.0) -> tuple[float, float]:
    """Step ``eta0 T^-1/2`` and perturbation radius ``eps0 T^-1/4``."""
    return eta0 * horizon ** -0.5, eps0 * horizon ** -0.25


# ---------------------------------------------------------------- feasible sets


@dataclass(frozen=True)
class AttributeBox:
    """Offsets around ``theta_base`` limited to ``[lower, upper]`` (lower <= 0 <= upper)."""

    theta_base: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        base = np.asarray(self.theta_base, dtype=float)
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), base.shape).copy()
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), base.shape).copy()
        if np.any(lo > hi):
            raise ConfigurationError("attribute box has lower > upper")
        if np.any(lo > 0) or np.any(hi < 0):
            raise ConfigurationError("baseline attribute prices must lie inside the box")
        object.__setattr__(self, "theta_base", base)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def around(cls, theta_base, radius: float) -> "AttributeBox":
        base = np.asarray(theta_base, dtype=float)
        return cls(base, -radius * np.ones_like(base), radius * np.ones_like(base))

    @property
    def dim(self) -> int:
        return self.theta_base.shape[0]

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)


@dataclass(frozen=True)
class Ball:
    """Euclidean ball ``||x - center|| <= radius``."""

    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius >= 0:
            raise ConfigurationError(f"ball radius must be >= 0, got {self.radius}")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def project(self, x: np.ndarray) -> np.ndarray:
        off = x - self.center
        n = np.linalg.norm(off)
        if n <= self.radius:
            return x
        return self.center + off * (self.radius / n)

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.linalg.norm(x - self.center) <= self.radius + tol)


class PriceBall(Ball):
    """Ball of price vectors around the baseline prices ``p0``."""


# ---------------------------------------------------------------- ADEPT


class Adept:
    """Attribute-space one-point bandit ascent with box clipping.

    Round t posts ``U (theta_base + theta_t + eps xi_t)`` unclipped (``strict``
    clips the perturbed point too) and then steps
    ``theta_{t+1} = clip(theta_t - eta g_t)`` with ``g_t = -(d y_t / eps) xi_t``.
    """

    name = "adept"

    def __init__(self, u: FeatureMatrix, box: AttributeBox, eta: float, epsilon: float,
                 rng: np.random.Generator, *, strict: bool = False, estimator: str = "one_point"):
        if box.dim != u.n_attributes:
            raise ConfigurationError(f"box has dim {box.dim}, U has {u.n_attributes} attributes")
        if estimator not in ("one_point", "two_point"):
            raise ConfigurationError(f"unknown estimator {estimator!r}")
        self.u = u
        self.box = box
        self.eta = float(eta)
        self.epsilon = float(epsilon)
        self.rng = rng
        self.strict = strict
        self.estimator = estimator
        self.theta = np.zeros(box.dim)
        self.last_direction: np.ndarray | None = None
        self._pending: float | None = None  # first half of a two-point pair
        self.t = 0

    def _perturbed(self) -> np.ndarray:
        sign = -1.0 if self._pending is not None else 1.0
        tilde = self.theta + sign * self.epsilon * self.last_direction
        return self.box.project(tilde) if self.strict else tilde

    def propose(self) -> np.ndarray:
        if self._pending is None:
            self.last_direction = sample_unit_sphere(self.box.dim, self.rng)
        self.theta_tilde = self._perturbed()
        return self.u.entries @ (self.box.theta_base + self.theta_tilde)

    def update(self, revenue: float) -> None:
        if self.last_direction is None:
            raise RuntimeError("update() called before propose()")
        if self.epsilon == 0:
            raise ConfigurationError("perturbation radius must be > 0 for the gradient estimate")
        self.t += 1
        if self.estimator == "two_point":
            if self._pending is None:
                self._pending = float(revenue)
                return
            ascent = two_point_gradient(self._pending, float(revenue), self.last_direction, self.epsilon)
            self._pending = None
        else:
            ascent = one_point_gradient(float(revenue), self.last_direction, self.epsilon)
        g = -ascent
        self.theta = self.box.project(self.theta - self.eta * g)

    def final_prices(self) -> np.ndarray:
        return self.u.entries @ (self.box.theta_base + self.theta)

    def snapshot(self) -> dict:
        return {"learner": self.name, "rounds": self.t, "theta": self.theta.tolist(),
                "theta_base": self.box.theta_base.tolist(), "eta": self.eta, "epsilon": self.epsilon}


def adept_propose(state: Adept) -> tuple[np.ndarray, np.ndarray]:
    p = state.propose()
    return state.theta_tilde, p


def adept_update(state: Adept, revenue: float) -> Adept:
    state.update(revenue)
    return state


# ---------------------------------------------------------------- GDG


def orthonormal_span(u: FeatureMatrix | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """QR factors ``U = O P`` with a nonnegative diagonal on P."""
    e = u.entries if isinstance(u, FeatureMatrix) else np.asarray(u, dtype=float)
    rank = np.linalg.matrix_rank(e)
    if rank < e.shape[1]:
        raise ConfigurationError(f"U has rank {rank} < {e.shape[1]} columns; orthonormal span undefined")
    o, p = np.linalg.qr(e)
    s = np.where(np.diag(p) < 0, -1.0, 1.0)
    return o * s, p * s[:, None]


class Gdg:
    """One-point bandit gradient ascent in coordinates ``x`` with prices ``p0 + O x``.

    ``feasible`` is an :class:`AttributeBox` (offsets) or :class:`Ball` in
    coordinate space; the update projects exactly onto it.
    """

    name = "gdg"

    def __init__(self, basis: np.ndarray, center: np.ndarray, feasible: AttributeBox | Ball,
                 eta: float, epsilon: float, rng: np.random.Generator, x0: np.ndarray | None = None):
        self.basis = np.asarray(basis, dtype=float)
        self.center = np.asarray(center, dtype=float)
        self.feasible = feasible
        self.eta = float(eta)
        self.epsilon = float(epsilon)
        self.rng = rng
        d = self.basis.shape[1]
        self.x = feasible.project(np.zeros(d) if x0 is None else np.asarray(x0, dtype=float))
        self.last_direction: np.ndarray | None = None
        self.t = 0

    @classmethod
    def from_features(cls, u: FeatureMatrix, ball: PriceBall, eta: float, epsilon: float,
                      rng: np.random.Generator) -> "Gdg":
        """Price-ball learner: coordinates live in a radius-R ball of span(U)."""
        o, _ = orthonormal_span(u)
        return cls(o, ball.center, Ball(np.zeros(o.shape[1]), ball.radius), eta, epsilon, rng)

    def propose(self) -> np.ndarray:
        self.last_direction = sample_unit_sphere(self.basis.shape[1], self.rng)
        self.x_tilde = self.x + self.epsilon * self.last_direction
        return self.center + self.basis @ self.x_tilde

    def update(self, revenue: float) -> None:
        if self.last_direction is None:
            raise RuntimeError("update() called before propose()")
        self.t += 1
        g = one_point_gradient(float(revenue), self.last_direction, self.epsilon)
        self.x = self.feasible.project(self.x + self.eta * g)

    def snapshot(self) -> dict:
        return {"learner": self.name, "rounds": self.t, "x": self.x.tolist(),
                "eta": self.eta, "epsilon": self.epsilon}


def gdg_step(state: Gdg, revenue_fn) -> Gdg:
    """One full GDG round against a revenue oracle ``revenue_fn(prices)``."""
    p = state.propose()
    state.update(revenue_fn(p))
    return state


# ---------------------------------------------------------------- Explore-Exploit


def quadratic_features(x: np.ndarray) -> np.ndarray:
    """Rows ``[x, upper-triangle of x x']`` (the intercept is handled by centring)."""
    x = np.atleast_2d(x)
    iu = np.triu_indices(x.shape[1])
    return np.hstack([x, x[:, iu[0]] * x[:, iu[1]]])


@dataclass(frozen=True)
class Surrogate:
    """``r(x) = a + b.x - 0.5 x' C x``."""

    a: float
    b: np.ndarray
    c: np.ndarray

    def value(self, x: np.ndarray) -> float:
        return float(self.a + self.b @ x - 0.5 * x @ self.c @ x)


def fit_surrogate(xs: np.ndarray, revenues: np.ndarray, ridge_lambda: float) -> Surrogate:
    """Ridge fit of a quadratic, then project its curvature onto the PSD cone."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    y = np.asarray(revenues, dtype=float)
    n, d = xs.shape
    feats = quadratic_features(xs)
    k = feats.shape[1]
    if n < k + 1:
        log.warning("surrogate fit with %d samples for %d parameters; relying on ridge", n, k + 1)
    fm = feats.mean(axis=0)
    ym = y.mean()
    fc = feats - fm
    coef = np.linalg.solve(fc.T @ fc + ridge_lambda * np.eye(k), fc.T @ (y - ym))
    a = ym - fm @ coef
    b = coef[:d]
    iu = np.triu_indices(d)
    h = np.zeros((d, d))
    h[iu] = coef[d:]
    # r = sum_{k<=l} w_kl x_k x_l = 0.5 x' H x with H_kk = 2 w_kk, H_kl = H_lk = w_kl
    h = h + h.T
    c = -h
    lam, vec = np.linalg.eigh(c)
    c = (vec * np.maximum(lam, 0.0)) @ vec.T
    return Surrogate(a=float(a), b=b, c=(c + c.T) / 2)


def maximize_surrogate(s: Surrogate, box: AttributeBox) -> np.ndarray:
    return maximize_box_quadratic(0.5 * s.c, s.b, box.lower, box.upper, check_psd=False)


def default_exploration_length(d: int) -> int:
    return max(50, 5 * (1 + d + d * (d + 1) // 2))


class ExploreExploit:
    """Phased explore-then-exploit with a concave quadratic surrogate.

    Coordinates ``x`` live in ``box`` and map to prices ``center + basis @ x``.
    Each phase of ``phase_length`` rounds explores uniformly for
    ``exploration`` rounds, fits, then plays the surrogate maximiser.
    """

    name = "ee"

    def __init__(self, basis: np.ndarray, center: np.ndarray, box: AttributeBox, phase_length: int,
                 exploration: int, ridge_lambda: float, rng: np.random.Generator):
        if exploration < 1 or phase_length < exploration:
            raise ConfigurationError(f"need 1 <= exploration ({exploration}) <= phase length ({phase_length})")
        self.basis = np.asarray(basis, dtype=float)
        self.center = np.asarray(center, dtype=float)
        self.box = box
        self.phase_length = int(phase_length)
        self.exploration = int(exploration)
        self.ridge_lambda = float(ridge_lambda)
        self.rng = rng
        self.t = 0
        self.phase = 0
        self.buffer_x: list[np.ndarray] = []
        self.buffer_r: list[float] = []
        self.surrogate: Surrogate | None = None
        self.exploit_point = box.project(np.zeros(box.dim))
        self._current: np.ndarray | None = None

    @classmethod
    def from_features(cls, u: FeatureMatrix, ball: PriceBall, horizon: int, rng: np.random.Generator, *,
                      n_phases: int = 10, exploration: int | None = None,
                      ridge_lambda: float = 1e-3) -> "ExploreExploit":
        """Price-ball learner: a cube inscribed in the radius-R ball of span(U)."""
        o, _ = orthonormal_span(u)
        d = o.shape[1]
        half = ball.radius / np.sqrt(d)
        box = AttributeBox(np.zeros(d), -half * np.ones(d), half * np.ones(d))
        m = default_exploration_length(d) if exploration is None else exploration
        phase_length = max(m, -(-horizon // max(n_phases, 1)))
        return cls(o, ball.center, box, phase_length, min(m, phase_length), ridge_lambda, rng)

    def _in_exploration(self) -> bool:
        return (self.t % self.phase_length) < self.exploration

    def propose(self) -> np.ndarray:
        if self._in_exploration():
            self._current = self.box.sample(self.rng)
        else:
            self._current = self.exploit_point
        return self.center + self.basis @ self._current

    def update(self, revenue: float) -> None:
        if self._current is None:
            raise RuntimeError("update() called before propose()")
        exploring = self._in_exploration()
        self.t += 1
        if exploring:
            self.buffer_x.append(self._current)
            self.buffer_r.append(float(revenue))
            if len(self.buffer_x) == self.exploration:
                self.surrogate = fit_surrogate(np.array(self.buffer_x), np.array(self.buffer_r), self.ridge_lambda)
                self.exploit_point = maximize_surrogate(self.surrogate, self.box)
                self.buffer_x, self.buffer_r = [], []
        if self.t % self.phase_length == 0:
            self.phase += 1

    def snapshot(self) -> dict:
        return {"learner": self.name, "rounds": self.t, "phase": self.phase,
                "phase_length": self.phase_length, "exploration": self.exploration,
                "exploit_point": self.exploit_point.tolist()}


def ee_run_phase(state: ExploreExploit, revenue_fn) -> ExploreExploit:
    """Play one full phase against ``revenue_fn(prices)``."""
    for _ in range(state.phase_length):
        state.update(revenue_fn(state.propose()))
    return state


# ---------------------------------------------------------------- OPOK


class PriceSearch:
    """Solve ``min_{p in ball} ||U'p - x||^2 + mu ||p - p_prev||^2`` exactly.

    The Hessian ``2 (U U' + mu I)`` is fixed, so it is eigendecomposed once;
    each call solves the ball-constrained problem through its secular equation.
    """

    def __init__(self, u: FeatureMatrix | np.ndarray, ball: Ball, mu: float = 1e-3):
        self.e = u.entries if isinstance(u, FeatureMatrix) else np.asarray(u, dtype=float)
        self.ball = ball
        self.mu = float(mu)
        h = self.e @ self.e.T + self.mu * np.eye(self.e.shape[0])
        self.lam, self.vec = np.linalg.eigh(h)
        self.lam = np.maximum(self.lam, 0.0)

    def objective(self, p: np.ndarray, x: np.ndarray, p_prev: np.ndarray) -> float:
        r = self.e.T @ p - x
        return float(r @ r + self.mu * (p - p_prev) @ (p - p_prev))

    def gradient(self, p: np.ndarray, x: np.ndarray, p_prev: np.ndarray) -> np.ndarray:
        return 2.0 * (self.e @ (self.e.T @ p - x) + self.mu * (p - p_prev))

    def stationarity(self, p: np.ndarray, x: np.ndarray, p_prev: np.ndarray) -> float:
        """Norm of the projected-gradient step with unit step length, scaled by 1/L."""
        lip = 2.0 * float(self.lam[-1]) if self.lam.size else 1.0
        g = self.gradient(p, x, p_prev)
        return float(np.linalg.norm(p - self.ball.project(p - g / lip)))

    def __call__(self, x: np.ndarray, p_prev: np.ndarray, tol: float = 1e-8) -> np.ndarray:
        c = self.ball.center
        r = self.ball.radius
        # in offsets y = p - c: minimise y'Hy - 2 g.y, g = U x + mu p_prev - H c
        g = self.e @ x + self.mu * p_prev - (self.e @ (self.e.T @ c) + self.mu * c)
        gt = self.vec.T @ g
        if r == 0:
            return c.copy()

        def norm_at(nu: float) -> float:
            return float(np.linalg.norm(gt / (self.lam + nu)))

        if self.lam[0] > 0 and norm_at(0.0) <= r:
            y = self.vec @ (gt / self.lam)
        else:
            lo, hi = 0.0, max(1.0, float(np.linalg.norm(g)) / r)
            while norm_at(hi) > r:
                hi *= 2.0
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if norm_at(mid) > r:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-15 * max(hi, 1.0):
                    break
            y = self.vec @ (gt / (self.lam + hi))
        p = self.ball.project(c + y)
        res = self.stationarity(p, x, p_prev)
        scale = max(1.0, float(np.linalg.norm(p)))
        if res > tol * scale:
            raise NumericError(f"price search did not reach stationarity: residual {res:.3e}")
        return p


def find_price(x_target: np.ndarray, u: FeatureMatrix, ball: Ball, p_prev: np.ndarray, mu: float = 1e-3) -> np.ndarray:
    return PriceSearch(u, ball, mu)(np.asarray(x_target, dtype=float), np.asarray(p_prev, dtype=float))


def opok_projection(x: np.ndarray, alpha: float, u: FeatureMatrix, ball: Ball, mu: float = 1e-3,
                    search: PriceSearch | None = None) -> np.ndarray:
    """Project ``x`` onto ``{U'p : p in ball}`` (via the price search) and shrink by ``1 - alpha``."""
    search = search or PriceSearch(u, ball, mu)
    p_hat = search(np.asarray(x, dtype=float), ball.center)
    return (1.0 - alpha) * (search.e.T @ p_hat)


class Opok:
    """Latent-space bandit learner over a price ball.

    Ascent form of the latent update: ``x <- Proj(x + eta * revenue * xi)``.
    """

    name = "opok"

    def __init__(self, u: FeatureMatrix, ball: PriceBall, eta: float, delta: float, alpha: float,
                 rng: np.random.Generator, mu: float = 1e-3):
        self.u = u
        self.ball = ball
        self.eta = float(eta)
        self.delta = float(delta)
        self.alpha = float(alpha)
        self.rng = rng
        self.search = PriceSearch(u, ball, mu)
        self.x = u.entries.T @ ball.center
        self.last_price = ball.center.copy()
        self.last_direction: np.ndarray | None = None
        self.t = 0

    def propose(self) -> np.ndarray:
        self.last_direction = sample_unit_sphere(self.u.n_attributes, self.rng)
        x_tilde = self.x + self.delta * self.last_direction
        self.last_price = self.search(x_tilde, self.last_price)
        return self.last_price

    def update(self, revenue: float) -> None:
        if self.last_direction is None:
            raise RuntimeError("update() called before propose()")
        self.t += 1
        target = self.x + self.eta * float(revenue) * self.last_direction
        p_hat = self.search(target, self.ball.center)
        self.x = (1.0 - self.alpha) * (self.u.entries.T @ p_hat)

    def snapshot(self) -> dict:
        return {"learner": self.name, "rounds": self.t, "x": self.x.tolist(),
                "eta": self.eta, "delta": self.delta, "alpha": self.alpha}


def opok_step(state: Opok, revenue_fn) -> Opok:
    p = state.propose()
    state.update(revenue_fn(p))
    return state


class NoOp:
    """Posts the same prices every round; used to calibrate timing overhead."""

    name = "noop"

    def __init__(self, prices: np.ndarray):
        self.prices = np.asarray(prices, dtype=float)
        self.t = 0

    def propose(self) -> np.ndarray:
        return self.prices

    def update(self, revenue: float) -> None:
        self.t += 1

    def snapshot(self) -> dict:
        return {"learner": self.name, "rounds": self.t}
