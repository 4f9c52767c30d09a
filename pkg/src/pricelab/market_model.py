"""Attribute-space demand model, elasticity operator and revenue quadratics.

Prices are additive in attributes, ``p = U @ theta``.  Expected demand is

    q_i = u_i.z - a_ii <u_i,u_i>_V p_i + sum_j a_ij <u_i,u_j>_V (p_j - p_i)

which, for symmetric elasticities, equals ``U z - M p`` with ``M`` a
nonnegative diagonal plus a weighted graph Laplacian.  Revenue is money
earned, ``<q, p>``, and is maximised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from pricelab.errors import AssumptionViolation, ConfigurationError

PSD_TOL = 1e-9
SYM_TOL = 1e-12


def _spectral_norm(a: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def min_eig_ok(a: np.ndarray, tol: float = PSD_TOL) -> bool:
    """True when the smallest eigenvalue of symmetric ``a`` is >= -tol * ||a||."""
    lam = np.linalg.eigvalsh((a + a.T) / 2)
    return bool(lam[0] >= -tol * max(_spectral_norm(a), 1e-300))


@dataclass(frozen=True)
class FeatureMatrix:
    """N x d product/attribute matrix with integer levels in ``0..cap``."""

    entries: np.ndarray
    cap: int = 1

    def __post_init__(self) -> None:
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
            raise ConfigurationError(f"feature matrix must be 2-d and nonempty, got shape {e.shape}")
        if self.cap < 1:
            raise ConfigurationError(f"level cap must be >= 1, got {self.cap}")
        if not np.all(np.isfinite(e)) or np.any(e != np.round(e)):
            raise ConfigurationError("feature matrix entries must be integers")
        if e.min() < 0 or e.max() > self.cap:
            raise ConfigurationError(f"feature matrix entries must lie in 0..{self.cap}")
        zero_rows = np.flatnonzero(~e.any(axis=1))
        if zero_rows.size:
            raise ConfigurationError(f"products {zero_rows.tolist()} have no active attribute")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def n_products(self) -> int:
        return self.entries.shape[0]

    @property
    def n_attributes(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class ElasticityCoefficients:
    """Own-price sensitivities ``own`` (N,) and substitution strengths ``cross`` (N, N).

    The diagonal of ``cross`` is ignored everywhere.
    """

    own: np.ndarray
    cross: np.ndarray

    def __post_init__(self) -> None:
        own = np.asarray(self.own, dtype=float)
        cross = np.asarray(self.cross, dtype=float)
        n = own.shape[0]
        if own.ndim != 1 or cross.shape != (n, n):
            raise ConfigurationError(f"elasticity shapes disagree: own {own.shape}, cross {cross.shape}")
        off = cross[~np.eye(n, dtype=bool)]
        if own.min(initial=0.0) < 0 or off.min(initial=0.0) < 0:
            raise AssumptionViolation("elasticity coefficients must be nonnegative")
        object.__setattr__(self, "own", own)
        object.__setattr__(self, "cross", cross)

    @classmethod
    def uniform(cls, n: int, own: float = 0.15, cross: float | None = None) -> "ElasticityCoefficients":
        cross = own if cross is None else cross
        c = np.full((n, n), float(cross))
        np.fill_diagonal(c, 0.0)
        return cls(np.full(n, float(own)), c)

    @property
    def n_products(self) -> int:
        return self.own.shape[0]

    def as_matrix(self) -> np.ndarray:
        """Cross matrix with ``own`` written on the diagonal."""
        a = self.cross.copy()
        np.fill_diagonal(a, self.own)
        return a


@dataclass(frozen=True)
class MarketState:
    """Baseline attribute demand ``z``, attribute interaction ``v`` and elasticities."""

    z: np.ndarray
    v: np.ndarray
    alpha: ElasticityCoefficients

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=float)
        v = np.asarray(self.v, dtype=float)
        d = z.shape[0]
        if z.ndim != 1 or v.shape != (d, d):
            raise ConfigurationError(f"z has length {z.shape} but V has shape {v.shape}")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(v))):
            raise ConfigurationError("market state has non-finite entries")
        scale = max(np.abs(v).max(initial=0.0), 1e-300)
        if np.abs(v - v.T).max(initial=0.0) > SYM_TOL * scale:
            raise AssumptionViolation("V must be symmetric")
        if not min_eig_ok(v):
            raise AssumptionViolation("V must be positive semidefinite")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "v", v)

    @property
    def n_attributes(self) -> int:
        return self.z.shape[0]


@dataclass(frozen=True)
class ElasticityOperator:
    """``m = self_part + laplacian_part`` with ``laplacian_part = diag(W 1) - W``."""

    m: np.ndarray
    self_part: np.ndarray
    laplacian_part: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class RevenueQuadratic:
    """Expected revenue ``R(theta) = theta.b - theta' a theta``."""

    a: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.shape != (b.shape[0], b.shape[0]):
            raise ConfigurationError(f"quadratic shapes disagree: a {a.shape}, b {b.shape}")
        object.__setattr__(self, "a", (a + a.T) / 2)
        object.__setattr__(self, "b", b)

    def value(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(self.c + theta @ self.b - theta @ self.a @ theta)

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return self.b - 2.0 * self.a @ theta

    def __add__(self, other: "RevenueQuadratic") -> "RevenueQuadratic":
        return RevenueQuadratic(self.a + other.a, self.b + other.b, self.c + other.c)

    def scaled(self, k: float) -> "RevenueQuadratic":
        return RevenueQuadratic(k * self.a, k * self.b, k * self.c)


def _check_dims(u: FeatureMatrix, state: MarketState) -> None:
    if u.n_attributes != state.n_attributes:
        raise ConfigurationError(f"U has {u.n_attributes} attributes but z has {state.n_attributes}")
    if u.n_products != state.alpha.n_products:
        raise ConfigurationError(f"U has {u.n_products} products but alpha has {state.alpha.n_products}")


def v_inner(u_i: np.ndarray, u_j: np.ndarray, v: np.ndarray) -> float:
    """Similarity ``u_i' V u_j``."""
    u_i = np.asarray(u_i, dtype=float)
    u_j = np.asarray(u_j, dtype=float)
    v = np.asarray(v, dtype=float)
    if u_i.shape != u_j.shape or v.shape != (u_i.shape[0], u_i.shape[0]):
        raise ConfigurationError(f"cannot pair vectors {u_i.shape}, {u_j.shape} with V {v.shape}")
    return float(u_i @ v @ u_j)


def similarity_gram(u: FeatureMatrix, v: np.ndarray) -> np.ndarray:
    """All pairwise V-inner products between product rows."""
    e = u.entries
    return e @ v @ e.T


def prices_from_attributes(u: FeatureMatrix, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (u.n_attributes,):
        raise ConfigurationError(f"theta has shape {theta.shape}, expected ({u.n_attributes},)")
    return u.entries @ theta


def check_similarity(u: FeatureMatrix, v: np.ndarray, tol: float = PSD_TOL) -> None:
    """Raise if some pair of distinct products has negative V-similarity."""
    g = similarity_gram(u, v)
    _check_negative_offdiag(g, tol, what="V-similarity")


def _check_negative_offdiag(w: np.ndarray, tol: float, what: str) -> None:
    n = w.shape[0]
    off = w.copy()
    off[np.diag_indices(n)] = 0.0
    floor = -tol * max(np.abs(w).max(initial=0.0), 1.0)
    bad = np.argwhere(off < floor)
    if bad.size:
        i, j = bad[0]
        raise AssumptionViolation(
            f"{what} between products ({i}, {j}) is {off[i, j]:.6g} < 0 "
            f"({len(bad) // 2 or 1} offending pairs)"
        )


def assemble_elasticity_operator(u: FeatureMatrix, state: MarketState) -> ElasticityOperator:
    """Build M from the demand equation, with symmetrised substitution weights."""
    _check_dims(u, state)
    g = similarity_gram(u, state.v)
    alpha = state.alpha
    self_diag = alpha.own * np.diag(g)
    w = 0.5 * (alpha.cross + alpha.cross.T) * g
    np.fill_diagonal(w, 0.0)
    _check_negative_offdiag(w, PSD_TOL, what="substitution weight")
    w = np.maximum(w, 0.0)
    self_part = np.diag(self_diag)
    laplacian = np.diag(w.sum(axis=1)) - w
    return ElasticityOperator(m=self_part + laplacian, self_part=self_part, laplacian_part=laplacian, weights=w)


def demand(u: FeatureMatrix, state: MarketState, p: np.ndarray, eps: np.ndarray | None = None) -> np.ndarray:
    """Evaluate the demand equation term by term (asymmetric elasticities allowed)."""
    _check_dims(u, state)
    p = np.asarray(p, dtype=float)
    if p.shape != (u.n_products,):
        raise ConfigurationError(f"price vector has shape {p.shape}, expected ({u.n_products},)")
    g = similarity_gram(u, state.v)
    c = state.alpha.cross * g
    np.fill_diagonal(c, 0.0)
    q = u.entries @ state.z - state.alpha.own * np.diag(g) * p + c @ p - c.sum(axis=1) * p
    if eps is not None:
        eps = np.asarray(eps, dtype=float)
        if eps.shape != p.shape:
            raise ConfigurationError(f"noise has shape {eps.shape}, expected {p.shape}")
        q = q + eps
    return q


def demand_from_operator(u: FeatureMatrix, z: np.ndarray, m: np.ndarray, p: np.ndarray,
                         eps: np.ndarray | None = None) -> np.ndarray:
    """Demand ``U z - M p + eps`` for an arbitrary N x N operator."""
    q = u.entries @ z - m @ p
    return q if eps is None else q + eps


def realized_revenue(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ConfigurationError(f"prices {p.shape} and demand {q.shape} differ in shape")
    return float(p @ q)


def quadratic_from_operator(u: FeatureMatrix, z: np.ndarray, m: np.ndarray) -> RevenueQuadratic:
    e = u.entries
    return RevenueQuadratic(a=e.T @ m @ e, b=e.T @ (e @ z))


def revenue_quadratic(u: FeatureMatrix, state: MarketState) -> RevenueQuadratic:
    """Expected revenue in attribute space: ``a = U'MU``, ``b = U'U z``."""
    op = assemble_elasticity_operator(u, state)
    return quadratic_from_operator(u, state.z, op.m)


def _box(lower, upper, d: int) -> tuple[np.ndarray, np.ndarray]:
    lo = np.broadcast_to(np.asarray(lower, dtype=float), (d,)).copy()
    hi = np.broadcast_to(np.asarray(upper, dtype=float), (d,)).copy()
    if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
        raise ConfigurationError("attribute box is empty (lower > upper somewhere)")
    return lo, hi


def box_start(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Midpoint of the box where finite, else the clipped origin."""
    mid = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi), 0.0)
    return np.clip(mid, lo, hi)


def maximize_box_quadratic(a: np.ndarray, b: np.ndarray, lower, upper, *, check_psd: bool = True,
                           tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Projected gradient ascent of ``b.x - x'ax`` over a box.

    Starts at the box midpoint so flat directions resolve to the middle.
    """
    a = (np.asarray(a, dtype=float) + np.asarray(a, dtype=float).T) / 2
    b = np.asarray(b, dtype=float)
    d = b.shape[0]
    lo, hi = _box(lower, upper, d)
    if check_psd and not min_eig_ok(a):
        raise AssumptionViolation("revenue curvature is not positive semidefinite")
    lam_max = max(float(np.linalg.eigvalsh(a)[-1]), 0.0)
    step = 1.0 / (2.0 * lam_max + 1e-12)
    theta = box_start(lo, hi)
    if lam_max == 0.0:
        # linear objective: go to the bound in the gradient's direction
        return np.where(b > 0, hi, np.where(b < 0, lo, theta))
    for _ in range(max_iter):
        nxt = np.clip(theta + step * (b - 2.0 * a @ theta), lo, hi)
        moved = np.abs(nxt - theta).max()
        theta = nxt
        if moved < tol:
            break
    return theta


def static_optimum(quad: RevenueQuadratic, lower, upper) -> np.ndarray:
    """Revenue-maximising attribute prices within ``[lower, upper]``."""
    return maximize_box_quadratic(quad.a, quad.b, lower, upper)


@dataclass(frozen=True)
class PDReport:
    is_psd: bool
    is_pd: bool
    components: list[list[int]] = field(default_factory=list)
    gershgorin_dominant: bool = False
    min_eigenvalue: float = 0.0


def pd_characterization(op: ElasticityOperator) -> PDReport:
    """Definiteness of M read off the similarity graph.

    M is PD iff every connected component of the weight graph holds a product
    with positive own-price term; strict diagonal dominance implies PD.
    """
    n = op.m.shape[0]
    _, labels = connected_components(op.weights > 0, directed=False)
    comps: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        comps.setdefault(int(lab), []).append(i)
    components = [comps[k] for k in sorted(comps, key=lambda k: comps[k][0])]
    own = np.diag(op.self_part)
    is_pd = all(bool(np.any(own[c] > 0)) for c in components)
    m = op.m
    off = np.abs(m).sum(axis=1) - np.abs(np.diag(m))
    gersh = bool(np.all(np.diag(m) > off) and n > 0)
    lam = np.linalg.eigvalsh(m)
    is_psd = bool(lam[0] >= -PSD_TOL * max(_spectral_norm(m), 1e-300))
    return PDReport(is_psd=is_psd, is_pd=is_pd, components=components,
                    gershgorin_dominant=gersh, min_eigenvalue=float(lam[0]))
