"""Additive feature decomposition of observed prices.

A product's price is modelled as an intercept plus one coefficient per
(attribute, level) it carries.  Categorical attributes are one-hot encoded
with every level kept; the resulting collinearity (each block sums to the
ones column) is absorbed by ridge shrinkage so that every level still gets a
reportable contribution.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pricelab.errors import SchemaError

log = logging.getLogger(__name__)

UNKNOWN = "unknown"
DEFAULT_LAMBDA = 1.0
FALLBACK_LAMBDA = 1e-8


@dataclass(frozen=True)
class ProductRecord:
    product_id: str
    attributes: dict[str, str]
    price: float

    def __post_init__(self) -> None:
        if not (self.price > 0 and math.isfinite(self.price)):
            raise ValueError(f"record {self.product_id!r}: price must be positive, got {self.price}")


@dataclass(frozen=True)
class TableSchema:
    attributes: tuple[str, ...]
    price: str = "price"
    product_id: str = "product_id"

    def __post_init__(self) -> None:
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if not self.attributes:
            raise SchemaError("schema needs at least one attribute column")
        if len(set(self.attributes)) != len(self.attributes):
            raise SchemaError("duplicate attribute column in schema")


@dataclass
class IngestResult:
    records: list[ProductRecord]
    skipped: int = 0


def _parse_price(raw: str) -> float | None:
    try:
        v = float(raw)
    except (TypeError, ValueError):
        return None
    if not math.isfinite(v) or v <= 0:
        return None
    return v


def ingest_table(path, schema: TableSchema) -> IngestResult:
    """Read a CSV of products.  Rows whose price does not parse are skipped."""
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if not header:
            raise SchemaError(f"{path}: empty table")
        need = [schema.price, *schema.attributes]
        missing = [c for c in need if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        has_id = schema.product_id in header
        records, skipped = [], 0
        for k, row in enumerate(reader):
            price = _parse_price(row.get(schema.price))
            if price is None:
                skipped += 1
                continue
            attrs = {}
            for a in schema.attributes:
                v = (row.get(a) or "").strip()
                attrs[a] = v if v else UNKNOWN
            pid = row[schema.product_id] if has_id and row[schema.product_id] else f"row{k}"
            records.append(ProductRecord(pid, attrs, price))
    if not records:
        raise SchemaError(f"{path}: no usable rows ({skipped} skipped)")
    if skipped:
        log.info("%s: skipped %d rows with unparseable prices", path, skipped)
    return IngestResult(records, skipped)


@dataclass(frozen=True)
class Encoding:
    attributes: tuple[str, ...]
    levels: tuple[tuple[str, ...], ...]

    @property
    def columns(self) -> list[tuple[str, str]]:
        return [(a, lv) for a, lvs in zip(self.attributes, self.levels) for lv in lvs]

    @property
    def n_columns(self) -> int:
        return sum(len(lvs) for lvs in self.levels)

    def transform(self, records) -> np.ndarray:
        x = np.zeros((len(records), self.n_columns))
        index = {c: j for j, c in enumerate(self.columns)}
        for i, r in enumerate(records):
            for a in self.attributes:
                j = index.get((a, r.attributes.get(a, UNKNOWN)))
                if j is not None:
                    x[i, j] = 1.0
        return x


def one_hot_encode(records, attributes) -> tuple[np.ndarray, list[str], Encoding]:
    """Design matrix with one column per observed (attribute, level)."""
    if not records:
        raise ValueError("cannot encode an empty record list")
    attributes = tuple(attributes)
    levels = tuple(tuple(sorted({r.attributes.get(a, UNKNOWN) for r in records})) for a in attributes)
    enc = Encoding(attributes, levels)
    names = [f"{a}={lv}" for a, lv in enc.columns]
    return enc.transform(records), names, enc


def split_mask(ids, split_seed: int = 0, test_fraction: float = 0.2) -> np.ndarray:
    """True for test records.  Membership depends on the id only, never on position."""
    out = np.empty(len(ids), dtype=bool)
    for i, pid in enumerate(ids):
        h = hashlib.sha256(f"{split_seed}:{pid}".encode()).digest()
        out[i] = int.from_bytes(h[:8], "big") / 2.0 ** 64 < test_fraction
    return out


def r_squared(y, yhat) -> tuple[float, bool]:
    """Returns (R^2, degenerate); a constant target reports 0 and flags it."""
    y = np.asarray(y, dtype=float)
    ss_tot = float(np.sum((y - y.mean()) ** 2)) if y.size else 0.0
    ss_res = float(np.sum((y - yhat) ** 2))
    if ss_tot <= 1e-12 * max(1.0, float(np.sum(y ** 2))):
        return 0.0, True
    return 1.0 - ss_res / ss_tot, False


@dataclass
class FitResult:
    coefficients: np.ndarray
    names: list[str]
    intercept: float
    r_squared_train: float
    r_squared_test: float
    n_features: int
    n_records: int
    lam: float
    n_train: int = 0
    n_test: int = 0
    degenerate: bool = False
    encoding: Encoding | None = field(default=None, repr=False)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(x) @ self.coefficients

    def summary(self, skipped: int = 0) -> dict:
        return {
            "lambda": self.lam,
            "r_squared_train": self.r_squared_train,
            "r_squared_test": self.r_squared_test,
            "n_records": self.n_records,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "n_features": self.n_features,
            "intercept": self.intercept,
            "skipped": skipped,
            "degenerate_target": self.degenerate,
        }

    def coefficients_csv(self) -> str:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("attribute", "level", "coefficient"))
        w.writerow(("(intercept)", "", f"{self.intercept:.9g}"))
        for name, c in zip(self.names, self.coefficients):
            a, lv = name.split("=", 1)
            w.writerow((a, lv, f"{c:.9g}"))
        return buf.getvalue()


def _solve(xc: np.ndarray, yc: np.ndarray, lam: float) -> np.ndarray:
    g = xc.T @ xc
    if lam == 0.0:
        if np.linalg.matrix_rank(g) < g.shape[0]:
            log.warning("X'X is rank deficient with lambda=0; falling back to lambda=%g", FALLBACK_LAMBDA)
            lam = FALLBACK_LAMBDA
        else:
            return np.linalg.solve(g, xc.T @ yc)
    return np.linalg.solve(g + lam * np.eye(g.shape[0]), xc.T @ yc)


def ridge_fit(x, y, lam: float = DEFAULT_LAMBDA, split_seed: int = 0, ids=None,
              names=None, encoding: Encoding | None = None) -> FitResult:
    """Ridge on centered columns so the intercept is not shrunk.

    ``ids`` key the 80/20 split; positional ids are used when absent, which
    makes the split depend on order.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("ridge_fit needs at least two records")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    ids = [str(i) for i in range(n)] if ids is None else list(ids)
    test = split_mask(ids, split_seed)
    if test.all() or not test.any():
        # too few records to split: put one in test so both sides exist
        test = np.zeros(n, dtype=bool)
        test[int(np.argmax([hashlib.sha256(f"{split_seed}:{i}".encode()).hexdigest() for i in ids]))] = True
    train = ~test
    xm = x[train].mean(axis=0)
    ym = float(y[train].mean())
    beta = _solve(x[train] - xm, y[train] - ym, float(lam))
    intercept = ym - float(xm @ beta)
    r2_tr, deg = r_squared(y[train], intercept + x[train] @ beta)
    r2_te, deg_te = r_squared(y[test], intercept + x[test] @ beta)
    names = list(names) if names is not None else [f"x{j}" for j in range(x.shape[1])]
    return FitResult(beta, names, intercept, r2_tr, r2_te, x.shape[1], n, float(lam),
                     n_train=int(train.sum()), n_test=int(test.sum()), degenerate=deg or deg_te, encoding=encoding)


@dataclass(frozen=True)
class Contribution:
    attribute: str
    level: str
    contribution: float
    seen: bool = True


def export_contributions(fit: FitResult, record: ProductRecord) -> tuple[list[Contribution], float]:
    """Per-attribute addends for one record; returns (items, predicted price)."""
    if fit.encoding is None:
        raise ValueError("fit has no encoding attached; fit through fit_records or pass encoding=")
    index = {c: j for j, c in enumerate(fit.encoding.columns)}
    items, total = [], fit.intercept
    for a in fit.encoding.attributes:
        lv = record.attributes.get(a, UNKNOWN)
        j = index.get((a, lv))
        if j is None:
            items.append(Contribution(a, UNKNOWN, 0.0, seen=False))
            continue
        c = float(fit.coefficients[j])
        items.append(Contribution(a, lv, c))
        total += c
    return items, total


def fit_records(records, attributes, lam: float = DEFAULT_LAMBDA, split_seed: int = 0) -> FitResult:
    x, names, enc = one_hot_encode(records, attributes)
    y = np.array([r.price for r in records])
    return ridge_fit(x, y, lam, split_seed, ids=[r.product_id for r in records], names=names, encoding=enc)


def decomposition_csv(fit: FitResult, records) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("product_id", "attribute", "level", "contribution"))
    for r in records:
        items, pred = export_contributions(fit, r)
        w.writerow((r.product_id, "(intercept)", "", f"{fit.intercept:.9g}"))
        for it in items:
            w.writerow((r.product_id, it.attribute, it.level, f"{it.contribution:.9g}"))
        w.writerow((r.product_id, "(predicted)", "", f"{pred:.9g}"))
    return buf.getvalue()


def synthetic_table(n_records: int = 1000, levels=(4, 5, 3, 6), noise_frac: float = 0.0,
                    seed: int = 0, base: float = 40.0) -> tuple[list[ProductRecord], dict]:
    """Products whose prices are exactly additive in their attribute levels.

    ``noise_frac`` adds Gaussian noise with s.d. equal to that fraction of
    the noiseless price s.d.  Returns the records and the true level values.
    """
    rng = np.random.default_rng(seed)
    truth = {f"a{k}": {f"l{j}": float(rng.uniform(1.0, 20.0)) for j in range(m)} for k, m in enumerate(levels)}
    rows = []
    for i in range(n_records):
        attrs = {a: f"l{int(rng.integers(len(v)))}" for a, v in truth.items()}
        rows.append((f"p{i:05d}", attrs, base + sum(truth[a][lv] for a, lv in attrs.items())))
    prices = np.array([r[2] for r in rows])
    if noise_frac > 0:
        prices = prices + rng.normal(0.0, noise_frac * prices.std(), size=prices.shape)
        prices = np.maximum(prices, 1e-3)
    records = [ProductRecord(pid, attrs, float(p)) for (pid, attrs, _), p in zip(rows, prices)]
    return records, truth


def write_table(records, path, attributes) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("product_id", *attributes, "price"))
        for r in records:
            w.writerow((r.product_id, *(r.attributes[a] for a in attributes), f"{r.price:.9g}"))
