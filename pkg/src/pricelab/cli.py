"""``pricelab`` command-line entry point.

Exit status: 0 on success, 1 on a runtime failure, 2 on a configuration
problem (bad YAML, unknown key, missing file, schema mismatch).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from pricelab import afd_fit, harness
from pricelab.config import CliConfig, load_config, resolve
from pricelab.errors import AssumptionViolation, ConfigurationError
from pricelab.market_model import (
    ElasticityCoefficients,
    FeatureMatrix,
    MarketState,
    RevenueQuadratic,
    revenue_quadratic,
    static_optimum,
)

log = logging.getLogger("pricelab")

LOCK_NAME = ".pricelab.lock"


class Workspace:
    """Output directory for one command plus the artifacts it wrote."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[Path] = []

    def write_text(self, name: str, text: str) -> Path:
        path = self.root / name
        path.write_bytes(text.encode("utf-8"))
        self.files.append(path)
        return path

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def adopt(self, path: Path) -> None:
        self.files.append(path)

    def manifest(self, command: str) -> Path:
        entries = {}
        for p in sorted(set(self.files)):
            entries[p.name] = _digest(p)
        path = self.root / f"MANIFEST_{command}.json"
        path.write_text(json.dumps({"command": command, "artifacts": entries}, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        return path


def _digest(path: Path) -> str:
    """sha256 of the file; JSON files are hashed without their ``metadata`` block."""
    data = path.read_bytes()
    if path.suffix == ".json":
        obj = json.loads(data)
        if isinstance(obj, dict):
            obj.pop("metadata", None)
        data = json.dumps(obj, sort_keys=True).encode()
    return hashlib.sha256(data).hexdigest()


@contextmanager
def locked(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    lock = root / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(f"{root} is in use by another pricelab process (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield Workspace(root)
    finally:
        lock.unlink(missing_ok=True)


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


# ---------------------------------------------------------------- simulate


def cmd_simulate(cfg: CliConfig, args) -> int:
    seeds = args.seeds
    out = cfg.out_root(args.out) / cfg.experiment.name
    with locked(out) as ws:
        for ec in cfg.experiment_configs():
            if seeds is not None:
                ec = replace(ec, seeds=tuple(seeds))
            results = harness.run_many(ec, parallelism=cfg.experiment.parallelism)
            for r in results:
                csv_path, json_path = harness.write_run(r, out, ec.name, args.rho)
                if "csv" in cfg.output.formats:
                    ws.adopt(csv_path)
                else:
                    csv_path.unlink()
                if "json" in cfg.output.formats:
                    ws.adopt(json_path)
                else:
                    json_path.unlink()
            finals = np.array([r.regret_cum[-1] for r in results])
            slopes = []
            for r in results:
                try:
                    slopes.append(harness.tail_slope(r.regret_cum, args.rho).alpha_hat)
                except ValueError:
                    slopes.append(float("nan"))
            stem = f"{ec.name}_{ec.learner.name}_{ec.regime.kind}"
            sd = float(finals.std(ddof=1)) if len(results) > 1 else 0.0
            if len(results) > 1:
                agg = harness.aggregate_runs(results)
                ws.write_text(f"{stem}_aggregate.csv", agg.to_csv())
                try:
                    agg_slope = harness.tail_slope(agg.mean, args.rho).alpha_hat
                except ValueError:
                    agg_slope = float("nan")
            else:
                agg_slope = slopes[0]
            ws.write_json(f"{stem}_summary.json", {
                "learner": ec.learner.name,
                "regime": ec.regime.kind,
                "config_digest": ec.digest(),
                "config": ec.to_dict(),
                "comparator_space": results[0].comparator.space,
                "seeds": [r.seed for r in results],
                "final_regret": [float(x) for x in finals],
                "final_regret_mean": float(finals.mean()),
                "final_regret_sd": sd,
                "tail_slopes": [float(s) for s in slopes],
                "tail_slope_mean": float(np.nanmean(slopes)) if np.isfinite(slopes).any() else None,
                "tail_slope_of_mean": agg_slope,
                "rho": args.rho,
                "metadata": {"seconds_per_epoch": [r.seconds_per_epoch for r in results]},
            })
            _say(args, f"{ec.learner.name:>5} {ec.regime.kind:<12} T={ec.horizon} seeds={len(results)} "
                       f"regret={finals.mean():.6g} +/- {sd:.3g} tail_slope={np.nanmean(slopes):.3f} "
                       f"[vs {results[0].comparator.space}]")
        ws.manifest("simulate")
    return 0


# ---------------------------------------------------------------- interpret


INTERPRET_COLUMNS = ("scenario", "z", "theta_star", "prices", "status")


def _vec(x) -> str:
    return "[" + ", ".join(f"{v:.4f}" for v in np.atleast_1d(x)) + "]"


def interpret_rows(cfg: CliConfig) -> list[dict]:
    sec = cfg.interpret
    rows = []
    for sc in sec.scenarios:
        z = np.asarray(sc.z, dtype=float)
        try:
            u = FeatureMatrix(np.asarray(sc.u), cap=max(1, int(np.max(sc.u))))
            d = u.n_attributes
            v = np.eye(d) if sc.v == "identity" else np.asarray(sc.v, dtype=float)
            if z.shape != (d,):
                raise ConfigurationError(f"scenario {sc.name}: z has {z.size} entries, expected {d}")
            alpha = ElasticityCoefficients.uniform(u.n_products, own=sec.alpha_own, cross=sec.alpha_cross)
            q = revenue_quadratic(u, MarketState(z=z, v=v, alpha=alpha))
            # theta = base + x with x in [theta_min - base, theta_max - base]
            base = np.full(d, sec.theta_base)
            shifted = RevenueQuadratic(q.a, q.b - 2.0 * q.a @ base)
            theta = base + static_optimum(shifted, np.full(d, sec.theta_min) - base, np.full(d, sec.theta_max) - base)
            rows.append({"scenario": sc.name, "z": z, "theta_star": theta, "prices": u.entries @ theta,
                         "status": "ok"})
        except (AssumptionViolation, ConfigurationError, ValueError) as exc:
            rows.append({"scenario": sc.name, "z": z, "theta_star": None, "prices": None,
                         "status": f"error: {exc}"})
    return rows


def cmd_interpret(cfg: CliConfig, args) -> int:
    if cfg.interpret is None:
        raise ConfigurationError("interpret: section missing from config")
    rows = interpret_rows(cfg)
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(INTERPRET_COLUMNS)
    for r in rows:
        cells = [r["scenario"], " ".join(harness.fmt(x) for x in r["z"])]
        for key in ("theta_star", "prices"):
            cells.append("" if r[key] is None else " ".join(harness.fmt(x) for x in r[key]))
        cells.append(r["status"])
        w.writerow(cells)
    out = cfg.out_root(args.out) / cfg.experiment.name
    with locked(out) as ws:
        ws.write_text("interpret.csv", buf.getvalue())
        ws.manifest("interpret")
    if not args.quiet:
        print(f"{'scenario':<24} {'z':<28} {'theta*':<36} p = U theta*")
        for r in rows:
            if r["theta_star"] is None:
                print(f"{r['scenario']:<24} {_vec(r['z']):<28} {r['status']}")
            else:
                print(f"{r['scenario']:<24} {_vec(r['z']):<28} {_vec(r['theta_star']):<36} {_vec(r['prices'])}")
    return 0


# ---------------------------------------------------------------- tailslope


def read_regret_column(path: Path, column: str = "regret_cum") -> np.ndarray:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or column not in reader.fieldnames:
            raise ConfigurationError(f"{path}: no {column!r} column")
        return np.array([float(row[column]) for row in reader])


def cmd_tailslope(args) -> int:
    if args.csv is None:
        raise ConfigurationError("tailslope needs a regret CSV path")
    path = Path(args.csv)
    if not path.is_file():
        raise ConfigurationError(f"{path}: no such file")
    column = "regret_cum_mean" if "aggregate" in path.stem else "regret_cum"
    try:
        series = read_regret_column(path, column)
    except ConfigurationError:
        series = read_regret_column(path, "regret_cum_mean" if column == "regret_cum" else "regret_cum")
    rep = harness.tail_slope(series, args.rho)
    report = {"source": path.name, **asdict(rep)}
    out = Path(args.out) if args.out else path.parent
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{path.stem}_tailslope.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                                     encoding="utf-8")
    _say(args, f"alpha_hat={rep.alpha_hat:.6f} rho={rep.rho} t0={rep.t0} T={rep.horizon} "
               f"R(t0)={rep.regret_t0:.9g} R(T)={rep.regret_T:.9g}")
    return 0


# ---------------------------------------------------------------- afdfit


def cmd_afdfit(cfg: CliConfig, args) -> int:
    sec = cfg.afdfit
    if sec is None:
        raise ConfigurationError("afdfit: section missing from config")
    schema = afd_fit.TableSchema(tuple(sec.attributes), sec.price, sec.product_id)
    table = afd_fit.ingest_table(resolve(cfg, sec.path), schema)
    fit = afd_fit.fit_records(table.records, schema.attributes, sec.lam, sec.split_seed)
    out = cfg.out_root(args.out) / cfg.experiment.name
    with locked(out) as ws:
        ws.write_text("afd_coefficients.csv", fit.coefficients_csv())
        ws.write_json("afd_summary.json", fit.summary(table.skipped))
        if sec.decomposition:
            ws.write_text("afd_decomposition.csv", afd_fit.decomposition_csv(fit, table.records))
        ws.manifest("afdfit")
    _say(args, f"records={fit.n_records} skipped={table.skipped} features={fit.n_features} lambda={fit.lam:g} "
               f"R2_train={fit.r_squared_train:.4f} R2_test={fit.r_squared_test:.4f}")
    return 0


# ---------------------------------------------------------------- bench


def bench_grid(cfg: CliConfig) -> list[tuple[int, int, str, float]]:
    sec = cfg.bench
    base = cfg.experiment_configs()[0]
    rows = []
    for n, d in sec.settings:
        block = max(1, n // d)
        for name in sec.learners:
            ec = replace(
                base, n_products=n, n_attributes=d, block_size=block, block_width=min(3, d),
                active_cap=min(base.active_cap, min(3, d)), theta_base=0.0,
                regime=replace(base.regime, horizon=sec.horizon, kind="stationary"),
                learner=replace(base.learner, name=name))
            rows.append((n, d, name, harness.measure_runtime(ec, sec.seed)))
    return rows


def cmd_bench(cfg: CliConfig, args) -> int:
    if cfg.bench is None:
        raise ConfigurationError("bench: section missing from config")
    rows = bench_grid(cfg)
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("n_products", "n_attributes", "learner", "seconds_per_epoch"))
    for n, d, name, s in rows:
        w.writerow((n, d, name, harness.fmt(s)))
    out = cfg.out_root(args.out) / cfg.experiment.name
    with locked(out) as ws:
        ws.write_text("bench.csv", buf.getvalue())
    if not args.quiet:
        learners = list(dict.fromkeys(r[2] for r in rows))
        print(f"{'setting':<16}" + "".join(f"{name:>14}" for name in learners))
        for n, d in cfg.bench.settings:
            cells = {r[2]: r[3] for r in rows if (r[0], r[1]) == (n, d)}
            print(f"{f'N={n}, d={d}':<16}" + "".join(f"{cells[name]:>14.3e}" for name in learners))
    return 0


# ---------------------------------------------------------------- entry point


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--seeds expects comma-separated integers, got {text!r}") from None


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file (defaults apply when omitted)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value by dotted path, e.g. experiment.horizon=100")
    common.add_argument("--seeds", type=_seed_list, help="comma-separated seeds, overriding experiment.seeds")
    common.add_argument("--horizon", type=int, help="shorthand for --set experiment.horizon=N")
    common.add_argument("--out", help="output root (else $PRICELAB_OUT, else output.directory)")
    common.add_argument("--rho", type=float, default=0.5, help="tail fraction for slope estimates")
    common.add_argument("--quiet", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pricelab", description="Attribute-based dynamic pricing experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run learner x regime x seeds")
    sub.add_parser("interpret", parents=[common], help="static optimum tables for toy markets")
    ts = sub.add_parser("tailslope", parents=[common], help="tail slope of a regret CSV")
    ts.add_argument("csv", nargs="?", help="run or aggregate CSV")
    sub.add_parser("afdfit", parents=[common], help="fit additive attribute prices to a product table")
    sub.add_parser("bench", parents=[common], help="per-epoch learner runtime grid")
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad usage, matching our convention
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if not 0 < args.rho < 1:
            raise ConfigurationError(f"--rho must lie in (0, 1), got {args.rho}")
        if args.command == "tailslope":
            return cmd_tailslope(args)
        overrides = list(args.overrides)
        if args.horizon is not None:
            overrides.append(("experiment.horizon", args.horizon))
        cfg = load_config(args.config, overrides)
        if args.seeds is not None and not args.seeds:
            raise ConfigurationError("--seeds: empty list")
        handler = {"simulate": cmd_simulate, "interpret": cmd_interpret,
                   "afdfit": cmd_afdfit, "bench": cmd_bench}[args.command]
        return handler(cfg, args)
    except ConfigurationError as exc:
        print(f"pricelab: configuration error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        if args.command == "tailslope":
            print(f"pricelab: {exc}", file=sys.stderr)
            return 1
        print(f"pricelab: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level guard maps to exit 1
        log.debug("failure", exc_info=True)
        print(f"pricelab: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
