"""Command line front end: ``relbal <command> -c config.json -o outdir``.

Exit codes: 0 success, 2 numerical failure, 3 configuration or usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import _validation as v
from .balance_solver import SolveConfig, fit_constraint_t, gradient_descent_D, t_iterate
from .exceptions import ConfigError, NonConvergenceError, RelbalError
from .fubini_study import bergman, default_grid, write_field_csv
from .geometry import model_from_config, reference_gram_diagonal
from .hermitian_space import (IndexVector, InnerProduct, check_same_orbit, geodesic,
                              orbit_project, random_inner_product)
from .io import config_hash, load_json, write_json
from .kempf_ness import balanced_residual, convexity_scan, group_residual
from .splitting import fold_model, product_distance_check, verify_splitting

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 2, 3
COMMANDS = ("balance", "verify-split", "energy-scan", "bergman", "distance-check", "index-fit")

log = logging.getLogger("relbal")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error [usage]: {message}\n")


@dataclass
class RunConfig:
    command: str
    raw: dict
    model: object
    group: str
    torus: object
    solve: SolveConfig
    out_dir: Path
    seed: int
    extra: dict = field(default_factory=dict)

    @property
    def hash(self):
        return config_hash({"command": self.command, **self.raw})

    def provenance(self, grid):
        return {"config_hash": self.hash, "grid": grid.exactness_note, "seed": self.seed}


def build_parser():
    p = _Parser(prog="relbal", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("-c", "--config", required=True, help="JSON config file")
    p.add_argument("-o", "--out", default=".", help="output directory")
    p.add_argument("--group", choices=("sl", "gc", "gct"))
    p.add_argument("--grid-level", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--m1", help="first inner product JSON (energy-scan)")
    p.add_argument("--m2", help="second inner product JSON (energy-scan)")
    p.add_argument("--m", help="inner product JSON (bergman)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def make_run_config(args):
    raw = load_json(args.config)
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    if args.group is not None:
        raw["group"] = args.group
    if args.grid_level is not None:
        raw["grid_level"] = args.grid_level
    if args.seed is not None:
        raw["seed"] = args.seed
    model = model_from_config(raw)
    group = v.check_group(raw.get("group", "gct"))
    solver = dict(raw.get("solver", {}))
    for key in ("max_iters", "tol", "damping", "acceleration", "window"):
        if key in raw:
            solver[key] = raw[key]
    solver["group"] = group
    solver["grid_level"] = v.check_positive_int(raw.get("grid_level", 2), "grid_level")
    solve = SolveConfig.from_dict(solver)
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    return RunConfig(command=args.command, raw=raw, model=model, group=group,
                     torus=raw.get("torus", "maximal"), solve=solve,
                     out_dir=Path(args.out), seed=seed)


def _start(rc, splitting, rng):
    start = rc.raw.get("start", "reference")
    if start == "reference":
        G = reference_gram_diagonal(rc.model, rc.solve.grid_level)
        return orbit_project(InnerProduct.from_matrix(G, splitting), rc.group)
    if start == "random":
        return random_inner_product(splitting, rng, float(rc.raw.get("start_scale", 1.0)),
                                    rc.group)
    raise ConfigError("start must be 'reference' or 'random'")


def _load_ip(path, splitting):
    try:
        m = InnerProduct.from_dict(load_json(path))
    except ConfigError:
        raise
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid inner product file {path}: {exc}") from None
    return v.check_inner_product(m, splitting)


def cmd_balance(rc):
    sp = v.check_splitting(rc.model, rc.torus)
    grid = default_grid(rc.model, sp, rc.solve.grid_level)
    rng = np.random.default_rng(rc.seed)
    m0 = _start(rc, sp, rng)
    method = rc.raw.get("method", "t_iterate")
    try:
        if method == "t_iterate":
            trace = t_iterate(m0, grid, rc.solve)
        elif method == "gradient":
            trace = gradient_descent_D(m0, grid, rc.solve)
        else:
            raise ConfigError(f"unknown method {method!r}")
    except NonConvergenceError as exc:
        if exc.trace is not None:
            write_json(rc.out_dir / "solve_trace.json",
                       {**exc.trace.to_dict(), **rc.provenance(grid)})
        raise
    write_json(rc.out_dir / "solve_trace.json",
               {**trace.to_dict(), "config": rc.solve.to_dict(), **rc.provenance(grid)})
    write_json(rc.out_dir / "inner_product.json", trace.final.to_dict())
    rho = bergman(trace.final, grid)
    write_field_csv(rc.out_dir / "bergman_field.csv", grid, rho, name="rho")
    if not trace.converged:
        raise NonConvergenceError(trace.message, trace)
    print(f"converged in {trace.iterations} iterations, residual {trace.residual:.3e}")
    return EXIT_OK


def cmd_verify_split(rc):
    if len(rc.model.factors) < 2:
        raise ConfigError("verify-split needs a product model (at least two factors)")
    report = verify_splitting(rc.model, torus=rc.torus, group=rc.group,
                              level=rc.solve.grid_level, seed=rc.seed,
                              tolerances=rc.raw.get("tolerances"),
                              start_scale=float(rc.raw.get("start_scale", 1.0)),
                              max_iters=rc.solve.max_iters,
                              csv_path=_ensure(rc.out_dir) / "mixed_hessian.csv")
    data = report.to_dict()
    data["config_hash"] = rc.hash
    write_json(rc.out_dir / "splitting_report.json", data)
    if not report.passed:
        stage = report.failing_stage()
        print(f"relbal: verification failed [accuracy:{stage}]", file=sys.stderr)
        return EXIT_NUMERIC
    print("all four stages passed")
    return EXIT_OK


def _ensure(path):
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_energy_scan(rc, m1_path, m2_path):
    if not m1_path or not m2_path:
        raise ConfigError("energy-scan needs --m1 and --m2 inner product files")
    sp = v.check_splitting(rc.model, rc.torus)
    m1, m2 = _load_ip(m1_path, sp), _load_ip(m2_path, sp)
    check_same_orbit(m1, m2, rc.group)
    grid = default_grid(rc.model, sp, rc.solve.grid_level)
    samples = v.check_positive_int(rc.raw.get("samples", 9), "samples", minimum=5)
    report = convexity_scan(geodesic(m1, m2, rc.group), grid, samples=samples)
    report.extra.update(rc.provenance(grid))
    report.write_csv(_ensure(rc.out_dir) / "energy_scan.csv")
    write_json(rc.out_dir / "energy_report.json", report.to_dict())
    if not report.convex:
        print("relbal: D' not monotone along the segment [accuracy:convexity]", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_bergman(rc, m_path):
    sp = v.check_splitting(rc.model, rc.torus)
    grid = default_grid(rc.model, sp, rc.solve.grid_level)
    m = _load_ip(m_path, sp) if m_path else _start(rc, sp, np.random.default_rng(rc.seed))
    rho = bergman(m, grid)
    write_field_csv(_ensure(rc.out_dir) / "bergman_field.csv", grid, rho, name="rho")
    write_json(rc.out_dir / "bergman_report.json", {
        "max_over_min": float(rho.max() / rho.min()),
        "min": float(rho.min()),
        "max": float(rho.max()),
        "balanced_residual_free": balanced_residual(m, grid, "free"),
        "group_residual": group_residual(m, grid, rc.group),
        **rc.provenance(grid),
    })
    return EXIT_OK


def cmd_distance_check(rc):
    fm1, fm2 = fold_model(rc.model)
    torus = rc.raw.get("torus", "trivial")
    sp1, sp2 = v.check_splitting(fm1, torus), v.check_splitting(fm2, torus)
    rng = np.random.default_rng(rc.seed)
    trials = v.check_positive_int(rc.raw.get("trials", 100), "trials")
    rows, coeffs = [], set()
    ok = True
    for _ in range(trials):
        pair = [random_inner_product(s, rng, 1.0, "sl") for s in (sp1, sp1, sp2, sp2)]
        lhs, rhs, c, brute = product_distance_check(*pair)
        coeffs.add(c)
        ok &= abs(lhs - brute) <= 1e-10 * max(1.0, lhs) and abs(lhs - rhs) <= 1e-10 * max(1.0, lhs)
        rows.append({"lhs": lhs, "rhs": rhs, "brute": brute, "coefficients": list(c)})
    ok &= len(coeffs) == 1
    write_json(_ensure(rc.out_dir) / "distance_check.json", {
        "coefficients": [list(c) for c in sorted(coeffs)], "passed": bool(ok),
        "trials": rows, "config_hash": rc.hash, "seed": rc.seed})
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_index_fit(rc):
    sp = v.check_splitting(rc.model, rc.torus)
    b = rc.raw.get("index")
    b = IndexVector.ones(sp) if b is None else IndexVector.create(b, sp)
    xi, resid = fit_constraint_t(b, sp)
    write_json(_ensure(rc.out_dir) / "index_fit.json", {
        "index": b.values.tolist(), "xi": xi.tolist(), "residual": resid,
        "feasible": bool(resid < 1e-6), "config_hash": rc.hash})
    print(f"residual {resid:.3e}")
    return EXIT_OK


def run(args):
    try:
        rc = make_run_config(args)
    except RelbalError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    if args.command == "balance":
        return cmd_balance(rc)
    if args.command == "verify-split":
        return cmd_verify_split(rc)
    if args.command == "energy-scan":
        return cmd_energy_scan(rc, args.m1, args.m2)
    if args.command == "bergman":
        return cmd_bergman(rc, args.m)
    if args.command == "distance-check":
        return cmd_distance_check(rc)
    return cmd_index_fit(rc)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None:
            v.check_positive_int(args.threads, "threads")
            with threadpool_limits(limits=args.threads):
                return run(args)
        return run(args)
    except ConfigError as exc:
        print(f"relbal: error [{exc.stage}]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RelbalError as exc:
        print(f"relbal: error [{exc.stage}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
