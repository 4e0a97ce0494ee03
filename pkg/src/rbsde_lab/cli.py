"""Command-line front end: ``rbsde-lab {solve,oracle-quadratic,compare,sweep,validate}``.

Exit codes: 0 success, 1 a check or the solver failed, 2 the input was invalid.
Set ``RBSDE_LOG=DEBUG`` (or INFO, WARNING, ...) for log output on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .analysis import (
    SWEEP_KINDS,
    apriori_bound,
    approximation_sweep,
    check_comparison,
    check_hypotheses,
    norm_estimates,
)
from .config import ConfigError, ScenarioConfig, load_config
from .errors import RBSDEError, SolverError
from .generators import A2, validate_scenario
from .lattice import expectation_at_root, sample_paths
from .snell import check_integrability, explicit_quadratic
from .solver import DiscreteSolution, solve_rbsde

log = logging.getLogger("rbsde_lab")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad command-line input; maps to exit code 2."""


# ---------------------------------------------------------------- output helpers


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv_atomic(path: str | Path, header: Sequence[str], rows) -> int:
    """Write via a temporary file in the target directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    n = 0
    for r in rows:
        w.writerow([_fmt(v) for v in r])
        n += 1
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return n


def node_rows(solution: DiscreteSolution, barrier):
    lat = solution.lattice
    for i in range(lat.N + 1):
        t, x = lat.time(i), lat.states(i)
        for j in range(i + 1):
            z = solution.Z[i][j] if i < lat.N else None
            yield (i, j, t, x[j], solution.Y[i][j], z, solution.dK[i][j], barrier[i][j])


def path_rows(solution: DiscreteSolution, n_paths: int, seed: int):
    lat = solution.lattice
    for p, j in enumerate(sample_paths(lat, n_paths, seed)):
        K = solution.K_along(j)
        for i in range(lat.N + 1):
            x = (2 * j[i] - i) * lat.sqrt_dt
            z = solution.Z[i][j[i]] if i < lat.N else None
            yield (p, lat.time(i), x, solution.Y[i][j[i]], z, K[i])


def paths_path_for(out: Path) -> Path:
    return out.with_name(f"{out.stem}_paths{out.suffix or '.csv'}")


@dataclass
class RunRecord:
    command: str
    input_hash: str
    seed: int
    timings: dict = field(default_factory=dict)
    residuals: dict | None = None
    headline: dict = field(default_factory=dict)
    status: str = "ok"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o).__name__)


# ---------------------------------------------------------------- commands


def _load(path: str) -> ScenarioConfig:
    return load_config(path)


def _solve(cfg: ScenarioConfig, mode: str | None):
    sc = cfg.build()
    t0 = time.perf_counter()
    sol = solve_rbsde(sc, cfg.scheme(mode))
    return sc, sol, time.perf_counter() - t0


def _residuals_ok(sol: DiscreteSolution, cfg: ScenarioConfig) -> bool:
    tol = cfg.tolerances
    return sol.residual_report.ok(tol["identity"], tol["skorokhod"])


def cmd_solve(args) -> int:
    cfg = _load(args.scenario)
    sc, sol, dt = _solve(cfg, args.mode)
    rec = RunRecord("solve", cfg.hash(), args.seed, residuals=sol.residual_report.as_dict())
    rec.timings["solve_s"] = dt
    lat = sc.lattice
    ne = norm_estimates(sol, seed=args.seed)
    rec.headline = {
        "Y0": sol.y0,
        "E_KT": sum(expectation_at_root(lat, sol.dK[i]) for i in range(lat.N)),
        "E_sup_Y2": ne.E_sup_Y2,
        "E_sup_Y2_method": ne.sup_method,
        "E_int_Z2": ne.E_int_Z2,
        "E_KT2": ne.E_KT2,
    }
    if args.out:
        out = Path(args.out)
        t0 = time.perf_counter()
        rec.headline["rows"] = write_csv_atomic(out, ("i", "j", "t", "x", "Y", "Z", "dK", "L"), node_rows(sol, sc.barrier))
        pp = paths_path_for(out)
        write_csv_atomic(pp, ("path", "t", "x", "Y", "Z", "K"), path_rows(sol, int(cfg.output["n_paths"]), args.seed))
        rec.headline["paths_csv"] = str(pp)
        rec.timings["write_s"] = time.perf_counter() - t0
    ok = _residuals_ok(sol, cfg)
    rec.status = "ok" if ok else "residuals-above-tolerance"
    print(rec.to_json())
    return EXIT_OK if ok else EXIT_FAIL


def cmd_oracle_quadratic(args) -> int:
    cfg = _load(args.scenario)
    g = cfg.data["generator"]
    if g["name"] != "fquad" or g["params"]["A"] != 1.0 or g["params"]["c0"] != 0.0 or g["metadata"] or cfg.data["transforms"]:
        raise ConfigError("generator", "oracle-quadratic needs the builtin fquad with A=1, c0=0 and no transforms")
    sc = cfg.build()
    sc.check()
    lat = sc.lattice
    t0 = time.perf_counter()
    oracle = explicit_quadratic(lat, sc.terminal_values(), sc.barrier)
    t1 = time.perf_counter()
    sol = solve_rbsde(sc, cfg.scheme(args.mode))
    t2 = time.perf_counter()
    tol = cfg.tolerances["oracle_gap"] if args.tol is None else args.tol
    diff = abs(sol.y0 - oracle.y0)
    integ = check_integrability(lat, sc.terminal_values(), sc.barrier)
    rec = RunRecord("oracle-quadratic", cfg.hash(), args.seed, residuals=sol.residual_report.as_dict())
    rec.timings = {"oracle_s": t1 - t0, "solve_s": t2 - t1}
    rec.headline = {
        "Y0_oracle": oracle.y0,
        "Y0_solver": sol.y0,
        "difference": diff,
        "tolerance": tol,
        "E_exp2xi": integ.E_exp2xi,
        "log_E_exp2xi": integ.log_E_exp2xi,
        "exp2supL": integ.E_exp2supL_proxy,
    }
    ok = diff <= tol
    rec.status = "ok" if ok else "gap-above-tolerance"
    print(rec.to_json())
    return EXIT_OK if ok else EXIT_FAIL


def _hypotheses(text: str) -> tuple[str, ...]:
    hs = tuple(h.strip() for h in text.split(",") if h.strip())
    bad = [h for h in hs if h not in ("terminal", "generator", "barrier")]
    if bad:
        raise InputError(f"--hypotheses: unknown flag {bad[0]!r} (use terminal, generator, barrier)")
    return hs


def cmd_compare(args) -> int:
    hyp = _hypotheses(args.hypotheses)
    c1, c2 = _load(args.scenario1), _load(args.scenario2)
    s1, s2 = c1.build(), c2.build()
    if (s1.lattice.T, s1.lattice.N) != (s2.lattice.T, s2.lattice.N):
        raise InputError(f"scenarios use different lattices: (T={s1.lattice.T}, N={s1.lattice.N}) vs (T={s2.lattice.T}, N={s2.lattice.N})")
    problems = check_hypotheses(s1, s2).violations(hyp)
    if problems:
        for p in problems:
            print(f"hypothesis violated: {p}", file=sys.stderr)
        return EXIT_INPUT
    tol = c1.tolerances["comparison"] if args.tol is None else args.tol
    t0 = time.perf_counter()
    sol1 = solve_rbsde(s1, c1.scheme(args.mode))
    sol2 = solve_rbsde(s2, c2.scheme(args.mode))
    rep = check_comparison(sol1, sol2, hyp, tol)
    rec = RunRecord("compare", f"{c1.hash()}:{c2.hash()}", args.seed)
    rec.timings["solve_s"] = time.perf_counter() - t0
    rec.headline = {
        "regime": rep.regime,
        "y_ordered": rep.y_ordered,
        "k_ordered": rep.k_ordered,
        "dk_ordered": rep.dk_ordered,
        "worst_violation": rep.worst_violation,
        "worst_node": {k: list(v) for k, v in rep.worst_node.items()},
        "Y0": [sol1.y0, sol2.y0],
    }
    rec.status = "ok" if rep.passed else "comparison-violated"
    print(rec.to_json())
    return EXIT_OK if rep.passed else EXIT_FAIL


def _sweep_values(kind: str, text: str) -> list:
    try:
        if kind == "clip-mp":
            out = []
            for item in text.split(","):
                m, p = item.split(":")
                out.append((float(m), float(p)))
            return out
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise InputError(f"--values: cannot parse {text!r} for kind {kind} ({exc})") from exc


def cmd_sweep(args) -> int:
    if args.kind not in SWEEP_KINDS:
        raise InputError(f"--kind must be one of {', '.join(SWEEP_KINDS)}")
    values = _sweep_values(args.kind, args.values)
    cfg = _load(args.scenario)
    sc = cfg.build()
    tol = cfg.tolerances["sweep"] if args.tol is None else args.tol
    t0 = time.perf_counter()
    res = approximation_sweep(sc, args.kind, values, cfg.scheme(args.mode), tol)
    rec = RunRecord("sweep", cfg.hash(), args.seed)
    rec.timings["sweep_s"] = time.perf_counter() - t0
    rec.headline = {
        "kind": res.kind,
        "values": [list(v) if isinstance(v, tuple) else v for v in res.values],
        "Y0": res.y0,
        "diffs": res.diffs,
        "monotone": res.monotone,
        "stabilized": res.stabilized,
    }
    if args.kind == "truncation-C" and sc.generator.assumption_class == A2 and sc.barrier.max() <= 0:
        rec.headline["apriori_bound"] = apriori_bound(sc, opts=cfg.scheme(args.mode)).bound
    if args.out:
        rows = []
        for k, (v, y) in enumerate(zip(res.values, res.y0)):
            label = f"{v[0]:g}:{v[1]:g}" if isinstance(v, tuple) else v
            rows.append((label, y, res.diffs[k - 1] if k else None))
        write_csv_atomic(args.out, ("param", "Y0", "diff"), rows)
    rec.status = "ok" if res.ok else "property-failed"
    print(rec.to_json())
    return EXIT_OK if res.ok else EXIT_FAIL


def cmd_validate(args) -> int:
    cfg = _load(args.scenario)
    sc = cfg.build()
    results = validate_scenario(sc)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<28} worst={r.worst:.3g}  {r.detail}")
    print(f"hash {cfg.hash()}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for sampled paths and estimates (default 0)")
    common.add_argument("--tol", type=float, default=None, help="override the scenario file's tolerance")
    common.add_argument("--mode", choices=("implicit", "explicit"), default=None, help="y-evaluation of the scheme")

    p = argparse.ArgumentParser(prog="rbsde-lab", description="Reflected BSDEs on a binomial lattice.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve a scenario and export node and path CSVs")
    s.add_argument("scenario")
    s.add_argument("--out", help="node CSV path; sampled paths go to <stem>_paths.csv")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("oracle-quadratic", parents=[common], help="compare the solver with the explicit f=z^2 solution")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_oracle_quadratic)

    s = sub.add_parser("compare", parents=[common], help="check the comparison clauses for two ordered scenarios")
    s.add_argument("scenario1")
    s.add_argument("scenario2")
    s.add_argument(
        "--hypotheses",
        default="terminal,generator",
        help="comma list of ordered inputs: terminal, generator, barrier (default terminal,generator; "
        "without barrier the barriers must be equal)",
    )
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", parents=[common], help="approximation sweep over n, C or (m,p)")
    s.add_argument("scenario")
    s.add_argument("--kind", required=True, help=" | ".join(SWEEP_KINDS))
    s.add_argument("--values", required=True, help="comma list, ascending; clip-mp takes m:p pairs")
    s.add_argument("--out", help="CSV of param, Y0, diff")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("validate", parents=[common], help="run the assumption probes")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_validate)
    return p


def _setup_logging() -> None:
    level = os.environ.get("RBSDE_LOG", "WARNING").upper()
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors and 0 for --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (RBSDEError, ValueError) as exc:
        # scenario-level validation (L_T > xi, wrong class, bad parameters)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # keep the exit-code contract even on bugs
        log.exception("unexpected failure")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
