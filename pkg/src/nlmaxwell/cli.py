"""Command-line front end.

Usage::

    nlmaxwell eigs cube.ini
    nlmaxwell solve cube.ini --output runs/cube
    nlmaxwell reduce-solve cylinder.ini
    nlmaxwell oracle-check oracle.ini
    nlmaxwell sweep sweep.ini
    nlmaxwell check-model model.ini

Every command writes ``manifest.json`` (config hash, tool version, command,
wall time, per-stage records, outcome) plus CSV tables into the output
directory.  Exit codes: 0 ok, 2 configuration error, 3 solver failure,
4 certificate failure.  ``NLMAXWELL_THREADS`` sets the number of worker
threads used by ``sweep``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import ConfigError, NLMaxwellError, OracleInapplicableError, SolverError, SymmetryError
from .material import check_condition
from .mesh import BoxGrid, write_field

__all__ = ["main", "run", "EXIT_OK", "EXIT_CONFIG", "EXIT_SOLVER", "EXIT_CERTIFICATE", "THREADS_ENV"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CERTIFICATE = 4
THREADS_ENV = "NLMAXWELL_THREADS"
COMMANDS = ("eigs", "solve", "reduce-solve", "oracle-check", "sweep", "check-model")
MODEL_CHECKS = ("F2", "F4", "F6", "F9", "F12")

log = logging.getLogger("nlmaxwell")


class CertificateFailure(NLMaxwellError):
    """A computation finished but a required certificate is false."""


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(w) for k, w in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(w) for w in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


class _Collector:
    """Single writer for all artifacts of one command."""

    def __init__(self, cfg: RunConfig, command: str, outdir: Path):
        self.cfg = cfg
        self.command = command
        self.outdir = outdir
        self.stages: list[dict] = []
        self.files: list[str] = []
        self.t0 = time.perf_counter()
        outdir.mkdir(parents=True, exist_ok=True)

    def stage(self, name: str, **record) -> None:
        self.stages.append({"stage": name, **_jsonable(record)})

    def csv(self, name: str, header: list[str], rows) -> None:
        if not self.cfg.output.csv:
            return
        path = self.outdir / name
        with path.open("w", newline="") as fh:
            fh.write(f"# config_hash={self.cfg.config_hash}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
        self.files.append(name)

    def json(self, name: str, obj) -> None:
        payload = {"config_hash": self.cfg.config_hash, **_jsonable(obj)}
        (self.outdir / name).write_text(json.dumps(payload, indent=2, sort_keys=True))
        self.files.append(name)

    def field(self, name: str, grid: BoxGrid, u) -> None:
        write_field(self.outdir / name, grid, u, binary=self.cfg.output.binary)
        self.files.append(name)

    def manifest(self, outcome: str, code: int, message: str = "") -> dict:
        man = {
            "config_hash": self.cfg.config_hash,
            "config_source": self.cfg.source,
            "tool_version": __version__,
            "command": self.command,
            "rng_seed": self.cfg.solver.rng_seed,
            "wall_time": time.perf_counter() - self.t0,
            "stages": self.stages,
            "outcome": outcome,
            "exit_code": code,
            "message": message,
            "files": sorted(set(self.files)),
        }
        (self.outdir / "manifest.json").write_text(json.dumps(_jsonable(man), indent=2, sort_keys=True))
        return man


# -- commands -------------------------------------------------------------------------


def _grid_and_materials(cfg: RunConfig, V_override=None):
    cfg.require("domain", "materials")
    grid = cfg.domain.grid()
    return grid, cfg.materials.tensors(grid, V_override)


def cmd_eigs(cfg: RunConfig, col: _Collector, V_override=None) -> dict:
    from .spectrum import maxwell_eigs

    grid, mat = _grid_and_materials(cfg, V_override)
    s = cfg.solver
    split = maxwell_eigs(grid, mat, k=s.n_eigs, tol=s.eig_tol, kernel=s.kernel,
                         threshold=s.threshold, rng_seed=s.rng_seed)
    rows = split.table()
    col.csv("eigs.csv", ["index", "eigenvalue", "residual", "cluster"],
            [(r["index"], r["eigenvalue"], r["residual"], r["cluster"]) for r in rows])
    clusters = [{"eigenvalue": lam, "multiplicity": m} for lam, m in split.multiplicities()]
    col.stage("eigs", n=len(rows), max_residual=float(np.max(split.residuals)),
              clusters=clusters, index_below_threshold=int(split.dim_tilde))
    return {"eigenvalues": [r["eigenvalue"] for r in rows], "clusters": clusters}


def _model(cfg: RunConfig, p_override=None):
    cfg.require("nonlinearity")
    m = cfg.nonlinearity
    if p_override is not None:
        m = m.with_coefficients(p=float(p_override))
    return m


def cmd_solve(cfg: RunConfig, col: _Collector, V_override=None, p_override=None) -> dict:
    sym = cfg.solver.symmetry
    if sym == "S1":
        return cmd_reduce_solve(cfg, col, p_override=p_override)
    if sym == "S2":
        raise ConfigError(f"{cfg.source}: symmetry = S2 is not supported by solve; use none or S1")
    from .functional import EnergyContext
    from .nehari import ground_state
    from .symmetry import symmetry_report

    grid, mat = _grid_and_materials(cfg, V_override)
    model = _model(cfg, p_override)
    s = cfg.solver
    ctx = EnergyContext(grid, mat, model, threshold=s.threshold, eig_tol=s.eig_tol)
    split = ctx.split
    col.stage("spectral_split", dim_tilde=int(split.dim_tilde), lambda_plus_min=split.lambda_plus_min,
              max_residual=float(np.max(split.residuals)))
    rep = ground_state(ctx, starts=s.starts, tol=s.tol, rng_seed=s.rng_seed, fiber_tol=s.fiber_tol,
                       maxiter=s.maxiter, witness=s.witness)
    rows = []
    trace = []
    for i, r in enumerate(rep.results):
        rows.append((i, r.c_N, r.residual_norm, int(r.converged), r.t_u, r.iterations,
                     r.c_M if r.c_M is not None else math.nan))
        trace.extend((i, k, e) for k, e in enumerate(r.history))
    col.csv("energies.csv", ["start", "c_N", "residual_norm", "converged", "t_u", "iterations", "c_M"], rows)
    col.csv("energy_trace.csv", ["start", "iteration", "energy"], trace)
    col.stage("ground_state", attempts=rep.attempts, coverage=rep.coverage, failures=rep.failures,
              energies=[r.c_N for r in rep.results], residuals=[r.residual_norm for r in rep.results],
              converged=[r.converged for r in rep.results], message=rep.message)
    if rep.best is None:
        raise SolverError(f"no converged start: {rep.message}")
    best = rep.best
    col.field("field.edge", grid, best.u)
    if best.beta_curve is not None:
        col.csv("beta.csv", ["t", "beta"], zip(*best.beta_curve))
    col.stage("certificates", **best.certificates)
    try:
        rep_sym = symmetry_report(grid, best.u, ctx.M)
        col.json("symmetry.json", rep_sym)
    except SymmetryError as exc:
        log.info("symmetry report skipped: %s", exc)
    out = {"c_N": best.c_N, "residual_norm": best.residual_norm, "certificates": best.certificates}
    if not all(best.certificates.values()):
        bad = [k for k, v in best.certificates.items() if not v]
        raise CertificateFailure(f"certificates failed: {', '.join(bad)}", out)
    return out


def cmd_reduce_solve(cfg: RunConfig, col: _Collector, lam_override=None, p_override=None) -> dict:
    from .reduced import CylGrid, reduced_tau_solver

    cfg.require("reduced")
    rb = cfg.reduced
    model = _model(cfg, p_override)
    lam = rb.lam if lam_override is None else float(lam_override)
    cyl = CylGrid(rb.R, rb.L, rb.nr, rb.nz)
    s = cfg.solver
    sol = reduced_tau_solver(cyl, model, V=lam, mu_inv=rb.mu_inv, starts=s.starts, tol=s.tol,
                             rng_seed=s.rng_seed, fiber_tol=s.fiber_tol, maxiter=s.maxiter,
                             witness=s.witness)
    rep = sol.report
    col.stage("reduced_ground_state", **{"lambda": lam}, c_N=sol.c_N, residual_norm=sol.residual_norm,
              converged=sol.converged, energies=[r.c_N for r in rep.results], coverage=rep.coverage)
    if not sol.converged and rep.best is None:
        raise SolverError(f"reduced solver found no solution: {rep.message}")
    fld = sol.field
    col.csv("alpha_slice.csv", ["r", "x3", "alpha"],
            ((r, z, fld.alpha[i, j]) for i, r in enumerate(cyl.r) for j, z in enumerate(cyl.z)))
    if rep.best is not None and rep.best.beta_curve is not None:
        col.csv("beta.csv", ["t", "beta"], zip(*rep.best.beta_curve))
    col.stage("certificates", **sol.certificates)
    out = {"lambda": lam, "c_N": sol.c_N, "residual_norm": sol.residual_norm,
           "certificates": sol.certificates}
    if not sol.converged or not all(sol.certificates.values()):
        raise CertificateFailure("reduced solution failed its certificates", out)
    return out


def cmd_oracle_check(cfg: RunConfig, col: _Collector, p_override=None) -> dict:
    from .symmetry import radial_oracle, verify_radial

    cfg.require("oracle")
    ob = cfg.oracle
    p = ob.p if p_override is None else float(p_override)
    ext = cfg.domain.extents if cfg.domain is not None else (1.0, 1.0, 1.0)
    center = tuple(0.5 * e for e in ext)
    R = ob.exclude_radius if ob.exclude_radius is not None else 0.3 * min(ext)
    oracle = radial_oracle(ob.V, ob.Gamma, p, r_samples=np.linspace(0, max(ext), 201), center=center)
    rows = []
    for n in ob.resolutions:
        g = BoxGrid(ext, (n, n, n))
        rep = verify_radial(oracle, g, exclude_radius=R)
        rows.append((n, rep.h, rep.identity_residual, rep.curl_max, rep.curl_over_h2))
    orders = [math.log(rows[i][3] / rows[i + 1][3]) / math.log(rows[i][1] / rows[i + 1][1])
              for i in range(len(rows) - 1) if rows[i + 1][3] > 0]
    col.csv("oracle.csv", ["n", "h", "identity_residual", "curl_max", "curl_over_h2"], rows)
    ident = max(r[2] for r in rows)
    result = {"identity_residual": ident, "curl_orders": orders, "exclude_radius": R,
              "identity_ok": ident <= 1e-12, "curl_second_order": bool(orders and orders[-1] >= 1.8)}
    col.json("oracle.json", result)
    col.stage("oracle", **result)
    if not (result["identity_ok"] and (result["curl_second_order"] or len(rows) < 2)):
        raise CertificateFailure("radial oracle verification failed", result)
    return result


def cmd_check_model(cfg: RunConfig, col: _Collector, p_override=None) -> dict:
    model = _model(cfg, p_override)
    checks = list(MODEL_CHECKS)
    if model.kind.startswith("double_power"):
        checks.append("F14")
    reports = {}
    for c in checks:
        reports[c] = check_condition(model, c, rng_seed=cfg.solver.rng_seed).to_dict()
    col.json("check_model.json", {"kind": model.kind, "checks": reports})
    failed = [c for c, r in reports.items() if not r["passed"]]
    col.stage("check_model", kind=model.kind, passed={c: r["passed"] for c, r in reports.items()},
              failed=failed)
    out = {"failed": failed, "witnesses": {c: reports[c]["witness"] for c in failed}}
    if failed:
        raise CertificateFailure(f"conditions failed: {', '.join(failed)}", out)
    return out


_SWEEPABLE = {
    "solve": {"V", "p", "lambda"},
    "reduce-solve": {"lambda", "p"},
    "eigs": {"V", "lambda"},
}


def _sweep_point(cfg: RunConfig, outdir: Path, command: str, param: str, value: float):
    sub = replace(cfg, output=replace(cfg.output, directory=str(outdir)))
    col = _Collector(sub, command, outdir)
    kw = {}
    if command == "reduce-solve":
        kw = {"lam_override": value} if param in ("lambda", "V") else {"p_override": value}
        fn = cmd_reduce_solve
    elif command == "solve":
        kw = {"V_override": value} if param in ("lambda", "V") else {"p_override": value}
        fn = cmd_solve
    else:
        kw = {"V_override": value}
        fn = cmd_eigs
    try:
        res = fn(sub, col, **kw)
        code, msg = EXIT_OK, ""
    except CertificateFailure as exc:
        res, code, msg = (exc.args[1] if len(exc.args) > 1 else {}), EXIT_CERTIFICATE, exc.args[0]
    except SolverError as exc:
        res, code, msg = {}, EXIT_SOLVER, str(exc)
    col.manifest("ok" if code == 0 else "failed", code, msg)
    return value, code, res


def cmd_sweep(cfg: RunConfig, col: _Collector, threads: int = 1) -> dict:
    cfg.require("sweep")
    sw = cfg.sweep
    if sw.parameter not in _SWEEPABLE[sw.command]:
        raise ConfigError(f"{cfg.source}: parameter {sw.parameter} cannot be swept with {sw.command}")
    dirs = [col.outdir / f"point_{i:03d}" for i in range(len(sw.values))]
    args = [(cfg, d, sw.command, sw.parameter, v) for d, v in zip(dirs, sw.values)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda a: _sweep_point(*a), args))
    else:
        results = [_sweep_point(*a) for a in args]
    rows = []
    for (v, code, res), d in zip(results, dirs):
        if sw.command == "eigs":
            ev = res.get("eigenvalues", [])
            rows.append((v, code, ev[0] if ev else math.nan, math.nan, d.name))
        else:
            rows.append((v, code, res.get("c_N", math.nan), res.get("residual_norm", math.nan), d.name))
    col.csv("sweep.csv", [sw.parameter, "exit_code", "value", "residual_norm", "directory"], rows)
    col.stage("sweep", parameter=sw.parameter, command=sw.command, values=list(sw.values),
              exit_codes=[r[1] for r in results], threads=threads)
    codes = [r[1] for r in results]
    if any(c == EXIT_SOLVER for c in codes):
        raise SolverError("some sweep points failed")
    if any(c == EXIT_CERTIFICATE for c in codes):
        raise CertificateFailure("some sweep points failed their certificates", {})
    return {"points": len(results)}


# -- driver ---------------------------------------------------------------------------


def _threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get(THREADS_ENV, "").strip()
    if not env:
        return 1
    try:
        return max(1, int(env))
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV}={env!r} is not an integer") from exc


def run(command: str, config_path, output: str | None = None, seed: int | None = None,
        threads: int | None = None) -> tuple[int, dict | None]:
    """Execute one command; returns ``(exit_code, manifest)``.

    The manifest is ``None`` only when the configuration could not be read.
    """
    if command not in COMMANDS:
        log.error("unknown command %s", command)
        return EXIT_CONFIG, None
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg = replace(cfg, solver=replace(cfg.solver, rng_seed=int(seed)))
        nthreads = _threads(threads)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG, None
    outdir = Path(output or cfg.output.directory)
    if not outdir.is_absolute() and output is None:
        outdir = Path(config_path).resolve().parent / outdir
    col = _Collector(cfg, command, outdir)
    handlers = {
        "eigs": lambda: cmd_eigs(cfg, col),
        "solve": lambda: cmd_solve(cfg, col),
        "reduce-solve": lambda: cmd_reduce_solve(cfg, col),
        "oracle-check": lambda: cmd_oracle_check(cfg, col),
        "check-model": lambda: cmd_check_model(cfg, col),
        "sweep": lambda: cmd_sweep(cfg, col, nthreads),
    }
    try:
        handlers[command]()
        code, outcome, msg = EXIT_OK, "ok", ""
    except (ConfigError, OracleInapplicableError) as exc:
        code, outcome, msg = EXIT_CONFIG, "config_error", str(exc)
    except CertificateFailure as exc:
        code, outcome, msg = EXIT_CERTIFICATE, "certificate_failure", exc.args[0]
    except (SolverError, NLMaxwellError, ArithmeticError) as exc:
        code, outcome, msg = EXIT_SOLVER, "solver_failure", str(exc)
    if msg:
        log.error("%s", msg)
    return code, col.manifest(outcome, code, msg)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlmaxwell", description=__doc__.split("\n\n")[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config", help="INI configuration file")
    ap.add_argument("-o", "--output", help="output directory (overrides [output] directory)")
    ap.add_argument("--seed", type=int, help="override [solver] rng_seed")
    ap.add_argument("--threads", type=int, help=f"sweep worker threads (default ${THREADS_ENV} or 1)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    code, man = run(args.command, args.config, args.output, args.seed, args.threads)
    if man is not None:
        summary = {k: man[k] for k in ("command", "outcome", "exit_code", "wall_time", "config_hash")}
        print(json.dumps(summary, sort_keys=True))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
