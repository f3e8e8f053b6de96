"""Command-line driver: ``stokes-sem solve|sweep --config run.cfg``.

A config is a flat ``key = value`` file, for example::

    example = example1
    nu1 = 1
    nu2 = 0.1
    W = 2..8
    tol = 1e-12
    maxit = 20000
    variant = 0
    outdir = results
"""
from __future__ import annotations

import argparse
import importlib
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import NodalField
from .functional import LeastSquaresFunctional, ProblemSpec
from .postprocess import ErrorReport, compute_errors, convergence_table, make_conforming
from .problems import EXAMPLES, builtin_problem, polynomial_problem
from .solver import VARIANTS, SolveReport, build_preconditioner, pcg

log = logging.getLogger(__name__)

CSV_HEADER = "W,E_u_H1,E_p_L2,E_c_L2,iters,rel_residual,seconds"
WORKERS_ENV = "STOKES_SEM_WORKERS"
EXIT_OK, EXIT_NONCONVERGED, EXIT_USAGE = 0, 1, 2
EXAMPLE_IDS = EXAMPLES + ("polynomial", "custom")


class ConfigError(ValueError):
    pass


def _parse_ws(text: str) -> list[int]:
    out = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    example: str = "example1"
    nu1: float = 1.0
    nu2: float = 0.1
    W: list = field(default_factory=lambda: [2, 3, 4, 5, 6])
    tol: float = 1e-12
    maxit: int = 20000
    variant: int = 0
    outdir: str = "results"
    seed: int = 0
    timing: bool = True
    problem: str | None = None  # "module:callable" for example = custom

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.example not in EXAMPLE_IDS:
            raise ConfigError(f"unknown example {self.example!r}; choose from {', '.join(EXAMPLE_IDS)}")
        if self.example == "custom" and not self.problem:
            raise ConfigError("example = custom needs problem = module:callable")
        if not self.W:
            raise ConfigError("W list is empty")
        if any(w < 2 for w in self.W):
            raise ConfigError("every W must be at least 2")
        if any(b <= a for a, b in zip(self.W, self.W[1:])):
            raise ConfigError("W list must be strictly increasing")
        if not (self.nu1 > 0 and self.nu2 > 0):
            raise ConfigError("viscosities must be positive")
        if not 0 < self.tol < 1:
            raise ConfigError("tol must lie in (0, 1)")
        if self.maxit < 1:
            raise ConfigError("maxit must be positive")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        conv = {
            "example": str, "nu1": float, "nu2": float, "W": _parse_ws, "tol": float,
            "maxit": int, "variant": int, "outdir": str, "seed": int, "timing": _parse_bool,
            "problem": str,
        }
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in conv:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                kw[key] = conv[key](value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)

    def build_problem(self) -> ProblemSpec:
        if self.example == "polynomial":
            return polynomial_problem(self.nu1, self.nu2)
        if self.example == "custom":
            mod, _, name = self.problem.partition(":")
            try:
                factory = getattr(importlib.import_module(mod), name)
            except (ImportError, AttributeError) as exc:
                raise ConfigError(f"cannot load problem {self.problem!r}") from exc
            return factory(self.nu1, self.nu2)
        return builtin_problem(self.example, self.nu1, self.nu2)


@dataclass
class CaseResult:
    W: int
    errors: ErrorReport
    solve: SolveReport
    functional: float
    solution: np.ndarray | None = None


def solve_case(spec: ProblemSpec, W: int, tol: float = 1e-12, maxit: int = 20000,
               variant: int = 0, mesh=None, keep_solution: bool = False) -> CaseResult:
    """Assemble, solve, correct and measure one problem at one degree."""
    t0 = time.perf_counter()
    mesh = spec.build_mesh() if mesh is None else mesh
    F = LeastSquaresFunctional(mesh, spec, W)
    system = F.normal_system()
    precond = build_preconditioner(mesh, W, variant, spec)
    V, rep = pcg(system, precond, tol=tol, maxit=maxit)
    rep.W, rep.nu, rep.variant = W, (spec.nu1, spec.nu2), variant
    rep.functional = F.value(V)
    raw = NodalField(F.layout, V)
    errors = compute_errors(make_conforming(raw, mesh), spec, mesh, pinned=F.pin, raw=raw)
    rep.seconds = time.perf_counter() - t0
    log.info("W=%d iters=%d E_u=%.3e E_p=%.3e E_c=%.3e (pre-correction %.3e)",
             W, rep.iterations, errors.E_u, errors.E_p, errors.E_c, errors.E_c_raw)
    return CaseResult(W, errors, rep, rep.functional, V if keep_solution else None)


def _run_one(args) -> CaseResult:
    cfg, W = args
    return solve_case(cfg.build_problem(), W, cfg.tol, cfg.maxit, cfg.variant)


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get(WORKERS_ENV)
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", WORKERS_ENV, cap)
    return max(1, min(n, n_jobs))


def run_cases(cfg: RunConfig) -> list[CaseResult]:
    np.random.seed(cfg.seed)
    jobs = [(cfg, W) for W in cfg.W]
    n = worker_count(len(jobs))
    if n == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_run_one, jobs))


def _fmt(x: float) -> str:
    return f"{x:.6e}"


def csv_lines(results: list[CaseResult], timing: bool = True) -> list[str]:
    lines = [CSV_HEADER]
    for r in results:
        secs = f"{r.solve.seconds:.3f}" if timing else "0.000"
        lines.append(",".join([
            str(r.W), _fmt(r.errors.E_u), _fmt(r.errors.E_p), _fmt(r.errors.E_c),
            str(r.solve.iterations), _fmt(r.solve.rel_residual), secs,
        ]))
    return lines


def write_outputs(cfg: RunConfig, results: list[CaseResult], outdir: Path) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.example}_nu{cfg.nu1:g}_{cfg.nu2:g}_e{cfg.variant}"
    paths = {
        "csv": outdir / f"{stem}.csv",
        "plot": outdir / f"{stem}_plot.dat",
        "report": outdir / f"{stem}_report.txt",
    }
    paths["csv"].write_text("\n".join(csv_lines(results, cfg.timing)) + "\n")

    plot = ["# W log10_E_u log10_E_p"]
    for r in results:
        plot.append(f"{r.W} {math.log10(max(r.errors.E_u, 1e-300)):.6f} {math.log10(max(r.errors.E_p, 1e-300)):.6f}")
    paths["plot"].write_text("\n".join(plot) + "\n")

    report = [
        f"example = {cfg.example}",
        f"nu1 = {cfg.nu1:g}",
        f"nu2 = {cfg.nu2:g}",
        f"variant = {cfg.variant}",
        f"tol = {cfg.tol:g}",
        f"maxit = {cfg.maxit}",
        f"W = {','.join(str(w) for w in cfg.W)}",
        f"all_converged = {str(all(r.solve.converged for r in results)).lower()}",
    ]
    if len(results) >= 3:
        table = convergence_table([r.errors for r in results])
        for m, s in table.slopes.items():
            report.append(f"slope_log10_{m} = {s:.4f}")
        report.append(f"no_convergence = {str(table.no_convergence).lower()}")
    for r in results:
        report.append(
            f"[W={r.W}] converged = {str(r.solve.converged).lower()}; iters = {r.solve.iterations}; "
            f"true_residual = {r.solve.true_residual:.3e}; functional = {r.functional:.6e}; "
            f"E_c_uncorrected = {r.errors.E_c_raw:.6e}"
        )
    paths["report"].write_text("\n".join(report) + "\n")
    return paths


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stokes-sem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "solve at a single W"), ("sweep", "solve over the W list")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="flat key = value run file")
        p.add_argument("--outdir", help="override the config output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_file(args.config)
        if args.command == "solve" and len(cfg.W) != 1:
            raise ConfigError("solve needs exactly one W; use sweep for a list")
        cfg.build_problem()
    except ConfigError as exc:
        print(f"stokes-sem: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    results = run_cases(cfg)
    paths = write_outputs(cfg, results, Path(args.outdir or cfg.outdir))
    for line in csv_lines(results, cfg.timing):
        print(line)
    print(f"wrote {paths['csv']}", file=sys.stderr)
    return EXIT_OK if all(r.solve.converged for r in results) else EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
