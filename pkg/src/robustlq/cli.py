"""Command-line front end: ``python -m robustlq <command> --scenario FILE [options]``.

Exit status: 0 on success, 1 when a verification check or the solver fails,
2 when the arguments or the scenario file are invalid.  Errors are written to
stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .bsde_engine import linear_bsde_value, lq_cost_terms
from .riccati import RiccatiError, dump_riccati_csv, riccati_convergence
from .robust_lq import BisectionError, lambda_sweep, simulate_closed_loop, solve_robust
from .scenario_io import load_scenario
from .scenario_model import ScenarioError, validate_h6, validate_h7
from .sde_engine import CapacityError, SimulationError, dump_paths_csv, generate_paths, strong_convergence_order
from .smp_verify import check_sufficient_condition, verify_solution

SCHEMA_VERSION = 1
COMMANDS = ("validate", "solve", "verify", "sweep", "simulate", "convergence")
FORMATS = ("json", "csv", "both")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    scenario: str
    seed: int = 42
    paths: int = 50_000
    steps: Optional[int] = None
    refine: int = 4
    tol_gap: Optional[float] = None
    tol_psd: float = 1e-8
    out: str = "."
    format: str = "json"
    lambda_step: float = 0.01
    control: str = "solved"
    max_paths: int = 10
    directions: int = 3

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        """Strict construction: unknown keys and non-positive tolerances are rejected."""
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown configuration key(s): {sorted(unknown)}")
        cfg = cls(**data)
        cfg.check()
        return cfg

    def check(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.format not in FORMATS:
            raise UsageError(f"format must be one of {FORMATS}")
        if self.control not in ("solved", "zero"):
            raise UsageError("control must be 'solved' or 'zero'")
        for name in ("paths", "refine", "max_paths", "directions"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be positive")
        if self.paths < 2:
            raise UsageError("paths must be at least 2")
        if self.steps is not None and self.steps < 2:
            raise UsageError("steps must be at least 2")
        for name in ("tol_gap", "tol_psd", "lambda_step"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise UsageError(f"{name} must be positive")
        if not self.lambda_step <= 1:
            raise UsageError("lambda_step must not exceed 1")

    def flags(self) -> dict:
        out = asdict(self)
        del out["out"]
        return out


def config_digest(cfg: RunConfig, s) -> str:
    """SHA-256 of the scenario file, the loaded tables and the run flags."""
    h = hashlib.sha256()
    h.update(Path(cfg.scenario).read_bytes())
    for sc in s.scenarios:
        for name, tab in sc.tables().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(tab).tobytes())
    h.update(np.ascontiguousarray(s.F).tobytes())
    h.update(json.dumps(cfg.flags(), sort_keys=True).encode())
    return h.hexdigest()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robustlq", description="Robust two-scenario LQ recursive control.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--scenario", required=True)
        c.add_argument("--seed", type=int, default=42)
        c.add_argument("--paths", type=int, default=50_000)
        c.add_argument("--steps", type=int, default=None, help="regrid to this many steps (default: file value)")
        c.add_argument("--refine", type=int, default=4)
        c.add_argument("--tol-gap", type=float, default=None)
        c.add_argument("--tol-psd", type=float, default=1e-8, help="positivity margin delta for R")
        c.add_argument("--out", default=".")
        c.add_argument("--format", choices=FORMATS, default="json")
        if name == "sweep":
            c.add_argument("--lambda-step", type=float, default=0.01)
        if name == "simulate":
            c.add_argument("--control", choices=("solved", "zero"), default="solved")
            c.add_argument("--max-paths", type=int, default=10)
        if name == "verify":
            c.add_argument("--directions", type=int, default=3)
    return p


def _write_json(path: Path, doc: dict):
    path.write_text(json.dumps(doc, indent=2, allow_nan=True) + "\n")


def _header(cfg, digest):
    return {"schema_version": SCHEMA_VERSION, "command": cfg.command, "config_digest": digest}


def _load(cfg: RunConfig):
    s = load_scenario(cfg.scenario)
    if cfg.steps is not None and cfg.steps != s.grid.steps:
        s = s.regrid(cfg.steps)
    return s


def _validation(s, cfg):
    h6 = validate_h6(s)
    h7 = validate_h7(s, cfg.tol_psd)
    conv = check_sufficient_condition(s)
    return {"ok": h6.ok and h7.ok, "boundedness": h6.to_dict(), "positivity": h7.to_dict(),
            "convexity": conv.to_dict()}


def _solve(s, cfg, *, keep_paths=False):
    if s.K != 2:
        raise ScenarioError(f"the robust solve needs exactly two scenarios, got {s.K}")
    ens = generate_paths(s.grid, s.d, cfg.paths, cfg.seed)
    sol = solve_robust(s, ens, cfg.tol_gap, refine=cfg.refine, keep_paths=keep_paths)
    return sol, ens


def run(cfg: RunConfig) -> int:
    """Execute one command; returns the exit status."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    s = _load(cfg)
    digest = config_digest(cfg, s)
    head = _header(cfg, digest)
    want_json = cfg.format in ("json", "both")
    want_csv = cfg.format in ("csv", "both")
    report = _validation(s, cfg)
    if cfg.command == "validate":
        _write_json(out / "validation.json", {**head, **report})
        return 0 if report["ok"] else 2
    if not report["ok"]:
        fails = report["boundedness"]["failures"] + report["positivity"]["failures"]
        more = f" (+{len(fails) - 4} more, see the validate command)" if len(fails) > 4 else ""
        raise ScenarioError("scenario failed validation: " + "; ".join(fails[:4]) + more)

    if cfg.command == "solve":
        sol, _ = _solve(s, cfg)
        if want_json:
            _write_json(out / "solution.json", {**head, **sol.to_dict()})
        if want_csv:
            with open(out / "riccati_P.csv", "w") as fp, open(out / "riccati_K.csv", "w") as fk:
                dump_riccati_csv(sol.riccati, fp, fk)
        return 0

    if cfg.command == "verify":
        sol, ens = _solve(s, cfg, keep_paths=True)
        checks = verify_solution(s, sol, ens, directions=cfg.directions, seed=cfg.seed)
        ok = all(c.passed for c in checks)
        _write_json(out / "verification.json", {**head, "solution": sol.to_dict(), "pass": ok,
                                                "checks": [c.to_dict() for c in checks]})
        return 0 if ok else 1

    if cfg.command == "sweep":
        if s.K != 2:
            raise ScenarioError(f"the sweep needs exactly two scenarios, got {s.K}")
        count = int(round(1.0 / cfg.lambda_step))
        lams = np.linspace(0.0, 1.0, count + 1)
        ens = generate_paths(s.grid, s.d, cfg.paths, cfg.seed)
        table = lambda_sweep(s, ens, lams, refine=cfg.refine)
        if want_csv or cfg.format == "json":
            with open(out / "sweep.csv", "w", newline="") as fh:
                table.write_csv(fh)
        if want_json:
            _write_json(out / "sweep.json", {**head, "lambda_step": cfg.lambda_step,
                                             "argmin_gap": table.argmin_gap(),
                                             "sign_change": table.sign_change()})
        return 0

    if cfg.command == "simulate":
        ens = generate_paths(s.grid, s.d, cfg.paths, cfg.seed)
        if cfg.control == "solved" and s.K == 2:
            sol = solve_robust(s, ens, cfg.tol_gap, refine=cfg.refine)
            gain = sol.riccati.K
        else:
            gain = np.zeros((s.grid.steps, s.k, s.K * s.n))
        loop = simulate_closed_loop(s, gain, ens)
        costs = []
        for th in range(1, s.K + 1):
            sc = s.scenario(th)
            xi, c = lq_cost_terms(sc, loop.component(th), loop.u)
            v = linear_bsde_value(xi, c, sc.E, s.F, ens)
            costs.append({"theta": th, "y0": v.y0, "stderr": v.stderr})
        with open(out / "paths.csv", "w", newline="") as fh:
            from .sde_engine import StatePaths
            dump_paths_csv(StatePaths(loop.x, loop.u), fh, cfg.max_paths)
        if want_json:
            _write_json(out / "simulation.json", {**head, "control": cfg.control, "costs": costs,
                                                  "dumped_paths": min(cfg.max_paths, cfg.paths)})
        return 0

    if cfg.command == "convergence":
        lam = 0.5 if s.K == 2 else None
        ric = riccati_convergence(s, [50, 100, 200], lam, refine=1)
        euler = strong_convergence_order(s, [25, 50, 100, 200, 1600], M=min(cfg.paths, 2000), seed=cfg.seed)
        _write_json(out / "convergence.json", {**head, "riccati_rk4": ric.to_dict(), "euler_strong": euler.to_dict()})
        return 0
    raise UsageError(f"unknown command {cfg.command!r}")


def _error(kind: str, exc: BaseException, **extra) -> None:
    doc = {"error": kind, "message": str(exc), **extra}
    sys.stderr.write(json.dumps(doc) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    data = {k: v for k, v in vars(ns).items()}
    try:
        cfg = RunConfig.from_mapping(data)
        return run(cfg)
    except (UsageError, ScenarioError) as exc:
        _error("invalid_input", exc)
        return 2
    except (RiccatiError, BisectionError, SimulationError, CapacityError) as exc:
        extra = {}
        if isinstance(exc, RiccatiError) and exc.time is not None:
            extra["time"] = exc.time
        if isinstance(exc, BisectionError):
            extra["bracket"] = list(exc.bracket)
        _error("solver_failure", exc, **extra)
        return 1


if __name__ == "__main__":
    sys.exit(main())
