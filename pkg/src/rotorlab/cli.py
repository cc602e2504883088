"""Command-line driver.

Every command reads a flat ``key = value`` run config (``--config FILE``)
and then applies command-line overrides.  ``rotorlab --help`` lists the
commands.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import warnings
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .engine import (AggState, FixedOrder, HighestLabel, RandomSite, RotorMover, aggregate,
                     df_relax, idla_sites, read_snapshot, save_snapshot)
from .exittime import (ExitSolveError, ball_exit_asymptotic, brute_force_phi, exit_identity_terms,
                       gradient_sum, max_exit, routing_error, solve_exit)
from .io import CsvReport, render_order, write_pgm
from .lattice import LatticeError, Region, ball_points, lattice_ball, origin, unit_ball_volume
from .montecarlo import estimate_orthant_survival, lemma_factor
from .rotors import CyclicPolicy, InsufficientStack, PolicyError, RotorState, make_policy
from .shape import quadratic_weight, shape_report, verify_weight_inequality, weight_identity_defect
from .symmetry import BudgetExceeded, from_rle, rle

COMMANDS = ("aggregate", "idla", "verify", "exit", "bruteforce-iso", "orthant", "shape-curve")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = "aggregate"
    d: int = 2
    n: int = 1000
    checkpoints: str = "auto"
    policy: str = "cyclic"
    order: str = ""
    offset: str = "0"
    rule: str = ""
    north_prefix: int = 0
    seed: int = 0
    tol: float = 1e-10
    lebesgue_tol: float = 1e-6
    trials: int = 100_000
    k: int = 1
    r: int = 9
    ball: bool = False
    region: str = ""
    exhaustive: bool = False
    csv: str = ""
    render: str = ""
    bands: int = 0
    snapshot: str = ""
    snapshot_every: int = 0
    resume: str = ""
    inject_fault: str = ""

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def update(self, values: dict) -> "RunConfig":
        types = {f.name: f.type for f in fields(self)}
        out = dataclasses.replace(self)
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(out, key, _coerce(key, types[key], raw))
        return out

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = val
        return cls().update(values)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {_render(v)}")
        return "\n".join(lines) + "\n"

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not 1 <= self.d <= 4:
            raise ConfigError("d must be in 1..4")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")
        if self.inject_fault not in ("", "skip-increment"):
            raise ConfigError(f"unknown fault {self.inject_fault!r}")

    def make_policy(self):
        offset: int | str = int(self.offset) if _is_int(self.offset) else self.offset
        return make_policy(self.policy, self.d, self.order or None, offset,
                           self.rule or None, self.north_prefix)


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False


def _coerce(key: str, typ, raw):
    if not isinstance(raw, str):
        return raw
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return raw


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- helpers --------------------------------------------------------------------

def log_checkpoints(n: int, start: int = 100, per_decade: int = 2) -> list[int]:
    """round(10^(j/per_decade)) for every value in [start, n], then n itself."""
    out = []
    j = math.ceil(per_decade * math.log10(start) - 1e-9)
    while True:
        c = int(round(10 ** (j / per_decade)))
        if c > n:
            break
        if c >= start and (not out or c != out[-1]):
            out.append(c)
        j += 1
    if not out or out[-1] != n:
        out.append(n)
    return out


def parse_checkpoints(spec: str, n: int) -> list[int]:
    if spec in ("", "auto"):
        return log_checkpoints(n)
    pts = sorted({int(float(s)) for s in spec.split(",") if s.strip()})
    pts = [p for p in pts if 1 <= p <= n]
    if not pts or pts[-1] != n:
        pts.append(n)
    return pts


def format_region(sites) -> str:
    parts = []
    for x in np.asarray(sites).tolist():
        parts.append("o" if not any(x) else "(" + ",".join(map(str, x)) + ")")
    return "{" + ",".join(parts) + "}"


def _out(msg: str = "") -> None:
    print(msg, flush=True)


# -- commands -------------------------------------------------------------------

def cmd_aggregate(cfg: RunConfig, csv_default_stdout: bool = False) -> int:
    policy = cfg.make_policy()
    state: AggState | None = None
    if cfg.resume:
        state = read_snapshot(cfg.resume)
        if state.policy is None or state.policy.to_json() != policy.to_json():
            # continue with the policy stored in the snapshot
            policy = state.policy
    start = 0 if state is None else state.particles_placed
    if cfg.n < start:
        raise ConfigError(f"snapshot already holds {start} particles, more than n={cfg.n}")
    checkpoints = [c for c in parse_checkpoints(cfg.checkpoints, cfg.n) if c > start]
    stops = set(checkpoints)
    if cfg.snapshot and cfg.snapshot_every:
        stops.update(range(cfg.snapshot_every * (start // cfg.snapshot_every + 1), cfg.n + 1, cfg.snapshot_every))
    stops.add(cfg.n)
    stops = sorted(s for s in stops if s > start)

    csv_path = cfg.csv or None
    report = None
    if csv_path is not None or csv_default_stdout:
        report = CsvReport(csv_path, "shape-curve", append=bool(cfg.resume),
                           stream=sys.stdout if csv_path is None else None)
    fault = cfg.inject_fault or None
    t0 = time.perf_counter()
    try:
        for stop in stops:
            state = aggregate(stop, policy, resume=state, fault=fault)
            if report is not None and stop in checkpoints:
                rep = shape_report(state.A, stop, state.total_steps, cfg.lebesgue_tol)
                report.row(rep.as_row())
            if cfg.snapshot and (stop == cfg.n or (cfg.snapshot_every and stop % cfg.snapshot_every == 0)):
                save_snapshot(state, cfg.snapshot)
    finally:
        if report is not None:
            report.close()
    elapsed = time.perf_counter() - t0
    assert state is not None

    if cfg.render:
        if cfg.d != 2:
            raise ConfigError("renders need d = 2")
        write_pgm(cfg.render, render_order(state.sites, cfg.bands))

    n = state.particles_placed
    log = sys.stderr if report is not None and csv_path is None else sys.stdout
    if n <= 64:
        print(f"A_{n} = {format_region(state.sites)}", file=log)
    defect = weight_identity_defect(state) if fault is None else None
    slack = verify_weight_inequality(state)
    print(f"n={n} d={state.d} policy={policy.to_json()} T_n={state.total_steps} "
          f"D={state.discrepancy():g} weight_slack={slack:.6g} time={elapsed:.2f}s", file=log)
    if cfg.render:
        print(f"render written to {cfg.render}", file=log)
    if defect not in (None, 0) or slack < 0:
        print(f"FAILED: weight check (defect={defect}, slack={slack})", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_shape_curve(cfg: RunConfig) -> int:
    return cmd_aggregate(cfg, csv_default_stdout=True)


def cmd_idla(cfg: RunConfig) -> int:
    sites, steps = idla_sites(cfg.n, cfg.seed, cfg.d)
    A = Region.from_array(sites)
    rep = shape_report(A, cfg.n, steps, cfg.lebesgue_tol)
    if cfg.csv:
        with CsvReport(cfg.csv, "shape-curve") as out:
            out.row(rep.as_row())
    if cfg.render:
        if cfg.d != 2:
            raise ConfigError("renders need d = 2")
        write_pgm(cfg.render, render_order(sites, cfg.bands))
    if cfg.n <= 64:
        _out(f"A_{cfg.n} = {format_region(sites)}")
    _out(f"n={cfg.n} d={cfg.d} seed={cfg.seed} steps={steps} sym_diff={rep.sym_diff} "
         f"lebesgue_error={rep.lebesgue_error:.6g}")
    return EXIT_OK


def cmd_exit(cfg: RunConfig) -> int:
    if cfg.region:
        A = from_rle(cfg.region, cfg.d)
        label = cfg.region
    elif cfg.ball:
        A = lattice_ball(cfg.n, cfg.d)
        label = f"B_{cfg.n}"
    else:
        raise ConfigError("exit needs --ball or --region")
    field = solve_exit(A, cfg.tol)
    mx = max_exit(field)
    centre = field(origin(cfg.d)) if origin(cfg.d) in A else float("nan")
    asym = ball_exit_asymptotic(len(A), cfg.d)
    if cfg.csv:
        with CsvReport(cfg.csv, "exit") as out:
            out.row([cfg.d, cfg.n if cfg.ball else len(A), len(A), centre, mx, asym,
                     field.residual, field.iterations])
    ref = "n/pi" if cfg.d == 2 else f"(n/omega_{cfg.d})^(2/{cfg.d})"
    _out(f"region={label} sites={len(A)} e_o={centre:.10g} max_e={mx:.10g}")
    if math.isnan(centre):
        # run-length codes are anchored at the bounding-box corner
        _out("origin is not in the region; no comparison with the ball")
    else:
        _out(f"{ref}={asym:.10g} ratio={centre / asym:.6f} "
             f"(e_o-{ref})/sqrt(n)={(centre - asym) / math.sqrt(len(A)):.6f}")
    _out(f"residual={field.residual:.3e} sweeps={field.iterations}")
    return EXIT_OK


def cmd_bruteforce_iso(cfg: RunConfig) -> int:
    rep = brute_force_phi(cfg.n, cfg.d, min(cfg.tol, 1e-11))
    if cfg.csv:
        with CsvReport(cfg.csv, "iso") as out:
            out.row(rep.csv_row())
    _out(f"{rep.shapes} shapes solved (d={cfg.d}, n={cfg.n})")
    _out(f"max_e={rep.max_e:.12g} e_o(B_n)={rep.e_ball:.12g} phi_hat={rep.phi_hat:.12g}")
    _out(f"argmax={rle(rep.argmax)}")
    if cfg.csv:
        _out(f"report written to {cfg.csv}")
    return EXIT_OK


def cmd_orthant(cfg: RunConfig) -> int:
    k, r, d = cfg.k, cfg.r, cfg.d
    p = estimate_orthant_survival(k, r, d, cfg.trials, cfg.seed, cfg.exhaustive)
    rows = [("p", f"d={d};k={k};r={r}", p)]
    _out(f"p({k},{r}) = {p.mean:.6f} +- {p.stderr:.6f}  (d={d}, trials={p.trials}, seed={p.seed})")
    status = EXIT_OK
    if r >= 9 * k:
        q = estimate_orthant_survival(3 * k, r, d, cfg.trials, cfg.seed, cfg.exhaustive)
        rows.append(("p", f"d={d};k={3 * k};r={r}", q))
        c = lemma_factor(d)
        sigma = math.hypot(p.stderr, c * q.stderr)
        rhs = c * q.mean + 3 * sigma
        ok = p.mean <= rhs
        _out(f"p({3 * k},{r}) = {q.mean:.6f} +- {q.stderr:.6f}")
        _out(f"p({k},{r}) = {p.mean:.6f} <= {c:.6f} * p({3 * k},{r}) + 3 sigma = {rhs:.6f} : "
             f"{'PASS' if ok else 'FAIL'}")
        status = EXIT_OK if ok else EXIT_CHECK
    else:
        _out(f"contraction check skipped: needs r >= 9k (r={r}, k={k})")
    if cfg.csv:
        with CsvReport(cfg.csv, "mc") as out:
            for name, params, est in rows:
                out.row(["orthant-escape", params, est.mean, est.stderr, est.trials, est.seed])
    return status


# -- verification suite ---------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    value: float | None
    detail: str

    def json(self) -> str:
        return json.dumps({"check": self.name, "pass": self.passed, "value": self.value,
                           "detail": self.detail})


VERIFY_CHECKS = ("discrepancy", "weight-identity", "weight-inequality", "exit-identity",
                 "abelian", "ball-weight", "ball-exit", "interval-deviation")
ABELIAN_N = 200
BALL_REF_N = 10_000
INTERVAL_BOUND = 2


def _check_discrepancy(cfg, agg) -> Check:
    D = agg.discrepancy()
    cyclic = isinstance(agg.policy, CyclicPolicy)
    ok = D <= 1 if cyclic else math.isfinite(D)
    return Check("discrepancy", ok, D, "cyclic policy must have D <= 1" if cyclic else "audited D")


def _check_weight_identity(cfg, agg) -> Check:
    defect = weight_identity_defect(agg)
    return Check("weight-identity", defect == 0, defect,
                 "2d psi - 2d T_n - routing imbalance term, must be 0")


def _check_weight_inequality(cfg, agg) -> Check:
    slack = verify_weight_inequality(agg)
    return Check("weight-inequality", slack >= 0, slack,
                 "T_n + 8 sqrt(d) D sum|x| + 4 d D n - psi(A_n) >= 0")


def _check_exit_identity(cfg, agg) -> Check:
    field = solve_exit(agg.A, cfg.tol)
    T, ident = exit_identity_terms(agg, field)
    gap = T - ident
    err = routing_error(agg, field)
    D = agg.discrepancy()
    n = agg.particles_placed
    bound = 2 * D * gradient_sum(field)
    scale = max(abs(T), 1.0)
    exact = abs(gap - err) <= 1e-7 * scale
    ok = exact and abs(gap) <= bound * (1 + 1e-9) + 1e-7 * scale
    resid = abs(gap) / ((D if D > 0 else 1.0) * n ** (1 + 1 / agg.d))
    return Check("exit-identity", ok, resid,
                 f"|T_n - (n e_o - sum e_x)| = {abs(gap):.6g}, routing term {err:.6g}, "
                 f"gradient bound {bound:.6g}; value is the normalised residual")


def _check_abelian(cfg, agg) -> Check:
    m = min(cfg.n, ABELIAN_N)
    policy = agg.policy
    ref = aggregate(m, policy, fault=cfg.inject_fault or None)
    ref_set, ref_T = ref.A, ref.total_steps
    start = [origin(cfg.d)] * m
    results = []
    for sched in (FixedOrder([]), RandomSite(cfg.seed), HighestLabel()):
        A, steps = df_relax(start, sched, RotorMover(policy, RotorState()))
        results.append((type(sched).__name__, A == ref_set and steps == ref_T, steps))
    ok = all(r[1] for r in results)
    bad = [r[0] for r in results if not r[1]]
    return Check("abelian", ok, float(ref_T),
                 f"n={m}: " + ("all schedules match sequential aggregation" if ok
                               else f"schedules {bad} differ from sequential aggregation"))


def _check_ball_weight(cfg, agg) -> Check:
    d = cfg.d
    N = max(cfg.n, BALL_REF_N)
    psi = quadratic_weight(ball_points(N, d))
    ratio = psi * (d + 2) * unit_ball_volume(d) ** (2 / d) / (d * N ** (1 + 2 / d))
    return Check("ball-weight", 0.95 <= ratio <= 1.05, ratio,
                 f"psi(B_n) (d+2) omega_d^(2/d) / (d n^(1+2/d)) at n={N}")


def _check_ball_exit(cfg, agg) -> Check:
    d = cfg.d
    N = max(cfg.n, BALL_REF_N)
    e = solve_exit(lattice_ball(N, d), cfg.tol)(origin(d))
    ratio = e / ball_exit_asymptotic(N, d)
    return Check("ball-exit", 0.95 <= ratio <= 1.05, ratio,
                 f"e_o(B_n) / (n/omega_d)^(2/d) at n={N}")


def interval_deviation(sites: np.ndarray) -> np.ndarray:
    """For each prefix A_k of a 1-d aggregate, |max A_k + min A_k|: the
    distance of the occupied interval from a symmetric one."""
    x = np.asarray(sites).reshape(-1)
    return np.abs(np.maximum.accumulate(x) + np.minimum.accumulate(x))


def _check_interval(cfg, agg) -> Check:
    N = max(cfg.n, 1000)
    run = agg if agg.particles_placed >= N else aggregate(N, agg.policy, fault=cfg.inject_fault or None)
    dev = interval_deviation(run.sites[:N])
    per_decade = {f"<=1e{j}": int(dev[: 10 ** j].max()) for j in range(1, int(math.log10(N)) + 1)}
    worst = int(dev[9:].max()) if N >= 10 else int(dev.max())
    return Check("interval-deviation", worst <= INTERVAL_BOUND, worst,
                 f"max |max A_k + min A_k| over 10 <= k <= {N}: {per_decade}")


def cmd_verify(cfg: RunConfig) -> int:
    policy = cfg.make_policy()
    agg = aggregate(cfg.n, policy, fault=cfg.inject_fault or None)
    suite: list[Callable] = [_check_discrepancy, _check_weight_identity, _check_weight_inequality,
                             _check_exit_identity, _check_abelian, _check_ball_weight, _check_ball_exit]
    if cfg.d == 1:
        suite.append(_check_interval)
    failed = []
    for fn in suite:
        chk = fn(cfg, agg)
        _out(chk.json())
        if not chk.passed:
            failed.append(chk.name)
    if failed:
        print("FAILED: " + ", ".join(failed), file=sys.stderr)
        code = 0
        for name in failed:
            code |= 1 << VERIFY_CHECKS.index(name)
        return code & 0x7F or EXIT_CHECK
    return EXIT_OK


HANDLERS: dict[str, Callable[[RunConfig], int]] = {
    "aggregate": cmd_aggregate,
    "shape-curve": cmd_shape_curve,
    "idla": cmd_idla,
    "verify": cmd_verify,
    "exit": cmd_exit,
    "bruteforce-iso": cmd_bruteforce_iso,
    "orthant": cmd_orthant,
}


# -- argument parsing -----------------------------------------------------------

def _add_options(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="run config file (key = value lines)")
    p.add_argument("-d", type=int, default=S, help="lattice dimension (1..4)")
    p.add_argument("-n", type=float, default=S, help="number of particles or region size")
    p.add_argument("--checkpoints", default=S, help="'auto' (half-decade) or comma list")
    p.add_argument("--policy", default=S, choices=["cyclic", "nesw", "explicit", "scripted"])
    p.add_argument("--order", default=S, help="comma list of direction indices")
    p.add_argument("--offset", default=S, help="int, zero, parity or random:<seed>")
    p.add_argument("--rule", default=S, help="scripted rule name")
    p.add_argument("--north-prefix", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--tol", type=float, default=S, help="exit solver residual tolerance")
    p.add_argument("--lebesgue-tol", type=float, default=S)
    p.add_argument("--trials", type=float, default=S)
    p.add_argument("-k", type=int, default=S)
    p.add_argument("-r", type=int, default=S)
    p.add_argument("--ball", action="store_const", const=True, default=S)
    p.add_argument("--region", default=S, help="region as a run-length encoded string")
    p.add_argument("--exhaustive", action="store_const", const=True, default=S)
    p.add_argument("--csv", default=S, help="CSV report path")
    p.add_argument("--render", default=S, help="PGM render path (d=2)")
    p.add_argument("--bands", type=int, default=S, help="repeat the shading ramp this many times")
    p.add_argument("--snapshot", default=S, help="snapshot path")
    p.add_argument("--snapshot-every", type=int, default=S)
    p.add_argument("--resume", default=S, help="continue from this snapshot")
    p.add_argument("--inject-fault", default=S, choices=["skip-increment"])
    p.add_argument("--dump-config", action="store_true", default=S,
                   help="print the resolved config and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rotorlab", description="Rotor-router and IDLA toolkit.")
    sub = parser.add_subparsers(dest="command_name")
    for name in COMMANDS:
        _add_options(sub.add_parser(name))
    _add_options(parser)
    return parser


def resolve_config(argv: list[str] | None = None) -> tuple[RunConfig, bool]:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command_name", None)
    dump = bool(args.pop("dump_config", False))
    cfg = RunConfig()
    if "config" in args:
        cfg = RunConfig.from_text(Path(args.pop("config")).read_text(encoding="utf-8"))
    for key in ("n", "trials"):
        if key in args:
            v = args[key]
            if v != int(v):
                raise ConfigError(f"{key} must be an integer")
            args[key] = int(v)
    cfg = cfg.update(args)
    if command:
        cfg = cfg.update({"command": command})
    cfg.validate()
    return cfg, dump


def apply_thread_cap() -> None:
    raw = os.environ.get("ROTORLAB_THREADS")
    if not raw:
        return
    try:
        want = int(raw)
    except ValueError:
        raise ConfigError(f"ROTORLAB_THREADS must be an integer, got {raw!r}") from None
    if want < 1:
        raise ConfigError("ROTORLAB_THREADS must be >= 1")
    import numba
    with warnings.catch_warnings():
        # numba warns when the TBB threading layer is unavailable; the fallback is fine
        warnings.simplefilter("ignore", numba.NumbaWarning)
        numba.set_num_threads(min(want, numba.config.NUMBA_NUM_THREADS))


def main(argv: list[str] | None = None) -> int:
    try:
        cfg, dump = resolve_config(argv)
        apply_thread_cap()
        if dump:
            sys.stdout.write(cfg.to_text())
            return EXIT_OK
        return HANDLERS[cfg.command](cfg)
    except (ConfigError, PolicyError, LatticeError) as exc:
        print(f"rotorlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BudgetExceeded, InsufficientStack, ExitSolveError, OSError, ValueError) as exc:
        print(f"rotorlab: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
