"""Command-line interface.

Exit codes: 0 success, 1 usage or input error, 2 infeasible or failed
check, 3 indeterminate solver outcome.  Set ``FUZZY_HINF_LOG`` (e.g.
``INFO``) for progress logging on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .model import EXAMPLE1_PATH, ModelError, TsDelayModel, model_from_dict
from .sdp import canonicalize
from .sdpa import export_sdpa
from .synthesis import (
    BracketError,
    IllConditionedError,
    build_problem,
    gamma_min,
    load_filter,
    synthesize,
    _settings,
)

log = logging.getLogger("fuzzy_hinf")

EXIT_OK, EXIT_ERROR, EXIT_FAILED, EXIT_INDETERMINATE = 0, 1, 2, 3
BUILTIN_MODELS = {"builtin:example1": EXAMPLE1_PATH}


class CliError(Exception):
    """Usage or input problem; reported on stderr with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse uses 2, which is reserved here
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Files and manifests
# ---------------------------------------------------------------------------


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def atomic_write(path: str | Path, data: str | bytes) -> str:
    """Write via a temporary file in the same directory and rename; returns the digest."""
    path = Path(path)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return sha256_bytes(raw)


@dataclass
class RunManifest:
    command: str
    parameters: dict[str, Any]
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    version: str = __version__
    wall_time: float = 0.0
    exit_code: int = 0

    def write(self, path: str | Path) -> None:
        atomic_write(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _read_input(path: str, manifest: RunManifest | None) -> bytes:
    real = BUILTIN_MODELS.get(path, path)
    try:
        raw = Path(real).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}") from None
    if manifest is not None:
        manifest.inputs[path] = sha256_bytes(raw)
    return raw


def _load_model(path: str, manifest: RunManifest | None) -> TsDelayModel:
    raw = _read_input(path, manifest)
    try:
        return model_from_dict(json.loads(raw))
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: not valid JSON ({exc})") from None
    except ModelError as exc:
        raise CliError(f"{path}: {exc}") from None


def _floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _delay_args(model: TsDelayModel, args) -> tuple[float, float]:
    h = args.h if args.h is not None else model.delay.h
    rho = args.rho if args.rho is not None else model.delay.rho
    return h, rho


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args, manifest: RunManifest) -> int:
    model = _load_model(args.model, manifest)
    h, rho = _delay_args(model, args)
    try:
        res = synthesize(
            model, h=h, rho=rho, omega=args.omega, gamma=args.gamma, theorem=args.theorem,
            delay_rate_mode=args.delay_rate_term,
        )
    except IllConditionedError as exc:
        print(f"synthesis: {exc}", file=sys.stderr)
        return EXIT_INDETERMINATE
    if res.status != "feasible":
        rep = res.report
        print(f"{res.status} at gamma={args.gamma:g} (phase-I t={rep.t:.3g}, {rep.message})")
        return EXIT_INDETERMINATE if res.status == "indeterminate" else EXIT_FAILED
    manifest.outputs[args.out] = atomic_write(args.out, json.dumps(res.to_dict(), indent=2) + "\n")
    print(f"feasible at gamma={args.gamma:g}; filter written to {args.out}")
    return EXIT_OK


def _format_table(omegas, hs, table) -> str:
    head = "omega \\ h " + " ".join(f"{h:>8g}" for h in hs)
    rows = [head]
    for om in omegas:
        cells = []
        for h in hs:
            g = table[(om, h)]
            cells.append(f"{g:8.4f}" if g is not None else f"{'-':>8}")
        rows.append(f"{om:>9g} " + " ".join(cells))
    return "\n".join(rows)


def cmd_gamma_min(args, manifest: RunManifest) -> int:
    model = _load_model(args.model, manifest)
    hs = args.h if args.h is not None else [model.delay.h]
    rho = args.rho if args.rho is not None else model.delay.rho
    table, cells, code = {}, [], EXIT_OK
    for om in args.omega:
        for h in hs:
            try:
                g, res, search = gamma_min(
                    model, h=h, rho=rho, omega=om, theorem=args.theorem, tol=args.tol,
                    bracket=tuple(args.bracket), delay_rate_mode=args.delay_rate_term,
                )
            except BracketError as exc:
                log.warning("omega=%g h=%g: %s", om, h, exc)
                table[(om, h)] = None
                cells.append({"omega": om, "h": h, "gamma": None, "error": str(exc),
                              "search": exc.search_log.to_dict()})
                code = EXIT_FAILED
                continue
            table[(om, h)] = g
            cell = {"omega": om, "h": h, "gamma": g, "search": search.to_dict()}
            if search.indeterminate:
                cell["indeterminate_steps"] = search.indeterminate
            if args.out_dir:
                path = Path(args.out_dir) / f"filter_w{om:g}_h{h:g}.json"
                manifest.outputs[str(path)] = atomic_write(path, json.dumps(res.to_dict(), indent=2) + "\n")
                cell["filter"] = str(path)
            cells.append(cell)
    text = _format_table(args.omega, hs, table)
    print(text)
    if args.table:
        manifest.outputs[args.table] = atomic_write(args.table, text + "\n")
    if args.log:
        body = {"theorem": args.theorem, "rho": rho, "delay_rate_term": args.delay_rate_term,
                "tol": args.tol, "cells": cells}
        manifest.outputs[args.log] = atomic_write(args.log, json.dumps(body, indent=2) + "\n")
    return code


def _initial_history(spec: str, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if spec == "zero":
        return np.zeros(n), np.zeros(n)
    if spec == "random":
        v = np.random.default_rng(seed).standard_normal(2 * n)
        v /= np.linalg.norm(v)
        return v[:n], v[n:]
    vals = np.asarray(_floats(spec))
    if vals.size not in (n, 2 * n):
        raise CliError(f"--phi needs {n} or {2 * n} values, got {vals.size}")
    return vals[:n], (vals[n:] if vals.size == 2 * n else np.zeros(n))


def cmd_simulate(args, manifest: RunManifest) -> int:
    from .simulation import (
        Disturbance, SimConfig, l2_gain_estimate, make_delay_constant, make_delay_sine,
        simulate_filtering,
    )

    model = _load_model(args.model, manifest)
    _read_input(args.filter, manifest)
    try:
        res = load_filter(args.filter)
    except (ModelError, json.JSONDecodeError, ValueError) as exc:
        raise CliError(f"{args.filter}: {exc}") from None
    st = res.settings
    if args.delay == "sine":
        delay = make_delay_sine(st.h, st.rho, args.margin)
    else:
        delay = make_delay_constant(args.delay_value if args.delay_value is not None else 0.5 * st.h, st.h)
    phi, xh0 = _initial_history(args.phi, model.n, args.seed)
    params = {"seed": args.seed} if args.disturbance == "seeded_noise" else {}
    cfg = SimConfig(args.t_final, delay, phi=phi, xh0=xh0,
                    disturbance=Disturbance(args.disturbance, params), dt=args.dt)
    try:
        sim = simulate_filtering(model, res.filter, cfg)
    except (ValueError, ModelError) as exc:
        raise CliError(str(exc)) from None
    summary = sim.summary()
    summary["certified_gamma"] = res.gamma
    summary["config"] = cfg.to_dict()
    if args.gain:
        try:
            summary["l2_gain_estimate"] = l2_gain_estimate(sim)
        except ValueError as exc:
            raise CliError(str(exc)) from None
        summary["gain_within_certificate"] = summary["l2_gain_estimate"] <= res.gamma
    if args.csv:
        tmp = Path(args.csv).with_name(f".{Path(args.csv).name}.tmp")
        sim.to_csv(tmp)
        manifest.outputs[args.csv] = atomic_write(args.csv, tmp.read_bytes())
        tmp.unlink()
    text = json.dumps(summary, indent=2) + "\n"
    if args.summary:
        manifest.outputs[args.summary] = atomic_write(args.summary, text)
    sys.stdout.write(text)
    if sim.status != "ok":
        return EXIT_FAILED
    return EXIT_OK


def cmd_verify(args, manifest: RunManifest) -> int:
    from .verification import corrupted_lambda_coeffs, run_inequality_trials, run_lambda_trials

    mc = run_inequality_trials(args.trials, args.seed)
    lam = run_lambda_trials(
        args.lambda_trials, args.seed, corrupted_lambda_coeffs() if args.corrupt_lambda else None
    )
    ok = mc.passed and lam.passed
    print(
        f"inequality: {mc.trials} trials, min margin {mc.min_margin:.3e}"
        f" ({'pass' if mc.passed else 'FAIL'}); "
        f"lambda: {lam.trials} trials, max diff {lam.max_diff:.3e} ({'pass' if lam.passed else 'FAIL'})"
    )
    if not mc.passed:
        print(f"failing inequality trials (seed {mc.seed}): {mc.failures[:20]}", file=sys.stderr)
    if args.report:
        body = {"inequality": mc.to_dict(), "lambda": lam.to_dict(), "passed": ok}
        manifest.outputs[args.report] = atomic_write(args.report, json.dumps(body, indent=2) + "\n")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_export_sdpa(args, manifest: RunManifest) -> int:
    model = _load_model(args.model, manifest)
    h, rho = _delay_args(model, args)
    settings = _settings(model, h, rho, args.omega, args.theorem, None, args.delay_rate_term, "full", 1e-6)
    prob = canonicalize(build_problem(model, args.gamma, settings))
    manifest.outputs[args.out] = atomic_write(args.out, export_sdpa(prob))
    print(f"wrote {args.out}: {prob.d} variables, {len(prob.blocks)} blocks")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_problem_flags(p: argparse.ArgumentParser, gamma: bool = True) -> None:
    p.add_argument("--model", required=True, help="model JSON file or builtin:example1")
    p.add_argument("--h", type=float, help="delay bound (default: model file)")
    p.add_argument("--rho", type=float, help="delay-rate bound (default: model file)")
    p.add_argument("--omega", type=float, default=2.0, help="scalar tuning parameter")
    if gamma:
        p.add_argument("--gamma", type=float, required=True, help="attenuation level")
    p.add_argument("--theorem", type=int, choices=(1, 2), default=2)
    p.add_argument("--delay-rate-term", choices=("plain", "rho"), default="rho",
                   help="weight on the delayed-state block: -Y (plain) or -(1-rho)Y (rho)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fuzzy-hinf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--manifest", help="run manifest path (default: <primary output>.manifest.json)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="synthesize a filter at a fixed gamma")
    _add_problem_flags(p)
    p.add_argument("--out", default="filter.json")
    p.set_defaults(func=cmd_synth, primary="out")

    p = sub.add_parser("gamma-min", help="bisect for the minimum gamma, optionally over a grid")
    p.add_argument("--model", required=True)
    p.add_argument("--h", type=_floats, help="comma-separated delay bounds")
    p.add_argument("--rho", type=float)
    p.add_argument("--omega", type=_floats, default=[2.0], help="comma-separated omega values")
    p.add_argument("--theorem", type=int, choices=(1, 2), default=2)
    p.add_argument("--delay-rate-term", choices=("plain", "rho"), default="rho")
    p.add_argument("--tol", type=float, default=5e-3)
    p.add_argument("--bracket", type=_floats, default=[1e-3, 10.0], help="lo,hi")
    p.add_argument("--out-dir", help="directory for per-cell filter files")
    p.add_argument("--table", help="write the gamma table here")
    p.add_argument("--log", help="write the bisection log (JSON) here")
    p.set_defaults(func=cmd_gamma_min, primary="table")

    p = sub.add_parser("simulate", help="simulate plant and filter, report gain and stability")
    p.add_argument("--model", required=True)
    p.add_argument("--filter", required=True)
    p.add_argument("--t-final", type=float, default=30.0)
    p.add_argument("--dt", type=float)
    p.add_argument("--delay", choices=("sine", "constant"), default="sine")
    p.add_argument("--delay-value", type=float, help="constant delay value (default h/2)")
    p.add_argument("--margin", type=float, default=0.01, help="gap below h for the sine delay")
    p.add_argument("--disturbance", choices=("zero", "pulse", "decaying_sine", "seeded_noise"),
                   default="zero")
    p.add_argument("--phi", default="zero", help="zero, random, or comma-separated values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gain", action="store_true", help="report the empirical L2 gain")
    p.add_argument("--csv", help="trajectory CSV path")
    p.add_argument("--summary", help="JSON summary path")
    p.set_defaults(func=cmd_simulate, primary="summary")

    p = sub.add_parser("verify", help="Monte-Carlo inequality and Lambda identity checks")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--lambda-trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--corrupt-lambda", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify, primary="report")

    p = sub.add_parser("export-sdpa", help="write the assembled problem in SDPA sparse format")
    _add_problem_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_sdpa, primary="out")
    return parser


def _configure_logging() -> None:
    level = os.environ.get("FUZZY_HINF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors, --help and --version
        return int(exc.code or 0)
    params = {k: v for k, v in vars(args).items() if k not in ("func", "primary", "manifest")}
    log.debug("fuzzy-hinf %s %s", __version__, params)
    manifest = RunManifest(args.command, params)
    t0 = time.perf_counter()
    try:
        code = args.func(args, manifest)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_ERROR
    except (ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_ERROR
    manifest.wall_time = time.perf_counter() - t0
    manifest.exit_code = code
    target = args.manifest
    primary = getattr(args, args.primary, None)
    if target is None and primary:
        target = f"{primary}.manifest.json"
    if target and (manifest.outputs or code != EXIT_ERROR):
        manifest.write(target)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
