"""Delay-differential simulation of the fuzzy plant with a fuzzy filter.

The coupled state ``zeta = (x, x_hat)`` is integrated with fixed-step RK4
(see :mod:`fuzzy_hinf.kernels`).  Both plant and filter use memberships
of the true premise variable.  Plant history before ``t = 0`` is the
constant ``phi``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .kernels import BACKEND, get_backend, pack_grades, pack_model
from .model import FuzzyFilter, ModelError, TsDelayModel, check_model

__all__ = [
    "DelayTrajectory",
    "Disturbance",
    "SimConfig",
    "SimResult",
    "LyapunovTrace",
    "make_delay_sine",
    "make_delay_constant",
    "simulate_filtering",
    "l2_gain_estimate",
    "lyapunov_monitor",
    "DISTURBANCE_KINDS",
]

DISTURBANCE_KINDS = ("zero", "pulse", "decaying_sine", "seeded_noise")


# ---------------------------------------------------------------------------
# Delay trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DelayTrajectory:
    """Admissible time-varying delay.

    ``sine`` is ``amp * (1 + sin(rho * t / amp))`` with ``amp = (h - margin) / 2``,
    so ``0 <= tau <= h - margin`` and ``|tau'| <= rho`` hold by construction.
    """

    kind: str
    params: Mapping[str, float]
    h: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.full_like(t, p["value"])
        amp, rho = p["amp"], p["rho"]
        return amp * (1.0 + np.sin(rho * t / amp))

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(t)
        amp, rho = self.params["amp"], self.params["rho"]
        return rho * np.cos(rho * t / amp)

    def bounds(self) -> tuple[float, float, float]:
        """Analytic ``(min tau, max tau, sup |tau'|)``."""
        p = self.params
        if self.kind == "constant":
            return p["value"], p["value"], 0.0
        if p["rho"] == 0:
            return p["amp"], p["amp"], 0.0
        return 0.0, 2 * p["amp"], p["rho"]

    def admissible(self, h: float, rho: float) -> bool:
        lo, hi, rate = self.bounds()
        return lo >= 0 and hi < h and rate <= rho

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "h": self.h}


def make_delay_sine(h: float, rho: float, margin: float) -> DelayTrajectory:
    """``tau(t) = (h - margin)/2 * (1 + sin(2 rho t / (h - margin)))``."""
    if not h > 0:
        raise ValueError("h must be positive")
    if not 0 < margin < h:
        raise ValueError(f"margin must lie in (0, h), got {margin!r} for h={h!r}")
    if not rho >= 0:
        raise ValueError("rho must be nonnegative")
    amp = 0.5 * (h - margin)
    return DelayTrajectory("sine", {"amp": amp, "rho": float(rho), "margin": float(margin)}, float(h))


def make_delay_constant(value: float, h: float) -> DelayTrajectory:
    if not 0 <= value < h:
        raise ValueError(f"constant delay must satisfy 0 <= tau < h, got {value!r}")
    return DelayTrajectory("constant", {"value": float(value)}, float(h))


# ---------------------------------------------------------------------------
# Disturbances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Disturbance:
    """Test disturbance ``w(t)``.

    zero
    pulse(t0, t1, level)
        ``level`` on ``[t0, t1)``, zero elsewhere
    decaying_sine(a, b)
        ``exp(-a t) sin(b t)``
    seeded_noise(seed, bandwidth)
        sum of 16 random-phase sinusoids below ``bandwidth`` rad/s; smooth
        and reproducible, not white noise
    """

    kind: str = "zero"
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in DISTURBANCE_KINDS:
            raise ValueError(f"unknown disturbance {self.kind!r}; choose from {DISTURBANCE_KINDS}")

    def evaluate(self, t, n_w: int = 1) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        p = self.params
        shape = t.shape + (n_w,)
        if self.kind == "zero":
            return np.zeros(shape)
        if self.kind == "pulse":
            on = (t >= p.get("t0", 0.0)) & (t < p.get("t1", 1.0))
            return np.broadcast_to((on * p.get("level", 1.0))[..., None], shape).copy()
        if self.kind == "decaying_sine":
            v = np.exp(-p.get("a", 0.1) * t) * np.sin(p.get("b", 1.0) * t)
            return np.broadcast_to(v[..., None], shape).copy()
        rng = np.random.default_rng(int(p.get("seed", 0)))
        bw = float(p.get("bandwidth", 2.0))
        out = np.zeros(shape)
        for c in range(n_w):
            freq = rng.uniform(0.05, 1.0, 16) * bw
            phase = rng.uniform(0, 2 * np.pi, 16)
            amp = rng.standard_normal(16) / 4.0
            out[..., c] = np.sum(amp * np.sin(np.multiply.outer(t, freq) + phase), axis=-1)
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}


# ---------------------------------------------------------------------------
# Configuration and results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    t_final: float
    delay: DelayTrajectory
    phi: Any = None
    xh0: Any = None
    disturbance: Disturbance = Disturbance()
    dt: float | None = None

    @property
    def step(self) -> float:
        return self.dt if self.dt is not None else self.delay.h / 100.0

    def problems(self) -> list[str]:
        out = []
        h, dt = self.delay.h, self.step
        if not dt > 0:
            out.append("dt must be positive")
        elif h > 0 and dt > h / 20 * (1 + 1e-12):
            out.append(f"dt={dt:g} exceeds h/20={h / 20:g}")
        if self.t_final < 10 * h:
            out.append(f"t_final={self.t_final:g} is shorter than 10*h={10 * h:g}")
        return out

    def to_dict(self) -> dict:
        return {
            "t_final": self.t_final,
            "dt": self.step,
            "delay": self.delay.to_dict(),
            "phi": None if self.phi is None else np.asarray(self.phi, float).tolist(),
            "xh0": None if self.xh0 is None else np.asarray(self.xh0, float).tolist(),
            "disturbance": self.disturbance.to_dict(),
        }


@dataclass
class SimResult:
    t: np.ndarray
    x: np.ndarray
    xh: np.ndarray
    z: np.ndarray
    zh: np.ndarray
    e: np.ndarray
    w: np.ndarray
    tau: np.ndarray
    memberships: np.ndarray
    dzeta: np.ndarray
    e_energy: np.ndarray
    w_energy: np.ndarray
    phi: np.ndarray
    xh0: np.ndarray
    divergent: bool = False
    status: str = "ok"
    backend: str = ""

    @property
    def zeta(self) -> np.ndarray:
        return np.hstack([self.x, self.xh])

    def terminal_norm(self) -> float:
        return float(np.linalg.norm(self.zeta[-1]))

    def to_csv(self, path: str | Path) -> None:
        n, nz, nw = self.x.shape[1], self.z.shape[1], self.w.shape[1]
        header = (
            ["t"]
            + [f"x{i + 1}" for i in range(n)]
            + [f"xh{i + 1}" for i in range(n)]
            + [f"z{i + 1}" for i in range(nz)]
            + [f"zh{i + 1}" for i in range(nz)]
            + [f"e{i + 1}" for i in range(nz)]
            + [f"w{i + 1}" for i in range(nw)]
        )
        data = np.hstack([self.t[:, None], self.x, self.xh, self.z, self.zh, self.e, self.w])
        with open(path, "w", newline="", encoding="ascii") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for row in data:
                wr.writerow([repr(float(v)) for v in row])

    def summary(self) -> dict:
        out = {
            "status": self.status,
            "t_final": float(self.t[-1]),
            "steps": len(self.t) - 1,
            "terminal_norm": self.terminal_norm(),
            "e_energy": float(self.e_energy[-1]),
            "w_energy": float(self.w_energy[-1]),
            "backend": self.backend,
        }
        if self.w_energy[-1] > 0:
            out["l2_ratio"] = math.sqrt(self.e_energy[-1] / self.w_energy[-1])
        return out


def _vector(v, n: int, name: str) -> np.ndarray:
    if v is None:
        return np.zeros(n)
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise ValueError(f"{name} must have length {n}, got {arr.shape[0]}")
    return arr


def simulate_filtering(
    model: TsDelayModel,
    filt: FuzzyFilter,
    config: SimConfig,
    backend: str | None = None,
) -> SimResult:
    """Integrate plant and filter together on ``[0, t_final]``.

    A non-finite or exploding state stops the run early; the truncated
    result has ``divergent=True``.
    """
    check_model(model)
    if filt.p != model.p:
        raise ModelError(f"filter has {filt.p} rules, model has {model.p}")
    bad = config.problems()
    if bad:
        raise ValueError("invalid simulation config: " + "; ".join(bad))
    n, nw = model.n, model.n_w
    phi = _vector(config.phi, n, "phi")
    xh0 = _vector(config.xh0, n, "xh0")
    dt = config.step
    N = int(round(config.t_final / dt))
    t = np.arange(N + 1) * dt
    stages = np.stack([t, t + 0.5 * dt, t + dt], axis=1)
    tau = config.delay(stages)
    w_st = config.disturbance.evaluate(stages, nw)

    mats = pack_model(model)
    Ah = np.stack([np.asarray(m) for m in filt.A_hat])
    Bh = np.stack([np.asarray(m) for m in filt.B_hat])
    if Ah.shape[1:] != (n, n) or Bh.shape[1:] != (n, model.n_y):
        raise ModelError("filter dimensions do not match the model")
    impl = get_backend(backend)
    zeta, dzeta, xdel, ups, done, status = impl.integrate(
        mats["A"], mats["A_tau"], mats["B"], mats["C"], mats["C_tau"], mats["D"], Ah, Bh,
        *pack_grades(list(model.membership.grades)),
        model.membership.premise_index, phi, xh0, dt, N, tau, w_st,
    )
    keep = N + 1 if status == 0 else done + 1
    zeta, dzeta, xdel, ups = zeta[:keep], dzeta[:keep], xdel[:keep], ups[:keep]
    t, w = t[:keep], w_st[:keep, 0]
    x, xh = zeta[:, :n], zeta[:, n:]
    E, Et = model.stacked("E"), model.stacked("E_tau")
    Ch = np.stack([np.asarray(m) for m in filt.C_hat])
    z = np.einsum("ki,iab,kb->ka", ups, E, x) + np.einsum("ki,iab,kb->ka", ups, Et, xdel)
    zh = np.einsum("kj,jab,kb->ka", ups, Ch, xh)
    e = z - zh
    e_en = cumulative_trapezoid(np.sum(e * e, axis=1), t, initial=0.0)
    w_en = cumulative_trapezoid(np.sum(w * w, axis=1), t, initial=0.0)
    label = {0: "ok", 1: "divergent", 2: "degenerate membership"}[int(status)]
    return SimResult(
        t, x, xh, z, zh, e, w, tau[:keep, 0], ups, dzeta, e_en, w_en, phi, xh0,
        divergent=status == 1, status=label,
        backend=backend or BACKEND,
    )


def l2_gain_estimate(result: SimResult, require_zero_history: bool = True) -> float:
    """``sqrt(int |e|^2 / int |w|^2)`` by trapezoidal quadrature on the sample grid."""
    if require_zero_history and (np.any(result.phi != 0) or np.any(result.xh0 != 0)):
        raise ValueError("gain estimate needs zero initial history")
    den = float(result.w_energy[-1])
    if not den > 0:
        raise ValueError("zero disturbance energy: gain ratio undefined")
    return math.sqrt(float(result.e_energy[-1]) / den)


# ---------------------------------------------------------------------------
# Lyapunov-Krasovskii monitor
# ---------------------------------------------------------------------------


@dataclass
class LyapunovTrace:
    t: np.ndarray
    V: np.ndarray
    parts: np.ndarray  # columns: quadratic, single integral, double integral

    @property
    def max_forward_difference(self) -> float:
        return float(np.max(np.diff(self.V))) if len(self.V) > 1 else 0.0

    @property
    def max_V(self) -> float:
        return float(np.max(self.V)) if len(self.V) else 0.0


def _interp_cumulative(tq, t, Q, slope_before: float = 0.0):
    """Cumulative integral at arbitrary times; linear extension before ``t[0]``."""
    tq = np.asarray(tq, dtype=float)
    out = np.interp(tq, t, Q)
    neg = tq < t[0]
    out[neg] = Q[0] + slope_before * (tq[neg] - t[0])
    return out


def lyapunov_monitor(
    weights: Mapping[str, np.ndarray],
    result: SimResult,
    h: float,
) -> LyapunovTrace:
    """Sample the functional along a simulated trajectory.

    ``V = zeta' P zeta + int_{t-tau}^{t} zeta' Y zeta + int_{t-h}^{t} (h - t + s) zeta_dot' Z zeta_dot``,
    where the last form equals the double integral.  ``weights`` holds
    ``P``, ``Y``, ``Z`` valid for the simulated filter's coordinates.
    Before ``t = 0`` the state is held at its initial value.
    """
    P, Y, Z = (np.asarray(weights[k], dtype=float) for k in ("P", "Y", "Z"))
    zeta, dz, t = result.zeta, result.dzeta, result.t
    m = zeta.shape[1]
    if P.shape != (m, m) or Y.shape != (m, m) or Z.shape != (m, m):
        raise ValueError(f"weights must be {m}x{m} to match the simulated state")
    if not h > 0:
        raise ValueError("h must be positive")
    quad = np.einsum("ka,ab,kb->k", zeta, P, zeta)
    q = np.einsum("ka,ab,kb->k", zeta, Y, zeta)
    Q = cumulative_trapezoid(q, t, initial=0.0)
    single = Q - _interp_cumulative(t - result.tau, t, Q, slope_before=q[0])
    r = np.einsum("ka,ab,kb->k", dz, Z, dz)
    R0 = cumulative_trapezoid(r, t, initial=0.0)
    R1 = cumulative_trapezoid(r * t, t, initial=0.0)
    lo = t - h
    dbl = (h - t) * (R0 - _interp_cumulative(lo, t, R0)) + (R1 - _interp_cumulative(lo, t, R1))
    parts = np.stack([quad, single, dbl], axis=1)
    return LyapunovTrace(t, parts.sum(axis=1), parts)


def save_summary(summary: Mapping[str, Any], path: str | Path) -> None:
    Path(path).write_text(json.dumps(dict(summary), indent=2) + "\n", encoding="utf-8")
