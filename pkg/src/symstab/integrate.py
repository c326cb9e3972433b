"""Trajectories: adaptive Dormand-Prince 5(4), implicit midpoint, blow-up detection.

The adaptive integrator stops with a :class:`Blowup` termination when the
state norm reaches ``r_max`` or when the step-size controller is driven below
``h_min`` while the norm keeps growing. Either trigger is numerical evidence
of a finite-time singularity, never proof of one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .expr import KERNEL_NAMESPACE, ExprDomainError, checked, codegen
from .system import SystemDef, state_norm

__all__ = [
    "IntegrationError",
    "NonConvergenceError",
    "ReachedTEnd",
    "Blowup",
    "DomainFailure",
    "BlowupReport",
    "Trajectory",
    "integrate_adaptive",
    "integrate_symplectic",
    "detect_blowup",
    "R_MAX",
]

R_MAX = 1e8
BLOWUP_WINDOW = 50
GROWTH_WINDOW = 10


class IntegrationError(RuntimeError):
    """The integrator could not continue (step underflow, step budget)."""


class NonConvergenceError(IntegrationError):
    def __init__(self, step: int, state: Sequence[float]):
        super().__init__(f"implicit midpoint fixed point did not converge at step {step}")
        self.step = step
        self.state = tuple(float(v) for v in state)


@dataclass(frozen=True)
class BlowupReport:
    """Power-law fit ``|x(t)| ~ C |t* - t|^(-alpha)`` near a blow-up."""

    t_est: float | None
    alpha_est: float | None
    witness: tuple[float, ...]
    t_last: float
    component_alpha: dict = field(default_factory=dict)
    component_t_est: dict = field(default_factory=dict)
    fit_points: int = 0
    trigger: str = ""

    def to_json(self) -> dict:
        return {
            "t_est": self.t_est,
            "t_est_note": None if self.t_est is not None else "beyond t_last",
            "alpha_est": self.alpha_est,
            "component_alpha": self.component_alpha,
            "component_t_est": self.component_t_est,
            "witness": list(self.witness),
            "t_last": self.t_last,
            "fit_points": self.fit_points,
            "trigger": self.trigger,
        }


@dataclass(frozen=True)
class ReachedTEnd:
    kind: str = "reached_t_end"

    def to_json(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class Blowup:
    report: BlowupReport
    kind: str = "blowup"

    @property
    def t_est(self):
        return self.report.t_est

    @property
    def witness_state(self):
        return self.report.witness

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.report.to_json()}


@dataclass(frozen=True)
class DomainFailure:
    t: float
    detail: str
    kind: str = "domain_error"

    def to_json(self) -> dict:
        return {"kind": self.kind, "t": self.t, "detail": self.detail}


@dataclass
class Trajectory:
    system: str
    variables: tuple[str, ...]
    periodic: tuple[bool, ...]
    t: np.ndarray
    states: np.ndarray
    steps: np.ndarray
    termination: ReachedTEnd | Blowup | DomainFailure
    derivs: np.ndarray | None = None
    method: str = "dopri5"
    settings: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def blew_up(self) -> bool:
        return isinstance(self.termination, Blowup)

    def norms(self) -> np.ndarray:
        return state_norm(self.states, self.periodic)

    def sample(self, ts) -> np.ndarray:
        """Cubic Hermite interpolation of the state at times ``ts``."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        t = self.t
        sign = 1.0 if t[-1] >= t[0] else -1.0
        tt = sign * t
        q = sign * ts
        if np.any(q < tt[0] - 1e-12 * (1 + abs(tt[0]))) or np.any(q > tt[-1] + 1e-12 * (1 + abs(tt[-1]))):
            raise ValueError("sample times outside the trajectory")
        idx = np.clip(np.searchsorted(tt, q, side="right") - 1, 0, len(t) - 2)
        h = t[idx + 1] - t[idx]
        s = ((ts - t[idx]) / h)[:, None]
        y0, y1 = self.states[idx], self.states[idx + 1]
        if self.derivs is None:
            return y0 + s * (y1 - y0)
        f0, f1 = self.derivs[idx], self.derivs[idx + 1]
        hh = h[:, None]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * y0 + h10 * hh * f0 + h01 * y1 + h11 * hh * f1

    def uniform(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """``n`` equally spaced samples over the covered time span."""
        ts = np.linspace(self.t[0], self.t[-1], n)
        return ts, self.sample(ts)

    def to_csv(self, path, uniform: int | None = None) -> None:
        """Write ``t,var1,...,vard`` rows with 17 significant digits."""
        if uniform:
            ts, xs = self.uniform(uniform)
        else:
            ts, xs = self.t, self.states
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *self.variables])
            for ti, xi in zip(ts, xs):
                w.writerow([f"{ti:.17g}", *(f"{v:.17g}" for v in xi)])

    def summary(self) -> dict:
        return {
            "system": self.system,
            "method": self.method,
            "samples": int(len(self.t)),
            "t0": float(self.t[0]),
            "t_final": float(self.t[-1]),
            "final_state": [float(v) for v in self.states[-1]],
            "max_norm": float(np.max(self.norms())),
            "termination": self.termination.to_json(),
            "settings": self.settings,
        }


# --------------------------------------------------------------------------
# blow-up fit


def _fit_power_law(t: np.ndarray, y: np.ndarray, direction: float):
    """Best ``(t*, alpha, sse)`` for ``y ~ C (direction*(t* - t))^(-alpha)``."""
    logy = np.log(y)
    t_last = t[-1]
    span = abs(t[-1] - t[0])
    if span <= 0 or not np.all(np.isfinite(logy)):
        return None

    def sse(log_gap: float) -> float:
        s = direction * (t_last + direction * math.exp(log_gap) - t)
        X = np.log(s)
        A = np.vstack([X, np.ones_like(X)]).T
        coef, res, *_ = np.linalg.lstsq(A, logy, rcond=None)
        r = logy - A @ coef
        return float(r @ r)

    lo, hi = math.log(span * 1e-10), math.log(span * 1e3)
    grid = np.linspace(lo, hi, 261)
    vals = np.array([sse(g) for g in grid])
    k = int(np.argmin(vals))
    if k == len(grid) - 1:
        return None
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, len(grid) - 1)]
    best = minimize_scalar(sse, bounds=(a, b), method="bounded", options={"xatol": 1e-10})
    g = best.x if best.fun <= vals[k] else grid[k]
    t_star = t_last + direction * math.exp(g)
    s = direction * (t_star - t)
    slope, _ = np.polyfit(np.log(s), logy, 1)
    alpha = -float(slope)
    if alpha <= 0:
        return None
    return float(t_star), alpha, sse(g)


def detect_blowup(
    t: np.ndarray,
    states: np.ndarray,
    periodic: Sequence[bool],
    variables: Sequence[str] | None = None,
    trigger: str = "",
) -> BlowupReport:
    """Fit the blow-up time and exponent from the last accepted samples.

    Regresses ``log|x|`` against ``log|t* - t|`` over the last 50 samples,
    scanning candidate ``t*`` beyond the last sample; the norm fit gives
    ``t_est``/``alpha_est`` and every steadily growing non-periodic
    coordinate gets its own exponent.
    """
    t = np.asarray(t, dtype=float)[-BLOWUP_WINDOW:]
    xs = np.asarray(states, dtype=float)[-BLOWUP_WINDOW:]
    direction = 1.0 if t[-1] >= t[0] else -1.0
    norms = state_norm(xs, periodic)
    variables = list(variables or [f"x{i}" for i in range(xs.shape[1])])
    t_est = alpha = None
    if len(t) >= 5:
        fit = _fit_power_law(t, norms, direction)
        if fit is not None:
            t_est, alpha, _ = fit
    comp_alpha, comp_t = {}, {}
    for i, name in enumerate(variables):
        if periodic[i] or len(t) < 5:
            continue
        mag = np.abs(xs[:, i])
        if np.any(mag <= 0) or not np.all(np.diff(mag) > 0):
            continue
        fit = _fit_power_law(t, mag, direction)
        if fit is not None:
            comp_t[name], comp_alpha[name], _ = fit
    return BlowupReport(
        t_est=t_est,
        alpha_est=alpha,
        witness=tuple(float(v) for v in xs[-1]),
        t_last=float(t[-1]),
        component_alpha=comp_alpha,
        component_t_est=comp_t,
        fit_points=int(len(t)),
        trigger=trigger,
    )


# --------------------------------------------------------------------------
# generated kernels

_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# fifth-order weights minus embedded fourth-order weights
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

_KERNEL_ERRORS = (ValueError, ZeroDivisionError, OverflowError)


def _field_source(exprs, variables, periodic, prefix: str, out: str) -> list[str]:
    """Lines assigning ``{out}{i}`` = field component i at point ``{prefix}{i}``."""
    lines = []
    env = {}
    for i, name in enumerate(variables):
        if periodic[i]:
            lines.append(f"{prefix}{i}w = {prefix}{i} % _TWO_PI")
            env[name] = f"{prefix}{i}w"
        else:
            env[name] = f"{prefix}{i}"
    for i, e in enumerate(exprs):
        lines.append(f"{out}{i} = {codegen(e, env)}")
    return lines


def _exec_kernel(lines: list[str], name: str):
    ns = dict(KERNEL_NAMESPACE)
    ns["_TWO_PI"] = 2.0 * math.pi
    ns["_sqrt"] = math.sqrt
    exec("\n".join(lines), ns)  # noqa: S102 - source generated from parsed trees
    return ns[name]


@lru_cache(maxsize=64)
def _dopri_kernel(exprs: tuple, variables: tuple, periodic: tuple):
    """``trial(y, k1, hd, rtol, atol) -> (y_new, k7, err)`` for one DOPRI5 step."""
    d = len(variables)
    rng = range(d)
    src = ["def trial(y, k1, hd, rtol, atol):"]
    body = [f"y{i} = y[{i}]; k1_{i} = k1[{i}]" for i in rng]
    for s in range(1, 7):
        for i in rng:
            terms = " + ".join(f"{a!r}*k{j + 1}_{i}" for j, a in enumerate(_A[s]) if a)
            body.append(f"z{i} = y{i} + hd*({terms})")
        body += _field_source(exprs, variables, periodic, "z", f"k{s + 1}_")
    body.append("acc = 0.0")
    for i in rng:
        terms = " + ".join(f"{e!r}*k{j + 1}_{i}" for j, e in enumerate(_E) if e)
        body.append(f"sc = atol + rtol*max(abs(y{i}), abs(z{i}))")
        body.append(f"r = hd*({terms})/sc")
        body.append("acc += r*r")
    tup = lambda p: "(" + ", ".join(f"{p}{i}" for i in rng) + ",)"  # noqa: E731
    body.append(f"return {tup('z')}, {tup('k7_')}, _sqrt(acc/{d})")
    src += ["    " + line for line in body]
    return _exec_kernel(src, "trial")


@lru_cache(maxsize=64)
def _midpoint_kernel(exprs: tuple, variables: tuple, periodic: tuple):
    """``run(x, inc, h, n, every, out, tol, sweeps)`` advancing ``n`` midpoint steps.

    Returns ``(x, inc, stored_rows, failed_step)``; ``failed_step`` is 0 on success.
    """
    d = len(variables)
    rng = range(d)
    xs = ", ".join(f"x{i}" for i in rng)
    src = ["def run(x, inc, h, n, every, out, tol, sweeps):"]
    body = [f"{xs}, = x", ", ".join(f"i{i}" for i in rng) + ", = inc", "j = 1"]
    body.append("for step in range(1, n + 1):")
    loop = [f"y{i} = x{i} + i{i}" for i in rng]
    loop.append("for _ in range(sweeps):")
    sweep = [f"m{i} = (x{i} + y{i})*0.5" for i in rng]
    sweep += _field_source(exprs, variables, periodic, "m", "f")
    sweep += [f"n{i} = x{i} + h*f{i}" for i in rng]
    sweep.append("delta = max(" + ", ".join(f"abs(n{i} - y{i})" for i in rng) + ", 0.0)")
    sweep.append("scale = max(1.0, " + ", ".join(f"abs(n{i})" for i in rng) + ")")
    sweep += [f"y{i} = n{i}" for i in rng]
    sweep.append("if delta <= tol*scale:")
    sweep.append("    break")
    loop += ["    " + line for line in sweep]
    loop.append("else:")
    loop.append(f"    return ({xs},), ({', '.join(f'i{i}' for i in rng)},), j, step")
    loop += [f"i{i} = y{i} - x{i}" for i in rng]
    loop += [f"x{i} = y{i}" for i in rng]
    loop.append("if step % every == 0:")
    loop.append(f"    out[j] = ({xs},)")
    loop.append("    j += 1")
    body += ["    " + line for line in loop]
    body.append(f"return ({xs},), ({', '.join(f'i{i}' for i in rng)},), j, 0")
    src += ["    " + line for line in body]
    return _exec_kernel(src, "run")


def _locate_failure(f_checked, y, k1, hd, exc, t) -> str:
    """Name the failing subexpression by re-evaluating just past the last good state."""
    for frac in (1e-3, 1e-6, 1.0):
        probe = tuple(a + frac * hd * b for a, b in zip(y, k1))
        try:
            f_checked(probe)
        except ExprDomainError as located:
            return f"{located} near t={t}"
    return f"{type(exc).__name__}: {exc} near t={t}"


def _scalar_norm(y, periodic) -> float:
    acc = 0.0
    for v, per in zip(y, periodic):
        if per:
            w = math.fmod(abs(v), 2.0 * math.pi)
            v = min(w, 2.0 * math.pi - w)
        acc += v * v
    return math.sqrt(acc)


# --------------------------------------------------------------------------
# Dormand-Prince 5(4)

_SAFE = 0.9
_BETA = 0.04
_EXPO = 0.2 - 0.75 * _BETA
_FAC_MIN = 0.2  # largest decrease per step is 1/0.2
_FAC_MAX = 10.0


def _rms(v: np.ndarray) -> float:
    return float(np.sqrt(np.mean(v * v)))


def _initial_step(f, y0, f0, direction, rtol, atol, h_max):
    y0 = np.asarray(y0, dtype=float)
    f0 = np.asarray(f0, dtype=float)
    sc = atol + rtol * np.abs(y0)
    d0, d1 = _rms(y0 / sc), _rms(f0 / sc)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, h_max)
    try:
        f1 = np.asarray(f(tuple(y0 + direction * h0 * f0)), dtype=float)
        d2 = _rms((f1 - f0) / sc) / h0
    except (ExprDomainError,) + _KERNEL_ERRORS:
        return h0
    dm = max(d1, d2)
    h1 = max(1e-6, h0 * 1e-3) if dm <= 1e-15 else (0.01 / dm) ** 0.2
    return min(100 * h0, h1, h_max)


def integrate_adaptive(
    sys: SystemDef,
    x0: Sequence[float],
    t0: float,
    t1: float,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    r_max: float = R_MAX,
    h_min: float | None = None,
    max_steps: int = 5_000_000,
    field_exprs: Sequence | None = None,
) -> Trajectory:
    """Integrate from ``(t0, x0)`` to ``t1`` (``t1 < t0`` runs backward).

    ``field_exprs`` overrides the system's own field, e.g. to follow the flow
    generated by a conserved quantity instead of the dynamics.
    """
    if rtol <= 0 or atol <= 0:
        raise ValueError("rtol and atol must be positive")
    if t1 == t0:
        raise ValueError("t1 must differ from t0")
    if len(x0) != sys.dim:
        raise ValueError(f"initial state has {len(x0)} components, expected {sys.dim}")
    exprs = tuple(field_exprs if field_exprs is not None else sys.field_exprs)
    trial = _dopri_kernel(exprs, sys.variables, sys.periodic)
    f_checked = checked(exprs, sys.variables, sys.periodic)
    periodic = sys.periodic
    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    if h_min is None:
        h_min = 1e-12 * max(1.0, span)
    settings = {"rtol": rtol, "atol": atol, "r_max": r_max, "h_min": h_min}

    y = tuple(float(v) for v in x0)
    t = float(t0)
    ts, ys, ks, hs = [t], [y], [], []
    try:
        k1 = f_checked(y)
    except ExprDomainError as exc:
        return _finish(sys, ts, ys, [(math.nan,) * sys.dim], hs, DomainFailure(t, str(exc)), settings)
    ks.append(k1)
    norms = [_scalar_norm(y, periodic)]
    h = _initial_step(f_checked, y, k1, direction, rtol, atol, span)
    facold = 1e-4
    last_rejected = False
    n_steps = 0

    def blowup(trigger: str):
        rep = detect_blowup(np.array(ts), np.array(ys), periodic, sys.variables, trigger)
        return _finish(sys, ts, ys, ks, hs, Blowup(rep), settings)

    while direction * (t1 - t) > 0:
        n_steps += 1
        if n_steps > max_steps:
            raise IntegrationError(f"step budget of {max_steps} exhausted at t={t}")
        clipped = h >= abs(t1 - t)
        if clipped:
            h = abs(t1 - t)
        hd = direction * h
        trial_error = None
        try:
            y_new, k7, err = trial(y, k1, hd, rtol, atol)
            if not all(map(math.isfinite, y_new)) or not all(map(math.isfinite, k7)):
                err = math.inf
        except _KERNEL_ERRORS as exc:
            err = math.inf
            trial_error = exc

        if err <= 1.0:
            fac11 = max(err, 1e-300) ** _EXPO
            fac = fac11 / facold**_BETA
            fac = min(1 / _FAC_MIN, max(1 / _FAC_MAX, fac / _SAFE))
            h_new = h / fac
            if last_rejected:
                h_new = min(h_new, h)
            facold = max(err, 1e-4)
            last_rejected = False
            t = t1 if clipped else t + hd
            y, k1 = y_new, k7
            ts.append(t)
            ys.append(y)
            ks.append(k1)
            hs.append(hd)
            norms.append(_scalar_norm(y, periodic))
            if norms[-1] >= r_max:
                return blowup("r_max")
            if not clipped and h <= h_min and _growing(norms):
                return blowup("h_min")
            h = min(h_new, span)
        else:
            last_rejected = True
            if math.isfinite(err):
                h = h / min(1 / _FAC_MIN, (err**_EXPO) / _SAFE)
            else:
                h = h * _FAC_MIN
            if h < h_min:
                if _growing(norms):
                    return blowup("h_min")
                if trial_error is not None:
                    detail = _locate_failure(f_checked, y, k1, hd, trial_error, t)
                    return _finish(sys, ts, ys, ks, hs, DomainFailure(t, detail), settings)
                raise IntegrationError(f"step size underflow at t={t} without norm growth")
    return _finish(sys, ts, ys, ks, hs, ReachedTEnd(), settings)


def _growing(norms: list[float]) -> bool:
    if len(norms) < GROWTH_WINDOW + 1:
        return False
    tail = norms[-(GROWTH_WINDOW + 1):]
    return all(b > a for a, b in zip(tail, tail[1:]))


def _finish(sys, ts, ys, ks, hs, termination, settings) -> Trajectory:
    return Trajectory(
        system=sys.name,
        variables=sys.variables,
        periodic=sys.periodic,
        t=np.array(ts),
        states=np.array(ys, dtype=float),
        steps=np.array(hs),
        derivs=np.array(ks[: len(ts)], dtype=float),
        termination=termination,
        method="dopri5",
        settings=settings,
    )


# --------------------------------------------------------------------------
# implicit midpoint


def integrate_symplectic(
    sys: SystemDef,
    x0: Sequence[float],
    h: float,
    n_steps: int,
    t0: float = 0.0,
    tol: float = 1e-13,
    max_sweeps: int = 50,
    store_every: int = 1,
    field_exprs: Sequence | None = None,
) -> Trajectory:
    """Implicit midpoint rule ``x' = x + h X((x + x')/2)`` with fixed-point sweeps.

    Each step iterates until successive iterates differ by at most
    ``tol * max(1, |x'|_inf)``, or raises :class:`NonConvergenceError` after
    ``max_sweeps``. The previous increment seeds the iteration.
    """
    if not sys.is_hamiltonian and field_exprs is None:
        raise ValueError("symplectic integration needs Hamiltonian dynamics")
    if h <= 0:
        raise ValueError("step size must be positive")
    exprs = tuple(field_exprs if field_exprs is not None else sys.field_exprs)
    run = _midpoint_kernel(exprs, sys.variables, sys.periodic)
    f_checked = checked(exprs, sys.variables, sys.periodic)
    x = tuple(float(v) for v in x0)
    n_store = n_steps // store_every + 1
    out = np.empty((n_store, sys.dim))
    out[0] = x
    inc = tuple(h * v for v in f_checked(x))
    try:
        x, inc, j, failed = run(x, inc, h, n_steps, store_every, out, tol, max_sweeps)
    except _KERNEL_ERRORS:
        # re-run the failing region on the checked path for a located error
        f_checked(x)
        raise
    if failed:
        raise NonConvergenceError(failed, x)
    states = out[:j]
    derivs = None
    if field_exprs is None:
        derivs = np.asarray(sys.field_vec(states.T)).T
    return Trajectory(
        system=sys.name,
        variables=sys.variables,
        periodic=sys.periodic,
        t=t0 + h * store_every * np.arange(j),
        states=states,
        steps=np.full(max(j - 1, 0), h * store_every),
        termination=ReachedTEnd(),
        derivs=derivs,
        method="implicit_midpoint",
        settings={"h": h, "n_steps": n_steps, "tol": tol, "max_sweeps": max_sweeps,
                  "store_every": store_every},
    )
