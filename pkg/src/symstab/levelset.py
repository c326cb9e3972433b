"""Grid probes of level-set components: confining and properness evidence.

A probe box is cut into ``resolution`` cells per axis. A cell belongs to the
level set ``F = mu`` when, for every component ``F_i``, the corner values of
``F_i - mu_i`` change sign, or some corner lies within ``1e-9 (1 + |mu_i|)``,
or the cell centre is within half a cell diagonal of the level to first
order (``|F_i(c) - mu_i| <= |grad F_i(c)| * diag / 2``). The last clause keeps
tangential levels such as the maxima of ``sin(x^2 + y^2)`` connected; it can
only enlarge components, never split them.

Components are grown from a seed cell through face-adjacent cells (periodic
axes wrap). All verdicts are qualified by the box half-width and resolution:
a bounded component is evidence at that scale, not a proof.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import expr as ex
from .expr import Expr
from .system import SystemDef

__all__ = [
    "BudgetExceeded",
    "SeedNotInSet",
    "ProbeBox",
    "ComponentReport",
    "ComponentOutcome",
    "ConfiningVerdict",
    "PropernessVerdict",
    "Advisory",
    "default_resolution",
    "component_flood_fill",
    "confining_probe",
    "properness_probe",
    "sum_of_squares",
    "sum_of_squares_equivalence",
    "composition_futility",
    "DEFAULT_SCALES",
]

DEFAULT_SCALES = (2.0, 8.0, 32.0)
DEFAULT_BUDGET = 10**8
LEVEL_TOL = 1e-9
TWO_PI = 2.0 * math.pi


class BudgetExceeded(RuntimeError):
    """The probe grid would exceed the configured cell budget."""


class SeedNotInSet(ValueError):
    pass


def default_resolution(d: int) -> int:
    """Cells per axis: 256 up to d=2, 64 up to d=4, 16 up to d=6."""
    if d <= 2:
        return 256
    if d <= 4:
        return 64
    if d <= 6:
        return 16
    raise BudgetExceeded(f"grid probes are refused above dimension 6 (got {d})")


@dataclass(frozen=True)
class ProbeBox:
    center: tuple[float, ...]
    half_widths: tuple[float, ...]
    resolution: int
    periodic: tuple[bool, ...] = ()
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        d = len(self.center)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "half_widths", tuple(float(h) for h in self.half_widths))
        object.__setattr__(self, "periodic", tuple(self.periodic) or (False,) * d)
        if len(self.half_widths) != d or len(self.periodic) != d:
            raise ValueError("box dimensions disagree")
        if any(h <= 0 for h in self.half_widths):
            raise ValueError("half-widths must be positive")
        if self.resolution < 8:
            raise ValueError("resolution must be at least 8 cells per axis")
        if self.resolution**d > self.budget:
            raise BudgetExceeded(f"{self.resolution}^{d} cells exceed the budget of {self.budget}")

    @classmethod
    def around(cls, center, half_width: float, resolution: int | None = None, periodic=None,
               budget: int = DEFAULT_BUDGET) -> "ProbeBox":
        d = len(center)
        return cls(tuple(center), (float(half_width),) * d,
                   resolution or default_resolution(d), tuple(periodic or ()), budget)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def lo(self) -> np.ndarray:
        c, h = np.array(self.center), np.array(self.half_widths)
        return np.where(self.periodic, 0.0, c - h)

    @property
    def hi(self) -> np.ndarray:
        c, h = np.array(self.center), np.array(self.half_widths)
        return np.where(self.periodic, TWO_PI, c + h)

    @property
    def cell(self) -> np.ndarray:
        return (self.hi - self.lo) / self.resolution

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.cell))

    @property
    def scale(self) -> float:
        return max(h for h, p in zip(self.half_widths, self.periodic) if not p) if not all(self.periodic) else math.pi

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        per = np.array(self.periodic)
        return bool(np.all(per | ((x >= self.lo) & (x <= self.hi))))

    def cell_of(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        per = np.array(self.periodic)
        x = np.where(per, np.mod(x, TWO_PI), x)
        idx = np.floor((x - self.lo) / self.cell).astype(np.int64)
        return np.clip(idx, 0, self.resolution - 1)

    def centers(self, idx: np.ndarray) -> np.ndarray:
        return self.lo + (np.asarray(idx) + 0.5) * self.cell

    def to_json(self) -> dict:
        return {
            "center": list(self.center),
            "half_widths": list(self.half_widths),
            "resolution": self.resolution,
            "periodic": list(self.periodic),
        }


# --------------------------------------------------------------------------
# flood fill


@dataclass(frozen=True)
class ComponentReport:
    map_name: str
    mu: tuple[float, ...]
    seed: tuple[float, ...]
    cell_count: int
    touches_boundary: bool
    bounding_radius: float
    scale: float
    resolution: int
    cell_diagonal: float
    complete: bool = True
    box: ProbeBox | None = None

    def to_json(self) -> dict:
        return {
            "map": self.map_name,
            "mu": list(self.mu),
            "seed": list(self.seed),
            "cell_count": self.cell_count,
            "touches_boundary": self.touches_boundary,
            "bounding_radius": self.bounding_radius,
            "scale": self.scale,
            "resolution": self.resolution,
            "cell_diagonal": self.cell_diagonal,
            "complete": self.complete,
        }


class _CellTester:
    """Vectorised in-set test for batches of cells."""

    def __init__(self, sys: SystemDef, F: Sequence[Expr], mu: np.ndarray, box: ProbeBox, tol: float):
        self.box = box
        self.mu = mu
        self.r = len(F)
        d = sys.dim
        self.d = d
        grads = [g for f in F for g in ex.gradient(f, sys.variables)]
        self.fv = ex.compile_vector(list(F), sys.variables, sys.periodic)
        self.gv = ex.compile_vector(grads, sys.variables, sys.periodic)
        self.tol = tol * (1.0 + np.abs(mu))
        self.corners = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)
        self.half_diag = 0.5 * box.diagonal

    def __call__(self, idx: np.ndarray) -> np.ndarray:
        box, r, d = self.box, self.r, self.d
        m = len(idx)
        if m == 0:
            return np.zeros(0, dtype=bool)
        nodes = idx[:, None, :] + self.corners[None, :, :]
        pts = (box.lo + nodes * box.cell).reshape(-1, d).T
        vals = self.fv(pts).reshape(r, m, -1) - self.mu[:, None, None]
        c = box.centers(idx).T
        fc = self.fv(c) - self.mu[:, None]
        gc = self.gv(c).reshape(r, d, m)
        gnorm = np.linalg.norm(gc, axis=1)
        with np.errstate(invalid="ignore"):
            finite = np.all(np.isfinite(vals), axis=2)
            vmin = np.min(vals, axis=2)
            vmax = np.max(vals, axis=2)
            straddle = (vmin <= 0) & (vmax >= 0)
            near = np.min(np.abs(vals), axis=2) <= self.tol[:, None]
            lin = np.abs(fc) <= gnorm * self.half_diag + self.tol[:, None]
        ok = finite & (straddle | near | (lin & np.isfinite(fc)))
        return np.all(ok, axis=0)


def _face_offsets(d: int) -> np.ndarray:
    off = np.zeros((2 * d, d), dtype=np.int64)
    for k in range(d):
        off[2 * k, k] = 1
        off[2 * k + 1, k] = -1
    return off


def _touches(idx: np.ndarray, box: ProbeBox) -> bool:
    if idx.size == 0:
        return False
    per = np.array(box.periodic)
    edge = (idx == 0) | (idx == box.resolution - 1)
    return bool(np.any(edge[:, ~per]))


def component_flood_fill(
    sys: SystemDef,
    F: Sequence[Expr],
    mu: Sequence[float],
    seed: Sequence[float],
    box: ProbeBox,
    map_name: str = "F",
    tol: float = LEVEL_TOL,
    stop_at_boundary: bool = False,
    cell_dump: str | None = None,
) -> ComponentReport:
    """Grow the component of ``F^{-1}(mu)`` containing ``seed`` inside ``box``.

    With ``stop_at_boundary`` the fill halts as soon as the component reaches
    the boundary layer; the report is then marked incomplete.
    """
    F = list(F)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    seed = np.asarray(seed, dtype=float)
    if len(mu) != len(F):
        raise ValueError("mu must have one value per map component")
    if not box.contains(seed):
        raise SeedNotInSet("seed lies outside the probe box")
    at_seed = ex.compile_vector(F, sys.variables, sys.periodic)(seed.reshape(-1, 1))[:, 0]
    tol_abs = tol * (1.0 + np.abs(mu))
    if not np.all(np.abs(at_seed - mu) <= tol_abs):
        raise SeedNotInSet(f"F(seed) = {at_seed.tolist()} is not within tolerance of mu = {mu.tolist()}")

    d = sys.dim
    n = box.resolution
    shape = (n,) * d
    per = np.array(box.periodic)
    test = _CellTester(sys, F, mu, box, tol)
    offsets = _face_offsets(d)
    visited = np.zeros(n**d, dtype=bool)
    s_idx = box.cell_of(seed)[None, :]
    visited[np.ravel_multi_index(s_idx.T, shape)] = True
    frontier = s_idx  # the seed's cell is in the set by construction
    parts = [s_idx]
    dump = [] if cell_dump else None
    if dump is not None:
        dump.append((s_idx, np.ones(1, dtype=bool)))
    complete = True
    touched = _touches(s_idx, box)
    while len(frontier):
        if stop_at_boundary and touched:
            complete = False
            break
        nb = (frontier[:, None, :] + offsets[None, :, :]).reshape(-1, d)
        if per.any():
            nb[:, per] %= n
        keep = np.all((nb >= 0) & (nb < n), axis=1)
        flat = np.unique(np.ravel_multi_index(nb[keep].T, shape))
        flat = flat[~visited[flat]]
        if flat.size == 0:
            break
        visited[flat] = True
        cand = np.stack(np.unravel_index(flat, shape), axis=1)
        ins = test(cand)
        if dump is not None:
            dump.append((cand, ins))
        frontier = cand[ins]
        if len(frontier):
            parts.append(frontier)
            touched = touched or _touches(frontier, box)
    comp = np.concatenate(parts)
    centers = box.centers(comp)
    rel = (centers - np.array(box.center))[:, ~per]
    radius = float(np.max(np.linalg.norm(rel, axis=1))) if rel.size else 0.0
    if dump is not None:
        _write_cell_dump(cell_dump, dump, d)
    return ComponentReport(
        map_name=map_name,
        mu=tuple(float(v) for v in mu),
        seed=tuple(float(v) for v in seed),
        cell_count=int(len(comp)),
        touches_boundary=bool(touched),
        bounding_radius=radius,
        scale=box.scale,
        resolution=n,
        cell_diagonal=box.diagonal,
        complete=complete,
        box=box,
    )


def _write_cell_dump(path, dump, d: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"i{k + 1}" for k in range(d)] + ["in_set"])
        for idx, ins in dump:
            for row, flag in zip(idx, ins):
                w.writerow([*map(int, row), int(flag)])


# --------------------------------------------------------------------------
# confining probe


@dataclass(frozen=True)
class ComponentOutcome:
    mu: tuple[float, ...]
    seed: tuple[float, ...]
    outcome: str  # BoundedComponent | EscapesAllScales | SeedOutsideBoxes
    scale: float | None
    reports: tuple[ComponentReport, ...]

    @property
    def bounded(self) -> bool:
        return self.outcome == "BoundedComponent"

    def to_json(self) -> dict:
        return {
            "mu": list(self.mu),
            "seed": list(self.seed),
            "outcome": self.outcome,
            "scale": self.scale,
            "reports": [r.to_json() for r in self.reports],
        }


@dataclass(frozen=True)
class ConfiningVerdict:
    map_name: str
    verdict: str  # ConfiningEvidence | NotConfiningAtScale | Inconclusive
    outcomes: tuple[ComponentOutcome, ...]
    scales: tuple[float, ...]
    resolution: int
    reason: str = ""

    @property
    def witness(self) -> ComponentReport | None:
        for o in self.outcomes:
            if o.outcome == "EscapesAllScales":
                return o.reports[-1]
        return None

    def to_json(self) -> dict:
        w = self.witness
        return {
            "map": self.map_name,
            "verdict": self.verdict,
            "scales": list(self.scales),
            "resolution": self.resolution,
            "reason": self.reason,
            "witness": w.to_json() if w is not None else None,
            "outcomes": [o.to_json() for o in self.outcomes],
        }


def _level_at(sys: SystemDef, F: Sequence[Expr], seed) -> np.ndarray:
    vals = ex.compile_vector(list(F), sys.variables, sys.periodic)(np.asarray(seed, dtype=float).reshape(-1, 1))[:, 0]
    if not np.all(np.isfinite(vals)):
        raise SeedNotInSet("map undefined at seed")
    return vals


def confining_probe(
    sys: SystemDef,
    F: Sequence[Expr],
    seeds: Sequence[Sequence[float]],
    levels: Sequence[Sequence[float] | None] | None = None,
    scales: Sequence[float] = DEFAULT_SCALES,
    resolution: int | None = None,
    center: Sequence[float] | None = None,
    map_name: str = "F",
    budget: int = DEFAULT_BUDGET,
) -> ConfiningVerdict:
    """Probe the components through each seed at an increasing box schedule.

    ``levels`` defaults to ``F(seed)``. A component that stays clear of the
    box boundary at some scale counts as bounded; the map earns
    ``ConfiningEvidence`` only when every probed component is bounded.
    """
    scales = tuple(float(s) for s in scales)
    if not seeds:
        raise ValueError("need at least one seed")
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError("scale schedule must be strictly increasing")
    d = sys.dim
    res = resolution or default_resolution(d)
    center = tuple(center) if center is not None else (0.0,) * d
    levels = list(levels) if levels is not None else [None] * len(seeds)
    outcomes = []
    try:
        for seed, mu in zip(seeds, levels):
            mu = _level_at(sys, F, seed) if mu is None else np.asarray(mu, dtype=float).reshape(-1)
            reports = []
            outcome, at = "SeedOutsideBoxes", None
            for L in scales:
                box = ProbeBox.around(center, L, res, sys.periodic, budget)
                if not box.contains(seed):
                    continue
                rep = component_flood_fill(sys, F, mu, seed, box, map_name, stop_at_boundary=True)
                reports.append(rep)
                if not rep.touches_boundary:
                    outcome, at = "BoundedComponent", L
                    break
                outcome = "EscapesAllScales"
            outcomes.append(ComponentOutcome(tuple(map(float, mu)), tuple(map(float, seed)),
                                             outcome, at, tuple(reports)))
    except BudgetExceeded as exc:
        return ConfiningVerdict(map_name, "Inconclusive", tuple(outcomes), scales, res, str(exc))
    if any(o.outcome == "SeedOutsideBoxes" for o in outcomes):
        verdict, reason = "Inconclusive", "a seed lies outside every probe box"
    elif all(o.bounded for o in outcomes):
        verdict, reason = "ConfiningEvidence", ""
    else:
        verdict, reason = "NotConfiningAtScale", f"component reaches the boundary at half-width {scales[-1]:g}"
    return ConfiningVerdict(map_name, verdict, tuple(outcomes), scales, res, reason)


# --------------------------------------------------------------------------
# properness probe


@dataclass(frozen=True)
class PropernessVerdict:
    map_name: str
    K: tuple[tuple[float, float], ...]
    verdict: str  # ProperEvidence | NotProperEvidence | Inconclusive
    scale: float | None
    scales: tuple[float, ...]
    resolution: int
    boundary_hits: tuple[int, ...]
    witness_cells: tuple[tuple[float, ...], ...] = ()
    reason: str = ""

    @property
    def witness(self):
        return self.witness_cells or None

    def to_json(self) -> dict:
        return {
            "map": self.map_name,
            "K": [list(k) for k in self.K],
            "verdict": self.verdict,
            "scale": self.scale,
            "scales": list(self.scales),
            "resolution": self.resolution,
            "boundary_hits": list(self.boundary_hits),
            "witness_cells": [list(w) for w in self.witness_cells],
            "reason": self.reason,
        }


def _slab_ranges(fv, box: ProbeBox, lo_idx: Sequence[int], hi_idx: Sequence[int], r: int):
    """Corner min/max of each map component over the cell block ``[lo_idx, hi_idx)``."""
    axes = [box.lo[k] + np.arange(lo_idx[k], hi_idx[k] + 1) * box.cell[k] for k in range(box.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh])
    vals = fv(pts).reshape((r,) + mesh[0].shape)
    vmin = np.where(np.isfinite(vals), vals, np.inf)
    vmax = np.where(np.isfinite(vals), vals, -np.inf)
    for k in range(box.dim):
        ax = k + 1
        n = vmin.shape[ax]
        a = [slice(None)] * vmin.ndim
        b = [slice(None)] * vmin.ndim
        a[ax] = slice(0, n - 1)
        b[ax] = slice(1, n)
        vmin = np.minimum(vmin[tuple(a)], vmin[tuple(b)])
        vmax = np.maximum(vmax[tuple(a)], vmax[tuple(b)])
    return vmin, vmax, [ax[:-1] + 0.5 * box.cell[k] for k, ax in enumerate(axes)]


def properness_probe(
    sys: SystemDef,
    F: Sequence[Expr],
    K: Sequence[tuple[float, float]],
    scales: Sequence[float] = DEFAULT_SCALES,
    resolution: int | None = None,
    center: Sequence[float] | None = None,
    map_name: str = "F",
    budget: int = DEFAULT_BUDGET,
    max_witnesses: int = 5,
) -> PropernessVerdict:
    """Look for cells of ``F^{-1}(K)`` on the boundary layer of growing boxes.

    A cell is marked when, for every component, the interval spanned by its
    corner values meets ``K_i``. Marked boundary cells at every scale give
    ``NotProperEvidence``; an unmarked boundary layer at some scale means the
    preimage stays inside that box (``ProperEvidence`` for this ``K``).
    """
    F = list(F)
    K = tuple((float(a), float(b)) for a, b in K)
    if len(K) != len(F):
        raise ValueError("K needs one interval per map component")
    if any(b <= a for a, b in K):
        raise ValueError("K must be non-degenerate")
    scales = tuple(float(s) for s in scales)
    d = sys.dim
    r = len(F)
    try:
        res = resolution or default_resolution(d)
    except BudgetExceeded as exc:
        return PropernessVerdict(map_name, K, "Inconclusive", None, scales, 0, (), (), str(exc))
    center = tuple(center) if center is not None else (0.0,) * d
    fv = ex.compile_vector(F, sys.variables, sys.periodic)
    Ka = np.array([k[0] for k in K])[(slice(None),) + (None,) * d]
    Kb = np.array([k[1] for k in K])[(slice(None),) + (None,) * d]
    hits = []
    witnesses: list[tuple[float, ...]] = []
    free_axes = [k for k in range(d) if not sys.periodic[k]]
    if not free_axes:
        return PropernessVerdict(map_name, K, "ProperEvidence", None, scales, res, (),
                                 (), "all coordinates are periodic (compact space)")
    try:
        for L in scales:
            box = ProbeBox.around(center, L, res, sys.periodic, budget)
            count = 0
            wit = []
            for k in free_axes:
                for side in (0, res - 1):
                    lo = [0] * d
                    hi = [res] * d
                    lo[k], hi[k] = side, side + 1
                    vmin, vmax, cc = _slab_ranges(fv, box, lo, hi, r)
                    marked = np.all((vmax >= Ka) & (vmin <= Kb), axis=0)
                    count += int(np.count_nonzero(marked))
                    if len(wit) < max_witnesses and marked.any():
                        for ijk in np.argwhere(marked)[: max_witnesses - len(wit)]:
                            wit.append(tuple(float(cc[a][ijk[a]]) for a in range(d)))
            hits.append(count)
            if count == 0:
                return PropernessVerdict(map_name, K, "ProperEvidence", L, scales, res, tuple(hits))
            witnesses = wit
    except BudgetExceeded as exc:
        return PropernessVerdict(map_name, K, "Inconclusive", None, scales, res, tuple(hits), (), str(exc))
    return PropernessVerdict(map_name, K, "NotProperEvidence", scales[-1], scales, res, tuple(hits),
                             tuple(witnesses),
                             f"preimage reaches the boundary at every half-width up to {scales[-1]:g}")


# --------------------------------------------------------------------------
# sums of squares and composition


def sum_of_squares(Qs: Sequence[Expr]) -> Expr:
    out: Expr | None = None
    for q in Qs:
        sq = ex.BinOp("^", q, ex.Const(2.0))
        out = sq if out is None else ex.BinOp("+", out, sq)
    if out is None:
        raise ValueError("need at least one function")
    return out


@dataclass(frozen=True)
class SumOfSquaresReport:
    names: tuple[str, ...]
    rows: tuple[dict, ...]

    @property
    def agree(self) -> bool:
        return all(r["agree"] for r in self.rows)

    def to_json(self) -> dict:
        return {"maps": list(self.names), "agree": self.agree, "rows": list(self.rows)}


def sum_of_squares_equivalence(
    sys: SystemDef,
    Qs: Sequence[tuple[str, Expr]],
    cs: Sequence[float] = (1.0, 2.0, 4.0),
    scales: Sequence[float] = DEFAULT_SCALES,
    resolution: int | None = None,
) -> SumOfSquaresReport:
    """Compare properness evidence for ``J = (Q_1..Q_r)`` and ``P = sum Q_i^2``.

    ``J`` is probed with ``K = [-c, c]^r`` and ``P`` with ``[0, r c^2]``; the
    two maps are proper together or not at all, so a disagreement flags a
    resolution artefact.
    """
    if not Qs:
        raise ValueError("need at least one function")
    names = tuple(n for n, _ in Qs)
    J = [q for _, q in Qs]
    P = sum_of_squares(J)
    r = len(J)
    rows = []
    for c in cs:
        vj = properness_probe(sys, J, [(-c, c)] * r, scales, resolution, map_name="J")
        vp = properness_probe(sys, [P], [(0.0, r * c * c)], scales, resolution, map_name="P")
        rows.append({
            "c": float(c),
            "J": vj.to_json(),
            "P": vp.to_json(),
            "agree": vj.verdict == vp.verdict and vj.verdict != "Inconclusive",
        })
    return SumOfSquaresReport(names, tuple(rows))


@dataclass(frozen=True)
class Advisory:
    map_name: str
    kind: str  # "confining" or "proper"
    message: str
    witness: dict

    def to_json(self) -> dict:
        return {"map": self.map_name, "kind": self.kind, "message": self.message, "witness": self.witness}


def composition_futility(verdict: ConfiningVerdict | PropernessVerdict) -> Advisory | None:
    """Propagate a non-confining (non-proper) witness to every ``g(F)``.

    If one component of a level set escapes, the level set of ``g(F)`` at
    ``g(mu)`` contains it, so no functional combination can do better.
    Returns None unless the verdict carries a witness.
    """
    if isinstance(verdict, ConfiningVerdict):
        w = verdict.witness
        if verdict.verdict != "NotConfiningAtScale" or w is None:
            return None
        return Advisory(
            verdict.map_name,
            "confining",
            f"no g({verdict.map_name}) is confining: the level component through "
            f"{list(w.seed)} reaches the boundary at half-width {w.scale:g}",
            w.to_json(),
        )
    if isinstance(verdict, PropernessVerdict):
        if verdict.verdict != "NotProperEvidence" or not verdict.witness_cells:
            return None
        return Advisory(
            verdict.map_name,
            "proper",
            f"no continuous g({verdict.map_name}) is proper: the preimage of K reaches the "
            f"boundary at half-width {verdict.scale:g}",
            {"K": [list(k) for k in verdict.K], "cells": [list(c) for c in verdict.witness_cells]},
        )
    return None
