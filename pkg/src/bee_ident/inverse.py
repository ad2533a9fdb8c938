"""Parameter identification from breakthrough curves.

The misfit between a candidate curve and the reference is

    J = sum_i (c_out(t_i) - c_ref(t_i))**2 * dt

on the shared recording grid (left rectangles). Candidates and reference
must share the same cadence; nothing is interpolated.
"""

from dataclasses import dataclass, field
import csv
import json
import logging
import math

import numpy as np

from . import mbc
from .errors import ConfigError, ObjectiveError, SolverError
from .mbc import MbcConfig, SearchDomain
from .transport import BreakthroughCurve, TransportParams, simulate

log = logging.getLogger(__name__)

PARAM_NAMES = {
    "henry": ("da_a", "da_d"),
    "langmuir": ("da_a", "da_d", "m_cap"),
}


@dataclass(frozen=True)
class ReferenceCurve:
    times: np.ndarray
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        v = np.array(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise ConfigError("reference times and values must be equal-length 1-D arrays")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("reference times must be strictly ascending")
        if not np.all(np.isfinite(v)):
            raise ConfigError("reference values must be finite")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.times.size

    @classmethod
    def from_curve(cls, curve, provenance=None):
        return cls(curve.times, curve.values, dict(provenance or {}))

    @classmethod
    def from_csv(cls, path):
        curve = BreakthroughCurve.from_csv(path)
        return cls(curve.times, curve.values, {"kind": "external", "path": str(path)})

    def to_csv(self, path):
        BreakthroughCurve(self.times, self.values).to_csv(path)

    def check_cadence(self, params):
        """Refuse a reference whose time grid differs from the simulation's."""
        n = params.n_steps
        expected = params.dt * np.arange(1, n + 1)
        if self.times.size != n or not np.allclose(self.times, expected, rtol=0.0,
                                                   atol=1e-9 * params.dt):
            raise ConfigError(
                f"reference cadence ({self.times.size} samples, t0={self.times[0]:g}) does not "
                f"match the simulation grid (dt={params.dt:g}, {n} steps); resampling is refused")


def synthetic_reference(params, sigma=0.0, seed=0, use_numba=None):
    """Reference curve simulated at ``params``, optionally with additive noise."""
    curve, _ = simulate(params, use_numba=use_numba)
    prov = {"kind": "synthetic", "params": params.to_dict(), "sigma": float(sigma),
            "seed": int(seed)}
    ref = ReferenceCurve.from_curve(curve, prov)
    return add_noise(ref, sigma, seed) if sigma > 0 else ref


def add_noise(curve, sigma, seed):
    """Independent N(0, sigma^2) perturbations, clamped at zero."""
    if not (math.isfinite(sigma) and sigma >= 0):
        raise ConfigError(f"sigma must be >= 0, got {sigma!r}")
    values = np.asarray(curve.values, dtype=float)
    prov = dict(getattr(curve, "provenance", None) or {})
    prov.update(sigma=float(sigma), seed=int(seed))
    if sigma == 0:
        return ReferenceCurve(curve.times, values.copy(), prov)
    rng = np.random.default_rng(seed)
    noisy = np.maximum(values + rng.normal(0.0, sigma, size=values.shape), 0.0)
    return ReferenceCurve(curve.times, noisy, prov)


def _values(curve):
    return np.asarray(getattr(curve, "values", curve), dtype=float)


def relative_error(curve, reference):
    """Discrete L2 relative error ``||c - c_ref|| / ||c_ref||``."""
    a, b = _values(curve), _values(reference)
    if a.shape != b.shape:
        raise ConfigError(f"curve lengths differ: {a.size} vs {b.size}")
    norm = float(np.sum(b * b))
    if norm == 0.0:
        raise ConfigError("reference curve has zero norm")
    return math.sqrt(float(np.sum((a - b) ** 2)) / norm)


@dataclass(frozen=True)
class IdentificationProblem:
    reference: ReferenceCurve
    isotherm: str
    bounds: SearchDomain
    fixed_pe: float = 10.0
    sim: TransportParams = TransportParams()
    mbc: MbcConfig = MbcConfig()

    def __post_init__(self):
        if self.isotherm not in PARAM_NAMES:
            raise ConfigError(f"isotherm must be one of {tuple(PARAM_NAMES)}")
        if self.bounds.dims != len(PARAM_NAMES[self.isotherm]):
            raise ConfigError(f"{self.isotherm} identification needs "
                              f"{len(PARAM_NAMES[self.isotherm])}-D bounds, got {self.bounds.dims}")
        if not (math.isfinite(self.fixed_pe) and self.fixed_pe > 0):
            raise ConfigError("fixed_pe must be > 0")
        sim = self.sim.with_(pe=float(self.fixed_pe), isotherm=self.isotherm)
        object.__setattr__(self, "sim", sim)
        self.reference.check_cadence(sim)

    @property
    def param_names(self):
        return PARAM_NAMES[self.isotherm]

    def params_for(self, point):
        point = [float(v) for v in np.atleast_1d(point)]
        if len(point) != len(self.param_names):
            raise ConfigError(f"expected {len(self.param_names)} parameters, got {len(point)}")
        return self.sim.with_(**dict(zip(self.param_names, point)))

    def with_(self, **changes):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return IdentificationProblem(**d)


def simulate_point(point, problem, use_numba=None):
    curve, _ = simulate(problem.params_for(point), use_numba=use_numba)
    return curve


def residual_j(candidate, problem, use_numba=None):
    point = tuple(float(v) for v in np.atleast_1d(candidate))
    try:
        curve = simulate_point(point, problem, use_numba)
    except (SolverError, ConfigError) as exc:
        raise ObjectiveError(f"direct problem failed at {point}: {exc}", point=point) from exc
    diff = curve.values - problem.reference.values
    return float(np.sum(diff * diff) * problem.sim.dt)


class ResidualObjective:
    """Picklable ``point -> J`` callable for process pools."""

    def __init__(self, problem, use_numba=None):
        self.problem = problem
        self.use_numba = use_numba

    def __call__(self, point):
        return residual_j(point, self.problem, self.use_numba)


# ---------------------------------------------------------------------------
# grid scan
# ---------------------------------------------------------------------------


@dataclass
class ScanResult:
    names: tuple  # the two free parameters
    axis1: np.ndarray
    axis2: np.ndarray
    j: np.ndarray  # (n1, n2); NaN marks a failed cell
    fixed: dict
    failed: list  # [(i, k, message)]

    @property
    def argmin(self):
        if np.all(np.isnan(self.j)):
            return None
        i, k = np.unravel_index(np.nanargmin(self.j), self.j.shape)
        return int(i), int(k)

    @property
    def argmin_point(self):
        cell = self.argmin
        return None if cell is None else (float(self.axis1[cell[0]]), float(self.axis2[cell[1]]))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["p1", "p2", "J"])
            for i, a in enumerate(self.axis1):
                for k, b in enumerate(self.axis2):
                    w.writerow([f"{a:.17g}", f"{b:.17g}", f"{self.j[i, k]:.17g}"])

    def sidecar(self):
        cell = self.argmin
        return {
            "p1": self.names[0],
            "p2": self.names[1],
            "bounds": {self.names[0]: [float(self.axis1[0]), float(self.axis1[-1])],
                       self.names[1]: [float(self.axis2[0]), float(self.axis2[-1])]},
            "grid": [int(self.axis1.size), int(self.axis2.size)],
            "fixed": self.fixed,
            "argmin": None if cell is None else {
                "cell": list(cell), "point": list(self.argmin_point),
                "J": float(self.j[cell])},
            "failed_cells": [[i, k] for i, k, _ in self.failed],
        }

    def write(self, csv_path, json_path):
        self.to_csv(csv_path)
        with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.sidecar(), fh, indent=2)
            fh.write("\n")


def _safe_residual(args):
    objective, point = args
    try:
        return objective(point), None
    except ObjectiveError as exc:
        return math.nan, str(exc)


def grid_scan(problem, grid, fixed=None, executor=None, use_numba=None):
    """Evaluate J on a uniform tensor grid over two free parameters.

    ``fixed`` is ``(name, value)`` and is required for three-parameter
    problems. Failed simulations become NaN cells listed in ``failed``.
    """
    names = problem.param_names
    n1, n2 = (int(g) for g in grid)
    if n1 < 2 or n2 < 2:
        raise ConfigError("grid sizes must be >= 2")
    if len(names) == 3:
        if fixed is None:
            raise ConfigError("a three-parameter scan needs exactly one fixed parameter")
        fname, fval = fixed
        if fname not in names:
            raise ConfigError(f"unknown parameter {fname!r}; expected one of {names}")
        free = [k for k, nm in enumerate(names) if nm != fname]
        fixed_map = {fname: float(fval)}
    elif fixed is not None:
        raise ConfigError("a two-parameter scan has no parameter to fix")
    else:
        free, fixed_map = [0, 1], {}
    lo, hi = problem.bounds.lo, problem.bounds.hi
    axis1 = np.linspace(lo[free[0]], hi[free[0]], n1)
    axis2 = np.linspace(lo[free[1]], hi[free[1]], n2)
    points = []
    for a in axis1:
        for b in axis2:
            p = [0.0] * len(names)
            p[free[0]], p[free[1]] = float(a), float(b)
            for nm, v in fixed_map.items():
                p[names.index(nm)] = v
            points.append(tuple(p))
    objective = ResidualObjective(problem, use_numba)
    tasks = [(objective, p) for p in points]
    if executor is None:
        out = [_safe_residual(t) for t in tasks]
    else:
        out = list(executor.map(_safe_residual, tasks))
    j = np.array([v for v, _ in out]).reshape(n1, n2)
    failed = [(idx // n2, idx % n2, msg) for idx, (_, msg) in enumerate(out) if msg is not None]
    for i, k, msg in failed:
        log.warning("scan cell (%d, %d) failed: %s", i, k, msg)
    return ScanResult((names[free[0]], names[free[1]]), axis1, axis2, j, fixed_map, failed)


# ---------------------------------------------------------------------------
# MBC identification
# ---------------------------------------------------------------------------


@dataclass
class IdentificationResult:
    problem: IdentificationProblem
    mbc_result: mbc.MbcResult
    e_rel: list  # per extremum, same order as mbc_result.extrema

    @property
    def best(self):
        return self.mbc_result.best

    def report(self):
        """JSON-ready summary; deliberately free of timings and worker counts."""
        names = self.problem.param_names
        res = self.mbc_result
        return {
            "isotherm": self.problem.isotherm,
            "parameters": list(names),
            "bounds": {nm: [lo, hi] for nm, lo, hi in
                       zip(names, self.problem.bounds.lo, self.problem.bounds.hi)},
            "fixed_pe": self.problem.fixed_pe,
            "transport": self.problem.sim.to_dict(),
            "mbc": self.problem.mbc.to_dict(),
            "reference": self.problem.reference.provenance,
            "nfe": res.nfe,
            "iterations": res.iterations,
            "extrema": [
                {"point": dict(zip(names, p)), "J": v, "e_rel": e}
                for (p, v), e in zip(res.extrema, self.e_rel)
            ],
            "regions": [
                {"id": r.region_id, "kind": r.kind, "iterations": r.iterations,
                 "divider": r.divider, "converged": r.converged, "J": r.value}
                for r in res.regions
            ],
        }

    def write_report(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.report(), fh, indent=2)
            fh.write("\n")


def identify(problem, executor=None, chunksize=1, trace=False, use_numba=None):
    """Run MBC on J over the problem bounds.

    NFE counts direct simulations made by the optimizer; the extra runs that
    evaluate E_rel of the reported extrema are not included.
    """
    objective = ResidualObjective(problem, use_numba)
    evaluator = mbc.Evaluator(objective, executor=executor, chunksize=chunksize)
    res = mbc.run(objective, problem.bounds, problem.mbc, evaluator=evaluator, trace=trace)
    e_rel = [relative_error(simulate_point(p, problem, use_numba), problem.reference)
             for p, _ in res.extrema]
    return IdentificationResult(problem, res, e_rel)
