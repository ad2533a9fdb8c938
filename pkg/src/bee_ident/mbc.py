"""Modified Bee Colony (MBC) optimizer.

Scouts sample the search box uniformly; the sorted scouts are clustered into
regions by Euclidean distance; each region is refined by waves of agent bees
drawn around its current extremum. A region whose extremum has not improved
for ``stop_fail`` consecutive waves shrinks its box to ``d / divider``
(``divider`` = 2, 4, 6, ...) and stops once two consecutive shrink events
record extrema no further apart than ``epsilon``.

Minimization throughout. All random draws of a wave happen before the wave
is evaluated, so results do not depend on how evaluations are scheduled.
"""

from dataclasses import asdict, dataclass, field
import csv
import logging
import math

import numpy as np

from .errors import ConfigError, ObjectiveError

log = logging.getLogger(__name__)

BEST = "best"
PERSPECTIVE = "perspective"


@dataclass(frozen=True)
class SearchDomain:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if len(lo) == 0 or len(lo) != len(hi):
            raise ConfigError("lo and hi must be non-empty and of equal length")
        for i, (a, b) in enumerate(zip(lo, hi)):
            if not (math.isfinite(a) and math.isfinite(b) and a < b):
                raise ConfigError(f"need lo[{i}] < hi[{i}], got {a} and {b}")

    @property
    def dims(self):
        return len(self.lo)

    @property
    def lo_array(self):
        return np.array(self.lo)

    @property
    def hi_array(self):
        return np.array(self.hi)

    def contains(self, point):
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lo_array) and np.all(p <= self.hi_array))

    def clamp(self, points):
        return np.clip(points, self.lo_array, self.hi_array)

    @classmethod
    def from_bounds(cls, bounds):
        """Build from ``[(lo0, hi0), (lo1, hi1), ...]``."""
        lo, hi = zip(*bounds)
        return cls(lo, hi)


@dataclass(frozen=True)
class MbcConfig:
    n_best: int = 1
    m_persp: int = 2
    half_widths: tuple = (1.0, 1.0)
    delta: float = 1.0
    sb: int = 200
    abb: int = 50
    abp: int = 40
    stop_fail: int = 5
    epsilon: float = 1e-8
    max_iter: int = 10_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "half_widths", tuple(float(v) for v in self.half_widths))
        ints = ("n_best", "m_persp", "sb", "abb", "abp", "stop_fail", "max_iter")
        for name in ints:
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 0:
                raise ConfigError(f"{name} must be a non-negative integer")
        if self.n_best + self.m_persp < 1:
            raise ConfigError("n_best + m_persp must be >= 1")
        if self.m_persp > 0 and self.abp < 1:
            raise ConfigError("abp must be >= 1 when m_persp > 0")
        if self.n_best > 0 and self.abb < 1:
            raise ConfigError("abb must be >= 1 when n_best > 0")
        for name in ("sb", "stop_fail", "max_iter"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.half_widths or any(not (math.isfinite(h) and h > 0) for h in self.half_widths):
            raise ConfigError("half_widths must be positive")
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ConfigError("delta must be positive")
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ConfigError("epsilon must be positive")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must fit in an unsigned 64-bit integer")

    def check_domain(self, domain):
        if len(self.half_widths) != domain.dims:
            raise ConfigError(
                f"half_widths has {len(self.half_widths)} entries, domain has {domain.dims} dims")

    def to_dict(self):
        d = asdict(self)
        d["half_widths"] = list(self.half_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown MBC parameters: {sorted(unknown)}")
        return cls(**known)


@dataclass
class Region:
    center: np.ndarray
    value: float
    kind: str
    half_widths: np.ndarray  # initial half-widths d
    cur_half_widths: np.ndarray
    region_id: int = 0
    fail_count: int = 0
    divider: int = 0
    shrink_history: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


@dataclass
class MbcResult:
    extrema: list  # [(point tuple, value)], ascending by value
    nfe: int
    iterations: int
    regions: list = field(default_factory=list)
    per_region_trace: list = field(default_factory=list)  # (region_id, iteration, value, center)

    @property
    def best(self):
        return self.extrema[0]


class IterationCounter:
    """Global wave counter shared by all regions."""

    def __init__(self, value=0):
        self.value = value


class Evaluator:
    """Evaluates batches of points in order and counts evaluations.

    ``executor`` is anything with an order-preserving ``map`` (for example a
    ``concurrent.futures`` pool); ``None`` evaluates serially.
    """

    def __init__(self, objective, executor=None, chunksize=1):
        self.objective = objective
        self.executor = executor
        self.chunksize = chunksize
        self.nfe = 0

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        if self.executor is None:
            values = [self.objective(p) for p in points]
        else:
            values = list(self.executor.map(self.objective, points, chunksize=self.chunksize))
        self.nfe += len(points)
        out = np.array(values, dtype=float)
        bad = ~np.isfinite(out)
        if bad.any():
            i = int(np.argmax(bad))
            raise ObjectiveError(
                f"objective returned {out[i]!r} at point {tuple(points[i].tolist())}",
                point=tuple(points[i].tolist()))
        return out


def _as_evaluator(objective, evaluator):
    return evaluator if evaluator is not None else Evaluator(objective)


def sample_box(center, half_widths, domain, rng, size=None):
    """Uniform draw(s) from ``center +/- half_widths``, clamped into the domain.

    With ``size=k`` returns a ``(k, dims)`` array; the draws consume the
    stream exactly as ``k`` successive single-point calls.
    """
    center = np.asarray(center, dtype=float)
    hw = np.asarray(half_widths, dtype=float)
    shape = (center.size,) if size is None else (size, center.size)
    u = rng.random(shape)
    return domain.clamp(center + hw * (2.0 * u - 1.0))


def scout_phase(objective, domain, sb, rng, evaluator=None):
    """Uniform scouts over the domain, sorted ascending by objective value."""
    if sb < 1:
        raise ConfigError("sb must be >= 1")
    ev = _as_evaluator(objective, evaluator)
    lo, hi = domain.lo_array, domain.hi_array
    pts = lo + (hi - lo) * rng.random((sb, domain.dims))
    pts = domain.clamp(pts)
    vals = ev(pts)
    order = np.argsort(vals, kind="stable")
    return [(pts[i].copy(), float(vals[i])) for i in order]


def form_regions(scouts, delta, n_best, m_persp, half_widths=None):
    """Cluster sorted scouts: a scout founds a region iff it lies farther than
    ``delta`` from every existing centre; the first ``n_best`` foundings are
    best regions, the next ``m_persp`` perspective ones."""
    if not scouts:
        raise ConfigError("cannot form regions from an empty scout list")
    limit = n_best + m_persp
    regions = []
    for point, value in scouts:
        if len(regions) >= limit:
            break
        p = np.asarray(point, dtype=float)
        if all(np.linalg.norm(p - r.center) > delta for r in regions):
            kind = BEST if len(regions) < n_best else PERSPECTIVE
            hw = np.ones_like(p) if half_widths is None else np.asarray(half_widths, dtype=float)
            regions.append(Region(center=p.copy(), value=float(value), kind=kind,
                                  half_widths=hw.copy(), cur_half_widths=hw.copy(),
                                  region_id=len(regions)))
    return regions


def refine_region(region, objective, domain, config, rng, counter, evaluator=None, trace=None):
    """Agent-wave refinement of one region until it converges or the global
    budget ``config.max_iter`` is exhausted."""
    ev = _as_evaluator(objective, evaluator)
    hw0 = np.asarray(config.half_widths, dtype=float)
    region.half_widths = hw0.copy()
    region.cur_half_widths = hw0.copy()
    region.divider = 0
    region.fail_count = 0
    agents = config.abb if region.kind == BEST else config.abp
    while counter.value < config.max_iter:
        counter.value += 1
        region.iterations += 1
        pts = sample_box(region.center, region.cur_half_widths, domain, rng, size=agents)
        vals = ev(pts)
        i = int(np.argmin(vals))
        if vals[i] < region.value:
            region.center = pts[i].copy()
            region.value = float(vals[i])
            region.fail_count = 0
        else:
            region.fail_count += 1
        if trace is not None:
            trace.append((region.region_id, counter.value, region.value, tuple(region.center.tolist())))
        log.debug("region %d iter %d value %.10g", region.region_id, counter.value, region.value)
        if region.fail_count == config.stop_fail:
            region.fail_count = 0
            region.divider += 2
            region.cur_half_widths = hw0 / region.divider
            region.shrink_history.append(region.center.copy())
            if len(region.shrink_history) >= 2:
                gap = np.linalg.norm(region.shrink_history[-1] - region.shrink_history[-2])
                if gap <= config.epsilon:
                    region.converged = True
                    break
    return region


def run(objective, domain, config, evaluator=None, trace=False):
    """Full MBC run; returns all region extrema sorted ascending by value."""
    config.check_domain(domain)
    ev = _as_evaluator(objective, evaluator)
    start_nfe = ev.nfe
    rng = np.random.default_rng(config.seed)
    scouts = scout_phase(objective, domain, config.sb, rng, ev)
    regions = form_regions(scouts, config.delta, config.n_best, config.m_persp, config.half_widths)
    counter = IterationCounter()
    rows = [] if trace else None
    for region in regions:
        if counter.value >= config.max_iter:
            break
        log.info("region %d (%s) start at %s value %.10g", region.region_id, region.kind,
                 np.array2string(region.center, precision=6), region.value)
        refine_region(region, objective, domain, config, rng, counter, ev, rows)
        log.info("region %d done after %d iterations: value %.10g converged=%s",
                 region.region_id, region.iterations, region.value, region.converged)
    order = sorted(range(len(regions)), key=lambda k: regions[k].value)
    extrema = [(tuple(regions[k].center.tolist()), regions[k].value) for k in order]
    return MbcResult(extrema=extrema, nfe=ev.nfe - start_nfe, iterations=counter.value,
                     regions=regions, per_region_trace=rows or [])


def write_trace_csv(result, path):
    dims = len(result.extrema[0][0]) if result.extrema else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "iteration", "value"] + [f"x{i}" for i in range(dims)])
        for rid, it, val, center in result.per_region_trace:
            w.writerow([rid, it, f"{val:.17g}"] + [f"{v:.17g}" for v in center])
