"""Named identification setups used by the CLI and the test-suite."""

from dataclasses import dataclass

from .mbc import MbcConfig, SearchDomain
from .transport import TransportParams

HENRY_TRUTH = TransportParams(pe=10.0, da_a=0.005, da_d=0.05, isotherm="henry",
                              dt=0.1, t_end=40.0)
LANGMUIR_TRUTH = TransportParams(pe=10.0, da_a=100.0, da_d=1.0, m_cap=1000.0,
                                 isotherm="langmuir", dt=30.0, t_end=1800.0)

HENRY_BOUNDS = SearchDomain((0.0, 0.0), (0.01, 0.1))
LANGMUIR_BOUNDS = SearchDomain((60.0, 0.0, 800.0), (140.0, 2.0, 1200.0))

_HENRY_MBC = dict(half_widths=(0.0002, 0.002), delta=0.002, sb=20, abb=20, abp=10,
                  stop_fail=3, epsilon=1e-8)
# the Langmuir misfit has a long shallow valley in which a best region keeps finding
# strict improvements, so the stop test rarely fires; the budget ends these runs
LANGMUIR_MAX_ITER = 100
_LANGMUIR_SMALL = dict(n_best=1, m_persp=2, half_widths=(1.5, 0.015, 5.0), delta=1.0, sb=20,
                       abb=20, abp=5, stop_fail=3, max_iter=LANGMUIR_MAX_ITER)


@dataclass(frozen=True)
class Preset:
    name: str
    truth: TransportParams
    bounds: SearchDomain
    mbc: MbcConfig
    description: str


PRESETS = {p.name: p for p in (
    Preset("henry", HENRY_TRUTH, HENRY_BOUNDS,
           MbcConfig(n_best=2, m_persp=3, seed=6, **_HENRY_MBC),
           "Henry wall, two best and three perspective regions"),
    Preset("henry-single", HENRY_TRUTH, HENRY_BOUNDS,
           MbcConfig(n_best=1, m_persp=0, seed=6, **_HENRY_MBC),
           "Henry wall, a single best region"),
    Preset("langmuir-small", LANGMUIR_TRUTH, LANGMUIR_BOUNDS,
           MbcConfig(epsilon=1e-8, seed=0, **_LANGMUIR_SMALL),
           "Langmuir wall, small colony"),
    Preset("langmuir-relaxed", LANGMUIR_TRUTH, LANGMUIR_BOUNDS,
           MbcConfig(epsilon=1e-3, seed=0, **_LANGMUIR_SMALL),
           "Langmuir wall, small colony with a loose stop criterion"),
    Preset("langmuir-large", LANGMUIR_TRUTH, LANGMUIR_BOUNDS,
           MbcConfig(n_best=2, m_persp=5, half_widths=(1.5, 0.015, 5.0), delta=1.0, sb=200,
                     abb=50, abp=40, stop_fail=5, epsilon=1e-8, seed=0,
                     max_iter=LANGMUIR_MAX_ITER),
           "Langmuir wall, large colony"),
)}


def get(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
