import os
import subprocess
import sys

import numpy as np
import pytest

from bee_ident import _accel
from bee_ident.transport import TransportParams, simulate

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")

CASES = {
    "plain": TransportParams(dt=0.2, t_end=20.0),
    "henry": TransportParams(da_a=0.005, da_d=0.05, dt=0.1, t_end=40.0),
    "legacy": TransportParams(da_a=0.005, da_d=0.05, dt=0.1, t_end=40.0,
                              legacy_flux_coupling=True),
    "langmuir": TransportParams(da_a=100.0, da_d=1.0, m_cap=1000.0, isotherm="langmuir",
                                dt=30.0, t_end=1800.0),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_numba_and_numpy_agree(name):
    p = CASES[name]
    c_nb, s_nb = simulate(p, use_numba=True)
    c_np, s_np = simulate(p, use_numba=False)
    np.testing.assert_allclose(c_nb.values, c_np.values, rtol=0, atol=1e-10)
    np.testing.assert_allclose(s_nb.c, s_np.c, rtol=0, atol=1e-10)
    np.testing.assert_allclose(s_nb.m, s_np.m, rtol=1e-10, atol=1e-10)


def test_env_flag_selects_fallback(tmp_path):
    script = (
        "from bee_ident import _accel\n"
        "from bee_ident.transport import TransportParams, simulate\n"
        "print(_accel.USE_NUMBA)\n"
        "c, _ = simulate(TransportParams(da_a=0.005, da_d=0.05, t_end=4.0))\n"
        "print(repr(float(c.values[-1])))\n"
    )
    outs = {}
    for flag in ("1", "0"):
        env = dict(os.environ, **{_accel.DISABLE_ENV: flag})
        proc = subprocess.run([sys.executable, "-c", script], capture_output=True, text=True,
                              env=env, check=True)
        outs[flag] = proc.stdout.split()
    assert outs["1"][0] == "False" and outs["0"][0] == "True"
    assert float(outs["1"][1]) == pytest.approx(float(outs["0"][1]), abs=1e-12)
