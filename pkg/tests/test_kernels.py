import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from otnav import _backend, _pykernels
from otnav.config import MpcConfig
from otnav.harness import random_scenario
from otnav.mpc import pack_params, solve_mpc, RobotState
from otnav.otcore import solve
from otnav.trajectory import interpolate
from otnav.grid import GridWorld

needs_compiled = pytest.mark.skipif(_backend.compiled_kernels is None, reason="compiled kernels not built")


def test_backend_selector():
    assert _backend.get("python") is _pykernels
    with pytest.raises(ValueError):
        _backend.get("fortran")
    assert _backend.BACKEND in ("compiled", "python")


def test_pure_python_env_switch():
    code = "from otnav import _backend; print(_backend.BACKEND)"
    env = dict(os.environ, OTNAV_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_compiled
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_flow_kernels_agree(seed):
    rng = np.random.default_rng(seed)
    rows, cols = int(rng.integers(3, 15)), int(rng.integers(3, 15))
    n = int(rng.integers(1, 6))
    try:
        sc = random_scenario(rows, cols, n, obstacle_count=int(rng.integers(0, 4)), seed=seed, max_obstacle_size=2)
    except ValueError:  # obstacles left too little room
        assume(False)
    a = solve(sc, kernel="python")
    b = solve(sc, kernel="compiled")
    assert a.moves == b.moves and a.total_cost == b.total_cost


@needs_compiled
def test_compiled_rejects_bigint_costs():
    from otnav.config import CostParams
    from otnav.grid import ScenarioSpec

    g = GridWorld(1, 30, obstacles=frozenset(range(1, 29)))
    sc = ScenarioSpec(g, (0,), (29,), CostParams(jump_cap=None))
    with pytest.raises(ValueError):
        solve(sc, kernel="compiled")
    assert solve(sc, kernel="python").total_cost == 10**29


@needs_compiled
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_mpc_kernels_agree(seed):
    rng = np.random.default_rng(seed)
    cfg = MpcConfig()
    H = cfg.horizon_steps
    x0 = np.array([rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(-3, 3)])
    u = rng.uniform(-2, 2, size=(H, 2))
    ref = np.cumsum(rng.normal(scale=0.05, size=(H + 1, 2)), axis=0) + 1.5
    prm = pack_params(cfg, float(rng.uniform(0.1, 2)), 1e3, ((0, 3), (0, 3)))
    py, cy = _backend.python_kernels, _backend.compiled_kernels
    assert np.allclose(py.unicycle_rollout(x0, u, cfg.dt), cy.unicycle_rollout(x0, u, cfg.dt), atol=1e-12)
    jp, gp = py.mpc_cost_grad(x0, u, ref, prm, True)
    jc, gc = cy.mpc_cost_grad(x0, u, ref, prm, True)
    assert jp == pytest.approx(jc, rel=1e-10)
    assert np.allclose(np.asarray(gp), np.asarray(gc), rtol=1e-8, atol=1e-10)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    cfg = MpcConfig()
    H = cfg.horizon_steps
    x0 = np.array([1.0, 1.0, 0.3])
    u = rng.uniform(-1, 1, size=(H, 2))
    ref = np.tile([1.4, 1.2], (H + 1, 1))
    prm = pack_params(cfg, 0.5, 1e2, ((0, 3), (0, 3)))
    for kern in filter(None, (_backend.python_kernels, _backend.compiled_kernels)):
        _, g = kern.mpc_cost_grad(x0, u, ref, prm, True)
        g = np.asarray(g).reshape(H, 2)
        eps = 1e-6
        for k, j in [(0, 0), (3, 1), (H // 2, 0), (H - 1, 1)]:
            up, dn = u.copy(), u.copy()
            up[k, j] += eps
            dn[k, j] -= eps
            fd = (kern.mpc_cost_grad(x0, up, ref, prm, False)[0] - kern.mpc_cost_grad(x0, dn, ref, prm, False)[0]) / (2 * eps)
            assert g[k, j] == pytest.approx(fd, rel=1e-4, abs=1e-6)


@needs_compiled
def test_solve_mpc_same_on_both_kernels():
    cfg = MpcConfig()
    tr = interpolate([0, 1, 2, 7, 12], GridWorld(3, 5))
    s = RobotState(0.2, 0.7, 0.4)
    a = solve_mpc(s, tr, 0.0, cfg, kernel="python")
    b = solve_mpc(s, tr, 0.0, cfg, kernel="compiled")
    assert a.contraction_ok == b.contraction_ok
    assert a.cost == pytest.approx(b.cost, rel=1e-6, abs=1e-9)
    assert np.allclose(a.controls, b.controls, atol=1e-5)
