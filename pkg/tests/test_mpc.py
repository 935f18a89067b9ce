import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otnav.config import CostParams, MpcConfig
from otnav.errors import InfeasibleMpcError
from otnav.grid import GridWorld, ScenarioSpec
from otnav.mpc import (
    CONTRACTION_SLACK, LOG_COLUMNS, ControlInput, ObstacleEvent, RobotState, TrackingError,
    load_events, p_norm, parse_events, run_mpc_ot, solve_mpc, step_dynamics, wrap_angle,
)
from otnav.trajectory import from_points, interpolate


def exact_unicycle(state, v, w, t):
    # closed form for constant controls, written with sinc to stay exact as w -> 0
    x, y, th = state
    half = 0.5 * w * t
    chord = v * t * (math.sin(half) / half if half else 1.0)
    return x + chord * math.cos(th + half), y + chord * math.sin(th + half), th + w * t


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert RobotState(0, 0, 2 * math.pi).theta == pytest.approx(0.0, abs=1e-12)


def test_straight_step():
    s = step_dynamics(RobotState(0, 0, 0), ControlInput(1, 0), 0.1)
    assert (s.px, s.py, s.theta) == pytest.approx((0.1, 0.0, 0.0))


def test_turn_in_place():
    s = step_dynamics(RobotState(1, 2, 0), ControlInput(0, 1), 0.5)
    assert (s.px, s.py, s.theta) == pytest.approx((1, 2, 0.5))


def test_circle_closes():
    s = RobotState(0, 0, 0)
    u = ControlInput(1, 1)
    for _ in range(628):
        s = step_dynamics(s, u, 0.01)
    s = step_dynamics(s, u, 2 * math.pi - 6.28)
    assert math.hypot(s.px, s.py) < 1e-6
    assert abs(wrap_angle(s.theta)) < 1e-6


def test_nonpositive_dt_rejected():
    with pytest.raises(ValueError):
        step_dynamics(RobotState(0, 0), ControlInput(1, 0), 0.0)


@settings(max_examples=80, deadline=None)
@given(
    st.floats(-5, 5), st.floats(-5, 5), st.floats(-math.pi, math.pi),
    st.floats(-3, 3), st.floats(-6, 6), st.floats(0.001, 0.1),
)
def test_rk4_matches_closed_form(x, y, th, v, w, dt):
    s = step_dynamics(RobotState(x, y, th), ControlInput(v, w), dt)
    ex, ey, eth = exact_unicycle((x, y, th), v, w, dt)
    # fifth-order local error
    tol = 1e-9 + abs(v) * (abs(w) * dt) ** 5
    assert abs(s.px - ex) <= tol and abs(s.py - ey) <= tol
    assert abs(wrap_angle(s.theta - eth)) < 1e-12


def test_p_norm_and_tracking_error():
    P = np.diag([4.0, 1.0])
    assert p_norm([1.0, 2.0], P) == pytest.approx(math.sqrt(8.0))
    te = TrackingError.of([1, 1], [0, 1], P)
    assert te.e == (1.0, 0.0) and te.p_norm == pytest.approx(2.0)


def test_zero_error_gives_zero_controls():
    cfg = MpcConfig()
    tr = from_points([[1.0, 1.0]])
    sol = solve_mpc(RobotState(1.0, 1.0, 0.0), tr, 0.0, cfg)
    assert np.allclose(sol.controls, 0.0)
    assert sol.cost == pytest.approx(0.0, abs=1e-12)
    assert sol.contraction_ok
    assert sol.controls.shape == (cfg.horizon_steps, 2)
    assert sol.predicted.shape == (cfg.horizon_steps + 1, 3)


def test_offset_contracts():
    cfg = MpcConfig()
    tr = interpolate(list(range(12)), GridWorld(1, 12))
    sol = solve_mpc(RobotState(-0.5, 0.5, 0.0), tr, 0.0, cfg)
    assert sol.p_start == pytest.approx(1.0)
    assert sol.contraction_ok
    assert sol.p_end <= cfg.alpha * sol.p_start + CONTRACTION_SLACK
    assert sol.p_end < 0.2
    lo, hi = np.array(cfg.u_bounds).T
    assert np.all(sol.controls >= lo - 1e-12) and np.all(sol.controls <= hi + 1e-12)


def test_immobile_robot_flags_failure():
    cfg = MpcConfig(u_bounds=((0.0, 0.0), (0.0, 0.0)))
    tr = interpolate(list(range(5)), GridWorld(1, 5))
    sol = solve_mpc(RobotState(-0.5, 0.5, 0.0), tr, 0.0, cfg)
    assert not sol.contraction_ok
    assert np.allclose(sol.controls, 0.0)
    with pytest.raises(InfeasibleMpcError) as info:
        solve_mpc(RobotState(-0.5, 0.5, 0.0), tr, 0.0, cfg, strict=True)
    assert info.value.solution is not None


def test_warm_start_is_no_worse():
    cfg = MpcConfig()
    tr = interpolate([0, 1, 2, 7, 12, 13, 14], GridWorld(3, 5))
    s0 = RobotState(0.3, 0.6, 0.2)
    first = solve_mpc(s0, tr, 0.0, cfg)
    x = first.predicted[cfg.control_steps]
    cold = solve_mpc(RobotState(*x), tr, cfg.Tc, cfg)
    warm = solve_mpc(RobotState(*x), tr, cfg.Tc, cfg, warm=first.controls)
    assert warm.cost <= cold.cost * (1 + 1e-6) + 1e-9


def test_config_validation():
    with pytest.raises(ValueError):
        MpcConfig(Tc=3.0)
    with pytest.raises(ValueError):
        MpcConfig(alpha=1.0)
    with pytest.raises(ValueError):
        MpcConfig(dt=0.03)
    with pytest.raises(ValueError):
        MpcConfig(P=[[1, 0], [0, -1]])


def test_parse_events_forms(tmp_path):
    g = GridWorld(4, 5)
    data = {"events": [
        {"time": 3, "add": [[1, 1]]},
        {"time": 1, "remove": [{"r0": 0, "c0": 0, "r1": 1, "c1": 1}]},
    ]}
    evs = parse_events(data, g)
    assert [e.time for e in evs] == [1.0, 3.0]
    assert evs[0].remove == (0, 1, 5, 6)
    assert evs[1].add == (6,)
    path = tmp_path / "ev.json"
    path.write_text(json.dumps(data["events"]))
    assert load_events(path, g) == evs
    assert evs[1].to_dict(g) == {"time": 3.0, "remove": [], "add": [[1, 1]]}


def _small_scenario():
    g = GridWorld(3, 6, obstacles=frozenset({8, 9}))
    return ScenarioSpec(g, (6, 0), (17, 5), CostParams(corner_cutting=False))


@pytest.fixture(scope="module")
def small_log():
    return run_mpc_ot(_small_scenario())


def test_simulation_arrives(small_log):
    assert small_log.finished
    assert np.all(small_log.final_errors() < 0.25)
    assert small_log.events[0].reason == "initial"
    assert small_log.replan_count >= 0


def test_log_controls_within_bounds(small_log):
    tab = small_log.table()
    assert tab.shape[1] == len(LOG_COLUMNS)
    (vlo, vhi), (wlo, whi) = MpcConfig().u_bounds
    assert np.all((tab[:, 5] >= vlo - 1e-12) & (tab[:, 5] <= vhi + 1e-12))
    assert np.all((tab[:, 6] >= wlo - 1e-12) & (tab[:, 6] <= whi + 1e-12))
    assert np.all(np.abs(tab[:, 4]) <= math.pi + 1e-12)


def test_log_error_columns_consistent(small_log):
    tab = small_log.table()
    assert np.allclose(tab[:, 9], tab[:, 2] - tab[:, 7])
    assert np.allclose(tab[:, 10], tab[:, 3] - tab[:, 8])
    assert np.allclose(tab[:, 11], np.hypot(tab[:, 9], tab[:, 10]), atol=1e-8)


def test_epoch_bookkeeping(small_log):
    cfg = MpcConfig()
    for e in small_log.epochs:
        assert e.contraction_ok == (e.p_end <= cfg.alpha * e.p_start + CONTRACTION_SLACK)
        assert e.time == pytest.approx(e.epoch * cfg.Tc)
    epochs = {e.epoch for e in small_log.epochs}
    assert len(small_log.epochs) == 2 * len(epochs)
    # one row per robot per dt, plus the initial rows
    assert len(small_log.rows) == 2 + len(small_log.epochs) * cfg.control_steps


def test_log_files(small_log, tmp_path):
    small_log.write_csv(tmp_path / "log.csv")
    small_log.write_epochs_csv(tmp_path / "epochs.csv")
    small_log.write_events(tmp_path / "events.json")
    header = (tmp_path / "log.csv").read_text().splitlines()[0]
    assert header == ",".join(LOG_COLUMNS)
    rec = json.loads((tmp_path / "events.json").read_text())
    assert rec["replans"][0]["reason"] == "initial"
    assert set(rec) == {"replans", "obstacle_updates", "contraction_violations"}


def test_obstacle_event_on_target_is_ignored():
    sc = _small_scenario()
    log = run_mpc_ot(sc, [ObstacleEvent(1.0, add=(17,))], max_time=2.0)
    assert log.obstacle_events[0][2] == (17,)
    assert any(e.reason == "obstacle-update" for e in log.events)


def test_max_time_stops_run():
    log = run_mpc_ot(_small_scenario(), max_time=1.0)
    assert not log.finished
    assert log.end_time == pytest.approx(1.0)


def test_tracking_settles_after_last_replan(small_log):
    last = max(e.time for e in small_log.events)
    by_epoch: dict[int, float] = {}
    for e in small_log.epochs:
        if e.time >= last:
            by_epoch[e.epoch] = max(by_epoch.get(e.epoch, 0.0), e.p_end)
    peaks = [by_epoch[k] for k in sorted(by_epoch)]
    assert all(b <= a + CONTRACTION_SLACK for a, b in zip(peaks, peaks[1:]))
    assert peaks[-1] < MpcConfig().arrival_tolerance
