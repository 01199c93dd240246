"""Simulator checks against the centralized reference loop.

The anchor oracle: with zero delay and unit period the message-passing
run must reproduce the flat Jacobi loop bit for bit (up to projection
tolerance), and a synchronous schedule with delays must reproduce it in
dilated time. Staleness bookkeeping is checked against the values the
schedule declares, and message counters against brute-force recounts.
"""

import math

import numpy as np
import pytest

from gainfield.channel import generate_instance
from gainfield.region import ProjectionError
from gainfield.schedule import Topology, build_schedule
from gainfield.simulator import (
    SimOptions,
    SimTrace,
    SimulationError,
    convergence_cycle,
    is_stable,
    run_simulation,
    stability_cycle,
)
from gainfield.utility import (
    UtilityParams,
    adaptive_curvature_row,
    assemble_curvature,
    global_curvature_bounds,
)

from refloop import jacobi_reference

MODES = ("plain", "s1", "s1s2")


def exact_options(mode, n_max, **kw):
    # bound_change_tol=0 sends every refreshed bound so the run tracks
    # the reference loop exactly instead of within a small tolerance
    return SimOptions(mode=mode, n_max=n_max, bound_change_tol=0.0, **kw)


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("seed", [0, 1])
def test_zero_delay_unit_period_matches_reference(mode, seed):
    ch = generate_instance(4, 2, seed=seed)
    topo = Topology.mesh(4, 0)
    sched = build_schedule("async", topo, period=1)
    rounds = 25
    trace = run_simulation(ch, sched, topo,
                           exact_options(mode, n_max=rounds - 1))
    utilities, x_ref, _ = jacobi_reference(ch, rounds=rounds, mode=mode)
    assert np.allclose(trace.final_x, x_ref, atol=1e-10)
    assert np.allclose(trace.u_nats, utilities[1:], atol=1e-10)
    assert trace.init_u_nats == pytest.approx(utilities[0], abs=1e-12)
    assert trace.max_stale_periods == 0
    assert trace.pipeline_lag == 0


@pytest.mark.parametrize("mode", MODES)
def test_sync_mesh_matches_time_dilated_reference(mode):
    ch = generate_instance(4, 2, seed=0)
    topo = Topology.mesh(4, 3)
    sched = build_schedule("sync", topo)
    assert sched.period == 6
    rounds = 30
    trace = run_simulation(
        ch, sched, topo, exact_options(mode, n_max=sched.period * (rounds - 1)))
    utilities, x_ref, _ = jacobi_reference(ch, rounds=rounds, mode=mode)
    assert np.allclose(trace.final_x, x_ref, atol=1e-10)
    assert np.array_equal(trace.ns, np.arange(rounds) * sched.period)
    assert np.allclose(trace.u_nats, utilities[1:], atol=1e-10)
    assert trace.max_stale_periods == 0
    assert trace.stale_excess <= 0


def test_sync_chain_matches_time_dilated_reference():
    ch = generate_instance(4, 2, seed=1)
    topo = Topology.chain(4, 2)
    sched = build_schedule("sync", topo)
    assert sched.period == 12
    rounds = 12
    trace = run_simulation(
        ch, sched, topo,
        exact_options("s1s2", n_max=sched.period * (rounds - 1)))
    utilities, x_ref, _ = jacobi_reference(ch, rounds=rounds, mode="s1s2")
    assert np.allclose(trace.final_x, x_ref, atol=1e-10)
    assert np.allclose(trace.u_nats, utilities[1:], atol=1e-10)
    assert trace.max_stale_periods == 0


def test_zero_delay_sync_equals_unit_async():
    ch = generate_instance(4, 2, seed=0)
    topo = Topology.mesh(4, 0)
    a = run_simulation(ch, build_schedule("async", topo, period=1), topo,
                       exact_options("s1s2", n_max=40))
    s = run_simulation(ch, build_schedule("sync", topo), topo,
                       exact_options("s1s2", n_max=40))
    assert np.array_equal(a.ns, s.ns)
    assert np.array_equal(a.u_nats, s.u_nats)
    assert np.array_equal(a.final_x, s.final_x)
    assert np.array_equal(a.messages, s.messages)


@pytest.mark.parametrize("kind,period,expected", [
    ("mesh", 3, 1),
    ("mesh", 1, 3),
    ("chain", 1, 9),
])
def test_async_staleness_matches_declared(kind, period, expected):
    ch = generate_instance(4, 2, seed=0)
    topo = getattr(Topology, kind)(4, 3)
    sched = build_schedule("async", topo, period=period)
    assert int(sched.stale_x.max()) == expected
    trace = run_simulation(ch, sched, topo,
                           SimOptions(mode="s1s2", n_max=400))
    assert trace.max_stale_periods == expected
    assert trace.stale_excess == 0
    assert trace.pipeline_lag == 0


def test_long_run_freezes_and_is_stable():
    ch = generate_instance(4, 2, seed=1)
    topo = Topology.mesh(4, 3)
    sched = build_schedule("async", topo, period=1)
    trace = run_simulation(ch, sched, topo,
                           SimOptions(mode="s1s2", n_max=10_000))
    assert trace.frozen_at is not None
    assert trace.ns[-1] == 10_000
    assert is_stable(trace, tol=1e-4)
    assert np.all(trace.last_move < 1e-6)
    assert trace.u_bits[-1] == trace.u_bits[-2]
    assert stability_cycle(trace, tol=1e-4) is not None


def test_freeze_fastforward_is_consistent():
    ch = generate_instance(4, 2, seed=0)
    topo = Topology.mesh(4, 3)
    sched = build_schedule("async", topo, period=1)
    frozen = run_simulation(ch, sched, topo,
                            SimOptions(mode="s1s2", n_max=2500))
    full = run_simulation(
        ch, sched, topo,
        SimOptions(mode="s1s2", n_max=2500, freeze_fastforward=False))
    assert frozen.frozen_at is not None and full.frozen_at is None
    assert np.allclose(frozen.final_x, full.final_x, atol=1e-9)
    assert frozen.u_bits[-1] == pytest.approx(full.u_bits[-1], abs=1e-9)
    assert frozen.messages[-1] == full.messages[-1]


def test_message_counts_match_brute_force():
    ch = generate_instance(3, 2, seed=0)
    topo = Topology.chain(3, 1)
    sched = build_schedule("async", topo, period=2)
    n_max = 37
    trace = run_simulation(
        ch, sched, topo,
        SimOptions(mode="plain", n_max=n_max, freeze_fastforward=False))

    def brute(n):
        total = 0
        for src in range(3):
            for dest in range(3):
                if dest == src:
                    continue
                d = topo.delay(src, dest)
                for s in range(0, n + 1):
                    if not sched.fires_update(src, s):
                        continue
                    if s + max(d, 1) <= n:
                        total += 1          # gain report
                    if s + d <= n:
                        total += 1          # derivative report
        return total

    for i, n in enumerate(trace.ns):
        assert trace.messages[i] == brute(int(n))
    assert np.all(np.diff(trace.messages) >= 0)


def test_trace_reports_utility_two_ways():
    ch = generate_instance(4, 2, seed=0)
    topo = Topology.mesh(4, 3)
    sched = build_schedule("async", topo, period=3)
    trace = run_simulation(ch, sched, topo,
                           SimOptions(mode="s1s2", n_max=300))
    k = ch.n_users
    # the bits number is the geometric-mean rate implied by the sum of
    # log rates, so the two trace columns determine each other
    rebuilt = np.exp(trace.u_nats / k) / math.log(2.0)
    assert np.allclose(trace.u_bits, rebuilt, atol=1e-8)
    assert np.allclose(trace.x_direct[-1], np.diag(trace.final_x))
    from gainfield.utility import pf_utility_bits
    assert trace.u_bits[-1] == pf_utility_bits(trace.final_x, ch.sigma2)


def test_runs_are_deterministic(tmp_path):
    ch = generate_instance(4, 2, seed=2)
    topo = Topology.chain(4, 3)
    sched = build_schedule("async", topo, period=1)
    opts = SimOptions(mode="s1s2", n_max=500)
    a = run_simulation(ch, sched, topo, opts)
    b = run_simulation(ch, sched, topo, opts)
    for name in ("ns", "u_bits", "u_nats", "x_direct", "stale_periods",
                 "move_max", "messages", "final_x", "last_move"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_csv(pa)
    b.write_csv(pb)
    assert pa.read_bytes() == pb.read_bytes()


def _synthetic_trace(ns, u_bits, move_max):
    n = len(ns)
    z = np.zeros(n)
    k = 2
    return SimTrace(
        ns=np.array(ns), u_bits=np.array(u_bits, dtype=float),
        u_nats=np.array(u_bits, dtype=float), x_direct=np.zeros((n, k)),
        stale_periods=np.zeros(n, dtype=int),
        move_max=np.array(move_max, dtype=float),
        messages=np.zeros(n, dtype=np.int64), final_x=np.zeros((k, k)),
        final_covs=[], init_x=np.zeros((k, k)), init_u_nats=0.0,
        init_u_bits=0.0, last_move=z[:k], max_stale_periods=0,
        stale_excess=0, pipeline_lag=0, frozen_at=None, n_max=int(ns[-1]),
        algorithm="async", mode="s1s2")


def test_convergence_cycle_synthetic():
    t = _synthetic_trace([0, 10, 17, 20, 100], [1.0, 5.0, 9.9, 10.0, 10.0],
                         [1, 1, 1, 1, 0])
    assert convergence_cycle(t) == 17
    flat = _synthetic_trace([0, 5], [3.0, 3.0], [0, 0])
    assert convergence_cycle(flat) == 0


def test_stability_cycle_synthetic():
    t = _synthetic_trace([0, 2, 4, 6], [1, 2, 3, 3],
                         [1.0, 0.5, 1e-7, 1e-8])
    assert stability_cycle(t, tol=1e-6) == 4
    quiet = _synthetic_trace([0, 2], [1, 1], [1e-9, 1e-9])
    assert stability_cycle(quiet, tol=1e-6) == 0
    busy = _synthetic_trace([0, 2], [1, 1], [1.0, 1.0])
    assert stability_cycle(busy, tol=1e-6) is None


def test_projection_failure_aborts_with_partial_trace():
    ch = generate_instance(4, 2, seed=0)
    topo = Topology.mesh(4, 0)
    sched = build_schedule("async", topo, period=1)
    with pytest.raises(SimulationError) as exc:
        run_simulation(ch, sched, topo,
                       SimOptions(mode="plain", n_max=50,
                                  projection_max_iter=1))
    assert isinstance(exc.value.cause, ProjectionError)
    assert exc.value.trace is not None


def test_incompatible_instance_is_rejected():
    ch = generate_instance(4, 2, seed=0)
    topo = Topology.mesh(4, 3)
    sched = build_schedule("async", topo, period=1)
    params = UtilityParams(sigma2=ch.sigma2, mu=5.0)
    with pytest.raises(ValueError, match="floor"):
        run_simulation(ch, sched, topo,
                       SimOptions(mode="s1s2", n_max=10, params=params))


def test_oversized_step_needs_explicit_waiver():
    ch = generate_instance(4, 2, seed=0)
    topo = Topology.mesh(4, 0)
    sched = build_schedule("async", topo, period=1)
    with pytest.raises(ValueError, match="guard"):
        run_simulation(ch, sched, topo, SimOptions(gamma=4.0, n_max=5))
    trace = run_simulation(
        ch, sched, topo,
        SimOptions(mode="plain", gamma=4.0, n_max=5,
                   enforce_step_guard=False))
    assert trace.ns[-1] == 5


def test_worst_case_rows_assemble_to_global_bounds():
    ch = generate_instance(4, 2, seed=0)
    params = UtilityParams(sigma2=ch.sigma2)
    rows = np.array([
        adaptive_curvature_row(np.zeros(4), ch.gains[:, r], r, params)
        for r in range(4)])
    assert np.allclose(assemble_curvature(rows).kb,
                       global_curvature_bounds(ch.gains, params).kb,
                       atol=1e-12)


def test_csv_layout(tmp_path):
    ch = generate_instance(3, 2, seed=0)
    topo = Topology.mesh(3, 1)
    sched = build_schedule("sync", topo)
    trace = run_simulation(ch, sched, topo, SimOptions(mode="s1", n_max=20))
    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == ("n,u_pf_bits,u_sumlog_nats,x_00,x_11,x_22,"
                        "stale_max,messages,move_max")
    assert len(lines) == len(trace.ns) + 1
    first = lines[1].split(",")
    assert int(first[0]) == trace.ns[0]
    assert float(first[1]) == pytest.approx(trace.u_bits[0])


def test_async_and_sync_land_on_comparable_points():
    # staleness changes the trajectory, so the limits need not be
    # identical, but both must be stationary and essentially as good
    ch = generate_instance(4, 2, seed=0)
    topo = Topology.mesh(4, 3)
    a = run_simulation(ch, build_schedule("async", topo, period=1), topo,
                       SimOptions(mode="s1s2", n_max=10_000))
    s = run_simulation(ch, build_schedule("sync", topo), topo,
                       SimOptions(mode="s1s2", n_max=10_000))
    assert is_stable(a, tol=1e-6) and is_stable(s, tol=1e-6)
    assert a.u_bits[-1] == pytest.approx(s.u_bits[-1], abs=1e-3)
    assert np.allclose(a.final_x, s.final_x, atol=1e-2)


class TestPricedUpdates:
    """Runs where updates are priced best responses on fresh gains."""

    def make(self, seed=0, n_max=10_000, kind="mesh"):
        ch = generate_instance(4, 2, seed=seed)
        topo = (Topology.mesh(4, 3) if kind == "mesh"
                else Topology.chain(4, 3))
        sched = build_schedule("dp", topo, measure_cycles=1)
        trace = run_simulation(ch, sched, topo,
                               SimOptions(mode="plain", n_max=n_max))
        return ch, topo, sched, trace

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_utility_never_decreases(self, seed):
        _, _, _, trace = self.make(seed=seed)
        assert trace.algorithm == "dp"
        steps = np.diff(trace.u_bits)
        assert steps.min() >= -1e-12
        assert trace.u_bits[-1] > trace.u_bits[0]
        assert is_stable(trace, tol=1e-6)

    def test_gains_are_never_stale(self):
        _, _, _, trace = self.make(seed=0)
        assert trace.max_stale_periods == 0
        assert trace.stale_excess == 0

    def test_limit_agrees_with_gradient_runs(self):
        ch, topo, _, trace = self.make(seed=0)
        grad = run_simulation(
            ch, build_schedule("async", topo, period=1), topo,
            SimOptions(mode="s1s2", n_max=10_000))
        assert trace.u_bits[-1] == pytest.approx(grad.u_bits[-1], abs=1e-3)

    def test_message_count_tracks_update_schedule(self):
        # gains go out right after each update, price reports at the
        # update tick itself; both fan out to the other K - 1 users
        ch, topo, sched, trace = self.make(seed=0, n_max=200, kind="mesh")
        k_users = 4
        for row, n in enumerate(trace.ns):
            expected = 0
            for src in range(k_users):
                fires = [s for s in range(n + 1)
                         if sched.fires_update(src, s)]
                expected += (k_users - 1) * len(
                    [s for s in fires if s + 1 <= n])
                expected += (k_users - 1) * len(fires)
            assert trace.messages[row] == expected
        assert all(b >= a for a, b in zip(trace.messages,
                                          trace.messages[1:]))
