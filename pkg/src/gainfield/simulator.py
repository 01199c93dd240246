"""Deterministic event-driven simulation of distributed gain updates.

Each user pairs a transmitter with its receiver. A user knows its own
covariance and hence its own gain column exactly; everything else
arrives as messages over the backhaul: gain scalars sent after each
update, partial derivatives computed from each user's (possibly stale)
row copy, and, when adaptive curvature is on, refreshed bound scalars.
Updates never wait: each user fires at its scheduled ticks with
whatever information has arrived.

A single integer clock drives the run. Messages enqueue at the instant
they are produced and become visible `delay` ticks later; same-tick
visibility (zero delay) is honored for derivative and bound messages so
a degenerate delay-free schedule reproduces a centralized loop exactly.
Once nothing moves for a window longer than every delay and period, the
tail of the run is provably periodic and is extrapolated instead of
simulated tick by tick.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, local_view
from .engine import check_step_scale, compute_scaling, sgp_step
from .region import ProjectionError, RegionHandle, power_gain
from .schedule import Schedule, Topology
from .utility import (
    UtilityParams,
    adaptive_curvature_row,
    assemble_curvature,
    pf_utility_bits,
    row_gradient,
    sum_log_utility,
    utility_gradient,
)

__all__ = [
    "GAIN",
    "PARTIAL",
    "BOUND",
    "Message",
    "SimOptions",
    "SimTrace",
    "SimulationError",
    "mrt_covariance",
    "run_simulation",
    "convergence_cycle",
    "stability_cycle",
    "is_stable",
]

GAIN = "power_gain"
PARTIAL = "partial_derivative"
BOUND = "curvature_bound"

_MODES = ("plain", "s1", "s1s2")


class SimulationError(RuntimeError):
    """Raised when a run aborts; carries the partial trace and cause."""

    def __init__(self, message, trace=None, cause=None):
        super().__init__(message)
        self.trace = trace
        self.cause = cause


@dataclass(frozen=True)
class Message:
    kind: str
    source: int
    dest: int
    payload: tuple
    sent_at: int
    deliver_at: int


@dataclass(frozen=True)
class SimOptions:
    """Run parameters. mode selects the update coordinates: 'plain'
    uses worst-case curvature in raw gain units, 's1' runs in
    unit-normalized coordinates, 's1s2' additionally tightens curvature
    to the observed gain envelopes. n_max is the last simulated clock
    tick (inclusive)."""

    mode: str = "s1s2"
    gamma: float = 1.99
    n_max: int = 10_000
    params: UtilityParams | None = None
    enforce_step_guard: bool = True
    projection_tol: float = 1e-6
    projection_max_iter: int = 10_000
    instant_bounds: bool = False
    freeze_fastforward: bool = True
    freeze_x_tol: float = 1e-13
    bound_change_tol: float = 1e-12


@dataclass
class SimTrace:
    """Recorded run: one row per tick at which any user updated, plus a
    closing row at n_max. Utility is constant between rows."""

    ns: np.ndarray
    u_bits: np.ndarray
    u_nats: np.ndarray
    x_direct: np.ndarray        # (rows, K) own gains x_{k,k}
    stale_periods: np.ndarray   # (rows,) max staleness consumed that tick
    move_max: np.ndarray        # (rows,) largest update step that tick
    messages: np.ndarray        # (rows,) cumulative deliveries
    final_x: np.ndarray
    final_covs: list
    init_x: np.ndarray
    init_u_nats: float
    init_u_bits: float
    last_move: np.ndarray       # (K,) per-user move at its final update
    max_stale_periods: int
    stale_excess: int           # max of measured minus declared staleness
    pipeline_lag: int           # fires between held and newest-arrived value
    frozen_at: int | None
    n_max: int
    algorithm: str
    mode: str

    def write_csv(self, path) -> None:
        k_users = self.x_direct.shape[1]
        cols = ",".join(f"x_{k}{k}" for k in range(k_users))
        lines = [f"n,u_pf_bits,u_sumlog_nats,{cols},stale_max,messages,"
                 f"move_max"]
        for i in range(len(self.ns)):
            gains = ",".join(f"{v:.17g}" for v in self.x_direct[i])
            lines.append(
                f"{self.ns[i]},{self.u_bits[i]:.17g},{self.u_nats[i]:.17g},"
                f"{gains},{self.stale_periods[i]},{self.messages[i]},"
                f"{self.move_max[i]:.17g}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def mrt_covariance(region: RegionHandle) -> np.ndarray:
    """Full-power single-stream start aimed at the own receiver."""
    h = region.vectors[region.owner]
    return np.outer(h, h.conj()) / float(np.vdot(h, h).real)


def convergence_cycle(trace: SimTrace, fraction: float = 0.99):
    """First clock tick at which the reported utility reaches the given
    fraction of its final value; None for an empty trace."""
    if len(trace.ns) == 0:
        return None
    target = fraction * trace.u_bits[-1]
    hits = np.nonzero(trace.u_bits >= target - 1e-15)[0]
    if hits.size == 0:
        return None
    return int(trace.ns[hits[0]])


def stability_cycle(trace: SimTrace, tol: float = 1e-6):
    """First recorded tick after which every update step stays below
    tol; None if the final recorded update still moves at least tol."""
    if len(trace.ns) == 0:
        return None
    moving = np.nonzero(trace.move_max >= tol)[0]
    if moving.size == 0:
        return int(trace.ns[0])
    if moving[-1] == len(trace.ns) - 1:
        return None
    return int(trace.ns[moving[-1] + 1])


def is_stable(trace: SimTrace, tol: float = 1e-6) -> bool:
    """Whether every user's final update moved less than tol."""
    return bool(np.all(trace.last_move < tol))


class _Agent:
    """Mutable per-user simulation state."""

    __slots__ = ("k", "region", "scale", "q", "x_col", "row", "row_sent",
                 "lam", "lam_sent", "env_lo", "env_hi", "c_rows", "weights",
                 "dirty", "last_move")

    def __init__(self, k, region, x0, grad0, c_rows):
        self.k = k
        self.region = region
        self.scale = region.scale
        self.q = None
        self.x_col = x0[:, k].copy()
        self.row = x0[k].copy()
        # sent index -1 marks the initial snapshot, fresh by definition
        self.row_sent = np.full(x0.shape[0], -1, dtype=int)
        self.lam = grad0[:, k].copy()
        self.lam_sent = np.full(x0.shape[0], -1, dtype=int)
        self.env_lo = x0[k].copy()
        self.env_hi = x0[k].copy()
        self.c_rows = c_rows.copy()
        self.weights = None
        self.dirty = True
        self.last_move = np.inf


def _deliveries_through(n, schedule, topology, algorithm):
    """Exact cumulative count of gain and derivative deliveries by the
    end of tick n. Bound messages are data driven and counted live."""
    if n < 0:
        return 0
    k_users = schedule.n_users
    total = 0
    period = schedule.period

    def count(phase, horizon):
        if horizon < phase:
            return 0
        return (horizon - phase) // period + 1

    for src in range(k_users):
        if algorithm == "dp":
            # gain broadcasts ride delay-free radio, visible next tick;
            # each update implies one price report from every other user
            upd = schedule.update_count_through(src, n - 1)
            total += (k_users - 1) * upd
            total += (k_users - 1) * schedule.update_count_through(src, n)
            continue
        for dest in range(k_users):
            if dest == src:
                continue
            d = topology.delay(src, dest)
            total += count(schedule.update_phase[src], n - max(d, 1))
            for p in schedule.gradient_phases[src]:
                total += count(p, n - d)
    return total


def run_simulation(instance: ChannelSet, schedule: Schedule,
                   topology: Topology,
                   options: SimOptions | None = None) -> SimTrace:
    """Simulate the full message-passing run and return its trace."""
    opts = options or SimOptions()
    params = opts.params or UtilityParams(sigma2=instance.sigma2)
    k_users = instance.n_users
    if schedule.n_users != k_users or topology.n_users != k_users:
        raise ValueError("instance, schedule, and topology disagree on the "
                         "number of users")
    if opts.mode not in _MODES:
        raise ValueError(f"unknown mode {opts.mode!r}")
    if opts.n_max < 0:
        raise ValueError("n_max must be nonnegative")
    check_step_scale(opts.gamma, enforce=opts.enforce_step_guard)

    dp = schedule.algorithm == "dp"
    scaled = opts.mode in ("s1", "s1s2") and not dp
    adaptive = opts.mode == "s1s2" and not dp

    raw_regions = [RegionHandle.from_local_csi(local_view(instance, k))
                   for k in range(k_users)]
    regions = ([r.unit_normalized() for r in raw_regions] if scaled
               else raw_regions)

    covs = [mrt_covariance(raw_regions[k]) for k in range(k_users)]
    x = np.column_stack([power_gain(covs[k], raw_regions[k])
                         for k in range(k_users)])
    floor_gap = np.diag(x) - params.mu
    if np.any(floor_gap < -1e-12):
        bad = int(np.argmin(floor_gap))
        raise ValueError(
            f"instance incompatible with the direct-gain floor: user {bad} "
            f"starts at {x[bad, bad]:.6g} < {params.mu}")

    init_x = x.copy()
    init_u_nats = sum_log_utility(x, params, check_domain=False)
    init_u_bits = pf_utility_bits(x, params.sigma2)
    grad0 = utility_gradient(x, params, check_domain=False)

    # worst-case bound scalars per receiver row (the full feasible box);
    # adaptive runs instead boot from envelopes collapsed at the start
    zero_row = np.zeros(k_users)
    base_rows = np.array([
        adaptive_curvature_row(zero_row, instance.gains[:, r], r, params)
        for r in range(k_users)])
    if adaptive:
        boot_rows = np.array([
            adaptive_curvature_row(init_x[r], init_x[r], r, params)
            for r in range(k_users)])
    else:
        boot_rows = base_rows

    stale_x = schedule.stale_x.astype(float)
    stale_g = schedule.stale_g.astype(float)

    def weights_for(c_rows):
        bounds = assemble_curvature(c_rows)
        kb = (bounds.scaled_by_gains(instance.gains).kb if scaled
              else bounds.kb)
        return compute_scaling(kb, stale_x, stale_g)

    agents = [_Agent(k, regions[k], x, grad0, boot_rows)
              for k in range(k_users)]
    for a in agents:
        a.q = covs[a.k]
    static_weights = None
    if not adaptive and not dp:
        static_weights = weights_for(base_rows)
        for a in agents:
            a.weights = static_weights[a.k].copy()
            a.dirty = False

    if dp:
        from .baselines import dp_best_response

    heap: list = []
    seq = 0
    delivered_bounds = 0
    delay = topology.delay

    def push(kind, source, dest, payload, sent_at, pickup):
        nonlocal seq
        heapq.heappush(heap, (pickup, seq, Message(
            kind, source, dest, payload, sent_at, pickup)))
        seq += 1

    rows = []
    max_stale = 0
    stale_excess = -(10 ** 9)
    pipeline_lag = 0
    last_activity = 0
    dmax = int(topology.delay_matrix().max())
    quiet_window = 2 * (dmax + schedule.period) + 8
    frozen_at = None
    period = schedule.period

    def fires_through(phases, m):
        # number of scheduled fires at ticks <= m over the given phases
        if m < 0:
            return 0
        return sum((m - p) // period + 1 for p in phases if m >= p)

    def latest_fire(phases, m):
        best = -1
        for p in phases:
            if m >= p:
                best = max(best, p + ((m - p) // period) * period)
        return best

    def staleness(phases, sent, lag_horizon, flight):
        # staleness counts the sender's fires while the value was in
        # flight; lag counts fires between the held value and the
        # newest one that nominally already arrived (zero when the
        # delivery pipeline is on time)
        if sent < 0:
            return 0, 0
        base = fires_through(phases, sent)
        stale = fires_through(phases, sent + flight) - base
        newest = latest_fire(phases, lag_horizon)
        lag = max(0, fires_through(phases, newest) - base) if newest >= 0 \
            else 0
        return stale, lag

    def deliver(msg, n):
        nonlocal delivered_bounds, last_activity
        a = agents[msg.dest]
        if msg.kind == GAIN:
            if abs(a.row[msg.source] - msg.payload[0]) > opts.freeze_x_tol:
                last_activity = n
            a.row[msg.source] = msg.payload[0]
            a.row_sent[msg.source] = msg.sent_at
        elif msg.kind == PARTIAL:
            if abs(a.lam[msg.source] - msg.payload[0]) > opts.freeze_x_tol:
                last_activity = n
            a.lam[msg.source] = msg.payload[0]
            a.lam_sent[msg.source] = msg.sent_at
        else:
            fresh = np.array(msg.payload)
            if np.max(np.abs(a.c_rows[msg.source] - fresh)) \
                    > opts.bound_change_tol:
                last_activity = n
            a.c_rows[msg.source] = fresh
            a.dirty = True
            delivered_bounds += 1

    def abort(cause, n):
        trace = _assemble_trace(rows, agents, x, init_x, init_u_nats,
                                init_u_bits, max_stale, stale_excess,
                                pipeline_lag, frozen_at, min(n, opts.n_max),
                                schedule, topology, delivered_bounds)
        raise SimulationError(f"run aborted at tick {n}: {cause}",
                              trace=trace, cause=cause) from cause

    n = 0
    while n <= opts.n_max:
        tick_stale = 0
        tick_move = 0.0
        updated = False

        while heap and heap[0][0] <= n:
            deliver(heapq.heappop(heap)[2], n)

        for a in agents:
            if dp or not schedule.fires_gradient(a.k, n):
                continue
            g = row_gradient(a.row, a.k, params.sigma2)
            a.lam[a.k] = g[a.k]
            a.lam_sent[a.k] = n
            for t in range(k_users):
                if t == a.k:
                    continue
                d = delay(t, a.k)
                age, lag = staleness(
                    (schedule.update_phase[t],), a.row_sent[t],
                    n - max(d, 1), d)
                tick_stale = max(tick_stale, age)
                stale_excess = max(stale_excess,
                                   age - int(schedule.stale_x[t, a.k]))
                pipeline_lag = max(pipeline_lag, lag)
                push(PARTIAL, a.k, t, (g[t],), n, n + delay(a.k, t))

        if adaptive:
            for a in agents:
                if not schedule.fires_bound(a.k, n):
                    continue
                lo = np.minimum(a.env_lo, a.row)
                hi = np.maximum(a.env_hi, a.row)
                if np.array_equal(lo, a.env_lo) \
                        and np.array_equal(hi, a.env_hi):
                    continue
                a.env_lo, a.env_hi = lo, hi
                fresh = np.array(adaptive_curvature_row(lo, hi, a.k, params))
                if np.max(np.abs(fresh - a.c_rows[a.k])) \
                        <= opts.bound_change_tol:
                    continue
                a.c_rows[a.k] = fresh
                a.dirty = True
                last_activity = n
                payload = tuple(fresh)
                for t in range(k_users):
                    if t != a.k:
                        lag = 0 if opts.instant_bounds else delay(a.k, t)
                        push(BOUND, a.k, t, payload, n, n + lag)

        while heap and heap[0][0] <= n:
            deliver(heapq.heappop(heap)[2], n)

        for a in agents:
            if not schedule.fires_update(a.k, n):
                continue
            updated = True
            if dp:
                prices = np.array([
                    row_gradient(x[l], l, params.sigma2)[a.k]
                    for l in range(k_users)])
                interf = params.sigma2 + float(x[a.k].sum()) - x[a.k, a.k]
                try:
                    new_col, a.q = dp_best_response(
                        a.region, interf, prices, q0=a.q)
                except Exception as exc:
                    abort(exc, n)
            else:
                if a.dirty:
                    a.weights = weights_for(a.c_rows)[a.k].copy()
                    a.dirty = False
                for l in range(k_users):
                    if l == a.k:
                        continue
                    d = delay(l, a.k)
                    age, lag = staleness(
                        schedule.gradient_phases[l], a.lam_sent[l],
                        n - d, d)
                    tick_stale = max(tick_stale, age)
                    stale_excess = max(stale_excess,
                                       age - int(schedule.stale_g[l, a.k]))
                    pipeline_lag = max(pipeline_lag, lag)
                try:
                    xn, a.q = sgp_step(
                        a.x_col / a.scale, a.lam * a.scale, a.weights,
                        a.region, opts.gamma, q0=a.q,
                        tol=opts.projection_tol,
                        max_iter=opts.projection_max_iter)
                except ProjectionError as exc:
                    abort(exc, n)
                new_col = xn * a.scale
            a.last_move = float(np.max(np.abs(new_col - a.x_col)))
            if a.last_move > opts.freeze_x_tol:
                last_activity = n
            tick_move = max(tick_move, a.last_move)
            a.x_col = new_col
            a.row[a.k] = new_col[a.k]
            a.row_sent[a.k] = n
            x[:, a.k] = new_col
            for t in range(k_users):
                if t != a.k:
                    lag = 0 if dp else delay(a.k, t)
                    push(GAIN, a.k, t, (new_col[t],), n,
                         max(n + lag, n + 1))

        if updated or n == 0:
            max_stale = max(max_stale, tick_stale)
            rows.append((
                n,
                pf_utility_bits(x, params.sigma2),
                sum_log_utility(x, params, check_domain=False),
                np.diag(x).copy(),
                tick_stale,
                tick_move,
                _deliveries_through(n, schedule, topology,
                                    schedule.algorithm) + delivered_bounds,
            ))

        if (opts.freeze_fastforward and n - last_activity > quiet_window
                and n < opts.n_max):
            frozen_at = n
            break

        nxt = schedule.next_event(n + 1)
        if heap:
            nxt = min(nxt, heap[0][0])
        if nxt <= n:
            nxt = n + 1
        n = nxt

    return _assemble_trace(rows, agents, x, init_x, init_u_nats,
                           init_u_bits, max_stale, stale_excess,
                           pipeline_lag, frozen_at, opts.n_max, schedule,
                           topology, delivered_bounds, mode=opts.mode)


def _assemble_trace(rows, agents, x, init_x, init_u_nats, init_u_bits,
                    max_stale, stale_excess, pipeline_lag, frozen_at, n_max,
                    schedule, topology, delivered_bounds, mode=""):
    if rows and rows[-1][0] != n_max:
        last = rows[-1]
        rows = rows + [(n_max, last[1], last[2], last[3], 0, 0.0,
                        _deliveries_through(n_max, schedule, topology,
                                            schedule.algorithm)
                        + delivered_bounds)]
    ns = np.array([r[0] for r in rows], dtype=int)
    if stale_excess < -(10 ** 8):
        stale_excess = 0
    return SimTrace(
        ns=ns,
        u_bits=np.array([r[1] for r in rows]),
        u_nats=np.array([r[2] for r in rows]),
        x_direct=(np.vstack([r[3] for r in rows]) if rows
                  else np.zeros((0, x.shape[0]))),
        stale_periods=np.array([r[4] for r in rows], dtype=int),
        move_max=np.array([r[5] for r in rows]),
        messages=np.array([r[6] for r in rows], dtype=np.int64),
        final_x=x.copy(),
        final_covs=[a.q.copy() for a in agents],
        init_x=init_x,
        init_u_nats=init_u_nats,
        init_u_bits=init_u_bits,
        last_move=np.array([a.last_move for a in agents]),
        max_stale_periods=int(max_stale),
        stale_excess=int(stale_excess),
        pipeline_lag=int(pipeline_lag),
        frozen_at=frozen_at,
        n_max=int(n_max),
        algorithm=schedule.algorithm,
        mode=mode,
    )
