"""Backhaul topologies and per-user event schedules.

A topology fixes the pairwise backhaul delay between transmitters; a
schedule fixes, for every user, the clock ticks at which it updates its
gains, at which its receiver computes and ships partial derivatives,
and at which it refreshes curvature bounds. `build_schedule` produces
the standard configurations (periodic simultaneous updates with or
without a gradient offset, and the staggered round-robin used by the
pricing baseline) together with the declared worst-case staleness each
configuration admits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ScheduleError",
    "Topology",
    "Schedule",
    "default_chain_order",
    "build_schedule",
]


class ScheduleError(ValueError):
    """Raised for topology or schedule parameters that do not combine."""


def default_chain_order(n_users: int) -> tuple:
    """Chain placement that scatters logical neighbors: even indices in
    descending order, then odd indices in descending order."""
    evens = [k for k in range(n_users - 1, -1, -1) if k % 2 == 0]
    odds = [k for k in range(n_users - 1, -1, -1) if k % 2 == 1]
    return tuple(evens + odds)


@dataclass(frozen=True)
class Topology:
    """Pairwise message delays between the transmitters.

    kind 'mesh' joins every pair directly; 'chain' places user k at
    chain position k; 'permuted_chain' places user order[i] at position
    i, so logically adjacent users can sit far apart. Messages between
    non-neighbors are forwarded, hence delays add along the chain.
    """

    kind: str
    n_users: int
    link_delay: int
    order: tuple = ()

    def __post_init__(self):
        if self.kind not in ("mesh", "chain", "permuted_chain"):
            raise ScheduleError(f"unknown topology kind {self.kind!r}")
        if self.n_users < 1:
            raise ScheduleError("need at least one user")
        if self.link_delay < 0 or self.link_delay != int(self.link_delay):
            raise ScheduleError("link delay must be a nonnegative integer")
        if self.kind == "permuted_chain":
            order = self.order or default_chain_order(self.n_users)
            if sorted(order) != list(range(self.n_users)):
                raise ScheduleError("order must permute range(n_users)")
            object.__setattr__(self, "order", tuple(order))
        elif self.order:
            raise ScheduleError("order is only meaningful for permuted_chain")

    @classmethod
    def mesh(cls, n_users: int, link_delay: int) -> "Topology":
        return cls("mesh", n_users, link_delay)

    @classmethod
    def chain(cls, n_users: int, link_delay: int) -> "Topology":
        return cls("chain", n_users, link_delay)

    @classmethod
    def permuted_chain(cls, n_users: int, link_delay: int,
                       order=None) -> "Topology":
        return cls("permuted_chain", n_users, link_delay,
                   tuple(order) if order else ())

    def position(self, k: int) -> int:
        """Chain position of user k (identity for mesh and plain chain)."""
        if self.kind == "permuted_chain":
            return self.order.index(k)
        return k

    def delay(self, k: int, l: int) -> int:
        """One-way message delay from user k to user l, in clock ticks."""
        if k == l:
            return 0
        if self.kind == "mesh":
            return self.link_delay
        return self.link_delay * abs(self.position(k) - self.position(l))

    def delay_matrix(self) -> np.ndarray:
        k_users = self.n_users
        return np.array([[self.delay(k, l) for l in range(k_users)]
                         for k in range(k_users)], dtype=int)


@dataclass(frozen=True, eq=False)
class Schedule:
    """Per-user periodic tick sets plus declared staleness constants.

    All three tick families share one period; each user may own several
    phases per family (the pricing baseline observes after every update
    slot, hence the tuples). stale_x[t, r] bounds, in update periods,
    the age of transmitter t's gains as reflected in the information
    used at user r; stale_g[l, k] bounds the age of receiver l's
    partial derivatives when transmitter k consumes them.
    """

    algorithm: str
    period: int
    update_phase: tuple          # one int per user
    gradient_phases: tuple       # tuple of ints per user
    bound_phases: tuple          # tuple of ints per user
    stale_x: np.ndarray = field(repr=False)
    stale_g: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.period < 1:
            raise ScheduleError("period must be at least 1")
        if any(p < 0 for p in self.update_phase):
            raise ScheduleError("phases must be nonnegative")

    @property
    def n_users(self) -> int:
        return len(self.update_phase)

    @staticmethod
    def _fires(phase: int, period: int, n: int) -> bool:
        return n >= phase and (n - phase) % period == 0

    def fires_update(self, k: int, n: int) -> bool:
        return self._fires(self.update_phase[k], self.period, n)

    def fires_gradient(self, k: int, n: int) -> bool:
        return any(self._fires(p, self.period, n)
                   for p in self.gradient_phases[k])

    def fires_bound(self, k: int, n: int) -> bool:
        return any(self._fires(p, self.period, n)
                   for p in self.bound_phases[k])

    def next_event(self, n: int) -> int:
        """Smallest tick >= n at which any user fires anything."""
        best = None
        for k in range(self.n_users):
            phases = ((self.update_phase[k],) + self.gradient_phases[k]
                      + self.bound_phases[k])
            for p in phases:
                t = p if n <= p else n + (p - n) % self.period
                if best is None or t < best:
                    best = t
        return best

    @staticmethod
    def fires_between(phase: int, period: int, a: int, b: int) -> int:
        """Count of ticks t with a < t < b, t >= phase, t = phase mod T."""
        if b - a < 2:
            return 0
        lo = max(a + 1, phase)
        hi = b - 1
        if hi < lo:
            return 0
        first = lo + (phase - lo) % period
        if first > hi:
            return 0
        return (hi - first) // period + 1

    def update_count_through(self, k: int, n: int) -> int:
        """Number of update ticks of user k in [0, n]."""
        phase = self.update_phase[k]
        if n < phase:
            return 0
        return (n - phase) // self.period + 1


def _dp_chain_period(k_users: int, delay: int, measure: int) -> int:
    half = k_users // 2
    hops = 2 * sum(k_users - l for l in range(1, half + 1)) + half
    return hops * delay + k_users * measure * (k_users % 2)


def _dp_chain_phase(k: int, k_users: int, delay: int, measure: int) -> int:
    route = sum(k_users - l - 1 for l in range(k))
    return k * measure + delay * (route + max(0, 2 * k - k_users - 1))


def build_schedule(algorithm: str, topology: Topology, period=None,
                   measure_cycles: int = 1) -> Schedule:
    """Standard schedule for an algorithm on a topology.

    'async': every user updates and reports each `period` ticks with no
    offset, accepting staleness floor(delay/period) on every link.
    'sync': updates every 2*Dmax ticks with gradient reports offset by
    Dmax, so every update sees fully fresh information.
    'dp': staggered round-robin updates, gains assumed known without
    backhaul cost, `measure_cycles` ticks of measurement per slot.
    """
    k_users = topology.n_users
    dmat = topology.delay_matrix()
    dmax = int(dmat.max())
    zero = np.zeros((k_users, k_users), dtype=int)

    if algorithm == "async":
        t = 1 if period is None else int(period)
        if t < 1:
            raise ScheduleError("async period must be at least 1")
        stale = dmat // t
        zeros = tuple(0 for _ in range(k_users))
        single = tuple((0,) for _ in range(k_users))
        return Schedule("async", t, zeros, single, single,
                        stale_x=stale, stale_g=stale)

    if algorithm == "sync":
        if period is not None:
            raise ScheduleError("sync derives its period from the topology")
        t = max(1, 2 * dmax)
        zeros = tuple(0 for _ in range(k_users))
        offset = tuple((dmax,) for _ in range(k_users))
        return Schedule("sync", t, zeros, offset, offset,
                        stale_x=zero, stale_g=zero)

    if algorithm == "dp":
        if period is not None:
            raise ScheduleError("dp derives its period from the topology")
        m = int(measure_cycles)
        if m < 0:
            raise ScheduleError("measurement cycles must be nonnegative")
        d = topology.link_delay
        if topology.kind == "mesh":
            t = (d + m) * k_users
            phases = [(d + m) * k for k in range(k_users)]
        else:
            t = _dp_chain_period(k_users, d, m)
            slot = [_dp_chain_phase(i, k_users, d, m)
                    for i in range(k_users)]
            # Chain positions take the round-robin slots in order; user
            # order[i] occupies position i.
            phases = [0] * k_users
            for i in range(k_users):
                user = (topology.order[i]
                        if topology.kind == "permuted_chain" else i)
                phases[user] = slot[i]
        if t < 1:
            raise ScheduleError(
                "dp schedule degenerates to period 0 for these parameters")
        if len(set(phases)) != k_users or any(p >= t for p in phases):
            raise ScheduleError("dp phases must be distinct and inside one "
                                "period")
        everyone = tuple(sorted(phases))
        return Schedule("dp", t, tuple(phases),
                        tuple(everyone for _ in range(k_users)),
                        tuple(everyone for _ in range(k_users)),
                        stale_x=zero, stale_g=zero)

    raise ScheduleError(f"unknown algorithm {algorithm!r}")
