"""Quenched walk simulation and hitting-time extraction.

Two engines produce hitting-time samples:

* ``steps`` — the reference path: one uniform per step against the site
  probability, full per-site bookkeeping, per-replica derived streams.
* ``blocks`` — an exact fast path: the per-site left-move counts of a
  right-transient walk form a downward chain of negative-binomial draws
  (one crossing is forced through every edge between the origin and the
  target), so the hitting time is reconstructed from one draw per site
  instead of one per step.  It is distributionally identical to the
  reference path and is validated against it in the test suite.

Environment windows are two-sided and extend themselves on demand when
they were generated from a model; fixed windows raise instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_rng
from .envmodel import EnvironmentSpec, reverse_kernel, stationary_distribution
from .errors import ModelError, NumericalError, WindowError

__all__ = [
    "EnvPath",
    "WalkRecord",
    "HittingSample",
    "sample_environment",
    "run_to_hit",
    "annealed_hitting_sample",
    "annealed_position_sample",
]

DEFAULT_STEP_CAP = 10**9
_EXTEND_CHUNK = 64
_EXPLOSION_LIMIT = 2**60


def _categorical(cumrows: np.ndarray, states: np.ndarray, rng) -> np.ndarray:
    """Vectorized one-step chain move given cumulative transition rows."""
    u = rng.random(states.shape[0])
    return (u[:, None] > cumrows[states]).sum(axis=1)


@dataclass
class EnvPath:
    """Two-sided environment window over sites ``[-left, right]``.

    ``omega[i + left]`` is the right-step probability at site ``i``.  Sites
    at and below zero are read off the forward chain; positive sites come
    from the time-reversed kernel, matching the package-wide convention
    that site ``i`` carries the chain state at time ``-i``.
    """

    left: int
    right: int
    omega: np.ndarray
    states: np.ndarray | None = None
    spec: EnvironmentSpec | None = None
    rng: np.random.Generator | None = None
    _cum_fwd: np.ndarray | None = field(default=None, repr=False)
    _cum_rev: np.ndarray | None = field(default=None, repr=False)

    @property
    def extendable(self) -> bool:
        return self.spec is not None and self.rng is not None and self.states is not None

    def omega_at(self, site: int) -> float:
        return float(self.omega[site + self.left])

    def _cums(self):
        if self._cum_fwd is None:
            self._cum_fwd = np.cumsum(self.spec.H, axis=1)
            self._cum_rev = np.cumsum(reverse_kernel(self.spec), axis=1)
        return self._cum_fwd, self._cum_rev

    def extend_left(self, count: int = _EXTEND_CHUNK) -> None:
        """Grow the window downward by continuing the forward chain."""
        if not self.extendable:
            raise WindowError("window too small and environment is fixed", -self.left)
        cum_fwd, _ = self._cums()
        s = int(self.states[0])
        new_states = np.empty(count, dtype=np.int64)
        for j in range(count):
            s = int(np.searchsorted(cum_fwd[s], self.rng.random(), side="right"))
            new_states[j] = s
        new_states = new_states[::-1]
        self.states = np.concatenate([new_states, self.states])
        self.omega = np.concatenate([self.spec.omega[new_states], self.omega])
        self.left += count

    def extend_right(self, count: int = _EXTEND_CHUNK) -> None:
        """Grow the window upward by continuing the reversed chain."""
        if not self.extendable:
            raise WindowError("window too small and environment is fixed", self.right)
        _, cum_rev = self._cums()
        s = int(self.states[-1])
        new_states = np.empty(count, dtype=np.int64)
        for j in range(count):
            s = int(np.searchsorted(cum_rev[s], self.rng.random(), side="right"))
            new_states[j] = s
        self.states = np.concatenate([self.states, new_states])
        self.omega = np.concatenate([self.omega, self.spec.omega[new_states]])
        self.right += count


def sample_environment(
    spec: EnvironmentSpec, left: int, right: int, rng: np.random.Generator
) -> EnvPath:
    """Stationary two-sided environment window over ``[-left, right]``.

    The site-0 state is drawn from the stationary law, negative sites follow
    the forward kernel and positive sites the reversed kernel, so the window
    is a stationary stretch of the environment in distribution.  Draw order
    (origin, then downward, then upward) is fixed for reproducibility.
    """
    if left < 0 or right < 0:
        raise ModelError("window bounds must be nonnegative")
    pi = stationary_distribution(spec.H)
    cum_fwd = np.cumsum(spec.H, axis=1)
    cum_rev = np.cumsum(reverse_kernel(spec), axis=1)

    states = np.empty(left + right + 1, dtype=np.int64)
    s0 = int(np.searchsorted(np.cumsum(pi), rng.random(), side="right"))
    states[left] = s0
    s = s0
    for j in range(1, left + 1):
        s = int(np.searchsorted(cum_fwd[s], rng.random(), side="right"))
        states[left - j] = s
    s = s0
    for j in range(1, right + 1):
        s = int(np.searchsorted(cum_rev[s], rng.random(), side="right"))
        states[left + j] = s

    env = EnvPath(
        left=left,
        right=right,
        omega=spec.omega[states],
        states=states,
        spec=spec,
        rng=rng,
    )
    env._cum_fwd = cum_fwd
    env._cum_rev = cum_rev
    return env


@dataclass(frozen=True)
class WalkRecord:
    """One quenched walk run to a target site (or to the step budget)."""

    n_target: int
    hit_times: np.ndarray  # hit_times[k-1] = first time at site k, k = 1..reached
    left_moves: np.ndarray  # per-site left-move counts for sites deepest..n_target
    deepest_site: int
    final_position: int
    steps: int
    censored: bool

    @property
    def reached(self) -> int:
        return len(self.hit_times)

    @property
    def hitting_time(self) -> int:
        if self.censored:
            raise NumericalError("record is censored: target was not reached")
        return int(self.hit_times[-1])

    @property
    def crossing_times(self) -> np.ndarray:
        """Per-site crossing durations (first differences of the hit times)."""
        return np.diff(self.hit_times, prepend=0)

    @property
    def total_left_moves(self) -> int:
        return int(self.left_moves.sum())

    def left_moves_at(self, site: int) -> int:
        if site < self.deepest_site or site > self.n_target:
            return 0
        return int(self.left_moves[site - self.deepest_site])

    @property
    def identity_holds(self) -> bool:
        """Exact bookkeeping identity: T = n + 2 * (total left moves)."""
        if self.censored:
            return False
        return self.hitting_time == self.n_target + 2 * self.total_left_moves


def run_to_hit(
    env: EnvPath,
    n: int,
    rng: np.random.Generator,
    step_cap: int = DEFAULT_STEP_CAP,
) -> WalkRecord:
    """Reference quenched walk from the origin to the first visit of ``n``.

    One uniform per step, no shortcuts.  The environment window is extended
    on demand for model-generated environments; a fixed window raises a
    ``WindowError`` carrying the deepest site reached.
    """
    if n < 1:
        raise ModelError(f"target site must be >= 1, got {n}")
    while env.right < n - 1:
        env.extend_right(max(_EXTEND_CHUNK, n - 1 - env.right))

    omega = env.omega
    left = env.left
    U = np.zeros(left + n + 1, dtype=np.int64)  # site i at index i + left
    hit = np.zeros(n, dtype=np.int64)
    pos = 0
    t = 0
    best = 0
    deepest = 0
    buf = rng.random(8192)
    bi = 0
    while pos < n:
        if t >= step_cap:
            return WalkRecord(
                n_target=n,
                hit_times=hit[:best],
                left_moves=U[deepest + left:],
                deepest_site=deepest,
                final_position=pos,
                steps=t,
                censored=True,
            )
        if pos + left < 0:
            if not env.extendable:
                raise WindowError(f"window too small: walk reached site {pos}", pos)
            env.extend_left()
            grow = env.left - left
            omega = env.omega
            U = np.concatenate([np.zeros(grow, dtype=np.int64), U])
            left = env.left
        if bi == len(buf):
            buf = rng.random(8192)
            bi = 0
        t += 1
        if buf[bi] < omega[pos + left]:
            bi += 1
            pos += 1
            if pos > best:
                hit[pos - 1] = t
                best = pos
        else:
            bi += 1
            U[pos + left] += 1
            pos -= 1
            if pos < deepest:
                deepest = pos
    return WalkRecord(
        n_target=n,
        hit_times=hit,
        left_moves=U[deepest + left:],
        deepest_site=deepest,
        final_position=pos,
        steps=t,
        censored=False,
    )


@dataclass(frozen=True)
class HittingSample:
    """Annealed hitting-time sample; censored entries carry partial values."""

    n: int
    values: np.ndarray
    steps: np.ndarray
    censored: np.ndarray

    @property
    def complete(self) -> np.ndarray:
        return self.values[~self.censored]


def _hitting_steps(spec, n, replicas, seed, step_cap) -> HittingSample:
    values = np.empty(replicas, dtype=float)
    steps = np.empty(replicas, dtype=np.int64)
    censored = np.zeros(replicas, dtype=bool)
    for idx in range(replicas):
        env = sample_environment(spec, _EXTEND_CHUNK, n - 1, derive_rng(seed, idx, 0))
        rec = run_to_hit(env, n, derive_rng(seed, idx, 1), step_cap=step_cap)
        steps[idx] = rec.steps
        censored[idx] = rec.censored
        values[idx] = rec.steps if rec.censored else rec.hitting_time
    return HittingSample(n=n, values=values, steps=steps, censored=censored)


def _hitting_blocks(spec, n, replicas, seed, step_cap) -> HittingSample:
    rng = derive_rng(seed, 0)
    cum_pi = np.cumsum(stationary_distribution(spec.H))
    cum_fwd = np.cumsum(spec.H, axis=1)
    omega = spec.omega

    u = rng.random(replicas)
    states = np.searchsorted(cum_pi, u, side="right")
    counts = np.zeros(replicas, dtype=np.int64)
    total = np.zeros(replicas, dtype=np.int64)

    # Sites n-1 down to 0: one forced crossing each, so the left-move count
    # at a site is negative-binomial with size (count above + 1).
    for _ in range(n):
        counts = rng.negative_binomial(counts + 1, omega[states])
        total += counts
        if np.any(counts > _EXPLOSION_LIMIT):
            raise NumericalError("left-move count explosion in block engine")
        states = _categorical(cum_fwd, states, rng)

    # Sites below the origin: no forced crossing; lanes retire at zero count.
    active = np.flatnonzero(counts > 0)
    states = states[active]
    counts = counts[active]
    depth = 0
    while active.size:
        depth += 1
        if depth > 100_000:
            raise NumericalError("walk excursion below origin did not terminate")
        counts = rng.negative_binomial(counts, omega[states])
        total[active] += counts
        keep = counts > 0
        active = active[keep]
        counts = counts[keep]
        states = _categorical(cum_fwd, states[keep], rng) if active.size else states[:0]

    values = n + 2.0 * total
    if step_cap is None:
        censored = np.zeros(replicas, dtype=bool)
        steps = values.astype(np.int64)
    else:
        censored = values > step_cap
        steps = np.minimum(values, step_cap).astype(np.int64)
    return HittingSample(n=n, values=values, steps=steps, censored=censored)


def annealed_hitting_sample(
    spec: EnvironmentSpec,
    n: int,
    replicas: int,
    seed: int,
    step_cap: int | None = DEFAULT_STEP_CAP,
    method: str = "blocks",
) -> HittingSample:
    """Independent environment + walk per replica, reduced to hitting times.

    ``method="steps"`` runs the reference walker with one derived stream
    pair per replica; ``method="blocks"`` runs the exact site-recursion
    engine on a single derived stream with a fixed vectorized draw order.
    Either way the output is a pure function of ``(spec, n, seed)``.
    """
    if replicas < 0:
        raise ModelError("replicas must be nonnegative")
    if replicas == 0:
        empty = np.empty(0)
        return HittingSample(
            n=n,
            values=empty,
            steps=empty.astype(np.int64),
            censored=empty.astype(bool),
        )
    if method == "steps":
        cap = DEFAULT_STEP_CAP if step_cap is None else step_cap
        return _hitting_steps(spec, n, replicas, seed, cap)
    if method == "blocks":
        return _hitting_blocks(spec, n, replicas, seed, step_cap)
    raise ModelError(f"unknown hitting-sample method {method!r}")


def annealed_position_sample(
    spec: EnvironmentSpec,
    n_steps: int,
    replicas: int,
    seed: int,
    batch: int = 512,
) -> np.ndarray:
    """Walker positions after ``n_steps`` steps, one fresh environment each.

    Lanes run in lockstep over a shared step counter; per-lane environments
    are materialized columnwise and widened when any lane touches a window
    edge.  Deterministic for fixed ``(spec, n_steps, seed)``.
    """
    out = np.empty(replicas, dtype=np.int64)
    done = 0
    b = 0
    while done < replicas:
        m = min(batch, replicas - done)
        out[done:done + m] = _position_batch(spec, n_steps, m, derive_rng(seed, b))
        done += m
        b += 1
    return out


def _position_batch(spec, n_steps, lanes, rng):
    cum_pi = np.cumsum(stationary_distribution(spec.H))
    cum_fwd = np.cumsum(spec.H, axis=1)
    cum_rev = np.cumsum(reverse_kernel(spec), axis=1)

    left = _EXTEND_CHUNK
    right = _EXTEND_CHUNK
    s0 = np.searchsorted(cum_pi, rng.random(lanes), side="right")
    states = np.empty((lanes, left + right + 1), dtype=np.int64)
    states[:, left] = s0
    s = s0.copy()
    for j in range(1, left + 1):
        s = _categorical(cum_fwd, s, rng)
        states[:, left - j] = s
    s = s0.copy()
    for j in range(1, right + 1):
        s = _categorical(cum_rev, s, rng)
        states[:, left + j] = s
    omega = spec.omega[states]

    rows = np.arange(lanes)
    pos = np.zeros(lanes, dtype=np.int64)
    for _ in range(n_steps):
        u = rng.random(lanes)
        move = np.where(u < omega[rows, pos + left], 1, -1)
        pos += move
        if pos.min() + left == 0:
            grow = _EXTEND_CHUNK
            s = states[:, 0].copy()
            cols = np.empty((lanes, grow), dtype=np.int64)
            for j in range(grow):
                s = _categorical(cum_fwd, s, rng)
                cols[:, j] = s
            states = np.concatenate([cols[:, ::-1], states], axis=1)
            omega = np.concatenate([spec.omega[cols[:, ::-1]], omega], axis=1)
            left += grow
        if pos.max() + left == omega.shape[1] - 1:
            grow = _EXTEND_CHUNK
            s = states[:, -1].copy()
            cols = np.empty((lanes, grow), dtype=np.int64)
            for j in range(grow):
                s = _categorical(cum_rev, s, rng)
                cols[:, j] = s
            states = np.concatenate([states, cols], axis=1)
            omega = np.concatenate([omega, spec.omega[cols]], axis=1)
    return pos
