"""Seedable Brownian and Poisson noise with multi-resolution coupling.

Every path owns independent random streams derived from
``(master_seed, path_index, purpose)`` through :class:`numpy.random.SeedSequence`
feeding a Philox (counter-based) generator.  A path can therefore be
regenerated in isolation, in any worker, in any order.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .core import SdeValueError, TimeGrid

# purpose tags for sub-streams of one path
BROWNIAN = 0
BRIDGE = 1
JUMPS = 2
EVENT_BRIDGE = 3
ADAPTIVE = 4

_NODE_TOL = 1e-12


@dataclass(frozen=True)
class SeedSpec:
    """Identifies the random streams of one Monte Carlo path."""

    master_seed: int
    path_index: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise SdeValueError("master seed must be an unsigned 64-bit integer")
        if int(self.path_index) < 0:
            raise SdeValueError("path index must be nonnegative")

    def generator(self, *purpose) -> np.random.Generator:
        """Generator for the sub-stream tagged by ``purpose`` (ints)."""
        ss = np.random.SeedSequence(int(self.master_seed),
                                    spawn_key=(int(self.path_index),) + tuple(purpose))
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Brownian path sampled on the nodes of ``grid``.

    ``values[k]`` is ``W(t_k)`` with ``W(0) = 0``; increments are derived from
    it so that consecutive values differ by the stored increment exactly.
    """

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (len(self.grid),):
            raise SdeValueError("one Brownian value per grid node is required")
        if values[0] != 0.0:
            raise SdeValueError("Brownian paths start at 0")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_increments(cls, grid, increments):
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (grid.n,):
            raise SdeValueError("increment count must equal the number of grid steps")
        return cls(grid, np.concatenate(([0.0], np.cumsum(increments))))

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    @property
    def cumulative(self) -> np.ndarray:
        return self.values

    def __eq__(self, other):
        return (isinstance(other, NoisePath) and self.grid == other.grid
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True, eq=False)
class JumpTrain:
    """Event times of a homogeneous Poisson process on ``(0, T]``."""

    event_times: np.ndarray
    rate: float
    horizon: float

    def __post_init__(self):
        times = np.array(self.event_times, dtype=float).reshape(-1)
        if times.size and (times[0] <= 0 or times[-1] > self.horizon
                           or np.any(np.diff(times) <= 0)):
            raise SdeValueError("event times must be strictly increasing in (0, T]")
        times.setflags(write=False)
        object.__setattr__(self, "event_times", times)

    def __len__(self):
        return self.event_times.size


def _node_index(fine_nodes, nodes, what):
    """Positions of ``nodes`` inside ``fine_nodes``; raises if any is missing."""
    idx = np.searchsorted(fine_nodes, nodes)
    idx = np.clip(idx, 0, fine_nodes.size - 1)
    scale = _NODE_TOL * max(1.0, float(fine_nodes[-1]))
    below = np.clip(idx - 1, 0, None)
    use_below = np.abs(fine_nodes[below] - nodes) < np.abs(fine_nodes[idx] - nodes)
    idx = np.where(use_below, below, idx)
    if np.any(np.abs(fine_nodes[idx] - nodes) > scale):
        raise SdeValueError(what)
    return idx


def sample_path(grid: TimeGrid, seed: SeedSpec) -> NoisePath:
    """Independent Gaussian increments with variances equal to the spacings."""
    rng = seed.generator(BROWNIAN)
    z = rng.standard_normal(grid.n)
    return NoisePath.from_increments(grid, np.sqrt(np.diff(grid.nodes)) * z)


def bridge_values(coarse_t, coarse_w, fine_t, rng):
    """Brownian values on ``fine_t`` conditioned on ``coarse_w`` at ``coarse_t``.

    Inside each coarse interval a free Brownian motion is drawn on the fine
    nodes and pinned to the coarse endpoints (``B(s) = V(s) - s/L * V(L)``).
    Values at coarse nodes are copied exactly.
    """
    coarse_t = np.asarray(coarse_t, dtype=float)
    fine_t = np.asarray(fine_t, dtype=float)
    pos = _node_index(fine_t, coarse_t, "fine grid is not a refinement of the coarse grid")
    out = np.empty(fine_t.size)
    out[pos] = coarse_w
    if fine_t.size == coarse_t.size:
        return out
    dt = np.diff(fine_t)
    free = np.sqrt(dt) * rng.standard_normal(dt.size)
    # group of each fine step = coarse interval it lies in
    group = np.searchsorted(pos, np.arange(dt.size), side="right") - 1
    csum = np.cumsum(free)
    start = np.concatenate(([0.0], csum))[pos[:-1]]
    local = csum - start[group]
    total = local[pos[1:] - 1]
    a = coarse_t[group]
    length = np.diff(coarse_t)[group]
    frac = (fine_t[1:] - a) / length
    w_a = np.asarray(coarse_w)[group]
    dw = np.diff(coarse_w)[group]
    out[1:] = w_a + frac * dw + (local - frac * total[group])
    out[pos] = coarse_w
    return out


def refine_bridge(path: NoisePath, fine: TimeGrid, seed: SeedSpec) -> NoisePath:
    """Refine ``path`` onto ``fine`` by Brownian bridge sampling.

    Coarsening the result back onto ``path.grid`` reproduces the original
    values exactly.  The bridge draws come from the path's ``BRIDGE`` stream,
    keyed by the fine step count so that successive refinements differ.
    """
    if fine.T != path.grid.T:
        raise SdeValueError("fine grid is not a refinement of the coarse grid")
    rng = seed.generator(BRIDGE, fine.n)
    w = bridge_values(path.grid.nodes, path.values, fine.nodes, rng)
    return NoisePath(fine, w)


def coarsen(path: NoisePath, coarse: TimeGrid) -> NoisePath:
    """Restrict ``path`` to the nodes of ``coarse`` (sums of fine increments)."""
    if coarse.T != path.grid.T:
        raise SdeValueError("coarse grid is not a subset of the path grid")
    idx = _node_index(path.grid.nodes, coarse.nodes,
                      "coarse grid is not a subset of the path grid")
    return NoisePath(coarse, path.values[idx])


def sample_jumps(rate, T, seed: SeedSpec) -> JumpTrain:
    """Homogeneous Poisson event times on ``(0, T]`` via exponential gaps."""
    if rate < 0:
        raise SdeValueError("jump rate must be nonnegative")
    if rate == 0:
        return JumpTrain(np.zeros(0), 0.0, T)
    rng = seed.generator(JUMPS)
    times = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate)
        if t > T:
            break
        times.append(t)
    return JumpTrain(np.array(times), float(rate), float(T))


class BrownianSource:
    """On-demand Brownian values for schemes with random step times.

    Starts from the nodes of ``path`` (if given) and inserts every newly
    sampled time, so later queries are conditioned on everything drawn so
    far.  Queries landing within ``1e-12 * max(1, T)`` of a known node
    return that node.
    """

    def __init__(self, rng, path: NoisePath | None = None, T=None):
        self.rng = rng
        if path is None:
            self.times = [0.0]
            self.values = [0.0]
            self.T = float(T) if T is not None else math.inf
        else:
            self.times = list(path.grid.nodes)
            self.values = list(path.values)
            self.T = path.grid.T if T is None else float(T)
        self.snap = _NODE_TOL * max(1.0, self.T if math.isfinite(self.T) else 1.0)
        self.draws = 0

    def _snap(self, t):
        j = bisect.bisect_left(self.times, t)
        if j < len(self.times) and abs(self.times[j] - t) <= self.snap:
            return j
        if j > 0 and abs(self.times[j - 1] - t) <= self.snap:
            return j - 1
        return None

    def resolve(self, t):
        """Return ``(t', W(t'))`` where ``t'`` is ``t`` snapped to a known node."""
        j = self._snap(t)
        if j is not None:
            return self.times[j], self.values[j]
        j = bisect.bisect_left(self.times, t)
        z = self.rng.standard_normal()
        self.draws += 1
        if j == len(self.times):
            w = self.values[-1] + math.sqrt(t - self.times[-1]) * z
        else:
            lt, lw = self.times[j - 1], self.values[j - 1]
            rt, rw = self.times[j], self.values[j]
            span = rt - lt
            mean = lw + (t - lt) / span * (rw - lw)
            w = mean + math.sqrt((t - lt) * (rt - t) / span) * z
        self.times.insert(j, t)
        self.values.insert(j, w)
        return t, w

    def value(self, t):
        return self.resolve(t)[1]

    def increment(self, t, h):
        """``W(t + h) - W(t)``."""
        return self.value(t + h) - self.value(t)
