"""Approximation schemes for scalar SDEs with piecewise smooth drift.

All steppers are pure functions of ``(problem, grid, noise)``.  The fixed-grid
schemes share one jitted loop, so the reductions between them (Milstein with
constant sigma, transform without breakpoints, jumps with zero amplitude)
reproduce Euler-Maruyama bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .core import NumericalError, SdeProblem, SdeValueError, TimeGrid, merge_grids
from .noise import EVENT_BRIDGE, BrownianSource, JumpTrain, NoisePath, SeedSpec, bridge_values
from .transform import InverseError, TransformG, build_transform

SCHEMES = ("em", "milstein", "transform-em", "transform-milstein", "adaptive-em", "jump-em")


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise SdeValueError("times and values differ in length")

    @property
    def step_count(self) -> int:
        return len(self.times) - 1

    @property
    def terminal(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True)
class StepPolicy:
    """Maximal step ``delta``; adaptive mode shrinks steps near breakpoints.

    In adaptive mode steps lie in ``[delta**2, delta]``; ``scale`` is the
    distance scale of the step function (see :func:`step_size_h`).
    """

    delta: float
    mode: str = "fixed"
    scale: float = 1.0

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise SdeValueError("step policy mode is 'fixed' or 'adaptive'")
        if not self.delta > 0:
            raise SdeValueError("maximal step must be positive")
        if self.mode == "adaptive" and not self.delta < 1:
            raise SdeValueError("adaptive maximal step must lie in (0, 1)")
        if not self.scale > 0:
            raise SdeValueError("step-function scale must be positive")


def _check_noise(grid, noise):
    if noise.grid != grid:
        raise SdeValueError("noise path is not sampled on the scheme grid")


def _run(problem, times, w, jump_counts, G, transform, milstein):
    packed = K.pack_problem(problem)
    tpack = K.pack_transform(G)
    out = np.empty(times.size)
    status = K.fixed_grid_path(problem.initial, times, w, jump_counts, *packed,
                               *tpack, transform, milstein, out)
    if status == K.STATUS_INVERSE_FAILED:
        raise InverseError("transform inversion did not converge")
    return out


def _fixed(problem, grid, noise, jumps=None, G=None, transform=False, milstein=False):
    _check_noise(grid, noise)
    counts = np.zeros(len(grid), dtype=np.int64)
    if jumps is not None and len(jumps):
        idx = np.searchsorted(grid.nodes, jumps.event_times)
        idx = np.clip(idx, 0, len(grid) - 1)
        if np.any(grid.nodes[idx] != jumps.event_times):
            raise SdeValueError("jump event time missing from the grid")
        np.add.at(counts, idx, 1)
    values = _run(problem, grid.nodes, noise.values, counts, G, transform, milstein)
    return Trajectory(grid.nodes.copy(), values)


def _no_jumps(problem, name):
    if problem.has_jumps:
        raise SdeValueError(f"{name} does not handle a jump component; use jump-em")


def euler_maruyama(problem: SdeProblem, grid: TimeGrid, noise: NoisePath) -> Trajectory:
    """X(t+) = X + mu(X) dt + sigma(X) dW on the nodes of ``grid``."""
    _no_jumps(problem, "euler_maruyama")
    return _fixed(problem, grid, noise)


def milstein(problem: SdeProblem, grid: TimeGrid, noise: NoisePath) -> Trajectory:
    """Euler-Maruyama plus ``sigma sigma' ((dW)^2 - dt) / 2``."""
    _no_jumps(problem, "milstein")
    return _fixed(problem, grid, noise, milstein=True)


def _transform_for(problem, G):
    problem.require_nondegenerate()
    return build_transform(problem.drift, problem.diffusion) if G is None else G


def transform_method(problem: SdeProblem, grid: TimeGrid, noise: NoisePath,
                     G: Optional[TransformG] = None,
                     jumps: Optional[JumpTrain] = None) -> Trajectory:
    """Euler-Maruyama for ``Z = G(X)``, mapped back through ``G^-1``.

    ``G`` is built from the problem when omitted.  Jump events (an extension
    used for reference solutions) are applied in x-coordinates.
    """
    if jumps is None:
        _no_jumps(problem, "transform_method")
    return _fixed(problem, grid, noise, jumps, _transform_for(problem, G), transform=True)


def transformed_milstein(problem: SdeProblem, grid: TimeGrid, noise: NoisePath,
                         G: Optional[TransformG] = None,
                         jumps: Optional[JumpTrain] = None) -> Trajectory:
    """Milstein for ``Z = G(X)``, mapped back through ``G^-1``."""
    if jumps is None:
        _no_jumps(problem, "transformed_milstein")
    return _fixed(problem, grid, noise, jumps, _transform_for(problem, G),
                  transform=True, milstein=True)


def jump_euler_maruyama(problem: SdeProblem, grid: TimeGrid, noise: NoisePath,
                        jumps: JumpTrain) -> Trajectory:
    """Euler-Maruyama between events; each event adds ``rho(X(t-))``.

    Every event time must be a node of ``grid`` (see :func:`augment_with_jumps`).
    """
    if not problem.has_jumps:
        raise SdeValueError("jump-em requires a jump coefficient")
    return _fixed(problem, grid, noise, jumps)


def augment_with_jumps(grid: TimeGrid, noise: NoisePath, jumps: JumpTrain,
                       seed: SeedSpec):
    """Insert the event times into ``grid`` and bridge ``noise`` onto them."""
    fine = merge_grids(grid, jumps.event_times)
    if fine == grid:
        return grid, noise
    w = bridge_values(grid.nodes, noise.values, fine.nodes, seed.generator(EVENT_BRIDGE))
    return fine, NoisePath(fine, w)


def step_size_h(x, delta, breakpoints, scale=1.0, remaining=math.inf):
    """``max(delta**2, min(delta, (dist(x, breakpoints)/scale)**2))``.

    The result is additionally capped at ``remaining`` (time left to T).
    """
    dist = min((abs(x - b) for b in breakpoints), default=math.inf)
    h = max(delta * delta, min(delta, (dist / scale) ** 2))
    return min(h, remaining)


def adaptive_euler_maruyama(problem: SdeProblem, policy: StepPolicy,
                            source: BrownianSource) -> Trajectory:
    """Euler-Maruyama with steps ``h(X, delta)`` and on-demand increments.

    The last step is shortened to land on T exactly.
    """
    _no_jumps(problem, "adaptive_euler_maruyama")
    if policy.mode != "adaptive":
        raise SdeValueError("adaptive_euler_maruyama needs an adaptive step policy")
    T = problem.horizon
    snap = 1e-12 * max(1.0, T)
    bps = problem.drift.breakpoints
    drift, diffusion = problem.drift, problem.diffusion
    tau, x = 0.0, problem.initial
    w = source.value(0.0)
    times, values = [tau], [x]
    while tau < T:
        h = step_size_h(x, policy.delta, bps, policy.scale)
        if h < 1e-14:
            raise NumericalError("adaptive step underflow")
        t_new = tau + h
        if t_new >= T - snap:
            t_new = T
        t_new, w_new = source.resolve(t_new)
        x = x + float(drift(x)) * (t_new - tau) + float(diffusion(x)) * (w_new - w)
        tau, w = t_new, w_new
        times.append(tau)
        values.append(x)
    return Trajectory(np.array(times), np.array(values))
