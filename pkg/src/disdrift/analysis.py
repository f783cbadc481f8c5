"""Monte Carlo strong-error measurement and convergence-order regression.

Every Monte Carlo path is regenerated from ``SeedSpec(seed, path_index)``:
a coarse Brownian path is bridge-refined onto the reference grid, and each
scheme at each step size reads the same path restricted to its own grid.
Per-path results are gathered in path order, so results do not depend on
how paths are split across worker processes.
"""

from __future__ import annotations

import math
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from . import _kernels as K
from .core import NumericalError, PiecewiseDrift, SdeProblem, SdeValueError, \
    SmoothCoefficient, merge_grids, uniform_grid
from .noise import ADAPTIVE, NoisePath, SeedSpec, coarsen, refine_bridge, sample_jumps, \
    sample_path
from .presets import get_preset
from .schemes import SCHEMES, augment_with_jumps, euler_maruyama, jump_euler_maruyama, \
    milstein, transform_method, transformed_milstein
from .transform import TransformG, build_transform

N_BATCHES = 20


class ReferenceUnavailable(SdeValueError):
    pass


@dataclass
class RateReport:
    ladder: list                 # (delta, rmse, stderr)
    slope: float
    slope_ci: float
    intercept: float = 0.0
    paths: Optional[int] = None
    seed: Optional[int] = None

    @property
    def interval(self):
        return self.slope - self.slope_ci, self.slope + self.slope_ci


@dataclass
class CostReport:
    entries: list                # (delta, mean steps, stderr)
    slope: float
    slope_ci: float = 0.0
    paths: Optional[int] = None
    seed: Optional[int] = None


@dataclass
class SeminormResult:
    kappa: float
    value: float
    resolution: int
    radius: float


# ------------------------------------------------------------------ oracles

def closed_form_family(problem: SdeProblem) -> Optional[str]:
    """``constant``, ``ou`` or ``gbm`` when the problem has a closed form."""
    d = problem.drift
    if d.m or problem.has_jumps or d.pieces[0].code != K.POLY:
        return None
    mu = list(d.pieces[0].params) + [0.0, 0.0]
    sig = problem.diffusion
    if sig.code != K.POLY:
        return None
    s = list(sig.params) + [0.0, 0.0]
    if any(mu[2:]) or any(s[2:]):
        return None
    if mu[1] == 0.0 and s[1] == 0.0:
        return "constant"
    if mu[0] == 0.0 and mu[1] != 0.0 and s[1] == 0.0:
        return "ou"
    if mu[0] == 0.0 and s[0] == 0.0:
        return "gbm"
    return None


def exact_solution(problem: Union[SdeProblem, str], noise: NoisePath) -> float:
    """Closed-form terminal value driven by ``noise``.

    For Ornstein-Uhlenbeck the stochastic integral is the Ito sum on the
    noise grid, so the value is only as accurate as that grid is fine.
    """
    if isinstance(problem, str):
        problem = get_preset(problem).problem
    family = closed_form_family(problem)
    if family is None:
        raise ReferenceUnavailable("problem has no closed-form solution")
    T = noise.grid.T
    if T != problem.horizon:
        raise SdeValueError("noise horizon differs from the problem horizon")
    xi = problem.initial
    w_T = noise.values[-1]
    mu = list(problem.drift.pieces[0].params) + [0.0]
    s = list(problem.diffusion.params) + [0.0]
    if family == "constant":
        return xi + mu[0] * T + s[0] * w_T
    if family == "gbm":
        a, b = mu[1], s[1]
        return xi * math.exp((a - 0.5 * b * b) * T + b * w_T)
    theta = -mu[1]
    t = noise.grid.nodes[:-1]
    return xi * math.exp(-theta * T) + s[0] * float(
        np.dot(np.exp(-theta * (T - t)), noise.increments))


# -------------------------------------------------------------- the engine

@dataclass
class _Study:
    problem: SdeProblem
    schemes: tuple
    levels: tuple                # step counts per delta
    n_ref: int
    seed: int
    reference: Optional[str]     # "exact", "fine-grid" or None
    scale: float = 1.0
    deltas: tuple = ()
    coarse_n: int = 0

    def __post_init__(self):
        p = self.problem
        self.T = p.horizon
        self.G = None
        if p.drift.m and p.nondegenerate:
            self.G = build_transform(p.drift, p.diffusion)
        elif any(s.startswith("transform") for s in self.schemes):
            p.require_nondegenerate()
        self.grids = [uniform_grid(self.T, n) for n in self.levels]
        self.ref_grid = uniform_grid(self.T, self.n_ref)
        self.coarse = uniform_grid(self.T, self.coarse_n or min(self.levels))
        if not self.deltas:
            self.deltas = tuple(self.T / n for n in self.levels)


def _run_scheme(name, problem, grid, noise, train, G):
    if name == "em":
        return euler_maruyama(problem, grid, noise).terminal
    if name == "milstein":
        return milstein(problem, grid, noise).terminal
    if name == "jump-em":
        return jump_euler_maruyama(problem, grid, noise, train).terminal
    if name == "transform-em":
        return transform_method(problem, grid, noise, G, train).terminal
    if name == "transform-milstein":
        return transformed_milstein(problem, grid, noise, G, train).terminal
    raise SdeValueError(f"unknown scheme {name!r}")


def _reference_value(study, ref_grid, ref_noise, train):
    p = study.problem
    if study.reference == "exact":
        return exact_solution(p, ref_noise)
    if study.G is not None or not p.drift.m:
        if p.drift.m:
            return transformed_milstein(p, ref_grid, ref_noise, study.G, train).terminal
        if p.has_jumps:
            # identity transform: Milstein between events
            return transformed_milstein(p, ref_grid, ref_noise, TransformG((), (), ()),
                                        train).terminal
        return milstein(p, ref_grid, ref_noise).terminal
    if p.has_jumps:
        return jump_euler_maruyama(p, ref_grid, ref_noise, train).terminal
    return euler_maruyama(p, ref_grid, ref_noise).terminal


def _adaptive(study, level, delta, ref_grid, ref_noise, index):
    p = study.problem
    packed = K.pack_problem(p)
    bps, bvals, pcodes, pparams, scode, sparams = packed[:6]
    size = int(16 / delta) + 1024
    empty = np.zeros(0)
    while True:
        normals = SeedSpec(study.seed, index).generator(ADAPTIVE, level).standard_normal(size)
        x, steps, used, status = K.adaptive_path(
            p.initial, study.T, delta, study.scale, bps, bvals, pcodes, pparams,
            scode, sparams, ref_grid.nodes, ref_noise.values, normals, empty, empty)
        if status == K.STATUS_BUFFER:
            size *= 2
            continue
        if status != K.STATUS_OK:
            raise NumericalError("adaptive step underflow")
        return x, steps


def _simulate_path(study: _Study, index: int):
    """Terminal values (schemes x levels), reference value, and step counts."""
    p = study.problem
    seed = SeedSpec(study.seed, index)
    coarse = sample_path(study.coarse, seed)
    ref_noise = refine_bridge(coarse, study.ref_grid, seed)
    ref_grid = study.ref_grid
    train = None
    if p.has_jumps:
        train = sample_jumps(p.jump_rate, study.T, seed)
        ref_grid, ref_noise = augment_with_jumps(ref_grid, ref_noise, train, seed)
    ns, nl = len(study.schemes), len(study.levels)
    values = np.empty((ns, nl))
    steps = np.empty((ns, nl))
    for j, grid in enumerate(study.grids):
        g = noise = None
        for i, name in enumerate(study.schemes):
            if name == "adaptive-em":
                values[i, j], steps[i, j] = _adaptive(
                    study, j, study.deltas[j], ref_grid, ref_noise, index)
            else:
                if g is None:
                    g = merge_grids(grid, train.event_times) if train is not None else grid
                    noise = coarsen(ref_noise, g)
                values[i, j] = _run_scheme(name, p, g, noise, train, study.G)
                steps[i, j] = g.n
    ref = _reference_value(study, ref_grid, ref_noise, train) if study.reference else np.nan
    return values, ref, steps


def _simulate_chunk(study, indices):
    out = [_simulate_path(study, i) for i in indices]
    return (np.stack([o[0] for o in out]), np.array([o[1] for o in out]),
            np.stack([o[2] for o in out]))


def _run_paths(study, paths, workers):
    indices = np.arange(paths)
    if workers <= 1:
        return _simulate_chunk(study, indices)
    chunks = np.array_split(indices, min(paths, 4 * workers))
    with ProcessPoolExecutor(workers, mp_context=mp.get_context("fork")) as ex:
        parts = list(ex.map(_simulate_chunk, [study] * len(chunks), chunks))
    return tuple(np.concatenate([part[k] for part in parts]) for k in range(3))


def _levels(T, deltas):
    levels = []
    for d in deltas:
        n = T / d
        if not d > 0 or abs(n - round(n)) > 1e-9 * n:
            raise SdeValueError(f"step {d} does not divide the horizon {T}")
        levels.append(int(round(n)))
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise SdeValueError("step ladder must be strictly decreasing")
    return tuple(levels)


def batch_rmse(sq_errors):
    """RMSE and its standard error from 20 batch means of squared errors."""
    sq_errors = np.asarray(sq_errors, dtype=float)
    mse = float(np.mean(sq_errors))
    rmse = math.sqrt(mse)
    batches = np.array([b.mean() for b in np.array_split(sq_errors, N_BATCHES)])
    se_mse = float(np.std(batches, ddof=1) / math.sqrt(N_BATCHES))
    se = se_mse / (2.0 * rmse) if rmse > 0 else 0.0
    return rmse, se


@dataclass
class StudyResult:
    deltas: tuple
    schemes: tuple
    rmse: dict = field(default_factory=dict)        # scheme -> [(delta, rmse, se)]
    steps: dict = field(default_factory=dict)       # scheme -> [(delta, mean, se)]
    paths: int = 0
    seed: int = 0
    raw_errors: Optional[np.ndarray] = field(default=None, repr=False)

    def rate(self, scheme) -> RateReport:
        rep = estimate_order(self.rmse[scheme])
        rep.paths, rep.seed = self.paths, self.seed
        return rep

    def cost(self, scheme) -> CostReport:
        return _cost_report(self.steps[scheme], self.paths, self.seed)


def _check_scheme(problem, name):
    if name not in SCHEMES:
        raise SdeValueError(f"unknown scheme {name!r}; choose from {', '.join(SCHEMES)}")
    if name == "jump-em" and not problem.has_jumps:
        raise SdeValueError("jump-em requires a problem with a jump coefficient")
    if name != "jump-em" and problem.has_jumps and name not in (
            "transform-em", "transform-milstein"):
        raise SdeValueError(f"{name} does not handle jumps; use jump-em")
    if name.startswith("transform"):
        problem.require_nondegenerate()


def convergence_study(problem: SdeProblem, schemes: Sequence[str], deltas: Sequence[float],
                      paths: int, seed: int = 0, reference: Optional[str] = "fine-grid",
                      refine_exponent: int = 6, workers: int = 1,
                      scale: float = 1.0) -> StudyResult:
    """Strong errors at T for several schemes and step sizes on shared paths.

    ``reference`` is ``"exact"`` (closed-form oracle), ``"fine-grid"``
    (transformed Milstein, or Euler when sigma vanishes at a breakpoint, on a
    grid ``2**refine_exponent`` times finer than the smallest step) or None
    to skip error measurement (step counts only).
    """
    schemes = tuple(schemes)
    for s in schemes:
        _check_scheme(problem, s)
    if reference not in ("exact", "fine-grid", None):
        raise SdeValueError("reference is 'exact' or 'fine-grid'")
    if reference == "exact" and closed_form_family(problem) is None:
        raise ReferenceUnavailable("no closed-form oracle for this problem")
    if reference is not None and paths < 100:
        raise SdeValueError("at least 100 paths are required")
    if refine_exponent < 0:
        raise SdeValueError("refine exponent must be nonnegative")
    T = problem.horizon
    coarse_n = 0
    try:
        levels = _levels(T, deltas)
    except SdeValueError:
        if set(schemes) != {"adaptive-em"}:
            raise
        # adaptive steps need not divide T; the fixed grids only seed the noise
        if any(not d > 0 for d in deltas) or any(b >= a for a, b in zip(deltas, deltas[1:])):
            raise SdeValueError("step ladder must be strictly decreasing") from None
        levels = tuple(max(1, math.ceil(T / d - 1e-9)) for d in deltas)
        coarse_n = levels[-1]
    n_ref = levels[-1] * 2 ** refine_exponent
    if not coarse_n and any(n_ref % n for n in levels):
        raise SdeValueError("every step must divide the reference step")
    study = _Study(problem, schemes, levels, n_ref, int(seed), reference, scale,
                   tuple(float(d) for d in deltas), coarse_n)
    values, ref, steps = _run_paths(study, paths, workers)
    res = StudyResult(tuple(float(d) for d in deltas), schemes, paths=paths, seed=int(seed))
    errors = values - ref[:, None, None]
    res.raw_errors = errors
    for i, name in enumerate(schemes):
        if reference is not None:
            res.rmse[name] = [(d, *batch_rmse(errors[:, i, j] ** 2))
                              for j, d in enumerate(res.deltas)]
        res.steps[name] = [(d, float(steps[:, i, j].mean()),
                            float(steps[:, i, j].std(ddof=1) / math.sqrt(paths))
                            if paths > 1 else 0.0)
                           for j, d in enumerate(res.deltas)]
    return res


def strong_error(problem: SdeProblem, scheme: str, delta: float, paths: int,
                 reference: str = "fine-grid", seed: int = 0, refine_exponent: int = 6,
                 workers: int = 1):
    """``(rmse, stderr)`` of ``scheme`` at step ``delta`` against the reference."""
    res = convergence_study(problem, [scheme], [delta], paths, seed, reference,
                            refine_exponent, workers)
    _, rmse, se = res.rmse[scheme][0]
    return rmse, se


def _ols(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    fit = stats.linregress(x, y)
    n = x.size
    ci = float(stats.t.ppf(0.975, n - 2) * fit.stderr) if n > 2 else math.inf
    return float(fit.slope), ci, float(fit.intercept)


def estimate_order(ladder) -> RateReport:
    """OLS slope of log2(RMSE) against log2(delta) with a 95% half-width."""
    ladder = [tuple(float(v) for v in row) for row in ladder]
    if len(ladder) < 4:
        raise SdeValueError("order estimation needs at least 4 ladder points")
    ladder = [row if len(row) == 3 else (row[0], row[1], 0.0) for row in ladder]
    deltas = np.array([r[0] for r in ladder])
    rmse = np.array([r[1] for r in ladder])
    if np.any(rmse <= 0):
        raise SdeValueError("zero RMSE in ladder (exact oracle misuse?)")
    if np.any(np.diff(deltas) >= 0):
        raise SdeValueError("ladder steps must be strictly decreasing")
    slope, ci, icpt = _ols(np.log2(deltas), np.log2(rmse))
    return RateReport(ladder, slope, ci, icpt)


def _cost_report(entries, paths, seed):
    deltas = np.array([e[0] for e in entries])
    means = np.array([e[1] for e in entries])
    if len(entries) >= 2:
        slope, ci, _ = _ols(np.log2(1.0 / deltas), np.log2(means))
    else:
        slope, ci = math.nan, math.nan
    return CostReport(list(entries), slope, ci, paths, seed)


def cost_curve(problem: SdeProblem, deltas: Sequence[float], paths: int, seed: int = 0,
               scale: float = 1.0, workers: int = 1) -> CostReport:
    """Mean adaptive step counts per maximal step and their log-log slope."""
    if len(deltas) < 4:
        raise SdeValueError("cost regression needs at least 4 steps")
    if any(not 0 < d < 1 for d in deltas):
        raise SdeValueError("adaptive maximal steps must lie in (0, 1)")
    res = convergence_study(problem, ["adaptive-em"], deltas, paths, seed, None,
                            refine_exponent=0, workers=workers, scale=scale)
    return res.cost("adaptive-em")


# ------------------------------------------------------------ rare events

def hitting_fraction(problem: SdeProblem, delta: float, paths: int, band: float,
                     seed: int = 0) -> float:
    """Fraction of Euler paths that come within ``band`` of a breakpoint.

    A path counts when a grid value lies in the band or two consecutive
    values straddle a breakpoint (the interpolated path crosses it).
    """
    if paths < 1000:
        raise SdeValueError("hitting_fraction needs at least 1000 paths")
    bps = np.asarray(problem.drift.breakpoints)
    if bps.size == 0:
        raise SdeValueError("problem has no breakpoint to hit")
    grid = uniform_grid(problem.horizon, _levels(problem.horizon, [delta])[0])
    hits = 0
    for i in range(paths):
        x = euler_maruyama(problem, grid, sample_path(grid, SeedSpec(seed, i))).values
        side = np.sign(x[:, None] - bps[None, :])
        near = np.abs(x[:, None] - bps[None, :]) <= band
        if near.any() or np.any(side[1:] * side[:-1] < 0):
            hits += 1
    return hits / paths


# ------------------------------------------------------------- regularity

def predicted_order(kappa: float) -> float:
    """Euler order ``(1 + kappa) / 2`` predicted by fractional smoothness."""
    if not 0 <= kappa < 1:
        raise SdeValueError("kappa must lie in [0, 1)")
    return (1.0 + kappa) / 2.0


def _as_piecewise(b):
    if isinstance(b, PiecewiseDrift):
        return b
    if isinstance(b, SmoothCoefficient):
        return PiecewiseDrift.smooth(b)
    raise SdeValueError("seminorm needs a PiecewiseDrift or SmoothCoefficient")


def _phi(s, q):
    # second antiderivative of s**q up to affine terms, which cancel in blocks
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if q == -1.0:
            return np.where(s > 0, s * np.log(s), 0.0)
        if q == -2.0:
            return -np.log(s)
        return s ** (q + 2.0) / ((q + 1.0) * (q + 2.0))


def _kernel_block(a1, a2, b1, b2, q):
    """Exact integral of |x - y|**q over [a1, a2] x [b1, b2] with b1 >= a2."""
    return _phi(b2 - a1, q) - _phi(b1 - a1, q) - _phi(b2 - a2, q) + _phi(np.maximum(b1 - a2, 0), q)


def sobolev_seminorm(b, kappa: float, radius: float = 10.0, resolution: int = 1000,
                     ) -> SeminormResult:
    """Sobolev-Slobodeckij seminorm ``|b|_kappa`` by product quadrature.

    Cells are aligned with the breakpoints of ``b``.  Off the diagonal the
    kernel ``|x-y|**(-2 kappa - 1)`` is integrated exactly over each cell
    pair and multiplied by ``(b(x_i) - b(x_j))**2`` at the midpoints; on the
    diagonal and between neighbouring cells without a breakpoint the local
    expansion ``b'(x)**2 |x-y|**2`` is used.  Outside ``[-R, R]`` the
    function is taken as constant at its edge values.
    """
    if not 0 < kappa < 1:
        raise SdeValueError("kappa must lie in (0, 1)")
    f = _as_piecewise(b)
    R = float(radius)
    n = int(resolution)
    edge_l, edge_r = float(f.pieces[0](-R)), float(f.pieces[-1](R))
    scale = max(1.0, float(np.max(np.abs(f(np.linspace(-R, R, 257))))))
    for side, edge in ((-1, edge_l), (1, edge_r)):
        probe = f(side * np.linspace(R, 4 * R, 64))
        if np.max(np.abs(probe - edge)) > 1e-8 * scale:
            raise SdeValueError("function does not settle outside the truncation radius")
    inner = [z for z in f.breakpoints if -R < z < R]
    jumps = [abs(np.subtract(*f.one_sided_limits(k + 1))) > 1e-12 * scale
             for k, z in enumerate(f.breakpoints) if -R < z < R]
    cuts = [-R] + inner + [R]
    edges, segment = [], []
    for s, (lo, hi) in enumerate(zip(cuts, cuts[1:])):
        k = max(1, int(math.ceil(n * (hi - lo) / (2 * R))))
        e = np.linspace(lo, hi, k + 1)
        edges.append(e[:-1])
        segment += [s] * k
    left = np.concatenate(edges)
    right = np.append(left[1:], R)
    segment = np.array(segment)
    mid = 0.5 * (left + right)
    width = right - left
    v = np.asarray(f(mid))
    d = np.asarray(f.derivative(mid, 1))
    if kappa >= 0.5 and any(jumps):
        return SeminormResult(kappa, math.inf, n, R)
    p = 2.0 * kappa + 1.0
    q_val = -p          # kernel exponent for value differences
    q_der = 2.0 - p     # kernel exponent for the derivative expansion

    total = 0.0
    # diagonal cells
    total += float(np.sum(d ** 2 * 2.0 * width ** (q_der + 2) / ((q_der + 1) * (q_der + 2))))
    m = mid.size
    for i in range(m - 1):
        j = np.arange(i + 1, m)
        adjacent_same = (j == i + 1) & (segment[j] == segment[i])
        adjacent_jump = (j == i + 1) & (segment[j] != segment[i])
        far = ~(adjacent_same | adjacent_jump)
        acc = 0.0
        if far.any():
            jj = j[far]
            acc += float(np.sum((v[i] - v[jj]) ** 2 *
                                _kernel_block(left[i], right[i], left[jj], right[jj], q_val)))
        if adjacent_same[0]:
            dd = 0.5 * (d[i] + d[i + 1])
            acc += dd * dd * float(_kernel_block(left[i], right[i], left[i + 1],
                                                 right[i + 1], q_der))
        if adjacent_jump[0] and not jumps[segment[i]]:
            # continuous across the breakpoint: one-sided slopes
            dd2 = 0.5 * (d[i] ** 2 + d[i + 1] ** 2)
            acc += dd2 * float(_kernel_block(left[i], right[i], left[i + 1], right[i + 1],
                                             q_der))
        elif adjacent_jump[0]:
            acc += (v[i] - v[i + 1]) ** 2 * float(_kernel_block(left[i], right[i], left[i + 1],
                                                                 right[i + 1], q_val))
        total += 2.0 * acc
    # cells against the constant tails; the edge cell uses the derivative expansion
    e = 2.0 * kappa
    for edge, far, near, end in ((edge_r, R - left, R - right, m - 1),
                                 (edge_l, right + R, left + R, 0)):
        coeff = (v - edge) ** 2
        keep = np.arange(m) != end
        if kappa == 0.5:
            tail = coeff[keep] * np.log(far[keep] / near[keep]) / e
        else:
            tail = coeff[keep] * (far[keep] ** (1 - e) - near[keep] ** (1 - e)) / (e * (1 - e))
        total += 2.0 * float(np.sum(tail))
        total += 2.0 * d[end] ** 2 * width[end] ** (3 - e) / (e * (3 - e))
    jump_inf = (edge_l - edge_r) ** 2
    if math.sqrt(jump_inf) > 1e-8 * scale:
        if kappa <= 0.5:
            raise SdeValueError("function has different limits at +-infinity; seminorm diverges")
        total += 2.0 * jump_inf * (2 * R) ** (1 - e) / (e * (e - 1))
    return SeminormResult(kappa, math.sqrt(max(total, 0.0)), n, R)
