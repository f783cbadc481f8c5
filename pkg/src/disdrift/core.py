"""Coefficient and problem representations shared by every scheme.

Drift functions are piecewise: finitely many breakpoints split the real line
into open intervals, and each interval carries a closed-form piece taken from
a small catalog.  Closed forms keep one-sided limits and derivatives exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

# Catalog kind codes; these are also the codes understood by the jitted kernels.
POLY = 0
SIN = 1
TANH = 2

_KIND_NAMES = {"constant": POLY, "affine": POLY, "polynomial": POLY,
               "sin": SIN, "tanh": TANH}


class SdeValueError(ValueError):
    """Raised when a problem, grid or coefficient is malformed."""


class NumericalError(ArithmeticError):
    """Raised when a scheme cannot proceed (failed inversion, step underflow)."""


@dataclass(frozen=True)
class SmoothCoefficient:
    """A smooth scalar function from a fixed catalog.

    ``kind`` is one of ``constant``, ``affine``, ``polynomial``, ``sin`` or
    ``tanh``.  Polynomial kinds take ascending coefficients ``c0, c1, ...``.
    ``sin`` and ``tanh`` take ``(c, a, k)`` and evaluate ``c + a*f(k*x)``.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in _KIND_NAMES:
            raise SdeValueError(f"unknown coefficient kind {self.kind!r}")
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        code = _KIND_NAMES[self.kind]
        if code == POLY:
            if len(params) == 0:
                raise SdeValueError("polynomial coefficient needs at least one term")
            if self.kind == "constant" and len(params) != 1:
                raise SdeValueError("constant coefficient takes exactly one parameter")
            if self.kind == "affine" and len(params) != 2:
                raise SdeValueError("affine coefficient takes (intercept, slope)")
        elif len(params) != 3:
            raise SdeValueError(f"{self.kind} coefficient takes (c, a, k)")
        if not all(math.isfinite(p) for p in params):
            raise SdeValueError("coefficient parameters must be finite")

    # convenience constructors
    @classmethod
    def constant(cls, c):
        return cls("constant", (c,))

    @classmethod
    def affine(cls, intercept, slope):
        return cls("affine", (intercept, slope))

    @classmethod
    def polynomial(cls, coeffs):
        return cls("polynomial", tuple(coeffs))

    @classmethod
    def sin(cls, c, a, k=1.0):
        return cls("sin", (c, a, k))

    @classmethod
    def tanh(cls, c, a, k=1.0):
        return cls("tanh", (c, a, k))

    @property
    def code(self) -> int:
        return _KIND_NAMES[self.kind]

    @property
    def is_constant(self) -> bool:
        if self.code == POLY:
            return all(p == 0.0 for p in self.params[1:])
        return self.params[1] == 0.0 or self.params[2] == 0.0

    def __call__(self, x):
        return self.derivative(x, 0)

    def derivative(self, x, order=1):
        """Evaluate the ``order``-th derivative (0, 1 or 2) at ``x``."""
        if order not in (0, 1, 2):
            raise SdeValueError("only derivatives of order 0, 1, 2 are available")
        x = np.asarray(x, dtype=float)
        p = self.params
        code = self.code
        if code == POLY:
            coeffs = np.asarray(p[::-1])
            for _ in range(order):
                coeffs = np.polyder(coeffs) if coeffs.size > 1 else np.zeros(1)
            out = np.polyval(coeffs, x)
        elif code == SIN:
            c, a, k = p
            if order == 0:
                out = c + a * np.sin(k * x)
            elif order == 1:
                out = a * k * np.cos(k * x)
            else:
                out = -a * k * k * np.sin(k * x)
        else:
            c, a, k = p
            t = np.tanh(k * x)
            if order == 0:
                out = c + a * t
            elif order == 1:
                out = a * k * (1.0 - t * t)
            else:
                out = -2.0 * a * k * k * t * (1.0 - t * t)
        return out if out.ndim else float(out)

    def to_dict(self):
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["params"]))


def _as_piece(p):
    if isinstance(p, SmoothCoefficient):
        return p
    if isinstance(p, (int, float)):
        return SmoothCoefficient.constant(p)
    return SmoothCoefficient.polynomial(p)


@dataclass(frozen=True)
class PiecewiseDrift:
    """Piecewise smooth scalar function with finitely many breakpoints.

    ``pieces[k]`` is valid on the open interval between ``breakpoints[k-1]``
    and ``breakpoints[k]`` (with infinite outer ends).  The value at a
    breakpoint is the right limit unless ``breakpoint_values`` says otherwise.
    ``lipschitz`` optionally declares a Lipschitz bound per piece, valid on
    the box ``lipschitz_box``; see :meth:`check_lipschitz`.
    """

    breakpoints: tuple = ()
    pieces: tuple = ()
    breakpoint_values: Optional[tuple] = None
    lipschitz: Optional[tuple] = None
    lipschitz_box: tuple = (-10.0, 10.0)

    def __post_init__(self):
        bps = tuple(float(b) for b in self.breakpoints)
        pieces = tuple(_as_piece(p) for p in self.pieces)
        if len(pieces) != len(bps) + 1:
            raise SdeValueError(
                f"{len(bps)} breakpoints need {len(bps) + 1} pieces, got {len(pieces)}")
        if any(not math.isfinite(b) for b in bps):
            raise SdeValueError("breakpoints must be finite")
        if any(b1 >= b2 for b1, b2 in zip(bps, bps[1:])):
            raise SdeValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "pieces", pieces)
        if self.breakpoint_values is None:
            vals = tuple(float(pieces[k + 1](b)) for k, b in enumerate(bps))
        else:
            vals = tuple(float(v) for v in self.breakpoint_values)
            if len(vals) != len(bps):
                raise SdeValueError("one breakpoint value per breakpoint is required")
        object.__setattr__(self, "breakpoint_values", vals)
        if self.lipschitz is not None:
            lip = tuple(float(v) for v in self.lipschitz)
            if len(lip) != len(pieces):
                raise SdeValueError("one Lipschitz bound per piece is required")
            object.__setattr__(self, "lipschitz", lip)

    @classmethod
    def smooth(cls, piece):
        """Drift without breakpoints."""
        return cls((), (piece,))

    @classmethod
    def sign(cls, scale=1.0, shift=0.0):
        """``shift + scale*sign(x)`` with the right-limit convention at 0."""
        return cls((0.0,), (shift - scale, shift + scale),
                   lipschitz=(0.0, 0.0))

    @property
    def m(self) -> int:
        return len(self.breakpoints)

    def piece_index(self, x):
        """Index of the open interval containing ``x`` (right side at breakpoints)."""
        return np.searchsorted(np.asarray(self.breakpoints), x, side="right")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        out = np.empty_like(x)
        idx = self.piece_index(x)
        for k, piece in enumerate(self.pieces):
            mask = idx == k
            if mask.any():
                out[mask] = piece(x[mask])
        for b, v in zip(self.breakpoints, self.breakpoint_values):
            out[x == b] = v
        return float(out[0]) if scalar else out

    def derivative(self, x, order=1):
        """Piecewise derivative; right-sided at breakpoints."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        out = np.empty_like(x)
        idx = self.piece_index(x)
        for k, piece in enumerate(self.pieces):
            mask = idx == k
            if mask.any():
                out[mask] = piece.derivative(x[mask], order)
        return float(out[0]) if scalar else out

    def one_sided_limits(self, k):
        """Left and right limits at breakpoint ``k`` (1-based, as in ``ζ_1..ζ_m``)."""
        if not 1 <= k <= self.m:
            raise IndexError(f"breakpoint index {k} outside 1..{self.m}")
        z = self.breakpoints[k - 1]
        return float(self.pieces[k - 1](z)), float(self.pieces[k](z))

    def jumps(self):
        """Right limit minus left limit at every breakpoint."""
        return tuple(r - l for l, r in
                     (self.one_sided_limits(k) for k in range(1, self.m + 1)))

    def check_lipschitz(self, n=10_000):
        """Spot-check the declared per-piece Lipschitz bounds by dense sampling.

        Returns True when no sampled difference quotient on ``lipschitz_box``
        exceeds its declared bound (with a 1e-9 relative allowance).
        """
        if self.lipschitz is None:
            raise SdeValueError("no Lipschitz bounds declared")
        lo, hi = self.lipschitz_box
        edges = [lo] + [b for b in self.breakpoints if lo < b < hi] + [hi]
        for a, b in zip(edges, edges[1:]):
            k = int(self.piece_index(0.5 * (a + b)))
            xs = np.linspace(a, b, n)[1:-1]
            q = np.abs(np.diff(self.pieces[k](xs)) / np.diff(xs))
            if q.size and q.max() > self.lipschitz[k] * (1 + 1e-9) + 1e-12:
                return False
        return True

    def to_dict(self):
        d = {"breakpoints": list(self.breakpoints),
             "pieces": [p.to_dict() for p in self.pieces],
             "breakpoint_values": list(self.breakpoint_values)}
        if self.lipschitz is not None:
            d["lipschitz"] = list(self.lipschitz)
            d["lipschitz_box"] = list(self.lipschitz_box)
        return d

    @classmethod
    def from_dict(cls, d):
        pieces = []
        for p in d["pieces"]:
            pieces.append(SmoothCoefficient.from_dict(p) if isinstance(p, dict) else p)
        lip = d.get("lipschitz")
        return cls(tuple(d.get("breakpoints", ())), tuple(pieces),
                   d.get("breakpoint_values"), tuple(lip) if lip is not None else None,
                   tuple(d.get("lipschitz_box", (-10.0, 10.0))))


@dataclass(frozen=True)
class SdeProblem:
    """Scalar SDE ``dX = mu(X) dt + sigma(X) dW + rho(X) dN`` on ``[0, T]``."""

    drift: PiecewiseDrift
    diffusion: SmoothCoefficient
    initial: float
    horizon: float = 1.0
    jump: Optional[SmoothCoefficient] = None
    jump_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "initial", float(self.initial))
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "jump_rate", float(self.jump_rate))
        if not self.horizon > 0:
            raise SdeValueError("horizon must be positive")
        if self.jump is None and self.jump_rate != 0.0:
            raise SdeValueError("jump_rate must be 0 without a jump coefficient")
        if self.jump is not None and not self.jump_rate > 0:
            raise SdeValueError("a jump coefficient needs a positive jump_rate")

    @property
    def has_jumps(self) -> bool:
        return self.jump is not None

    @property
    def nondegenerate(self) -> bool:
        """True when sigma does not vanish at any breakpoint."""
        return all(abs(self.diffusion(z)) > 0 for z in self.drift.breakpoints)

    def require_nondegenerate(self):
        if not self.nondegenerate:
            raise SdeValueError(
                "transform scheme requires sigma(zeta) != 0 at every breakpoint")

    def to_dict(self):
        d = {"drift": self.drift.to_dict(), "diffusion": self.diffusion.to_dict(),
             "initial": self.initial, "horizon": self.horizon}
        if self.jump is not None:
            d["jump"] = self.jump.to_dict()
            d["jump_rate"] = self.jump_rate
        return d

    @classmethod
    def from_dict(cls, d):
        jump = d.get("jump")
        return cls(PiecewiseDrift.from_dict(d["drift"]),
                   SmoothCoefficient.from_dict(d["diffusion"]),
                   d["initial"], d.get("horizon", 1.0),
                   SmoothCoefficient.from_dict(jump) if jump else None,
                   d.get("jump_rate", 0.0))


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time nodes starting at 0."""

    nodes: np.ndarray = field(repr=False)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise SdeValueError("a time grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise SdeValueError("a time grid starts at 0")
        if np.any(np.diff(nodes) <= 0):
            raise SdeValueError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def n(self) -> int:
        return self.nodes.size - 1

    @property
    def delta(self) -> float:
        return float(np.max(np.diff(self.nodes)))

    def __len__(self):
        return self.nodes.size

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.nodes, other.nodes)

    def __repr__(self):
        return f"TimeGrid(n={self.n}, T={self.T}, delta={self.delta})"


def uniform_grid(T, n) -> TimeGrid:
    """Equidistant grid with ``n`` steps on ``[0, T]``."""
    if int(n) != n or n < 1:
        raise SdeValueError("step count must be a positive integer")
    if not T > 0:
        raise SdeValueError("horizon must be positive")
    nodes = np.arange(int(n) + 1) * (float(T) / int(n))
    nodes[-1] = float(T)
    return TimeGrid(nodes)


def merge_grids(grid: TimeGrid, extra: Sequence[float]) -> TimeGrid:
    """Grid with the extra times in ``(0, T]`` inserted as nodes."""
    extra = np.asarray(extra, dtype=float)
    if extra.size == 0:
        return grid
    if extra.min() <= 0 or extra.max() > grid.T:
        raise SdeValueError("extra nodes must lie in (0, T]")
    return TimeGrid(np.union1d(grid.nodes, extra))
