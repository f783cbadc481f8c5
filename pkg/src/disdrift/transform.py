"""Monotone change of variables that removes drift discontinuities.

Around each breakpoint ``zeta_k`` the map adds a compactly supported bump,

    G(x) = x + sum_k alpha_k * phi_k(x - zeta_k),
    phi(u) = u |u| (1 - |u|/c)^3   for |u| <= c,   0 otherwise,

whose second derivative jumps by ``4 alpha_k`` at the breakpoint.  With
``alpha_k = (mu(zeta-) - mu(zeta+)) / (2 sigma(zeta)^2)`` the drift of
``Z = G(X)`` given by Ito's formula, ``G' mu + G'' sigma^2 / 2``, is continuous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .core import NumericalError, PiecewiseDrift, SdeProblem, SdeValueError, SmoothCoefficient

CONTINUITY_TOL = 1e-8


class InverseError(NumericalError):
    """Raised when inverting the transform does not converge."""


@dataclass(frozen=True)
class TransformG:
    """Piecewise-bump transform; see the module docstring."""

    breakpoints: tuple
    alphas: tuple
    supports: tuple

    def __post_init__(self):
        if not len(self.breakpoints) == len(self.alphas) == len(self.supports):
            raise SdeValueError("one slope and one support per breakpoint")
        if any(c <= 0 for c in self.supports):
            raise SdeValueError("supports must be positive")
        for k in range(len(self.breakpoints) - 1):
            if self.breakpoints[k] + self.supports[k] >= \
                    self.breakpoints[k + 1] - self.supports[k + 1]:
                raise SdeValueError("transform supports overlap")
        object.__setattr__(self, "_packed", K.pack_transform(self))

    @property
    def is_identity(self) -> bool:
        return all(a == 0.0 for a in self.alphas)

    def __call__(self, x):
        return apply_G(self, x)

    def inverse(self, z):
        return invert_G(self, z)


def build_transform(drift: PiecewiseDrift, diffusion: SmoothCoefficient) -> TransformG:
    """Construct the transform for ``drift`` and ``diffusion``.

    Raises :class:`SdeValueError` when sigma vanishes at a breakpoint.
    """
    bps = drift.breakpoints
    alphas, supports = [], []
    for k, z in enumerate(bps, start=1):
        s = float(diffusion(z))
        if s == 0.0:
            raise SdeValueError(
                f"transform scheme requires sigma(zeta) != 0; sigma({z}) = 0")
        left, right = drift.one_sided_limits(k)
        alpha = (left - right) / (2.0 * s * s)
        gaps = []
        if k > 1:
            gaps.append(z - bps[k - 2])
        if k < len(bps):
            gaps.append(bps[k] - z)
        gap = min(gaps) if gaps else math.inf
        alphas.append(alpha)
        # half-gap shrunk by a hair so neighbouring supports stay disjoint
        supports.append(min(gap / 2.0 * (1.0 - 1e-9), 1.0 / (2.0 * abs(alpha) + 1.0)))
    return TransformG(tuple(bps), tuple(alphas), tuple(supports))


def _vectorize(fn, x, *args):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return fn(float(x), *args)
    out = np.empty_like(x)
    flat = out.reshape(-1)
    for i, xi in enumerate(x.reshape(-1)):
        flat[i] = fn(float(xi), *args)
    return out


def apply_G(G: TransformG, x):
    """Value of the transform at ``x`` (scalar or array)."""
    return _vectorize(K.g_value, x, *G._packed)


def apply_G_derivatives(G: TransformG, x):
    """``(G', G''(x-), G''(x+))`` at a scalar ``x``.

    The one-sided second derivatives differ only at breakpoints.
    """
    tb, ta, tc = G._packed
    x = float(x)
    g1 = K.g_deriv(x, tb, ta, tc, 1)
    g2_right = K.g_deriv(x, tb, ta, tc, 2)
    g2_left = g2_right
    if x in G.breakpoints:
        k = G.breakpoints.index(x)
        g2_left = -2.0 * G.alphas[k]
    return g1, g2_left, g2_right


def G_prime(G: TransformG, x):
    tb, ta, tc = G._packed
    return _vectorize(K.g_deriv, x, tb, ta, tc, 1)


def G_second(G: TransformG, x):
    """Right-sided second derivative."""
    tb, ta, tc = G._packed
    return _vectorize(K.g_deriv, x, tb, ta, tc, 2)


def invert_G(G: TransformG, z):
    """Solve ``G(x) = z``; identity outside the supports."""
    out = _vectorize(K.g_inverse, z, *G._packed)
    if np.any(np.isnan(out)):
        raise InverseError(f"transform inversion did not converge for z={z}")
    return out


class TransformedProblem:
    """Coefficients of ``Z = G(X)`` obtained by Ito's formula.

    ``drift(z) = [G' mu + G'' sigma^2 / 2](G^-1(z))`` and
    ``diffusion(z) = [G' sigma](G^-1(z))``.  At breakpoint images the
    right-sided values are used; continuity of the drift there is checked
    on construction.
    """

    def __init__(self, G: TransformG, problem: SdeProblem):
        self.G = G
        self.problem = problem
        self.initial = float(apply_G(G, problem.initial))
        self.horizon = problem.horizon
        for k, z in enumerate(G.breakpoints, start=1):
            left, right = self.one_sided_drift(k)
            if abs(left - right) > CONTINUITY_TOL * max(1.0, abs(left)):
                raise SdeValueError(
                    f"transformed drift jumps by {right - left:g} at zeta={z}")

    def _x_coeffs(self, x, g1, g2, mu):
        s = float(self.problem.diffusion(x))
        return g1 * mu + 0.5 * g2 * s * s, g1 * s

    def one_sided_drift(self, k):
        """Left and right limits of the transformed drift at ``G(zeta_k)``."""
        z = self.G.breakpoints[k - 1]
        mu_l, mu_r = self.problem.drift.one_sided_limits(k)
        g1, g2l, g2r = apply_G_derivatives(self.G, z)
        return self._x_coeffs(z, g1, g2l, mu_l)[0], self._x_coeffs(z, g1, g2r, mu_r)[0]

    def _at(self, z):
        x = float(invert_G(self.G, z))
        g1, _, g2 = apply_G_derivatives(self.G, x)
        k = int(self.problem.drift.piece_index(x))
        mu = float(self.problem.drift.pieces[k](x))
        return x, g1, g2, mu

    def drift(self, z):
        def one(zi):
            x, g1, g2, mu = self._at(zi)
            return self._x_coeffs(x, g1, g2, mu)[0]
        return _vectorize(one, z)

    def diffusion(self, z):
        def one(zi):
            x, g1, g2, mu = self._at(zi)
            return self._x_coeffs(x, g1, g2, mu)[1]
        return _vectorize(one, z)

    def diffusion_product(self, z):
        """``sigma~ * dsigma~/dz`` written in x-coordinates: ``sigma (G'' sigma + G' sigma')``."""
        def one(zi):
            x, g1, g2, _ = self._at(zi)
            s = float(self.problem.diffusion(x))
            ds = float(self.problem.diffusion.derivative(x, 1))
            return s * (g2 * s + g1 * ds)
        return _vectorize(one, z)


def transformed_coefficients(G: TransformG, problem: SdeProblem) -> TransformedProblem:
    return TransformedProblem(G, problem)
