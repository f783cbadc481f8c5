"""Compiled-in problems, one per experiment the toolkit reproduces."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .core import PiecewiseDrift, SdeProblem, SmoothCoefficient


@dataclass(frozen=True)
class Preset:
    name: str
    problem: Optional[SdeProblem]
    note: str
    # seminorm presets carry the function b instead of a problem
    function: Optional[Union[PiecewiseDrift, SmoothCoefficient]] = None
    # closed-form family usable as an exact reference
    oracle: Optional[str] = None


def _c(v):
    return SmoothCoefficient.constant(v)


# 0.5 - 2 sign(x): pushes toward 0 from both sides
INWARD = PiecewiseDrift((0.0,), (2.5, -1.5), lipschitz=(0.0, 0.0))
# -(0.5 - 2 sign(x)): pushes away from 0
OUTWARD = PiecewiseDrift((0.0,), (-2.5, 1.5), lipschitz=(0.0, 0.0))
SIGN = PiecewiseDrift.sign()
SIN_DIFFUSION = SmoothCoefficient.sin(1.0, 0.2, 1.0)
# sign(x) - tanh(x): integrable irregular part of sign = tanh + (sign - tanh)
SIGN_MINUS_TANH = PiecewiseDrift(
    (0.0,), (SmoothCoefficient.tanh(-1.0, -1.0), SmoothCoefficient.tanh(1.0, -1.0)))

PRESETS = {p.name: p for p in [
    Preset("ode-only", SdeProblem(PiecewiseDrift.smooth(_c(-1.5)), _c(0.0), 1.0),
           "deterministic drift -1.5 without noise; Euler is exact", oracle="constant"),
    Preset("constant", SdeProblem(PiecewiseDrift.smooth(_c(0.5)), _c(0.7), 1.0),
           "constant coefficients; Euler-Maruyama is exact at grid nodes",
           oracle="constant"),
    Preset("chattering-ode", SdeProblem(INWARD, _c(0.0), 1.0),
           "Euler on x' = 0.5 - 2 sign(x): no solution exists, iterates chatter around 0"),
    Preset("sign-inward", SdeProblem(INWARD, _c(1.0), 1.0),
           "drift 0.5 - 2 sign(x) with additive noise; noise regularises"),
    Preset("sign-outward", SdeProblem(OUTWARD, _c(1.0), 0.1),
           "outward drift -(0.5 - 2 sign(x)) from 0.1; few paths reach 0"),
    Preset("rare-event", SdeProblem(OUTWARD, _c(1.0), 0.1),
           "alias of sign-outward used by the rare-event comparison"),
    Preset("sign-mult", SdeProblem(INWARD, SIN_DIFFUSION, 1.0),
           "drift 0.5 - 2 sign(x), diffusion 1 + 0.2 sin(x); Euler order 1/2"),
    Preset("sign-additive", SdeProblem(SIGN, _c(1.0), 0.1),
           "drift sign(x) with additive noise; Euler order 3/4"),
    Preset("sign-jump", SdeProblem(INWARD, SIN_DIFFUSION, 1.0,
                                   jump=_c(0.5), jump_rate=1.0),
           "sign-mult plus Poisson jumps of size 0.5 at rate 1; jump Euler order 1/2"),
    Preset("gbm", SdeProblem(PiecewiseDrift.smooth(SmoothCoefficient.affine(0.0, 0.5)),
                             SmoothCoefficient.affine(0.0, 0.3), 1.0),
           "geometric Brownian motion a=0.5, b=0.3; Euler order 1/2", oracle="gbm"),
    Preset("ou", SdeProblem(PiecewiseDrift.smooth(SmoothCoefficient.affine(0.0, -1.0)),
                            _c(1.0), 1.0),
           "Ornstein-Uhlenbeck theta=1, s=1; Euler order 1 (additive noise)", oracle="ou"),
    Preset("sign-decomposition", None,
           "irregular part b = sign - tanh of the drift sign(x)", function=SIGN_MINUS_TANH),
    Preset("constant-b", None, "constant function; every seminorm vanishes",
           function=PiecewiseDrift.smooth(_c(1.0))),
]}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
