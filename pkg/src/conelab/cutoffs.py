"""Mollified cutoffs with analytic derivatives.

Two flavours cover every use in the package: a C^2 quintic smoothstep
(piecewise polynomial, exact first and second derivatives, used wherever
a commutator [Laplacian, chi] is formed analytically) and a C-infinity
exponential step (used where only pointwise multiplication happens but
spectral tails matter, e.g. radial cutoffs on cones).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def smoothstep_c2(s):
    """Quintic step: 0 below 0, 1 above 1, C^2 across both joins."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    return s**3 * (10.0 + s * (-15.0 + 6.0 * s))


def smoothstep_c2_d1(s):
    s = np.asarray(s, dtype=float)
    inside = (s > 0.0) & (s < 1.0)
    sc = np.clip(s, 0.0, 1.0)
    return np.where(inside, 30.0 * sc**2 * (sc - 1.0) ** 2, 0.0)


def smoothstep_c2_d2(s):
    s = np.asarray(s, dtype=float)
    inside = (s > 0.0) & (s < 1.0)
    sc = np.clip(s, 0.0, 1.0)
    return np.where(inside, 60.0 * sc * (2.0 * sc - 1.0) * (sc - 1.0), 0.0)


def smoothstep_cinf(s):
    """Exponential step exp(-1/s)-style: flat to all orders at both joins."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    lo = s <= 0.0
    hi = s >= 1.0
    mid = ~(lo | hi)
    out[lo] = 0.0
    out[hi] = 1.0
    sm = s[mid]
    a = np.exp(-1.0 / sm)
    b = np.exp(-1.0 / (1.0 - sm))
    out[mid] = a / (a + b)
    return out


@dataclass(frozen=True)
class RadialBump:
    """Profile equal to 1 on [0, r_inner], 0 beyond r_outer.

    ``kind`` selects the transition: "c2" carries analytic first and
    second derivatives, "cinf" is smooth but derivative-free here.
    """

    r_inner: float
    r_outer: float
    kind: str = "c2"

    def __post_init__(self) -> None:
        if not (0.0 <= self.r_inner < self.r_outer):
            raise ValueError("need 0 <= r_inner < r_outer")
        if self.kind not in ("c2", "cinf"):
            raise ValueError(f"unknown bump kind {self.kind!r}")

    def _s(self, r):
        return (np.asarray(r, dtype=float) - self.r_inner) / (self.r_outer - self.r_inner)

    def __call__(self, r):
        step = smoothstep_c2 if self.kind == "c2" else smoothstep_cinf
        return 1.0 - step(self._s(r))

    def d1(self, r):
        if self.kind != "c2":
            raise ValueError("analytic derivatives only for the c2 profile")
        w = self.r_outer - self.r_inner
        return -smoothstep_c2_d1(self._s(r)) / w

    def d2(self, r):
        if self.kind != "c2":
            raise ValueError("analytic derivatives only for the c2 profile")
        w = self.r_outer - self.r_inner
        return -smoothstep_c2_d2(self._s(r)) / w**2


@dataclass(frozen=True)
class RadialCutoff2D:
    """chi(x) = bump(|x - center|) on the plane, with analytic grad and Laplacian."""

    bump: RadialBump
    center: tuple[float, float] = (0.0, 0.0)

    def _r(self, x, y):
        return np.hypot(np.asarray(x) - self.center[0], np.asarray(y) - self.center[1])

    def __call__(self, x, y):
        return self.bump(self._r(x, y))

    def gradient(self, x, y):
        dx = np.asarray(x, dtype=float) - self.center[0]
        dy = np.asarray(y, dtype=float) - self.center[1]
        r = np.hypot(dx, dy)
        p1 = self.bump.d1(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            gx = np.where(r > 0.0, p1 * dx / r, 0.0)
            gy = np.where(r > 0.0, p1 * dy / r, 0.0)
        return gx, gy

    def laplacian(self, x, y):
        r = self._r(x, y)
        p1 = self.bump.d1(r)
        p2 = self.bump.d2(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(r > 0.0, p2 + p1 / r, 2.0 * p2)
