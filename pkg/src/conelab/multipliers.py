"""Commutant multipliers and the smoothing quadratic forms they generate.

Every multiplier here is the antisymmetrization of f(r) d/dr against the
measure r dr on a cone:

    M_f = f d/dr + f/(2r) + f'/2.

Its bracket with the (negative-definite) Laplacian obeys one operator
identity, acting on an angular mode with scaling order nu:

    [M_f, -Lap] = -2 d* f' d  +  Phi_f(r)  +  (1/2 - 2 nu^2) f(r)/r^3,
    Phi_f = f'''/2 + f''/r - f'/(2 r^2),      d* = -d/dr - 1/r,

from which the special cases follow: f = 1 leaves only the dichotomy
weight (1/2 - 2 nu^2)/r^3, whose sign flips between the zero mode and
every other mode when rho < 4 pi, while f = r/<r> gives bounded
coefficients and the zeroth-order weight g(r) = (r^4+8r^2-8)/(2<r>^7)
once the dichotomy part is folded in.  The identity also shows the
dichotomy term vanishes exactly at nu = 1/2, which is why a profiled
multiplier with f' < 0 and Phi_f > 0 carries the borderline modes of a
slit (rho = 4 pi).

Note on orientation: the closed forms above are for [M, -Lap] with Lap
negative definite, and with that orientation the quadratic form is
POSITIVE on the zero mode and negative on the others.  Estimate-side
arguments use the opposite sign; reports here state the forms of
[M, -Lap] and leave the flip to the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cone import ModeField, make_mode_field  # noqa: F401  (re-exported helper)

SUPPORT_CELLS = 4
# Loose enough to admit Gaussian tails ~e^-4 at the tip, tight enough that
# zero-padded finite-difference stencils stay below commutator tolerances.
SUPPORT_MASS_TOL = 1e-5


class SupportError(ValueError):
    pass


def check_support(field: ModeField, cells: int = SUPPORT_CELLS,
                  tol: float = SUPPORT_MASS_TOL) -> None:
    """Require negligible mass within ``cells`` grid cells of either end."""
    dens = np.sum(np.abs(field.amp) ** 2, axis=0) * field.grid.w
    total = float(dens.sum())
    if total == 0.0:
        return
    edge = float(dens[:cells].sum() + dens[-cells:].sum())
    if edge > tol * total:
        raise SupportError(
            f"field carries {edge/total:.2e} of its mass within {cells} cells "
            "of the tip or the wall"
        )


def radial_d1(a: np.ndarray, h: float) -> np.ndarray:
    """4th-order centered d/dr; zero padding is exact for compliant support."""
    ap = np.concatenate([np.zeros(2, dtype=a.dtype), a, np.zeros(2, dtype=a.dtype)])
    return (-ap[4:] + 8.0 * ap[3:-1] - 8.0 * ap[1:-3] + ap[:-4]) / (12.0 * h)


def radial_d2(a: np.ndarray, h: float) -> np.ndarray:
    ap = np.concatenate([np.zeros(2, dtype=a.dtype), a, np.zeros(2, dtype=a.dtype)])
    return (-ap[4:] + 16.0 * ap[3:-1] - 30.0 * ap[2:-2] + 16.0 * ap[1:-3] - ap[:-4]) / (12.0 * h**2)


def mode_laplacian(a: np.ndarray, nu: float, r: np.ndarray, h: float) -> np.ndarray:
    """Laplacian on one angular mode (negative definite): a'' + a'/r - nu^2 a/r^2."""
    return radial_d2(a, h) + radial_d1(a, h) / r - (nu**2) * a / r**2


@dataclass(frozen=True)
class RadialMultiplier:
    """Antisymmetrized radial multiplier f d/dr + f/(2r) + f'/2.

    ``profile`` through ``profile_d3`` are callables of r; the upper
    derivatives only feed commutator closed forms and may be omitted
    (None) when those are not needed.
    """

    name: str
    profile: object
    profile_d1: object
    profile_d2: object = None
    profile_d3: object = None

    def first_order_coeff(self, r: np.ndarray) -> np.ndarray:
        return np.asarray(self.profile(r), dtype=float)

    def zeroth_order_coeff(self, r: np.ndarray) -> np.ndarray:
        return self.profile(r) / (2.0 * r) + 0.5 * self.profile_d1(r)


def sharp_multiplier() -> RadialMultiplier:
    """f = 1: bracket is the pure dichotomy weight (1/2 - 2 nu^2)/r^3."""
    one = lambda r: np.ones_like(np.asarray(r, dtype=float))
    zero = lambda r: np.zeros_like(np.asarray(r, dtype=float))
    return RadialMultiplier("sharp", one, zero, zero, zero)


def bounded_multiplier() -> RadialMultiplier:
    """f = r/<r>: bounded coefficients, bracket weights <r>^-3 and g(r)."""
    f = lambda r: r / np.hypot(1.0, r)
    d1 = lambda r: (1.0 + r**2) ** -1.5
    d2 = lambda r: -3.0 * r * (1.0 + r**2) ** -2.5
    d3 = lambda r: (12.0 * r**2 - 3.0) * (1.0 + r**2) ** -3.5
    return RadialMultiplier("bounded", f, d1, d2, d3)


def profile_multiplier(f, d1, d2=None, d3=None, name: str = "profiled") -> RadialMultiplier:
    return RadialMultiplier(name, f, d1, d2, d3)


def slit_profile():
    """f = (1+r)^(-1/2) and its three derivatives (the slit-case choice)."""
    f = lambda r: (1.0 + r) ** -0.5
    d1 = lambda r: -0.5 * (1.0 + r) ** -1.5
    d2 = lambda r: 0.75 * (1.0 + r) ** -2.5
    d3 = lambda r: -1.875 * (1.0 + r) ** -3.5
    return f, d1, d2, d3


def slit_multiplier() -> RadialMultiplier:
    return profile_multiplier(*slit_profile(), name="slit")


def combine(m1: RadialMultiplier, m2: RadialMultiplier, c1: float, c2: float,
            name: str | None = None) -> RadialMultiplier:
    """Linear combination c1 m1 + c2 m2 (the map f -> M_f is linear)."""
    def lincomb(g1, g2):
        if g1 is None or g2 is None:
            return None
        return lambda r: c1 * g1(r) + c2 * g2(r)

    return RadialMultiplier(
        name or f"{c1:g}*{m1.name}{c2:+g}*{m2.name}",
        lincomb(m1.profile, m2.profile),
        lincomb(m1.profile_d1, m2.profile_d1),
        lincomb(m1.profile_d2, m2.profile_d2),
        lincomb(m1.profile_d3, m2.profile_d3),
    )


def composite_multiplier(eps: float, sign: int) -> RadialMultiplier:
    """bounded + sign * eps^-1 * sharp; sign=+1 serves the high modes,
    sign=-1 exploits the flipped zero-mode sign."""
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    return combine(bounded_multiplier(), sharp_multiplier(), 1.0, sign / eps,
                   name=f"composite{'+' if sign > 0 else '-'}(eps={eps:g})")


# ---------------------------------------------------------------------------
# application and commutators


def apply_multiplier(m: RadialMultiplier, field: ModeField) -> ModeField:
    check_support(field)
    r, h = field.grid.r, field.grid.h
    c1 = m.first_order_coeff(r)
    c0 = m.zeroth_order_coeff(r)
    amp = np.empty_like(field.amp)
    for k in range(field.modes.size):
        amp[k] = c1 * radial_d1(field.amp[k], h) + c0 * field.amp[k]
    return ModeField(grid=field.grid, modes=field.modes, amp=amp,
                     time_stamp=field.time_stamp, flags=field.flags)


def quadratic_form(m: RadialMultiplier, field: ModeField) -> complex:
    """<M u, u>; purely imaginary up to discretization for these M."""
    return apply_multiplier(m, field).inner(field)


def g_weight(r) -> np.ndarray:
    """Zeroth-order bracket weight of the bounded multiplier at nu = 0."""
    r = np.asarray(r, dtype=float)
    return (r**4 + 8.0 * r**2 - 8.0) / (2.0 * (1.0 + r**2) ** 3.5)


G_SIGN_CHANGE_RADIUS = math.sqrt(2.0 * math.sqrt(6.0) - 4.0)


def _phi_weight(m: RadialMultiplier, r: np.ndarray) -> np.ndarray:
    if m.profile_d2 is None or m.profile_d3 is None:
        raise ValueError(f"multiplier {m.name!r} lacks the derivatives needed "
                         "for its commutator closed form")
    return 0.5 * m.profile_d3(r) + m.profile_d2(r) / r - m.profile_d1(r) / (2.0 * r**2)


def commutator_closed_form(m: RadialMultiplier, field: ModeField) -> ModeField:
    """[M, -Lap] field from the operator identity in the module docstring."""
    r, h = field.grid.r, field.grid.h
    fp = m.profile_d1(r)
    fpp = m.profile_d2(r)
    phi = _phi_weight(m, r)
    f = m.first_order_coeff(r)
    amp = np.empty_like(field.amp)
    for k, j in enumerate(field.modes):
        nu = field.grid.cone.nu(int(j))
        a = field.amp[k]
        da = radial_d1(a, h)
        dda = radial_d2(a, h)
        # -2 d* f' d = 2 f' d^2 + (2 f'' + 2 f'/r) d
        amp[k] = (2.0 * fp * dda + (2.0 * fpp + 2.0 * fp / r) * da
                  + (phi + (0.5 - 2.0 * nu**2) * f / r**3) * a)
    return ModeField(grid=field.grid, modes=field.modes, amp=amp,
                     time_stamp=field.time_stamp, flags=field.flags)


def commutator_numeric(m: RadialMultiplier, field: ModeField) -> ModeField:
    """[M, -Lap] field by composing the discrete operators both ways.

    The r^-3-type bracket weights force a stricter support gate than
    plain application: fields must vanish to near roundoff at the ends,
    or the closed form itself fails to be square integrable.
    """
    check_support(field, cells=SUPPORT_CELLS, tol=1e-8)
    r, h = field.grid.r, field.grid.h
    c1 = m.first_order_coeff(r)
    c0 = m.zeroth_order_coeff(r)

    def apply_m(a):
        return c1 * radial_d1(a, h) + c0 * a

    amp = np.empty_like(field.amp)
    for k, j in enumerate(field.modes):
        nu = field.grid.cone.nu(int(j))
        a = field.amp[k]
        neglap = lambda x: -mode_laplacian(x, nu, r, h)
        amp[k] = apply_m(neglap(a)) - neglap(apply_m(a))
    return ModeField(grid=field.grid, modes=field.modes, amp=amp,
                     time_stamp=field.time_stamp, flags=field.flags)


@dataclass(frozen=True)
class CommutatorReport:
    operator: str
    field_id: str
    residual: float
    closed_norm: float
    numeric_norm: float

    def as_dict(self) -> dict:
        return {"operator": self.operator, "field_id": self.field_id,
                "residual": self.residual, "closed_norm": self.closed_norm,
                "numeric_norm": self.numeric_norm}


def commutator_check(m: RadialMultiplier, field: ModeField,
                     field_id: str = "") -> CommutatorReport:
    closed = commutator_closed_form(m, field)
    numeric = commutator_numeric(m, field)
    nc, nn = closed.l2_norm(), numeric.l2_norm()
    diff = ModeField(grid=field.grid, modes=field.modes, amp=numeric.amp - closed.amp)
    return CommutatorReport(operator=m.name, field_id=field_id,
                            residual=diff.l2_norm() / max(nc, nn),
                            closed_norm=nc, numeric_norm=nn)


def _zeroth_tip_cell(m: RadialMultiplier, nu: float, a1: complex, z1: float,
                     h: float) -> float:
    """Tip-cell share of the zeroth-order bracket integral for one mode.

    Quadrature nodes start at r = h, and the open rule assigns the first
    node a full weight, which stands in for the cell [0, h].  That share
    is first order in h whenever the r^-3 weight meets nu = 1 data, and
    worse for fractional nu just above 1/2.  Here the cell is integrated
    against the vanishing model a ~ alpha r^nu instead, using the Laurent
    coefficients of the zeroth-order weight at the tip; the node's own
    half share is removed so nothing is counted twice.

    Modes with nu < 1/2 (the zero mode) are left alone: their r^-3 form
    is only finite when the data itself vanishes at the tip, and then the
    plain rule already converges.
    """
    if nu < 0.5:
        return 0.0
    q = 0.5 - 2.0 * nu * nu
    f0 = float(m.profile(0.0))
    f1 = float(m.profile_d1(0.0))
    f2 = 0.0 if m.profile_d2 is None else float(m.profile_d2(0.0))
    # z(r) = c3 r^-3 + c2 r^-2 + c1 r^-1 + O(1) near the tip
    c3 = q * f0
    c2 = -2.0 * nu * nu * f1
    c1 = 0.5 * (1.5 - 2.0 * nu * nu) * f2
    alpha2 = abs(a1) ** 2 / h ** (2.0 * nu)
    cell = (c2 * h ** (2.0 * nu) / (2.0 * nu)
            + c1 * h ** (2.0 * nu + 1.0) / (2.0 * nu + 1.0))
    if q != 0.0:
        cell += c3 * h ** (2.0 * nu - 1.0) / (2.0 * nu - 1.0)
    return alpha2 * cell - 0.5 * h * z1 * abs(a1) ** 2 * h


def bracket_form(m: RadialMultiplier, field: ModeField) -> float:
    """<[M, -Lap] u, u> from the closed form, integrated by parts:

    -2 <f' u', u'> + <(Phi_f + (1/2 - 2 nu^2) f/r^3) u, u>  per mode.
    """
    r = field.grid.r
    w = field.grid.w
    rho = field.grid.cone.rho
    fp = m.profile_d1(r)
    phi = _phi_weight(m, r)
    f = m.first_order_coeff(r)
    h = field.grid.h
    total = 0.0
    for k, j in enumerate(field.modes):
        nu = field.grid.cone.nu(int(j))
        a = field.amp[k]
        da = radial_d1(a, h)
        z = phi + (0.5 - 2.0 * nu**2) * f / r**3
        total += float(np.sum((-2.0 * fp * np.abs(da) ** 2 + z * np.abs(a) ** 2) * w))
        total += _zeroth_tip_cell(m, nu, complex(a[0]), float(z[0]), h)
    return rho * total


def dichotomy_report(field: ModeField) -> dict:
    """Per-mode bracket forms of the sharp multiplier and their exact ratios.

    For mode j the form equals (1/2 - 2 nu_j^2) ||r^{-3/2} u_j||^2: positive
    on j = 0, negative for every j != 0 once rho < 4 pi.  The ratio field
    reports form / (||r^{-3/2} dtheta u||^2 + ||r^{-3/2} u||^2), which is
    (1/2 - 2 nu^2)/(nu^2 + 1) exactly.
    """
    sharp = sharp_multiplier()
    r, w, rho = field.grid.r, field.grid.w, field.grid.cone.rho
    out = {}
    for k, j in enumerate(field.modes):
        nu = field.grid.cone.nu(int(j))
        sub = ModeField(grid=field.grid, modes=np.array([int(j)]),
                        amp=field.amp[k : k + 1])
        form = bracket_form(sharp, sub)
        weight2 = rho * float(np.sum(np.abs(field.amp[k]) ** 2 / r**3 * w))
        comparison = (nu**2 + 1.0) * weight2
        out[int(j)] = {
            "form": form,
            "weighted_mass": weight2,
            "comparison": comparison,
            "ratio": form / comparison if comparison > 0.0 else 0.0,
            "exact_ratio": (0.5 - 2.0 * nu**2) / (nu**2 + 1.0),
        }
    return out


# ---------------------------------------------------------------------------
# smoothing forms


def smoothing_integrand(field: ModeField, variant: str = "standard") -> float:
    """Spatial part of the local-smoothing norm at one time.

    standard: ||<r>^{-3/2} d_r u||^2 + ||r^{-3/2} sqrt(-Lap_theta) u||^2
    slit:     ||(1+r)^{-3/4} d_r u||^2 + ||r^{-1}<r>^{-3/4} sqrt(-Lap_theta) u||^2
    """
    r, w, rho, h = field.grid.r, field.grid.w, field.grid.cone.rho, field.grid.h
    if variant == "standard":
        wr = (1.0 + r**2) ** -1.5
        wa = r**-3.0
    elif variant == "slit":
        wr = (1.0 + r) ** -1.5
        wa = r**-2.0 * (1.0 + r**2) ** -0.75
    else:
        raise ValueError(f"unknown smoothing variant {variant!r}")
    total = 0.0
    for k, j in enumerate(field.modes):
        nu = field.grid.cone.nu(int(j))
        da = radial_d1(field.amp[k], h)
        total += float(np.sum((wr * np.abs(da) ** 2
                               + wa * nu**2 * np.abs(field.amp[k]) ** 2) * w))
    return rho * total


def smoothing_form(history, dt: float, variant: str = "standard") -> float:
    """Trapezoid-in-time integral of the smoothing integrand over a history."""
    vals = np.array([smoothing_integrand(f, variant) for f in history])
    return float(np.trapz(vals, dx=dt))


# ---------------------------------------------------------------------------
# energy identity


def _pde_residual(history, forcing, dt: float) -> float:
    """Central-difference check that history solves d_t u = -i Lap u + i F."""
    mid = len(history) // 2
    um, u0, up = history[mid - 1], history[mid], history[mid + 1]
    r, h = u0.grid.r, u0.grid.h
    worst = 0.0
    scale = float(np.max(np.abs(u0.amp))) or 1.0
    for k, j in enumerate(u0.modes):
        nu = u0.grid.cone.nu(int(j))
        dudt = (up.amp[k] - um.amp[k]) / (2.0 * dt)
        rhs = -1j * mode_laplacian(u0.amp[k], nu, r, h)
        if forcing is not None:
            rhs = rhs + 1j * forcing[mid].amp[k]
        # ignore the outermost cells where the FD Laplacian pads with zeros
        worst = max(worst, float(np.max(np.abs((dudt - rhs)[4:-4]))) / scale)
    return worst


def energy_identity_check(history, m: RadialMultiplier, dt: float,
                          forcing=None, high_freq_J: int | None = None,
                          pde_tol: float = 5e-2) -> dict:
    """Integrated bracket identity over the sampled history:

        Im<M u, u> |_0^T  =  integral of ( <[M,-Lap]u,u> + 2 Re<M F, u> ) dt.

    The forcing pairing was fixed against manufactured exact solutions of
    d_t u = -i Lap u + i F.  Histories must actually solve that equation
    (checked by a central difference at the middle snapshot); Simpson's
    rule needs an odd number of snapshots.
    """
    n = len(history)
    if n < 3 or n % 2 == 0:
        raise ValueError("need an odd number of snapshots >= 3")
    if forcing is not None and len(forcing) != n:
        raise ValueError("forcing history length mismatch")
    res = _pde_residual(history, forcing, dt)
    if res > pde_tol:
        raise ValueError(f"history does not solve the cone equation "
                         f"(PDE residual {res:.2e})")

    def restrict(f):
        if high_freq_J is None:
            return f
        keep = np.abs(f.modes) >= high_freq_J
        return ModeField(grid=f.grid, modes=f.modes[keep], amp=f.amp[keep],
                         time_stamp=f.time_stamp, flags=f.flags)

    hist = [restrict(f) for f in history]
    forc = [restrict(f) for f in forcing] if forcing is not None else None

    lhs = (quadratic_form(m, hist[-1]).imag - quadratic_form(m, hist[0]).imag)
    integrand = np.empty(n)
    ratios = []
    for i, f in enumerate(hist):
        val = bracket_form(m, f)
        if forc is not None:
            mf = apply_multiplier(m, forc[i])
            val += 2.0 * mf.inner(f).real
        integrand[i] = val
        sm = smoothing_integrand(f, "standard")
        if sm > 0.0:
            ratios.append(-bracket_form(m, f) / sm)
    # composite Simpson
    rhs = (dt / 3.0) * float(integrand[0] + integrand[-1]
                             + 4.0 * integrand[1:-1:2].sum()
                             + 2.0 * integrand[2:-2:2].sum())
    scale = max(abs(lhs), dt * float(np.abs(integrand).sum()), 1e-30)
    return {
        "lhs": lhs,
        "rhs": rhs,
        "residual": abs(lhs - rhs) / scale,
        "pde_residual": res,
        "smoothing_ratio_min": min(ratios) if ratios else math.nan,
        "smoothing_ratio_max": max(ratios) if ratios else math.nan,
    }


# ---------------------------------------------------------------------------
# positivity of profiled multipliers


def positivity_check_W(f, d1, d2, d3, r_min: float = 1e-4, r_max: float = 1e3,
                       n_samples: int = 241) -> dict:
    """Sample the profiled-multiplier sign conditions on a log grid.

    pass requires f' < 0 and Phi_f = f''/r + f'''/2 - f'/(2 r^2) > 0 at
    every sample, with all of f, f', f'', f''' finite (bounded profile).
    Margins are reported so near-failures are visible.
    """
    r = np.geomspace(r_min, r_max, n_samples)
    vals = {"f": np.asarray(f(r), dtype=float),
            "f1": np.asarray(d1(r), dtype=float),
            "f2": np.asarray(d2(r), dtype=float),
            "f3": np.asarray(d3(r), dtype=float)}
    phi = vals["f2"] / r + 0.5 * vals["f3"] - vals["f1"] / (2.0 * r**2)
    finite = all(bool(np.all(np.isfinite(v))) for v in vals.values())
    neg_margin = float(np.min(-vals["f1"]))        # > 0 iff f' < 0 everywhere
    phi_margin = float(np.min(phi))                # > 0 iff Phi > 0 everywhere
    return {
        "verdict": bool(finite and neg_margin > 0.0 and phi_margin > 0.0),
        "bounded": finite,
        "derivative_margin": neg_margin,
        "phi_margin": phi_margin,
        "samples": np.column_stack([r, vals["f1"], phi]),
    }
