"""Scalar fields on the periodic grid: weighted calculus and elliptic solves.

Discretization: one periodic n^3 grid per chart resolution; first
derivatives are 4th-order central differences D_i, and the
Laplace-Beltrami operator uses the conservative flux form

    Lap_g u = |g|^(-1/2) D_i( |g|^(1/2) g^ij D_j u ).

Because D_i is antisymmetric on the periodic lattice, the once-weighted
operator B = |g|^(1/2) (-eps^2 Lap_g + lam + V) is exactly symmetric
positive definite in the plain lattice l2 product; all solves run on B
with an FFT inverse of the flat symbol as preconditioner, so the adjoint
identity <i*(v), phi>_eps = eps^-3 Int v phi holds to solver tolerance.

The eps-weighted inner product and norms,

    <u,v>_eps = eps^-3 ( eps^2 Int grad u . grad v dmu + lam Int u v dmu )
    |u|_{s,eps} = ( eps^-3 Int |u|^s dmu )^(1/s),

use the same difference operator and trapezoidal (plain-sum) quadrature,
which makes summation-by-parts exact at the discrete level.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundViolation, ShapeMismatch, ValidationError
from .geometry import MetricChart
from .linalg import pcg


@dataclass(frozen=True)
class SystemParams:
    """Problem constants; lam is the zero-order coefficient of the single
    equation: a - omega^2 for the electrostatic system, 1 for the
    Schrodinger-type system."""

    kind: str
    a: float = 1.0
    q: float = 1.0
    omega: float = 0.0
    p_exp: float = 4.0

    def __post_init__(self):
        if self.kind not in ("KGM", "SM"):
            raise ValidationError(f"unknown system kind {self.kind!r}")
        if not 2.0 < self.p_exp < 6.0:
            raise ValidationError("subcritical exponent required: 2 < p < 6")
        if self.q <= 0.0:
            raise ValidationError("coupling q must be positive")
        if self.kind == "KGM":
            if self.omega ** 2 >= self.a:
                raise ValidationError("lambda must be positive: omega^2 < a")
        else:
            if self.a != 1.0:
                raise ValidationError("SM system fixes a = 1")

    @property
    def lam(self) -> float:
        return self.a - self.omega ** 2 if self.kind == "KGM" else 1.0

    @property
    def coupling_weight(self) -> float:
        """Weight of the field term in the single equation: omega^2 (KGM),
        omega (SM)."""
        return self.omega ** 2 if self.kind == "KGM" else self.omega


@dataclass(frozen=True)
class GridField:
    chart: MetricChart
    n: int
    values: np.ndarray
    eps: float | None = None

    def __post_init__(self):
        if self.values.shape != (self.n, self.n, self.n):
            raise ShapeMismatch(
                f"values shape {self.values.shape} != n={self.n}")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("field contains non-finite values")

    def like(self, values, eps=None):
        return GridField(chart=self.chart, n=self.n, values=values,
                         eps=self.eps if eps is None else eps)


def check_compatible(*fields):
    f0 = fields[0]
    for f in fields[1:]:
        if f.chart is not f0.chart or f.n != f0.n:
            raise ShapeMismatch("fields live on different charts/resolutions")


# -- per-resolution geometry cache ---------------------------------------


class GridGeometry:
    """Metric data sampled on the n^3 lattice, cached on the chart."""

    def __init__(self, chart: MetricChart, n: int):
        self.chart = chart
        self.n = n
        box = chart.box
        self.h = box / n
        self.cell_volume = float(np.prod(self.h))
        axes = [np.arange(n) * self.h[i] for i in range(3)]
        self.coords = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        g = chart.metric(self.coords)
        det = np.linalg.det(g)
        if np.any(det <= 0.0):
            raise ValidationError("metric degenerate on the grid")
        self.sqrtg = np.sqrt(det)
        ginv = np.linalg.inv(g)
        # flux coefficients |g|^(1/2) g^ij
        self.flux = self.sqrtg[..., None, None] * ginv
        # FFT symbol of the 4th-order difference, per axis
        k = [np.fft.fftfreq(n) * n for _ in range(3)]
        self.symbol = []
        for i in range(3):
            theta = 2.0 * math.pi * k[i] / n
            self.symbol.append((8.0 * np.sin(theta) - np.sin(2.0 * theta))
                               / (6.0 * self.h[i]))

    def flat_symbol_sq(self):
        s0, s1, s2 = self.symbol
        return (s0[:, None, None] ** 2 + s1[None, :, None] ** 2
                + s2[None, None, :] ** 2)


def grid_geometry(chart: MetricChart, n: int) -> GridGeometry:
    key = ("grid", n)
    if key not in chart.cache:
        chart.cache[key] = GridGeometry(chart, n)
    return chart.cache[key]


# -- difference operators -------------------------------------------------


def diff4(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    """4th-order central first difference on the periodic lattice."""
    return (8.0 * (np.roll(u, -1, axis) - np.roll(u, 1, axis))
            - (np.roll(u, -2, axis) - np.roll(u, 2, axis))) / (12.0 * h)


def gradient(geom: GridGeometry, u: np.ndarray):
    return [diff4(u, i, geom.h[i]) for i in range(3)]


def laplace_beltrami(geom: GridGeometry, u: np.ndarray) -> np.ndarray:
    du = gradient(geom, u)
    out = np.zeros_like(u)
    for i in range(3):
        flux_i = sum(geom.flux[..., i, j] * du[j] for j in range(3))
        out += diff4(flux_i, i, geom.h[i])
    return out / geom.sqrtg


def weighted_operator(geom: GridGeometry, eps: float, lam: float, V=None):
    """B(u) = |g|^(1/2)(-eps^2 Lap_g + lam + V)u; symmetric in plain l2."""
    zero = (lam + V) * geom.sqrtg if V is not None else lam * geom.sqrtg

    def op(u):
        du = [diff4(u, j, geom.h[j]) for j in range(3)]
        out = zero * u
        for i in range(3):
            flux_i = sum(geom.flux[..., i, j] * du[j] for j in range(3))
            out -= eps * eps * diff4(flux_i, i, geom.h[i])
        return out

    return op


def flat_preconditioner(geom: GridGeometry, eps: float, lam: float):
    """FFT inverse of the flat-chart symbol of the weighted operator."""
    denom = eps * eps * geom.flat_symbol_sq() + lam
    shape = (geom.n,) * 3

    def prec(r):
        return np.fft.irfftn(
            np.fft.rfftn(r) / denom[..., : geom.n // 2 + 1],
            s=shape, axes=(0, 1, 2))

    return prec


# -- integrals, norms, inner products -------------------------------------


def integral_g(geom: GridGeometry, values: np.ndarray) -> float:
    """Int values dmu_g by the periodic trapezoidal rule (plain sum)."""
    return float(np.sum(values * geom.sqrtg) * geom.cell_volume)


def l2g_inner(geom: GridGeometry, u, v) -> float:
    return integral_g(geom, u * v)


def grad_energy_density(geom: GridGeometry, u, v) -> np.ndarray:
    """|g|^(1/2) g^ij D_i u D_j v (not yet volume-summed)."""
    du, dv = gradient(geom, u), gradient(geom, v)
    out = np.zeros_like(u)
    for i in range(3):
        for j in range(3):
            out += geom.flux[..., i, j] * du[i] * dv[j]
    return out


def inner_product_eps(u: GridField, v: GridField, eps: float, lam: float) -> float:
    check_compatible(u, v)
    geom = grid_geometry(u.chart, u.n)
    grad_part = float(np.sum(grad_energy_density(geom, u.values, v.values))
                      * geom.cell_volume)
    mass_part = l2g_inner(geom, u.values, v.values)
    return (eps * eps * grad_part + lam * mass_part) / eps**3


def norm_eps(u: GridField, eps: float, lam: float) -> float:
    return math.sqrt(max(inner_product_eps(u, u, eps, lam), 0.0))


def lq_norm_eps(u: GridField, s: float, eps: float) -> float:
    if s < 1.0:
        raise ValidationError("integrability exponent must be >= 1")
    geom = grid_geometry(u.chart, u.n)
    return (integral_g(geom, np.abs(u.values) ** s) / eps**3) ** (1.0 / s)


def h1g_norm(u: GridField) -> float:
    """Unweighted H^1 norm on the manifold: Int |grad u|^2 + u^2 dmu."""
    geom = grid_geometry(u.chart, u.n)
    grad_part = float(np.sum(grad_energy_density(geom, u.values, u.values))
                      * geom.cell_volume)
    return math.sqrt(grad_part + l2g_inner(geom, u.values, u.values))


# -- elliptic operators and solves ----------------------------------------


def apply_schrodinger_op(u: GridField, eps: float, lam: float,
                         V: GridField | None = None) -> GridField:
    """(-eps^2 Lap_g + lam + V) u as a field."""
    geom = grid_geometry(u.chart, u.n)
    if V is not None:
        check_compatible(u, V)
    out = -eps * eps * laplace_beltrami(geom, u.values) + lam * u.values
    if V is not None:
        out += V.values * u.values
    return u.like(out)


def solve_spd(u_like: GridField, eps: float, lam: float, rhs: GridField,
              V=None, tol: float = 1e-10, max_iter: int = 4000) -> GridField:
    """Matrix-free PCG solve of (-eps^2 Lap_g + lam + V) x = rhs."""
    check_compatible(u_like, rhs)
    geom = grid_geometry(u_like.chart, u_like.n)
    Vv = V.values if isinstance(V, GridField) else V
    op = weighted_operator(geom, eps, lam, Vv)
    prec = flat_preconditioner(geom, eps, lam)
    x = pcg(op, geom.sqrtg * rhs.values, prec=prec, tol=tol, max_iter=max_iter)
    return rhs.like(x)


def adjoint_istar(v: GridField, eps: float, lam: float,
                  tol: float = 1e-11) -> GridField:
    """i*_eps(v): solves -eps^2 Lap_g u + lam u = v.

    The zero-order coefficient is lam, matching <.,.>_eps, so that
    <i*(v), phi>_eps = eps^-3 Int v phi exactly at the discrete level.
    """
    if lam <= 0.0:
        raise ValidationError("adjoint solve requires lam > 0")
    return solve_spd(v, eps, lam, v, tol=tol)


def solve_psi(u: GridField, params: SystemParams, tol: float = 1e-11,
              check_bounds: bool = True) -> GridField:
    """Electrostatic field of u: the auxiliary unscaled elliptic solve.

    KGM: -Lap_g P + (1 + q^2 u^2) P = q u^2, with 0 < P < 1/q by the
    maximum principle (violations beyond 1e-8 raise BoundViolation).
    SM:  -Lap_g P + P = q u^2 (linear in u^2).
    """
    geom = grid_geometry(u.chart, u.n)
    q = params.q
    rhs = q * u.values * u.values
    V = q * rhs if params.kind == "KGM" else None   # q^2 u^2
    op = weighted_operator(geom, 1.0, 1.0, V)
    prec = flat_preconditioner(geom, 1.0, 1.0)
    psi = pcg(op, geom.sqrtg * rhs, prec=prec, tol=tol)
    if check_bounds:
        lo = float(psi.min())
        hi = float(psi.max())
        if lo < -1e-8 or (params.kind == "KGM" and hi > 1.0 / q + 1e-8):
            raise BoundViolation(
                f"field map left [0, 1/q]: min {lo:.3e}, max {hi:.3e} "
                "(under-resolved grid?)")
    return u.like(psi)


def solve_psi_prime(u: GridField, h: GridField, psi_u: GridField,
                    params: SystemParams, tol: float = 1e-11) -> GridField:
    """Differential of the field map at u in direction h.

    KGM: -Lap_g V + (1 + q^2 u^2) V = 2 q u (1 - q Psi(u)) h.
    SM:  -Lap_g V + V = 2 q u h.
    """
    check_compatible(u, h, psi_u)
    geom = grid_geometry(u.chart, u.n)
    q = params.q
    if params.kind == "KGM":
        rhs = 2.0 * q * u.values * (1.0 - q * psi_u.values) * h.values
        V = q * q * u.values * u.values
    else:
        rhs = 2.0 * q * u.values * h.values
        V = None
    op = weighted_operator(geom, 1.0, 1.0, V)
    prec = flat_preconditioner(geom, 1.0, 1.0)
    return u.like(pcg(op, geom.sqrtg * rhs, prec=prec, tol=tol))


def g_nonlinearity(u: GridField, psi_u: GridField,
                   params: SystemParams) -> GridField:
    """Field coupling term of the single equation.

    KGM: (q^2 Psi^2 - 2 q Psi) u (strictly negative where u > 0);
    SM:  -Psi u, so the single equation reads
         -eps^2 Lap u + u + omega Psi u = f(u).
    """
    check_compatible(u, psi_u)
    q = params.q
    if params.kind == "KGM":
        w = (q * psi_u.values - 2.0) * q * psi_u.values
    else:
        w = -psi_u.values
    return u.like(w * u.values)


def f_power(u: np.ndarray, p_exp: float) -> np.ndarray:
    """f(u) = (u+)^(p-1), the positive-part subcritical nonlinearity."""
    return np.maximum(u, 0.0) ** (p_exp - 1.0)


def fprime_power(u: np.ndarray, p_exp: float) -> np.ndarray:
    """f'(u) = (p-1)(u+)^(p-2)."""
    return (p_exp - 1.0) * np.maximum(u, 0.0) ** (p_exp - 2.0)


# -- export ---------------------------------------------------------------


def export_field_csv(u: GridField, path_or_buf, eps=None) -> None:
    """Rows `i j k x y z value` with a `# n=.. eps=.. chart=..` header."""
    geom = grid_geometry(u.chart, u.n)
    eps_out = u.eps if eps is None else eps
    own = isinstance(path_or_buf, (str, bytes))
    fh = open(path_or_buf, "w") if own else path_or_buf
    try:
        fh.write(f"# n={u.n} eps={eps_out!r} chart={u.chart.name}\n")
        idx = np.ndindex(u.n, u.n, u.n)
        for (i, j, k) in idx:
            x, y, z = geom.coords[i, j, k]
            fh.write(f"{i} {j} {k} {float(x)!r} {float(y)!r} {float(z)!r} "
                     f"{float(u.values[i, j, k])!r}\n")
    finally:
        if own:
            fh.close()


def constant_field(chart: MetricChart, n: int, value: float = 0.0,
                   eps=None) -> GridField:
    return GridField(chart=chart, n=n,
                     values=np.full((n, n, n), float(value)), eps=eps)


def field_from_function(chart: MetricChart, n: int, fn, eps=None) -> GridField:
    geom = grid_geometry(chart, n)
    return GridField(chart=chart, n=n, values=np.asarray(fn(geom.coords)),
                     eps=eps)
