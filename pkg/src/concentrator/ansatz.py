"""Peak ansatz on the chart and the energy functionals.

The approximate solution is the rescaled ground state transplanted by the
exponential map and cut off at the chart radius:

    W(x)   = U(|z|/eps) chi_r(|z|),   z = exp_xi^-1(x) in a g(xi)-
    Z^i(x) = U'(|z|/eps) (z_i/|z|) chi_r(|z|)          orthonormal frame,

zero outside the geodesic ball. Energies (all eps^-3 weighted):

    J(u) = eps^-3 Int [ eps^2/2 |grad u|^2 + lam/2 u^2 - F(u) ] dmu
    G(u) = eps^-3 q Int Psi(u) u^2 dmu
    I(u) = J(u) + w_G G(u)

with F(u) = (u+)^p / p. The G-weight w_G is omega^2/2 for the
electrostatic system. For the Schrodinger-type system the field map is
linear in u^2, so d/du Int Psi u^2 = 4 Int Psi u phi and the weight that
makes the Euler-Lagrange equation equal the single equation is
omega/(4q), not omega/2; energy_I uses that (see decisions ledger).

The gradient identity <grad I(u), phi>_eps = I'(u)[phi] holds exactly at
the discrete level (up to solver tolerance) because the same difference
operator and quadrature define both sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fields as F
from . import geometry as G
from .errors import ResolutionTooCoarse, ValidationError
from .fields import GridField, SystemParams
from .radial import RadialProfile

# Hard floor on grid points per rescaled unit of the peak variable; the
# nominal rule (config default) is stricter.
MIN_POINTS_PER_UNIT = 2.5


@dataclass(frozen=True)
class PeakAnsatz:
    eps: float
    xi: np.ndarray
    W: GridField
    Z: tuple
    frame: G.NormalFrame
    profile: RadialProfile

    @property
    def chart(self):
        return self.W.chart

    @property
    def n(self):
        return self.W.n


def normal_coordinate_map(chart: G.MetricChart, xi, n: int,
                          steps: int = 48):
    """Frame components z and radii |z| of all grid nodes inside the
    geodesic ball of radius r around xi; cached per (xi, n).

    Returns (flat_index, z, dist): flat node indices into the n^3 grid,
    frame coordinates (N,3), and geodesic distances (N,).
    """
    xi = np.asarray(xi, dtype=float)
    key = ("zmap", n, tuple(np.round(xi, 12)))
    if key in chart.cache:
        return chart.cache[key]
    geom = F.grid_geometry(chart, n)
    frame = G.normal_frame(chart, xi)
    disp = G.wrap_displacement(geom.coords.reshape(-1, 3) - xi, chart.box)
    # coordinate-ball prefilter; conformal-type length distortion is at
    # most e^(sum |amplitudes|)
    margin = math.exp(sum(abs(p) for p in chart.params)) + 0.05
    cand = np.nonzero((disp * disp).sum(axis=1) <= (chart.r * margin) ** 2)[0]
    if chart.name == "flat":
        v = disp[cand]
    else:
        v = G.log_map_many(chart, xi, xi + disp[cand], tol=1e-10, steps=steps)
    z = frame.from_chart(v)
    dist = np.linalg.norm(z, axis=1)
    keep = dist < chart.r
    result = (cand[keep], z[keep], dist[keep], frame)
    chart.cache[key] = result
    return result


def build_ansatz(chart: G.MetricChart, xi, eps: float, U: RadialProfile,
                 params: SystemParams, n: int) -> PeakAnsatz:
    """Transplanted cutoff peak and its three kernel fields."""
    if eps > chart.r / 2.0 + 1e-12:
        raise ValidationError(
            f"eps={eps} exceeds half the cutoff radius r={chart.r}")
    eta = eps * n / max(chart.box_lengths)
    if eta < MIN_POINTS_PER_UNIT:
        raise ResolutionTooCoarse(
            f"{eta:.2f} points per rescaled unit at eps={eps}, n={n}; "
            f"need >= {MIN_POINTS_PER_UNIT}")
    idx, z, dist, frame = normal_coordinate_map(chart, xi, n)
    chi = G.cutoff_chi(chart.r, dist)
    uvals = U(dist / eps) * chi
    with np.errstate(invalid="ignore", divide="ignore"):
        zhat = np.where(dist[:, None] > 0.0, z / np.maximum(dist, 1e-300)[:, None], 0.0)
    dvals = U.derivative(dist / eps)[..., None] * zhat * chi[:, None]

    shape = (n, n, n)
    Wv = np.zeros(shape)
    Wv.reshape(-1)[idx] = uvals
    Zs = []
    for i in range(3):
        Zi = np.zeros(shape)
        Zi.reshape(-1)[idx] = dvals[:, i]
        Zs.append(GridField(chart=chart, n=n, values=Zi, eps=eps))
    W = GridField(chart=chart, n=n, values=Wv, eps=eps)
    return PeakAnsatz(eps=eps, xi=np.asarray(xi, dtype=float), W=W,
                      Z=tuple(Zs), frame=frame, profile=U)


# -- energies ---------------------------------------------------------------


def energy_J(u: GridField, eps: float, params: SystemParams) -> float:
    geom = F.grid_geometry(u.chart, u.n)
    grad2 = float(np.sum(F.grad_energy_density(geom, u.values, u.values))
                  * geom.cell_volume)
    mass2 = F.l2g_inner(geom, u.values, u.values)
    fint = F.integral_g(geom, np.maximum(u.values, 0.0) ** params.p_exp)
    return (0.5 * eps * eps * grad2 + 0.5 * params.lam * mass2
            - fint / params.p_exp) / eps**3


def energy_G(u: GridField, eps: float, params: SystemParams,
             psi_u: GridField | None = None) -> float:
    """eps^-3 q Int Psi(u) u^2 dmu (the q-carrying normalization)."""
    if psi_u is None:
        psi_u = F.solve_psi(u, params)
    geom = F.grid_geometry(u.chart, u.n)
    return params.q * F.integral_g(geom, psi_u.values * u.values**2) / eps**3


def g_weight(params: SystemParams) -> float:
    """Weight of G inside the full energy: the Euler-Lagrange equation of
    J + g_weight*G is the single equation for either system."""
    if params.kind == "KGM":
        return 0.5 * params.omega ** 2
    return params.omega / (4.0 * params.q)


def energy_I(u: GridField, eps: float, params: SystemParams,
             psi_u: GridField | None = None) -> float:
    if params.omega == 0.0:
        return energy_J(u, eps, params)
    return energy_J(u, eps, params) + g_weight(params) * energy_G(
        u, eps, params, psi_u=psi_u)


def gradient_I(u: GridField, eps: float, params: SystemParams,
               psi_u: GridField | None = None,
               tol: float = 1e-11) -> GridField:
    """Riesz gradient in <.,.>_eps: u - i*[f(u) + w g(u)], w the coupling
    weight (omega^2 electrostatic, omega Schrodinger-type)."""
    w = params.coupling_weight
    source = F.f_power(u.values, params.p_exp)
    if w != 0.0:
        if psi_u is None:
            psi_u = F.solve_psi(u, params)
        source = source + w * F.g_nonlinearity(u, psi_u, params).values
    istar = F.adjoint_istar(u.like(source), eps, params.lam, tol=tol)
    return u.like(u.values - istar.values)


# -- semi-analytic cross-check ----------------------------------------------


def normal_coords_quadrature(chart: G.MetricChart, xi, n_theta: int = 8,
                             n_phi: int = 16, panel_ratio: float = 1.3):
    """Radial-angular quadrature data in normal coordinates, cached per xi.

    Log-graded radial panels (6-point Gauss each) work for any peak scale
    eps >= ~r/50, so one pull-back of the metric (the expensive part:
    batched geodesics with differentials) serves every eps at this xi.
    Returns dict with radii s, radial weights sw, angular weights dw,
    radial-radial inverse-metric component ghat and sqrt|g_xi| at the
    (radius x direction) quadrature points.
    """
    xi = np.asarray(xi, dtype=float)
    key = ("ncquad", n_theta, n_phi, tuple(np.round(xi, 12)))
    if key in chart.cache:
        return chart.cache[key]
    r = chart.r
    frame = G.normal_frame(chart, xi)

    edges = [0.0, 0.006 * r]
    while edges[-1] < r:
        edges.append(min(edges[-1] * panel_ratio, edges[-1] + 0.08 * r, r))
    edges = np.asarray(edges)
    gl_nodes, gl_w = np.polynomial.legendre.leggauss(6)
    s = np.concatenate([0.5 * (b - a) * gl_nodes + 0.5 * (a + b)
                        for a, b in zip(edges[:-1], edges[1:])])
    sw = np.concatenate([0.5 * (b - a) * gl_w
                         for a, b in zip(edges[:-1], edges[1:])])

    mu, muw = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1.0 - mu**2)
    dirs = np.stack([
        np.outer(st, np.cos(phi)).ravel(),
        np.outer(st, np.sin(phi)).ravel(),
        np.repeat(mu, n_phi)], axis=-1)
    dw = np.repeat(muw, n_phi) * (2.0 * math.pi / n_phi)

    Z = (s[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    gz, sqdet = G.metric_in_normal_coords_many(chart, xi, Z, frame, steps=24)
    ginv = G._inv33(gz)
    zhat = np.tile(dirs, (len(s), 1))
    ghat = np.einsum("ni,nij,nj->n", zhat, ginv, zhat)

    data = {"s": s, "sw": sw, "dirs": dirs, "dw": dw,
            "ghat": ghat.reshape(len(s), len(dirs)),
            "sqdet": sqdet.reshape(len(s), len(dirs)), "frame": frame}
    chart.cache[key] = data
    return data


def energy_J_normal_coords(chart: G.MetricChart, xi, eps: float,
                           U: RadialProfile, params: SystemParams,
                           quad=None) -> float:
    """J(W) by radial-angular quadrature in normal coordinates.

    Independent of the grid route: integrates
    eps^-3 Int [eps^2/2 (dW/ds)^2 ghat(z) + lam/2 W^2 - F(W)] sqrt|g_xi| dz
    over the cutoff ball (the W-gradient is radial, so only the
    radial-radial inverse-metric component ghat enters). Free of lattice
    aliasing; catches exponential-map and grid errors.
    """
    if quad is None:
        quad = normal_coords_quadrature(chart, xi)
    s = quad["s"]
    chi, dchi, _ = G.cutoff_chi_derivatives(chart.r, s)
    uval = U(s / eps)
    dudr = U.derivative(s / eps) / eps
    wf = uval * chi
    dwdr = (dudr * chi + uval * dchi)[:, None]
    dens = (0.5 * eps * eps * dwdr**2 * quad["ghat"]
            + (0.5 * params.lam * wf**2
               - np.maximum(wf, 0.0) ** params.p_exp / params.p_exp)[:, None])
    radial = (dens * quad["sqdet"]) @ quad["dw"]
    return float(np.sum(radial * quad["sw"] * s * s) / eps**3)
