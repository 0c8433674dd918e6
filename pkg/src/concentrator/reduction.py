"""Finite-dimensional reduction: kernel projections, the linearized
solve, the contraction fixed point, reduced energy, expansion fit and
concentration search.

The correction phi solves, on the orthogonal complement of the kernel
fields Z^i,

    L(phi) = N(phi) + S(phi) + R,
    L(phi) = P{phi - i*[f'(W) phi]},
    N(phi) = P{i*[f(W+phi) - f(W) - f'(W) phi]},
    S(phi) = w P{i*[g(W+phi)]},           (w = omega^2, resp. omega)
    R      = P{i*[f(W)] - W},

by the fixed point phi <- L^-1(N(phi) + S(phi) + R) started at zero.

L^-1 is applied in strong form: with A = -eps^2 Lap_g + lam and
B = A - f'(W), the equation L x = b on the complement is equivalent to

    B x = A b + span{A Z^i},   <x, Z^i>_eps = 0,

which MINRES solves as P_Y B P_Y x = P_Y A b in L^2(mu_g), P_Y the
orthogonal projector against Y^i = A Z^i (L is indefinite: one negative
direction survives the kernel projection, so CG is not applicable).
This avoids a nested elliptic solve per Krylov step.

The reduced energy is evaluated by defect correction: the smooth W-part
of J comes from the grid-free normal-coordinates quadrature, while the
phi-effect is the difference of two same-grid energies, so lattice
aliasing of the under-resolved peak cancels where it matters:

    I_tilde = J_nc(W) + w_G G_grid(W) + [I_grid(W+phi) - I_grid(W)].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ansatz as AN
from . import fields as F
from . import geometry as G
from .errors import (
    DegenerateDesign,
    NoContraction,
    NoCriticalPoint,
    NotOrthogonal,
    SingularGram,
)
from .fields import GridField, SystemParams
from .linalg import pminres


@dataclass
class ReducedSample:
    xi: np.ndarray
    eps: float
    I_tilde: float
    I_of_W: float
    phi_norm_eps: float
    residual_norm_eps: float
    iterations: int
    converged: bool
    S_g: float
    extras: dict = field(default_factory=dict)


@dataclass
class ExpansionFit:
    xi_list: list
    eps_list: list
    c1: float
    c2: float
    c3: float
    residuals: np.ndarray
    S_values: np.ndarray
    degenerate: bool = False


class ReductionWorkspace:
    """Per-(ansatz, params) operators and kernel data reused across the
    fixed point."""

    def __init__(self, ansatz: AN.PeakAnsatz, params: SystemParams,
                 gram_cond_limit: float = 1e8):
        self.ansatz = ansatz
        self.params = params
        self.eps = ansatz.eps
        self.lam = params.lam
        self.geom = F.grid_geometry(ansatz.chart, ansatz.n)
        self.W = ansatz.W
        self.Z = ansatz.Z

        self.gram = np.array([[F.inner_product_eps(zi, zj, self.eps, self.lam)
                               for zj in self.Z] for zi in self.Z])
        cond = np.linalg.cond(self.gram)
        if cond > gram_cond_limit:
            raise SingularGram(f"kernel Gram condition number {cond:.2e}")
        self.gram_inv = np.linalg.inv(self.gram)

        # strong-form operators (weighted by |g|^1/2, plain-l2 symmetric)
        self.opA = F.weighted_operator(self.geom, self.eps, self.lam)
        self.fprime_W = F.fprime_power(self.W.values, params.p_exp)
        self.opB = F.weighted_operator(self.geom, self.eps, self.lam,
                                       V=-self.fprime_W)
        self.prec = F.flat_preconditioner(self.geom, self.eps, self.lam)
        # constraint vectors Y^i = A Z^i (weighted form), normalized
        self.Y = [self.opA(z.values) for z in self.Z]
        H = np.array([[float(np.vdot(a, b)) for b in self.Y] for a in self.Y])
        self.H_inv = np.linalg.inv(H)

    # -- projections ------------------------------------------------------

    def project_perp_l2(self, u: np.ndarray) -> np.ndarray:
        """l2-orthogonal projection against the Y^i (strong-form side)."""
        coef = self.H_inv @ np.array([float(np.vdot(y, u)) for y in self.Y])
        out = u.copy()
        for ci, y in zip(coef, self.Y):
            out -= ci * y
        return out

    def kernel_coefficients(self, u: GridField) -> np.ndarray:
        rhs = np.array([F.inner_product_eps(u, z, self.eps, self.lam)
                        for z in self.Z])
        return self.gram_inv @ rhs

    def project_perp(self, u: GridField) -> GridField:
        coef = self.kernel_coefficients(u)
        vals = u.values.copy()
        for ci, z in zip(coef, self.Z):
            vals -= ci * z.values
        return u.like(vals)

    def orthogonality_defect(self, u: GridField) -> float:
        un = F.norm_eps(u, self.eps, self.lam)
        if un == 0.0:
            return 0.0
        worst = 0.0
        for i, z in enumerate(self.Z):
            zn = math.sqrt(self.gram[i, i])
            worst = max(worst, abs(F.inner_product_eps(u, z, self.eps, self.lam))
                        / (un * zn))
        return worst

    # -- operator pieces ----------------------------------------------------

    def istar(self, values: np.ndarray, tol: float = 1e-11) -> GridField:
        return F.solve_spd(self.W, self.eps, self.lam,
                           self.W.like(values), tol=tol)

    def apply_L(self, phi: GridField, check: bool = True) -> GridField:
        if check and self.orthogonality_defect(phi) > 1e-6:
            raise NotOrthogonal("apply_L input has a kernel component")
        lin = self.istar(self.fprime_W * phi.values)
        return self.project_perp(phi.like(phi.values - lin.values))

    def solve_L_inverse(self, rhs: GridField, tol: float = 1e-9,
                        max_iter: int = 1200) -> GridField:
        """x with L x = rhs on the kernel complement (projected MINRES)."""
        if self.orthogonality_defect(rhs) > 1e-6:
            raise NotOrthogonal("solve_L_inverse rhs has a kernel component")
        b = self.project_perp_l2(self.opA(rhs.values))

        def op(u):
            return self.project_perp_l2(self.opB(self.project_perp_l2(u)))

        def prec(u):
            return self.project_perp_l2(self.prec(self.project_perp_l2(u)))

        x = pminres(op, b, prec=prec, tol=tol, max_iter=max_iter)
        return rhs.like(self.project_perp_l2(x))

    def residual_R(self, tol: float = 1e-11) -> GridField:
        w = self.W
        ist = self.istar(F.f_power(w.values, self.params.p_exp), tol=tol)
        return self.project_perp(w.like(ist.values - w.values))

    def term_N(self, phi: GridField) -> GridField:
        w, p = self.W.values, self.params.p_exp
        delta = (F.f_power(w + phi.values, p) - F.f_power(w, p)
                 - self.fprime_W * phi.values)
        return self.project_perp(self.istar(delta))

    def term_S(self, phi: GridField, psi_out: list | None = None) -> GridField:
        weight = self.params.coupling_weight
        if weight == 0.0:
            return self.W.like(np.zeros_like(self.W.values))
        u = self.W.like(self.W.values + phi.values)
        psi = F.solve_psi(u, self.params)
        if psi_out is not None:
            psi_out.append(psi)
        gnl = F.g_nonlinearity(u, psi, self.params)
        return self.project_perp(self.istar(weight * gnl.values))


def project_kernel(u: GridField, ansatz: AN.PeakAnsatz, eps: float,
                   lam: float):
    """(coefficients, u_perp) of the kernel projection of u."""
    gram = np.array([[F.inner_product_eps(zi, zj, eps, lam)
                      for zj in ansatz.Z] for zi in ansatz.Z])
    if np.linalg.cond(gram) > 1e8:
        raise SingularGram("kernel Gram matrix badly conditioned")
    rhs = np.array([F.inner_product_eps(u, z, eps, lam) for z in ansatz.Z])
    coef = np.linalg.solve(gram, rhs)
    vals = u.values.copy()
    for ci, z in zip(coef, ansatz.Z):
        vals -= ci * z.values
    return coef, u.like(vals)


def solve_phi(ws: ReductionWorkspace, tol: float | None = None,
              max_iter: int = 50):
    """Fixed point phi <- L^-1(N(phi) + S(phi) + R) from phi = 0.

    Inner solves start loose and tighten with the increments
    (Eisenstat-Walker style). Returns (phi, diagnostics).
    """
    R = ws.residual_R()
    r_norm = F.norm_eps(R, ws.eps, ws.lam)
    if tol is None:
        tol = 1e-9 * max(r_norm, 1e-12)

    phi = ws.W.like(np.zeros_like(ws.W.values))
    increments = []
    grow = 0
    prev = None
    converged = False
    for it in range(max_iter):
        inner_tol = 1e-10 if not increments else min(
            1e-10, 1e-3 * increments[-1] / max(r_norm, 1e-300))
        rhs_field = R if it == 0 else ws.W.like(
            ws.term_N(phi).values + ws.term_S(phi).values + R.values)
        phi_new = ws.solve_L_inverse(rhs_field, tol=max(inner_tol, 1e-12))
        inc = F.norm_eps(phi.like(phi_new.values - phi.values), ws.eps, ws.lam)
        increments.append(inc)
        phi = phi_new
        if prev is not None and inc > prev:
            grow += 1
            if grow >= 3:
                raise NoContraction(
                    f"increments grew 3 times: {increments[-4:]} "
                    "(eps too large or grid too coarse)")
        else:
            grow = 0
        prev = inc
        if inc < tol:
            converged = True
            break
    diag = {
        "increments": increments,
        "iterations": len(increments),
        "converged": converged,
        "R_norm": r_norm,
        "contraction_ratios": [b / a for a, b in zip(increments, increments[1:])
                               if a > 0.0],
    }
    return phi, diag


def reduced_energy(chart: G.MetricChart, xi, eps: float, params: SystemParams,
                   U, n: int, tol: float | None = None,
                   max_iter: int = 50) -> ReducedSample:
    """Reduced energy at xi: I(W + phi) with defect-corrected quadrature.

    extras carries the grid-route energies and the fixed-point
    diagnostics; I_of_W pairs with I_tilde so the o(eps^2) gap is
    directly testable.
    """
    an = AN.build_ansatz(chart, xi, eps, U, params, n)
    ws = ReductionWorkspace(an, params)
    phi, diag = solve_phi(ws, tol=tol, max_iter=max_iter)

    quad = AN.normal_coords_quadrature(chart, xi)
    J_nc = AN.energy_J_normal_coords(chart, xi, eps, U, params, quad)
    psi_W = F.solve_psi(an.W, params) if params.omega != 0.0 else None
    G_grid = AN.energy_G(an.W, eps, params, psi_u=psi_W) \
        if params.omega != 0.0 else 0.0
    wG = AN.g_weight(params) if params.omega != 0.0 else 0.0

    I_W_grid = AN.energy_I(an.W, eps, params, psi_u=psi_W)
    u_full = an.W.like(an.W.values + phi.values)
    I_full_grid = AN.energy_I(u_full, eps, params)
    gap = I_full_grid - I_W_grid

    I_of_W = J_nc + wG * G_grid
    sample = ReducedSample(
        xi=np.asarray(xi, dtype=float), eps=eps,
        I_tilde=I_of_W + gap, I_of_W=I_of_W,
        phi_norm_eps=F.norm_eps(phi, eps, params.lam),
        residual_norm_eps=diag["R_norm"],
        iterations=diag["iterations"], converged=diag["converged"],
        S_g=float(G.scalar_curvature(chart, np.asarray(xi, dtype=float))),
        extras={
            "J_nc": J_nc, "G_grid": G_grid, "gap_grid": gap,
            "I_W_grid": I_W_grid, "I_full_grid": I_full_grid,
            "orthogonality": ws.orthogonality_defect(phi),
            "contraction_ratios": diag["contraction_ratios"],
        })
    return sample


def fit_expansion(samples: list, min_spread: float = 1e-8,
                  on_degenerate: str = "raise") -> ExpansionFit:
    """Least squares of I_tilde against {1, eps^2, S_g(xi) eps^2}.

    The model is c1 + c2 eps^2 - c3 S eps^2, so c3 is minus the fitted
    coefficient of the S eps^2 column. A flat curvature landscape makes
    the design rank-deficient: on_degenerate='zero' drops the column and
    reports c3 = 0 (used by flat-chart runs), 'raise' is the default.
    """
    eps = np.array([s.eps for s in samples])
    S = np.array([s.S_g for s in samples])
    I = np.array([s.I_tilde for s in samples])
    if len(samples) < 4 or len(set(round(e, 14) for e in eps)) < 3:
        raise DegenerateDesign("need >= 3 eps values and >= 4 samples")
    spread = S.max() - S.min()
    degenerate = spread < min_spread * (1.0 + np.abs(S).max())
    if degenerate and on_degenerate == "raise":
        raise DegenerateDesign(
            f"curvature spread {spread:.3e} too small for the fit")
    if degenerate:
        design = np.stack([np.ones_like(eps), eps**2], axis=-1)
        coef, *_ = np.linalg.lstsq(design, I, rcond=None)
        c1, c2, c3 = coef[0], coef[1], 0.0
    else:
        design = np.stack([np.ones_like(eps), eps**2, S * eps**2], axis=-1)
        coef, *_ = np.linalg.lstsq(design, I, rcond=None)
        c1, c2, c3 = coef[0], coef[1], -coef[2]
        residuals = I - design @ coef
    if degenerate:
        residuals = I - design @ coef
    return ExpansionFit(
        xi_list=[s.xi for s in samples], eps_list=sorted(set(eps.tolist())),
        c1=float(c1), c2=float(c2), c3=float(c3),
        residuals=residuals, S_values=S, degenerate=bool(degenerate))


# -- critical points of the curvature --------------------------------------


def curvature_critical_points(chart: G.MetricChart, coarse: int = 6,
                              flat_tol: float = 1e-8):
    """Extrema of S_g by multistart projected gradient flow.

    Returns (points, kinds) with kinds in {"max", "min"}; raises
    NoCriticalPoint on a landscape flat to flat_tol (no certifiable
    stable critical set).
    """
    box = chart.box

    def gradS(x, h=1e-5):
        g = np.zeros(3)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            g[k] = (G.scalar_curvature(chart, x + e)
                    - G.scalar_curvature(chart, x - e)) / (2.0 * h)
        return g

    axes = [np.arange(coarse) / coarse * box[i] for i in range(3)]
    starts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    gnorms = [np.linalg.norm(gradS(x)) for x in starts]
    svals = [G.scalar_curvature(chart, x) for x in starts]
    if max(gnorms) < flat_tol and max(svals) - min(svals) < flat_tol:
        raise NoCriticalPoint("degenerate landscape: curvature flat")

    found = []
    for sign in (+1.0, -1.0):
        for x0 in starts:
            x = x0.copy()
            step = 0.05 * min(box)
            for _ in range(200):
                gr = sign * gradS(x)
                gn = np.linalg.norm(gr)
                if gn < 1e-10:
                    break
                # backtracking ascent step
                for _ in range(30):
                    x_new = G.wrap_point(x + step * gr / gn, box)
                    if sign * (G.scalar_curvature(chart, x_new)
                               - G.scalar_curvature(chart, x)) > 0.0:
                        x = x_new
                        step = min(step * 1.3, 0.1 * min(box))
                        break
                    step *= 0.5
                    if step < 1e-12:
                        break
                if step < 1e-12:
                    break
            if np.linalg.norm(gradS(x)) < 1e-6:
                kind = "max" if sign > 0 else "min"
                for pt, kd, _ in found:
                    if kd == kind and np.linalg.norm(
                            G.wrap_displacement(pt - x, box)) < 0.05 * min(box):
                        break
                else:
                    found.append((x, kind, G.scalar_curvature(chart, x)))
    if not found:
        raise NoCriticalPoint("no curvature critical point located")
    return found


@dataclass
class ConcentrationMatch:
    eps: float
    minimizer: np.ndarray
    I_value: float
    paired_point: np.ndarray
    paired_kind: str
    distance: float


def find_concentration_points(chart: G.MetricChart, params: SystemParams, U,
                              eps_list, n: int, coarse: int = 5,
                              refine_steps: int = 2,
                              samples_out: list | None = None):
    """Locate reduced-energy minimizers and pair them with curvature
    extrema.

    Coarse localization scans the grid-free surrogate J_nc(xi) (the
    W-level energy, curvature-accurate and cheap); candidate basins are
    then refined with the full reduced energy on a shrinking lattice
    neighborhood. With c3 > 0 the minimizers pair with curvature maxima.
    """
    crit = curvature_critical_points(chart)
    box = chart.box
    h = box / n

    matches = []
    for eps in eps_list:
        axes = [(np.arange(coarse) + 0.5) / coarse * box[i] for i in range(3)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
        surro = [AN.energy_J_normal_coords(chart, xi, eps, U, params)
                 for xi in grid]
        order = np.argsort(surro)
        # one basin per curvature maximum: keep the best coarse cells
        # that are mutually separated
        seeds = []
        sep = 0.3 * min(box)
        for idx in order:
            x = grid[idx]
            if all(np.linalg.norm(G.wrap_displacement(x - s, box)) > sep
                   for s in seeds):
                seeds.append(x)
            if len(seeds) >= max(1, len([c for c in crit if c[1] == "max"])):
                break

        for seed in seeds:
            xi_best = seed
            best = None
            step = h
            for level in range(refine_steps + 1):
                candidates = [xi_best] if best is not None else [xi_best]
                offs = np.concatenate([np.zeros((1, 3)),
                                       np.diag(step), -np.diag(step)])
                vals = {}
                for off in offs:
                    xi_c = G.wrap_point(xi_best + off, box)
                    key = tuple(np.round(xi_c, 12))
                    s = reduced_energy(chart, xi_c, eps, params, U, n)
                    if samples_out is not None:
                        samples_out.append(s)
                    vals[key] = (s.I_tilde, xi_c)
                key_best = min(vals, key=lambda k: vals[k][0])
                val_best, xi_new = vals[key_best]
                if best is not None and val_best >= best:
                    step = step / 2.0
                else:
                    if np.allclose(xi_new, xi_best) and best is not None:
                        step = step / 2.0
                    best, xi_best = val_best, xi_new
            # pair with nearest curvature extremum
            dists = [np.linalg.norm(G.wrap_displacement(xi_best - c[0], box))
                     for c in crit]
            j = int(np.argmin(dists))
            d_g = float(np.linalg.norm(G.log_map(chart, crit[j][0],
                                                 xi_best))) \
                if dists[j] < chart.r else float(dists[j])
            matches.append(ConcentrationMatch(
                eps=eps, minimizer=xi_best, I_value=best,
                paired_point=crit[j][0], paired_kind=crit[j][1],
                distance=d_g))
    return matches, crit
