"""Finite-difference Newton solver for the coupled quasi-steady cell model.

The six unknown fields (c2, phi_-l, phi_-s on the negative half cell; c4,
phi_+l, phi_+s on the positive half cell) are discretized on a structured
grid per half cell with duplicated membrane nodes at x = 0.  Diffusion and
the potential Laplacians use second-order central differences; the (vertical,
constant) convection term uses first-order upwinding.  The nonlinear system
is solved with a damped Newton method and an analytic sparse Jacobian.

All residuals are divided by the same per-equation scales used by the PINN
loss, so residual norms are dimensionless and comparable across equations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .physics import (
    CellParameters, Side, Stage,
    average_current_density, background_composition, close_composition,
    inlet_concentration, equation_scale, cell_ocv, ionic_conductivity,
    sigma_l_eff_dc,
    SCALE_CONC_PDE, SCALE_POT_PDE, SCALE_CURRENT, SCALE_INLET_CONC,
    SCALE_PHIS_DIRICHLET, SCALE_CONC_NEUMANN_X, SCALE_POT_NEUMANN_Y,
    SCALE_CONC_NEUMANN_Y,
)

_FIELDS = ("c_neg", "phil_neg", "phis_neg", "c_pos", "phil_pos", "phis_pos")


@dataclass(frozen=True)
class Grid:
    """Structured grid: (nx_per_side+1) x (ny+1) nodes per half cell."""

    nx_per_side: int = 40
    ny: int = 100

    def __post_init__(self):
        if self.nx_per_side < 8:
            raise ValueError("nx_per_side must be >= 8")
        if self.ny < 16:
            raise ValueError("ny must be >= 16")

    def coords(self, params: CellParameters):
        x_neg = np.linspace(-params.L, 0.0, self.nx_per_side + 1)
        x_pos = np.linspace(0.0, params.L, self.nx_per_side + 1)
        y = np.linspace(0.0, params.H, self.ny + 1)
        return x_neg, x_pos, y

    @property
    def nodes_per_side(self) -> int:
        return (self.nx_per_side + 1) * (self.ny + 1)


@dataclass
class FieldState:
    """Grid solution snapshot. Arrays are shaped (nx+1, ny+1), [ix, iy]."""

    grid: Grid
    soc: float
    stage: Stage
    params: CellParameters
    c_neg: np.ndarray
    phil_neg: np.ndarray
    phis_neg: np.ndarray
    c_pos: np.ndarray
    phil_pos: np.ndarray
    phis_pos: np.ndarray

    def pack(self) -> np.ndarray:
        return np.concatenate([getattr(self, f).ravel() for f in _FIELDS])

    def with_vector(self, u: np.ndarray) -> "FieldState":
        n = self.grid.nodes_per_side
        shape = (self.grid.nx_per_side + 1, self.grid.ny + 1)
        parts = {f: u[i * n:(i + 1) * n].reshape(shape).copy()
                 for i, f in enumerate(_FIELDS)}
        return FieldState(grid=self.grid, soc=self.soc, stage=self.stage,
                          params=self.params, **parts)


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual_norm: float
    damping_history: list = field(default_factory=list)
    message: str = ""


def _x_stencil(nx: int, at_low: bool):
    """Third-order one-sided first-derivative stencil in x (divide by 6*dx).

    The flux boundary rows sit inside reaction boundary layers where a
    second-order stencil's truncation error visibly breaks the current
    balance between collector and membrane.
    """
    if at_low:
        return (0, 1, 2, 3), (-11.0, 18.0, -9.0, 2.0)
    return (nx, nx - 1, nx - 2, nx - 3), (11.0, -18.0, 9.0, -2.0)


class AssemblyError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


def initial_state(soc: float, stage: Stage, params: CellParameters,
                  grid: Grid) -> FieldState:
    """Cold-start guess: inlet concentrations, zero potentials on the
    negative side, cell OCV for the positive electrode potential."""
    shape = (grid.nx_per_side + 1, grid.ny + 1)
    return FieldState(
        grid=grid, soc=soc, stage=stage, params=params,
        c_neg=np.full(shape, inlet_concentration(Side.NEGATIVE, soc, params)),
        phil_neg=np.zeros(shape),
        phis_neg=np.zeros(shape),
        c_pos=np.full(shape, inlet_concentration(Side.POSITIVE, soc, params)),
        phil_pos=np.zeros(shape),
        phis_pos=np.full(shape, cell_ocv(soc, params)),
    )


def _bv_terms(side: Side, c, phil, phis, soc, params: CellParameters):
    """Butler-Volmer transfer current and its partial derivatives.

    Returns (j, dj_dc, dj_deta); dj/dphis = +dj_deta, dj/dphil = -dj_deta.
    Concentrations are evaluated at values clipped away from 0 and c0 so
    powers and logs stay finite; the clip mask zeroes dj_dc where active.
    """
    p = params
    floor = 1e-9 * p.c0
    c_safe = np.clip(c, floor, p.c0 - floor)
    inside = (c > floor) & (c < p.c0 - floor)
    c_red = c_safe
    c_ox = p.c0 - c_safe

    k = p.rate_constant(side)
    f = p.F / (p.R * p.T)
    if side is Side.NEGATIVE:
        E = p.E0_neg + p.RT_over_F * np.log(c_ox / c_red)
    else:
        c_H, c_H2O, _ = background_composition(side, soc)
        E = p.E0_pos + p.RT_over_F * np.log(c_ox * c_H ** 2 / (c_red * c_H2O))
    dE_dc = p.RT_over_F * (-1.0 / c_ox - 1.0 / c_red)

    eta = phis - phil - E
    arg_a = np.clip(p.alpha_a * f * eta, -80.0, 80.0)
    arg_c = np.clip(-p.alpha_c * f * eta, -80.0, 80.0)
    expa, expc = np.exp(arg_a), np.exp(arg_c)

    pref = p.F * p.a * k * c_red ** p.alpha_c * c_ox ** p.alpha_a
    j = pref * (expa - expc)
    dj_deta = pref * f * (p.alpha_a * expa + p.alpha_c * expc)
    dpref_dc = p.F * p.a * k * (
        p.alpha_c * c_red ** (p.alpha_c - 1.0) * c_ox ** p.alpha_a
        - p.alpha_a * c_red ** p.alpha_c * c_ox ** (p.alpha_a - 1.0))
    dj_dc = (dpref_dc * (expa - expc) + dj_deta * (-dE_dc)) * inside
    return j, dj_dc, dj_deta


def _sigma_l(side: Side, c, soc, params: CellParameters):
    comp = close_composition(side, np.clip(c, 0.0, params.c0), soc, params)
    return params.eps ** 1.5 * ionic_conductivity(comp, params)


class _Assembler:
    """Builds the scaled residual vector and (optionally) the Jacobian."""

    def __init__(self, state: FieldState):
        self.state = state
        self.grid = state.grid
        self.params = state.params
        nx, ny = self.grid.nx_per_side, self.grid.ny
        self.nx, self.ny = nx, ny
        self.n = self.grid.nodes_per_side
        self.ntot = 6 * self.n
        self.res = np.zeros(self.ntot)
        self.rows, self.cols, self.vals = [], [], []
        p = state.params
        self.i_avg = average_current_density(p)
        self.scale = {
            "c_pde": equation_scale(SCALE_CONC_PDE, state.soc, state.stage, p),
            "p_pde": equation_scale(SCALE_POT_PDE, state.soc, state.stage, p),
            "current": equation_scale(SCALE_CURRENT, state.soc, state.stage, p),
            "c_in": equation_scale(SCALE_INLET_CONC, state.soc, state.stage, p),
            "dirichlet": equation_scale(SCALE_PHIS_DIRICHLET, state.soc, state.stage, p),
            "c_nx": equation_scale(SCALE_CONC_NEUMANN_X, state.soc, state.stage, p),
            "p_ny": equation_scale(SCALE_POT_NEUMANN_Y, state.soc, state.stage, p),
            "c_ny": equation_scale(SCALE_CONC_NEUMANN_Y, state.soc, state.stage, p),
        }
        x_neg, x_pos, y = self.grid.coords(p)
        self.dx = x_neg[1] - x_neg[0]
        self.dy = y[1] - y[0]

    def block(self, name: str) -> int:
        return _FIELDS.index(name) * self.n

    def gid(self, name: str, ix, iy):
        return self.block(name) + ix * (self.ny + 1) + iy

    def add(self, rows, cols, vals):
        r = np.broadcast_arrays(rows, cols, vals)
        self.rows.append(np.asarray(r[0]).ravel())
        self.cols.append(np.asarray(r[1]).ravel())
        self.vals.append(np.asarray(r[2], dtype=float).ravel())

    # ------------------------------------------------------------------
    def assemble(self, want_jacobian: bool):
        st = self.state
        p = self.params
        for side, cf, plf, psf in (
                (Side.NEGATIVE, "c_neg", "phil_neg", "phis_neg"),
                (Side.POSITIVE, "c_pos", "phil_pos", "phis_pos")):
            self._side_interior(side, cf, plf, psf, want_jacobian)
            self._side_boundaries(side, cf, plf, psf, want_jacobian)
        self._check_finite()
        if not want_jacobian:
            return self.res, None
        jac = sp.coo_matrix(
            (np.concatenate(self.vals),
             (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(self.ntot, self.ntot)).tocsr()
        return self.res, jac

    def _check_finite(self):
        bad = ~np.isfinite(self.res)
        if bad.any():
            r = int(np.argmax(bad))
            blk, within = divmod(r, self.n)
            ix, iy = divmod(within, self.ny + 1)
            raise AssemblyError(
                f"non-finite residual in {_FIELDS[blk]} at node (ix={ix}, iy={iy})")

    # ------------------------------------------------------------------
    def _side_interior(self, side, cf, plf, psf, want_jac):
        st, p = self.state, self.params
        nx, ny = self.nx, self.ny
        dx, dy = self.dx, self.dy
        c = getattr(st, cf)
        pl = getattr(st, plf)
        ps = getattr(st, psf)
        D = p.diffusivity(side)
        vy = p.v[1]
        sig_s = p.sigma_s_eff
        sig_l = _sigma_l(side, c, st.soc, p)
        dsig_dc = sigma_l_eff_dc(side, p)
        jbv, dj_dc, dj_deta = _bv_terms(side, c, pl, ps, st.soc, p)

        ii, jj = np.meshgrid(np.arange(1, nx), np.arange(1, ny), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()

        def lap(f):
            return ((f[ii + 1, jj] + f[ii - 1, jj] - 2 * f[ii, jj]) / dx ** 2
                    + (f[ii, jj + 1] + f[ii, jj - 1] - 2 * f[ii, jj]) / dy ** 2)

        # face-averaged ionic conductivities: the charge equation is kept in
        # conservative (flux) form so the discrete membrane and collector
        # currents balance; the non-conservative sigma_l*lap(phi_l) form
        # misses the grad(sigma_l).grad(phi_l) term and breaks the current
        # balance by a grid-independent O(1%) offset.
        sE = 0.5 * (sig_l[ii, jj] + sig_l[ii + 1, jj])
        sW = 0.5 * (sig_l[ii, jj] + sig_l[ii - 1, jj])
        sN = 0.5 * (sig_l[ii, jj] + sig_l[ii, jj + 1])
        sS = 0.5 * (sig_l[ii, jj] + sig_l[ii, jj - 1])

        def div_sig_grad(f):
            return (sE * (f[ii + 1, jj] - f[ii, jj]) / dx ** 2
                    + sW * (f[ii - 1, jj] - f[ii, jj]) / dx ** 2
                    + sN * (f[ii, jj + 1] - f[ii, jj]) / dy ** 2
                    + sS * (f[ii, jj - 1] - f[ii, jj]) / dy ** 2)

        s_c, s_p = self.scale["c_pde"], self.scale["p_pde"]
        jb = jbv[ii, jj]
        conv = vy * (c[ii, jj] - c[ii, jj - 1]) / dy
        self.res[self.gid(cf, ii, jj)] = (conv - D * lap(c) + jb / p.F) / s_c
        self.res[self.gid(plf, ii, jj)] = (-div_sig_grad(pl) - jb) / s_p
        self.res[self.gid(psf, ii, jj)] = (-sig_s * lap(ps) + jb) / s_p

        if not want_jac:
            return
        djc = dj_dc[ii, jj]
        dje = dj_deta[ii, jj]
        half_dsig = 0.5 * dsig_dc
        dplE = (pl[ii + 1, jj] - pl[ii, jj]) / dx ** 2
        dplW = (pl[ii - 1, jj] - pl[ii, jj]) / dx ** 2
        dplN = (pl[ii, jj + 1] - pl[ii, jj]) / dy ** 2
        dplS = (pl[ii, jj - 1] - pl[ii, jj]) / dy ** 2

        rc = self.gid(cf, ii, jj)
        rl = self.gid(plf, ii, jj)
        rs = self.gid(psf, ii, jj)
        c_ctr = self.gid(cf, ii, jj)
        l_ctr = self.gid(plf, ii, jj)
        s_ctr = self.gid(psf, ii, jj)

        # concentration row
        self.add(rc, c_ctr, (vy / dy + 2 * D * (1 / dx ** 2 + 1 / dy ** 2) + djc / p.F) / s_c)
        self.add(rc, self.gid(cf, ii - 1, jj), (-D / dx ** 2) / s_c)
        self.add(rc, self.gid(cf, ii + 1, jj), (-D / dx ** 2) / s_c)
        self.add(rc, self.gid(cf, ii, jj + 1), (-D / dy ** 2) / s_c)
        self.add(rc, self.gid(cf, ii, jj - 1), (-D / dy ** 2 - vy / dy) / s_c)
        self.add(rc, l_ctr, (-dje / p.F) / s_c)
        self.add(rc, s_ctr, (dje / p.F) / s_c)

        # electrolyte potential row (conservative flux form)
        self.add(rl, l_ctr, ((sE + sW) / dx ** 2 + (sN + sS) / dy ** 2 + dje) / s_p)
        self.add(rl, self.gid(plf, ii - 1, jj), (-sW / dx ** 2) / s_p)
        self.add(rl, self.gid(plf, ii + 1, jj), (-sE / dx ** 2) / s_p)
        self.add(rl, self.gid(plf, ii, jj + 1), (-sN / dy ** 2) / s_p)
        self.add(rl, self.gid(plf, ii, jj - 1), (-sS / dy ** 2) / s_p)
        self.add(rl, c_ctr, (-half_dsig * (dplE + dplW + dplN + dplS) - djc) / s_p)
        self.add(rl, self.gid(cf, ii + 1, jj), (-half_dsig * dplE) / s_p)
        self.add(rl, self.gid(cf, ii - 1, jj), (-half_dsig * dplW) / s_p)
        self.add(rl, self.gid(cf, ii, jj + 1), (-half_dsig * dplN) / s_p)
        self.add(rl, self.gid(cf, ii, jj - 1), (-half_dsig * dplS) / s_p)
        self.add(rl, s_ctr, (-dje) / s_p)

        # electrode potential row
        self.add(rs, s_ctr, (2 * sig_s * (1 / dx ** 2 + 1 / dy ** 2) + dje) / s_p)
        self.add(rs, self.gid(psf, ii - 1, jj), (-sig_s / dx ** 2) / s_p)
        self.add(rs, self.gid(psf, ii + 1, jj), (-sig_s / dx ** 2) / s_p)
        self.add(rs, self.gid(psf, ii, jj + 1), (-sig_s / dy ** 2) / s_p)
        self.add(rs, self.gid(psf, ii, jj - 1), (-sig_s / dy ** 2) / s_p)
        self.add(rs, c_ctr, djc / s_p)
        self.add(rs, l_ctr, (-dje) / s_p)

    # ------------------------------------------------------------------
    def _x_neumann(self, fname, iy, at_low, coef, scale, rows=None,
                   c_name=None, dcoef_dc=None, want_jac=True):
        """Row: coef * df/dx = 0 at a vertical boundary, one-sided stencil.

        coef may vary with iy; optional dependence of coef on the local
        concentration (c_name, dcoef_dc) adds the corresponding Jacobian
        entry.  Returns the boundary derivative values.
        """
        st = self.state
        f = getattr(st, fname)
        ixs, w = _x_stencil(self.nx, at_low)
        dfdx = sum(wk * f[ix, iy] for ix, wk in zip(ixs, w)) / (6 * self.dx)
        if rows is None:
            rows = self.gid(fname, ixs[0], iy)
        self.res[rows] = coef * dfdx / scale
        if want_jac:
            for ix, wk in zip(ixs, w):
                self.add(rows, self.gid(fname, ix, iy), coef * wk / (6 * self.dx) / scale)
            if c_name is not None and dcoef_dc is not None:
                self.add(rows, self.gid(c_name, ixs[0], iy), dcoef_dc * dfdx / scale)
        return dfdx

    def _y_neumann(self, fname, ix, at_low, scale, want_jac=True):
        st = self.state
        f = getattr(st, fname)
        ny = self.ny
        if at_low:
            iys = (0, 1, 2)
            w = (-3.0, 4.0, -1.0)
        else:
            iys = (ny, ny - 1, ny - 2)
            w = (3.0, -4.0, 1.0)
        dfdy = (w[0] * f[ix, iys[0]] + w[1] * f[ix, iys[1]] + w[2] * f[ix, iys[2]]) / (2 * self.dy)
        rows = self.gid(fname, ix, iys[0])
        self.res[rows] = dfdy / scale
        if want_jac:
            for iy, wk in zip(iys, w):
                self.add(rows, self.gid(fname, ix, iy), wk / (2 * self.dy) / scale)

    def _side_boundaries(self, side, cf, plf, psf, want_jac):
        st, p = self.state, self.params
        nx, ny = self.nx, self.ny
        c = getattr(st, cf)
        sig_l = _sigma_l(side, c, st.soc, p)
        dsig_dc = sigma_l_eff_dc(side, p)
        sig_s = p.sigma_s_eff
        i_avg = self.i_avg
        neg = side is Side.NEGATIVE

        # --- horizontal boundaries (interior columns only; x-rows win corners)
        cols = np.arange(1, nx)
        # inlet y = 0: Dirichlet on concentration (all columns; Dirichlet wins)
        all_cols = np.arange(0, nx + 1)
        c_in = inlet_concentration(side, st.soc, p)
        rows = self.gid(cf, all_cols, 0)
        self.res[rows] = (c[all_cols, 0] - c_in) / self.scale["c_in"]
        if want_jac:
            self.add(rows, rows, np.full(all_cols.shape, 1.0 / self.scale["c_in"]))
        # potentials: zero y-flux at inlet and outlet
        self._y_neumann(plf, cols, True, self.scale["p_ny"], want_jac)
        self._y_neumann(psf, cols, True, self.scale["p_ny"], want_jac)
        self._y_neumann(plf, cols, False, self.scale["p_ny"], want_jac)
        self._y_neumann(psf, cols, False, self.scale["p_ny"], want_jac)
        # outlet y = H: zero y-flux concentration
        self._y_neumann(cf, cols, False, self.scale["c_ny"], want_jac)

        # --- vertical boundaries ---------------------------------------
        iy_all = np.arange(0, ny + 1)
        iy_noin = np.arange(1, ny + 1)  # inlet row keeps the Dirichlet on c
        if neg:
            # x = -L (collector): dc/dx = 0, sigma_l dphil/dx = 0, phis = 0
            self._x_neumann(cf, iy_noin, True, 1.0, self.scale["c_nx"], want_jac=want_jac)
            self._x_neumann(plf, iy_all, True, sig_l[0, iy_all], self.scale["current"],
                            c_name=cf, dcoef_dc=dsig_dc, want_jac=want_jac)
            rows = self.gid(psf, 0, iy_all)
            ps = getattr(st, psf)
            self.res[rows] = ps[0, iy_all] / self.scale["dirichlet"]
            if want_jac:
                self.add(rows, rows, np.full(iy_all.shape, 1.0 / self.scale["dirichlet"]))
            # x = 0 (membrane): dc/dx = 0, sigma_s dphis/dx = 0, coupling on phil
            self._x_neumann(cf, iy_noin, False, 1.0, self.scale["c_nx"], want_jac=want_jac)
            self._x_neumann(psf, iy_all, False, sig_s, self.scale["current"], want_jac=want_jac)
            self._membrane_row(side, cf, plf, want_jac)
        else:
            # x = 0 (membrane)
            self._x_neumann(cf, iy_noin, True, 1.0, self.scale["c_nx"], want_jac=want_jac)
            self._x_neumann(psf, iy_all, True, sig_s, self.scale["current"], want_jac=want_jac)
            self._membrane_row(side, cf, plf, want_jac)
            # x = L (collector): dc/dx = 0, sigma_l dphil/dx = 0, current BC on phis
            self._x_neumann(cf, iy_noin, False, 1.0, self.scale["c_nx"], want_jac=want_jac)
            self._x_neumann(plf, iy_all, False, sig_l[nx, iy_all], self.scale["current"],
                            c_name=cf, dcoef_dc=dsig_dc, want_jac=want_jac)
            # i_s,x = -sigma dphi/dx is -i_avg while charging (current enters
            # the positive collector), so the flux expression itself is +i_avg.
            target = i_avg if st.stage is Stage.CHARGING else -i_avg
            ps = getattr(st, psf)
            ixs, w = _x_stencil(nx, at_low=False)
            dfdx = sum(wk * ps[ix, iy_all] for ix, wk in zip(ixs, w)) / (6 * self.dx)
            rows = self.gid(psf, nx, iy_all)
            self.res[rows] = (sig_s * dfdx - target) / self.scale["current"]
            if want_jac:
                for ix, wk in zip(ixs, w):
                    self.add(rows, self.gid(psf, ix, iy_all),
                             np.full(iy_all.shape, sig_s * wk / (6 * self.dx) / self.scale["current"]))

    def _membrane_row(self, side, cf, plf, want_jac):
        """sigma_l dphil/dx - sigma_m (phil_pos - phil_neg)/d_m = 0 at x=0."""
        st, p = self.state, self.params
        nx, ny = self.nx, self.ny
        iy = np.arange(0, ny + 1)
        neg = side is Side.NEGATIVE
        c = getattr(st, cf)
        sig_l = _sigma_l(side, c, st.soc, p)
        dsig_dc = sigma_l_eff_dc(side, p)
        g = p.sigma_m / p.d_m
        pln = st.phil_neg[nx, iy]
        plp = st.phil_pos[0, iy]
        jump = g * (plp - pln)
        scale = self.scale["current"]
        if neg:
            f = st.phil_neg
            ixs, w = _x_stencil(nx, at_low=False)
            coef = sig_l[nx, iy]
            rows = self.gid("phil_neg", nx, iy)
            c_ix = nx
        else:
            f = st.phil_pos
            ixs, w = _x_stencil(nx, at_low=True)
            coef = sig_l[0, iy]
            rows = self.gid("phil_pos", 0, iy)
            c_ix = 0
        dfdx = sum(wk * f[ix, iy] for ix, wk in zip(ixs, w)) / (6 * self.dx)
        self.res[rows] = (coef * dfdx - jump) / scale
        if want_jac:
            for ix, wk in zip(ixs, w):
                self.add(rows, self.gid(plf, ix, iy), coef * wk / (6 * self.dx) / scale)
            self.add(rows, self.gid(cf, c_ix, iy), dsig_dc * dfdx / scale)
            self.add(rows, self.gid("phil_pos", 0, iy), np.full(iy.shape, -g / scale))
            self.add(rows, self.gid("phil_neg", nx, iy), np.full(iy.shape, g / scale))


def assemble_residual(state: FieldState) -> np.ndarray:
    """Scaled residual vector (one dimensionless entry per unknown)."""
    res, _ = _Assembler(state).assemble(want_jacobian=False)
    return res


def assemble_system(state: FieldState):
    """(scaled residual, sparse Jacobian)."""
    return _Assembler(state).assemble(want_jacobian=True)


def newton_solve(soc: float, stage: Stage, params: CellParameters, grid: Grid,
                 init: FieldState | None = None, tol: float = 1e-9,
                 max_iter: int = 200):
    """Damped Newton iteration to the scaled residual infinity norm <= tol."""
    if not params.soc_min - 1e-12 <= soc <= params.soc_max + 1e-12:
        raise ValueError(f"soc {soc} outside [{params.soc_min}, {params.soc_max}]")
    if init is not None:
        state = FieldState(grid=grid, soc=soc, stage=stage, params=params,
                           **{f: getattr(init, f).copy() for f in _FIELDS})
    else:
        state = initial_state(soc, stage, params, grid)

    damping_history = []
    res = assemble_residual(state)
    norm2 = np.linalg.norm(res)
    stalls = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(res)) <= tol:
            return state, SolveReport(True, it - 1, float(np.max(np.abs(res))),
                                      damping_history)
        res, jac = assemble_system(state)
        try:
            lu = spla.splu(jac.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"singular Jacobian at iteration {it}: {exc}") from exc
        delta = lu.solve(res)
        if not np.all(np.isfinite(delta)):
            raise SolverError(f"non-finite Newton step at iteration {it}")

        u = state.pack()
        alpha = 1.0
        best = None
        for _ in range(9):
            cand = state.with_vector(u - alpha * delta)
            try:
                r_new = assemble_residual(cand)
                n_new = np.linalg.norm(r_new)
            except AssemblyError:
                n_new = np.inf
            if best is None or n_new < best[0]:
                best = (n_new, alpha, cand, r_new if np.isfinite(n_new) else None)
            if n_new < norm2:
                break
            alpha *= 0.5
        n_new, alpha, cand, r_new = best
        damping_history.append(alpha)
        if not np.isfinite(n_new):
            raise SolverError(f"residual not finite for any damping at iteration {it}")
        if n_new >= norm2 * (1.0 - 1e-14):
            stalls += 1
            if stalls >= 3:
                return cand, SolveReport(False, it, float(np.max(np.abs(r_new))),
                                         damping_history, "stalled")
        else:
            stalls = 0
        state, res, norm2 = cand, r_new, n_new

    converged = bool(np.max(np.abs(res)) <= tol)
    return state, SolveReport(converged, max_iter, float(np.max(np.abs(res))),
                              damping_history, "" if converged else "max iterations")


# --- post-processing --------------------------------------------------------

def collector_current_profile(state: FieldState):
    """(y, j_n) along the negative collector: sigma_s_eff dphi_-s/dx at x=-L."""
    p = state.params
    _, _, y = state.grid.coords(p)
    dx = p.L / state.grid.nx_per_side
    f = state.phis_neg
    ixs, w = _x_stencil(state.grid.nx_per_side, at_low=True)
    dfdx = sum(wk * f[ix, :] for ix, wk in zip(ixs, w)) / (6 * dx)
    return y, p.sigma_s_eff * dfdx


def membrane_current_profile(state: FieldState):
    """(y, j) through the membrane from the potential jump."""
    p = state.params
    _, _, y = state.grid.coords(p)
    jump = p.sigma_m / p.d_m * (state.phil_pos[0, :] - state.phil_neg[-1, :])
    return y, jump


def positive_collector_current_profile(state: FieldState):
    p = state.params
    _, _, y = state.grid.coords(p)
    dx = p.L / state.grid.nx_per_side
    f = state.phis_pos
    nx = state.grid.nx_per_side
    ixs, w = _x_stencil(nx, at_low=False)
    dfdx = sum(wk * f[ix, :] for ix, wk in zip(ixs, w)) / (6 * dx)
    return y, p.sigma_s_eff * dfdx


def integrated_currents(state: FieldState):
    """Trapezoid integrals over y of the three current profiles (A/m)."""
    y, j_neg = collector_current_profile(state)
    _, j_mem = membrane_current_profile(state)
    _, j_pos = positive_collector_current_profile(state)
    return (np.trapezoid(j_neg, y), np.trapezoid(j_mem, y), np.trapezoid(j_pos, y))


def cell_voltage(state: FieldState) -> float:
    """y-averaged phi_+s at x=L minus y-averaged phi_-s at x=-L."""
    _, _, y = state.grid.coords(state.params)
    H = state.params.H
    vp = np.trapezoid(state.phis_pos[-1, :], y) / H
    vn = np.trapezoid(state.phis_neg[0, :], y) / H
    return float(vp - vn)


def outlet_profiles(state: FieldState):
    """Solution values along the outlet y = H, keyed by field name."""
    p = state.params
    x_neg, x_pos, _ = state.grid.coords(p)
    return {
        "x_neg": x_neg, "x_pos": x_pos,
        "c_neg": state.c_neg[:, -1].copy(),
        "phil_neg": state.phil_neg[:, -1].copy(),
        "phis_neg": state.phis_neg[:, -1].copy(),
        "c_pos": state.c_pos[:, -1].copy(),
        "phil_pos": state.phil_pos[:, -1].copy(),
        "phis_pos": state.phis_pos[:, -1].copy(),
    }


@dataclass
class SweepResult:
    stage: Stage
    socs: np.ndarray
    voltages: np.ndarray
    states: list
    reports: list


def sweep_soc(stage: Stage, params: CellParameters, grid: Grid, soc_grid,
              warm_start: bool = True, tol: float = 1e-9) -> SweepResult:
    """Solve a sequence of SOC points, warm-starting from the previous one."""
    socs = np.asarray(soc_grid, dtype=float)
    if socs.size == 0:
        raise ValueError("empty SOC grid")
    if socs.size > 1 and not np.all(np.diff(socs) > 0):
        raise ValueError("soc_grid must be strictly increasing")
    states, reports, voltages = [], [], []
    prev = None
    for soc in socs:
        state, report = newton_solve(soc, stage, params, grid,
                                     init=prev if warm_start else None, tol=tol)
        if not report.converged:
            raise SolverError(f"reference solve failed at soc={soc}: {report.message}")
        states.append(state)
        reports.append(report)
        voltages.append(cell_voltage(state))
        prev = state
    return SweepResult(stage=stage, socs=socs, voltages=np.asarray(voltages),
                       states=states, reports=reports)
