"""Training objective: the 6 scaled PDE residual operators, the 24 boundary
operators, the total-current quadrature constraint, the labeled-data term,
and self-adaptive per-point weighting with mask M(x) = x^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .derivatives import EvalRequest, eval_many, eval_with_spatial_derivatives
from .network import CompositeNet, DTYPE
from .physics import (
    Side, Stage,
    average_current_density, close_composition, ionic_conductivity, ocv,
    butler_volmer, clamp_overpotential, inlet_concentration, equation_scale,
    SCALE_CONC_PDE, SCALE_POT_PDE, SCALE_CURRENT, SCALE_INLET_CONC,
    SCALE_PHIS_DIRICHLET, SCALE_CONC_NEUMANN_X, SCALE_POT_NEUMANN_Y,
    SCALE_CONC_NEUMANN_Y,
)
from .sampling import (
    SamplingPlan, LabeledSet,
    INTERIOR_NEG, INTERIOR_POS, V_LEFT, V_MID, V_RIGHT,
    H_BOTTOM_NEG, H_BOTTOM_POS, H_TOP_NEG, H_TOP_POS,
)

VARIANT_PINN = "pinn"
VARIANT_EPINN = "epinn"
VARIANT_EPINN_DATA = "epinn-data"
VARIANTS = (VARIANT_PINN, VARIANT_EPINN, VARIANT_EPINN_DATA)

_C_FLOOR_FRAC = 1e-9  # keeps Nernst logs and BV powers finite at depletion


@dataclass(frozen=True)
class OperatorSpec:
    op_id: str
    point_set: str
    scale_kind: str


# 6 governing-equation operators + 24 boundary-condition operators.
OPERATORS = (
    OperatorSpec("pde_mass_neg", INTERIOR_NEG, SCALE_CONC_PDE),
    OperatorSpec("pde_phil_neg", INTERIOR_NEG, SCALE_POT_PDE),
    OperatorSpec("pde_phis_neg", INTERIOR_NEG, SCALE_POT_PDE),
    OperatorSpec("pde_mass_pos", INTERIOR_POS, SCALE_CONC_PDE),
    OperatorSpec("pde_phil_pos", INTERIOR_POS, SCALE_POT_PDE),
    OperatorSpec("pde_phis_pos", INTERIOR_POS, SCALE_POT_PDE),
    OperatorSpec("bc_left_c_flux", V_LEFT, SCALE_CONC_NEUMANN_X),
    OperatorSpec("bc_left_phil_flux", V_LEFT, SCALE_CURRENT),
    OperatorSpec("bc_left_phis_zero", V_LEFT, SCALE_PHIS_DIRICHLET),
    OperatorSpec("bc_mem_c_flux_neg", V_MID, SCALE_CONC_NEUMANN_X),
    OperatorSpec("bc_mem_phil_couple_neg", V_MID, SCALE_CURRENT),
    OperatorSpec("bc_mem_phis_flux_neg", V_MID, SCALE_CURRENT),
    OperatorSpec("bc_mem_c_flux_pos", V_MID, SCALE_CONC_NEUMANN_X),
    OperatorSpec("bc_mem_phil_couple_pos", V_MID, SCALE_CURRENT),
    OperatorSpec("bc_mem_phis_flux_pos", V_MID, SCALE_CURRENT),
    OperatorSpec("bc_right_c_flux", V_RIGHT, SCALE_CONC_NEUMANN_X),
    OperatorSpec("bc_right_phil_flux", V_RIGHT, SCALE_CURRENT),
    OperatorSpec("bc_right_current", V_RIGHT, SCALE_CURRENT),
    OperatorSpec("bc_inlet_c_neg", H_BOTTOM_NEG, SCALE_INLET_CONC),
    OperatorSpec("bc_inlet_phil_neg", H_BOTTOM_NEG, SCALE_POT_NEUMANN_Y),
    OperatorSpec("bc_inlet_phis_neg", H_BOTTOM_NEG, SCALE_POT_NEUMANN_Y),
    OperatorSpec("bc_inlet_c_pos", H_BOTTOM_POS, SCALE_INLET_CONC),
    OperatorSpec("bc_inlet_phil_pos", H_BOTTOM_POS, SCALE_POT_NEUMANN_Y),
    OperatorSpec("bc_inlet_phis_pos", H_BOTTOM_POS, SCALE_POT_NEUMANN_Y),
    OperatorSpec("bc_outlet_c_neg", H_TOP_NEG, SCALE_CONC_NEUMANN_Y),
    OperatorSpec("bc_outlet_phil_neg", H_TOP_NEG, SCALE_POT_NEUMANN_Y),
    OperatorSpec("bc_outlet_phis_neg", H_TOP_NEG, SCALE_POT_NEUMANN_Y),
    OperatorSpec("bc_outlet_c_pos", H_TOP_POS, SCALE_CONC_NEUMANN_Y),
    OperatorSpec("bc_outlet_phil_pos", H_TOP_POS, SCALE_POT_NEUMANN_Y),
    OperatorSpec("bc_outlet_phis_pos", H_TOP_POS, SCALE_POT_NEUMANN_Y),
)

OPERATOR_IDS = tuple(op.op_id for op in OPERATORS)
_OP_BY_ID = {op.op_id: op for op in OPERATORS}


def _cols(points: np.ndarray):
    t = torch.as_tensor(points, dtype=DTYPE)
    return t[:, 0], t[:, 1], t[:, 2]


def _reaction_terms(net: CompositeNet, side: Side, c, phi_l, phi_s, soc):
    """(j_clamped_eta, sigma_l_eff) from the network's own concentration."""
    p = net.params
    floor = _C_FLOOR_FRAC * p.c0
    c_safe = torch.clamp(c, floor, p.c0 - floor)
    comp = close_composition(side, c_safe, soc, p)
    E = ocv(side, comp, p)
    eta = clamp_overpotential(phi_s - phi_l - E)
    j = butler_volmer(side, comp, eta, p)
    sigma_l = p.eps ** 1.5 * ionic_conductivity(comp, p)
    return j, sigma_l


def pde_residuals(net: CompositeNet, plan: SamplingPlan) -> dict:
    """The six interior operators, scaled per equation; keyed by operator id."""
    p = net.params
    stage = net.stage
    out = {}
    for side, key, suffix in ((Side.NEGATIVE, INTERIOR_NEG, "neg"),
                              (Side.POSITIVE, INTERIOR_POS, "pos")):
        x, y, soc = _cols(plan[key])
        b = eval_with_spatial_derivatives(net, side, x, y, soc)
        j, sigma_l = _reaction_terms(net, side, b.c, b.phi_l, b.phi_s, soc)
        s_c = equation_scale(SCALE_CONC_PDE, soc, stage, p)
        s_p = equation_scale(SCALE_POT_PDE, soc, stage, p)
        D = p.diffusivity(side)
        conv = p.v[0] * b.dc_dx + p.v[1] * b.dc_dy
        out[f"pde_mass_{suffix}"] = (conv - D * (b.d2c_dx2 + b.d2c_dy2) + j / p.F) / s_c
        out[f"pde_phil_{suffix}"] = (-sigma_l * (b.d2phil_dx2 + b.d2phil_dy2) - j) / s_p
        out[f"pde_phis_{suffix}"] = (-p.sigma_s_eff * (b.d2phis_dx2 + b.d2phis_dy2) + j) / s_p
    return out


def bc_residuals(net: CompositeNet, plan: SamplingPlan) -> dict:
    """All 24 boundary operators, scaled per equation; keyed by operator id."""
    p = net.params
    stage = net.stage
    i_avg = average_current_density(p)
    s_cx = p.c0 / p.L
    s_py = 1.0 / p.H
    s_cy = p.c0 / p.H
    out = {}

    def bundle(side, key):
        x, y, soc = _cols(plan[key])
        return soc, eval_with_spatial_derivatives(net, side, x, y, soc, second=False)

    def sigma_l_of(side, c, soc):
        floor = _C_FLOOR_FRAC * p.c0
        comp = close_composition(side, torch.clamp(c, floor, p.c0 - floor), soc, p)
        return p.eps ** 1.5 * ionic_conductivity(comp, p)

    # negative collector, x = -L
    soc, b = bundle(Side.NEGATIVE, V_LEFT)
    out["bc_left_c_flux"] = b.dc_dx / s_cx
    out["bc_left_phil_flux"] = sigma_l_of(Side.NEGATIVE, b.c, soc) * b.dphil_dx / i_avg
    out["bc_left_phis_zero"] = b.phi_s / 1.0

    # membrane, x = 0 (both subnets share the point set)
    soc, bn = bundle(Side.NEGATIVE, V_MID)
    _, bp = bundle(Side.POSITIVE, V_MID)
    jump = p.sigma_m / p.d_m * (bp.phi_l - bn.phi_l)
    out["bc_mem_c_flux_neg"] = bn.dc_dx / s_cx
    out["bc_mem_phil_couple_neg"] = (sigma_l_of(Side.NEGATIVE, bn.c, soc) * bn.dphil_dx - jump) / i_avg
    out["bc_mem_phis_flux_neg"] = p.sigma_s_eff * bn.dphis_dx / i_avg
    out["bc_mem_c_flux_pos"] = bp.dc_dx / s_cx
    out["bc_mem_phil_couple_pos"] = (sigma_l_of(Side.POSITIVE, bp.c, soc) * bp.dphil_dx - jump) / i_avg
    out["bc_mem_phis_flux_pos"] = p.sigma_s_eff * bp.dphis_dx / i_avg

    # positive collector, x = +L
    soc, b = bundle(Side.POSITIVE, V_RIGHT)
    target = i_avg if stage is Stage.CHARGING else -i_avg
    out["bc_right_c_flux"] = b.dc_dx / s_cx
    out["bc_right_phil_flux"] = sigma_l_of(Side.POSITIVE, b.c, soc) * b.dphil_dx / i_avg
    out["bc_right_current"] = (p.sigma_s_eff * b.dphis_dx - target) / i_avg

    # inlets, y = 0
    for side, key, suffix in ((Side.NEGATIVE, H_BOTTOM_NEG, "neg"),
                              (Side.POSITIVE, H_BOTTOM_POS, "pos")):
        soc, b = bundle(side, key)
        c_in = inlet_concentration(side, soc, p)
        out[f"bc_inlet_c_{suffix}"] = (b.c - c_in) / p.c0
        out[f"bc_inlet_phil_{suffix}"] = b.dphil_dy / s_py
        out[f"bc_inlet_phis_{suffix}"] = b.dphis_dy / s_py

    # outlets, y = H
    for side, key, suffix in ((Side.NEGATIVE, H_TOP_NEG, "neg"),
                              (Side.POSITIVE, H_TOP_POS, "pos")):
        soc, b = bundle(side, key)
        out[f"bc_outlet_c_{suffix}"] = b.dc_dy / s_cy
        out[f"bc_outlet_phil_{suffix}"] = b.dphil_dy / s_py
        out[f"bc_outlet_phis_{suffix}"] = b.dphis_dy / s_py
    return out


_BC_KEYS = {
    Side.NEGATIVE: (V_LEFT, V_MID, H_BOTTOM_NEG, H_TOP_NEG),
    Side.POSITIVE: (V_MID, V_RIGHT, H_BOTTOM_POS, H_TOP_POS),
}


def _sigma_l_of(p, side, c, soc):
    floor = _C_FLOOR_FRAC * p.c0
    comp = close_composition(side, torch.clamp(c, floor, p.c0 - floor), soc, p)
    return p.eps ** 1.5 * ionic_conductivity(comp, p)


def _build_requests(net: CompositeNet, plan: SamplingPlan,
                    include_epinn: bool):
    """(requests, meta) for a single shared-sweep evaluation of every batch
    the loss needs: two interior sets (with second derivatives), one fused
    boundary batch per side, and optionally the quadrature lines."""
    p = net.params
    requests, meta = [], {}
    for key, side in ((INTERIOR_NEG, Side.NEGATIVE),
                      (INTERIOR_POS, Side.POSITIVE)):
        x, y, soc = _cols(plan[key])
        requests.append(EvalRequest(key, side, x, y, soc, second=True))
        meta[key] = soc
    for side, keys in _BC_KEYS.items():
        pts = np.concatenate([plan[k] for k in keys], axis=0)
        slices, start = {}, 0
        for k in keys:
            n = len(plan[k])
            slices[k] = slice(start, start + n)
            start += n
        x, y, soc = _cols(pts)
        name = f"bc_{side.name.lower()}"
        requests.append(EvalRequest(name, side, x, y, soc))
        meta[name] = (soc, slices)
    if include_epinn:
        socs = torch.as_tensor(plan.quad_socs, dtype=DTYPE)
        ys = torch.as_tensor(plan.quad_y, dtype=DTYPE)
        soc_g = socs.repeat_interleave(ys.numel())
        y_g = ys.repeat(socs.numel())
        x_g = torch.cat([torch.full_like(y_g, -p.L), torch.zeros_like(y_g)])
        requests.append(EvalRequest("epinn", Side.NEGATIVE, x_g,
                                    y_g.repeat(2), soc_g.repeat(2)))
        meta["epinn"] = (soc_g, ys)
    return requests, meta


def _interior_ops(net: CompositeNet, bundles, meta) -> dict:
    p = net.params
    stage = net.stage
    out = {}
    for key, side, suffix in ((INTERIOR_NEG, Side.NEGATIVE, "neg"),
                              (INTERIOR_POS, Side.POSITIVE, "pos")):
        b = bundles[key]
        soc = meta[key]
        j, sigma_l = _reaction_terms(net, side, b.c, b.phi_l, b.phi_s, soc)
        s_c = equation_scale(SCALE_CONC_PDE, soc, stage, p)
        s_p = equation_scale(SCALE_POT_PDE, soc, stage, p)
        D = p.diffusivity(side)
        conv = p.v[0] * b.dc_dx + p.v[1] * b.dc_dy
        out[f"pde_mass_{suffix}"] = (conv - D * (b.d2c_dx2 + b.d2c_dy2) + j / p.F) / s_c
        out[f"pde_phil_{suffix}"] = (-sigma_l * (b.d2phil_dx2 + b.d2phil_dy2) - j) / s_p
        out[f"pde_phis_{suffix}"] = (-p.sigma_s_eff * (b.d2phis_dx2 + b.d2phis_dy2) + j) / s_p
    return out


def _bc_ops(net: CompositeNet, bundles, meta) -> dict:
    p = net.params
    stage = net.stage
    i_avg = average_current_density(p)
    s_cx = p.c0 / p.L
    s_py = 1.0 / p.H
    s_cy = p.c0 / p.H
    out = {}
    fused = {Side.NEGATIVE: (meta["bc_negative"][0], bundles["bc_negative"],
                             meta["bc_negative"][1]),
             Side.POSITIVE: (meta["bc_positive"][0], bundles["bc_positive"],
                             meta["bc_positive"][1])}

    def sigma_l_of(side, c, soc):
        return _sigma_l_of(p, side, c, soc)

    # negative collector, x = -L
    soc, b, sl = fused[Side.NEGATIVE]
    i = sl[V_LEFT]
    out["bc_left_c_flux"] = b.dc_dx[i] / s_cx
    out["bc_left_phil_flux"] = (sigma_l_of(Side.NEGATIVE, b.c[i], soc[i])
                                * b.dphil_dx[i] / i_avg)
    out["bc_left_phis_zero"] = b.phi_s[i] / 1.0

    # membrane, x = 0 (both subnets share the point set)
    socn, bn, sln = fused[Side.NEGATIVE]
    socp, bp, slp = fused[Side.POSITIVE]
    i, j = sln[V_MID], slp[V_MID]
    jump = p.sigma_m / p.d_m * (bp.phi_l[j] - bn.phi_l[i])
    out["bc_mem_c_flux_neg"] = bn.dc_dx[i] / s_cx
    out["bc_mem_phil_couple_neg"] = (sigma_l_of(Side.NEGATIVE, bn.c[i], socn[i])
                                     * bn.dphil_dx[i] - jump) / i_avg
    out["bc_mem_phis_flux_neg"] = p.sigma_s_eff * bn.dphis_dx[i] / i_avg
    out["bc_mem_c_flux_pos"] = bp.dc_dx[j] / s_cx
    out["bc_mem_phil_couple_pos"] = (sigma_l_of(Side.POSITIVE, bp.c[j], socp[j])
                                     * bp.dphil_dx[j] - jump) / i_avg
    out["bc_mem_phis_flux_pos"] = p.sigma_s_eff * bp.dphis_dx[j] / i_avg

    # positive collector, x = +L
    soc, b, sl = fused[Side.POSITIVE]
    i = sl[V_RIGHT]
    target = i_avg if stage is Stage.CHARGING else -i_avg
    out["bc_right_c_flux"] = b.dc_dx[i] / s_cx
    out["bc_right_phil_flux"] = (sigma_l_of(Side.POSITIVE, b.c[i], soc[i])
                                 * b.dphil_dx[i] / i_avg)
    out["bc_right_current"] = (p.sigma_s_eff * b.dphis_dx[i] - target) / i_avg

    for side, bot_key, top_key, suffix in (
            (Side.NEGATIVE, H_BOTTOM_NEG, H_TOP_NEG, "neg"),
            (Side.POSITIVE, H_BOTTOM_POS, H_TOP_POS, "pos")):
        soc, b, sl = fused[side]
        i = sl[bot_key]
        c_in = inlet_concentration(side, soc[i], p)
        out[f"bc_inlet_c_{suffix}"] = (b.c[i] - c_in) / p.c0
        out[f"bc_inlet_phil_{suffix}"] = b.dphil_dy[i] / s_py
        out[f"bc_inlet_phis_{suffix}"] = b.dphis_dy[i] / s_py
        i = sl[top_key]
        out[f"bc_outlet_c_{suffix}"] = b.dc_dy[i] / s_cy
        out[f"bc_outlet_phil_{suffix}"] = b.dphil_dy[i] / s_py
        out[f"bc_outlet_phis_{suffix}"] = b.dphis_dy[i] / s_py
    return out


def _check_finite(res: dict) -> dict:
    for op_id, r in res.items():
        if not torch.all(torch.isfinite(r)):
            bad = int(torch.nonzero(~torch.isfinite(r))[0, 0])
            raise FloatingPointError(f"non-finite residual for {op_id} at point {bad}")
    return res


def all_residuals(net: CompositeNet, plan: SamplingPlan) -> dict:
    requests, meta = _build_requests(net, plan, include_epinn=False)
    bundles = eval_many(net, requests)
    res = _interior_ops(net, bundles, meta)
    res.update(_bc_ops(net, bundles, meta))
    return _check_finite(res)


def _epinn_from_bundle(net: CompositeNet, bundle, meta) -> torch.Tensor:
    """Total-current conservation residuals, two per quadrature SOC.

    Trapezoidal quadrature over y of the electrode-current flux at the
    negative collector and of the ionic flux at the membrane, each compared
    against the signed target current per unit width, scaled by i_avg * H.
    The bundle stacks the collector line before the membrane line.
    """
    p = net.params
    i_avg = average_current_density(p)
    soc_g, ys = meta
    ny = ys.numel()
    ns = soc_g.numel() // ny
    n = soc_g.numel()
    target = (i_avg if net.stage is Stage.CHARGING else -i_avg) * p.H
    scale = i_avg * p.H

    flux_col = (p.sigma_s_eff * bundle.dphis_dx[:n]).reshape(ns, ny)
    int_col = torch.trapezoid(flux_col, ys, dim=1)

    sig_l = _sigma_l_of(p, Side.NEGATIVE, bundle.c[n:], soc_g)
    flux_mem = (sig_l * bundle.dphil_dx[n:]).reshape(ns, ny)
    int_mem = torch.trapezoid(flux_mem, ys, dim=1)

    return torch.stack([(int_col - target) / scale, (int_mem - target) / scale])


def epinn_residual(net: CompositeNet, plan: SamplingPlan) -> torch.Tensor:
    requests, meta = _build_requests(net, plan, include_epinn=True)
    req = [r for r in requests if r.key == "epinn"]
    bundles = eval_many(net, req)
    return _epinn_from_bundle(net, bundles["epinn"], meta["epinn"])


def data_residuals(net: CompositeNet, labeled: LabeledSet) -> torch.Tensor:
    """Electrolyte-potential errors at the labeled points (negative side)."""
    x = torch.as_tensor(labeled.x, dtype=DTYPE)
    y = torch.as_tensor(labeled.y, dtype=DTYPE)
    soc = torch.as_tensor(labeled.soc, dtype=DTYPE)
    target = torch.as_tensor(labeled.phi_l, dtype=DTYPE)
    _, phi_l, _ = net.forward_physical(Side.NEGATIVE, x, y, soc)
    return phi_l - target


class SAWeights:
    """One trainable weight per residual point, initialized to 1.

    The multiplicative ascent w <- w + rho * 2w * r^2 compounds, so weights
    are capped at `w_max` to keep them finite when a point's residual stays
    stubbornly large; a capped weight already dominates its loss term.
    """

    def __init__(self, plan: SamplingPlan, n_data: int = 0, w_max: float = 1e6):
        self.w_max = float(w_max)
        self.weights = {op.op_id: torch.ones(len(plan[op.point_set]), dtype=DTYPE)
                        for op in OPERATORS}
        if n_data:
            self.weights["data"] = torch.ones(n_data, dtype=DTYPE)

    def __getitem__(self, key):
        return self.weights[key]

    def ascend(self, residual_sq: dict, rho: float):
        """Plain gradient ascent w += rho * M'(w) * r^2 (no moments)."""
        for key, r2 in residual_sq.items():
            if key in self.weights:
                w = self.weights[key]
                w += rho * 2.0 * w * r2
                w.clamp_(max=self.w_max)

    def state_vector(self) -> np.ndarray:
        return np.concatenate([self.weights[k].numpy() for k in sorted(self.weights)])


@dataclass
class LossBreakdown:
    per_operator: dict
    epinn: float
    data: float
    total: float

    def parts_sum(self) -> float:
        return sum(self.per_operator.values()) + self.epinn + self.data


def total_loss(net: CompositeNet, plan: SamplingPlan, weights: SAWeights,
               variant: str = VARIANT_PINN, labeled: LabeledSet | None = None):
    """(torch scalar loss, LossBreakdown, detached per-point squared residuals).

    The squared-residual dict feeds the closed-form self-adaptive ascent.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    with_epinn = variant in (VARIANT_EPINN, VARIANT_EPINN_DATA)
    requests, meta = _build_requests(net, plan, include_epinn=with_epinn)
    bundles = eval_many(net, requests)
    res = _interior_ops(net, bundles, meta)
    res.update(_bc_ops(net, bundles, meta))
    _check_finite(res)
    parts = {}
    detached_sq = {}
    total = torch.zeros((), dtype=DTYPE)
    for op_id, r in res.items():
        w = weights[op_id]
        term = (w ** 2 * r ** 2).mean()
        parts[op_id] = float(term.detach())
        detached_sq[op_id] = (r ** 2).detach()
        total = total + term

    epinn_term = 0.0
    if with_epinn:
        r = _epinn_from_bundle(net, bundles["epinn"], meta["epinn"])
        # The integral constraint carries no per-point adaptive weight; it
        # enters at the adaptive cap so it stays competitive with saturated
        # residual points instead of being drowned out by them.
        term = weights.w_max ** 2 * (r ** 2).mean()
        epinn_term = float(term.detach())
        total = total + term

    data_term = 0.0
    if variant == VARIANT_EPINN_DATA:
        if labeled is None or len(labeled) == 0:
            raise ValueError("variant 'epinn-data' requires a non-empty labeled set")
        r = data_residuals(net, labeled)
        w = weights["data"]
        term = (w ** 2 * r ** 2).mean()
        data_term = float(term.detach())
        detached_sq["data"] = (r ** 2).detach()
        total = total + term

    breakdown = LossBreakdown(per_operator=parts, epinn=epinn_term,
                              data=data_term, total=float(total.detach()))
    return total, breakdown, detached_sq
