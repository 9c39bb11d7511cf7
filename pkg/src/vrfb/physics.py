"""Stateless physics closures for the 2D all-vanadium flow-cell model.

Everything here is a pure function of its arguments and works elementwise
on floats, numpy arrays and torch tensors, so the same formulas feed both
the finite-difference reference solver and the PINN residuals.

Species indices follow the usual convention j = 2, 3, 4, 5 for
V2+, V3+, VO2+, VO2+ (charged positive species), with H+, H2O, HSO4-,
SO4^2- as the supporting electrolyte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict, replace
from enum import Enum

import numpy as np

try:
    import torch
except ImportError:  # pragma: no cover - torch is a hard dependency in practice
    torch = None

FARADAY = 96485.0  # C/mol
GAS_CONSTANT = 8.314  # J/(mol K)

# valences
Z_V2, Z_V3, Z_V4, Z_V5 = 2.0, 3.0, 2.0, 1.0
Z_H, Z_HSO4, Z_SO4 = 1.0, -1.0, -2.0

ETA_CLAMP = 0.1  # V, training-time overpotential restriction


def _exp(v):
    if torch is not None and isinstance(v, torch.Tensor):
        return torch.exp(v)
    return np.exp(v)


def _log(v):
    if torch is not None and isinstance(v, torch.Tensor):
        return torch.log(v)
    return np.log(v)


def _clip(v, lo, hi):
    if torch is not None and isinstance(v, torch.Tensor):
        return torch.clamp(v, lo, hi)
    return np.clip(v, lo, hi)


class Stage(Enum):
    CHARGING = "charge"
    DISCHARGING = "discharge"

    @property
    def charge_flag(self) -> int:
        return 1 if self is Stage.CHARGING else 0

    @classmethod
    def from_string(cls, s: str) -> "Stage":
        s = s.lower()
        aliases = {
            "charge": cls.CHARGING, "charging": cls.CHARGING,
            "discharge": cls.DISCHARGING, "discharging": cls.DISCHARGING,
        }
        if s not in aliases:
            raise ValueError(f"unknown stage {s!r}; expected 'charge' or 'discharge'")
        return aliases[s]


class Side(Enum):
    NEGATIVE = "negative"
    POSITIVE = "positive"

    def x_range(self, params: "CellParameters") -> tuple[float, float]:
        if self is Side.NEGATIVE:
            return (-params.L, 0.0)
        return (0.0, params.L)


@dataclass(frozen=True)
class CellParameters:
    """Geometry, transport and kinetic constants of the unit cell.

    Defaults are the standard parameter set for the 2D model; override
    individual values through ``replace_params`` or a JSON config.
    """

    H: float = 0.05                # cell height (m)
    L: float = 3.28e-3             # electrode thickness per half cell (m)
    W: float = 0.02                # cell width (m)
    a: float = 57622.0             # specific surface area (1/m)
    d_m: float = 5.08e-5           # membrane thickness (m)
    I: float = 2.0                 # total current (A)
    D2: float = 2.4e-10            # V2+ diffusivity (m^2/s)
    D4: float = 3.9e-10            # VO2+ diffusivity (m^2/s)
    D_H: float = 93.12e-10         # H+ diffusivity (m^2/s)
    D_SO4: float = 10.65e-10       # SO4^2- diffusivity (m^2/s)
    D_HSO4: float = 13.3e-10       # HSO4- diffusivity (m^2/s)
    v: tuple[float, float] = (0.0, 5.08e-3)  # electrolyte velocity (m/s)
    T: float = 293.15              # temperature (K)
    sigma_s: float = 500.0         # solid conductivity (S/m)
    sigma_m: float = 30.0          # membrane conductivity (S/m)
    E0_pos: float = 1.004          # standard potential, positive couple (V)
    E0_neg: float = -0.255         # standard potential, negative couple (V)
    k_pos: float = 1.1e-6          # rate constant, positive (m/s)
    k_neg: float = 3.0e-6          # rate constant, negative (m/s)
    alpha_a: float = 0.5           # anodic transfer coefficient
    alpha_c: float = 0.5           # cathodic transfer coefficient
    eps: float = 0.92317           # electrode porosity
    c0: float = 1500.0             # total vanadium concentration (mol/m^3)
    F: float = FARADAY
    R: float = GAS_CONSTANT
    soc_min: float = 0.1
    soc_max: float = 0.8

    def __post_init__(self):
        positive = {
            "H": self.H, "L": self.L, "W": self.W, "a": self.a,
            "d_m": self.d_m, "D2": self.D2, "D4": self.D4, "D_H": self.D_H,
            "D_SO4": self.D_SO4, "D_HSO4": self.D_HSO4, "T": self.T,
            "k_pos": self.k_pos, "k_neg": self.k_neg, "c0": self.c0,
            "F": self.F, "R": self.R,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"CellParameters.{name} must be > 0, got {value}")
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"porosity eps must be in (0, 1), got {self.eps}")
        if not self.soc_min < self.soc_max:
            raise ValueError("soc_min must be < soc_max")

    # convenience quantities -------------------------------------------------

    @property
    def RT_over_F(self) -> float:
        return self.R * self.T / self.F

    @property
    def v_mag(self) -> float:
        return math.hypot(self.v[0], self.v[1])

    @property
    def sigma_s_eff(self) -> float:
        return (1.0 - self.eps) ** 1.5 * self.sigma_s

    def rate_constant(self, side: Side) -> float:
        return self.k_neg if side is Side.NEGATIVE else self.k_pos

    def diffusivity(self, side: Side) -> float:
        return self.D2 if side is Side.NEGATIVE else self.D4

    def standard_potential(self, side: Side) -> float:
        return self.E0_neg if side is Side.NEGATIVE else self.E0_pos

    def to_dict(self) -> dict:
        d = asdict(self)
        d["v"] = list(self.v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CellParameters":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown cell parameter(s): {sorted(unknown)}")
        d = dict(d)
        if "v" in d:
            d["v"] = tuple(float(x) for x in d["v"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "CellParameters":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def replace_params(params: CellParameters, **kw) -> CellParameters:
    return replace(params, **kw)


@dataclass
class ElectrolyteComposition:
    """Full per-point electrolyte composition for one half cell.

    Fields are scalars or arrays (mol/m^3); the unused vanadium pair on
    the other side stays None.
    """

    side: Side
    c2: object = None
    c3: object = None
    c4: object = None
    c5: object = None
    c_H: object = None
    c_H2O: object = None
    c_HSO4: object = None
    c_SO4: object = None

    def reactant_pair(self):
        """(reduced, oxidized) vanadium concentrations for the side's couple."""
        if self.side is Side.NEGATIVE:
            return self.c2, self.c3
        return self.c4, self.c5


def average_current_density(params: CellParameters) -> float:
    """Average current density over a collector, I / (H W), in A/m^2."""
    return params.I / (params.H * params.W)


def _check_soc(soc, params: CellParameters):
    lo, hi = params.soc_min, params.soc_max
    bad = np.any(np.asarray(soc) < lo - 1e-12) or np.any(np.asarray(soc) > hi + 1e-12)
    if bad:
        raise ValueError(f"soc {soc} outside [{lo}, {hi}]")


def background_composition(side: Side, soc, params: CellParameters = None):
    """Supporting-species concentrations (c_H, c_H2O, c_HSO4) at a given SOC."""
    if params is not None:
        _check_soc(soc, params)
    if side is Side.NEGATIVE:
        if hasattr(soc, "shape") and getattr(soc, "ndim", 0) > 0:
            one = soc * 0.0 + 1.0
            return 5500.0 * one, 46100.0 * one, 2500.0 * one
        return 5500.0, 46100.0, 2500.0
    return 7000.0 + 3000.0 * soc, 30000.0 - 1500.0 * soc, 2500.0 + 0.0 * soc


def close_composition(side: Side, c_v_primary, soc,
                      params: CellParameters = None) -> ElectrolyteComposition:
    """Fill the full composition from the solved vanadium concentration.

    c3 (resp. c5) comes from the conserved total c0; SO4^2- is solved from
    electroneutrality sum(z_i c_i) = 0.
    """
    p = params or CellParameters()
    c_H, c_H2O, c_HSO4 = background_composition(side, soc, params)
    comp = ElectrolyteComposition(side=side, c_H=c_H, c_H2O=c_H2O, c_HSO4=c_HSO4)
    if side is Side.NEGATIVE:
        comp.c2 = c_v_primary
        comp.c3 = p.c0 - c_v_primary
        cation_charge = Z_V2 * comp.c2 + Z_V3 * comp.c3 + Z_H * c_H
    else:
        comp.c4 = c_v_primary
        comp.c5 = p.c0 - c_v_primary
        cation_charge = Z_V4 * comp.c4 + Z_V5 * comp.c5 + Z_H * c_H
    # z_SO4 = -2, z_HSO4 = -1:  cation_charge - c_HSO4 - 2 c_SO4 = 0
    comp.c_SO4 = (cation_charge - c_HSO4) / 2.0
    if np.any(np.asarray(_detach(comp.c_SO4)) < 0):
        raise ValueError("electroneutrality closure gives negative SO4^2- concentration")
    return comp


def _detach(v):
    if torch is not None and isinstance(v, torch.Tensor):
        return v.detach().cpu().numpy()
    return v


def ionic_conductivity(comp: ElectrolyteComposition, params: CellParameters):
    """Bulk electrolyte conductivity k_eff = F^2/(RT) sum(z_i^2 D_i c_i)."""
    p = params
    # Table of diffusivities pairs each couple: D(V3+) := D2, D(VO2+) := D4.
    if comp.side is Side.NEGATIVE:
        s = (Z_V2 ** 2 * p.D2 * comp.c2 + Z_V3 ** 2 * p.D2 * comp.c3)
    else:
        s = (Z_V4 ** 2 * p.D4 * comp.c4 + Z_V5 ** 2 * p.D4 * comp.c5)
    s = s + (Z_H ** 2 * p.D_H * comp.c_H
             + Z_HSO4 ** 2 * p.D_HSO4 * comp.c_HSO4
             + Z_SO4 ** 2 * p.D_SO4 * comp.c_SO4)
    return p.F ** 2 / (p.R * p.T) * s


def effective_conductivities(comp: ElectrolyteComposition, params: CellParameters):
    """(sigma_s_eff, sigma_l_eff) with Bruggeman exponent 1.5."""
    sigma_s_eff = (1.0 - params.eps) ** 1.5 * params.sigma_s
    sigma_l_eff = params.eps ** 1.5 * ionic_conductivity(comp, params)
    return sigma_s_eff, sigma_l_eff


def sigma_l_eff_dc(side: Side, params: CellParameters) -> float:
    """d(sigma_l_eff)/dc for the solved concentration (affine in c)."""
    p = params
    if side is Side.NEGATIVE:
        # c3 = c0 - c2, c_SO4 = (2 c2 + 3 c3 + cH - cHSO4)/2 -> d c_SO4/dc2 = -1/2
        ds = Z_V2 ** 2 * p.D2 - Z_V3 ** 2 * p.D2 + Z_SO4 ** 2 * p.D_SO4 * (-0.5)
    else:
        ds = Z_V4 ** 2 * p.D4 - Z_V5 ** 2 * p.D4 + Z_SO4 ** 2 * p.D_SO4 * (+0.5)
    return p.eps ** 1.5 * p.F ** 2 / (p.R * p.T) * ds


def ocv(side: Side, comp: ElectrolyteComposition, params: CellParameters):
    """Nernst open-circuit potential of one electrode (V).

    Concentrations enter in raw mol/m^3, exactly as the model is posed
    (the log arguments are not made dimensionless on purpose).
    """
    p = params
    if side is Side.NEGATIVE:
        arg = comp.c3 / comp.c2
    else:
        arg = comp.c5 * comp.c_H ** 2 / (comp.c4 * comp.c_H2O)
    if np.any(np.asarray(_detach(arg)) <= 0):
        raise ValueError("nonpositive Nernst logarithm argument")
    return p.standard_potential(side) + p.RT_over_F * _log(arg)


def overpotential(phi_s, phi_l, ocv_value):
    """eta = phi_s - phi_l - E."""
    return phi_s - phi_l - ocv_value


def clamp_overpotential(eta_raw):
    """Restrict eta to [-0.1, 0.1] V (slope 1 inside the band, 0 outside)."""
    return _clip(eta_raw, -ETA_CLAMP, ETA_CLAMP)


def butler_volmer(side: Side, comp: ElectrolyteComposition, eta,
                  params: CellParameters):
    """Volumetric transfer current density j (A/m^3)."""
    p = params
    c_red, c_ox = comp.reactant_pair()
    k = p.rate_constant(side)
    f = p.F / (p.R * p.T)
    pref = p.F * p.a * k * c_red ** p.alpha_c * c_ox ** p.alpha_a
    return pref * (_exp(p.alpha_a * f * eta) - _exp(-p.alpha_c * f * eta))


def inlet_concentration(side: Side, soc, params: CellParameters = None):
    """Inlet value of the solved species: c0*SOC (negative) or c0*(1-SOC)."""
    c0 = (params or CellParameters()).c0
    if side is Side.NEGATIVE:
        return c0 * soc
    return c0 * (1.0 - soc)


# --- equation scaling -------------------------------------------------------

# Scale categories for the 6 governing equations and 24 boundary conditions.
SCALE_CONC_PDE = "conc_pde"
SCALE_POT_PDE = "pot_pde"
SCALE_CURRENT = "current"          # membrane/current BCs and x-dir phi_l Neumann
SCALE_INLET_CONC = "inlet_conc"
SCALE_PHIS_DIRICHLET = "phis_dirichlet"
SCALE_CONC_NEUMANN_X = "conc_neumann_x"
SCALE_POT_NEUMANN_Y = "pot_neumann_y"
SCALE_CONC_NEUMANN_Y = "conc_neumann_y"

_SCALE_KINDS = {
    SCALE_CONC_PDE, SCALE_POT_PDE, SCALE_CURRENT, SCALE_INLET_CONC,
    SCALE_PHIS_DIRICHLET, SCALE_CONC_NEUMANN_X, SCALE_POT_NEUMANN_Y,
    SCALE_CONC_NEUMANN_Y,
}


def equation_scale(kind: str, soc, stage: Stage, params: CellParameters):
    """Nondimensionalizing coefficient for a governing equation or BC.

    beta = 1 - SOC while charging, SOC while discharging; every residual in
    both solvers is divided by the value returned here.
    """
    if kind not in _SCALE_KINDS:
        raise ValueError(f"unknown equation scale kind {kind!r}")
    p = params
    beta = (1.0 - soc) if stage is Stage.CHARGING else soc
    if kind == SCALE_CONC_PDE:
        return beta * p.c0 * p.v_mag / p.H
    if kind == SCALE_POT_PDE:
        return beta * p.F * p.c0 * p.v_mag / p.H
    if kind == SCALE_CURRENT:
        return average_current_density(p) + 0.0 * beta
    if kind == SCALE_INLET_CONC:
        return p.c0 + 0.0 * beta
    if kind == SCALE_PHIS_DIRICHLET:
        return 1.0 + 0.0 * beta
    if kind == SCALE_CONC_NEUMANN_X:
        return p.c0 / p.L + 0.0 * beta
    if kind == SCALE_POT_NEUMANN_Y:
        return 1.0 / p.H + 0.0 * beta
    return p.c0 / p.H + 0.0 * beta  # SCALE_CONC_NEUMANN_Y


def cell_ocv(soc, params: CellParameters) -> float:
    """Open-circuit cell voltage E_+ - E_- at inlet compositions."""
    p = params
    comp_n = close_composition(Side.NEGATIVE, inlet_concentration(Side.NEGATIVE, soc, p), soc, p)
    comp_p = close_composition(Side.POSITIVE, inlet_concentration(Side.POSITIVE, soc, p), soc, p)
    return ocv(Side.POSITIVE, comp_p, p) - ocv(Side.NEGATIVE, comp_n, p)
