"""Training point sets: interior/boundary samples, the total-current
quadrature grid, and optional labeled data.

Points are drawn once from a master seed and stay fixed for the whole run,
so every self-adaptive weight remains attached to the same point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .physics import CellParameters, Side

# geometric point-set keys
INTERIOR_NEG = "interior_neg"
INTERIOR_POS = "interior_pos"
V_LEFT = "v_left"        # negative collector, x = -L
V_MID = "v_mid"          # membrane, x = 0
V_RIGHT = "v_right"      # positive collector, x = +L
H_BOTTOM_NEG = "h_bottom_neg"
H_BOTTOM_POS = "h_bottom_pos"
H_TOP_NEG = "h_top_neg"
H_TOP_POS = "h_top_pos"

POINT_SET_KEYS = (
    INTERIOR_NEG, INTERIOR_POS, V_LEFT, V_MID, V_RIGHT,
    H_BOTTOM_NEG, H_BOTTOM_POS, H_TOP_NEG, H_TOP_POS,
)


@dataclass(frozen=True)
class SamplingConfig:
    n_interior: int = 10000       # per half cell
    n_vertical: int = 1800        # per vertical boundary
    n_horizontal: int = 200       # per horizontal boundary
    n_quadrature: int = 101       # SOC values and y nodes for the current constraint

    @classmethod
    def desk_scale(cls) -> "SamplingConfig":
        """Reduced point budget sized for single-core CPU training."""
        return cls(n_interior=600, n_vertical=200, n_horizontal=60,
                   n_quadrature=25)


@dataclass
class SamplingPlan:
    """Fixed point sets, keyed by geometry; each array is (n, 3) = (x, y, soc)."""

    params: CellParameters
    config: SamplingConfig
    seed: int
    point_sets: dict = field(default_factory=dict)
    quad_socs: np.ndarray | None = None
    quad_y: np.ndarray | None = None

    def __getitem__(self, key: str) -> np.ndarray:
        return self.point_sets[key]


def build_sampling_plan(params: CellParameters, config: SamplingConfig,
                        seed: int) -> SamplingPlan:
    rng = np.random.default_rng(seed)
    p = params
    lo_s, hi_s = p.soc_min, p.soc_max

    def soc(n):
        return rng.uniform(lo_s, hi_s, n)

    def interior(side: Side, n):
        x_lo, x_hi = side.x_range(p)
        return np.column_stack([rng.uniform(x_lo, x_hi, n),
                                rng.uniform(0.0, p.H, n), soc(n)])

    def vertical(x0, n):
        return np.column_stack([np.full(n, x0), rng.uniform(0.0, p.H, n), soc(n)])

    def horizontal(side: Side, y0, n):
        x_lo, x_hi = side.x_range(p)
        return np.column_stack([rng.uniform(x_lo, x_hi, n), np.full(n, y0), soc(n)])

    sets = {
        INTERIOR_NEG: interior(Side.NEGATIVE, config.n_interior),
        INTERIOR_POS: interior(Side.POSITIVE, config.n_interior),
        V_LEFT: vertical(-p.L, config.n_vertical),
        V_MID: vertical(0.0, config.n_vertical),
        V_RIGHT: vertical(p.L, config.n_vertical),
        H_BOTTOM_NEG: horizontal(Side.NEGATIVE, 0.0, config.n_horizontal),
        H_BOTTOM_POS: horizontal(Side.POSITIVE, 0.0, config.n_horizontal),
        H_TOP_NEG: horizontal(Side.NEGATIVE, p.H, config.n_horizontal),
        H_TOP_POS: horizontal(Side.POSITIVE, p.H, config.n_horizontal),
    }
    nq = config.n_quadrature
    return SamplingPlan(params=params, config=config, seed=seed, point_sets=sets,
                        quad_socs=np.linspace(lo_s, hi_s, nq),
                        quad_y=np.linspace(0.0, p.H, nq))


@dataclass
class LabeledSet:
    """Electrolyte-potential targets: points on the membrane (x = 0) and the
    negative collector (x = -L)."""

    x: np.ndarray
    y: np.ndarray
    soc: np.ndarray
    phi_l: np.ndarray

    def __post_init__(self):
        n = len(self.x)
        for arr in (self.y, self.soc, self.phi_l):
            if len(arr) != n:
                raise ValueError("labeled set columns must have equal length")
        on_boundary = np.isclose(self.x, 0.0) | (self.x < 0)
        if not np.all(on_boundary):
            raise ValueError("labeled points must lie on the membrane or the "
                             "negative collector")

    def __len__(self):
        return len(self.x)
