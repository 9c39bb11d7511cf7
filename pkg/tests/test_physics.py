import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vrfb.physics import (
    CellParameters, Side, Stage, ElectrolyteComposition,
    average_current_density, background_composition, close_composition,
    effective_conductivities, ionic_conductivity, ocv, overpotential,
    clamp_overpotential, butler_volmer, inlet_concentration, equation_scale,
    cell_ocv, replace_params,
    SCALE_CONC_PDE, SCALE_POT_PDE, SCALE_CURRENT, SCALE_INLET_CONC,
    SCALE_PHIS_DIRICHLET, SCALE_CONC_NEUMANN_X, SCALE_POT_NEUMANN_Y,
    SCALE_CONC_NEUMANN_Y,
    Z_V2, Z_V3, Z_V4, Z_V5, Z_H, Z_HSO4, Z_SO4,
)

P = CellParameters()


def test_average_current_density():
    assert average_current_density(P) == pytest.approx(2000.0, rel=1e-14)
    assert average_current_density(replace_params(P, I=1e-30)) == pytest.approx(0.0, abs=1e-20)
    assert average_current_density(replace_params(P, I=3.0)) == pytest.approx(3000.0, rel=1e-14)


def test_parameter_validation():
    with pytest.raises(ValueError):
        replace_params(P, H=-1.0)
    with pytest.raises(ValueError):
        replace_params(P, eps=1.5)
    with pytest.raises(ValueError):
        replace_params(P, soc_min=0.9)
    with pytest.raises(ValueError):
        CellParameters.from_dict({"bogus_name": 1.0})
    assert P.alpha_a + P.alpha_c == pytest.approx(1.0)


def test_background_composition():
    c_H, c_H2O, c_HSO4 = background_composition(Side.POSITIVE, 0.5, P)
    assert c_H == pytest.approx(8500.0)
    assert c_H2O == pytest.approx(29250.0)
    assert c_HSO4 == pytest.approx(2500.0)
    for soc in (0.1, 0.45, 0.8):
        assert background_composition(Side.NEGATIVE, soc, P) == (5500.0, 46100.0, 2500.0)
    assert background_composition(Side.POSITIVE, 0.0)[0] == pytest.approx(7000.0)
    with pytest.raises(ValueError):
        background_composition(Side.POSITIVE, 0.95, P)


def test_close_composition_examples():
    comp = close_composition(Side.NEGATIVE, 750.0, 0.5, P)
    assert comp.c3 == pytest.approx(750.0)
    assert comp.c_SO4 == pytest.approx(3375.0, rel=1e-14)
    comp = close_composition(Side.NEGATIVE, P.c0 * 0.3, 0.3, P)
    assert comp.c3 == pytest.approx(P.c0 * 0.7, rel=1e-14)
    comp = close_composition(Side.POSITIVE, 750.0, 0.5, P)
    assert comp.c5 == pytest.approx(750.0)
    assert comp.c_SO4 == pytest.approx(4125.0, rel=1e-14)


@given(soc=st.floats(0.1, 0.8), frac=st.floats(0.0, 1.0))
def test_electroneutrality_closure(soc, frac):
    for side in Side:
        comp = close_composition(side, P.c0 * frac, soc, P)
        if side is Side.NEGATIVE:
            total = Z_V2 * comp.c2 + Z_V3 * comp.c3
        else:
            total = Z_V4 * comp.c4 + Z_V5 * comp.c5
        total += Z_H * comp.c_H + Z_HSO4 * comp.c_HSO4 + Z_SO4 * comp.c_SO4
        assert abs(total) < 1e-9


def test_effective_conductivities():
    sigma_s_eff, _ = effective_conductivities(close_composition(Side.NEGATIVE, 750.0, 0.5, P), P)
    assert sigma_s_eff == pytest.approx((1 - 0.92317) ** 1.5 * 500.0, rel=1e-14)
    assert sigma_s_eff == pytest.approx(10.648, abs=5e-4)

    # independent high-precision evaluation of the k_eff sum, negative inlet soc=0.5
    comp = close_composition(Side.NEGATIVE, 750.0, 0.5, P)
    ssum = (4 * P.D2 * 750.0 + 9 * P.D2 * 750.0 + 1 * P.D_H * 5500.0
            + 1 * P.D_HSO4 * 2500.0 + 4 * P.D_SO4 * 3375.0)
    expected = P.F ** 2 / (P.R * P.T) * ssum
    assert ionic_conductivity(comp, P) == pytest.approx(expected, rel=1e-13)

    zero = ElectrolyteComposition(side=Side.NEGATIVE, c2=0.0, c3=0.0, c_H=0.0,
                                  c_H2O=0.0, c_HSO4=0.0, c_SO4=0.0)
    assert effective_conductivities(zero, P)[1] == 0.0


def test_ocv_spot_values():
    comp = close_composition(Side.NEGATIVE, 750.0, 0.5, P)
    assert ocv(Side.NEGATIVE, comp, P) == pytest.approx(-0.255, abs=1e-15)

    comp9 = ElectrolyteComposition(side=Side.NEGATIVE, c2=150.0, c3=1350.0)
    assert ocv(Side.NEGATIVE, comp9, P) == pytest.approx(-0.255 + P.RT_over_F * math.log(9.0), rel=1e-12)
    assert ocv(Side.NEGATIVE, comp9, P) == pytest.approx(-0.19950, abs=5e-5)

    comp_p = close_composition(Side.POSITIVE, 750.0, 0.5, P)
    assert ocv(Side.POSITIVE, comp_p, P) == pytest.approx(1.20134, abs=1e-4)

    bad = ElectrolyteComposition(side=Side.NEGATIVE, c2=-1.0, c3=100.0)
    with pytest.raises(ValueError):
        ocv(Side.NEGATIVE, bad, P)


@given(c2=st.floats(1.0, 1499.0))
def test_ocv_monotonicity(c2):
    base = ElectrolyteComposition(side=Side.NEGATIVE, c2=c2, c3=800.0)
    up = ElectrolyteComposition(side=Side.NEGATIVE, c2=c2 + 0.5, c3=800.0)
    assert ocv(Side.NEGATIVE, up, P) < ocv(Side.NEGATIVE, base, P)

    comp = close_composition(Side.POSITIVE, 700.0, 0.5, P)
    hi = ElectrolyteComposition(side=Side.POSITIVE, c4=comp.c4, c5=comp.c5 + 10.0,
                                c_H=comp.c_H, c_H2O=comp.c_H2O)
    assert ocv(Side.POSITIVE, hi, P) > ocv(Side.POSITIVE, comp, P)


def test_overpotential():
    assert overpotential(0.5, 0.3, 0.2) == pytest.approx(0.0, abs=1e-15)
    assert overpotential(1.6, 0.4, 1.0) == pytest.approx(0.2, rel=1e-12)
    assert overpotential(0.0, 0.25, -0.255) == pytest.approx(0.005, rel=1e-10)


def test_clamp_overpotential():
    assert clamp_overpotential(0.25) == 0.1
    assert clamp_overpotential(-0.5) == -0.1
    assert clamp_overpotential(0.03) == 0.03


@given(eta=st.floats(-5.0, 5.0), eta2=st.floats(-5.0, 5.0))
def test_clamp_idempotent_lipschitz(eta, eta2):
    once = clamp_overpotential(eta)
    assert clamp_overpotential(once) == once
    assert abs(once - clamp_overpotential(eta2)) <= abs(eta - eta2) + 1e-15


def test_butler_volmer_examples():
    comp = ElectrolyteComposition(side=Side.NEGATIVE, c2=750.0, c3=750.0)
    assert butler_volmer(Side.NEGATIVE, comp, 0.0, P) == 0.0
    j = butler_volmer(Side.NEGATIVE, comp, 0.01, P)
    # high-precision evaluation: F a k c * 2 sinh(F eta / 2RT)
    expected = P.F * P.a * P.k_neg * 750.0 * 2.0 * math.sinh(P.F * 0.01 / (2 * P.R * P.T))
    assert j == pytest.approx(expected, rel=1e-12)
    assert j == pytest.approx(4.985e6, rel=2e-3)
    dead = ElectrolyteComposition(side=Side.NEGATIVE, c2=0.0, c3=750.0)
    assert butler_volmer(Side.NEGATIVE, dead, 0.5, P) == 0.0


@settings(max_examples=60)
@given(eta=st.one_of(st.floats(1e-4, 0.3), st.floats(-0.3, -1e-4)),
       c=st.floats(1.0, 1499.0))
def test_butler_volmer_properties(eta, c):
    # odd in eta for symmetric concentrations
    comp = ElectrolyteComposition(side=Side.NEGATIVE, c2=400.0, c3=400.0)
    assert butler_volmer(Side.NEGATIVE, comp, -eta, P) == pytest.approx(
        -butler_volmer(Side.NEGATIVE, comp, eta, P), rel=1e-12, abs=1e-9)
    # sinh equivalence for alpha = 0.5
    for side in Side:
        comp = close_composition(side, c, 0.5, P)
        c_red, c_ox = comp.reactant_pair()
        k = P.rate_constant(side)
        sinh_form = (2 * P.F * P.a * k * math.sqrt(c_red * c_ox)
                     * math.sinh(P.F * eta / (2 * P.R * P.T)))
        assert butler_volmer(side, comp, eta, P) == pytest.approx(sinh_form, rel=1e-12, abs=1e-9)
    # sign follows eta
    comp = close_composition(Side.POSITIVE, c, 0.5, P)
    if abs(eta) > 1e-12:
        assert math.copysign(1, butler_volmer(Side.POSITIVE, comp, eta, P)) == math.copysign(1, eta)


def test_inlet_concentration():
    assert inlet_concentration(Side.NEGATIVE, 0.1, P) == pytest.approx(150.0)
    assert inlet_concentration(Side.POSITIVE, 0.8, P) == pytest.approx(300.0)
    assert inlet_concentration(Side.NEGATIVE, 1.0, P) == pytest.approx(P.c0)


def test_equation_scale_values():
    assert equation_scale(SCALE_CONC_PDE, 0.2, Stage.CHARGING, P) == pytest.approx(121.92, rel=1e-12)
    assert equation_scale(SCALE_PHIS_DIRICHLET, 0.3, Stage.CHARGING, P) == 1.0
    assert equation_scale(SCALE_CURRENT, 0.3, Stage.DISCHARGING, P) == pytest.approx(2000.0)
    assert equation_scale(SCALE_POT_PDE, 0.2, Stage.CHARGING, P) == pytest.approx(121.92 * P.F, rel=1e-12)
    assert equation_scale(SCALE_INLET_CONC, 0.2, Stage.CHARGING, P) == pytest.approx(1500.0)
    assert equation_scale(SCALE_CONC_NEUMANN_X, 0.2, Stage.CHARGING, P) == pytest.approx(1500.0 / P.L)
    assert equation_scale(SCALE_POT_NEUMANN_Y, 0.2, Stage.CHARGING, P) == pytest.approx(1.0 / P.H)
    assert equation_scale(SCALE_CONC_NEUMANN_Y, 0.2, Stage.CHARGING, P) == pytest.approx(1500.0 / P.H)
    with pytest.raises(ValueError):
        equation_scale("bogus", 0.2, Stage.CHARGING, P)


@given(soc=st.floats(0.1, 0.8))
def test_equation_scale_positive(soc):
    for stage in Stage:
        for kind in (SCALE_CONC_PDE, SCALE_POT_PDE, SCALE_CURRENT, SCALE_INLET_CONC,
                     SCALE_PHIS_DIRICHLET, SCALE_CONC_NEUMANN_X, SCALE_POT_NEUMANN_Y,
                     SCALE_CONC_NEUMANN_Y):
            assert equation_scale(kind, soc, stage, P) > 0


def test_cell_ocv_midpoint():
    assert cell_ocv(0.5, P) == pytest.approx(1.20134 - (-0.255), abs=2e-4)


def test_stage_side_basics():
    assert Stage.CHARGING.charge_flag == 1
    assert Stage.DISCHARGING.charge_flag == 0
    assert Stage.from_string("charging") is Stage.CHARGING
    assert Stage.from_string("discharge") is Stage.DISCHARGING
    with pytest.raises(ValueError):
        Stage.from_string("idle")
    assert Side.NEGATIVE.x_range(P) == (-P.L, 0.0)
    assert Side.POSITIVE.x_range(P) == (0.0, P.L)
