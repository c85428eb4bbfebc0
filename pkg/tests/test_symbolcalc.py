"""Transport predictions and the build/apply/extract convergence harness."""

import numpy as np
import pytest

from isoclass.grid import make_grid
from isoclass.metaplectic import heisenberg_drho, quad_generator_apply
from isoclass.quantize import SymbolOracle, apply_kn
from isoclass.states import (
    IsotropicState,
    Profile,
    ProfileStack,
    Splitting,
    build_model_state,
    default_profile_grid,
    extract_profile,
    hermite_profile,
    pure_u_term,
    stack_term_from_expr,
    suggest_grid,
)
from isoclass.symbolcalc import regularity_check, transport_check, transport_predict

SPLIT01 = Splitting(k=0, l=1)
SPLIT11 = Splitting(k=1, l=1)
UG = default_profile_grid(1)


def gaussian_profile():
    return Profile(UG, hermite_profile([0], [1.0])(UG.axis(0)))


def stack01(extra=None):
    terms = [pure_u_term(hermite_profile([0], [1.0]), SPLIT01)]
    if extra:
        terms.append(pure_u_term(extra, SPLIT01))
    return ProfileStack(r=0.0, terms=tuple(terms), splitting=SPLIT01)


def stack11(a0="pi**(-1/4) * exp(-t_1**2) * exp(-u_1**2/2)", a1=None):
    terms = [stack_term_from_expr(a0, SPLIT11)]
    if a1:
        terms.append(stack_term_from_expr(a1, SPLIT11))
    return ProfileStack(r=0.0, terms=tuple(terms), splitting=SPLIT11)


class TestTransportPredict:
    def test_order1_momentum_symbol(self):
        # p0 = mu_1 on k=0,l=1: prediction (1/i) da0/du = i u a0 for the Gaussian
        p = SymbolOracle.from_expr("xi_1", 1)
        pred = transport_predict(p, stack01(), order=1, ugrid=UG)
        u = UG.axis(0)
        a0 = gaussian_profile().values
        assert np.max(np.abs(pred.profile.values - 1j * u * a0)) < 1e-10

    def test_order1_position_symbol(self):
        p = SymbolOracle.from_expr("x_1", 1)
        pred = transport_predict(p, stack01(), order=1, ugrid=UG)
        u = UG.axis(0)
        a0 = gaussian_profile().values
        assert np.max(np.abs(pred.profile.values - u * a0)) < 1e-12

    def test_order2_harmonic_identity(self):
        # (u^2 + mu^2) on the ground state: u^2 a0 - a0'' = a0
        p = SymbolOracle.from_expr("x_1**2 + xi_1**2", 1)
        pred = transport_predict(p, stack01(), order=2, ugrid=UG)
        a0 = gaussian_profile().values
        assert np.max(np.abs(pred.profile.values - a0)) < 1e-10

    def test_order0_value(self):
        p = SymbolOracle.from_expr("1 + x_1**2", 2)
        pred = transport_predict(p, stack11(), t_star=[0.5], order=0)
        u = pred.profile.ugrid.axis(0)
        expected = (1 + 0.25) * np.pi**-0.25 * np.exp(-0.25) * np.exp(-(u**2) / 2)
        assert np.max(np.abs(pred.profile.values - expected)) < 1e-10

    def test_order1_precondition_enforced(self):
        p = SymbolOracle.from_expr("1 + xi_1", 1)
        with pytest.raises(ValueError, match="p0"):
            transport_predict(p, stack01(), order=1, ugrid=UG)

    def test_order1_vanishing_only_at_s_rejected(self):
        # vanishes at t=0 but not along the whole submanifold
        p = SymbolOracle.from_expr("x_1", 2)
        with pytest.raises(ValueError, match="Sigma_0"):
            transport_predict(p, stack11(), t_star=[0.0], order=1)

    def test_order2_tangency_enforced(self):
        p = SymbolOracle.from_expr("xi_1", 1)  # Hamilton field not tangent
        with pytest.raises(ValueError, match="dp0/du|dp0/dmu"):
            transport_predict(p, stack01(), order=2, ugrid=UG)

    def test_heisenberg_action_identity(self):
        # order-1 prediction equals drho(xi_s) a0 with xi_s = (dp/dmu, -dp/du)
        p = SymbolOracle.from_expr("0.7*x_1 + 0.4*xi_1", 1)
        pred = transport_predict(p, stack01(), order=1, ugrid=UG)
        prof = gaussian_profile()
        xi_s = (np.array([0.4]), np.array([-0.7]))
        via_drho = heisenberg_drho(xi_s, prof)
        assert np.max(np.abs(pred.profile.values - via_drho.values)) < 1e-12

    def test_metaplectic_hessian_identity(self):
        # the order-2 quadratic terms equal the infinitesimal quadratic action
        p = SymbolOracle.from_expr("0.9*x_1*xi_1 + 0.3*x_1**2 - 0.5*xi_1**2", 1)
        pred = transport_predict(p, stack01(), order=2, ugrid=UG)
        prof = gaussian_profile()
        via_mp = quad_generator_apply([[0.6]], [[0.9]], [[-1.0]], prof)
        assert np.max(np.abs(pred.profile.values - via_mp.values)) < 1e-10

    def test_order2_t_derivative_term(self):
        # p0 = tau_1: prediction (1/i) da0/dt at t_star
        p = SymbolOracle.from_expr("xi_1", 2)
        pred = transport_predict(p, stack11(), t_star=[0.5], order=2)
        u = pred.profile.ugrid.axis(0)
        da0_dt = -2 * 0.5 * np.pi**-0.25 * np.exp(-0.25) * np.exp(-(u**2) / 2)
        assert np.max(np.abs(pred.profile.values - da0_dt / 1j)) < 1e-10


class TestTransportCheck:
    def test_order0_multiplication_symbol(self):
        p = SymbolOracle.from_expr("1 + x_1**2", 2)
        stack = stack11(a1="(0.5 + 0.4*u_1**2) * exp(-t_1**2) * exp(-u_1**2/2)")
        rep = transport_check(
            p, stack, order=0, schedule=[1e-2, 5e-3, 2.5e-3, 1.25e-3], t_star=[0.0],
            grid_options={"t_size": 64},
        )
        assert rep.passed
        assert abs(rep.slope - 0.5) < 0.1

    def test_order1_mixed_symbol(self):
        p = SymbolOracle.from_expr("xi_2 + x_2", 2)
        stack = stack11(a1="(0.5 + 0.4*u_1**2) * exp(-t_1**2) * exp(-u_1**2/2)")
        rep = transport_check(
            p, stack, order=1, schedule=[1e-2, 5e-3, 2.5e-3, 1.25e-3], t_star=[0.0],
            grid_options={"t_size": 64},
        )
        assert rep.passed
        assert abs(rep.slope - 0.5) < 0.1

    def test_order2_harmonic(self):
        p = SymbolOracle.from_expr("x_1**2 + xi_1**2", 1)
        stack = stack01(extra=lambda u: (0.5 + 0.3 * u) * np.pi**-0.25 * np.exp(-(u**2) / 2))
        rep = transport_check(p, stack, order=2, schedule=[4e-3, 2e-3, 1e-3])
        assert rep.passed

    def test_order2_t_term_slope(self):
        p = SymbolOracle.from_expr("xi_1", 2)
        stack = stack11(a1="(0.5 + 0.4*u_1**2 + 0.3*t_1) * exp(-t_1**2) * exp(-u_1**2/2)")
        rep = transport_check(
            p, stack, order=2, schedule=[4e-3, 2e-3, 1e-3], t_star=[0.5],
            grid_options={"t_size": 64},
        )
        assert rep.passed

    def test_composition_consistency(self):
        # degree <= 2 polynomials compose at leading order: sigma(PQ Y) = (pq)(s) a0
        p = SymbolOracle.from_expr("1 + x_1", 1)
        q = SymbolOracle.from_expr("2 + xi_1", 1)
        pq_at_s = 1.0 * 2.0
        stack = stack01()
        resid = []
        hbars = [4e-3, 2e-3, 1e-3]
        for hb in hbars:
            grid = suggest_grid(SPLIT01, hb)
            st = build_model_state(stack, hb, grid)
            out = apply_kn(p, apply_kn(q, st.field))
            prof = extract_profile(IsotropicState(out, SPLIT01, 0.0), ugrid=UG)
            a0 = gaussian_profile().values
            resid.append(
                np.sqrt(np.sum(np.abs(prof.values - pq_at_s * a0) ** 2) * UG.cell_volume())
            )
        slopes = np.diff(np.log(resid)) / np.diff(np.log(hbars))
        assert resid[-1] < 0.05 * pq_at_s
        assert np.all(slopes > 0.35)

    def test_schedule_validation(self):
        p = SymbolOracle.from_expr("1", 1)
        with pytest.raises(ValueError, match="3 points"):
            transport_check(p, stack01(), order=0, schedule=[1e-2, 5e-3])
        with pytest.raises(ValueError, match="geometric"):
            transport_check(p, stack01(), order=0, schedule=[1e-2, 5e-3, 3e-3])


class TestRegularity:
    def test_vanishing_tangent_composition_bounded(self):
        ops = [SymbolOracle.from_expr("x_1**2 + xi_1**2", 1), SymbolOracle.from_expr("x_1*xi_1", 1)]
        rep = regularity_check(ops, stack01(), schedule=[4e-3, 2e-3, 1e-3])
        assert rep.passed

    def test_non_tangent_rejected(self):
        ops = [SymbolOracle.from_expr("xi_1", 1)]
        with pytest.raises(ValueError, match="dmu"):
            regularity_check(ops, stack01(), schedule=[4e-3, 2e-3, 1e-3])
